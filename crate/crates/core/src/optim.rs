//! Adam optimiser over a [`ParamStore`].

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::params::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            Zip::from(store.value_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[1.0, -2.0, 0.0]]);
        let mut grads = Gradients::zeros_like(&store);
        grads.add(id, &array![[3.0, -0.5, 0.0]]);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grads);
        let x = store.value(id);
        assert!((x[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((x[[0, 1]] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(x[[0, 2]], 0.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[5.0, -3.0]]);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..2000 {
            let mut grads = Gradients::zeros_like(&store);
            let g = store.value(id).mapv(|x| 2.0 * (x - 1.0));
            grads.add(id, &g);
            adam.step(&mut store, &grads);
        }
        assert!(store.value(id).iter().all(|x| (x - 1.0).abs() < 1e-3));
    }
}
