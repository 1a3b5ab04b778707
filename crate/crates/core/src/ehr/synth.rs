//! Synthetic longitudinal EHR corpus with planted comorbidity progressions.
//!
//! Each cluster is a set of trigger codes that, once a patient develops the
//! condition, recur in every later visit. Whenever a visit carries a cluster's
//! full trigger set, the next visit contains the cluster's successor code with
//! the configured probability. Successor codes appear through no other route,
//! so their firing frequency can be measured directly from the corpus.

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ontology::DEFAULT_LEVELS;
use super::types::{Dataset, RawVisit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_codes: usize,
    pub num_patients: usize,
    /// Inclusive range of visits per patient, label visit included.
    pub visits: (usize, usize),
    /// Inclusive range of background codes per visit.
    pub codes_per_visit: (usize, usize),
    pub num_clusters: usize,
    pub trigger_size: usize,
    /// Probability that a trigger visit is followed by the successor code.
    pub successor_probability: f64,
    /// Inclusive range of clusters assigned to each patient.
    pub clusters_per_patient: (usize, usize),
    /// Zipf exponent of the background code distribution.
    pub zipf_exponent: f64,
    pub levels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_codes: 60,
            num_patients: 500,
            visits: (3, 6),
            codes_per_visit: (2, 5),
            num_clusters: 6,
            trigger_size: 3,
            successor_probability: 0.8,
            clusters_per_patient: (1, 2),
            zipf_exponent: 1.0,
            levels: DEFAULT_LEVELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub triggers: Vec<String>,
    pub successor: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub rules: Vec<PlantedRule>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let reserved = self.num_clusters * (self.trigger_size + 1);
        if self.codes_per_visit.1 > self.num_codes {
            return Err(Error::InfeasibleConfig(format!(
                "codes per visit ({}) exceeds vocabulary size ({})",
                self.codes_per_visit.1, self.num_codes
            )));
        }
        if reserved + self.codes_per_visit.1 > self.num_codes {
            return Err(Error::InfeasibleConfig(format!(
                "{} clusters of {} triggers plus a successor leave too few background codes for {} per visit",
                self.num_clusters, self.trigger_size, self.codes_per_visit.1
            )));
        }
        if self.visits.0 < 2 || self.visits.0 > self.visits.1 {
            return Err(Error::InfeasibleConfig(format!("visit range {:?}", self.visits)));
        }
        if self.codes_per_visit.0 > self.codes_per_visit.1 {
            return Err(Error::InfeasibleConfig(format!(
                "codes-per-visit range {:?}",
                self.codes_per_visit
            )));
        }
        if self.clusters_per_patient.0 > self.clusters_per_patient.1
            || self.clusters_per_patient.1 > self.num_clusters
        {
            return Err(Error::InfeasibleConfig(format!(
                "clusters-per-patient range {:?} with {} clusters",
                self.clusters_per_patient, self.num_clusters
            )));
        }
        if self.codes_per_visit.0 == 0 && self.clusters_per_patient.0 == 0 {
            return Err(Error::InfeasibleConfig("visits could be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.successor_probability) {
            return Err(Error::InfeasibleConfig(format!(
                "successor probability {}",
                self.successor_probability
            )));
        }
        if self.num_patients == 0 {
            return Err(Error::InfeasibleConfig("no patients requested".into()));
        }
        Ok(())
    }
}

/// `num_codes` distinct ICD-9 strings spread over random categories, mixing
/// five-character codes with four-character ones so padding is exercised.
fn synthetic_codes(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let n_categories = n.div_ceil(3);
    let mut categories: Vec<u16> = (1..=999).collect();
    categories.shuffle(rng);
    let mut codes = Vec::with_capacity(n);
    for &cat in categories.iter().take(n_categories) {
        let sub: u8 = rng.gen_range(0..9);
        let leaf_a: u8 = rng.gen_range(0..5);
        let leaf_b: u8 = rng.gen_range(5..10);
        for code in [
            format!("{cat:03}.{sub}{leaf_a}"),
            format!("{cat:03}.{sub}{leaf_b}"),
            format!("{cat:03}.9"),
        ] {
            if codes.len() < n {
                codes.push(code);
            }
        }
    }
    codes
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = synthetic_codes(config.num_codes, &mut rng);

    let mut order: Vec<usize> = (0..config.num_codes).collect();
    order.shuffle(&mut rng);
    let mut rules_idx = Vec::with_capacity(config.num_clusters);
    let mut at = 0;
    for _ in 0..config.num_clusters {
        let triggers = order[at..at + config.trigger_size].to_vec();
        let successor = order[at + config.trigger_size];
        at += config.trigger_size + 1;
        rules_idx.push((triggers, successor));
    }
    let background = &order[at..];
    let weights: Vec<f64> = (0..background.len())
        .map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent))
        .collect();
    let weighted: Vec<(usize, f64)> = background.iter().copied().zip(weights).collect();

    let origin = NaiveDate::from_ymd_opt(2100, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    let mut patients = Vec::with_capacity(config.num_patients);
    for n in 0..config.num_patients {
        let t_total = rng.gen_range(config.visits.0..=config.visits.1);
        let n_clusters = rng.gen_range(config.clusters_per_patient.0..=config.clusters_per_patient.1);
        let mut cluster_ids: Vec<usize> = (0..config.num_clusters).collect();
        cluster_ids.shuffle(&mut rng);
        let active: Vec<(usize, usize)> = cluster_ids[..n_clusters]
            .iter()
            .map(|&c| (c, rng.gen_range(0..=t_total - 2)))
            .collect();

        let mut when = origin + Duration::days(rng.gen_range(0..3650));
        let mut visits: Vec<RawVisit> = Vec::with_capacity(t_total);
        let mut previous: BTreeSet<usize> = BTreeSet::new();
        for j in 0..t_total {
            let mut visit: BTreeSet<usize> = BTreeSet::new();
            let k = rng.gen_range(config.codes_per_visit.0..=config.codes_per_visit.1);
            let picks = weighted
                .choose_multiple_weighted(&mut rng, k, |item| item.1)
                .expect("positive weights");
            visit.extend(picks.map(|item| item.0));
            for &(c, onset) in &active {
                let (triggers, successor) = &rules_idx[c];
                if j >= onset {
                    visit.extend(triggers.iter().copied());
                }
                if j > 0 && triggers.iter().all(|t| previous.contains(t)) {
                    // draw unconditionally so the stream does not depend on p
                    let fire = rng.gen::<f64>() < config.successor_probability;
                    if fire {
                        visit.insert(*successor);
                    }
                }
            }
            visits.push((when, visit.iter().map(|&i| codes[i].clone()).collect()));
            when += Duration::days(rng.gen_range(7..=180));
            previous = visit;
        }
        patients.push((format!("P{n:05}"), visits));
    }

    let dataset = Dataset::from_raw(patients, config.levels)?;
    let rules = rules_idx
        .into_iter()
        .map(|(triggers, successor)| PlantedRule {
            triggers: triggers.iter().map(|&i| codes[i].clone()).collect(),
            successor: codes[successor].clone(),
            probability: config.successor_probability,
        })
        .collect();
    Ok(SyntheticCorpus { dataset, rules })
}

/// `(fired, opportunities)`: consecutive visit pairs whose first visit holds
/// every trigger, and how many of those are followed by the successor.
pub fn rule_firing_counts(ds: &Dataset, rule: &PlantedRule) -> (usize, usize) {
    let triggers: Option<Vec<usize>> = rule.triggers.iter().map(|t| ds.code_index(t)).collect();
    let Some(triggers) = triggers else { return (0, 0) };
    let successor = ds.code_index(&rule.successor);
    let mut fired = 0;
    let mut opportunities = 0;
    for r in &ds.records {
        for pair in r.visits.windows(2) {
            if triggers.iter().all(|&t| pair[0].contains(t)) {
                opportunities += 1;
                if successor.is_some_and(|s| pair[1].contains(s)) {
                    fired += 1;
                }
            }
        }
    }
    (fired, opportunities)
}
