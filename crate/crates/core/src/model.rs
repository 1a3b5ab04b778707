//! The full model: parameters for every component and the forward pass
//! composing embedding, message passing, augmentation, extraction and
//! phenotype-based prediction.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{similarity_scores, supplement, AugmentedHypergraph, SimilarityHeads};
use crate::autodiff::{Graph, Var};
use crate::ehr::{build_ontology, Dataset, OntologyTree, PatientRecord};
use crate::embedding::LevelTables;
use crate::error::{Error, Result};
use crate::hypergraph::{build_incidence, message_passing, visit_aggregate, Cell, PatientHypergraph, UniGinStack};
use crate::objectives::{alpha_term, distinct_term, fidelity_term, pred_term, LossWeights, PatientLoss};
use crate::params::ParamStore;
use crate::phenotype::{active_cells, extract_phenotypes, noise_rng, ExtractionMode, ExtractorHead, Extraction, PhenotypeSet};
use crate::predictor::{PhenotypeAttention, PhenotypeEncoder, PredictionHead, ReconstructionDecoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-level code embedding width `d_c`.
    pub code_dim: usize,
    /// Output width of each UniGIN layer; its length is `Z`.
    pub unigin_widths: Vec<usize>,
    /// Similarity heads `n_s`.
    pub similarity_heads: usize,
    /// Augmentation ratio `p`.
    pub augment_ratio: f64,
    /// Number of phenotypes `K`.
    pub num_phenotypes: usize,
    /// Gumbel temperature `τ`.
    pub temperature: f64,
    /// GRU hidden size `d_hid`.
    pub hidden: usize,
    /// Self-attention heads `n_h`.
    pub attention_heads: usize,
    /// Per-head query/key width `d_Q = d_K`.
    pub attention_key_dim: usize,
    /// Per-head value width `d_V`.
    pub attention_value_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            code_dim: 8,
            unigin_widths: vec![32, 32],
            similarity_heads: 4,
            augment_ratio: 0.1,
            num_phenotypes: 5,
            temperature: 1.0,
            hidden: 32,
            attention_heads: 4,
            attention_key_dim: 8,
            attention_value_dim: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("code_dim", self.code_dim),
            ("similarity_heads", self.similarity_heads),
            ("num_phenotypes", self.num_phenotypes),
            ("hidden", self.hidden),
            ("attention_heads", self.attention_heads),
            ("attention_key_dim", self.attention_key_dim),
            ("attention_value_dim", self.attention_value_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.unigin_widths.contains(&0) {
            return Err(Error::InvalidConfig("unigin_widths entries must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_ratio) {
            return Err(Error::BadFraction(self.augment_ratio));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::BadTemperature(self.temperature));
        }
        Ok(())
    }

    /// Width of the personalised table `d^(Z)`.
    pub fn personalized_dim(&self, levels: usize) -> usize {
        self.unigin_widths.last().copied().unwrap_or(self.code_dim * levels)
    }
}

/// How a forward pass draws its masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub mode: ExtractionMode,
    pub temperature: f64,
    /// Seed and step select the noise stream; unused in deterministic mode.
    pub noise_seed: u64,
    pub step: u64,
}

impl ForwardOptions {
    pub fn deterministic() -> Self {
        Self {
            mode: ExtractionMode::Deterministic,
            temperature: 1.0,
            noise_seed: 0,
            step: 0,
        }
    }
}

/// Every intermediate of one patient's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub hypergraph: PatientHypergraph,
    pub augmented: AugmentedHypergraph,
    /// `M^(Z)`, `|C| x d^(Z)`.
    pub personalized: Var,
    /// Visit means of `M^(Z)` over `P`, `T x d^(Z)`.
    pub visits: Var,
    pub extraction: Extraction,
    /// Hard phenotypes (cells whose mask exceeds 0.5).
    pub phenotypes: PhenotypeSet,
    /// `K x d_hid` phenotype embeddings.
    pub embeddings: Var,
    /// `1 x K`.
    pub alpha: Var,
    /// `1 x |C|`.
    pub scores: Var,
    /// `T x |C|`.
    pub reconstruction: Var,
}

/// Values needed to explain and re-predict one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
    pub phenotypes: PhenotypeSet,
    /// `ΔP`, in selection order.
    pub augmented: Vec<Cell>,
    /// `M^(Z)`, needed by [`ShyModel::predict_from_phenotypes`].
    pub personalized: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShyModel {
    pub config: ModelConfig,
    pub vocabulary: Vec<String>,
    pub tree: OntologyTree,
    pub store: ParamStore,
    pub embedding: LevelTables,
    pub unigin: UniGinStack,
    pub similarity: SimilarityHeads,
    pub extractors: Vec<ExtractorHead>,
    pub encoder: PhenotypeEncoder,
    pub attention: PhenotypeAttention,
    pub head: PredictionHead,
    pub decoder: ReconstructionDecoder,
}

impl ShyModel {
    /// Fresh parameters. The same (config, vocabulary, levels, seed) always
    /// gives the same parameters.
    pub fn new(config: ModelConfig, vocabulary: Vec<String>, levels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let tree = build_ontology(&vocabulary, levels)?;
        let num_codes = vocabulary.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embedding = LevelTables::init(&mut store, &tree, config.code_dim, &mut rng)?;
        let unigin = UniGinStack::init(&mut store, embedding.output_dim(), &config.unigin_widths, &mut rng);
        let d = config.personalized_dim(levels);
        let similarity = SimilarityHeads::init(&mut store, config.similarity_heads, d, &mut rng);
        let extractors = (0..config.num_phenotypes)
            .map(|k| ExtractorHead::init(&mut store, k, d, &mut rng))
            .collect();
        let encoder = PhenotypeEncoder::init(&mut store, d, config.hidden, &mut rng);
        let attention = PhenotypeAttention::init(
            &mut store,
            config.hidden,
            config.attention_heads,
            config.attention_key_dim,
            config.attention_value_dim,
            &mut rng,
        );
        let head = PredictionHead::init(&mut store, config.hidden, num_codes, &mut rng);
        let decoder = ReconstructionDecoder::init(
            &mut store,
            config.num_phenotypes * config.hidden,
            config.hidden,
            num_codes,
            &mut rng,
        );
        Ok(Self {
            config,
            vocabulary,
            tree,
            store,
            embedding,
            unigin,
            similarity,
            extractors,
            encoder,
            attention,
            head,
            decoder,
        })
    }

    pub fn for_dataset(config: ModelConfig, ds: &Dataset, seed: u64) -> Result<Self> {
        Self::new(config, ds.vocabulary.iter().map(|c| c.code.clone()).collect(), ds.ontology.depth(), seed)
    }

    pub fn num_codes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn k(&self) -> usize {
        self.extractors.len()
    }

    /// Encodes every phenotype and mixes them. `weights[k] = None` gives
    /// unit weight to each listed cell.
    fn bottleneck(
        &self,
        g: &mut Graph,
        personalized: Var,
        cells: &[Vec<Cell>],
        weights: &[Option<Var>],
        num_visits: usize,
    ) -> (Var, Var, Var) {
        let u: Vec<Var> = cells
            .iter()
            .zip(weights)
            .map(|(c, &w)| self.encoder.encode(g, &self.store, personalized, c, w, num_visits))
            .collect();
        let u = g.concat_rows(&u);
        let alpha = self.attention.attend(g, &self.store, u);
        let scores = self.head.predict(g, &self.store, u, alpha);
        (u, alpha, scores)
    }

    /// Full forward pass on the tape.
    pub fn forward(&self, g: &mut Graph, record: &PatientRecord, opts: &ForwardOptions) -> Result<ForwardPass> {
        let hypergraph = build_incidence(record, self.num_codes())?;
        let t = hypergraph.num_visits;
        if t == 0 {
            return Err(Error::Shape(format!("patient {} has no input visits", record.patient_id)));
        }
        let m0 = self.embedding.code_table(g, &self.store);
        let personalized = message_passing(g, &self.store, &self.unigin, &hypergraph, m0);
        let visits = visit_aggregate(g, &hypergraph, personalized);
        let scores_s = similarity_scores(
            self.store.value(self.similarity.weights),
            g.value(personalized),
            g.value(visits),
            &hypergraph,
        )?;
        let augmented = supplement(&scores_s, &hypergraph, self.config.augment_ratio)?;
        let support = augmented.support();
        let pid = record.patient_id.as_str();
        let extraction = extract_phenotypes(
            g,
            &self.store,
            &self.extractors,
            personalized,
            visits,
            support,
            opts.temperature,
            opts.mode,
            |k| noise_rng(opts.noise_seed, pid, k, opts.step),
        )?;
        let active = active_cells(g, &extraction);
        let (cells, weights): (Vec<Vec<Cell>>, Vec<Option<Var>>) = match opts.mode {
            ExtractionMode::Deterministic => (active.clone(), vec![None; active.len()]),
            _ => (
                vec![extraction.support.clone(); self.k()],
                extraction.masks.iter().map(|&m| Some(m)).collect(),
            ),
        };
        let (embeddings, alpha, scores) = self.bottleneck(g, personalized, &cells, &weights, t);
        let u_cat = {
            let rows: Vec<Var> = (0..self.k()).map(|k| g.row(embeddings, k)).collect();
            g.concat_cols(&rows)
        };
        let reconstruction = self.decoder.reconstruct(g, &self.store, u_cat, t);
        let phenotypes = PhenotypeSet::new(self.num_codes(), t, active)?;
        Ok(ForwardPass {
            hypergraph,
            augmented,
            personalized,
            visits,
            extraction,
            phenotypes,
            embeddings,
            alpha,
            scores,
            reconstruction,
        })
    }

    /// Training loss terms for one patient on top of a forward pass.
    pub fn patient_loss(&self, g: &mut Graph, record: &PatientRecord, pass: &ForwardPass, weights: &LossWeights) -> PatientLoss {
        let c = self.num_codes();
        let label = Array2::from_shape_vec((1, c), record.label().multi_hot(c)).expect("label shape");
        let pred = pred_term(g, pass.scores, Arc::new(label));
        let visits = pass.hypergraph.to_dense().reversed_axes().as_standard_layout().to_owned();
        let fidelity = fidelity_term(g, pass.reconstruction, Arc::new(visits));
        let distinct = distinct_term(g, &pass.extraction.masks, &pass.extraction.support, pass.hypergraph.num_visits);
        let alpha = alpha_term(g, pass.alpha);
        PatientLoss::combine(g, pred, fidelity, distinct, alpha, weights)
    }

    /// Deterministic forward pass reduced to plain values.
    pub fn explain(&self, record: &PatientRecord) -> Result<Explanation> {
        let mut g = Graph::new();
        let pass = self.forward(&mut g, record, &ForwardOptions::deterministic())?;
        Ok(Explanation {
            scores: g.value(pass.scores).iter().copied().collect(),
            alpha: g.value(pass.alpha).iter().copied().collect(),
            phenotypes: pass.phenotypes,
            augmented: pass.augmented.added,
            personalized: g.value(pass.personalized).clone(),
        })
    }

    /// Re-runs only encode, attend and predict on a (possibly edited)
    /// phenotype set. Returns `(ŷ, α)`.
    pub fn predict_from_phenotypes(&self, set: &PhenotypeSet, personalized: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if set.k() != self.k() {
            return Err(Error::Shape(format!("expected {} phenotypes, got {}", self.k(), set.k())));
        }
        if set.num_codes != self.num_codes() || personalized.nrows() != self.num_codes() {
            return Err(Error::Shape(format!(
                "phenotypes cover {} codes and the personalised table has {} rows; the model has {}",
                set.num_codes,
                personalized.nrows(),
                self.num_codes()
            )));
        }
        let d = self.config.personalized_dim(self.tree.depth());
        if personalized.ncols() != d {
            return Err(Error::Shape(format!("personalised table width {} != {d}", personalized.ncols())));
        }
        if set.num_visits == 0 {
            return Err(Error::Shape("phenotype set has no visits".into()));
        }
        let mut g = Graph::new();
        let m = g.constant(personalized.clone());
        let weights = vec![None; set.k()];
        let (_, alpha, scores) = self.bottleneck(&mut g, m, &set.phenotypes, &weights, set.num_visits);
        Ok((g.value(scores).iter().copied().collect(), g.value(alpha).iter().copied().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{generate_synthetic, SynthConfig};

    fn small_config() -> ModelConfig {
        ModelConfig {
            code_dim: 4,
            unigin_widths: vec![8, 8],
            similarity_heads: 2,
            augment_ratio: 0.2,
            num_phenotypes: 3,
            temperature: 1.0,
            hidden: 8,
            attention_heads: 2,
            attention_key_dim: 4,
            attention_value_dim: 4,
        }
    }

    fn corpus() -> Dataset {
        let cfg = SynthConfig {
            num_codes: 30,
            num_patients: 20,
            num_clusters: 3,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg, 3).unwrap().dataset
    }

    #[test]
    fn shapes_and_simplex() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 0).unwrap();
        for r in &ds.records {
            let mut g = Graph::new();
            let pass = model.forward(&mut g, r, &ForwardOptions::deterministic()).unwrap();
            let t = r.input_len();
            assert_eq!(g.value(pass.scores).dim(), (1, 30));
            assert_eq!(g.value(pass.alpha).dim(), (1, 3));
            assert_eq!(g.value(pass.reconstruction).dim(), (t, 30));
            assert!((g.value(pass.scores).sum() - 1.0).abs() < 1e-9);
            assert!((g.value(pass.alpha).sum() - 1.0).abs() < 1e-9);
            let support = pass.augmented.support();
            for ph in &pass.phenotypes.phenotypes {
                assert!(ph.iter().all(|c| support.binary_search(c).is_ok()));
            }
        }
    }

    #[test]
    fn deterministic_forward_is_repeatable() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 1).unwrap();
        let r = &ds.records[0];
        assert_eq!(model.explain(r).unwrap(), model.explain(r).unwrap());
    }

    #[test]
    fn bottleneck_is_bit_exact() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 2).unwrap();
        for r in &ds.records {
            let e = model.explain(r).unwrap();
            let (scores, alpha) = model.predict_from_phenotypes(&e.phenotypes, &e.personalized).unwrap();
            assert_eq!(scores, e.scores);
            assert_eq!(alpha, e.alpha);
        }
    }

    #[test]
    fn composition_matches_manual_pipeline() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 4).unwrap();
        let r = &ds.records[1];
        let e = model.explain(r).unwrap();
        let mut g = Graph::new();
        let m = g.constant(e.personalized.clone());
        let u: Vec<Var> = e
            .phenotypes
            .phenotypes
            .iter()
            .map(|c| model.encoder.encode(&mut g, &model.store, m, c, None, r.input_len()))
            .collect();
        let u = g.concat_rows(&u);
        let a = model.attention.attend(&mut g, &model.store, u);
        let y = model.head.predict(&mut g, &model.store, u, a);
        assert_eq!(g.value(y).iter().copied().collect::<Vec<_>>(), e.scores);
    }

    #[test]
    fn permuting_phenotypes_permutes_alpha_only() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 5).unwrap();
        let e = model.explain(&ds.records[2]).unwrap();
        let mut rotated = e.phenotypes.clone();
        rotated.phenotypes.rotate_left(1);
        let (y, a) = model.predict_from_phenotypes(&rotated, &e.personalized).unwrap();
        let (y0, a0) = model.predict_from_phenotypes(&e.phenotypes, &e.personalized).unwrap();
        for k in 0..3 {
            assert!((a[k] - a0[(k + 1) % 3]).abs() < 1e-12);
        }
        assert!(y.iter().zip(&y0).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn toggling_a_cell_changes_prediction() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 6).unwrap();
        let r = &ds.records[0];
        let e = model.explain(r).unwrap();
        let mut edited = e.phenotypes.clone();
        let cell = Cell::new(0, 0);
        if let Some(pos) = edited.phenotypes[0].iter().position(|&c| c == cell) {
            edited.phenotypes[0].remove(pos);
        } else {
            edited.phenotypes[0].push(cell);
            edited.phenotypes[0].sort_unstable();
        }
        let (y, _) = model.predict_from_phenotypes(&edited, &e.personalized).unwrap();
        assert_ne!(y, e.scores);
        let empty = PhenotypeSet::new(30, r.input_len(), vec![vec![]; 3]).unwrap();
        let (y, a) = model.predict_from_phenotypes(&empty, &e.personalized).unwrap();
        assert!(y.iter().chain(&a).all(|x| x.is_finite()));
        // identical empty phenotypes get equal weight
        assert!(a.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 6).unwrap();
        let e = model.explain(&ds.records[0]).unwrap();
        let two = PhenotypeSet::new(30, 2, vec![vec![]; 2]).unwrap();
        assert!(model.predict_from_phenotypes(&two, &e.personalized).is_err());
        let narrow = Array2::zeros((30, 3));
        assert!(model.predict_from_phenotypes(&e.phenotypes, &narrow).is_err());
    }

    #[test]
    fn sample_mode_masks_are_binary_and_seeded() {
        let ds = corpus();
        let model = ShyModel::for_dataset(small_config(), &ds, 7).unwrap();
        let opts = ForwardOptions {
            mode: ExtractionMode::Sample,
            temperature: 0.7,
            noise_seed: 9,
            step: 3,
        };
        let run = || {
            let mut g = Graph::new();
            let pass = model.forward(&mut g, &ds.records[0], &opts).unwrap();
            let masks: Vec<Array2<f64>> = pass.extraction.masks.iter().map(|&m| g.value(m).clone()).collect();
            (masks, g.value(pass.scores).clone())
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(a.iter().flatten().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.num_phenotypes = 0;
        assert!(c.validate().is_err());
        let c = ModelConfig {
            temperature: 0.0,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::BadTemperature(_))));
    }
}
