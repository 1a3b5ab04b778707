//! Longitudinal EHR data model: records, ICD-9 hierarchy, ingestion,
//! synthetic generation, splitting and masking.

pub mod icd9;
pub mod ingest;
pub mod mask;
pub mod ontology;
pub mod split;
pub mod synth;
pub mod types;

pub use ingest::{load_dataset, load_dataset_with_report, write_dataset_csv, IngestConfig, IngestReport};
pub use mask::{mask_diagnoses, MaskEntry, MaskLedger};
pub use ontology::{build_ontology, OntologyTree, DEFAULT_LEVELS};
pub use split::split_dataset;
pub use synth::{generate_synthetic, rule_firing_counts, PlantedRule, SynthConfig, SyntheticCorpus};
pub use types::{Dataset, DiagnosisCode, PatientRecord, Visit};
