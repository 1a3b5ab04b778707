use std::collections::HashMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::ontology::{build_ontology, OntologyTree};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisCode {
    pub code: String,
    pub index: usize,
}

/// One hospital visit: a set of code indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    /// Sorted, duplicate-free vocabulary indices.
    pub codes: Vec<usize>,
    pub timestamp: NaiveDateTime,
    /// Set when masking removed every code of this visit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub emptied: bool,
}

impl Visit {
    pub fn new(mut codes: Vec<usize>, timestamp: NaiveDateTime) -> Self {
        codes.sort_unstable();
        codes.dedup();
        Self {
            codes,
            timestamp,
            emptied: false,
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn contains(&self, code: usize) -> bool {
        self.codes.binary_search(&code).is_ok()
    }

    pub fn multi_hot(&self, vocab_size: usize) -> Vec<f64> {
        let mut v = vec![0.0; vocab_size];
        for &c in &self.codes {
            v[c] = 1.0;
        }
        v
    }

    pub fn from_multi_hot(v: &[f64], timestamp: NaiveDateTime) -> Self {
        let codes = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self::new(codes, timestamp)
    }
}

/// Visits in timestamp order. The final visit is the prediction target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Past visits fed to the model.
    pub fn inputs(&self) -> &[Visit] {
        &self.visits[..self.visits.len().saturating_sub(1)]
    }

    /// Next-visit label.
    pub fn label(&self) -> &Visit {
        self.visits.last().expect("record has visits")
    }

    /// Number of input visits.
    pub fn input_len(&self) -> usize {
        self.visits.len().saturating_sub(1)
    }

    /// Total diagnosis occurrences over input visits.
    pub fn input_occurrences(&self) -> usize {
        self.inputs().iter().map(Visit::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub vocabulary: Vec<DiagnosisCode>,
    pub ontology: OntologyTree,
}

/// Raw visit before vocabulary indexing: timestamp plus code strings.
pub type RawVisit = (NaiveDateTime, Vec<String>);

impl Dataset {
    /// Indexes raw patients against a vocabulary built from their distinct
    /// codes (sorted) and constructs the ontology.
    pub fn from_raw(patients: Vec<(String, Vec<RawVisit>)>, levels: usize) -> Result<Self> {
        let mut codes: Vec<String> = patients
            .iter()
            .flat_map(|(_, visits)| visits.iter().flat_map(|(_, c)| c.iter().cloned()))
            .collect();
        codes.sort();
        codes.dedup();
        let ontology = build_ontology(&codes, levels)?;
        let lookup: HashMap<&str, usize> =
            codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let records = patients
            .iter()
            .map(|(pid, visits)| PatientRecord {
                patient_id: pid.clone(),
                visits: visits
                    .iter()
                    .map(|(ts, cs)| Visit::new(cs.iter().map(|c| lookup[c.as_str()]).collect(), *ts))
                    .collect(),
            })
            .collect();
        let vocabulary = codes
            .into_iter()
            .enumerate()
            .map(|(index, code)| DiagnosisCode { code, index })
            .collect();
        Ok(Self {
            records,
            vocabulary,
            ontology,
        })
    }

    pub fn num_codes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn code_index(&self, code: &str) -> Option<usize> {
        self.vocabulary
            .binary_search_by(|c| c.code.as_str().cmp(code))
            .ok()
            .filter(|&i| self.vocabulary[i].code == code)
    }

    pub fn code_str(&self, index: usize) -> &str {
        &self.vocabulary[index].code
    }

    pub fn record(&self, patient_id: &str) -> Result<&PatientRecord> {
        self.records
            .iter()
            .find(|r| r.patient_id == patient_id)
            .ok_or_else(|| Error::UnknownPatient(patient_id.to_string()))
    }

    /// Same vocabulary and ontology, different patients.
    pub fn with_records(&self, records: Vec<PatientRecord>) -> Dataset {
        Dataset {
            records,
            vocabulary: self.vocabulary.clone(),
            ontology: self.ontology.clone(),
        }
    }

    /// Total diagnosis occurrences over all visits of all patients.
    pub fn occurrence_count(&self) -> usize {
        self.records
            .iter()
            .flat_map(|r| r.visits.iter())
            .map(Visit::len)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts() -> NaiveDateTime {
        chrono::NaiveDate::from_ymd_opt(2100, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    proptest! {
        #[test]
        fn multi_hot_round_trip(codes in proptest::collection::btree_set(0usize..40, 1..12)) {
            let visit = Visit::new(codes.iter().copied().collect(), ts());
            let hot = visit.multi_hot(40);
            prop_assert_eq!(hot.iter().filter(|&&x| x == 1.0).count(), codes.len());
            let back = Visit::from_multi_hot(&hot, ts());
            prop_assert_eq!(back.codes, codes.into_iter().collect::<Vec<_>>());
        }
    }

    #[test]
    fn visit_codes_form_a_set() {
        let v = Visit::new(vec![3, 1, 3, 2], ts());
        assert_eq!(v.codes, vec![1, 2, 3]);
        assert!(v.contains(2));
        assert!(!v.contains(4));
    }

    #[test]
    fn code_lookup() {
        let ds = Dataset::from_raw(
            vec![(
                "p".into(),
                vec![(ts(), vec!["486".into()]), (ts(), vec!["401.9".into()])],
            )],
            4,
        )
        .unwrap();
        assert_eq!(ds.code_index("486"), Some(1));
        assert_eq!(ds.code_index("401.9"), Some(0));
        assert_eq!(ds.code_index("999"), None);
    }
}
