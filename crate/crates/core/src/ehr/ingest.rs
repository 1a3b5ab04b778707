//! CSV ingestion (`patient_id, visit_id, visit_timestamp, icd9_code`) and the
//! matching writer.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::icd9::Icd9;
use super::ontology::DEFAULT_LEVELS;
use super::types::{Dataset, RawVisit};
use crate::error::{Error, Result};

const COLUMNS: [&str; 4] = ["patient_id", "visit_id", "visit_timestamp", "icd9_code"];
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Ontology depth.
    pub levels: usize,
    /// Patients with fewer visits are dropped.
    pub min_visits: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            min_visits: 2,
        }
    }
}

/// What ingestion had to clean up.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub duplicate_rows: usize,
    pub dropped_patients: usize,
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn load_dataset(path: &Path, config: &IngestConfig) -> Result<Dataset> {
    load_dataset_with_report(path, config).map(|(ds, _)| ds)
}

pub fn load_dataset_with_report(path: &Path, config: &IngestConfig) -> Result<(Dataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let idx: Vec<usize> = COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;

    struct RawVisitAcc {
        timestamp: NaiveDateTime,
        codes: Vec<String>,
    }
    let mut patient_order: Vec<String> = Vec::new();
    let mut visits: HashMap<String, Vec<(String, RawVisitAcc)>> = HashMap::new();
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut report = IngestReport::default();

    for row in reader.records() {
        let line = match &row {
            Ok(r) => r.position().map(|p| p.line()).unwrap_or(0),
            Err(e) => e.position().map(|p| p.line()).unwrap_or(0),
        };
        let row = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if row.len() != headers.len() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
        }
        let field = |i: usize| row.get(idx[i]).unwrap_or("");
        let (pid, vid, ts_raw, code_raw) = (field(0), field(1), field(2), field(3));
        if pid.is_empty() || vid.is_empty() || code_raw.is_empty() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: "empty patient_id, visit_id or icd9_code".into(),
            });
        }
        let timestamp = parse_timestamp(ts_raw).ok_or_else(|| Error::BadTimestamp {
            path: path.to_path_buf(),
            line,
            value: ts_raw.to_string(),
        })?;
        // invalid codes pass through unchanged so ontology construction can list them
        let code = Icd9::parse(code_raw)
            .map(|c| c.canonical())
            .unwrap_or_else(|| code_raw.to_string());
        report.rows += 1;

        if !seen.insert((pid.to_string(), vid.to_string(), code.clone())) {
            warn!("{}: line {line}: duplicate ({pid}, {vid}, {code}) ignored", path.display());
            report.duplicate_rows += 1;
            continue;
        }
        let entry = visits.entry(pid.to_string()).or_insert_with(|| {
            patient_order.push(pid.to_string());
            Vec::new()
        });
        match entry.iter_mut().find(|(v, _)| v == vid) {
            Some((_, acc)) => {
                if acc.timestamp != timestamp {
                    warn!(
                        "{}: line {line}: visit {vid} of {pid} has conflicting timestamps; keeping the first",
                        path.display()
                    );
                }
                acc.codes.push(code);
            }
            None => entry.push((
                vid.to_string(),
                RawVisitAcc {
                    timestamp,
                    codes: vec![code],
                },
            )),
        }
    }

    let mut patients = Vec::new();
    for pid in patient_order {
        let mut pv = visits.remove(&pid).unwrap_or_default();
        if pv.len() < config.min_visits {
            report.dropped_patients += 1;
            continue;
        }
        // stable: equal timestamps keep file order
        pv.sort_by_key(|(_, acc)| acc.timestamp);
        let raw: Vec<RawVisit> = pv.into_iter().map(|(_, acc)| (acc.timestamp, acc.codes)).collect();
        patients.push((pid, raw));
    }
    if report.dropped_patients > 0 {
        info!(
            "{}: dropped {} patients with fewer than {} visits",
            path.display(),
            report.dropped_patients,
            config.min_visits
        );
    }
    let ds = Dataset::from_raw(patients, config.levels)?;
    Ok((ds, report))
}

/// Writes `ds` in the ingestion schema. Visit ids are per-patient ordinals.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{}", COLUMNS.join(","))?;
    for r in &ds.records {
        for (j, v) in r.visits.iter().enumerate() {
            for &c in &v.codes {
                writeln!(
                    out,
                    "{},{},{},{}",
                    r.patient_id,
                    j,
                    v.timestamp.format(TIMESTAMP_FORMAT),
                    ds.code_str(c)
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
