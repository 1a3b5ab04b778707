//! Intervention sessions and their append-only JSON-lines store.
//!
//! A session file starts with one `created` line followed by one `revision`
//! line per committed edit batch. Revision 0 is the unedited explanation.
//! Loading replays every batch over the base phenotypes and rejects the file
//! if any recorded revision disagrees with the replay.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use hyperpheno_core::hypergraph::Cell;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::payload::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditAction {
    Add,
    Remove,
}

/// One committed cell edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub k: usize,
    pub code: String,
    pub code_index: usize,
    pub visit_index: usize,
    pub action: EditAction,
    pub author: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDelta {
    pub code: String,
    pub code_index: usize,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// Change between consecutive revisions. `score_deltas` covers the union of
/// both top-k lists: new top-k order first, then codes that left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDiff {
    pub entering: Vec<String>,
    pub leaving: Vec<String>,
    pub score_deltas: Vec<ScoreDelta>,
}

impl PredictionDiff {
    pub fn between(before: &Prediction, after: &Prediction) -> Self {
        let in_list = |p: &Prediction, c: usize| p.top_k.iter().any(|s| s.code_index == c);
        let entering = after.top_k.iter().filter(|s| !in_list(before, s.code_index));
        let leaving = before.top_k.iter().filter(|s| !in_list(after, s.code_index));
        let score_deltas = after
            .top_k
            .iter()
            .chain(leaving.clone())
            .map(|s| {
                let (b, a) = (before.scores[s.code_index], after.scores[s.code_index]);
                ScoreDelta {
                    code: s.code.clone(),
                    code_index: s.code_index,
                    before: b,
                    after: a,
                    delta: a - b,
                }
            })
            .collect();
        Self {
            entering: entering.map(|s| s.code.clone()).collect(),
            leaving: leaving.map(|s| s.code.clone()).collect(),
            score_deltas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub revision: usize,
    pub created_at: DateTime<Utc>,
    /// The batch that produced this revision from the previous one.
    pub edits: Vec<Edit>,
    pub phenotypes: Vec<Vec<Cell>>,
    pub prediction: Prediction,
    /// Against the previous revision; empty for revision 0.
    pub diff: PredictionDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub patient_id: String,
    pub created_at: DateTime<Utc>,
    pub num_codes: usize,
    pub num_visits: usize,
    /// Checksum of the parameters the session was opened against.
    pub model_checksum: String,
    /// Augmentation cells of the base explanation, held fixed for the
    /// whole session.
    pub augmented: Vec<Cell>,
    pub base: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSession {
    #[serde(flatten)]
    pub header: SessionHeader,
    pub revisions: Vec<Revision>,
}

impl InterventionSession {
    pub fn latest(&self) -> &Revision {
        self.revisions.last().expect("a session always has revision 0")
    }

    pub fn edits(&self) -> impl Iterator<Item = &Edit> {
        self.revisions.iter().flat_map(|r| &r.edits)
    }

    /// Applies every recorded edit to the base phenotypes.
    pub fn replay(&self) -> Result<Vec<Vec<Cell>>, ServiceError> {
        let edits: Vec<Edit> = self.edits().cloned().collect();
        apply_edits(&self.header.base, &edits, self.header.num_codes, self.header.num_visits)
    }
}

/// Applies `edits` in order. Fails on the first invalid edit without
/// touching the input.
pub fn apply_edits(
    phenotypes: &[Vec<Cell>],
    edits: &[Edit],
    num_codes: usize,
    num_visits: usize,
) -> Result<Vec<Vec<Cell>>, ServiceError> {
    let mut out = phenotypes.to_vec();
    for (index, e) in edits.iter().enumerate() {
        let bad = |message: String| ServiceError::InvalidEdit { index, message };
        if e.k >= out.len() {
            return Err(bad(format!("phenotype {} out of range (K = {})", e.k, out.len())));
        }
        if e.code_index >= num_codes {
            return Err(bad(format!("code {} is not in the vocabulary", e.code)));
        }
        if e.visit_index >= num_visits {
            return Err(bad(format!("visit {} out of range (T = {num_visits})", e.visit_index)));
        }
        let cells = &mut out[e.k];
        let cell = Cell::new(e.code_index, e.visit_index);
        match (e.action, cells.binary_search(&cell)) {
            (EditAction::Add, Err(pos)) => cells.insert(pos, cell),
            (EditAction::Remove, Ok(pos)) => {
                cells.remove(pos);
            }
            (EditAction::Add, Ok(_)) => {
                return Err(bad(format!("{} at visit {} is already in phenotype {}", e.code, e.visit_index, e.k)))
            }
            (EditAction::Remove, Err(_)) => {
                return Err(bad(format!("{} at visit {} is not in phenotype {}", e.code, e.visit_index, e.k)))
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogLine {
    Created(SessionHeader),
    Revision(Revision),
}

/// Session files under one directory, one writer per session at a time.
#[derive(Debug)]
pub struct SessionStore {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    counter: AtomicU64,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn write_line(f: &mut File, line: &LogLine) -> Result<(), ServiceError> {
    let mut bytes = serde_json::to_vec(line)?;
    bytes.push(b'\n');
    f.write_all(&bytes)?;
    f.sync_data()?;
    Ok(())
}

impl SessionStore {
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            locks: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, id: &str) -> Result<PathBuf, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::BadSessionId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.jsonl")))
    }

    /// Per-session mutex; hold it across load, compute and append.
    pub fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    /// A fresh id that no existing file uses.
    pub fn new_id(&self) -> String {
        loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let id = format!("s{}-{n}", Utc::now().format("%Y%m%dT%H%M%S%f"));
            if !self.dir.join(format!("{id}.jsonl")).exists() {
                return id;
            }
        }
    }

    /// Writes a new session file. Fails if the id is already taken.
    pub fn save(&self, session: &InterventionSession) -> Result<(), ServiceError> {
        let path = self.path(&session.header.session_id)?;
        let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
        write_line(&mut f, &LogLine::Created(session.header.clone()))?;
        for r in &session.revisions {
            write_line(&mut f, &LogLine::Revision(r.clone()))?;
        }
        Ok(())
    }

    /// Appends one revision; the caller holds the session lock and has
    /// checked that `rev.revision` is the next number.
    pub fn append(&self, id: &str, rev: &Revision) -> Result<(), ServiceError> {
        let path = self.path(id)?;
        if !path.exists() {
            return Err(ServiceError::UnknownSession(id.to_string()));
        }
        let mut f = OpenOptions::new().append(true).open(path)?;
        write_line(&mut f, &LogLine::Revision(rev.clone()))
    }

    pub fn load(&self, id: &str) -> Result<InterventionSession, ServiceError> {
        let path = self.path(id)?;
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::UnknownSession(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let corrupt = |line: usize, message: String| ServiceError::CorruptLog {
            path: path.display().to_string(),
            line,
            message,
        };
        let mut header: Option<SessionHeader> = None;
        let mut revisions: Vec<Revision> = Vec::new();
        let mut current: Vec<Vec<Cell>> = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let n = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| corrupt(n, e.to_string()))?;
            match (parsed, &header) {
                (LogLine::Created(h), None) => {
                    if h.session_id != id {
                        return Err(corrupt(n, format!("header names session {:?}", h.session_id)));
                    }
                    current = h.base.clone();
                    header = Some(h);
                }
                (LogLine::Created(_), Some(_)) => return Err(corrupt(n, "second header".into())),
                (LogLine::Revision(_), None) => return Err(corrupt(n, "revision before header".into())),
                (LogLine::Revision(r), Some(h)) => {
                    if r.revision != revisions.len() {
                        return Err(corrupt(n, format!("expected revision {}, found {}", revisions.len(), r.revision)));
                    }
                    current = apply_edits(&current, &r.edits, h.num_codes, h.num_visits)
                        .map_err(|e| corrupt(n, e.to_string()))?;
                    if current != r.phenotypes {
                        return Err(corrupt(n, "recorded phenotypes differ from replayed edits".into()));
                    }
                    revisions.push(r);
                }
            }
        }
        let header = header.ok_or_else(|| corrupt(1, "missing header".into()))?;
        if revisions.is_empty() {
            return Err(corrupt(2, "missing revision 0".into()));
        }
        Ok(InterventionSession { header, revisions })
    }
}
