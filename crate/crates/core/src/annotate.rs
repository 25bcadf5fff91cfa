//! Two-analyst labeling with negotiated conflict resolution.
//!
//! Each review moves through
//! `UNLABELED -> LABELED -> VALIDATED | CONFLICT`, and `CONFLICT -> RESOLVED`.
//! A second label agrees when its violation flag matches the first;
//! differing categories on an agreed label only set
//! `category_disagreement`. Every change is an event with a sequence number;
//! with a directory attached, events are appended to `events.jsonl` before
//! they take effect and [`AnnotationStore::snapshot`] writes
//! `snapshot.json`. Opening the directory loads the snapshot and replays the
//! newer events.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Review};
use crate::taxonomy::ViolationCategory;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_FORMAT: &str = "hvd-annotations/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Unlabeled,
    Labeled,
    Validated,
    Conflict,
    Resolved,
}

impl Stage {
    pub fn code(self) -> &'static str {
        match self {
            Stage::Unlabeled => "UNLABELED",
            Stage::Labeled => "LABELED",
            Stage::Validated => "VALIDATED",
            Stage::Conflict => "CONFLICT",
            Stage::Resolved => "RESOLVED",
        }
    }

    /// The only transitions the store performs.
    pub fn may_become(self, next: Stage) -> bool {
        matches!(
            (self, next),
            (Stage::Unlabeled, Stage::Labeled)
                | (Stage::Labeled, Stage::Validated)
                | (Stage::Labeled, Stage::Conflict)
                | (Stage::Conflict, Stage::Resolved)
        )
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Labeler,
    Validator,
    Resolver,
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "labeler" => Ok(Role::Labeler),
            "validator" => Ok(Role::Validator),
            "resolver" => Ok(Role::Resolver),
            _ => Err(format!("unknown role {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub violation: bool,
    #[serde(default)]
    pub categories: Vec<ViolationCategory>,
    pub annotator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
}

impl Label {
    pub fn new(violation: bool, annotator: impl Into<String>) -> Self {
        Label {
            violation,
            categories: Vec::new(),
            annotator: annotator.into(),
            round: None,
        }
    }

    pub fn with_categories(mut self, categories: impl IntoIterator<Item = ViolationCategory>) -> Self {
        self.categories = categories.into_iter().collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub violation: bool,
    #[serde(default)]
    pub categories: Vec<ViolationCategory>,
    pub note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolver: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub review_id: String,
    pub review: Review,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    /// Both analysts flagged a violation but chose different categories.
    #[serde(default)]
    pub category_disagreement: bool,
}

impl AnnotationTask {
    fn new(review: Review) -> Self {
        AnnotationTask {
            review_id: review.id.clone(),
            review,
            stage: Stage::Unlabeled,
            first_label: None,
            second_label: None,
            resolution: None,
            category_disagreement: false,
        }
    }

    /// Checks the stage against the labels it implies.
    pub fn is_consistent(&self) -> bool {
        let (a, b) = (&self.first_label, &self.second_label);
        match self.stage {
            Stage::Unlabeled => a.is_none() && b.is_none() && self.resolution.is_none(),
            Stage::Labeled => a.is_some() && b.is_none() && self.resolution.is_none(),
            Stage::Validated => matches!((a, b), (Some(x), Some(y)) if x.violation == y.violation) && self.resolution.is_none(),
            Stage::Conflict => matches!((a, b), (Some(x), Some(y)) if x.violation != y.violation) && self.resolution.is_none(),
            Stage::Resolved => {
                matches!((a, b), (Some(x), Some(y)) if x.violation != y.violation)
                    && self.resolution.as_ref().is_some_and(|r| !r.note.trim().is_empty())
            }
        }
    }

    /// The agreed or resolved label, if the task has one.
    pub fn final_label(&self) -> Option<(bool, Vec<ViolationCategory>)> {
        match self.stage {
            Stage::Validated => {
                let (a, b) = (self.first_label.as_ref()?, self.second_label.as_ref()?);
                let cats = if a.violation {
                    let set: BTreeSet<ViolationCategory> = a.categories.iter().chain(&b.categories).copied().collect();
                    set.into_iter().collect()
                } else {
                    Vec::new()
                };
                Some((a.violation, cats))
            }
            Stage::Resolved => {
                let r = self.resolution.as_ref()?;
                let cats = if r.violation { r.categories.clone() } else { Vec::new() };
                Some((r.violation, cats))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum EventKind {
    /// A review entered the queue; carries the verbatim review.
    Enqueued { review: Review },
    Labeled { label: Label },
    Validated { label: Label },
    Conflicted { label: Label },
    Resolved { resolution: Resolution },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub review_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("unknown review {0}")]
    UnknownReview(String),
    #[error("review {0} is already queued")]
    Duplicate(String),
    #[error("review {review_id} is in stage {stage}; {action} is not allowed")]
    Stage {
        review_id: String,
        stage: Stage,
        action: &'static str,
    },
    #[error("annotator {annotator} gave the first label on {review_id} and cannot validate it")]
    SelfValidation { review_id: String, annotator: String },
    #[error("a resolution note is required")]
    NoteRequired,
    #[error("annotator id must not be empty")]
    EmptyAnnotator,
    #[error("the uncertainty strategy needs a scoring model")]
    MissingScorer,
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
    #[error("annotation log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

impl AnnotateError {
    /// Stage the task was in, for errors caused by a stage conflict.
    pub fn current_stage(&self) -> Option<Stage> {
        match self {
            AnnotateError::Stage { stage, .. } => Some(*stage),
            AnnotateError::SelfValidation { .. } => Some(Stage::Labeled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Fifo,
    Uncertainty,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(Strategy::Fifo),
            "uncertainty" => Ok(Strategy::Uncertainty),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

/// Violation probability for a task; `None` when it cannot be scored.
pub trait Scorer {
    fn score(&self, task: &AnnotationTask) -> Option<f64>;
}

impl Scorer for HashMap<String, f64> {
    fn score(&self, task: &AnnotationTask) -> Option<f64> {
        self.get(&task.review_id).copied()
    }
}

pub struct QueuePolicy<'a> {
    strategy: Strategy,
    scorer: Option<&'a dyn Scorer>,
}

impl<'a> QueuePolicy<'a> {
    pub fn fifo() -> Self {
        QueuePolicy {
            strategy: Strategy::Fifo,
            scorer: None,
        }
    }

    pub fn uncertainty(scorer: &'a dyn Scorer) -> Self {
        QueuePolicy {
            strategy: Strategy::Uncertainty,
            scorer: Some(scorer),
        }
    }

    pub fn new(strategy: Strategy, scorer: Option<&'a dyn Scorer>) -> Result<Self, AnnotateError> {
        if strategy == Strategy::Uncertainty && scorer.is_none() {
            return Err(AnnotateError::MissingScorer);
        }
        Ok(QueuePolicy { strategy, scorer })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n_tasks: usize,
    pub n_unlabeled: usize,
    pub n_labeled: usize,
    pub n_validated: usize,
    pub n_conflict: usize,
    pub n_resolved: usize,
    pub n_category_disagreements: usize,
    /// validated / (validated + conflict + resolved); `None` when no task
    /// has two labels yet.
    pub raw_agreement_rate: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    last_seq: u64,
    tasks: Vec<AnnotationTask>,
}

#[derive(Debug, Default)]
pub struct AnnotationStore {
    tasks: IndexMap<String, AnnotationTask>,
    events: Vec<Event>,
    last_seq: u64,
    dir: Option<PathBuf>,
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        AnnotationStore::default()
    }

    /// Opens or creates a store persisted under `dir`.
    pub fn open(dir: &Path) -> Result<Self, AnnotateError> {
        let err = |path: &Path, e: &dyn fmt::Display| AnnotateError::Log {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
        let mut store = AnnotationStore::default();
        let mut covered = 0;
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(|e| err(&snap_path, &e))?;
            let snap: Snapshot = serde_json::from_str(&text).map_err(|e| err(&snap_path, &e))?;
            if snap.format != SNAPSHOT_FORMAT {
                return Err(err(&snap_path, &format!("unsupported format {:?}", snap.format)));
            }
            store.last_seq = snap.last_seq;
            covered = snap.last_seq;
            store.tasks = snap.tasks.into_iter().map(|t| (t.review_id.clone(), t)).collect();
        }
        let log_path = dir.join(EVENTS_FILE);
        if log_path.exists() {
            let file = File::open(&log_path).map_err(|e| err(&log_path, &e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| err(&log_path, &e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event =
                    serde_json::from_str(&line).map_err(|e| err(&log_path, &format!("line {}: {e}", i + 1)))?;
                if event.seq <= covered {
                    // already in the snapshot; kept for the audit trail
                    store.events.push(event);
                    continue;
                }
                let task = store
                    .transition(&event)
                    .map_err(|e| err(&log_path, &format!("line {}: {e}", i + 1)))?;
                store.last_seq = event.seq;
                store.tasks.insert(event.review_id.clone(), task);
                store.events.push(event);
            }
        }
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, review_id: &str) -> Option<&AnnotationTask> {
        self.tasks.get(review_id)
    }

    /// Tasks in insertion order.
    pub fn tasks(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.tasks.values()
    }

    /// Every event recorded for one review, oldest first.
    pub fn history(&self, review_id: &str) -> Vec<&Event> {
        self.events.iter().filter(|e| e.review_id == review_id).collect()
    }

    /// Computes the task state after `event` without changing the store.
    fn transition(&self, event: &Event) -> Result<AnnotationTask, AnnotateError> {
        let id = &event.review_id;
        if let EventKind::Enqueued { review } = &event.kind {
            if self.tasks.contains_key(id) {
                return Err(AnnotateError::Duplicate(id.clone()));
            }
            return Ok(AnnotationTask::new(review.clone()));
        }
        let current = self.tasks.get(id).ok_or_else(|| AnnotateError::UnknownReview(id.clone()))?;
        let stage_err = |action| AnnotateError::Stage {
            review_id: id.clone(),
            stage: current.stage,
            action,
        };
        let mut next = current.clone();
        match &event.kind {
            EventKind::Enqueued { .. } => unreachable!("handled above"),
            EventKind::Labeled { label } => {
                if current.stage != Stage::Unlabeled {
                    return Err(stage_err("a first label"));
                }
                next.first_label = Some(label.clone());
                next.stage = Stage::Labeled;
            }
            EventKind::Validated { label } | EventKind::Conflicted { label } => {
                if current.stage != Stage::Labeled {
                    return Err(stage_err("a second label"));
                }
                let first = current.first_label.as_ref().expect("LABELED has a first label");
                if first.annotator == label.annotator {
                    return Err(AnnotateError::SelfValidation {
                        review_id: id.clone(),
                        annotator: label.annotator.clone(),
                    });
                }
                let agrees = first.violation == label.violation;
                let claims_agree = matches!(event.kind, EventKind::Validated { .. });
                if agrees != claims_agree {
                    return Err(AnnotateError::Inconsistent(format!(
                        "event {} does not match the labels of {id}",
                        event.seq
                    )));
                }
                next.category_disagreement = agrees && first.violation && {
                    let a: BTreeSet<_> = first.categories.iter().collect();
                    let b: BTreeSet<_> = label.categories.iter().collect();
                    a != b
                };
                next.second_label = Some(label.clone());
                next.stage = if agrees { Stage::Validated } else { Stage::Conflict };
            }
            EventKind::Resolved { resolution } => {
                if current.stage != Stage::Conflict {
                    return Err(stage_err("resolution"));
                }
                if resolution.note.trim().is_empty() {
                    return Err(AnnotateError::NoteRequired);
                }
                next.resolution = Some(resolution.clone());
                next.stage = Stage::Resolved;
            }
        }
        Ok(next)
    }

    fn record(&mut self, review_id: &str, kind: EventKind) -> Result<&AnnotationTask, AnnotateError> {
        let event = Event {
            seq: self.last_seq + 1,
            review_id: review_id.to_string(),
            kind,
        };
        let task = self.transition(&event)?;
        if let Some(dir) = &self.dir {
            let path = dir.join(EVENTS_FILE);
            let append = || -> std::io::Result<()> {
                let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
                let mut line = serde_json::to_vec(&event)?;
                line.push(b'\n');
                f.write_all(&line)?;
                f.sync_data()
            };
            append().map_err(|e| AnnotateError::Log {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        self.last_seq = event.seq;
        self.events.push(event);
        self.tasks.insert(review_id.to_string(), task);
        Ok(&self.tasks[review_id])
    }

    pub fn enqueue(&mut self, review: Review) -> Result<&AnnotationTask, AnnotateError> {
        let id = review.id.clone();
        self.record(&id, EventKind::Enqueued { review })
    }

    /// Queues every review whose id is new; returns how many were added.
    pub fn enqueue_all(&mut self, reviews: impl IntoIterator<Item = Review>) -> Result<usize, AnnotateError> {
        let mut added = 0;
        for r in reviews {
            if !self.tasks.contains_key(&r.id) {
                self.enqueue(r)?;
                added += 1;
            }
        }
        Ok(added)
    }

    /// A labeler gives the first label; a validator gives the second, which
    /// validates or conflicts depending on the violation flag. Resolvers use
    /// [`AnnotationStore::resolve_conflict`].
    pub fn submit_label(&mut self, review_id: &str, label: Label, role: Role) -> Result<&AnnotationTask, AnnotateError> {
        if label.annotator.trim().is_empty() {
            return Err(AnnotateError::EmptyAnnotator);
        }
        let task = self
            .tasks
            .get(review_id)
            .ok_or_else(|| AnnotateError::UnknownReview(review_id.to_string()))?;
        let kind = match role {
            Role::Labeler => EventKind::Labeled { label },
            Role::Validator => {
                let agrees = task.first_label.as_ref().map(|f| f.violation == label.violation);
                match agrees {
                    Some(false) => EventKind::Conflicted { label },
                    _ => EventKind::Validated { label },
                }
            }
            Role::Resolver => {
                return Err(AnnotateError::Stage {
                    review_id: review_id.to_string(),
                    stage: task.stage,
                    action: "labeling as resolver",
                })
            }
        };
        self.record(review_id, kind)
    }

    pub fn resolve_conflict(
        &mut self,
        review_id: &str,
        violation: bool,
        categories: Vec<ViolationCategory>,
        note: &str,
        resolver: Option<&str>,
    ) -> Result<&AnnotationTask, AnnotateError> {
        let resolution = Resolution {
            violation,
            categories,
            note: note.to_string(),
            resolver: resolver.map(str::to_string),
        };
        self.record(review_id, EventKind::Resolved { resolution })
    }

    fn eligible(&self, task: &AnnotationTask, annotator: &str, role: Role) -> bool {
        match role {
            Role::Labeler => task.stage == Stage::Unlabeled,
            Role::Validator => {
                task.stage == Stage::Labeled && task.first_label.as_ref().is_some_and(|l| l.annotator != annotator)
            }
            Role::Resolver => task.stage == Stage::Conflict,
        }
    }

    /// Next task for `annotator` acting as `role`. FIFO takes the oldest
    /// eligible task; UNCERTAINTY the one whose score is closest to 0.5,
    /// ties by review id, with unscored tasks after all scored ones.
    pub fn next_task(&self, policy: &QueuePolicy<'_>, annotator: &str, role: Role) -> Option<&AnnotationTask> {
        let mut eligible = self.tasks.values().filter(|t| self.eligible(t, annotator, role));
        match (policy.strategy, policy.scorer) {
            (Strategy::Uncertainty, Some(scorer)) => {
                let mut best: Option<(f64, &AnnotationTask)> = None;
                let mut first_unscored = None;
                for t in eligible {
                    match scorer.score(t).filter(|p| p.is_finite()) {
                        Some(p) => {
                            let d = (p - 0.5).abs();
                            let better = match best {
                                None => true,
                                Some((bd, bt)) => d < bd || (d == bd && t.review_id < bt.review_id),
                            };
                            if better {
                                best = Some((d, t));
                            }
                        }
                        None => {
                            first_unscored.get_or_insert(t);
                        }
                    }
                }
                best.map(|(_, t)| t).or(first_unscored)
            }
            _ => eligible.next(),
        }
    }

    pub fn agreement_stats(&self) -> AgreementStats {
        let count = |s: Stage| self.tasks.values().filter(|t| t.stage == s).count();
        let (v, c, r) = (count(Stage::Validated), count(Stage::Conflict), count(Stage::Resolved));
        let judged = v + c + r;
        AgreementStats {
            n_tasks: self.tasks.len(),
            n_unlabeled: count(Stage::Unlabeled),
            n_labeled: count(Stage::Labeled),
            n_validated: v,
            n_conflict: c,
            n_resolved: r,
            n_category_disagreements: self.tasks.values().filter(|t| t.category_disagreement).count(),
            raw_agreement_rate: (judged > 0).then(|| v as f64 / judged as f64),
        }
    }

    /// VALIDATED and RESOLVED tasks as training examples, in queue order.
    /// Agreed violations carry the union of both analysts' categories;
    /// resolved tasks carry the resolution, never the original labels.
    pub fn export_labels(&self) -> Vec<LabeledExample> {
        self.tasks
            .values()
            .filter_map(|t| {
                let (violation, categories) = t.final_label()?;
                Some(LabeledExample {
                    review: t.review.clone(),
                    label: u8::from(violation),
                    categories,
                })
            })
            .collect()
    }

    /// Writes the current state to `snapshot.json` (via a temporary file
    /// and rename). No-op for in-memory stores.
    pub fn snapshot(&self) -> Result<(), AnnotateError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(SNAPSHOT_FILE);
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(&tmp)?);
            let snap = Snapshot {
                format: SNAPSHOT_FORMAT.to_string(),
                last_seq: self.last_seq,
                tasks: self.tasks.values().cloned().collect(),
            };
            serde_json::to_writer(&mut w, &snap)?;
            w.flush()?;
            w.get_ref().sync_all()?;
            drop(w);
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| AnnotateError::Log {
            path,
            message: e.to_string(),
        })
    }
}
