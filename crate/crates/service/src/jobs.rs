//! Background jobs. Each job gets one worker thread and a record persisted
//! as `<data_dir>/jobs/<job_id>.json`; artifacts go under the data
//! directory and are never rewritten once the job is DONE.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use hvd_core::corpus::{self, Review};
use hvd_core::eval::{Grid, EvalReport};
use hvd_core::features::TokenCache;
use hvd_core::models::{Family, HyperValue, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Envelope, ServiceError};
use crate::pipeline::{self, DataSource, EvaluateOptions, LabeledVector, LoadedModel, Resources};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobKind {
    Embed,
    Train,
    GridSearch,
    Evaluate,
    ClassifyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    /// PENDING -> RUNNING -> DONE | FAILED.
    pub fn may_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Pending, JobStatus::Running) | (JobStatus::Running, JobStatus::Done | JobStatus::Failed)
        )
    }

    pub fn is_final(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    /// Paths relative to the data directory.
    pub artifact_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Envelope>,
    pub request: JobRequest,
}

/// Body of `POST /jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum JobRequest {
    /// Embeds a review (or labeled review) JSONL file into vectors.
    Embed { input: PathBuf },
    Train {
        family: Family,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<DataSource>,
        #[serde(default)]
        hyperparameters: BTreeMap<String, HyperValue>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        /// Serve the trained model from `/classify` once done.
        #[serde(default)]
        activate: bool,
    },
    GridSearch {
        family: Family,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<DataSource>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        folds: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Evaluate {
        /// All families when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        families: Option<Vec<Family>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<DataSource>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        folds: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        tune: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        population: Option<(u64, u64)>,
    },
    ClassifyBatch {
        input: PathBuf,
        /// The served model when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<PathBuf>,
    },
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::Embed { .. } => JobKind::Embed,
            JobRequest::Train { .. } => JobKind::Train,
            JobRequest::GridSearch { .. } => JobKind::GridSearch,
            JobRequest::Evaluate { .. } => JobKind::Evaluate,
            JobRequest::ClassifyBatch { .. } => JobKind::ClassifyBatch,
        }
    }
}

/// What a job needs from the server besides its request.
#[derive(Clone)]
pub struct JobContext {
    pub resources: Resources,
    pub grids: BTreeMap<Family, Grid>,
    pub data_dir: PathBuf,
    pub default_data: Option<PathBuf>,
    pub seed: u64,
    pub folds: usize,
    pub served_model: Option<PathBuf>,
}

impl JobContext {
    fn data(&self, requested: &Option<DataSource>, seed: u64) -> DataSource {
        requested.clone().unwrap_or_else(|| match &self.default_data {
            Some(path) => DataSource::Labeled { path: path.clone() },
            None => DataSource::Synthetic { seed },
        })
    }
}

/// Side effects a finished job asks the server to apply.
#[derive(Debug, Default)]
pub struct JobOutput {
    pub artifact_refs: Vec<String>,
    pub activate_model: Option<PathBuf>,
}

/// Job records, kept in memory and mirrored to disk.
pub struct JobRegistry {
    dir: PathBuf,
    records: Mutex<BTreeMap<String, JobRecord>>,
}

impl JobRegistry {
    /// Loads the records under `data_dir/jobs`. Jobs left unfinished by a
    /// previous process are marked FAILED.
    pub fn open(data_dir: &Path) -> Result<JobRegistry, ServiceError> {
        let dir = data_dir.join("jobs");
        std::fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, &e))?;
        let mut records = BTreeMap::new();
        let entries = std::fs::read_dir(&dir).map_err(|e| ServiceError::io(&dir, &e))?;
        for entry in entries {
            let path = entry.map_err(|e| ServiceError::io(&dir, &e))?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| ServiceError::io(&path, &e))?;
            let mut record: JobRecord = serde_json::from_str(&text)
                .map_err(|e| ServiceError::bad_input("invalid_file", format!("{}: {e}", path.display())))?;
            if !record.status.is_final() {
                record.status = JobStatus::Failed;
                record.error = Some(ServiceError::internal("interrupted by a server restart").envelope());
                write_record(&dir, &record)?;
            }
            records.insert(record.job_id.clone(), record);
        }
        Ok(JobRegistry {
            dir,
            records: Mutex::new(records),
        })
    }

    pub fn get(&self, job_id: &str) -> Option<JobRecord> {
        self.records.lock().expect("job registry").get(job_id).cloned()
    }

    pub fn list(&self) -> Vec<JobRecord> {
        self.records.lock().expect("job registry").values().cloned().collect()
    }

    /// Registers a PENDING job; ids are `job-000001`, `job-000002`, ...
    pub fn create(&self, request: JobRequest) -> Result<JobRecord, ServiceError> {
        let mut records = self.records.lock().expect("job registry");
        let job_id = format!("job-{:06}", records.len() + 1);
        let record = JobRecord {
            job_id: job_id.clone(),
            kind: request.kind(),
            status: JobStatus::Pending,
            progress: 0.0,
            artifact_refs: Vec::new(),
            error: None,
            request,
        };
        write_record(&self.dir, &record)?;
        records.insert(job_id, record.clone());
        Ok(record)
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut JobRecord)) {
        let mut records = self.records.lock().expect("job registry");
        let Some(record) = records.get_mut(job_id) else {
            return;
        };
        let before = record.status;
        let mut next = record.clone();
        f(&mut next);
        if next.status != before && !before.may_become(next.status) {
            log::error!("job {job_id}: refusing transition {before:?} -> {:?}", next.status);
            return;
        }
        if before.is_final() {
            return;
        }
        if let Err(e) = write_record(&self.dir, &next) {
            log::error!("job {job_id}: cannot persist record: {e}");
        }
        *record = next;
    }

    pub fn set_progress(&self, job_id: &str, progress: f64) {
        self.update(job_id, |r| r.progress = progress.clamp(r.progress, 1.0));
    }

    /// Runs a job to completion on the calling thread.
    pub fn run(&self, job_id: &str, ctx: &JobContext) -> Option<JobOutput> {
        let request = self.get(job_id)?.request;
        self.update(job_id, |r| r.status = JobStatus::Running);
        let outcome = execute(&request, job_id, ctx, |p| self.set_progress(job_id, p));
        match outcome {
            Ok(output) => {
                let refs = output.artifact_refs.clone();
                self.update(job_id, |r| {
                    r.status = JobStatus::Done;
                    r.progress = 1.0;
                    r.artifact_refs = refs;
                });
                Some(output)
            }
            Err(e) => {
                log::warn!("job {job_id} failed: {e}");
                self.update(job_id, |r| {
                    r.status = JobStatus::Failed;
                    r.error = Some(e.envelope());
                });
                None
            }
        }
    }

    /// Starts `job_id` on a blocking worker; `on_done` sees the output of a
    /// successful run.
    pub fn spawn(
        self: &Arc<Self>,
        job_id: String,
        ctx: JobContext,
        on_done: impl FnOnce(JobOutput) + Send + 'static,
    ) -> tokio::task::JoinHandle<()> {
        let registry = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            if let Some(output) = registry.run(&job_id, &ctx) {
                on_done(output);
            }
        })
    }
}

fn write_record(dir: &Path, record: &JobRecord) -> Result<(), ServiceError> {
    let path = dir.join(format!("{}.json", record.job_id));
    let text = serde_json::to_string_pretty(record).map_err(|e| ServiceError::internal(e.to_string()))?;
    write_atomic(&path, text.as_bytes())
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, &e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| ServiceError::io(&tmp, &e))?;
    std::fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, &e))
}

/// Directory (relative to the data dir) holding evaluation reports.
pub const REPORTS_DIR: &str = "reports";

fn execute(
    request: &JobRequest,
    job_id: &str,
    ctx: &JobContext,
    progress: impl FnMut(f64),
) -> Result<JobOutput, ServiceError> {
    let res = &ctx.resources;
    let artifact = |dir: &str, ext: &str| {
        let rel = format!("{dir}/{job_id}.{ext}");
        (ctx.data_dir.join(&rel), rel)
    };
    match request {
        JobRequest::Embed { input } => {
            let reviews = read_reviews(input)?;
            let vectors = res.embed(&reviews, &mut TokenCache::new())?;
            let labels = labels_if_present(input);
            let rows: Vec<LabeledVector> = vectors
                .into_iter()
                .map(|v| LabeledVector {
                    label: labels.as_ref().and_then(|l| l.get(&v.source_id).copied()),
                    id: v.source_id,
                    vector: v.values,
                })
                .collect();
            let (path, rel) = artifact("vectors", "jsonl");
            let mut bytes = Vec::new();
            pipeline::write_jsonl(&rows, &mut bytes)?;
            write_atomic(&path, &bytes)?;
            Ok(JobOutput {
                artifact_refs: vec![rel],
                activate_model: None,
            })
        }
        JobRequest::Train {
            family,
            data,
            hyperparameters,
            seed,
            activate,
        } => {
            let seed = seed.unwrap_or(ctx.seed);
            let dataset = pipeline::load_dataset(res, &ctx.data(data, seed))?;
            let mut spec = ModelSpec::new(*family, seed);
            spec.hyperparameters = hyperparameters.clone();
            let (path, rel) = artifact("models", "hvdm");
            pipeline::train(&dataset, &spec, &path)?;
            Ok(JobOutput {
                artifact_refs: vec![rel],
                activate_model: activate.then_some(path),
            })
        }
        JobRequest::GridSearch { family, data, folds, seed } => {
            let seed = seed.unwrap_or(ctx.seed);
            let dataset = pipeline::load_dataset(res, &ctx.data(data, seed))?;
            let summary = pipeline::grid_search(&dataset, *family, folds.unwrap_or(ctx.folds), seed, &ctx.grids)?;
            let (path, rel) = artifact("grids", "json");
            write_atomic(&path, &to_json(&summary)?)?;
            Ok(JobOutput {
                artifact_refs: vec![rel],
                activate_model: None,
            })
        }
        JobRequest::Evaluate {
            families,
            data,
            folds,
            seed,
            tune,
            population,
        } => {
            let seed = seed.unwrap_or(ctx.seed);
            let dataset = pipeline::load_dataset(res, &ctx.data(data, seed))?;
            let mut options = EvaluateOptions::new(
                families.clone().unwrap_or_else(|| Family::ALL.to_vec()),
                folds.unwrap_or(ctx.folds),
                seed,
            );
            options.tune = *tune;
            options.population = *population;
            let report: EvalReport = pipeline::evaluate(&dataset, &options, &ctx.grids, progress)?;
            let (path, rel) = artifact(REPORTS_DIR, "json");
            write_atomic(&path, &to_json(&report)?)?;
            Ok(JobOutput {
                artifact_refs: vec![rel],
                activate_model: None,
            })
        }
        JobRequest::ClassifyBatch { input, model } => {
            let model_path = model
                .clone()
                .or_else(|| ctx.served_model.clone())
                .ok_or_else(|| ServiceError::not_found("model_not_found", "no model given and none is served"))?;
            let model = LoadedModel::load(&model_path)?;
            let reviews = read_reviews(input)?;
            let results = pipeline::classify(res, &model, &reviews)?;
            let (path, rel) = artifact("classifications", "jsonl");
            let mut bytes = Vec::new();
            pipeline::write_jsonl(&results, &mut bytes)?;
            write_atomic(&path, &bytes)?;
            Ok(JobOutput {
                artifact_refs: vec![rel],
                activate_model: None,
            })
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, ServiceError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| ServiceError::internal(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Reviews of a review or labeled-review JSONL file; invalid lines fail
/// the whole read.
pub fn read_reviews(path: &Path) -> Result<Vec<Review>, ServiceError> {
    let ingested = corpus::ingest_path(path).map_err(|e| match e {
        corpus::CorpusError::Io(io) => ServiceError::io(path, &io),
        other => other.into(),
    })?;
    if let Some(r) = ingested.rejections.first() {
        return Err(ServiceError::bad_input("invalid_file", format!("{}:{}: {}", path.display(), r.line, r.reason))
            .with_detail("path", path.display().to_string())
            .with_detail("line", r.line));
    }
    Ok(ingested.corpus.into_reviews())
}

fn labels_if_present(path: &Path) -> Option<BTreeMap<String, u8>> {
    let labeled = corpus::read_labeled_path(path).ok()?;
    Some(labeled.into_iter().map(|e| (e.review.id, e.label)).collect())
}
