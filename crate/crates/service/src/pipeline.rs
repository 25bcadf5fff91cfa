//! Pipeline steps shared by the CLI, the HTTP handlers and background jobs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hvd_core::corpus::{self, KeywordDictionary, LabeledExample, Review};
use hvd_core::eval::{self, EvalReport, Grid, GridPoint, ModelEvaluation};
use hvd_core::features::{embed_corpus, EmbeddingProvider, EmbeddingVector, TokenCache};
use hvd_core::models::{self, Dataset, Family, ModelSpec, TrainedModel};
use hvd_core::synth::GaussianClusters;
use hvd_core::textprep::{self, StopWordList, TokenSequence};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::ServiceError;

/// Everything preprocessing and embedding need.
#[derive(Clone)]
pub struct Resources {
    pub provider: Arc<dyn EmbeddingProvider>,
    pub stoplist: StopWordList,
    pub dictionary: KeywordDictionary,
}

impl Resources {
    pub fn from_config(config: &Config) -> Result<Resources, ServiceError> {
        Ok(Resources {
            provider: config.provider()?,
            stoplist: config.stoplist()?,
            dictionary: config.dictionary()?,
        })
    }

    pub fn tokens(&self, review: &Review) -> TokenSequence {
        TokenSequence {
            source_id: review.id.clone(),
            tokens: textprep::preprocess(&review.text, &self.stoplist),
        }
    }

    /// Mean-pooled vectors for `reviews`, in input order.
    pub fn embed(&self, reviews: &[Review], cache: &mut TokenCache) -> Result<Vec<EmbeddingVector>, ServiceError> {
        let sequences: Vec<TokenSequence> = reviews.iter().map(|r| self.tokens(r)).collect();
        Ok(embed_corpus(self.provider.as_ref(), &sequences, cache)?)
    }

    pub fn embed_labeled(&self, examples: &[LabeledExample]) -> Result<Dataset, ServiceError> {
        let reviews: Vec<Review> = examples.iter().map(|e| e.review.clone()).collect();
        let vectors = self.embed(&reviews, &mut TokenCache::new())?;
        let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
        Ok(Dataset::from_embeddings(&vectors, &labels)?.with_provider(self.provider.fingerprint()))
    }
}

/// One line of a vector file: an embedded review and, for training data,
/// its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub vector: Vec<f64>,
}

pub fn read_vectors(path: &Path) -> Result<Vec<LabeledVector>, ServiceError> {
    read_jsonl(path)
}

pub fn write_jsonl<T: Serialize>(items: &[T], out: &mut (impl Write + ?Sized)) -> Result<(), ServiceError> {
    for item in items {
        serde_json::to_writer(&mut *out, item).map_err(|e| ServiceError::internal(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a JSONL file; the first bad line is reported with its number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let file = File::open(path).map_err(|e| ServiceError::io(path, &e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ServiceError::io(path, &e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            ServiceError::bad_input("invalid_file", format!("{}:{}: {e}", path.display(), i + 1))
                .with_detail("path", path.display().to_string())
                .with_detail("line", i + 1)
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Where training or evaluation data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Two seeded Gaussian clusters of 800 width-768 vectors.
    Synthetic { seed: u64 },
    /// Labeled review JSONL, embedded with the configured provider.
    Labeled { path: PathBuf },
    /// Precomputed [`LabeledVector`] JSONL.
    Vectors { path: PathBuf },
}

impl DataSource {
    /// The configured labeled file if there is one, else synthetic data.
    pub fn default_for(config: &Config, seed: u64) -> DataSource {
        match &config.data.labeled {
            Some(path) => DataSource::Labeled { path: path.clone() },
            None => DataSource::Synthetic { seed },
        }
    }
}

pub fn load_dataset(res: &Resources, source: &DataSource) -> Result<Dataset, ServiceError> {
    match source {
        DataSource::Synthetic { seed } => Ok(GaussianClusters {
            seed: *seed,
            ..GaussianClusters::default()
        }
        .generate()),
        DataSource::Labeled { path } => res.embed_labeled(&corpus::read_labeled_path(path)?),
        DataSource::Vectors { path } => dataset_from_vectors(&read_vectors(path)?, path),
    }
}

fn dataset_from_vectors(rows: &[LabeledVector], path: &Path) -> Result<Dataset, ServiceError> {
    let width = rows.first().map_or(0, |r| r.vector.len());
    let mut flat = Vec::with_capacity(rows.len() * width);
    let mut labels = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let bad = |reason: String| {
            ServiceError::bad_input("invalid_file", format!("{}:{}: {reason}", path.display(), i + 1))
                .with_detail("path", path.display().to_string())
                .with_detail("line", i + 1)
        };
        if r.vector.len() != width {
            return Err(bad(format!("width {} differs from {width}", r.vector.len())));
        }
        labels.push(r.label.ok_or_else(|| bad(format!("{} has no label", r.id)))?);
        flat.extend_from_slice(&r.vector);
    }
    let x = Array2::from_shape_vec((rows.len(), width), flat).expect("rows checked");
    Ok(Dataset::new(x, labels, rows.iter().map(|r| r.id.clone()).collect())?)
}

/// Settings for a cross-validated comparison of model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    pub families: Vec<Family>,
    pub folds: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub stratified: bool,
    /// Grid-search each family instead of using its default spec.
    #[serde(default)]
    pub tune: bool,
    /// `(violations, total)` of the population the random baseline draws
    /// from; defaults to the evaluated dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<(u64, u64)>,
}

fn yes() -> bool {
    true
}

impl EvaluateOptions {
    pub fn new(families: Vec<Family>, folds: usize, seed: u64) -> Self {
        EvaluateOptions {
            families,
            folds,
            seed,
            stratified: true,
            tune: false,
            population: None,
        }
    }
}

/// Cross-validates each family on `data` (tuning it first if asked) and
/// assembles the comparison report with the random baseline.
pub fn evaluate(
    data: &Dataset,
    options: &EvaluateOptions,
    grids: &BTreeMap<Family, Grid>,
    mut progress: impl FnMut(f64),
) -> Result<EvalReport, ServiceError> {
    let plan = eval::make_folds(data, options.folds, options.seed, options.stratified)?;
    let (_, n_violations) = data.class_counts();
    let mut report = EvalReport::new(options.folds, options.seed, options.stratified, data.len(), n_violations);
    for (i, &family) in options.families.iter().enumerate() {
        let (spec, cv) = if options.tune {
            let outcome = eval::grid_search(&grid_points(grids, family, options.seed), data, &plan)?;
            (outcome.best, outcome.result)
        } else {
            let spec = ModelSpec::new(family, options.seed);
            let cv = eval::cross_validate(&spec, data, &plan)?;
            (spec, cv)
        };
        report.push(ModelEvaluation::from_cv(family.short_name(), Some(spec), &cv));
        progress((i + 1) as f64 / options.families.len() as f64);
    }
    let (viol, total) = options.population.unwrap_or((n_violations as u64, data.len() as u64));
    report.set_baseline(eval::baseline_random(viol, total)?);
    Ok(report)
}

fn grid_points(grids: &BTreeMap<Family, Grid>, family: Family, seed: u64) -> Vec<ModelSpec> {
    match grids.get(&family) {
        Some(g) => g.points(seed),
        None => vec![ModelSpec::new(family, seed)],
    }
}

/// Result of a grid search over one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSummary {
    pub family: Family,
    pub folds: usize,
    pub seed: u64,
    pub best: ModelSpec,
    pub metrics: eval::Metrics,
    pub points: Vec<GridPoint>,
}

pub fn grid_search(
    data: &Dataset,
    family: Family,
    folds: usize,
    seed: u64,
    grids: &BTreeMap<Family, Grid>,
) -> Result<GridSearchSummary, ServiceError> {
    let plan = eval::make_folds(data, folds, seed, true)?;
    let outcome = eval::grid_search(&grid_points(grids, family, seed), data, &plan)?;
    Ok(GridSearchSummary {
        family,
        folds,
        seed,
        best: outcome.best,
        metrics: outcome.result.metrics,
        points: outcome.points,
    })
}

/// Trains `spec` on all of `data` and writes the artifact to `out`.
pub fn train(data: &Dataset, spec: &ModelSpec, out: &Path) -> Result<TrainSummary, ServiceError> {
    let model = models::train(spec, data)?;
    let mut bytes = Vec::new();
    models::save_model(&model, &mut bytes)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, &e))?;
    }
    std::fs::write(out, &bytes).map_err(|e| ServiceError::io(out, &e))?;
    Ok(TrainSummary {
        model_ref: model_ref(&model, &bytes),
        path: out.to_path_buf(),
        spec: model.spec.clone(),
        n_examples: data.len(),
        final_loss: model.training_log.last().copied().filter(|l| l.is_finite()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model_ref: String,
    pub path: PathBuf,
    pub spec: ModelSpec,
    pub n_examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

/// A loaded artifact and the reference that identifies it in results.
#[derive(Debug)]
pub struct LoadedModel {
    pub model: TrainedModel,
    pub model_ref: String,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<LoadedModel, ServiceError> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ServiceError::not_found("model_not_found", format!("{}: {e}", path.display()))
                    .with_detail("path", path.display().to_string())
            } else {
                ServiceError::io(path, &e)
            }
        })?;
        let model = models::load_model(&mut bytes.as_slice())
            .map_err(|e| ServiceError::from(e).with_detail("path", path.display().to_string()))?;
        let model_ref = model_ref(&model, &bytes);
        Ok(LoadedModel { model, model_ref })
    }
}

/// `<FAMILY>@<first 12 hex digits of the artifact's SHA-256>`.
fn model_ref(model: &TrainedModel, bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{}@{hex}", model.spec.family.code())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResult {
    pub review_id: String,
    pub probability: f64,
    pub label: u8,
    pub model_ref: String,
    /// Reserved; always empty.
    pub categories_hint: Vec<String>,
}

/// Scores `reviews` in order.
pub fn classify(res: &Resources, model: &LoadedModel, reviews: &[Review]) -> Result<Vec<ClassifyResult>, ServiceError> {
    if reviews.is_empty() {
        return Ok(Vec::new());
    }
    model.model.check_provider(&res.provider.fingerprint());
    let vectors = res.embed(reviews, &mut TokenCache::new())?;
    let width = res.provider.width();
    let flat: Vec<f64> = vectors.iter().flat_map(|v| v.values.iter().copied()).collect();
    let x = Array2::from_shape_vec((vectors.len(), width), flat).expect("provider width");
    let probs = model.model.predict_proba_batch(x.view())?;
    Ok(reviews
        .iter()
        .zip(probs)
        .map(|(r, p)| ClassifyResult {
            review_id: r.id.clone(),
            probability: p.clamp(0.0, 1.0),
            label: model.model.label(p),
            model_ref: model.model_ref.clone(),
            categories_hint: Vec::new(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hvd_core::features::HashingProvider;

    fn resources() -> Resources {
        Resources {
            provider: Arc::new(HashingProvider::new(16, 3)),
            stoplist: StopWordList::bundled(),
            dictionary: KeywordDictionary::bundled(),
        }
    }

    #[test]
    fn vectors_need_labels_and_one_width() {
        let p = Path::new("v.jsonl");
        let row = |id: &str, label, vector| LabeledVector {
            id: id.into(),
            label,
            vector,
        };
        let ok = dataset_from_vectors(&[row("a", Some(1), vec![1.0, 2.0]), row("b", Some(0), vec![0.0, 0.0])], p).unwrap();
        assert_eq!((ok.len(), ok.width()), (2, 2));
        let e = dataset_from_vectors(&[row("a", Some(1), vec![1.0]), row("b", None, vec![0.0])], p).unwrap_err();
        assert_eq!(e.detail["line"], 2);
        assert!(dataset_from_vectors(&[row("a", Some(1), vec![1.0]), row("b", Some(0), vec![0.0, 1.0])], p).is_err());
    }

    #[test]
    fn labeled_examples_embed_at_provider_width() {
        let ex = |id: &str, label, text: &str| LabeledExample {
            review: Review::new(id, "app", text),
            label,
            categories: vec![],
        };
        let data = resources()
            .embed_labeled(&[ex("1", 1, "what a scam"), ex("2", 0, "lovely app")])
            .unwrap();
        assert_eq!((data.len(), data.width(), data.y()), (2, 16, &[1u8, 0][..]));
    }

    #[test]
    fn model_ref_names_family_and_digest() {
        let data = GaussianClusters {
            n: 40,
            width: 4,
            ..GaussianClusters::default()
        }
        .generate();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/lr.hvdm");
        let summary = train(&data, &ModelSpec::new(Family::Lr, 1), &path).unwrap();
        let loaded = LoadedModel::load(&path).unwrap();
        assert_eq!(summary.model_ref, loaded.model_ref);
        assert!(loaded.model_ref.starts_with("LR@") && loaded.model_ref.len() == 15);
        let missing = LoadedModel::load(&dir.path().join("nope")).unwrap_err();
        assert_eq!((missing.status(), missing.code.as_str()), (404, "model_not_found"));
    }
}
