//! Cross-validation, grid search, metrics and the random baseline.
//!
//! Metrics are computed once from the confusion matrix pooled over all
//! held-out folds; per-fold metrics are kept alongside for inspection.

mod report;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::{Classifier, Dataset, Family, HyperValue, Learner, ModelError, ModelSpec};

pub use report::{render_report, EvalReport, ModelEvaluation, ReportFormat, CSV_COLUMNS, REPORT_FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("fold count {k} must be at least 2")]
    TooFewFolds { k: usize },
    #[error("fold count {k} exceeds dataset size {n}")]
    TooManyFolds { k: usize, n: usize },
    #[error("fold plan covers {plan} rows but the dataset has {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("confusion matrix has a negative or non-finite entry")]
    InvalidConfusion,
    #[error("total count must be positive")]
    EmptyPopulation,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("every grid point failed; first failure: {first}")]
    AllGridPointsFailed { first: String },
    #[error("grid file: {0}")]
    GridFile(String),
    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),
}

/// Assignment of dataset rows to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Fold index per dataset row.
    pub folds: Vec<usize>,
    /// Review id per dataset row.
    pub ids: Vec<String>,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }

    /// Review id to fold index.
    pub fn assignments(&self) -> BTreeMap<&str, usize> {
        self.ids.iter().map(String::as_str).zip(self.folds.iter().copied()).collect()
    }
}

/// Seeded shuffle then round-robin. With stratification each class is
/// shuffled separately and the classes are dealt one after the other, so
/// both the per-class and the overall fold sizes differ by at most one.
pub fn assign_folds(labels: &[u8], k: usize, seed: u64, stratified: bool) -> Result<Vec<usize>, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds { k });
    }
    if k > labels.len() {
        return Err(EvalError::TooManyFolds { k, n: labels.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = if stratified {
        let mut out = Vec::with_capacity(labels.len());
        for class in [0u8, 1] {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            out.extend(members);
        }
        out
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut folds = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

pub fn make_folds(data: &Dataset, k: usize, seed: u64, stratified: bool) -> Result<FoldPlan, EvalError> {
    Ok(FoldPlan {
        k,
        seed,
        stratified,
        folds: assign_folds(data.y(), k, seed, stratified)?,
        ids: data.ids().to_vec(),
    })
}

/// Counts, or fractions of a total when normalized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl ConfusionMatrix {
    pub fn new(tp: f64, tn: f64, fp: f64, fn_: f64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => cm.tp += 1.0,
                (0, 0) => cm.tn += 1.0,
                (0, _) => cm.fp += 1.0,
                _ => cm.fn_ += 1.0,
            }
        }
        cm
    }

    pub fn total(&self) -> f64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn normalized(&self) -> ConfusionMatrix {
        let t = self.total();
        if t == 0.0 {
            return *self;
        }
        ConfusionMatrix::new(self.tp / t, self.tn / t, self.fp / t, self.fn_ / t)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Metrics whose denominator was zero and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        undefined.push(name.to_string());
        0.0
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let entries = [cm.tp, cm.tn, cm.fp, cm.fn_];
    if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(EvalError::InvalidConfusion);
    }
    let total = cm.total();
    if total <= 0.0 {
        return Err(EvalError::EmptyConfusion);
    }
    let mut undefined = Vec::new();
    let accuracy = (cm.tp + cm.tn) / total;
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut undefined);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut undefined);
    let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut undefined);
    let den = ((cm.tp + cm.fp) * (cm.tp + cm.fn_) * (cm.tn + cm.fp) * (cm.tn + cm.fn_)).sqrt();
    let mcc = ratio(cm.tp * cm.tn - cm.fp * cm.fn_, den, "mcc", &mut undefined).clamp(-1.0, 1.0);
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        mcc,
        undefined,
    })
}

/// A classifier that labels each review positive with probability one half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Baseline {
    /// Each value rounded to `places` decimals, as a published table shows it.
    pub fn rounded(&self, places: i32) -> Baseline {
        let r = |v: f64| {
            let s = 10f64.powi(places);
            (v * s).round() / s
        };
        Baseline {
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
        }
    }
}

pub fn baseline_random(n_violations: u64, n_total: u64) -> Result<Baseline, EvalError> {
    if n_total == 0 {
        return Err(EvalError::EmptyPopulation);
    }
    let precision = n_violations as f64 / n_total as f64;
    let recall = 0.5;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Baseline { precision, recall, f1 })
}

/// Model metric divided by baseline metric. A zero baseline component gives
/// an infinite ratio, listed in `infinite` and serialized as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    #[serde(with = "maybe_infinite")]
    pub precision: f64,
    #[serde(with = "maybe_infinite")]
    pub recall: f64,
    #[serde(with = "maybe_infinite")]
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub infinite: Vec<String>,
}

mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn improvement(precision: f64, recall: f64, f1: f64, baseline: &Baseline) -> Improvement {
    let mut infinite = Vec::new();
    let mut div = |m: f64, b: f64, name: &str| {
        if b > 0.0 {
            m / b
        } else {
            infinite.push(name.to_string());
            f64::INFINITY
        }
    };
    let precision = div(precision, baseline.precision, "precision");
    let recall = div(recall, baseline.recall, "recall");
    let f1 = div(f1, baseline.f1, "f1");
    Improvement {
        precision,
        recall,
        f1,
        infinite,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub folds: Vec<FoldResult>,
    /// Held-out prediction per dataset row.
    pub predictions: Vec<u8>,
}

/// Trains one model per fold on the other folds and pools the held-out
/// predictions. Folds run in parallel; results do not depend on scheduling.
pub fn cross_validate<L: Learner>(learner: &L, data: &Dataset, plan: &FoldPlan) -> Result<CvResult, EvalError> {
    if plan.folds.len() != data.len() {
        return Err(EvalError::PlanMismatch {
            plan: plan.folds.len(),
            data: data.len(),
        });
    }
    let per_fold: Vec<Result<(Vec<usize>, Vec<u8>), EvalError>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let test = plan.test_indices(fold);
            let train = data.subset(&plan.train_indices(fold));
            let model = learner.fit(&train).map_err(|source| EvalError::Fold { fold, source })?;
            let (x, _) = data.rows(&test);
            let pred = model
                .predict_batch(x.view())
                .map_err(|source| EvalError::Fold { fold, source })?;
            Ok((test, pred))
        })
        .collect();
    let mut predictions = vec![0u8; data.len()];
    let mut folds = Vec::with_capacity(plan.k);
    let mut pooled = ConfusionMatrix::default();
    for (fold, outcome) in per_fold.into_iter().enumerate() {
        let (test, pred) = outcome?;
        let truth: Vec<u8> = test.iter().map(|&i| data.y()[i]).collect();
        let confusion = ConfusionMatrix::from_predictions(&truth, &pred);
        for (&i, &p) in test.iter().zip(&pred) {
            predictions[i] = p;
        }
        pooled.add(&confusion);
        folds.push(FoldResult {
            fold,
            n_test: test.len(),
            metrics: metrics_from_confusion(&confusion)?,
            confusion,
        });
    }
    Ok(CvResult {
        metrics: metrics_from_confusion(&pooled)?,
        confusion: pooled,
        folds,
        predictions,
    })
}

/// Hyperparameter lattice for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub family: Family,
    pub axes: BTreeMap<String, Vec<HyperValue>>,
}

impl Grid {
    /// Every combination of axis values, in key order.
    pub fn points(&self, seed: u64) -> Vec<ModelSpec> {
        let mut specs = vec![ModelSpec::new(self.family, seed)];
        for (key, values) in &self.axes {
            specs = specs
                .into_iter()
                .flat_map(|s| values.iter().map(move |v| s.clone().with(key, v.clone())))
                .collect();
        }
        specs
    }

    /// Bundled default grids, one table per family code.
    pub fn defaults() -> BTreeMap<Family, Grid> {
        Grid::parse_all(include_str!("../../data/grids.toml")).expect("bundled grids parse")
    }

    pub fn parse_all(text: &str) -> Result<BTreeMap<Family, Grid>, EvalError> {
        let table: BTreeMap<String, BTreeMap<String, Vec<HyperValue>>> =
            toml::from_str(text).map_err(|e| EvalError::GridFile(e.to_string()))?;
        table
            .into_iter()
            .map(|(name, axes)| {
                let family: Family = name.parse().map_err(EvalError::GridFile)?;
                let grid = Grid { family, axes };
                for spec in grid.points(0) {
                    spec.validate().map_err(|e| EvalError::GridFile(e.to_string()))?;
                }
                Ok((family, grid))
            })
            .collect()
    }

    pub fn load_all(path: &Path) -> Result<BTreeMap<Family, Grid>, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::GridFile(format!("{}: {e}", path.display())))?;
        Grid::parse_all(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparameters: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: ModelSpec,
    pub result: CvResult,
    pub points: Vec<GridPoint>,
}

/// Cross-validates every point; the best has the highest pooled F1, then
/// the highest MCC, then the smallest hyperparameter encoding. Failed points
/// are logged and recorded.
pub fn grid_search(points: &[ModelSpec], data: &Dataset, plan: &FoldPlan) -> Result<GridOutcome, EvalError> {
    if points.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let results: Vec<Result<CvResult, EvalError>> =
        points.par_iter().map(|spec| cross_validate(spec, data, plan)).collect();
    let mut best: Option<(usize, &CvResult)> = None;
    let mut records = Vec::with_capacity(points.len());
    for (i, (spec, r)) in points.iter().zip(&results).enumerate() {
        let encoding = spec.encode_hyperparameters();
        match r {
            Ok(cv) => {
                records.push(GridPoint {
                    hyperparameters: encoding,
                    metrics: Some(cv.metrics.clone()),
                    error: None,
                });
                let better = match best {
                    None => true,
                    Some((j, b)) => ranks_above(cv, &records[i].hyperparameters, b, &points[j].encode_hyperparameters()),
                };
                if better {
                    best = Some((i, cv));
                }
            }
            Err(e) => {
                log::warn!("grid point [{encoding}] failed: {e}");
                records.push(GridPoint {
                    hyperparameters: encoding,
                    metrics: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some((i, cv)) => Ok(GridOutcome {
            best: points[i].clone(),
            result: cv.clone(),
            points: records,
        }),
        None => Err(EvalError::AllGridPointsFailed {
            first: records[0].error.clone().unwrap_or_default(),
        }),
    }
}

fn ranks_above(a: &CvResult, a_enc: &str, b: &CvResult, b_enc: &str) -> bool {
    use std::cmp::Ordering;
    match a.metrics.f1.total_cmp(&b.metrics.f1) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.metrics.mcc.total_cmp(&b.metrics.mcc) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a_enc < b_enc,
        },
    }
}
