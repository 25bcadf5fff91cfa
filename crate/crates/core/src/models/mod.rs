//! Seven classifier families behind one train/predict contract.
//!
//! All gradient-based training is implemented here directly on `ndarray`:
//! [`linear`] holds LR and the SVM, [`mlp`] the networks shared by NN, DNN
//! and GAN, [`tree`] the CART builder used by the forest and GBT in
//! [`ensemble`], and [`gan`] the semi-supervised GAN. Trained models are
//! persisted with [`artifact`].

pub mod artifact;
pub mod ensemble;
pub mod gan;
pub mod linear;
pub mod mlp;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{EmbeddingVector, ProviderFingerprint};
use ensemble::{Boosted, Forest};
use gan::Gan;
use linear::{LinearModel, PlattLink};
use mlp::{Activation, Mlp};

pub use artifact::{load_model, load_model_path, save_model, save_model_path, ArtifactError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Lr,
    Svm,
    #[serde(alias = "RF")]
    TreeEnsemble,
    Gbt,
    Nn,
    Dnn,
    Gan,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Lr,
        Family::Svm,
        Family::TreeEnsemble,
        Family::Gbt,
        Family::Nn,
        Family::Dnn,
        Family::Gan,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Family::Lr => "LR",
            Family::Svm => "SVM",
            Family::TreeEnsemble => "TREE_ENSEMBLE",
            Family::Gbt => "GBT",
            Family::Nn => "NN",
            Family::Dnn => "DNN",
            Family::Gan => "GAN",
        }
    }

    /// Column label used in reports.
    pub fn short_name(self) -> &'static str {
        match self {
            Family::TreeEnsemble => "RF",
            other => other.code(),
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Family::Lr => &["learning_rate", "l2", "epochs", "batch_size", "momentum"],
            Family::Svm => &["learning_rate", "l2", "epochs", "batch_size", "momentum"],
            Family::TreeEnsemble => &[
                "forest_size",
                "max_depth",
                "min_samples_split",
                "min_samples_leaf",
                "max_features",
                "bootstrap",
            ],
            Family::Gbt => &["stages", "shrinkage", "max_depth", "min_samples_leaf", "subsample"],
            Family::Nn => &["hidden", "activation", "learning_rate", "momentum", "epochs", "batch_size", "l2"],
            Family::Dnn => &[
                "depth",
                "first_width",
                "shrink",
                "widths",
                "activation",
                "learning_rate",
                "momentum",
                "epochs",
                "batch_size",
                "l2",
            ],
            Family::Gan => &[
                "noise_dim",
                "gen_hidden",
                "disc_hidden",
                "activation",
                "learning_rate",
                "gen_learning_rate",
                "momentum",
                "epochs",
                "batch_size",
                "l2",
                "unlabeled_weight",
            ],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        match upper.as_str() {
            "LR" => Ok(Family::Lr),
            "SVM" => Ok(Family::Svm),
            "TREE_ENSEMBLE" | "RF" | "DT" | "FOREST" => Ok(Family::TreeEnsemble),
            "GBT" => Ok(Family::Gbt),
            "NN" => Ok(Family::Nn),
            "DNN" => Ok(Family::Dnn),
            "GAN" => Ok(Family::Gan),
            _ => Err(format!("unknown model family {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Num(f64),
    Text(String),
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Num(v) => write!(f, "{v}"),
            HyperValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for HyperValue {
    fn from(v: f64) -> Self {
        HyperValue::Num(v)
    }
}

impl From<&str> for HyperValue {
    fn from(v: &str) -> Self {
        HyperValue::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, HyperValue>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        ModelSpec {
            family,
            hyperparameters: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<HyperValue>) -> Self {
        self.hyperparameters.insert(key.to_string(), value.into());
        self
    }

    /// `key=value` pairs joined by `;` in key order; used for tie-breaking
    /// and error messages.
    pub fn encode_hyperparameters(&self) -> String {
        self.hyperparameters
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        Config::from_spec(self).map(|_| ())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has a single class ({label}); both labels are required")]
    SingleClass { label: u8 },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("{family}: invalid hyperparameter {key}: {reason}")]
    InvalidHyperparameter {
        family: Family,
        key: String,
        reason: String,
    },
    #[error("training diverged at epoch {epoch} (loss {loss}) with hyperparameters [{hyperparameters}]")]
    Diverged {
        epoch: usize,
        loss: f64,
        hyperparameters: String,
    },
    #[error("input width {found} does not match model width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Unsupported(String),
}

/// Labeled embedding matrix; rows align with `y` and `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<u8>,
    ids: Vec<String>,
    provider: Option<ProviderFingerprint>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<u8>, ids: Vec<String>) -> Result<Self, ModelError> {
        if x.nrows() != y.len() || y.len() != ids.len() {
            return Err(ModelError::InvalidDataset(format!(
                "{} rows, {} labels, {} ids",
                x.nrows(),
                y.len(),
                ids.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&l| l > 1) {
            return Err(ModelError::InvalidDataset(format!("label {bad} is not 0 or 1")));
        }
        if let Some(row) = x.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(ModelError::InvalidDataset(format!("row {} ({}) has a non-finite entry", row, ids[row])));
        }
        Ok(Dataset {
            x,
            y,
            ids,
            provider: None,
        })
    }

    /// Unlabeled rows get label 0; only the GAN reads them as unlabeled.
    pub fn from_embeddings(vectors: &[EmbeddingVector], labels: &[u8]) -> Result<Self, ModelError> {
        if vectors.len() != labels.len() {
            return Err(ModelError::InvalidDataset(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let width = vectors.first().map_or(0, |v| v.values.len());
        if let Some(v) = vectors.iter().find(|v| v.values.len() != width) {
            return Err(ModelError::InvalidDataset(format!(
                "vector {} has width {}, expected {width}",
                v.source_id,
                v.values.len()
            )));
        }
        let mut x = Array2::zeros((vectors.len(), width));
        for (mut row, v) in x.rows_mut().into_iter().zip(vectors) {
            row.assign(&ArrayView1::from(&v.values[..]));
        }
        let ids = vectors.iter().map(|v| v.source_id.clone()).collect();
        Dataset::new(x, labels.to_vec(), ids)
    }

    pub fn with_provider(mut self, provider: ProviderFingerprint) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn provider(&self) -> Option<&ProviderFingerprint> {
        self.provider.as_ref()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// `(negatives, positives)`
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.y.iter().filter(|&&l| l == 1).count();
        (self.y.len() - pos, pos)
    }

    pub fn rows(&self, idx: &[usize]) -> (Array2<f64>, Vec<u8>) {
        (self.x.select(Axis(0), idx), idx.iter().map(|&i| self.y[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (x, y) = self.rows(idx);
        Dataset {
            x,
            y,
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            provider: self.provider.clone(),
        }
    }
}

/// Shuffled index batches. A batch size of 0 or at least `n` means one
/// full batch in natural order and leaves `rng` untouched.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if batch_size == 0 || batch_size >= n {
        return vec![(0..n).collect()];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Aborts training on a non-finite loss or one above the ceiling.
#[derive(Debug, Clone)]
pub struct DivergenceGuard {
    pub ceiling: f64,
    pub hyperparameters: String,
}

impl DivergenceGuard {
    pub const CEILING: f64 = 1e6;

    pub fn new(spec: &ModelSpec) -> Self {
        DivergenceGuard {
            ceiling: Self::CEILING,
            hyperparameters: spec.encode_hyperparameters(),
        }
    }

    pub fn check(&self, epoch: usize, loss: f64) -> Result<(), ModelError> {
        if loss.is_finite() && loss <= self.ceiling {
            Ok(())
        } else {
            Err(ModelError::Diverged {
                epoch,
                loss,
                hyperparameters: self.hyperparameters.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Config {
    Lr(SgdSettings),
    Svm(SgdSettings),
    Forest(ensemble::ForestParams),
    Gbt(ensemble::GbtParams),
    Nn {
        hidden: usize,
        activation: Activation,
        sgd: SgdSettings,
    },
    Dnn {
        hidden: Vec<usize>,
        activation: Activation,
        sgd: SgdSettings,
    },
    Gan(gan::GanParams),
}

struct Params<'a> {
    spec: &'a ModelSpec,
}

impl Params<'_> {
    fn err(&self, key: &str, reason: impl Into<String>) -> ModelError {
        ModelError::InvalidHyperparameter {
            family: self.spec.family,
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    fn num(&self, key: &str, default: f64) -> Result<f64, ModelError> {
        match self.spec.hyperparameters.get(key) {
            None => Ok(default),
            Some(HyperValue::Num(v)) if v.is_finite() => Ok(*v),
            Some(HyperValue::Num(v)) => Err(self.err(key, format!("{v} is not finite"))),
            Some(HyperValue::Text(s)) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| self.err(key, format!("{s:?} is not a number"))),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ModelError> {
        let v = self.num(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.err(key, format!("{v} must be > 0")))
        }
    }

    fn non_negative(&self, key: &str, default: f64) -> Result<f64, ModelError> {
        let v = self.num(key, default)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.err(key, format!("{v} must be >= 0")))
        }
    }

    fn fraction(&self, key: &str, default: f64) -> Result<f64, ModelError> {
        let v = self.num(key, default)?;
        if (0.0..1.0).contains(&v) {
            Ok(v)
        } else {
            Err(self.err(key, format!("{v} must be in [0, 1)")))
        }
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize, ModelError> {
        let v = self.num(key, default as f64)?;
        if v.fract() != 0.0 || v < min as f64 {
            return Err(self.err(key, format!("{v} must be an integer >= {min}")));
        }
        Ok(v as usize)
    }

    fn activation(&self, key: &str, default: Activation) -> Result<Activation, ModelError> {
        match self.spec.hyperparameters.get(key) {
            None => Ok(default),
            Some(HyperValue::Text(s)) => {
                Activation::parse(s.trim()).ok_or_else(|| self.err(key, format!("unknown activation {s:?}")))
            }
            Some(v) => Err(self.err(key, format!("{v} is not an activation name"))),
        }
    }

    fn sgd(&self, lr: f64, momentum: f64, epochs: usize, batch: usize, l2: f64) -> Result<SgdSettings, ModelError> {
        Ok(SgdSettings {
            learning_rate: self.positive("learning_rate", lr)?,
            momentum: self.fraction("momentum", momentum)?,
            epochs: self.count("epochs", epochs, 1)?,
            batch_size: self.count("batch_size", batch, 0)?,
            l2: self.non_negative("l2", l2)?,
        })
    }
}

impl Config {
    pub(crate) fn from_spec(spec: &ModelSpec) -> Result<Config, ModelError> {
        let p = Params { spec };
        if let Some(key) = spec.hyperparameters.keys().find(|k| !spec.family.keys().contains(&k.as_str())) {
            return Err(p.err(key, "not a hyperparameter of this family"));
        }
        Ok(match spec.family {
            Family::Lr => Config::Lr(p.sgd(0.1, 0.0, 200, 0, 0.0)?),
            Family::Svm => Config::Svm(p.sgd(0.01, 0.0, 50, 32, 1e-2)?),
            Family::TreeEnsemble => {
                let forest_size = p.count("forest_size", 50, 1)?;
                let bootstrap = p.count("bootstrap", usize::from(forest_size > 1), 0)?;
                if bootstrap > 1 {
                    return Err(p.err("bootstrap", "must be 0 or 1"));
                }
                Config::Forest(ensemble::ForestParams {
                    forest_size,
                    bootstrap: bootstrap == 1,
                    // 0 picks sqrt(width) for forests and all features for a single tree
                    max_features: p.count("max_features", 0, 0)?,
                    tree: tree::TreeParams {
                        max_depth: p.count("max_depth", 12, 1)?,
                        min_samples_split: p.count("min_samples_split", 2, 2)? as f64,
                        min_samples_leaf: p.count("min_samples_leaf", 1, 1)? as f64,
                        max_features: 0,
                    },
                })
            }
            Family::Gbt => {
                let subsample = p.positive("subsample", 1.0)?;
                if subsample > 1.0 {
                    return Err(p.err("subsample", format!("{subsample} must be in (0, 1]")));
                }
                Config::Gbt(ensemble::GbtParams {
                    stages: p.count("stages", 100, 1)?,
                    shrinkage: p.positive("shrinkage", 0.1)?,
                    subsample,
                    tree: tree::TreeParams {
                        max_depth: p.count("max_depth", 3, 1)?,
                        min_samples_split: 2.0,
                        min_samples_leaf: p.count("min_samples_leaf", 1, 1)? as f64,
                        max_features: 0,
                    },
                })
            }
            Family::Nn => Config::Nn {
                hidden: p.count("hidden", 64, 1)?,
                activation: p.activation("activation", Activation::Relu)?,
                sgd: p.sgd(0.05, 0.9, 20, 32, 1e-4)?,
            },
            Family::Dnn => {
                let hidden = dnn_widths(&p)?;
                Config::Dnn {
                    hidden,
                    activation: p.activation("activation", Activation::Relu)?,
                    sgd: p.sgd(0.05, 0.9, 20, 32, 1e-4)?,
                }
            }
            Family::Gan => {
                let sgd = p.sgd(0.05, 0.5, 15, 32, 1e-4)?;
                Config::Gan(gan::GanParams {
                    noise_dim: p.count("noise_dim", 32, 1)?,
                    gen_hidden: p.count("gen_hidden", 64, 1)?,
                    disc_hidden: p.count("disc_hidden", 64, 1)?,
                    activation: p.activation("activation", Activation::Relu)?,
                    gen_learning_rate: p.positive("gen_learning_rate", sgd.learning_rate)?,
                    unlabeled_weight: p.non_negative("unlabeled_weight", 1.0)?,
                    sgd,
                })
            }
        })
    }
}

/// Hidden widths for the DNN: either an explicit `widths` list such as
/// `"256,64,16"`, or `depth` layers starting at `first_width` and divided
/// by `shrink` each layer.
fn dnn_widths(p: &Params<'_>) -> Result<Vec<usize>, ModelError> {
    let widths = match p.spec.hyperparameters.get("widths") {
        Some(HyperValue::Text(s)) => s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<usize>().map_err(|_| p.err("widths", format!("{t:?} is not a width"))))
            .collect::<Result<Vec<_>, _>>()?,
        Some(v) => return Err(p.err("widths", format!("{v} is not a width list"))),
        None => {
            let depth = p.count("depth", 3, 2)?;
            let first = p.count("first_width", 128, 1)?;
            let shrink = p.count("shrink", 4, 2)?;
            let mut w = Vec::with_capacity(depth);
            let mut cur = first;
            for _ in 0..depth {
                w.push(cur);
                cur /= shrink;
            }
            w
        }
    };
    if widths.len() < 2 {
        return Err(p.err("widths", "at least two hidden layers are required"));
    }
    if widths.contains(&0) {
        return Err(p.err("widths", "hidden widths must be positive"));
    }
    if widths.windows(2).any(|w| w[1] >= w[0]) {
        return Err(p.err("widths", format!("{widths:?} must be strictly decreasing")));
    }
    Ok(widths)
}

/// Learned state of each family.
#[derive(Debug, Clone, PartialEq)]
pub enum Parameters {
    Linear {
        model: LinearModel,
        link: Option<PlattLink>,
    },
    Forest(Forest),
    Boosted(Boosted),
    Network(Mlp),
    Gan(Gan),
}

impl Parameters {
    fn proba_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        match self {
            Parameters::Linear { model, link } => {
                let m = model.margins(x);
                match link {
                    Some(link) => m.mapv(|z| link.proba(z)),
                    None => m.mapv(mlp::sigmoid),
                }
            }
            Parameters::Forest(f) => x.rows().into_iter().map(|r| f.proba(r)).collect(),
            Parameters::Boosted(b) => x.rows().into_iter().map(|r| b.proba(r)).collect(),
            Parameters::Network(net) => net.logits(x).column(0).mapv(mlp::sigmoid),
            Parameters::Gan(g) => g.proba_batch(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub parameters: Parameters,
    pub training_log: Vec<f64>,
    pub provider: ProviderFingerprint,
    pub width: usize,
    pub threshold: f64,
}

impl TrainedModel {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    fn check_width(&self, found: usize) -> Result<(), ModelError> {
        if found == self.width {
            Ok(())
        } else {
            Err(ModelError::WidthMismatch {
                expected: self.width,
                found,
            })
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_width(x.len())?;
        let row = ArrayView2::from_shape((1, x.len()), x).expect("one row");
        Ok(self.parameters.proba_batch(row)[0])
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8, ModelError> {
        Ok(self.label(self.predict_proba(x)?))
    }

    pub fn predict_proba_batch(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
        self.check_width(x.ncols())?;
        Ok(self.parameters.proba_batch(x).to_vec())
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, ModelError> {
        Ok(self.predict_proba_batch(x)?.into_iter().map(|p| self.label(p)).collect())
    }

    /// 1 iff `p >= threshold`.
    pub fn label(&self, p: f64) -> u8 {
        u8::from(p >= self.threshold)
    }

    /// Logs a warning when vectors come from a different provider than
    /// the one the model was trained on. Returns whether they match.
    pub fn check_provider(&self, provider: &ProviderFingerprint) -> bool {
        let same = *provider == self.provider;
        if !same {
            log::warn!(
                "model trained on provider {}/{} but vectors come from {}/{}",
                self.provider.name,
                self.provider.width,
                provider.name,
                provider.width
            );
        }
        same
    }
}

/// Anything that scores embedding rows; evaluation only needs this.
pub trait Classifier: Send + Sync {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, ModelError>;
}

impl Classifier for TrainedModel {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, ModelError> {
        TrainedModel::predict_batch(self, x)
    }
}

/// Builds a classifier from a training split.
pub trait Learner: Sync {
    type Model: Classifier;
    fn fit(&self, data: &Dataset) -> Result<Self::Model, ModelError>;
}

impl Learner for ModelSpec {
    type Model = TrainedModel;

    fn fit(&self, data: &Dataset) -> Result<TrainedModel, ModelError> {
        train(self, data)
    }
}

fn check_trainable(data: &Dataset) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    match data.class_counts() {
        (0, _) => Err(ModelError::SingleClass { label: 1 }),
        (_, 0) => Err(ModelError::SingleClass { label: 0 }),
        _ => Ok(()),
    }
}

/// Trains one model. Deterministic in `(spec, dataset order)`.
pub fn train(spec: &ModelSpec, data: &Dataset) -> Result<TrainedModel, ModelError> {
    train_inner(spec, data, None)
}

/// Trains the GAN with additional unlabeled vectors for its discriminator.
pub fn train_gan_with_unlabeled(
    spec: &ModelSpec,
    data: &Dataset,
    unlabeled: ArrayView2<f64>,
) -> Result<TrainedModel, ModelError> {
    if spec.family != Family::Gan {
        return Err(ModelError::Unsupported(format!(
            "{} does not train on unlabeled vectors",
            spec.family
        )));
    }
    if unlabeled.nrows() > 0 && unlabeled.ncols() != data.width() {
        return Err(ModelError::WidthMismatch {
            expected: data.width(),
            found: unlabeled.ncols(),
        });
    }
    train_inner(spec, data, Some(unlabeled))
}

fn train_inner(
    spec: &ModelSpec,
    data: &Dataset,
    unlabeled: Option<ArrayView2<f64>>,
) -> Result<TrainedModel, ModelError> {
    let config = Config::from_spec(spec)?;
    check_trainable(data)?;
    let guard = DivergenceGuard::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = data.width();
    let (parameters, training_log) = match config {
        Config::Lr(s) => {
            let (model, log) = linear::fit_linear(data, &s.into(), linear::logistic_objective, &guard, &mut rng)?;
            (Parameters::Linear { model, link: None }, log)
        }
        Config::Svm(s) => {
            let (model, log) = linear::fit_linear(data, &s.into(), linear::hinge_objective, &guard, &mut rng)?;
            let link = PlattLink::fit(model.margins(data.x()).view(), data.y());
            (Parameters::Linear { model, link: Some(link) }, log)
        }
        Config::Forest(p) => {
            let (f, log) = ensemble::fit_forest(data, &p, &mut rng);
            (Parameters::Forest(f), log)
        }
        Config::Gbt(p) => {
            let (b, log) = ensemble::fit_gbt(data, &p, &guard, &mut rng)?;
            (Parameters::Boosted(b), log)
        }
        Config::Nn {
            hidden,
            activation,
            sgd,
        } => {
            let (net, log) = fit_network(data, &[width, hidden, 1], activation, &sgd, &guard, &mut rng)?;
            (Parameters::Network(net), log)
        }
        Config::Dnn {
            hidden,
            activation,
            sgd,
        } => {
            let mut sizes = vec![width];
            sizes.extend(hidden);
            sizes.push(1);
            let (net, log) = fit_network(data, &sizes, activation, &sgd, &guard, &mut rng)?;
            (Parameters::Network(net), log)
        }
        Config::Gan(p) => {
            let (g, log) = gan::fit_gan(data, unlabeled, &p, &guard, &mut rng)?;
            (Parameters::Gan(g), log)
        }
    };
    let provider = data.provider().cloned().unwrap_or(ProviderFingerprint {
        name: "unspecified".to_string(),
        width,
    });
    Ok(TrainedModel {
        spec: spec.clone(),
        parameters,
        training_log,
        provider,
        width,
        threshold: TrainedModel::DEFAULT_THRESHOLD,
    })
}

impl From<SgdSettings> for linear::LinearTraining {
    fn from(s: SgdSettings) -> Self {
        linear::LinearTraining {
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            l2: s.l2,
            epochs: s.epochs,
            batch_size: s.batch_size,
        }
    }
}

fn fit_network(
    data: &Dataset,
    sizes: &[usize],
    activation: Activation,
    sgd: &SgdSettings,
    guard: &DivergenceGuard,
    rng: &mut ChaCha8Rng,
) -> Result<(Mlp, Vec<f64>), ModelError> {
    let mut net = Mlp::new(sizes, activation, rng);
    let mut opt = mlp::Sgd::new(&net, sgd.learning_rate, sgd.momentum);
    let mut log = Vec::with_capacity(sgd.epochs);
    for epoch in 0..sgd.epochs {
        let mut total = 0.0;
        for batch in minibatches(data.len(), sgd.batch_size, rng) {
            let (x, y) = data.rows(&batch);
            let (loss, grad) = mlp::binary_objective(&net, x.view(), &y, sgd.l2);
            total += loss * batch.len() as f64;
            opt.step(&mut net, &grad);
        }
        let loss = total / data.len() as f64;
        guard.check(epoch, loss)?;
        log.push(loss);
    }
    Ok((net, log))
}
