//! Bagged CART forests and gradient-boosted trees.

use ndarray::ArrayView1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{sigmoid, softplus};
use super::tree::{grow, Criterion, Presorted, Tree, TreeParams};
use super::{Dataset, DivergenceGuard, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub forest_size: usize,
    pub bootstrap: bool,
    /// Features tried per split; 0 means sqrt(width) for a forest and all
    /// features for a single tree.
    pub max_features: usize,
    pub tree: TreeParams,
}

/// Majority-vote forest: the probability is the fraction of trees voting 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn from_trees(trees: Vec<Tree>) -> Self {
        Forest { trees }
    }

    pub fn vote(tree: &Tree, x: &[f64]) -> bool {
        tree.predict(x) >= 0.5
    }

    pub fn proba(&self, x: ArrayView1<f64>) -> f64 {
        let owned;
        let x = match x.as_slice() {
            Some(s) => s,
            None => {
                owned = x.to_vec();
                &owned
            }
        };
        let votes = self.trees.iter().filter(|t| Self::vote(t, x)).count();
        votes as f64 / self.trees.len() as f64
    }
}

/// Grows the forest and logs the training error of the ensemble after
/// each tree.
pub fn fit_forest(data: &Dataset, params: &ForestParams, rng: &mut ChaCha8Rng) -> (Forest, Vec<f64>) {
    let n = data.len();
    let width = data.width();
    let ps = Presorted::new(data.x());
    let targets: Vec<f64> = data.y().iter().map(|&l| f64::from(l)).collect();
    let max_features = match params.max_features {
        0 if params.forest_size > 1 => ((width as f64).sqrt().round() as usize).max(1),
        0 => width,
        k => k.min(width),
    };
    let tree_params = TreeParams {
        max_features,
        ..params.tree
    };
    let rows: Vec<Vec<f64>> = data.x().rows().into_iter().map(|r| r.to_vec()).collect();
    let mut votes = vec![0usize; n];
    let mut trees = Vec::with_capacity(params.forest_size);
    let mut log = Vec::with_capacity(params.forest_size);
    for t in 0..params.forest_size {
        let mut weights = vec![if params.bootstrap { 0.0 } else { 1.0 }; n];
        if params.bootstrap {
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1.0;
            }
        }
        let grown = grow(&ps, &targets, &weights, Criterion::Gini, tree_params, rng);
        for (v, row) in votes.iter_mut().zip(&rows) {
            *v += usize::from(Forest::vote(&grown.tree, row));
        }
        trees.push(grown.tree);
        let trees_so_far = t + 1;
        let errors = votes
            .iter()
            .zip(data.y())
            .filter(|(&v, &y)| u8::from(2 * v >= trees_so_far) != y)
            .count();
        log.push(errors as f64 / n as f64);
    }
    (Forest { trees }, log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtParams {
    pub stages: usize,
    pub shrinkage: f64,
    /// Fraction of samples drawn without replacement per stage.
    pub subsample: f64,
    pub tree: TreeParams,
}

/// `F(x) = base + sum of tree outputs`; leaf values already include the
/// shrinkage. Probability is `sigmoid(F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Boosted {
    pub base: f64,
    pub trees: Vec<Tree>,
}

impl Boosted {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn proba(&self, x: ArrayView1<f64>) -> f64 {
        match x.as_slice() {
            Some(s) => sigmoid(self.score(s)),
            None => sigmoid(self.score(&x.to_vec())),
        }
    }
}

/// Mean logistic loss of scores `f` against labels.
pub fn logistic_loss(f: &[f64], y: &[u8]) -> f64 {
    f.iter().zip(y).map(|(&z, &l)| softplus(z) - f64::from(l) * z).sum::<f64>() / y.len() as f64
}

/// Boosts regression trees fitted to the logistic-loss residuals. Each leaf
/// takes a Newton step, halved until it does not increase the loss on the
/// leaf's samples, so the training loss never goes up from one stage to the
/// next. Logs the training loss after each stage.
pub fn fit_gbt(
    data: &Dataset,
    params: &GbtParams,
    guard: &DivergenceGuard,
    rng: &mut ChaCha8Rng,
) -> Result<(Boosted, Vec<f64>), ModelError> {
    let n = data.len();
    let y = data.y();
    let ps = Presorted::new(data.x());
    let rows: Vec<Vec<f64>> = data.x().rows().into_iter().map(|r| r.to_vec()).collect();
    let (neg, pos) = data.class_counts();
    let base = (pos as f64 / neg as f64).ln();
    let mut f = vec![base; n];
    let mut trees = Vec::with_capacity(params.stages);
    let mut log = Vec::with_capacity(params.stages);
    let n_sub = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    for stage in 0..params.stages {
        let residual: Vec<f64> = f.iter().zip(y).map(|(&z, &l)| f64::from(l) - sigmoid(z)).collect();
        let mut weights = vec![1.0; n];
        if n_sub < n {
            weights.fill(0.0);
            for i in rand::seq::index::sample(rng, n, n_sub) {
                weights[i] = 1.0;
            }
        }
        let grown = grow(&ps, &residual, &weights, Criterion::SquaredError, params.tree, rng);
        let mut tree = grown.tree;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
        for (i, &leaf) in grown.leaf_of.iter().enumerate() {
            if leaf != usize::MAX {
                members[leaf].push(i);
            }
        }
        for (leaf, idx) in members.iter().enumerate() {
            if let super::tree::Node::Leaf { value } = &mut tree.nodes[leaf] {
                *value = params.shrinkage * newton_step(idx, &f, y);
            }
        }
        for (z, row) in f.iter_mut().zip(&rows) {
            *z += tree.predict(row);
        }
        trees.push(tree);
        let loss = logistic_loss(&f, y);
        guard.check(stage, loss)?;
        log.push(loss);
    }
    Ok((Boosted { base, trees }, log))
}

fn newton_step(idx: &[usize], f: &[f64], y: &[u8]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let leaf_loss = |gamma: f64| -> f64 {
        idx.iter()
            .map(|&i| {
                let z = f[i] + gamma;
                softplus(z) - f64::from(y[i]) * z
            })
            .sum()
    };
    let (mut g, mut h) = (0.0, 0.0);
    for &i in idx {
        let p = sigmoid(f[i]);
        g += f64::from(y[i]) - p;
        h += p * (1.0 - p);
    }
    let mut gamma = g / h.max(1e-12);
    let start = leaf_loss(0.0);
    for _ in 0..60 {
        if leaf_loss(gamma) <= start {
            return gamma;
        }
        gamma *= 0.5;
    }
    0.0
}
