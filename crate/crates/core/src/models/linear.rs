//! Logistic regression and the linear SVM.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::mlp::{sigmoid, softplus};
use super::{minibatches, Dataset, DivergenceGuard, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Array1<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn zeros(width: usize) -> Self {
        LinearModel {
            w: Array1::zeros(width),
            b: 0.0,
        }
    }

    pub fn margins(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.w) + self.b
    }
}

/// Mean logistic loss plus `l2/2 * |w|^2`, with gradients for `w` and `b`.
pub fn logistic_objective(
    w: ArrayView1<f64>,
    b: f64,
    x: ArrayView2<f64>,
    y: &[u8],
    l2: f64,
) -> (f64, Array1<f64>, f64) {
    let n = y.len() as f64;
    let z = x.dot(&w) + b;
    let mut loss = 0.0;
    let mut dz = Array1::zeros(y.len());
    for (i, &label) in y.iter().enumerate() {
        let t = f64::from(label);
        loss += softplus(z[i]) - t * z[i];
        dz[i] = (sigmoid(z[i]) - t) / n;
    }
    let mut gw = x.t().dot(&dz);
    gw.scaled_add(l2, &w);
    let gb = dz.sum();
    (loss / n + 0.5 * l2 * w.dot(&w), gw, gb)
}

/// Mean hinge loss on labels mapped to {-1, +1} plus `l2/2 * |w|^2`, with a
/// subgradient (zero at the hinge point).
pub fn hinge_objective(
    w: ArrayView1<f64>,
    b: f64,
    x: ArrayView2<f64>,
    y: &[u8],
    l2: f64,
) -> (f64, Array1<f64>, f64) {
    let n = y.len() as f64;
    let z = x.dot(&w) + b;
    let mut loss = 0.0;
    let mut dz = Array1::zeros(y.len());
    for (i, &label) in y.iter().enumerate() {
        let s = if label == 1 { 1.0 } else { -1.0 };
        let slack = 1.0 - s * z[i];
        if slack > 0.0 {
            loss += slack;
            dz[i] = -s / n;
        }
    }
    let mut gw = x.t().dot(&dz);
    gw.scaled_add(l2, &w);
    let gb = dz.sum();
    (loss / n + 0.5 * l2 * w.dot(&w), gw, gb)
}

pub(crate) struct LinearTraining {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

type Objective = fn(ArrayView1<f64>, f64, ArrayView2<f64>, &[u8], f64) -> (f64, Array1<f64>, f64);

pub(crate) fn fit_linear(
    data: &Dataset,
    cfg: &LinearTraining,
    objective: Objective,
    guard: &DivergenceGuard,
    rng: &mut ChaCha8Rng,
) -> Result<(LinearModel, Vec<f64>), ModelError> {
    let mut model = LinearModel::zeros(data.width());
    let mut vw = Array1::<f64>::zeros(data.width());
    let mut vb = 0.0;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch in minibatches(data.len(), cfg.batch_size, rng) {
            let (x, y) = data.rows(&batch);
            let (loss, gw, gb) = objective(model.w.view(), model.b, x.view(), &y, cfg.l2);
            epoch_loss += loss * batch.len() as f64;
            vw.zip_mut_with(&gw, |v, &g| *v = cfg.momentum * *v - cfg.learning_rate * g);
            vb = cfg.momentum * vb - cfg.learning_rate * gb;
            model.w += &vw;
            model.b += vb;
        }
        let epoch_loss = epoch_loss / data.len() as f64;
        guard.check(epoch, epoch_loss)?;
        log.push(epoch_loss);
    }
    Ok((model, log))
}

/// Logistic link `p = sigmoid(a * margin + c)` fitted on SVM margins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattLink {
    pub a: f64,
    pub c: f64,
}

impl PlattLink {
    pub fn proba(&self, margin: f64) -> f64 {
        sigmoid(self.a * margin + self.c)
    }

    /// Newton's method with backtracking on the cross-entropy against
    /// Platt's smoothed targets, which keep the fit finite on separable
    /// margins.
    pub fn fit(margins: ArrayView1<f64>, y: &[u8]) -> PlattLink {
        let n_pos = y.iter().filter(|&&l| l == 1).count() as f64;
        let n_neg = y.len() as f64 - n_pos;
        let hi = (n_pos + 1.0) / (n_pos + 2.0);
        let lo = 1.0 / (n_neg + 2.0);
        let targets: Vec<f64> = y.iter().map(|&l| if l == 1 { hi } else { lo }).collect();
        let objective = |a: f64, c: f64| -> f64 {
            margins
                .iter()
                .zip(&targets)
                .map(|(&m, &t)| {
                    let z = a * m + c;
                    softplus(z) - t * z
                })
                .sum()
        };
        let (mut a, mut c) = (1.0, 0.0);
        let mut current = objective(a, c);
        for _ in 0..100 {
            let (mut ga, mut gc, mut haa, mut hac, mut hcc) = (0.0, 0.0, 1e-9, 0.0, 1e-9);
            for (&m, &t) in margins.iter().zip(&targets) {
                let p = sigmoid(a * m + c);
                let d = p - t;
                let w = p * (1.0 - p);
                ga += d * m;
                gc += d;
                haa += w * m * m;
                hac += w * m;
                hcc += w;
            }
            let det = haa * hcc - hac * hac;
            if det.abs() < 1e-300 {
                break;
            }
            let da = (hcc * ga - hac * gc) / det;
            let dc = (haa * gc - hac * ga) / det;
            let mut step = 1.0;
            let mut improved = false;
            while step > 1e-10 {
                let (na, nc) = (a - step * da, c - step * dc);
                let value = objective(na, nc);
                if value < current {
                    a = na;
                    c = nc;
                    improved = current - value > 1e-12 * current.abs().max(1.0);
                    current = value;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        PlattLink { a, c }
    }
}
