//! Semi-supervised GAN.
//!
//! The discriminator has three outputs: class 0 is a violation, class 1 a
//! non-violation and class 2 a generated vector. It learns from labeled
//! vectors, from generator output and optionally from unlabeled vectors,
//! which only have to look real. The generator maps Gaussian noise to
//! embedding-width vectors and is trained to make the discriminator put its
//! mass on the two real classes. Inference ignores class 2 and renormalizes
//! over the real classes, so the violation probability is
//! `sigmoid(l0 - l1)`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mlp::{sigmoid, Activation, Mlp, MlpGrad, Sgd};
use super::{minibatches, Dataset, DivergenceGuard, ModelError, SgdSettings};

pub const VIOLATION: usize = 0;
pub const NON_VIOLATION: usize = 1;
pub const GENERATED: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct GanParams {
    pub noise_dim: usize,
    pub gen_hidden: usize,
    pub disc_hidden: usize,
    pub activation: Activation,
    pub gen_learning_rate: f64,
    pub unlabeled_weight: f64,
    /// Discriminator optimizer and the shared schedule.
    pub sgd: SgdSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gan {
    pub discriminator: Mlp,
    pub generator: Mlp,
}

impl Gan {
    pub fn proba_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let logits = self.discriminator.logits(x);
        logits
            .rows()
            .into_iter()
            .map(|l| sigmoid(l[VIOLATION] - l[NON_VIOLATION]))
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Loss and logit gradient for one row whose target is a single class.
fn class_row(l: &[f64], target: usize, scale: f64, grad: &mut [f64]) -> f64 {
    let p = softmax(l);
    for (k, g) in grad.iter_mut().enumerate() {
        *g = scale * (p[k] - f64::from(u8::from(k == target)));
    }
    log_sum_exp(l) - l[target]
}

/// Loss `-log(p0 + p1)` for one row that should look real, and its logit
/// gradient.
fn real_row(l: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let p = softmax(l);
    let q = softmax(&l[..2]);
    grad[0] = scale * (p[0] - q[0]);
    grad[1] = scale * (p[1] - q[1]);
    grad[2] = scale * p[2];
    log_sum_exp(l) - log_sum_exp(&l[..2])
}

/// Discriminator objective: mean cross-entropy on labeled rows, plus mean
/// cross-entropy towards "generated" on fake rows, plus `unlabeled_weight`
/// times the mean `-log(p0 + p1)` on unlabeled rows, plus `l2/2 * |W|^2`.
pub fn discriminator_objective(
    disc: &Mlp,
    real_x: ArrayView2<f64>,
    real_y: &[u8],
    fake_x: ArrayView2<f64>,
    unlabeled: Option<ArrayView2<f64>>,
    unlabeled_weight: f64,
    l2: f64,
) -> (f64, MlpGrad) {
    let unl = unlabeled.filter(|u| u.nrows() > 0);
    let (nr, nf) = (real_x.nrows(), fake_x.nrows());
    let nu = unl.map_or(0, |u| u.nrows());
    let mut x = Array2::zeros((nr + nf + nu, disc.input_width()));
    x.slice_mut(ndarray::s![..nr, ..]).assign(&real_x);
    x.slice_mut(ndarray::s![nr..nr + nf, ..]).assign(&fake_x);
    if let Some(u) = unl {
        x.slice_mut(ndarray::s![nr + nf.., ..]).assign(&u);
    }
    let fwd = disc.forward(x.view());
    let logits = fwd.logits();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for i in 0..nr + nf + nu {
        let l = logits.row(i).to_vec();
        let part = if i < nr {
            let target = if real_y[i] == 1 { VIOLATION } else { NON_VIOLATION };
            class_row(&l, target, 1.0 / nr as f64, &mut g) / nr as f64
        } else if i < nr + nf {
            class_row(&l, GENERATED, 1.0 / nf as f64, &mut g) / nf as f64
        } else {
            let s = unlabeled_weight / nu as f64;
            s * real_row(&l, s, &mut g)
        };
        loss += part;
        dlogits.row_mut(i).assign(&ndarray::ArrayView1::from(&g[..]));
    }
    let (mut grad, _) = disc.backward(&fwd, dlogits);
    let penalty = disc.apply_l2(&mut grad, l2);
    (loss + penalty, grad)
}

/// Generator objective: mean `-log(p0 + p1)` of the discriminator on
/// generated rows plus `l2/2 * |W_gen|^2`. The gradient is w.r.t. the
/// generator only.
pub fn generator_objective(gen: &Mlp, disc: &Mlp, noise: ArrayView2<f64>, l2: f64) -> (f64, MlpGrad) {
    let b = noise.nrows() as f64;
    let gfwd = gen.forward(noise);
    let fake = gfwd.logits().clone();
    let dfwd = disc.forward(fake.view());
    let logits = dfwd.logits();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for i in 0..logits.nrows() {
        loss += real_row(&logits.row(i).to_vec(), 1.0 / b, &mut g) / b;
        dlogits.row_mut(i).assign(&ndarray::ArrayView1::from(&g[..]));
    }
    let (_, dfake) = disc.backward(&dfwd, dlogits);
    let (mut grad, _) = gen.backward(&gfwd, dfake);
    let penalty = gen.apply_l2(&mut grad, l2);
    (loss + penalty, grad)
}

fn noise(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| rng.sample(StandardNormal))
}

/// Alternating updates: one discriminator step on a labeled batch, an
/// equally sized generated batch and the next slice of unlabeled rows,
/// then one generator step on fresh noise. Logs the mean discriminator
/// loss per epoch.
pub(crate) fn fit_gan(
    data: &Dataset,
    unlabeled: Option<ArrayView2<f64>>,
    p: &GanParams,
    guard: &DivergenceGuard,
    rng: &mut ChaCha8Rng,
) -> Result<(Gan, Vec<f64>), ModelError> {
    let width = data.width();
    let mut disc = Mlp::new(&[width, p.disc_hidden, 3], p.activation, rng);
    let mut gen = Mlp::new(&[p.noise_dim, p.gen_hidden, width], p.activation, rng);
    let mut opt_d = Sgd::new(&disc, p.sgd.learning_rate, p.sgd.momentum);
    let mut opt_g = Sgd::new(&gen, p.gen_learning_rate, p.sgd.momentum);
    let unlabeled = unlabeled.filter(|u| u.nrows() > 0);
    let mut cursor = 0;
    let mut log = Vec::with_capacity(p.sgd.epochs);
    for epoch in 0..p.sgd.epochs {
        let mut total = 0.0;
        for batch in minibatches(data.len(), p.sgd.batch_size, rng) {
            let (x, y) = data.rows(&batch);
            let b = batch.len();
            let fake = gen.logits(noise(b, p.noise_dim, rng).view());
            let unl_rows = unlabeled.map(|u| {
                let idx: Vec<usize> = (0..b).map(|k| (cursor + k) % u.nrows()).collect();
                cursor = (cursor + b) % u.nrows();
                u.select(ndarray::Axis(0), &idx)
            });
            let (loss, grad) = discriminator_objective(
                &disc,
                x.view(),
                &y,
                fake.view(),
                unl_rows.as_ref().map(|u| u.view()),
                p.unlabeled_weight,
                p.sgd.l2,
            );
            opt_d.step(&mut disc, &grad);
            let (gen_loss, ggrad) = generator_objective(&gen, &disc, noise(b, p.noise_dim, rng).view(), p.sgd.l2);
            guard.check(epoch, gen_loss)?;
            opt_g.step(&mut gen, &ggrad);
            total += loss * b as f64;
        }
        let loss = total / data.len() as f64;
        guard.check(epoch, loss)?;
        log.push(loss);
    }
    Ok((
        Gan {
            discriminator: disc,
            generator: gen,
        },
        log,
    ))
}
