//! Analytic gradients against central finite differences on small random
//! instances (width <= 8, at most 20 samples).

use crate::common::{numeric_gradient, relative_error};
use hvd_core::models::gan::{discriminator_objective, generator_objective};
use hvd_core::models::linear::logistic_objective;
use hvd_core::models::mlp::{binary_objective, Activation, Mlp};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const INSTANCES: usize = 25;
const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..=1)).collect()
}

/// Moves the network away from its small initial weights so the check
/// exercises a generic point.
fn randomize(net: &mut Mlp, rng: &mut ChaCha8Rng) {
    let flat: Vec<f64> = (0..net.n_params()).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
    net.set_flat_params(&flat);
}

const ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Relu];

pub fn logistic_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..INSTANCES {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=20);
        let x = normal(n, d, &mut rng);
        let y = labels(n, &mut rng);
        let l2 = rng.random_range(0.0..0.1);
        let mut params: Vec<f64> = (0..=d).map(|_| rng.sample(StandardNormal)).collect();
        params[d] *= 0.5;
        let split = |p: &[f64]| (Array1::from(p[..d].to_vec()), p[d]);
        let (w, b) = split(&params);
        let (_, gw, gb) = logistic_objective(w.view(), b, x.view(), &y, l2);
        let mut analytic = gw.to_vec();
        analytic.push(gb);
        let numeric = numeric_gradient(
            |p| {
                let (w, b) = split(p);
                logistic_objective(ArrayView1::from(&w), b, x.view(), &y, l2).0
            },
            &params,
            H,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "case {case}: relative error {err:e}");
    }
}

fn check_network(sizes_for: impl Fn(usize, &mut ChaCha8Rng) -> Vec<usize>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..INSTANCES {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=20);
        let sizes = sizes_for(d, &mut rng);
        let act = ACTIVATIONS[case % ACTIVATIONS.len()];
        let mut net = Mlp::new(&sizes, act, &mut rng);
        randomize(&mut net, &mut rng);
        let x = normal(n, d, &mut rng);
        let y = labels(n, &mut rng);
        let l2 = rng.random_range(0.0..0.05);
        let (_, grad) = binary_objective(&net, x.view(), &y, l2);
        let mut probe = net.clone();
        let numeric = numeric_gradient(
            |p| {
                probe.set_flat_params(p);
                binary_objective(&probe, x.view(), &y, l2).0
            },
            &net.flat_params(),
            H,
        );
        let err = relative_error(&grad.flatten(), &numeric);
        assert!(err < TOL, "case {case} sizes {sizes:?} {act:?}: relative error {err:e}");
    }
}

pub fn one_hidden_layer_network() {
    check_network(|d, rng| vec![d, rng.random_range(1..=6), 1], 2);
}

pub fn deep_network_with_shrinking_layers() {
    check_network(
        |d, rng| {
            let depth = rng.random_range(2..=3);
            let mut sizes = vec![d];
            let mut w = rng.random_range(depth + 1..=9);
            for left in (0..depth).rev() {
                sizes.push(w);
                if left > 0 {
                    w = rng.random_range(left..w);
                }
            }
            sizes.push(1);
            sizes
        },
        3,
    );
}

pub fn gan_discriminator() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..INSTANCES {
        let d = rng.random_range(1..=8);
        let nr = rng.random_range(1..=8);
        let nf = rng.random_range(1..=6);
        let nu = rng.random_range(0..=6);
        let act = ACTIVATIONS[case % ACTIVATIONS.len()];
        let mut disc = Mlp::new(&[d, rng.random_range(1..=6), 3], act, &mut rng);
        randomize(&mut disc, &mut rng);
        let real = normal(nr, d, &mut rng);
        let y = labels(nr, &mut rng);
        let fake = normal(nf, d, &mut rng);
        let unl = normal(nu, d, &mut rng);
        let weight = rng.random_range(0.0..2.0);
        let l2 = rng.random_range(0.0..0.05);
        let objective = |net: &Mlp| discriminator_objective(net, real.view(), &y, fake.view(), Some(unl.view()), weight, l2);
        let (_, grad) = objective(&disc);
        let mut probe = disc.clone();
        let numeric = numeric_gradient(
            |p| {
                probe.set_flat_params(p);
                objective(&probe).0
            },
            &disc.flat_params(),
            H,
        );
        let err = relative_error(&grad.flatten(), &numeric);
        assert!(err < TOL, "case {case}: relative error {err:e}");
    }
}

pub fn gan_generator() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..INSTANCES {
        let d = rng.random_range(1..=8);
        let nz = rng.random_range(1..=5);
        let b = rng.random_range(1..=20);
        let act = ACTIVATIONS[case % ACTIVATIONS.len()];
        let mut gen = Mlp::new(&[nz, rng.random_range(1..=6), d], act, &mut rng);
        let mut disc = Mlp::new(&[d, rng.random_range(1..=6), 3], act, &mut rng);
        randomize(&mut gen, &mut rng);
        randomize(&mut disc, &mut rng);
        let noise = normal(b, nz, &mut rng);
        let l2 = rng.random_range(0.0..0.05);
        let (_, grad) = generator_objective(&gen, &disc, noise.view(), l2);
        let mut probe = gen.clone();
        let numeric = numeric_gradient(
            |p| {
                probe.set_flat_params(p);
                generator_objective(&probe, &disc, noise.view(), l2).0
            },
            &gen.flat_params(),
            H,
        );
        let err = relative_error(&grad.flatten(), &numeric);
        assert!(err < TOL, "case {case}: relative error {err:e}");
    }
}
