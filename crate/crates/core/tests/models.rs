//! Training-level properties across the classifier families, plus
//! cross-validation and grid-search contracts.

use hvd_core::eval::{cross_validate, grid_search, make_folds, ConfusionMatrix};
use hvd_core::models::gan::Gan;
use hvd_core::models::mlp::{Activation, Mlp};
use hvd_core::models::{load_model, save_model, train, Classifier, Dataset, Family, Learner, ModelError, ModelSpec};
use hvd_core::synth::GaussianClusters;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal));
    let y = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    Dataset::new(x, y, (0..n).map(|i| format!("d{i}")).collect()).unwrap()
}

/// Class given by the sign of the first coordinate, with a margin.
fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(i % 2 == 0);
        let sign = if label == 1 { 1.0 } else { -1.0 };
        x[[i, 0]] = sign * rng.random_range(0.5..2.0);
        x[[i, 1]] = rng.random_range(-2.0..2.0);
        y.push(label);
    }
    Dataset::new(x, y, (0..n).map(|i| format!("s{i}")).collect()).unwrap()
}

fn small_spec(family: Family, seed: u64) -> ModelSpec {
    let spec = ModelSpec::new(family, seed);
    match family {
        Family::TreeEnsemble => spec.with("forest_size", 5.0),
        Family::Gbt => spec.with("stages", 10.0),
        Family::Nn | Family::Dnn | Family::Gan => spec.with("epochs", 5.0),
        _ => spec,
    }
}

#[test]
fn every_family_is_bit_reproducible() {
    let data = random_dataset(40, 6, 1);
    for family in Family::ALL {
        let spec = small_spec(family, 9);
        let bytes = |m| {
            let mut out = Vec::new();
            save_model(&m, &mut out).unwrap();
            out
        };
        let a = bytes(train(&spec, &data).unwrap());
        let b = bytes(train(&spec, &data).unwrap());
        assert_eq!(a, b, "{family:?}");
    }
}

#[test]
fn separable_toy_set() {
    let data = separable(40, 3);
    let model = train(&ModelSpec::new(Family::Lr, 0), &data).unwrap();
    assert!(model.training_log.len() <= 200);
    assert_eq!(model.predict_batch(data.x()).unwrap(), data.y());

    let plan = make_folds(&data, 10, 1, true).unwrap();
    let cv = cross_validate(&ModelSpec::new(Family::Lr, 0), &data, &plan).unwrap();
    assert!(cv.metrics.f1 >= 0.95, "{:?}", cv.metrics);
}

#[test]
fn round_trip_keeps_predictions_and_checks_width() {
    let data = random_dataset(60, 8, 4);
    let model = train(&ModelSpec::new(Family::Lr, 2), &data).unwrap();
    let mut bytes = Vec::new();
    save_model(&model, &mut bytes).unwrap();
    let back = load_model(&mut bytes.as_slice()).unwrap();
    let probe = random_dataset(100, 8, 5);
    assert_eq!(model.predict_proba_batch(probe.x()).unwrap(), back.predict_proba_batch(probe.x()).unwrap());
    let narrow = random_dataset(3, 5, 6);
    assert!(matches!(back.predict_batch(narrow.x()), Err(ModelError::WidthMismatch { expected: 8, found: 5 })));
}

struct Constant(u8);
struct ConstantModel(u8);
impl Classifier for ConstantModel {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, ModelError> {
        Ok(vec![self.0; x.nrows()])
    }
}
impl Learner for Constant {
    type Model = ConstantModel;
    fn fit(&self, _: &Dataset) -> Result<ConstantModel, ModelError> {
        Ok(ConstantModel(self.0))
    }
}

/// Predicts the true label by looking the row up in the full dataset.
struct Oracle(Dataset);
struct OracleModel(Dataset);
impl Classifier for OracleModel {
    fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, ModelError> {
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let i = self.0.x().rows().into_iter().position(|s| s == r).unwrap();
                self.0.y()[i]
            })
            .collect())
    }
}
impl Learner for Oracle {
    type Model = OracleModel;
    fn fit(&self, _: &Dataset) -> Result<OracleModel, ModelError> {
        Ok(OracleModel(self.0.clone()))
    }
}

#[test]
fn stub_learners_through_cross_validation() {
    let data = random_dataset(50, 3, 8);
    let plan = make_folds(&data, 5, 3, true).unwrap();
    let ones = cross_validate(&Constant(1), &data, &plan).unwrap();
    assert_eq!((ones.metrics.accuracy, ones.metrics.recall, ones.metrics.precision), (0.5, 1.0, 0.5));
    let perfect = cross_validate(&Oracle(data.clone()), &data, &plan).unwrap();
    assert_eq!((perfect.metrics.accuracy, perfect.metrics.mcc), (1.0, 1.0));

    // Pooled counts are the sum of per-fold counts and cover every example once.
    let mut pooled = ConfusionMatrix::default();
    for f in &ones.folds {
        pooled.add(&f.confusion);
    }
    assert_eq!(pooled, ones.confusion);
    assert_eq!(ones.confusion.total(), 50.0);
    let mut held_out: Vec<usize> = (0..plan.k).flat_map(|f| plan.test_indices(f)).collect();
    held_out.sort_unstable();
    assert_eq!(held_out, (0..50).collect::<Vec<_>>());
}

#[test]
fn grid_search_skips_divergent_points_and_ignores_order() {
    let data = separable(40, 5);
    let plan = make_folds(&data, 4, 0, true).unwrap();
    let sound = ModelSpec::new(Family::Lr, 0).with("epochs", 50.0);
    let divergent = ModelSpec::new(Family::Lr, 0).with("learning_rate", 1e12).with("epochs", 50.0);
    let lone = grid_search(std::slice::from_ref(&sound), &data, &plan).unwrap();
    assert_eq!(lone.best, sound);
    // Overlapping classes, so a huge step size overshoots instead of
    // converging.
    let noisy = random_dataset(40, 2, 12);
    let noisy_plan = make_folds(&noisy, 4, 0, true).unwrap();
    let mixed = grid_search(&[divergent.clone(), sound.clone()], &noisy, &noisy_plan).unwrap();
    assert_eq!(mixed.best, sound);
    assert!(mixed.points.iter().any(|p| p.error.is_some()));

    let points: Vec<ModelSpec> = [0.5, 0.1, 0.01, 0.1]
        .into_iter()
        .map(|lr| ModelSpec::new(Family::Lr, 0).with("learning_rate", lr).with("epochs", 30.0))
        .collect();
    let forward = grid_search(&points, &data, &plan).unwrap();
    let mut reversed = points.clone();
    reversed.reverse();
    let backward = grid_search(&reversed, &data, &plan).unwrap();
    assert_eq!(forward.best, backward.best);
}

#[test]
fn gbt_and_forest_on_synthetic_clusters() {
    let data = GaussianClusters {
        n: 120,
        width: 20,
        informative: 5,
        separation: 1.5,
        seed: 3,
    }
    .generate();
    for family in [Family::TreeEnsemble, Family::Gbt] {
        let m = train(&small_spec(family, 0), &data).unwrap();
        let p = m.predict_proba_batch(data.x()).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn full_batch_lr_loss_never_increases(seed in any::<u64>(), n in 4usize..40, d in 1usize..6) {
        let data = random_dataset(n, d, seed);
        let spec = ModelSpec::new(Family::Lr, seed)
            .with("batch_size", 0.0)
            .with("learning_rate", 0.1)
            .with("epochs", 60.0)
            .with("l2", 0.01);
        let log = train(&spec, &data).unwrap().training_log;
        for w in log.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn boosting_loss_never_increases(seed in any::<u64>(), n in 4usize..40, d in 1usize..5) {
        let data = random_dataset(n, d, seed);
        let spec = ModelSpec::new(Family::Gbt, seed).with("stages", 30.0).with("shrinkage", 0.3);
        let log = train(&spec, &data).unwrap().training_log;
        for w in log.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn gan_prediction_ignores_positive_logit_scaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let disc = Mlp::new(&[4, 6, 3], Activation::Tanh, &mut rng);
        let generator = Mlp::new(&[2, 3, 4], Activation::Tanh, &mut rng);
        let mut scaled = disc.clone();
        let last = scaled.layers.last_mut().unwrap();
        last.w *= scale;
        last.b *= scale;
        let x = Array2::from_shape_fn((30, 4), |_| rng.sample::<f64, _>(StandardNormal) * 3.0);
        let label = |g: &Gan| g.proba_batch(x.view()).mapv(|p| u8::from(p >= 0.5));
        let a = Gan { discriminator: disc, generator: generator.clone() };
        let b = Gan { discriminator: scaled, generator };
        prop_assert_eq!(label(&a), label(&b));
    }
}

#[test]
fn gan_with_equal_real_logits_is_undecided() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut disc = Mlp::new(&[3, 4, 3], Activation::Relu, &mut rng);
    let last = disc.layers.last_mut().unwrap();
    let row0 = last.w.column(0).to_owned();
    last.w.column_mut(1).assign(&row0);
    last.b[1] = last.b[0];
    let gan = Gan {
        discriminator: disc,
        generator: Mlp::new(&[2, 2, 3], Activation::Relu, &mut rng),
    };
    let p = gan.proba_batch(Array2::from_elem((2, 3), 0.7).view());
    assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-15), "{p:?}");
}
