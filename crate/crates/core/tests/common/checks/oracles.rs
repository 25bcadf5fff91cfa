//! Equivalence against brute-force oracles: keyword filtering, single-tree
//! training and fold assignment.

use crate::common::{exhaustive_cart, generated_review, micro_dataset, GeneratedReview, OracleTree, FILTER_TERMS};
use hvd_core::corpus::{keyword_filter, stats, Corpus, KeywordDictionary, Review};
use hvd_core::eval::assign_folds;
use hvd_core::models::tree::{grow, Criterion, Presorted, TreeParams};
use hvd_core::models::{train, Dataset, Family, ModelSpec};
use hvd_core::textprep::StopWordList;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn generated_corpus(n: usize, seed: u64) -> (Corpus, Vec<GeneratedReview>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generated: Vec<_> = (0..n).map(|_| generated_review(&mut rng)).collect();
    let corpus = Corpus::from_reviews(generated.iter().enumerate().map(|(i, g)| {
        let text = if g.text.trim().is_empty() { "filler".to_string() } else { g.text.clone() };
        Review::new(format!("r{i}"), format!("app{}", i % 7), text)
    }));
    (corpus, generated)
}

pub fn keyword_filter_matches_construction_oracle_on_1000_reviews() {
    let stop = StopWordList::bundled();
    let (corpus, generated) = generated_corpus(1000, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for round in 0..5 {
        let k = rng.random_range(1..=FILTER_TERMS.len());
        let terms: Vec<&str> = rand::seq::index::sample(&mut rng, FILTER_TERMS.len(), k)
            .into_iter()
            .map(|i| FILTER_TERMS[i])
            .collect();
        let dict = KeywordDictionary::new(terms.iter().copied(), "test", "1").unwrap();
        let kept = keyword_filter(&corpus, &dict, &stop).unwrap();
        let expected: Vec<&str> = corpus
            .reviews()
            .iter()
            .zip(&generated)
            .filter(|(_, g)| g.should_match(&terms))
            .map(|(r, _)| r.id.as_str())
            .collect();
        let got: Vec<&str> = kept.reviews().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(got, expected, "round {round}, terms {terms:?}");
        assert!(!expected.is_empty() && expected.len() < corpus.len());

        let again = keyword_filter(&kept, &dict, &stop).unwrap();
        assert_eq!(again, kept, "filter is idempotent");
        assert!(stats(&kept, None, None).n_reviews <= stats(&corpus, None, None).n_reviews);
    }
}

fn to_dataset(x: &[Vec<i64>], y: &[u8]) -> Dataset {
    let d = x[0].len();
    let flat: Vec<f64> = x.iter().flatten().map(|&v| v as f64).collect();
    let ids = (0..y.len()).map(|i| format!("m{i}")).collect();
    Dataset::new(Array2::from_shape_vec((y.len(), d), flat).unwrap(), y.to_vec(), ids).unwrap()
}

fn leaf_value(t: &OracleTree, x: &[i64]) -> f64 {
    let (p, n) = t.predict(x);
    f64::from(p) / f64::from(n)
}

pub fn single_tree_matches_exhaustive_cart_on_50_micro_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let (x, y) = micro_dataset(&mut rng);
        let depth = [1, 2, 3, 20][case % 4];
        let oracle = exhaustive_cart(&x, &y, depth);
        let data = to_dataset(&x, &y);

        let spec = ModelSpec::new(Family::TreeEnsemble, case as u64)
            .with("forest_size", 1.0)
            .with("max_depth", depth as f64);
        let model = train(&spec, &data).unwrap();
        let predicted = model.predict_batch(data.x()).unwrap();
        for (i, row) in x.iter().enumerate() {
            let want = u8::from(leaf_value(&oracle, row) >= 0.5);
            assert_eq!(predicted[i], want, "case {case} row {i}: x={x:?} y={y:?}");
        }

        // The grown tree's leaf values are the oracle's leaf fractions.
        let ps = Presorted::new(data.x());
        let targets: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let params = TreeParams {
            max_depth: depth,
            ..TreeParams::default()
        };
        let grown = grow(&ps, &targets, &vec![1.0; y.len()], Criterion::Gini, params, &mut ChaCha8Rng::seed_from_u64(0));
        for (i, row) in x.iter().enumerate() {
            let xf: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            assert_eq!(grown.tree.predict(&xf), leaf_value(&oracle, row), "case {case} row {i}");
        }
    }
}

pub fn folds_are_balanced_and_cover_every_example_on_100_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let k = rng.random_range(2..=20);
        let n = rng.random_range(k..=400);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        for stratified in [true, false] {
            let folds = assign_folds(&labels, k, case, stratified).unwrap();
            assert_eq!(folds.len(), n);
            let mut sizes = vec![0usize; k];
            let mut per_class = vec![[0usize; 2]; k];
            for (i, &f) in folds.iter().enumerate() {
                assert!(f < k);
                sizes[f] += 1;
                per_class[f][labels[i] as usize] += 1;
            }
            let spread = |v: &mut dyn Iterator<Item = usize>| {
                let v: Vec<usize> = v.collect();
                v.iter().max().unwrap() - v.iter().min().unwrap()
            };
            assert!(spread(&mut sizes.iter().copied()) <= 1, "n={n} k={k} sizes={sizes:?}");
            // Coverage: each index is in exactly one held-out fold.
            assert_eq!(sizes.iter().sum::<usize>(), n);
            if stratified {
                for c in 0..2 {
                    assert!(spread(&mut per_class.iter().map(|p| p[c])) <= 1, "n={n} k={k} class {c}");
                }
            }
            assert_eq!(folds, assign_folds(&labels, k, case, stratified).unwrap());
        }
    }
}
