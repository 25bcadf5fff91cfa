//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance suite. Nothing here calls into the code under test except to
//! read bundled data files.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    // Resolves from either crate of the workspace.
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

/// One column of the published confusion table plus the published metrics
/// for the same model.
#[derive(Debug, Clone, Copy)]
pub struct PublishedColumn {
    pub model: &'static str,
    pub tn: f64,
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub mcc: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

const fn col(
    model: &'static str,
    cm: [f64; 4],
    mcc: f64,
    metrics: [f64; 4],
) -> PublishedColumn {
    PublishedColumn {
        model,
        tn: cm[0],
        tp: cm[1],
        fp: cm[2],
        fn_: cm[3],
        mcc,
        accuracy: metrics[0],
        precision: metrics[1],
        recall: metrics[2],
        f1: metrics[3],
    }
}

pub const PUBLISHED: [PublishedColumn; 7] = [
    col("SVM", [0.432, 0.457, 0.025, 0.086], 0.785, [0.889, 0.949, 0.841, 0.892]),
    col("LR", [0.407, 0.469, 0.049, 0.074], 0.753, [0.877, 0.905, 0.864, 0.884]),
    col("NN", [0.358, 0.482, 0.099, 0.062], 0.676, [0.840, 0.830, 0.886, 0.857]),
    col("RF", [0.371, 0.420, 0.085, 0.124], 0.581, [0.790, 0.829, 0.773, 0.800]),
    col("GBT", [0.358, 0.420, 0.099, 0.124], 0.555, [0.778, 0.810, 0.773, 0.791]),
    col("DNN", [0.407, 0.506, 0.049, 0.037], 0.826, [0.914, 0.911, 0.932, 0.921]),
    col("GAN", [0.383, 0.482, 0.074, 0.062], 0.726, [0.864, 0.867, 0.886, 0.876]),
];

pub const PUBLISHED_TAXONOMY: [(&str, usize, &str); 10] = [
    ("UNFAIR_FEES", 106, "26%"),
    ("CHEATING_SYSTEM", 93, "23%"),
    ("NO_SERVICE", 64, "16%"),
    ("FALSE_ADVERTISEMENT", 55, "14%"),
    ("UNFAIR_CANCELLATION_REFUND", 48, "12%"),
    ("DELUSIVE_SUBSCRIPTION", 33, "8%"),
    ("FRAUDULENT_LOOKING", 29, "7%"),
    ("INACCURATE_INFORMATION", 15, "4%"),
    ("IMPERSONATION", 9, "2%"),
    ("REVIEW_DELETION", 6, "1.5%"),
];

// ---------------------------------------------------------------------------
// Finite differences

/// Central-difference gradient of `f` at `at`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

// ---------------------------------------------------------------------------
// Exhaustive CART on small integer data, exact Gini arithmetic

#[derive(Debug, Clone, PartialEq)]
pub enum OracleTree {
    /// (positives, total)
    Leaf(u32, u32),
    Split {
        feature: usize,
        /// Go left when `2 * x <= twice_threshold` (thresholds are midpoints
        /// of integers, so doubling keeps them integral).
        twice_threshold: i64,
        left: Box<OracleTree>,
        right: Box<OracleTree>,
    },
}

impl OracleTree {
    pub fn predict(&self, x: &[i64]) -> (u32, u32) {
        match self {
            OracleTree::Leaf(p, n) => (*p, *n),
            OracleTree::Split {
                feature,
                twice_threshold,
                left,
                right,
            } => {
                if 2 * x[*feature] <= *twice_threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Gini gain of a split as the exact fraction `num / den`, derived from
/// `n * gini = 2 * n0 * n1 / n`.
fn gini_gain(parent: (i128, i128), left: (i128, i128), right: (i128, i128)) -> (i128, i128) {
    let (p1, p) = parent;
    let (l1, l) = left;
    let (r1, r) = right;
    let num = (p - p1) * p1 * l * r - (l - l1) * l1 * p * r - (r - r1) * r1 * p * l;
    (num, p * l * r)
}

/// Builds the tree by trying every feature and every midpoint between
/// adjacent distinct values. A node splits while it is impure, below
/// `max_depth` and some split has strictly positive gain; among splits the
/// first strictly better one wins, features scanned in index order and
/// thresholds ascending.
pub fn exhaustive_cart(x: &[Vec<i64>], y: &[u8], max_depth: usize) -> OracleTree {
    let rows: Vec<usize> = (0..y.len()).collect();
    build(x, y, &rows, 0, max_depth)
}

fn build(x: &[Vec<i64>], y: &[u8], rows: &[usize], depth: usize, max_depth: usize) -> OracleTree {
    let n = rows.len() as i128;
    let pos = rows.iter().filter(|&&i| y[i] == 1).count() as i128;
    let leaf = OracleTree::Leaf(pos as u32, n as u32);
    if depth >= max_depth || n < 2 || pos == 0 || pos == n {
        return leaf;
    }
    let width = x[0].len();
    let mut best: Option<(usize, i64, (i128, i128))> = None;
    for f in 0..width {
        let values: BTreeSet<i64> = rows.iter().map(|&i| x[i][f]).collect();
        let values: Vec<i64> = values.into_iter().collect();
        for pair in values.windows(2) {
            let twice = pair[0] + pair[1];
            let (mut l1, mut l) = (0i128, 0i128);
            for &i in rows {
                if 2 * x[i][f] <= twice {
                    l += 1;
                    l1 += i128::from(y[i]);
                }
            }
            let gain = gini_gain((pos, n), (l1, l), (pos - l1, n - l));
            if gain.0 <= 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, _, (bn, bd))) => gain.0 * bd > bn * gain.1,
            };
            if better {
                best = Some((f, twice, gain));
            }
        }
    }
    let Some((feature, twice_threshold, _)) = best else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| 2 * x[i][feature] <= twice_threshold);
    OracleTree::Split {
        feature,
        twice_threshold,
        left: Box::new(build(x, y, &l, depth + 1, max_depth)),
        right: Box::new(build(x, y, &r, depth + 1, max_depth)),
    }
}

/// A random micro dataset: up to 16 rows, width up to 3, values in 0..5,
/// both classes present.
pub fn micro_dataset(rng: &mut ChaCha8Rng) -> (Vec<Vec<i64>>, Vec<u8>) {
    loop {
        let n = rng.random_range(2..=16);
        let d = rng.random_range(1..=3);
        let x: Vec<Vec<i64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0..5)).collect()).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        if y.contains(&0) && y.contains(&1) {
            return (x, y);
        }
    }
}

// ---------------------------------------------------------------------------
// Keyword filter ground truth

/// Vocabulary for generated reviews. Dictionary terms, words that merely
/// contain a term, stop words and neutral filler.
pub const FILTER_TERMS: [&str; 6] = ["scam", "fraud", "dishonest", "rip-off", "misleading", "cheat"];
pub const NEAR_MISSES: [&str; 6] = ["scammer", "scams", "fraudulent", "honest", "ripoff", "cheater"];
pub const STOP_WORDS: [&str; 8] = ["the", "is", "a", "it", "not", "this", "don't", "they"];
pub const FILLER: [&str; 10] = ["app", "great", "charged", "refund", "love", "support", "money", "ads", "game", "e-mail"];

const EDGE_PUNCT: [&str; 8] = ["!!", "...", "?", ",", "(", ")", "\"", ":("];
const EMOJI: [&str; 4] = ["\u{1F600}", "\u{1F621}", "\u{2764}\u{FE0F}", "\u{1F44D}\u{1F3FD}"];

/// A generated review and the set of content words it was built from.
pub struct GeneratedReview {
    pub text: String,
    pub words: Vec<&'static str>,
}

impl GeneratedReview {
    /// Ground truth for a whole-token filter: some non-stop base word is a
    /// dictionary term.
    pub fn should_match(&self, terms: &[&str]) -> bool {
        self.words.iter().any(|w| !STOP_WORDS.contains(w) && terms.contains(w))
    }
}

fn decorate(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut w: String = word
        .chars()
        .map(|c| if rng.random_bool(0.3) { c.to_ascii_uppercase() } else { c })
        .collect();
    if rng.random_bool(0.3) {
        w = format!("{}{w}", EDGE_PUNCT.choose(rng).unwrap());
    }
    if rng.random_bool(0.3) {
        w.push_str(EDGE_PUNCT.choose(rng).unwrap());
    }
    if rng.random_bool(0.15) {
        w.push_str(EMOJI.choose(rng).unwrap());
    }
    w
}

pub fn generated_review(rng: &mut ChaCha8Rng) -> GeneratedReview {
    let n = rng.random_range(0..12);
    let mut words = Vec::with_capacity(n);
    let mut pieces = Vec::with_capacity(n);
    for _ in 0..n {
        let pool: &[&'static str] = match rng.random_range(0..10) {
            0 => &FILTER_TERMS,
            1 | 2 => &NEAR_MISSES,
            3..=5 => &STOP_WORDS,
            _ => &FILLER,
        };
        let w = *pool.choose(rng).unwrap();
        words.push(w);
        pieces.push(decorate(w, rng));
        if rng.random_bool(0.1) {
            pieces.push(EMOJI.choose(rng).unwrap().to_string());
        }
    }
    let sep = [" ", "  ", "\t", "\n"];
    let mut text = String::new();
    for (i, p) in pieces.iter().enumerate() {
        if i > 0 {
            text.push_str(sep.choose(rng).unwrap());
        }
        text.push_str(p);
    }
    GeneratedReview { text, words }
}
