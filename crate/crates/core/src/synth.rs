//! Seeded synthetic embedding datasets for benchmarks and tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::models::Dataset;

/// Two Gaussian clusters with unit-variance noise on every coordinate.
/// Class 1 is centred at `+separation` and class 0 at `-separation` on the
/// first `informative` coordinates; the rest are pure noise. Labels
/// alternate 1, 0, 1, ... and ids are `syn-<row>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianClusters {
    pub n: usize,
    pub width: usize,
    pub informative: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for GaussianClusters {
    fn default() -> Self {
        GaussianClusters {
            n: 800,
            width: 768,
            informative: 10,
            separation: 1.0,
            seed: 42,
        }
    }
}

impl GaussianClusters {
    pub fn generate(&self) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let y: Vec<u8> = (0..self.n).map(|i| u8::from(i % 2 == 0)).collect();
        let mut x = Array2::zeros((self.n, self.width));
        for (mut row, &label) in x.rows_mut().into_iter().zip(&y) {
            let shift = if label == 1 { self.separation } else { -self.separation };
            for (j, v) in row.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *v = noise + if j < self.informative { shift } else { 0.0 };
            }
        }
        let ids = (0..self.n).map(|i| format!("syn-{i}")).collect();
        Dataset::new(x, y, ids).expect("generated data is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_reproducible() {
        let g = GaussianClusters {
            n: 20,
            width: 5,
            informative: 2,
            separation: 3.0,
            seed: 1,
        };
        let a = g.generate();
        assert_eq!(a, g.generate());
        assert_eq!(a.class_counts(), (10, 10));
        assert_eq!(a.width(), 5);
        let pos_mean: f64 = a.x().rows().into_iter().zip(a.y()).filter(|(_, &l)| l == 1).map(|(r, _)| r[0]).sum::<f64>() / 10.0;
        assert!(pos_mean > 1.5);
    }
}
