//! Mid-level encoding: class-balanced descriptor sampling, per-modality GMM
//! codebooks and soft-assignment pooling.

mod gmm;

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gmm::{fit_gmm, gaussian_density, loglik, GmmCodebook, GmmFit, GmmParams, GMM_MAGIC};

use crate::corpus::BinaryLabel;
use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};

/// Dense row-major matrix of f64 training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("matrix dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        Ok(Matrix { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows_len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean of per-descriptor posteriors; lies on the probability simplex.
    #[default]
    Average,
    /// Component-wise maximum posterior.
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidLevelVector {
    pub segment_id: String,
    pub values: Vec<f64>,
    /// Set when the segment had no descriptors; `values` is then all zeros.
    pub empty: bool,
}

/// Draws `budget / 2` descriptors from each class, pooling all descriptors
/// of a class together. Falls back to sampling with replacement when a class
/// holds fewer than `budget / 2` rows.
pub fn sample_balanced(
    sets: &[(&DescriptorSet, BinaryLabel)],
    budget: usize,
    seed: u64,
) -> Result<Matrix> {
    if budget == 0 || budget % 2 != 0 {
        return Err(Error::Config(format!("sampling budget {budget} must be positive and even")));
    }
    let dim = sets
        .first()
        .map(|(s, _)| s.dim())
        .ok_or(Error::Empty("descriptor sets"))?;
    for (s, _) in sets {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.dim(),
            });
        }
    }

    let half = budget / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(budget * dim);
    for label in [BinaryLabel::Negative, BinaryLabel::Positive] {
        let pool: Vec<&[f32]> = sets
            .iter()
            .filter(|(_, l)| *l == label)
            .flat_map(|(s, _)| s.rows())
            .collect();
        if pool.is_empty() {
            return Err(Error::MissingClass(label.as_str()));
        }
        let picks: Vec<usize> = if pool.len() >= half {
            let mut idx = rand::seq::index::sample(&mut rng, pool.len(), half).into_vec();
            idx.sort_unstable();
            idx
        } else {
            log::warn!(
                "{label} class has {} descriptors for a quota of {half}; sampling with replacement",
                pool.len()
            );
            (0..half).map(|_| rng.random_range(0..pool.len())).collect()
        };
        for i in picks {
            data.extend(pool[i].iter().map(|&v| v as f64));
        }
    }
    Matrix::new(dim, data)
}

fn cmp_rows(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Pools soft-assignment posteriors over a segment's descriptors.
pub fn encode_with(codebook: &GmmCodebook, set: &DescriptorSet, pooling: Pooling) -> Result<MidLevelVector> {
    if set.dim() != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            actual: set.dim(),
        });
    }
    let mut values = vec![0.0; codebook.k];
    if set.is_empty() {
        return Ok(MidLevelVector {
            segment_id: set.segment_id().to_string(),
            values,
            empty: true,
        });
    }
    // A canonical row order keeps the floating-point sum independent of
    // descriptor order.
    let mut rows: Vec<&[f32]> = set.rows().collect();
    rows.sort_by(|a, b| cmp_rows(a, b));
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    match pooling {
        Pooling::Average => {
            codebook.accumulate_posteriors(&rows, &mut values);
            let n = rows.len() as f64;
            for v in &mut values {
                *v /= n;
            }
        }
        Pooling::Max => {
            for r in &rows {
                for (v, p) in values.iter_mut().zip(codebook.posteriors(r)?) {
                    *v = v.max(p);
                }
            }
        }
    }
    Ok(MidLevelVector {
        segment_id: set.segment_id().to_string(),
        values,
        empty: false,
    })
}

pub fn encode(codebook: &GmmCodebook, set: &DescriptorSet) -> Result<MidLevelVector> {
    encode_with(codebook, set, Pooling::Average)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Modality;

    fn two_component() -> GmmCodebook {
        GmmCodebook {
            modality: Modality::Audio,
            k: 2,
            dim: 2,
            weights: vec![0.5, 0.5],
            means: vec![-5.0, 0.0, 5.0, 0.0],
            variances: vec![1.0, 1.0, 1.0, 1.0],
        }
    }

    fn set(rows: &[[f64; 2]]) -> DescriptorSet {
        DescriptorSet::from_rows("s", 2, rows).unwrap()
    }

    #[test]
    fn symmetric_point_splits_evenly() {
        let v = encode(&two_component(), &set(&[[0.0, 3.0]])).unwrap();
        assert!((v.values[0] - 0.5).abs() < 1e-9 && (v.values[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn point_at_mean_dominates() {
        let v = encode(&two_component(), &set(&[[5.0, 0.0]])).unwrap();
        assert!(v.values[1] >= 0.99);
    }

    #[test]
    fn copies_match_single() {
        let g = two_component();
        let one = encode(&g, &set(&[[0.7, -0.2]])).unwrap();
        let many = encode(&g, &set(&[[0.7, -0.2]; 9])).unwrap();
        for (a, b) in one.values.iter().zip(&many.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_set_is_flagged_zero() {
        let v = encode(&two_component(), &DescriptorSet::empty("e", 2).unwrap()).unwrap();
        assert!(v.empty);
        assert!(v.values.iter().all(|&x| x == 0.0));
        let wrong = DescriptorSet::empty("e", 3).unwrap();
        assert!(encode(&two_component(), &wrong).is_err());
    }

    #[test]
    fn order_does_not_matter() {
        let g = two_component();
        let rows = [[0.1, 0.3], [-2.0, 1.0], [4.2, -0.5], [0.0, 0.0], [1.5, 2.5]];
        let a = encode(&g, &set(&rows)).unwrap();
        let mut rev = rows;
        rev.reverse();
        let b = encode(&g, &set(&rev)).unwrap();
        assert_eq!(a.values, b.values);
        assert!((a.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_pooling() {
        let g = two_component();
        let v = encode_with(&g, &set(&[[-5.0, 0.0], [5.0, 0.0]]), Pooling::Max).unwrap();
        assert!(v.values.iter().all(|&x| x > 0.99));
    }

    #[test]
    fn balanced_sampling_quota_and_determinism() {
        let pos = DescriptorSet::from_rows("p", 1, &(0..30).map(|i| [i as f64]).collect::<Vec<_>>()).unwrap();
        let neg = DescriptorSet::from_rows("n", 1, &(0..500).map(|i| [-(i as f64) - 1.0]).collect::<Vec<_>>()).unwrap();
        let sets = [(&pos, BinaryLabel::Positive), (&neg, BinaryLabel::Negative)];
        let m = sample_balanced(&sets, 100, 3).unwrap();
        assert_eq!(m.rows_len(), 100);
        assert_eq!(m.rows().filter(|r| r[0] >= 0.0).count(), 50);
        assert_eq!(m.rows().filter(|r| r[0] < 0.0).count(), 50);
        assert_eq!(m, sample_balanced(&sets, 100, 3).unwrap());
        // Without replacement when the class is large enough.
        let mut neg_rows: Vec<f64> = m.rows().filter(|r| r[0] < 0.0).map(|r| r[0]).collect();
        neg_rows.sort_by(f64::total_cmp);
        neg_rows.dedup();
        assert_eq!(neg_rows.len(), 50);
    }

    #[test]
    fn balanced_sampling_errors() {
        let pos = DescriptorSet::from_rows("p", 1, &[[1.0]]).unwrap();
        let empty_neg = DescriptorSet::empty("n", 1).unwrap();
        let sets = [(&pos, BinaryLabel::Positive), (&empty_neg, BinaryLabel::Negative)];
        assert!(matches!(sample_balanced(&sets, 10, 0), Err(Error::MissingClass("negative"))));
        assert!(sample_balanced(&sets, 7, 0).is_err());
    }
}
