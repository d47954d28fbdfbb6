//! Linear SVM confidences: an L2-regularised hinge-loss SVM trained in the
//! dual, C chosen by stratified k-fold cross-validation, and min-max
//! normalised boundary distances.

use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::BinaryLabel;
use crate::error::{Error, Result};

pub const SVM_MAGIC: &[u8; 4] = b"SVM1";

/// Gram matrices are cached up to this many samples.
const GRAM_LIMIT: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub folds: usize,
    /// Candidate C values are `2^e` for `e` in `c_exp_min..=c_exp_max`.
    pub c_exp_min: i32,
    pub c_exp_max: i32,
    pub max_epochs: usize,
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            folds: 5,
            c_exp_min: -3,
            c_exp_max: 15,
            max_epochs: 1000,
            tol: 1e-6,
        }
    }
}

impl SvmConfig {
    pub fn c_grid(&self) -> Vec<f64> {
        (self.c_exp_min..=self.c_exp_max).map(|e| 2f64.powi(e)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("at least two folds are required".into()));
        }
        if self.c_exp_min > self.c_exp_max {
            return Err(Error::Config("empty C grid".into()));
        }
        if self.max_epochs == 0 || !(self.tol > 0.0) {
            return Err(Error::Config("solver budget and tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub score_min: f64,
    pub score_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceScore(f64);

impl ConfidenceScore {
    /// Clamps into `[0, 1]`; NaN maps to 0.5.
    pub fn new(v: f64) -> Self {
        if v.is_nan() {
            ConfidenceScore(0.5)
        } else {
            ConfidenceScore(v.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_inputs(x: &[Vec<f64>], y: &[BinaryLabel]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("SVM training data"));
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: 0,
        });
    }
    for r in x {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InsufficientData("non-finite feature value".into()));
        }
    }
    for label in [BinaryLabel::Positive, BinaryLabel::Negative] {
        if !y.contains(&label) {
            return Err(Error::MissingClass(label.as_str()));
        }
    }
    Ok(dim)
}

/// Unnormalised fit: `(w, b)`.
struct RawFit {
    w: Vec<f64>,
    b: f64,
}

/// Dual solver over pairs of coordinates. The first coordinate follows a
/// seeded permutation each epoch; its partner is the most violating index on
/// the opposite side. Stops when the maximal KKT violation drops below `tol`.
fn solve_dual(x: &[Vec<f64>], y: &[f64], c: f64, seed: u64, max_epochs: usize, tol: f64) -> Vec<f64> {
    let n = x.len();
    let gram: Option<Vec<f64>> = (n <= GRAM_LIMIT).then(|| {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = dot(&x[i], &x[j]);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        g
    });
    let kernel = |i: usize, j: usize| match &gram {
        Some(g) => g[i * n + j],
        None => dot(&x[i], &x[j]),
    };

    let mut alpha = vec![0.0; n];
    // Gradient of 0.5 a'Qa - e'a.
    let mut grad = vec![-1.0; n];
    let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..max_epochs {
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) {
                m_up = m_up.max(v);
            }
            if low(alpha[t], y[t]) {
                m_low = m_low.min(v);
            }
        }
        if m_up - m_low < tol {
            break;
        }
        order.shuffle(&mut rng);
        for &first in &order {
            let v_first = -y[first] * grad[first];
            // Pick the partner that maximises the violation with `first`.
            let (i, j) = {
                let mut best: Option<(f64, usize)> = None;
                let first_up = up(alpha[first], y[first]);
                let first_low = low(alpha[first], y[first]);
                for t in 0..n {
                    if t == first {
                        continue;
                    }
                    let v = -y[t] * grad[t];
                    if first_up && low(alpha[t], y[t]) && v_first - v > tol {
                        let gap = v_first - v;
                        if best.is_none_or(|(g, _)| gap > g) {
                            best = Some((gap, t));
                        }
                    }
                    if first_low && up(alpha[t], y[t]) && v - v_first > tol {
                        let gap = v - v_first;
                        if best.is_none_or(|(g, _)| gap > g) {
                            best = Some((gap, t));
                        }
                    }
                }
                match best {
                    None => continue,
                    Some((_, t)) if -y[t] * grad[t] < v_first => (first, t),
                    Some((_, t)) => (t, first),
                }
            };
            // Move y_i a_i up by s and y_j a_j down by s.
            let eta = (kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j)).max(1e-12);
            let mut s = (-y[i] * grad[i] + y[j] * grad[j]) / eta;
            s = s.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
            s = s.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });
            if !(s > 0.0) {
                continue;
            }
            alpha[i] = (alpha[i] + y[i] * s).clamp(0.0, c);
            alpha[j] = (alpha[j] - y[j] * s).clamp(0.0, c);
            for k in 0..n {
                grad[k] += y[k] * s * (kernel(k, i) - kernel(k, j));
            }
        }
    }
    alpha
}

/// Bias minimising the total hinge loss for fixed `w`. The loss is convex
/// and piecewise linear in `b`; a flat optimum resolves to its midpoint.
fn optimal_bias(margins: &[f64], y: &[f64]) -> f64 {
    let mut points: Vec<f64> = margins.iter().zip(y).map(|(s, y)| y - s).collect();
    points.sort_by(f64::total_cmp);
    let positives = y.iter().filter(|&&v| v > 0.0).count() as i64;
    let mut slope = -positives;
    let mut k = 0;
    while k < points.len() {
        let q = points[k];
        while k < points.len() && points[k] == q {
            slope += 1;
            k += 1;
        }
        if slope > 0 {
            return q;
        }
        if slope == 0 {
            return match points.get(k) {
                Some(&next) => 0.5 * (q + next),
                None => q,
            };
        }
    }
    points.last().copied().unwrap_or(0.0)
}

fn fit_raw(x: &[Vec<f64>], y: &[BinaryLabel], c: f64, seed: u64, cfg: &SvmConfig) -> RawFit {
    let ys: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let alpha = solve_dual(x, &ys, c, seed, cfg.max_epochs, cfg.tol);
    let dim = x[0].len();
    let mut w = vec![0.0; dim];
    for ((a, yi), xi) in alpha.iter().zip(&ys).zip(x) {
        if *a != 0.0 {
            for (wj, xj) in w.iter_mut().zip(xi) {
                *wj += a * yi * xj;
            }
        }
    }
    let margins: Vec<f64> = x.iter().map(|xi| dot(&w, xi)).collect();
    let b = optimal_bias(&margins, &ys);
    RawFit { w, b }
}

/// Primal objective `0.5 |w|^2 + C sum hinge`.
pub fn primal_objective(w: &[f64], b: f64, c: f64, x: &[Vec<f64>], y: &[BinaryLabel]) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (1.0 - yi.sign() * (dot(w, xi) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * hinge
}

pub fn train_svm_with(
    x: &[Vec<f64>],
    y: &[BinaryLabel],
    c: f64,
    seed: u64,
    cfg: &SvmConfig,
) -> Result<LinearSvmModel> {
    check_inputs(x, y)?;
    if x.len() < 2 {
        return Err(Error::InsufficientData("at least two samples required".into()));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    let fit = fit_raw(x, y, c, seed, cfg);
    let norm = dot(&fit.w, &fit.w).sqrt();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("trained weight vector is zero".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for xi in x {
        let d = (dot(&fit.w, xi) + fit.b) / norm;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo < hi) {
        return Err(Error::Degenerate("training distances have no spread".into()));
    }
    Ok(LinearSvmModel {
        w: fit.w,
        b: fit.b,
        c,
        score_min: lo,
        score_max: hi,
    })
}

pub fn train_svm(x: &[Vec<f64>], y: &[BinaryLabel], c: f64, seed: u64) -> Result<LinearSvmModel> {
    train_svm_with(x, y, c, seed, &SvmConfig::default())
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[BinaryLabel], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    for label in [BinaryLabel::Positive, BinaryLabel::Negative] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
        if idx.len() < folds {
            return Err(Error::InsufficientData(format!(
                "{} {label} samples cannot fill {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub selected_c: f64,
    /// `(C, mean fold accuracy)` for every grid value, in grid order.
    pub scores: Vec<(f64, f64)>,
}

pub fn cross_validate_c(
    x: &[Vec<f64>],
    y: &[BinaryLabel],
    grid: &[f64],
    seed: u64,
    cfg: &SvmConfig,
) -> Result<CvResult> {
    check_inputs(x, y)?;
    if grid.is_empty() {
        return Err(Error::Config("empty C grid".into()));
    }
    let folds = stratified_folds(y, cfg.folds, seed)?;
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|ci| (0..cfg.folds).map(move |f| (ci, f)))
        .collect();
    let accuracies: Vec<f64> = tasks
        .par_iter()
        .map(|&(ci, f)| {
            let (mut tx, mut ty, mut vx, mut vy) = (vec![], vec![], vec![], vec![]);
            for i in 0..x.len() {
                if folds[i] == f {
                    vx.push(&x[i]);
                    vy.push(y[i]);
                } else {
                    tx.push(x[i].clone());
                    ty.push(y[i]);
                }
            }
            let fit = fit_raw(&tx, &ty, grid[ci], seed, cfg);
            let correct = vx
                .iter()
                .zip(&vy)
                .filter(|(xi, yi)| BinaryLabel::from_bool(dot(&fit.w, xi) + fit.b > 0.0) == **yi)
                .count();
            correct as f64 / vx.len() as f64
        })
        .collect();
    let scores: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(ci, &c)| {
            let acc = &accuracies[ci * cfg.folds..(ci + 1) * cfg.folds];
            (c, acc.iter().sum::<f64>() / cfg.folds as f64)
        })
        .collect();
    let mut best = scores[0];
    for &(c, acc) in &scores[1..] {
        if acc > best.1 || (acc == best.1 && c < best.0) {
            best = (c, acc);
        }
    }
    Ok(CvResult {
        selected_c: best.0,
        scores,
    })
}

impl LinearSvmModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                actual: x.len(),
            });
        }
        Ok(dot(&self.w, x) + self.b)
    }

    pub fn predict(&self, x: &[f64]) -> Result<BinaryLabel> {
        Ok(BinaryLabel::from_bool(self.decision_value(x)? > 0.0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.w.len());
        out.extend_from_slice(SVM_MAGIC);
        out.write_u32::<LittleEndian>(self.w.len() as u32).unwrap();
        for v in [self.b, self.c, self.score_min, self.score_max].iter().chain(&self.w) {
            out.write_f64::<LittleEndian>(*v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::format("SVM1", m.to_string());
        if bytes.len() < 8 || &bytes[..4] != SVM_MAGIC {
            return Err(fail("bad magic or truncated header"));
        }
        let mut cur = &bytes[4..];
        let dim = cur.read_u32::<LittleEndian>().map_err(|_| fail("truncated"))? as usize;
        if (dim as u128 + 4) * 8 != cur.len() as u128 {
            return Err(fail("body length disagrees with header"));
        }
        let vals: Vec<f64> = cur
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite parameter"));
        }
        let model = LinearSvmModel {
            b: vals[0],
            c: vals[1],
            score_min: vals[2],
            score_max: vals[3],
            w: vals[4..].to_vec(),
        };
        if dim == 0 || !(model.score_min < model.score_max) || !(model.c > 0.0) {
            return Err(fail("degenerate model"));
        }
        Ok(model)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Signed Euclidean distance from the decision boundary.
pub fn decision_distance(model: &LinearSvmModel, x: &[f64]) -> Result<f64> {
    let norm = dot(&model.w, &model.w).sqrt();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("weight vector is zero".into()));
    }
    Ok(model.decision_value(x)? / norm)
}

pub fn normalize_score(model: &LinearSvmModel, distance: f64) -> ConfidenceScore {
    ConfidenceScore::new((distance - model.score_min) / (model.score_max - model.score_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryLabel::{Negative as N, Positive as P};

    fn model(w: Vec<f64>, b: f64) -> LinearSvmModel {
        LinearSvmModel {
            w,
            b,
            c: 1.0,
            score_min: -2.0,
            score_max: 2.0,
        }
    }

    #[test]
    fn distance_arithmetic() {
        let m = model(vec![2.0, 0.0], 0.0);
        assert_eq!(decision_distance(&m, &[3.0, 5.0]).unwrap(), 3.0);
        assert_eq!(decision_distance(&m, &[-3.0, 5.0]).unwrap(), -3.0);
        assert_eq!(decision_distance(&m, &[0.0, 1.0]).unwrap(), 0.0);
        assert!(decision_distance(&m, &[1.0]).is_err());
        assert!(decision_distance(&model(vec![0.0, 0.0], 1.0), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn normalisation_clamps() {
        let m = model(vec![1.0], 0.0);
        assert_eq!(normalize_score(&m, -2.0).value(), 0.0);
        assert_eq!(normalize_score(&m, 2.0).value(), 1.0);
        assert_eq!(normalize_score(&m, 7.0).value(), 1.0);
        assert_eq!(normalize_score(&m, -9.0).value(), 0.0);
        assert_eq!(normalize_score(&m, 0.0).value(), 0.5);
    }

    #[test]
    fn symmetric_pair() {
        let x = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let m = train_svm(&x, &[N, P], 1000.0, 0).unwrap();
        assert_eq!(m.predict(&x[0]).unwrap(), N);
        assert_eq!(m.predict(&x[1]).unwrap(), P);
        assert!(m.w[0] > 0.0 && m.w[1].abs() < 1e-9 * m.w[0]);
        assert!((m.w[0] - 1.0).abs() < 1e-6 && m.b.abs() < 1e-9);
    }

    #[test]
    fn bias_midpoint_on_flat_optimum() {
        // Margins already separate; any b in [-1, 1] has zero loss.
        let b = optimal_bias(&[2.0, -2.0], &[1.0, -1.0]);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn rejects_bad_training_input() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train_svm(&x, &[P, P], 1.0, 0), Err(Error::MissingClass("negative"))));
        assert!(train_svm(&[], &[], 1.0, 0).is_err());
        assert!(train_svm(&x, &[P], 1.0, 0).is_err());
    }

    #[test]
    fn grid_has_nineteen_values() {
        let g = SvmConfig::default().c_grid();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.125);
        assert_eq!(g[18], 32768.0);
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<BinaryLabel> = (0..23).map(|i| BinaryLabel::from_bool(i % 3 == 0)).collect();
        let f = stratified_folds(&y, 5, 1).unwrap();
        for fold in 0..5 {
            assert!((0..23).any(|i| f[i] == fold && y[i] == P));
            assert!((0..23).any(|i| f[i] == fold && y[i] == N));
        }
        assert!(stratified_folds(&y[..6], 5, 1).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = model(vec![0.25, -1.5, 3.0], 0.1);
        assert_eq!(LinearSvmModel::from_bytes(&m.to_bytes()).unwrap(), m);
        let bytes = m.to_bytes();
        assert!(LinearSvmModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(LinearSvmModel::from_bytes(b"SVM0\0\0\0\0").is_err());
    }
}
