//! Diagonal-covariance Gaussian mixture fitted by EM, seeded with greedy
//! k-means++ and a few Lloyd iterations.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::corpus::Modality;
use crate::error::{Error, Result};

pub const GMM_MAGIC: &[u8; 4] = b"GMM1";

/// Rows per reduction chunk. Fixed so sums are identical for any thread count.
const CHUNK_ROWS: usize = 2048;
const MIN_WEIGHT: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5; // ln(2*pi)

#[derive(Debug, Clone, PartialEq)]
pub struct GmmCodebook {
    pub modality: Modality,
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    /// `k x dim`, row-major.
    pub means: Vec<f64>,
    /// `k x dim`, row-major.
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmParams {
    pub components: usize,
    pub max_iters: usize,
    /// Relative log-likelihood gain below which EM stops.
    pub tol: f64,
    pub kmeans_iters: usize,
    /// Variance floor as a fraction of the mean per-dimension data variance.
    pub variance_floor_ratio: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            components: 256,
            max_iters: 100,
            tol: 1e-5,
            kmeans_iters: 10,
            variance_floor_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub codebook: GmmCodebook,
    /// Log-likelihood of the training data before each M-step, ending with
    /// the returned parameters.
    pub loglik_trace: Vec<f64>,
    pub variance_floor: f64,
}

/// Per-component constants for fast log-density evaluation.
struct Evaluator<'a> {
    gmm: &'a GmmCodebook,
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(gmm: &'a GmmCodebook) -> Self {
        let log_norm = (0..gmm.k)
            .map(|k| {
                let vars = &gmm.variances[k * gmm.dim..(k + 1) * gmm.dim];
                let log_det: f64 = vars.iter().map(|v| v.ln()).sum();
                gmm.weights[k].ln() - 0.5 * (gmm.dim as f64 * LN_2PI + log_det)
            })
            .collect();
        let inv_var = gmm.variances.iter().map(|v| 1.0 / v).collect();
        Evaluator {
            gmm,
            log_norm,
            inv_var,
        }
    }

    /// Writes `log(w_k N(x; mu_k, var_k))` into `out` and returns the
    /// log-sum-exp over components.
    fn joint(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let d = self.gmm.dim;
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.gmm.k {
            let mean = &self.gmm.means[k * d..(k + 1) * d];
            let iv = &self.inv_var[k * d..(k + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let diff = x[j] - mean[j];
                q += diff * diff * iv[j];
            }
            let lp = self.log_norm[k] - 0.5 * q;
            out[k] = lp;
            if lp > max {
                max = lp;
            }
        }
        if !max.is_finite() {
            return max;
        }
        let s: f64 = out.iter().map(|lp| (lp - max).exp()).sum();
        max + s.ln()
    }
}

impl GmmCodebook {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::format("GMM1", m);
        if self.k == 0 || self.dim == 0 {
            return Err(bad("empty codebook".into()));
        }
        if self.weights.len() != self.k
            || self.means.len() != self.k * self.dim
            || self.variances.len() != self.k * self.dim
        {
            return Err(bad("parameter lengths disagree with k and dim".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(bad("weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad(format!("weights sum to {total}")));
        }
        if self.variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(bad("variances must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(bad("non-finite mean".into()));
        }
        Ok(())
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// Component posteriors for a single descriptor.
    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let eval = Evaluator::new(self);
        let mut lp = vec![0.0; self.k];
        let total = eval.joint(x, &mut lp);
        Ok(lp.iter().map(|l| (l - total).exp()).collect())
    }

    pub(crate) fn accumulate_posteriors(&self, rows: &[Vec<f64>], acc: &mut [f64]) {
        let eval = Evaluator::new(self);
        let mut lp = vec![0.0; self.k];
        for row in rows {
            let total = eval.joint(row, &mut lp);
            for (a, l) in acc.iter_mut().zip(&lp) {
                *a += (l - total).exp();
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 8 * (self.k * (2 * self.dim + 1)));
        out.extend_from_slice(GMM_MAGIC);
        out.write_u32::<LittleEndian>(self.k as u32).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        out.write_u8(self.modality.tag()).unwrap();
        for v in self.weights.iter().chain(&self.means).chain(&self.variances) {
            out.write_f64::<LittleEndian>(*v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::format("GMM1", m.to_string());
        if bytes.len() < 13 || &bytes[..4] != GMM_MAGIC {
            return Err(fail("bad magic or truncated header"));
        }
        let mut cur = &bytes[4..];
        let k = cur.read_u32::<LittleEndian>().map_err(|_| fail("truncated"))? as usize;
        let dim = cur.read_u32::<LittleEndian>().map_err(|_| fail("truncated"))? as usize;
        let modality = Modality::from_tag(cur.read_u8().map_err(|_| fail("truncated"))?)
            .ok_or_else(|| fail("unknown modality tag"))?;
        let n = (k as u128) * (2 * dim as u128 + 1);
        if n * 8 != cur.len() as u128 {
            return Err(fail("body length disagrees with header"));
        }
        let vals: Vec<f64> = cur
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (weights, rest) = vals.split_at(k);
        let (means, variances) = rest.split_at(k * dim);
        let gmm = GmmCodebook {
            modality,
            k,
            dim,
            weights: weights.to_vec(),
            means: means.to_vec(),
            variances: variances.to_vec(),
        };
        gmm.validate()?;
        Ok(gmm)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Total log-likelihood `sum_i log sum_k w_k N(x_i; mu_k, var_k)`.
pub fn loglik(codebook: &GmmCodebook, data: &Matrix) -> Result<f64> {
    if data.dim() != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            actual: data.dim(),
        });
    }
    let eval = Evaluator::new(codebook);
    let partial: Vec<f64> = data
        .data()
        .par_chunks(CHUNK_ROWS * data.dim())
        .map(|chunk| {
            let mut lp = vec![0.0; codebook.k];
            chunk
                .chunks_exact(data.dim())
                .map(|x| eval.joint(x, &mut lp))
                .sum::<f64>()
        })
        .collect();
    Ok(partial.iter().sum())
}

#[derive(Clone)]
struct Stats {
    loglik: f64,
    resp: Vec<f64>,
    // Responsibility-weighted first and second moments about the current means.
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Stats {
    fn zeros(k: usize, dim: usize) -> Self {
        Stats {
            loglik: 0.0,
            resp: vec![0.0; k],
            first: vec![0.0; k * dim],
            second: vec![0.0; k * dim],
        }
    }

    fn add(&mut self, other: &Stats) {
        self.loglik += other.loglik;
        for (a, b) in self.resp.iter_mut().zip(&other.resp) {
            *a += b;
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
    }
}

fn e_step(gmm: &GmmCodebook, data: &Matrix) -> Stats {
    let (k, d) = (gmm.k, gmm.dim);
    let eval = Evaluator::new(gmm);
    let chunks: Vec<Stats> = data
        .data()
        .par_chunks(CHUNK_ROWS * d)
        .map(|chunk| {
            let mut st = Stats::zeros(k, d);
            let mut lp = vec![0.0; k];
            for x in chunk.chunks_exact(d) {
                let total = eval.joint(x, &mut lp);
                st.loglik += total;
                for c in 0..k {
                    let r = (lp[c] - total).exp();
                    if r == 0.0 {
                        continue;
                    }
                    st.resp[c] += r;
                    let mean = &gmm.means[c * d..(c + 1) * d];
                    let first = &mut st.first[c * d..(c + 1) * d];
                    let second = &mut st.second[c * d..(c + 1) * d];
                    for j in 0..d {
                        let diff = x[j] - mean[j];
                        first[j] += r * diff;
                        second[j] += r * diff * diff;
                    }
                }
            }
            st
        })
        .collect();
    let mut total = Stats::zeros(k, d);
    for c in &chunks {
        total.add(c);
    }
    total
}

fn m_step(gmm: &GmmCodebook, stats: &Stats, n: usize, floor: f64) -> GmmCodebook {
    let (k, d) = (gmm.k, gmm.dim);
    let mut next = gmm.clone();
    for c in 0..k {
        let nk = stats.resp[c];
        next.weights[c] = (nk / n as f64).max(MIN_WEIGHT);
        if nk < 1e-10 {
            continue;
        }
        for j in 0..d {
            let shift = stats.first[c * d + j] / nk;
            next.means[c * d + j] = gmm.means[c * d + j] + shift;
            let var = stats.second[c * d + j] / nk - shift * shift;
            next.variances[c * d + j] = var.max(floor);
        }
    }
    let total: f64 = next.weights.iter().sum();
    for w in &mut next.weights {
        *w /= total;
    }
    next
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++: each new centre is the best of several D^2-sampled
/// candidates by resulting potential.
fn kmeans_pp(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut centres = vec![rows[first].to_vec()];
    let mut closest: Vec<f64> = rows.iter().map(|r| sq_dist(r, rows[first])).collect();
    while centres.len() < k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let idx = if potential > 0.0 {
                let target = rng.random::<f64>() * potential;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, d) in closest.iter().enumerate() {
                    acc += d;
                    if acc > target {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = rows
                .iter()
                .zip(&closest)
                .map(|(r, &c)| c.min(sq_dist(r, rows[idx])))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| pot < *p) {
                best = Some((pot, idx, updated));
            }
        }
        let (_, idx, updated) = best.expect("at least one trial");
        centres.push(rows[idx].to_vec());
        closest = updated;
    }
    centres
}

fn nearest(centres: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centres.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Cluster sums, squared sums and counts for the nearest-centre assignment.
fn lloyd_stats(data: &Matrix, centres: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let (k, d) = (centres.len(), data.dim());
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<usize>)> = data
        .data()
        .par_chunks(CHUNK_ROWS * d)
        .map(|chunk| {
            let mut sum = vec![0.0; k * d];
            let mut sq = vec![0.0; k * d];
            let mut count = vec![0usize; k];
            for x in chunk.chunks_exact(d) {
                let c = nearest(centres, x);
                count[c] += 1;
                for j in 0..d {
                    sum[c * d + j] += x[j];
                    sq[c * d + j] += x[j] * x[j];
                }
            }
            (sum, sq, count)
        })
        .collect();
    let mut sum = vec![0.0; k * d];
    let mut sq = vec![0.0; k * d];
    let mut count = vec![0usize; k];
    for (s, q, c) in &parts {
        for i in 0..k * d {
            sum[i] += s[i];
            sq[i] += q[i];
        }
        for i in 0..k {
            count[i] += c[i];
        }
    }
    (sum, sq, count)
}

fn count_distinct_up_to(data: &Matrix, limit: usize) -> usize {
    let mut seen = HashSet::new();
    for row in data.rows() {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        seen.insert(key);
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

pub fn fit_gmm(data: &Matrix, modality: Modality, params: &GmmParams, seed: u64) -> Result<GmmFit> {
    let k = params.components;
    let (n, d) = (data.rows_len(), data.dim());
    if k == 0 {
        return Err(Error::Config("component count must be positive".into()));
    }
    if n == 0 {
        return Err(Error::Empty("GMM training data"));
    }
    if n < 10 * k {
        return Err(Error::InsufficientData(format!(
            "{n} rows for {k} components (need at least {})",
            10 * k
        )));
    }
    if data.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("non-finite training value".into()));
    }
    if count_distinct_up_to(data, k) < k {
        return Err(Error::InsufficientData(format!(
            "fewer than {k} distinct rows"
        )));
    }

    let mut mean = vec![0.0; d];
    for row in data.rows() {
        for j in 0..d {
            mean[j] += row[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for row in data.rows() {
        for j in 0..d {
            var[j] += (row[j] - mean[j]).powi(2);
        }
    }
    let mean_var = var.iter().sum::<f64>() / (n as f64 * d as f64);
    let floor = params.variance_floor_ratio * mean_var;
    if !(floor > 0.0) {
        return Err(Error::Degenerate("training data has zero variance".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Seed on a bounded subsample; Lloyd refinement then uses every row.
    let seed_rows: Vec<&[f64]> = {
        let cap = (100 * k).max(10_000);
        if n <= cap {
            data.rows().collect()
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| data.row(i)).collect()
        }
    };
    let mut centres = kmeans_pp(&seed_rows, k, &mut rng);

    let mut stats = lloyd_stats(data, &centres);
    for _ in 0..params.kmeans_iters {
        let (sum, _, count) = &stats;
        for c in 0..k {
            if count[c] > 0 {
                for j in 0..d {
                    centres[c][j] = sum[c * d + j] / count[c] as f64;
                }
            }
        }
        stats = lloyd_stats(data, &centres);
    }

    let (sum, sq, count) = stats;
    let mut gmm = GmmCodebook {
        modality,
        k,
        dim: d,
        weights: vec![0.0; k],
        means: vec![0.0; k * d],
        variances: vec![0.0; k * d],
    };
    for c in 0..k {
        gmm.weights[c] = (count[c] as f64 / n as f64).max(MIN_WEIGHT);
        for j in 0..d {
            let idx = c * d + j;
            if count[c] > 0 {
                let m = sum[idx] / count[c] as f64;
                gmm.means[idx] = m;
                gmm.variances[idx] = (sq[idx] / count[c] as f64 - m * m).max(floor);
            } else {
                gmm.means[idx] = centres[c][j];
                gmm.variances[idx] = (var[j] / n as f64).max(floor);
            }
        }
    }
    let total: f64 = gmm.weights.iter().sum();
    for w in &mut gmm.weights {
        *w /= total;
    }

    let mut trace = Vec::new();
    loop {
        let st = e_step(&gmm, data);
        let ll = st.loglik;
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < params.tol);
        trace.push(ll);
        if converged || trace.len() > params.max_iters {
            break;
        }
        gmm = m_step(&gmm, &st, n, floor);
    }

    gmm.validate()?;
    Ok(GmmFit {
        codebook: gmm,
        loglik_trace: trace,
        variance_floor: floor,
    })
}

/// Direct evaluation of a diagonal Gaussian density, for reference checks.
pub fn gaussian_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
        .product()
}
