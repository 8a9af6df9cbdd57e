//! Centered Gaussian vectors indexed by a finite set, and Monte Carlo
//! estimators of the supremum, the argmax law, and the increment modulus.
//!
//! Sample `i` of seed `s` is `L z` where `L` is a lower-triangular factor of
//! the covariance and `z` is drawn from the stream `(s, i)`. Estimators map
//! samples in parallel, collect per-sample values in index order and reduce
//! sequentially, so their output does not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{IntegrandMode, NeighborIndex, ProbabilityMeasure};
use crate::metric::{check_covariance, greedy_packing, FiniteMetricSpace, Separation};
use crate::rng::{mean_stderr, StreamKey};
use crate::search::{maximize_m_self, SearchConfig};

pub const JITTER_START: f64 = 1e-12;
pub const JITTER_MAX: f64 = 1e-6;
const RECONSTRUCTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GaussianModel {
    n: usize,
    cov: Vec<f64>,
    /// lower-triangular, row-major
    factor: Vec<f64>,
    jitter: f64,
    diagonal: bool,
    space: FiniteMetricSpace,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky factor of `c + jitter I`, allowing zero pivots: a pivot that is
/// zero up to rounding yields a zero column.
fn semidefinite_cholesky(c: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| c[i * n + i]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let pivot_tol = 1e-12 * scale;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let d = c[j * n + j] + jitter - (0..j).map(|k| l[j * n + k] * l[j * n + k]).sum::<f64>();
        if d > pivot_tol {
            let ljj = d.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
                l[i * n + j] = (c[i * n + j] - s) / ljj;
            }
        } else if d < -1e-8 * scale {
            return None;
        }
    }
    Some(l)
}

fn reconstruction_error(c: &[f64], l: &[f64], n: usize) -> f64 {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut worst: f64 = 0.0;
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| l[i * n + k] * l[j * n + k]).sum();
                worst = worst.max((s - c[i * n + j]).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

impl GaussianModel {
    /// Validates a covariance matrix and factors it, escalating the diagonal
    /// jitter from `JITTER_START` by doubling up to `JITTER_MAX` when the plain
    /// semidefinite factorization fails its reconstruction check.
    pub fn new(cov: Vec<Vec<f64>>) -> Result<Self> {
        check_covariance(&cov)?;
        let space = FiniteMetricSpace::from_covariance(&cov)?;
        let n = cov.len();
        let flat: Vec<f64> = cov.into_iter().flatten().collect();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || flat[i * n + j] == 0.0));
        if diagonal {
            let mut factor = vec![0.0; n * n];
            for i in 0..n {
                factor[i * n + i] = flat[i * n + i].max(0.0).sqrt();
            }
            return Ok(Self { n, cov: flat, factor, jitter: 0.0, diagonal, space });
        }
        let bound = RECONSTRUCTION_TOL * (1.0 + max_abs(&flat));
        let mut jitter = 0.0;
        let mut last_error = f64::INFINITY;
        loop {
            if let Some(l) = semidefinite_cholesky(&flat, n, jitter) {
                last_error = reconstruction_error(&flat, &l, n);
                if last_error <= bound {
                    return Ok(Self { n, cov: flat, factor: l, jitter, diagonal, space });
                }
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 2.0 };
            if jitter > JITTER_MAX {
                return Err(Error::Factorization { jitter: JITTER_MAX, error: last_error });
            }
        }
    }

    /// Linear model `X(t) = <x_t, g>`: the covariance is the Gram matrix.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        FiniteMetricSpace::from_points(points)?;
        let gram = points
            .iter()
            .map(|a| points.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
            .collect();
        Self::new(gram)
    }

    /// A process whose canonical distance is the given metric, anchored so
    /// that `X(t_0) = 0`. Fails with `NotPsd` when the metric does not embed
    /// isometrically in Euclidean space.
    pub fn from_space(space: &FiniteMetricSpace) -> Result<Self> {
        let n = space.n();
        let cov = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let (a, b, c) = (space.dist(0, i), space.dist(0, j), space.dist(i, j));
                        (a * a + b * b - c * c) / 2.0
                    })
                    .collect()
            })
            .collect();
        Self::new(cov)
    }

    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(Error::InvalidParameter(format!("index {bad} out of range")));
        }
        Self::new(indices.iter().map(|&i| indices.iter().map(|&j| self.covariance(i, j)).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.n + j]
    }

    pub fn covariance_matrix(&self) -> Vec<Vec<f64>> {
        self.cov.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn factor(&self, i: usize, j: usize) -> f64 {
        self.factor[i * self.n + j]
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn space(&self) -> &FiniteMetricSpace {
        &self.space
    }

    /// `‖L Lᵀ − C‖_max`.
    pub fn reconstruction_error(&self) -> f64 {
        reconstruction_error(&self.cov, &self.factor, self.n)
    }

    /// Writes sample `index` into `out`, using `z` as scratch.
    pub fn sample_into(&self, key: &StreamKey, index: u64, z: &mut [f64], out: &mut [f64]) {
        key.fill_normals(index, z);
        let n = self.n;
        if self.diagonal {
            for i in 0..n {
                out[i] = self.factor[i * n + i] * z[i];
            }
            return;
        }
        for i in 0..n {
            let row = &self.factor[i * n..i * n + i + 1];
            out[i] = row.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
        }
    }

    /// Samples `0..n_samples` of `seed` in order.
    pub fn sample_paths(&self, n_samples: usize, seed: u64) -> impl Iterator<Item = Vec<f64>> + '_ {
        let key = StreamKey::new(seed);
        let mut z = vec![0.0; self.n];
        (0..n_samples as u64).map(move |i| {
            let mut out = vec![0.0; self.n];
            self.sample_into(&key, i, &mut z, &mut out);
            out
        })
    }

    /// Applies `f` to every sample and returns the results in index order.
    pub fn map_samples<T, F>(&self, n_samples: usize, seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync,
    {
        let key = StreamKey::new(seed);
        let n = self.n;
        (0..n_samples as u64)
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0.0; n]),
                |(z, x), i| {
                    self.sample_into(&key, i, z, x);
                    f(x)
                },
            )
            .collect()
    }
}

/// All samples of one seed held in memory, shared by every set-functional
/// evaluation of a partition build.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    n: usize,
    n_samples: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn generate(model: &GaussianModel, n_samples: usize, seed: u64) -> Self {
        let n = model.n();
        let key = StreamKey::new(seed);
        let mut data = vec![0.0; n * n_samples];
        if n > 0 {
            data.par_chunks_mut(n).enumerate().for_each_init(
                || vec![0.0; n],
                |z, (i, row)| model.sample_into(&key, i as u64, z, row),
            );
        }
        Self { n, n_samples, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Per-sample maxima over `members`.
    pub fn maxima(&self, members: &[usize]) -> Vec<f64> {
        (0..self.n_samples)
            .map(|i| {
                let row = self.row(i);
                members.iter().map(|&t| row[t]).fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupremumEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxDistribution {
    pub measure: ProbabilityMeasure,
    /// samples whose maximum was attained at more than one index
    pub tie_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusEstimate {
    pub delta: f64,
    pub value: f64,
    pub stderr: f64,
}

fn check_samples(n_samples: usize, min: usize, what: &str) -> Result<()> {
    if n_samples < min {
        return Err(Error::InvalidParameter(format!("{what} needs at least {min} samples, got {n_samples}")));
    }
    Ok(())
}

fn argmax_with_ties(x: &[f64]) -> (f64, usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
            tie = false;
        } else if v == x[best] {
            tie = true;
        }
    }
    (x[best], best, tie)
}

/// Supremum estimate and argmax law from one pass over the samples.
pub fn simulate_supremum(
    model: &GaussianModel,
    n_samples: usize,
    seed: u64,
) -> Result<(SupremumEstimate, ArgmaxDistribution)> {
    check_samples(n_samples, 100, "supremum estimate")?;
    let n = model.n();
    if n == 0 {
        return Err(Error::Empty);
    }
    let per_sample = model.map_samples(n_samples, seed, argmax_with_ties);
    let mut counts = vec![0usize; n];
    let mut tie_count = 0;
    let maxima: Vec<f64> = per_sample
        .iter()
        .map(|&(v, i, tie)| {
            counts[i] += 1;
            tie_count += tie as usize;
            v
        })
        .collect();
    if maxima.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample".into()));
    }
    // a single centered variable has mean exactly zero
    let (mean, stderr) = if n == 1 { (0.0, 0.0) } else { mean_stderr(&maxima) };
    let weights = counts.iter().map(|&c| c as f64 / n_samples as f64).collect();
    Ok((
        SupremumEstimate { mean, stderr, n_samples, seed },
        ArgmaxDistribution { measure: ProbabilityMeasure::from_raw(weights), tie_count },
    ))
}

/// Monte Carlo `E max_t X(t)`.
pub fn estimate_sup(model: &GaussianModel, n_samples: usize, seed: u64) -> Result<SupremumEstimate> {
    Ok(simulate_supremum(model, n_samples, seed)?.0)
}

/// Empirical law of the (lowest) maximizing index.
pub fn argmax_distribution(model: &GaussianModel, n_samples: usize, seed: u64) -> Result<ArgmaxDistribution> {
    check_samples(n_samples, 1000, "argmax distribution")?;
    Ok(simulate_supremum(model, n_samples, seed)?.1)
}

/// `E max_{t ∈ subset} X(t)` on the samples of the full model, so estimates for
/// nested subsets are ordered sample by sample.
pub fn subset_supremum(
    model: &GaussianModel,
    subset: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<(SupremumEstimate, ArgmaxDistribution)> {
    check_samples(n_samples, 100, "supremum estimate")?;
    if subset.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= model.n()) {
        return Err(Error::InvalidParameter(format!("index {bad} out of range")));
    }
    let per_sample = model.map_samples(n_samples, seed, |x| {
        let restricted: Vec<f64> = subset.iter().map(|&i| x[i]).collect();
        argmax_with_ties(&restricted)
    });
    let mut counts = vec![0usize; subset.len()];
    let mut tie_count = 0;
    let maxima: Vec<f64> = per_sample
        .iter()
        .map(|&(v, i, tie)| {
            counts[i] += 1;
            tie_count += tie as usize;
            v
        })
        .collect();
    let (mean, stderr) = mean_stderr(&maxima);
    let weights = counts.iter().map(|&c| c as f64 / n_samples as f64).collect();
    Ok((
        SupremumEstimate { mean, stderr, n_samples, seed },
        ArgmaxDistribution { measure: ProbabilityMeasure::from_raw(weights), tie_count },
    ))
}

/// `S(delta) = E max_{d(s,t) <= delta} |X(s) − X(t)|` at several levels from the
/// same samples. Pair sets are nested, so estimates are nondecreasing in delta.
pub fn estimate_modulus_grid(
    model: &GaussianModel,
    deltas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<ModulusEstimate>, Vec<String>)> {
    check_samples(n_samples, 2, "modulus estimate")?;
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidParameter(format!("delta must be > 0, got {d}")));
    }
    let space = model.space();
    let n = space.n();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((space.dist(i, j), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cut: Vec<usize> = deltas.iter().map(|&d| pairs.partition_point(|p| p.0 <= d)).collect();
    let mut warnings = Vec::new();
    for (&d, &c) in deltas.iter().zip(&cut) {
        if c == 0 {
            warnings.push(format!("no pair of distinct points within delta = {d}; modulus set to 0"));
        }
    }
    let per_sample = model.map_samples(n_samples, seed, |x| {
        let mut out = vec![0.0; deltas.len()];
        let mut running: f64 = 0.0;
        let mut next = 0;
        let mut order: Vec<usize> = (0..deltas.len()).collect();
        order.sort_by_key(|&k| cut[k]);
        for k in order {
            while next < cut[k] {
                let (_, i, j) = pairs[next];
                running = running.max((x[i] - x[j]).abs());
                next += 1;
            }
            out[k] = running;
        }
        out
    });
    let estimates = deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let values: Vec<f64> = per_sample.iter().map(|v| v[k]).collect();
            let (value, stderr) = if cut[k] == 0 { (0.0, 0.0) } else { mean_stderr(&values) };
            ModulusEstimate { delta, value, stderr }
        })
        .collect();
    Ok((estimates, warnings))
}

pub fn estimate_modulus(
    model: &GaussianModel,
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(ModulusEstimate, Vec<String>)> {
    let (mut v, w) = estimate_modulus_grid(model, &[delta], n_samples, seed)?;
    Ok((v.remove(0), w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SudakovBound {
    /// `max_a a sqrt(log2 m(a))`, without the universal constant
    pub value: f64,
    pub separation: f64,
    pub packing_size: usize,
}

/// Constant-free Sudakov minoration over all distinct distances, with greedy
/// packings at separation `>= a`.
pub fn sudakov_bound(space: &FiniteMetricSpace) -> Result<SudakovBound> {
    if space.n() < 2 {
        return Err(Error::InvalidParameter("Sudakov bound needs at least two points".into()));
    }
    let mut best = SudakovBound { value: 0.0, separation: 0.0, packing_size: 1 };
    for a in space.distinct_distances() {
        let m = greedy_packing(space, Separation::AtLeast(a)).len();
        let value = a * (m as f64).log2().sqrt();
        if value > best.value {
            best = SudakovBound { value, separation: a, packing_size: m };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub u: f64,
    pub empirical_tail: f64,
    pub bound: f64,
    pub binomial_stderr: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// largest canonical distance
    pub sigma: f64,
    pub mean_sup: f64,
    pub rows: Vec<ConcentrationRow>,
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// Empirical tails `P(|Y − E Y| >= u)` of `Y = max_t (X(t) − X(t_0))` against
/// `2 exp(−u²/2σ²)` with `σ` the diameter. Recentering at `t_0` leaves the
/// canonical distance unchanged and bounds every standard deviation of the
/// recentered process by the diameter.
pub fn concentration_check(
    model: &GaussianModel,
    u_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    check_samples(n_samples, 2, "concentration check")?;
    if model.n() == 0 {
        return Err(Error::Empty);
    }
    if let Some(u) = u_grid.iter().find(|u| !(**u >= 0.0)) {
        return Err(Error::InvalidParameter(format!("u must be >= 0, got {u}")));
    }
    let sigma = model.space().diam();
    let sups = model.map_samples(n_samples, seed, |x| x.iter().map(|v| v - x[0]).fold(f64::NEG_INFINITY, f64::max));
    let (mean_sup, _) = mean_stderr(&sups);
    let mut warnings = Vec::new();
    let degenerate = sigma == 0.0;
    if degenerate {
        warnings.push("zero diameter: the recentered supremum is constant, tails not tested".into());
    }
    let nf = n_samples as f64;
    let rows = u_grid
        .iter()
        .map(|&u| {
            let hits = sups.iter().filter(|&&y| (y - mean_sup).abs() >= u).count();
            let empirical_tail = hits as f64 / nf;
            let bound = if degenerate {
                if u > 0.0 { 0.0 } else { 2.0 }
            } else {
                2.0 * (-u * u / (2.0 * sigma * sigma)).exp()
            };
            let b = bound.min(1.0);
            let binomial_stderr = (b * (1.0 - b) / nf).sqrt();
            let flagged = !degenerate && empirical_tail > bound + 3.0 * binomial_stderr;
            ConcentrationRow { u, empirical_tail, bound, binomial_stderr, flagged }
        })
        .collect();
    Ok(ConcentrationReport { sigma, mean_sup, rows, degenerate, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub delta: f64,
    pub modulus: ModulusEstimate,
    /// greedy cover size at radius delta (an upper bound on the covering number)
    pub cover_size: usize,
    pub entropy_term: f64,
    /// `M(mu, mu, 2 delta)` at the best measure found for truncation `2 delta`
    pub upper_proxy: f64,
    /// `max_c (M(mu, mu, c) − c sqrt(log2 N(delta)))` over candidate measures
    pub lower_expression: f64,
    pub lower_witness_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem0Report {
    pub esup: SupremumEstimate,
    pub mu_f: ArgmaxDistribution,
    pub functional_mu_f: f64,
    /// `E sup / M(mu_F, mu_F)`, 0 when flagged
    pub ratio: f64,
    pub degenerate: bool,
    pub infinite_functional: bool,
    pub rows: Vec<ModulusRow>,
    pub warnings: Vec<String>,
}

/// Supremum over argmax-law functional ratio and the per-delta modulus
/// sandwich quantities.
pub fn theorem0_report(
    model: &GaussianModel,
    n_samples: usize,
    seed: u64,
    delta_grid: &[f64],
    search: &SearchConfig,
) -> Result<Theorem0Report> {
    let space = model.space();
    let n = space.n();
    let mode = IntegrandMode::GaussianLog;
    let (esup, mu_f) = simulate_supremum(model, n_samples, seed)?;
    let idx = NeighborIndex::new(space);
    let w = mu_f.measure.weights();
    let functional_mu_f = idx.functional(w, w, f64::INFINITY, &mode);
    let infinite_functional = !functional_mu_f.is_finite();
    let degenerate = n <= 1 || functional_mu_f == 0.0;
    let ratio = if degenerate || infinite_functional { 0.0 } else { esup.mean / functional_mu_f };
    let mut warnings = Vec::new();
    if degenerate {
        warnings.push("degenerate instance: ratio undefined, reported as 0".into());
    }
    if infinite_functional {
        warnings.push("functional at the argmax law is infinite, ratio reported as 0".into());
    }
    let rows = if delta_grid.is_empty() || n <= 1 {
        Vec::new()
    } else {
        let (moduli, w) = estimate_modulus_grid(model, delta_grid, n_samples, seed)?;
        warnings.extend(w);
        let fpo = space.farthest_point_order();
        let mut levels: Vec<f64> = space.distinct_distances();
        levels.push(space.diam());
        let uniform = ProbabilityMeasure::uniform(n);
        let mut rows = Vec::new();
        for (k, &delta) in delta_grid.iter().enumerate() {
            let cfg = SearchConfig { delta: 2.0 * delta, ..search.clone() };
            let best2 = maximize_m_self(space, &mode, &[("argmax".into(), mu_f.measure.clone())], &cfg)?;
            let cfg1 = SearchConfig { delta, ..search.clone() };
            let best1 = maximize_m_self(space, &mode, &[("argmax".into(), mu_f.measure.clone())], &cfg1)?;
            let cover_size = fpo.cover_size(delta);
            let root = (cover_size as f64).log2().sqrt();
            let mut lower = f64::NEG_INFINITY;
            let mut witness = 0.0;
            for cand in [&mu_f.measure, &uniform, &best1.measure, &best2.measure] {
                let cw = cand.weights();
                for &c in &levels {
                    let v = idx.functional(cw, cw, c, &mode) - c * root;
                    if v.is_finite() && v > lower {
                        lower = v;
                        witness = c;
                    }
                }
            }
            rows.push(ModulusRow {
                delta,
                modulus: moduli[k],
                cover_size,
                entropy_term: delta * root,
                upper_proxy: best2.objective,
                lower_expression: lower,
                lower_witness_c: witness,
            });
        }
        rows
    };
    Ok(Theorem0Report { esup, mu_f, functional_mu_f, ratio, degenerate, infinite_functional, rows, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedLevel {
    pub size: usize,
    pub indices: Vec<usize>,
    pub mu_f: Vec<f64>,
    pub esup: f64,
    pub functional: f64,
    /// difference from the previous level's functional
    pub increment: Option<f64>,
}

/// Argmax laws and `M(mu_F, mu_F)` along nested index sets, all computed from
/// the samples of the full model.
pub fn nested_net_experiment(
    model: &GaussianModel,
    subsets: &[Vec<usize>],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<NestedLevel>> {
    for pair in subsets.windows(2) {
        if !pair[0].iter().all(|i| pair[1].contains(i)) {
            return Err(Error::InvalidParameter("index sets are not nested".into()));
        }
    }
    let mut levels: Vec<NestedLevel> = Vec::new();
    for subset in subsets {
        let (est, arg) = subset_supremum(model, subset, n_samples, seed)?;
        let sub = model.space().subspace(subset);
        let w = arg.measure.weights();
        let functional = NeighborIndex::new(&sub).functional(w, w, f64::INFINITY, &IntegrandMode::GaussianLog);
        let increment = levels.last().map(|l| functional - l.functional);
        levels.push(NestedLevel {
            size: subset.len(),
            indices: subset.clone(),
            mu_f: w.to_vec(),
            esup: est.mean,
            functional,
            increment,
        });
    }
    Ok(levels)
}
