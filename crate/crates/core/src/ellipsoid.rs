//! Truncated ellipsoids `{x : Σ x_i² / t_i² <= 1}` in `R^N` under the linear
//! Gaussian process `X(x) = <x, g>`.
//!
//! For a draw `g` the supremum is `‖g t‖` and is attained at
//! `x_i = g_i t_i² / ‖g t‖`. Indices in this module follow the usual 1-based
//! convention where noted (`i` in `1..=N`); vectors are stored 0-based.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{IntegrandMode, NeighborIndex, ProbabilityMeasure};
use crate::metric::{euclidean, FiniteMetricSpace};
use crate::rng::{mean_stderr, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    axes: Vec<f64>,
    norm: f64,
    tail_norms: Vec<f64>,
    tail_sq_norms: Vec<f64>,
}

fn tail_root(values: impl DoubleEndedIterator<Item = f64>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut acc = 0.0;
    for (k, v) in values.enumerate() {
        acc += v;
        out[len - 1 - k] = acc.sqrt();
    }
    out
}

impl EllipsoidSpec {
    /// Semi-axes must be positive, finite and nonincreasing.
    pub fn new(axes: Vec<f64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Empty);
        }
        for (i, &t) in axes.iter().enumerate() {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidParameter(format!("axis {i} must be positive and finite, got {t}")));
            }
            if i > 0 && t > axes[i - 1] {
                return Err(Error::InvalidParameter(format!("axes must be nonincreasing (axis {i})")));
            }
        }
        let n = axes.len();
        let tail_norms = tail_root(axes.iter().rev().map(|t| t * t), n);
        let tail_sq_norms = tail_root(axes.iter().rev().map(|t| t.powi(4)), n);
        Ok(Self { norm: tail_norms[0], axes, tail_norms, tail_sq_norms })
    }

    pub fn n(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[f64] {
        &self.axes
    }

    /// `‖t‖`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// `‖t(i)‖ = (Σ_{j>=i} t_j²)^{1/2}` for 1-based `i`.
    pub fn tail_norm(&self, i: usize) -> f64 {
        self.tail_norms.get(i.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// `‖t²(i)‖ = (Σ_{j>=i} t_j⁴)^{1/2}` for 1-based `i`.
    pub fn tail_sq_norm(&self, i: usize) -> f64 {
        self.tail_sq_norms.get(i.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// 1-based semi-axis.
    pub fn axis(&self, i: usize) -> f64 {
        self.axes[i - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSample {
    pub g: Vec<f64>,
    pub x: Vec<f64>,
    /// `<x, g> = ‖g t‖`
    pub sup_value: f64,
    /// `a_0 = t_1`, `a_i = ‖x(i)‖` for `i = 1..=N`
    pub tail_profile: Vec<f64>,
}

impl EllipsoidSample {
    /// `|Σ x_i² / t_i² − 1|`.
    pub fn boundary_residual(&self, spec: &EllipsoidSpec) -> f64 {
        (self.x.iter().zip(spec.axes()).map(|(x, t)| (x / t).powi(2)).sum::<f64>() - 1.0).abs()
    }

    /// `a_i` for `i = 0..=N+1`, with `a_{N+1} = 0`.
    pub fn a(&self, i: usize) -> f64 {
        self.tail_profile.get(i).copied().unwrap_or(0.0)
    }
}

/// The maximizer of `<x, g>` over the ellipsoid.
pub fn argmax_point(spec: &EllipsoidSpec, g: &[f64]) -> Result<EllipsoidSample> {
    if g.len() != spec.n() {
        return Err(Error::DimensionMismatch { index: 0, found: g.len(), expected: spec.n() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("g must be finite".into()));
    }
    let s = g.iter().zip(spec.axes()).map(|(a, t)| (a * t).powi(2)).sum::<f64>().sqrt();
    if s == 0.0 {
        return Err(Error::InvalidParameter("g must not vanish".into()));
    }
    let x: Vec<f64> = g.iter().zip(spec.axes()).map(|(a, t)| a * t * t / s).collect();
    let mut tail_profile = vec![spec.axes[0]];
    tail_profile.extend(tail_root(x.iter().rev().map(|v| v * v), x.len()));
    Ok(EllipsoidSample { g: g.to_vec(), x, sup_value: s, tail_profile })
}

fn draw(spec: &EllipsoidSpec, key: &StreamKey, index: u64) -> Option<EllipsoidSample> {
    let mut g = vec![0.0; spec.n()];
    key.fill_normals(index, &mut g);
    argmax_point(spec, &g).ok()
}

/// Argmax samples `0..n_samples` of `seed`, in index order; the measure-zero
/// event `g = 0` is skipped.
pub fn argmax_samples(spec: &EllipsoidSpec, n_samples: usize, seed: u64) -> Vec<EllipsoidSample> {
    let key = StreamKey::new(seed);
    (0..n_samples as u64).into_par_iter().filter_map(|i| draw(spec, &key, i)).collect()
}

fn map_draws<T: Send>(
    spec: &EllipsoidSpec,
    n_samples: usize,
    seed: u64,
    f: impl Fn(&EllipsoidSample) -> T + Sync,
) -> Vec<T> {
    let key = StreamKey::new(seed);
    (0..n_samples as u64).into_par_iter().filter_map(|i| draw(spec, &key, i).map(|s| f(&s))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsupCheck {
    pub mc_mean: f64,
    pub stderr: f64,
    pub norm_t: f64,
    /// `mc_mean / ‖t‖`
    pub closed_ratio: f64,
    /// the ratio lies in `(0, 1]` up to 3 stderr
    pub ratio_ok: bool,
    pub mean_square: f64,
    pub mean_square_stderr: f64,
    /// mean of `‖g t‖²` within 4 stderr of `‖t‖²`
    pub parseval_ok: bool,
    pub max_boundary_residual: f64,
}

/// `E ‖g t‖` against `‖t‖`.
pub fn esup_check(spec: &EllipsoidSpec, n_samples: usize, seed: u64) -> Result<EsupCheck> {
    if n_samples < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 samples, got {n_samples}")));
    }
    let per = map_draws(spec, n_samples, seed, |s| (s.sup_value, s.boundary_residual(spec)));
    let values: Vec<f64> = per.iter().map(|p| p.0).collect();
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    let (mc_mean, stderr) = mean_stderr(&values);
    let (mean_square, mean_square_stderr) = mean_stderr(&squares);
    let norm_t = spec.norm();
    let closed_ratio = mc_mean / norm_t;
    Ok(EsupCheck {
        mc_mean,
        stderr,
        norm_t,
        closed_ratio,
        ratio_ok: closed_ratio > 0.0 && closed_ratio <= 1.0 + 3.0 * stderr / norm_t,
        mean_square,
        mean_square_stderr,
        parseval_ok: (mean_square - norm_t * norm_t).abs() <= 4.0 * mean_square_stderr,
        max_boundary_residual: per.iter().map(|p| p.1).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    pub support: Vec<Vec<f64>>,
    pub measure: ProbabilityMeasure,
    pub space: FiniteMetricSpace,
    pub resolution: f64,
}

/// Argmax samples snapped to a greedy `h`-net of the sample cloud.
///
/// Samples are scanned in index order; a sample farther than `h` from every
/// net point joins the net. Each sample is then assigned to its nearest net
/// point (lowest index on ties), which lies within `h`.
pub fn empirical_measure(spec: &EllipsoidSpec, n_samples: usize, seed: u64, h: f64) -> Result<EmpiricalMeasure> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("net resolution must be > 0, got {h}")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let points: Vec<Vec<f64>> = argmax_samples(spec, n_samples, seed).into_iter().map(|s| s.x).collect();
    let mut net: Vec<Vec<f64>> = Vec::new();
    for p in &points {
        if !net.par_iter().any(|q| euclidean(p, q) <= h) {
            net.push(p.clone());
        }
    }
    let assignment: Vec<usize> = points
        .par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, q) in net.iter().enumerate() {
                let d = euclidean(p, q);
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    let mut counts = vec![0usize; net.len()];
    for a in assignment {
        counts[a] += 1;
    }
    let total = points.len() as f64;
    let measure = ProbabilityMeasure::from_raw(counts.iter().map(|&c| c as f64 / total).collect());
    let space = FiniteMetricSpace::from_points(&net)?;
    Ok(EmpiricalMeasure { support: net, measure, space, resolution: h })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallRow {
    pub eps: f64,
    pub mass: f64,
    pub in_window: bool,
    /// `−ln(mass) t_i⁴ / ‖t²(i)‖²`
    pub implied_c: f64,
    /// mass was 0; `implied_c` is the bound from the resolution `1/n_samples`
    pub c_is_lower_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallReport {
    pub i: usize,
    pub window: (f64, f64),
    /// `‖t²(i)‖² / t_i⁴`
    pub exponent_scale: f64,
    pub rows: Vec<SmallBallRow>,
}

/// Empirical `mu(B(x, eps))` for the argmax law, with the implied constant of
/// the bound `exp(−c ‖t²(i)‖² / t_i⁴)` on the window
/// `a_{i+1}/√2 <= eps <= a_i/√2` of the anchor `x`.
pub fn smallball_check(
    spec: &EllipsoidSpec,
    anchor: &[f64],
    i: usize,
    eps_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<SmallBallReport> {
    let n = spec.n();
    if anchor.len() != n {
        return Err(Error::DimensionMismatch { index: 0, found: anchor.len(), expected: n });
    }
    if i == 0 || i > n {
        return Err(Error::InvalidParameter(format!("i must lie in 1..={n}, got {i}")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let a = |k: usize| anchor[(k - 1).min(n)..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let (hi, lo) = (a(i), if i < n { a(i + 1) } else { 0.0 });
    if hi == lo {
        return Err(Error::InvalidParameter(format!("empty window: a_{} = a_{}", i, i + 1)));
    }
    let window = (lo / 2f64.sqrt(), hi / 2f64.sqrt());
    let exponent_scale = spec.tail_sq_norm(i).powi(2) / spec.axis(i).powi(4);
    let dists = map_draws(spec, n_samples, seed, |s| euclidean(&s.x, anchor));
    let total = dists.len() as f64;
    let rows = eps_grid
        .iter()
        .map(|&eps| {
            let mass = dists.iter().filter(|&&d| d <= eps).count() as f64 / total;
            let (implied_c, c_is_lower_bound) = if mass > 0.0 {
                ((-mass.ln() / exponent_scale).max(0.0), false)
            } else {
                (total.ln() / exponent_scale, true)
            };
            let in_window = eps >= window.0 * (1.0 - 1e-12) && eps <= window.1 * (1.0 + 1e-12);
            SmallBallRow { eps, mass, in_window, implied_c, c_is_lower_bound }
        })
        .collect();
    Ok(SmallBallReport { i, window, exponent_scale, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub i: usize,
    /// `E(‖x(i)‖ − ‖x(i+1)‖)`
    pub lhs_mc: f64,
    pub lhs_stderr: f64,
    /// `t_i⁴ / (‖t‖ ‖t²(i)‖)`, the bound with unit constant
    pub rhs: f64,
    pub ratio: f64,
    /// `(E|g|)² = 2/π` times `rhs`
    pub rhs_standard: f64,
    /// `π²` times `rhs`, the alternative constant
    pub rhs_printed: f64,
    /// `ratio >= 0.1` (artifact envelope)
    pub ok: bool,
}

/// Artifact envelope for the gap ratio.
pub const GAP_RATIO_FLOOR: f64 = 0.1;

fn gap_from_samples(spec: &EllipsoidSpec, i: usize, gaps: &[f64]) -> GapCheck {
    let (lhs_mc, lhs_stderr) = mean_stderr(gaps);
    let rhs = spec.axis(i).powi(4) / (spec.norm() * spec.tail_sq_norm(i));
    let ratio = lhs_mc / rhs;
    GapCheck {
        i,
        lhs_mc,
        lhs_stderr,
        rhs,
        ratio,
        rhs_standard: 2.0 / std::f64::consts::PI * rhs,
        rhs_printed: std::f64::consts::PI.powi(2) * rhs,
        ok: ratio >= GAP_RATIO_FLOOR,
    }
}

/// The expected tail gap at 1-based `i` against its scale.
pub fn gap_lower_bound_check(spec: &EllipsoidSpec, i: usize, n_samples: usize, seed: u64) -> Result<GapCheck> {
    if i == 0 || i >= spec.n() {
        return Err(Error::InvalidParameter(format!("i must lie in 1..{}, got {i}", spec.n())));
    }
    if n_samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let gaps = map_draws(spec, n_samples, seed, |s| s.a(i) - s.a(i + 1));
    Ok(gap_from_samples(spec, i, &gaps))
}

/// Gap checks for every `i < N` from one set of samples.
pub fn gap_table(spec: &EllipsoidSpec, n_samples: usize, seed: u64) -> Result<Vec<GapCheck>> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let n = spec.n();
    let profiles = map_draws(spec, n_samples, seed, |s| s.tail_profile.clone());
    Ok((1..n)
        .map(|i| {
            let gaps: Vec<f64> = profiles.iter().map(|p| p[i] - p.get(i + 1).copied().unwrap_or(0.0)).collect();
            gap_from_samples(spec, i, &gaps)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidReport {
    pub norm_t: f64,
    pub support_size: usize,
    pub resolution: f64,
    /// `M(mu, mu)` of the empirical argmax measure, gaussian-log mode
    pub m_self: f64,
    pub ratio: f64,
}

pub fn ellipsoid_report(spec: &EllipsoidSpec, n_samples: usize, seed: u64, h: f64) -> Result<(EllipsoidReport, EmpiricalMeasure)> {
    let emp = empirical_measure(spec, n_samples, seed, h)?;
    let w = emp.measure.weights();
    let m_self = NeighborIndex::new(&emp.space).functional(w, w, f64::INFINITY, &IntegrandMode::GaussianLog);
    let report = EllipsoidReport {
        norm_t: spec.norm(),
        support_size: emp.support.len(),
        resolution: h,
        m_self,
        ratio: m_self / spec.norm(),
    };
    Ok((report, emp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegenerationRow {
    pub n: usize,
    pub norm_t: f64,
    /// `P(‖x‖ <= radius)` under the argmax law
    pub mass_near_origin: f64,
    pub mean_norm: f64,
}

/// Mass of the argmax law near the origin as the truncation grows, for axes
/// `axis(i)`, `i = 1..=N`.
pub fn degeneration_trend(
    axis: impl Fn(usize) -> f64,
    sizes: &[usize],
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<DegenerationRow>> {
    sizes
        .iter()
        .map(|&n| {
            let spec = EllipsoidSpec::new((1..=n).map(&axis).collect())?;
            let norms = map_draws(&spec, n_samples, seed, |s| s.a(1));
            let total = norms.len() as f64;
            Ok(DegenerationRow {
                n,
                norm_t: spec.norm(),
                mass_near_origin: norms.iter().filter(|&&v| v <= radius).count() as f64 / total,
                mean_norm: norms.iter().sum::<f64>() / total,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn spec_validation_and_norms() {
        assert!(EllipsoidSpec::new(vec![]).is_err());
        assert!(EllipsoidSpec::new(vec![1.0, 2.0]).is_err());
        assert!(EllipsoidSpec::new(vec![1.0, 0.0]).is_err());
        let s = EllipsoidSpec::new(vec![2.0, 1.0, 0.5]).unwrap();
        assert!((s.norm() - (4.0f64 + 1.0 + 0.25).sqrt()).abs() < 1e-12);
        assert!((s.tail_norm(2) - 1.25f64.sqrt()).abs() < 1e-12);
        assert!((s.tail_sq_norm(3) - 0.25).abs() < 1e-12);
        assert_eq!(s.tail_norm(4), 0.0);
    }

    #[test]
    fn basis_draw() {
        let s = EllipsoidSpec::new(vec![2.0, 1.0, 0.5]).unwrap();
        let x = argmax_point(&s, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(x.x, vec![2.0, 0.0, 0.0]);
        assert_eq!(x.sup_value, 2.0);
        assert!(argmax_point(&s, &[0.0; 3]).is_err());
        let one = EllipsoidSpec::new(vec![1.5]).unwrap();
        let x = argmax_point(&one, &[-0.3]).unwrap();
        assert_eq!(x.x, vec![-1.5]);
        assert!((x.sup_value - 0.45).abs() < 1e-15);
    }

    #[test]
    fn profile_shape() {
        let s = EllipsoidSpec::new(vec![1.0, 0.7, 0.4, 0.2]).unwrap();
        for smp in argmax_samples(&s, 500, 3) {
            assert!(smp.boundary_residual(&s) < 1e-9);
            assert!(smp.tail_profile.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            assert!((smp.a(4) - smp.x[3].abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn esup_closed_forms() {
        let one = EllipsoidSpec::new(vec![1.0]).unwrap();
        let c = esup_check(&one, 100_000, 1).unwrap();
        assert!((c.mc_mean - (2.0 / PI).sqrt()).abs() < 3.0 * c.stderr);
        let two = EllipsoidSpec::new(vec![1.0, 1.0]).unwrap();
        let c = esup_check(&two, 100_000, 1).unwrap();
        assert!((c.mc_mean - (PI / 2.0).sqrt()).abs() < 3.0 * c.stderr);
        assert!(c.ratio_ok && c.parseval_ok);
    }

    #[test]
    fn empirical_measure_examples() {
        let one = EllipsoidSpec::new(vec![1.0]).unwrap();
        let e = empirical_measure(&one, 4000, 2, 0.05).unwrap();
        assert_eq!(e.support.len(), 2);
        let w = e.measure.weights()[0];
        assert!((w - 0.5).abs() < 3.0 * (0.25f64 / 4000.0).sqrt());
        let e = empirical_measure(&one, 1000, 2, 2.0).unwrap();
        assert_eq!(e.support.len(), 1);
        let (r, _) = ellipsoid_report(&one, 4000, 2, 0.05).unwrap();
        // weights are binomially noisy around (1/2, 1/2); the functional is flat there
        assert!((r.m_self - 2.0).abs() < 1e-3 && (r.ratio - 2.0).abs() < 1e-3);
    }

    #[test]
    fn flat_ellipse_concentrates_on_first_axis() {
        // P(|x_1| >= 0.5) = 1 − (2/π) atan(sqrt(0.0025 / 0.75)) for t = (1, 0.1)
        let p = 1.0 - 2.0 / PI * (0.0025f64 / 0.75).sqrt().atan();
        assert!(p > 0.95);
        let s = EllipsoidSpec::new(vec![1.0, 0.1]).unwrap();
        let e = empirical_measure(&s, 20_000, 4, 0.05).unwrap();
        let mass: f64 = e.support.iter().zip(e.measure.weights()).filter(|(x, _)| x[0].abs() >= 0.5).map(|(_, w)| w).sum();
        assert!((mass - p).abs() < 0.01);
    }

    #[test]
    fn smallball_examples() {
        let one = EllipsoidSpec::new(vec![1.0]).unwrap();
        let r = smallball_check(&one, &[1.0], 1, &[0.3, 5.0], 20_000, 5).unwrap();
        assert!((r.rows[0].mass - 0.5).abs() < 0.02);
        assert!((r.rows[0].implied_c - 2f64.ln()).abs() < 0.05);
        assert!(r.rows[0].in_window && !r.rows[1].in_window);
        assert_eq!(r.rows[1].mass, 1.0);
        assert_eq!(r.rows[1].implied_c, 0.0);
        let s = EllipsoidSpec::new(vec![1.0, 1.0]).unwrap();
        assert!(smallball_check(&s, &[0.0, 1.0], 1, &[0.1], 100, 5).is_err());
    }

    #[test]
    fn gap_two_circle() {
        let s = EllipsoidSpec::new(vec![1.0, 1.0]).unwrap();
        let g = gap_lower_bound_check(&s, 1, 100_000, 6).unwrap();
        assert!((g.lhs_mc - (1.0 - 2.0 / PI)).abs() < 3.0 * g.lhs_stderr);
        assert!((g.rhs - 0.5).abs() < 1e-15);
        assert!((g.ratio - 0.727).abs() < 0.01);
        assert!(gap_lower_bound_check(&s, 2, 100, 6).is_err());
        let t = gap_table(&s, 100_000, 6).unwrap();
        assert_eq!(t[0].lhs_mc, g.lhs_mc);
    }

    #[test]
    fn degeneration_mass_grows() {
        let rows = degeneration_trend(|i| 1.0 / (i as f64).sqrt(), &[4, 64, 1024], 0.3, 2000, 1).unwrap();
        assert!(rows[0].mass_near_origin <= rows[2].mass_near_origin);
        assert!(rows[0].mean_norm > rows[2].mean_norm);
    }
}
