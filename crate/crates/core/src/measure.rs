//! Probability measures on finite spaces and the majorizing-measure functionals.
//!
//! For a measure `mu`, a point `t` and a truncation level `delta`,
//!
//! ```text
//! sigma(mu, t, delta) = ∫_0^delta h(mu(B(t, eps))) d eps
//! M(mu, nu, delta)    = Σ_t nu(t) sigma(mu, t, delta)
//! ```
//!
//! where `h(p) = sqrt(log2(1/p))` in [`IntegrandMode::GaussianLog`] and
//! `h(p) = phi^{-1}(1/p)` in [`IntegrandMode::YoungInverse`]. On a finite space the
//! ball mass is a step function of `eps`, so both integrals are finite sums over
//! the distinct distances seen from `t`. Truncation levels above the diameter are
//! clamped to the diameter.
//!
//! Values are extended reals: `f64::INFINITY` is returned (not an error) when a
//! ball of zero mass persists over an interval of positive length.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::FiniteMetricSpace;

/// Tolerance on the total mass accepted (and silently renormalized) by
/// [`ProbabilityMeasure::new`].
pub const MASS_TOL: f64 = 1e-9;

/// Ball masses within this distance of 1 count as the full mass.
const FULL_MASS_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMeasure {
    weights: Vec<f64>,
}

impl ProbabilityMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("no weights".into()));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidMeasure(format!("weight {i} is {w}")));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(Self { weights: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Normalizes arbitrary nonnegative weights with a positive sum.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n] }
    }

    /// Point mass at `t`.
    pub fn dirac(n: usize, t: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[t] = 1.0;
        Self { weights }
    }

    /// Raises every weight to at least `floor`, then renormalizes.
    pub fn floored(&self, floor: f64) -> Self {
        let w: Vec<f64> = self.weights.iter().map(|&w| w.max(floor)).collect();
        let total: f64 = w.iter().sum();
        Self { weights: w.into_iter().map(|x| x / total).collect() }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.weights[i]).sum()
    }

    /// Mass of the closed ball `B(t, radius)`.
    pub fn ball_mass(&self, space: &FiniteMetricSpace, t: usize, radius: f64) -> f64 {
        space.row(t).iter().zip(&self.weights).filter(|(&d, _)| d <= radius).map(|(_, &w)| w).sum()
    }

    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

/// The Young functions `phi_q(x) = 2^(x^q) - 1`, `q >= 1`.
///
/// `q = 2` is the Gaussian case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoungFunction {
    q: f64,
}

impl YoungFunction {
    pub fn new(q: f64) -> Result<Self> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::InvalidParameter(format!("Young exponent must be >= 1, got {q}")));
        }
        Ok(Self { q })
    }

    pub fn gaussian() -> Self {
        Self { q: 2.0 }
    }

    pub fn exponent(&self) -> f64 {
        self.q
    }

    pub fn name(&self) -> String {
        format!("2^(x^{})-1", self.q)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        (x.max(0.0).powf(self.q) * std::f64::consts::LN_2).exp_m1()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y.max(0.0).ln_1p() / std::f64::consts::LN_2).powf(1.0 / self.q)
    }

    /// The `C > 1` with `phi(2x) >= 2 C phi(x)` on [`Self::doubling_range`].
    ///
    /// Since `(2^(a y) - 1) / (2^y - 1) >= a` for `a >= 1`, the ratio
    /// `phi(2x)/phi(x)` is at least `2^q`, so `C = 2^(q-1)` works for all `x`.
    /// For `q = 1` the ratio tends to 2 at the origin and no `C > 1` exists.
    pub fn doubling_constant(&self) -> Option<f64> {
        let c = 2f64.powf(self.q - 1.0);
        (c > 1.0).then_some(c)
    }

    pub fn doubling_range(&self) -> Option<(f64, f64)> {
        self.doubling_constant().map(|_| (0.0, f64::INFINITY))
    }
}

/// Integrand of the majorizing-measure integral, as a function of the ball mass `p`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum IntegrandMode {
    /// `sqrt(log2(1/p))`
    #[default]
    GaussianLog,
    /// `phi^{-1}(1/p)`; with `phi_2` this is `sqrt(log2(1 + 1/p))`
    YoungInverse(YoungFunction),
}

impl IntegrandMode {
    pub fn name(&self) -> String {
        match self {
            IntegrandMode::GaussianLog => "gaussian-log".into(),
            IntegrandMode::YoungInverse(phi) => format!("young-inverse(q={})", phi.exponent()),
        }
    }

    /// Integrand at ball mass `p`; infinite at `p = 0`.
    #[inline]
    pub fn integrand(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::INFINITY;
        }
        match self {
            // full-space balls lose a few ulps of mass to rounding
            IntegrandMode::GaussianLog if p >= 1.0 - FULL_MASS_SNAP => 0.0,
            IntegrandMode::GaussianLog => (-p.log2()).sqrt(),
            IntegrandMode::YoungInverse(phi) => phi.inverse(1.0 / p),
        }
    }

    /// Integrand and its derivative at `0 < p`.
    #[inline]
    pub fn integrand_with_derivative(&self, p: f64) -> (f64, f64) {
        match self {
            IntegrandMode::GaussianLog if p < 1.0 - FULL_MASS_SNAP => {
                let r = (-p.log2()).sqrt();
                (r, -1.0 / (2.0 * r * p * std::f64::consts::LN_2))
            }
            _ => (self.integrand(p), self.integrand_derivative(p)),
        }
    }

    /// `d integrand / d p` for `0 < p`.
    ///
    /// In gaussian-log mode the derivative is singular at `p = 1`; it is reported
    /// as zero there, which is exact for balls holding the whole space (any
    /// mass-preserving perturbation leaves them at 1).
    #[inline]
    pub fn integrand_derivative(&self, p: f64) -> f64 {
        let ln2 = std::f64::consts::LN_2;
        match self {
            IntegrandMode::GaussianLog => {
                let l = -p.log2();
                if p >= 1.0 - FULL_MASS_SNAP {
                    0.0
                } else {
                    -1.0 / (2.0 * l.sqrt() * p * ln2)
                }
            }
            IntegrandMode::YoungInverse(phi) => {
                let q = phi.exponent();
                let u = (1.0 / p).ln_1p() / ln2;
                let du = -1.0 / (ln2 * (p * p + p));
                u.powf(1.0 / q - 1.0) * du / q
            }
        }
    }
}

/// Neighbors of one point sorted by distance, grouped by distinct radius.
#[derive(Debug, Clone)]
pub struct PointProfile {
    order: Vec<u32>,
    radii: Vec<f64>,
    ends: Vec<u32>,
}

impl PointProfile {
    pub fn new(space: &FiniteMetricSpace, t: usize) -> Self {
        let row = space.row(t);
        let mut order: Vec<u32> = (0..space.n() as u32).collect();
        order.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]).then(a.cmp(&b)));
        let mut radii = Vec::new();
        let mut ends = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            let d = row[i as usize];
            if radii.last() != Some(&d) {
                if !radii.is_empty() {
                    ends.push(pos as u32);
                }
                radii.push(d);
            }
        }
        ends.push(order.len() as u32);
        Self { order, radii, ends }
    }

    /// Distinct distances from the point, starting at 0.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Cumulative ball masses `mu(B(t, radii[k]))`.
    pub fn masses(&self, weights: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        let mut start = 0usize;
        self.ends
            .iter()
            .map(|&end| {
                for &i in &self.order[start..end as usize] {
                    acc += weights[i as usize];
                }
                start = end as usize;
                acc
            })
            .collect()
    }

    /// Visits `(k, len_k, mass_k)` for the intervals `[r_k, min(r_{k+1}, delta))`
    /// of positive length, with `r_{K+1} = diam`.
    #[inline]
    fn for_each_piece(&self, weights: &[f64], delta: f64, diam: f64, mut f: impl FnMut(usize, f64, f64) -> bool) {
        let upper = delta.min(diam);
        let mut acc = 0.0;
        let mut start = 0usize;
        for (k, &r) in self.radii.iter().enumerate() {
            if r >= upper {
                break;
            }
            let end = self.ends[k] as usize;
            for &i in &self.order[start..end] {
                acc += weights[i as usize];
            }
            start = end;
            let next = self.radii.get(k + 1).copied().unwrap_or(diam);
            let len = next.min(upper) - r;
            if len > 0.0 && !f(k, len, acc) {
                return;
            }
        }
    }

    pub fn sigma(&self, weights: &[f64], delta: f64, diam: f64, mode: &IntegrandMode) -> f64 {
        if !(delta > 0.0) {
            return 0.0;
        }
        let mut total = 0.0;
        self.for_each_piece(weights, delta, diam, |_, len, p| {
            if p <= 0.0 {
                total = f64::INFINITY;
                return false;
            }
            total += len * mode.integrand(p);
            true
        });
        total
    }

    /// Adds `coef * d sigma / d weights` into `grad` and returns sigma.
    /// Assumes all ball masses on intervals of positive length are positive.
    pub fn add_sigma_gradient(
        &self,
        weights: &[f64],
        delta: f64,
        diam: f64,
        mode: &IntegrandMode,
        coef: f64,
        grad: &mut [f64],
    ) -> f64 {
        if !(delta > 0.0) {
            return 0.0;
        }
        let mut terms = vec![0.0; self.radii.len()];
        let mut total = 0.0;
        self.for_each_piece(weights, delta, diam, |k, len, p| {
            let (v, dv) = mode.integrand_with_derivative(p);
            total += len * v;
            terms[k] = len * dv;
            true
        });
        if coef == 0.0 {
            return total;
        }
        // weight j enters every ball of radius >= d(t, j): suffix sums over groups
        let mut suffix = 0.0;
        for k in (0..terms.len()).rev() {
            suffix += terms[k];
            let start = if k == 0 { 0 } else { self.ends[k - 1] as usize };
            for &j in &self.order[start..self.ends[k] as usize] {
                grad[j as usize] += coef * suffix;
            }
        }
        total
    }
}

/// Profiles for every point of a space, built once and reused by optimizers.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    profiles: Vec<PointProfile>,
    diam: f64,
}

impl NeighborIndex {
    pub fn new(space: &FiniteMetricSpace) -> Self {
        let profiles = (0..space.n()).into_par_iter().map(|t| PointProfile::new(space, t)).collect();
        Self { profiles, diam: space.diam() }
    }

    pub fn n(&self) -> usize {
        self.profiles.len()
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    pub fn profile(&self, t: usize) -> &PointProfile {
        &self.profiles[t]
    }

    pub fn sigma(&self, weights: &[f64], t: usize, delta: f64, mode: &IntegrandMode) -> f64 {
        self.profiles[t].sigma(weights, delta, self.diam, mode)
    }

    pub fn sigmas(&self, weights: &[f64], delta: f64, mode: &IntegrandMode) -> Vec<f64> {
        self.profiles.par_iter().map(|p| p.sigma(weights, delta, self.diam, mode)).collect()
    }

    /// `M(mu, nu, delta)`; points with `nu(t) = 0` are skipped, so infinite
    /// sigma values only propagate where `nu` charges them.
    pub fn functional(&self, mu: &[f64], nu: &[f64], delta: f64, mode: &IntegrandMode) -> f64 {
        let terms: Vec<f64> = self
            .profiles
            .par_iter()
            .zip(nu.par_iter())
            .map(|(p, &w)| if w > 0.0 { w * p.sigma(mu, delta, self.diam, mode) } else { 0.0 })
            .collect();
        terms.into_iter().sum()
    }

    /// Gradient of `mu -> M(mu, mu, delta)`:
    /// `d/d mu_j = sigma_j + Σ_t mu_t d sigma_t / d mu_j`.
    pub fn self_functional_gradient(&self, mu: &[f64], delta: f64, mode: &IntegrandMode) -> Vec<f64> {
        let mut grad = vec![0.0; mu.len()];
        for (t, p) in self.profiles.iter().enumerate() {
            let s = p.add_sigma_gradient(mu, delta, self.diam, mode, mu[t], &mut grad);
            grad[t] += s;
        }
        grad
    }

    /// Gradient of `mu -> Σ_t coefs[t] sigma(mu, t, delta)`.
    pub fn weighted_sigma_gradient(
        &self,
        mu: &[f64],
        coefs: &[f64],
        delta: f64,
        mode: &IntegrandMode,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; mu.len()];
        for (p, &c) in self.profiles.iter().zip(coefs) {
            p.add_sigma_gradient(mu, delta, self.diam, mode, c, &mut grad);
        }
        grad
    }

    /// Jacobian `J[i][j] = d sigma_i / d mu_j`.
    pub fn sigma_jacobian(&self, mu: &[f64], delta: f64, mode: &IntegrandMode) -> Vec<Vec<f64>> {
        self.profiles
            .par_iter()
            .map(|p| {
                let mut row = vec![0.0; mu.len()];
                p.add_sigma_gradient(mu, delta, self.diam, mode, 1.0, &mut row);
                row
            })
            .collect()
    }
}

fn check_measure(space: &FiniteMetricSpace, mu: &ProbabilityMeasure) -> Result<()> {
    if mu.len() != space.n() {
        return Err(Error::InvalidMeasure(format!(
            "measure has {} weights, space has {} points",
            mu.len(),
            space.n()
        )));
    }
    Ok(())
}

/// `sigma(mu, t, delta)`.
pub fn sigma(
    space: &FiniteMetricSpace,
    mu: &ProbabilityMeasure,
    t: usize,
    delta: f64,
    mode: &IntegrandMode,
) -> Result<f64> {
    check_measure(space, mu)?;
    if t >= space.n() {
        return Err(Error::InvalidParameter(format!("point {t} out of range")));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    Ok(PointProfile::new(space, t).sigma(mu.weights(), delta, space.diam(), mode))
}

/// `M(mu, nu, delta) = Σ_t nu(t) sigma(mu, t, delta)`.
pub fn functional_m(
    space: &FiniteMetricSpace,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    delta: f64,
    mode: &IntegrandMode,
) -> Result<f64> {
    check_measure(space, mu)?;
    check_measure(space, nu)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    let terms: Vec<f64> = (0..space.n())
        .into_par_iter()
        .map(|t| {
            let w = nu.weights()[t];
            if w > 0.0 {
                w * PointProfile::new(space, t).sigma(mu.weights(), delta, space.diam(), mode)
            } else {
                0.0
            }
        })
        .collect();
    Ok(terms.into_iter().sum())
}

/// `sigma(mu, t, delta)` for every point `t`.
pub fn sigma_profile(
    space: &FiniteMetricSpace,
    mu: &ProbabilityMeasure,
    delta: f64,
    mode: &IntegrandMode,
) -> Result<Vec<f64>> {
    check_measure(space, mu)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    Ok((0..space.n())
        .into_par_iter()
        .map(|t| PointProfile::new(space, t).sigma(mu.weights(), delta, space.diam(), mode))
        .collect())
}

/// `sqrt(log2(xy)) <= sqrt(log2 x) + sqrt(log2 y)` for `x, y >= 1`, within 1e-12.
pub fn subadditivity_check(x: f64, y: f64) -> Result<bool> {
    if !(x >= 1.0) || !(y >= 1.0) || !x.is_finite() || !y.is_finite() {
        return Err(Error::Domain(format!("arguments must be finite and >= 1, got ({x}, {y})")));
    }
    let lhs = (x.log2() + y.log2()).sqrt();
    Ok(lhs <= x.log2().sqrt() + y.log2().sqrt() + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equidistant(m: usize, a: f64) -> FiniteMetricSpace {
        let mat: Vec<Vec<f64>> =
            (0..m).map(|i| (0..m).map(|j| if i == j { 0.0 } else { a }).collect()).collect();
        FiniteMetricSpace::from_distance_matrix(&mat).unwrap()
    }

    const G: IntegrandMode = IntegrandMode::GaussianLog;

    #[test]
    fn measure_validation() {
        assert!(ProbabilityMeasure::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityMeasure::new(vec![-0.5, 1.5]).is_err());
        let m = ProbabilityMeasure::new(vec![0.5, 0.5 + 5e-10]).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_examples() {
        let s = equidistant(2, 1.0);
        let u = ProbabilityMeasure::uniform(2);
        for t in 0..2 {
            assert!((sigma(&s, &u, t, f64::INFINITY, &G).unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(sigma(&s, &u, t, 0.0, &G).unwrap(), 0.0);
        }
        let d = ProbabilityMeasure::dirac(2, 0);
        assert_eq!(sigma(&s, &d, 1, f64::INFINITY, &G).unwrap(), f64::INFINITY);
        assert_eq!(sigma(&s, &d, 0, f64::INFINITY, &G).unwrap(), 0.0);
    }

    #[test]
    fn functional_examples() {
        let s = equidistant(2, 1.0);
        let u = ProbabilityMeasure::uniform(2);
        assert!((functional_m(&s, &u, &u, f64::INFINITY, &G).unwrap() - 1.0).abs() < 1e-15);
        for m in [3usize, 5, 16] {
            let s = equidistant(m, 0.4);
            let u = ProbabilityMeasure::uniform(m);
            let v = functional_m(&s, &u, &u, f64::INFINITY, &G).unwrap();
            assert!((v - 0.4 * (m as f64).log2().sqrt()).abs() < 1e-12);
        }
        let s = FiniteMetricSpace::from_points(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let mu = ProbabilityMeasure::new(vec![0.2, 0.3, 0.5]).unwrap();
        let dt = ProbabilityMeasure::dirac(3, 1);
        let a = functional_m(&s, &mu, &dt, 2.0, &G).unwrap();
        let b = sigma(&s, &mu, 1, 2.0, &G).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infinity_only_where_nu_charges() {
        let s = equidistant(3, 1.0);
        let mu = ProbabilityMeasure::new(vec![0.5, 0.5, 0.0]).unwrap();
        let nu = ProbabilityMeasure::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(functional_m(&s, &mu, &nu, f64::INFINITY, &G).unwrap().is_finite());
        let nu = ProbabilityMeasure::uniform(3);
        assert_eq!(functional_m(&s, &mu, &nu, f64::INFINITY, &G).unwrap(), f64::INFINITY);
    }

    #[test]
    fn profile_examples() {
        let s = equidistant(2, 1.0);
        let p = sigma_profile(&s, &ProbabilityMeasure::uniform(2), f64::INFINITY, &G).unwrap();
        assert_eq!(p, vec![1.0, 1.0]);
        let p = sigma_profile(&s, &ProbabilityMeasure::dirac(2, 0), f64::INFINITY, &G).unwrap();
        assert_eq!(p, vec![0.0, f64::INFINITY]);
        let single = FiniteMetricSpace::from_distance_matrix(&[vec![0.0]]).unwrap();
        let p = sigma_profile(&single, &ProbabilityMeasure::uniform(1), f64::INFINITY, &G).unwrap();
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn subadditivity_examples() {
        assert!(subadditivity_check(2.0, 2.0).unwrap());
        assert!(subadditivity_check(1.0, 7.5).unwrap());
        assert!(subadditivity_check(4.0, 8.0).unwrap());
        assert!(matches!(subadditivity_check(0.5, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn young_function_properties() {
        for q in [1.0, 1.5, 2.0, 3.0] {
            let phi = YoungFunction::new(q).unwrap();
            assert_eq!(phi.evaluate(0.0), 0.0);
            let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.02).collect();
            for w in grid.windows(3) {
                let mid = phi.evaluate(0.5 * (w[0] + w[2]));
                assert!(mid <= 0.5 * (phi.evaluate(w[0]) + phi.evaluate(w[2])) + 1e-9);
                assert!(phi.evaluate(w[1]) > phi.evaluate(w[0]));
            }
            for &x in &grid {
                assert!((phi.inverse(phi.evaluate(x)) - x).abs() < 1e-9, "q={q} x={x}");
            }
            match phi.doubling_constant() {
                Some(c) => {
                    for &x in &grid {
                        assert!(phi.evaluate(2.0 * x) >= 2.0 * c * phi.evaluate(x) * (1.0 - 1e-12));
                    }
                }
                None => assert_eq!(q, 1.0),
            }
        }
        assert!(YoungFunction::new(0.5).is_err());
    }

    #[test]
    fn modes_differ_by_additive_one() {
        let young = IntegrandMode::YoungInverse(YoungFunction::gaussian());
        for p in [0.01, 0.2, 0.5, 0.9, 1.0] {
            let a = G.integrand(p);
            let b = young.integrand(p);
            assert!((b - (1.0 + 1.0 / p).log2().sqrt()).abs() < 1e-12);
            assert!((a - (1.0 / p).log2().sqrt()).abs() < 1e-12);
            assert!(b > a);
        }
    }

    #[test]
    fn integrand_derivatives_match_finite_differences() {
        let modes = [G, IntegrandMode::YoungInverse(YoungFunction::new(1.5).unwrap())];
        for mode in modes {
            for p in [0.01, 0.1, 0.3, 0.7, 0.95] {
                let h = 1e-7;
                let fd = (mode.integrand(p + h) - mode.integrand(p - h)) / (2.0 * h);
                let an = mode.integrand_derivative(p);
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "{} p={p}", mode.name());
            }
        }
    }

    #[test]
    fn self_gradient_matches_finite_differences() {
        let pts: Vec<Vec<f64>> =
            vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![0.3, 1.1], vec![2.0, 1.0], vec![1.5, -0.7]];
        let s = FiniteMetricSpace::from_points(&pts).unwrap();
        let idx = NeighborIndex::new(&s);
        let mu = vec![0.1, 0.25, 0.2, 0.3, 0.15];
        for mode in [G, IntegrandMode::YoungInverse(YoungFunction::gaussian())] {
            for delta in [0.8, f64::INFINITY] {
                let g = idx.self_functional_gradient(&mu, delta, &mode);
                // directional derivatives along e_j - e_0 stay on the simplex
                for j in 1..5 {
                    let h = 1e-6;
                    let mut up = mu.clone();
                    up[j] += h;
                    up[0] -= h;
                    let mut dn = mu.clone();
                    dn[j] -= h;
                    dn[0] += h;
                    let fd = (idx.functional(&up, &up, delta, &mode)
                        - idx.functional(&dn, &dn, delta, &mode))
                        / (2.0 * h);
                    let an = g[j] - g[0];
                    assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "j={j} fd={fd} an={an}");
                }
            }
        }
    }
}
