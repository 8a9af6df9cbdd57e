//! Searches over the probability simplex for the three extremal functionals
//!
//! ```text
//! sup_mu M(mu, mu)            (maximize_m_self)
//! inf_mu sup_t M(mu, delta_t) (minimize_sup_m)
//! sup_mu inf_t M(mu, delta_t) (maximize_inf_m)
//! ```
//!
//! and the balanced measure that equalizes `sigma(nu, t)` over all points.
//!
//! None of the problems is treated as convex. Each search runs exponentiated
//! gradient steps with backtracking from several starting measures and keeps the
//! best run. Iterates are kept strictly positive with a `1e-12` floor. Reported
//! objectives are re-evaluated exactly at the returned measure, so a sup-problem
//! objective is a certified lower bound on the true supremum and an inf-problem
//! objective a certified upper bound on the true infimum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{simulate_supremum, GaussianModel};
use crate::measure::{IntegrandMode, NeighborIndex, ProbabilityMeasure, YoungFunction};
use crate::metric::FiniteMetricSpace;
use crate::rng::StreamKey;

/// Strict-positivity floor applied to every iterate.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Pairwise-transfer polishing is skipped above this many points.
const POLISH_MAX_N: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// number of random Dirichlet starts on top of the principled ones
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// truncation level of the functional (`INFINITY` means the diameter)
    pub delta: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { restarts: 4, max_iter: 500, tol: 1e-8, seed: 0, delta: f64::INFINITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub init: String,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub measure: ProbabilityMeasure,
    pub objective: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    pub trace: Vec<RunRecord>,
}

struct RunOutcome {
    weights: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Goal {
    Maximize,
    Minimize,
}

fn normalize_floored(w: &mut [f64]) {
    for x in w.iter_mut() {
        if !(*x >= WEIGHT_FLOOR) {
            *x = WEIGHT_FLOOR;
        }
    }
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
}

fn dirichlet_start(n: usize, seed: u64, run: usize) -> Vec<f64> {
    let mut rng = StreamKey::new(seed ^ 0x5eed_d1c7).stream(run as u64);
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    normalize_floored(&mut w);
    w
}

fn better(goal: Goal, a: f64, b: f64) -> bool {
    match goal {
        Goal::Maximize => a > b,
        Goal::Minimize => a < b,
    }
}

/// One exponentiated-gradient run with backtracking.
///
/// `smooth(w, tau)` is the (possibly smoothed) objective driving the steps and
/// `grad(w, tau)` its gradient; `exact(w)` is what gets reported. `tau` is
/// halved every 50 iterations when `anneal` is set.
#[allow(clippy::too_many_arguments)]
fn exponentiated_run<S, G, E>(
    init: &[f64],
    goal: Goal,
    smooth: S,
    grad: G,
    exact: E,
    tau0: f64,
    anneal: bool,
    cfg: &SearchConfig,
) -> RunOutcome
where
    S: Fn(&[f64], f64) -> f64,
    G: Fn(&[f64], f64) -> Vec<f64>,
    E: Fn(&[f64]) -> f64,
{
    let sign = if goal == Goal::Maximize { 1.0 } else { -1.0 };
    let mut w = init.to_vec();
    normalize_floored(&mut w);
    let mut tau = tau0;
    let tau_min = tau0 * 1e-9;
    let mut f = smooth(&w, tau);
    let mut best_w = w.clone();
    let mut best = exact(&w);
    let mut eta = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    let mut cand = vec![0.0; w.len()];
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        if anneal && it > 0 && it % 50 == 0 && tau > tau_min {
            tau *= 0.5;
            f = smooth(&w, tau);
        }
        let g: Vec<f64> = grad(&w, tau).into_iter().map(|x| sign * x).collect();
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        let avg: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        // simplex stationarity: no vertex direction improves the linearization
        let gap = gmax - avg;
        if !(gap > cfg.tol * (1.0 + f.abs())) {
            if !anneal || tau <= tau_min {
                converged = true;
                break;
            }
            continue;
        }
        if eta.is_nan() {
            eta = 1.0 / (gmax - gmin).max(1e-300);
        }
        let mut accepted = false;
        while eta * (gmax - gmin) > 1e-14 {
            for ((c, &x), &gj) in cand.iter_mut().zip(&w).zip(&g) {
                *c = x * (eta * (gj - gmax)).exp();
            }
            normalize_floored(&mut cand);
            let fc = smooth(&cand, tau);
            if better(goal, fc, f) {
                std::mem::swap(&mut w, &mut cand);
                f = fc;
                accepted = true;
                eta *= 2.0;
                break;
            }
            eta *= 0.5;
        }
        if accepted {
            // without smoothing the driving objective is the exact one
            let e = if anneal { exact(&w) } else { f };
            if better(goal, e, best) {
                best = e;
                best_w.clone_from(&w);
            }
        } else if !anneal || tau <= tau_min {
            break;
        } else {
            eta = f64::NAN;
        }
    }
    RunOutcome { weights: best_w, objective: best, iterations, converged }
}

/// Derivative-free refinement by mass transfers between pairs of points.
fn pairwise_polish<E: Fn(&[f64]) -> f64>(w: &mut Vec<f64>, goal: Goal, exact: E) -> f64 {
    let n = w.len();
    let mut f = exact(w);
    if n < 2 || n > POLISH_MAX_N {
        return f;
    }
    let mut step = 0.05;
    let mut cand = w.clone();
    while step > 1e-12 {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let amount = step * w[i];
                if amount <= WEIGHT_FLOOR {
                    continue;
                }
                cand.clone_from(w);
                cand[i] -= amount;
                cand[j] += amount;
                normalize_floored(&mut cand);
                let fc = exact(&cand);
                if better(goal, fc, f) {
                    std::mem::swap(w, &mut cand);
                    f = fc;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    f
}

fn merge_runs(
    starts: &[(String, Vec<f64>)],
    outcomes: Vec<RunOutcome>,
    goal: Goal,
    exact: impl Fn(&[f64]) -> f64,
) -> OptimizationResult {
    let trace: Vec<RunRecord> = starts
        .iter()
        .zip(&outcomes)
        .enumerate()
        .map(|(index, ((init, _), o))| RunRecord {
            index,
            init: init.clone(),
            objective: o.objective,
            iterations: o.iterations,
            converged: o.converged,
        })
        .collect();
    let mut best = 0;
    for (k, o) in outcomes.iter().enumerate().skip(1) {
        if better(goal, o.objective, outcomes[best].objective) {
            best = k;
        }
    }
    let winner = &outcomes[best];
    let mut weights = winner.weights.clone();
    pairwise_polish(&mut weights, goal, &exact);
    let objective = exact(&weights);
    OptimizationResult {
        measure: ProbabilityMeasure::from_raw(weights),
        objective,
        iterations: winner.iterations,
        restarts_used: outcomes.len(),
        converged: winner.converged,
        trace,
    }
}

fn collect_starts(
    n: usize,
    principled: Vec<(String, Vec<f64>)>,
    cfg: &SearchConfig,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut starts = vec![("uniform".to_string(), vec![1.0 / n as f64; n])];
    for (name, w) in principled {
        if w.len() != n {
            return Err(Error::InvalidMeasure(format!("initial measure {name} has {} weights", w.len())));
        }
        starts.push((name, w));
    }
    for r in 0..cfg.restarts {
        starts.push((format!("dirichlet-{r}"), dirichlet_start(n, cfg.seed, r)));
    }
    Ok(starts)
}

fn trivial_result(n: usize) -> OptimizationResult {
    OptimizationResult {
        measure: ProbabilityMeasure::uniform(n),
        objective: 0.0,
        iterations: 0,
        restarts_used: 0,
        converged: true,
        trace: Vec::new(),
    }
}

/// Best-found `sup_mu M(mu, mu, delta)`.
///
/// Starts from the uniform measure, every measure in `init_measures` (for
/// instance the argmax distribution), and `cfg.restarts` Dirichlet draws.
pub fn maximize_m_self(
    space: &FiniteMetricSpace,
    mode: &IntegrandMode,
    init_measures: &[(String, ProbabilityMeasure)],
    cfg: &SearchConfig,
) -> Result<OptimizationResult> {
    let n = space.n();
    if n <= 1 {
        return Ok(trivial_result(n));
    }
    let idx = NeighborIndex::new(space);
    let delta = cfg.delta;
    let exact = |w: &[f64]| idx.functional(w, w, delta, mode);
    let principled = init_measures.iter().map(|(k, m)| (k.clone(), m.weights().to_vec())).collect();
    let starts = collect_starts(n, principled, cfg)?;
    let outcomes: Vec<RunOutcome> = starts
        .par_iter()
        .map(|(_, w0)| {
            exponentiated_run(
                w0,
                Goal::Maximize,
                |w, _| exact(w),
                |w, _| idx.self_functional_gradient(w, delta, mode),
                exact,
                0.0,
                false,
                cfg,
            )
        })
        .collect();
    Ok(merge_runs(&starts, outcomes, Goal::Maximize, exact))
}

fn soft_extreme(values: &[f64], tau: f64, goal: Goal) -> (f64, Vec<f64>) {
    // log-sum-exp smoothing of max (Minimize goal) or min (Maximize goal)
    let s = if goal == Goal::Minimize { 1.0 } else { -1.0 };
    let top = values.iter().map(|v| s * v).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return (s * top, vec![0.0; values.len()]);
    }
    let e: Vec<f64> = values.iter().map(|v| ((s * v - top) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    (s * (top + tau * z.ln()), e.into_iter().map(|x| x / z).collect())
}

fn extreme_sigma_search(
    space: &FiniteMetricSpace,
    mode: &IntegrandMode,
    goal: Goal,
    principled: Vec<(String, Vec<f64>)>,
    cfg: &SearchConfig,
) -> Result<OptimizationResult> {
    let n = space.n();
    if n <= 1 {
        return Ok(trivial_result(n));
    }
    let idx = NeighborIndex::new(space);
    let delta = cfg.delta;
    let exact = |w: &[f64]| {
        let s = idx.sigmas(w, delta, mode);
        match goal {
            Goal::Minimize => s.into_iter().fold(f64::NEG_INFINITY, f64::max),
            Goal::Maximize => s.into_iter().fold(f64::INFINITY, f64::min),
        }
    };
    let smooth = |w: &[f64], tau: f64| soft_extreme(&idx.sigmas(w, delta, mode), tau, goal).0;
    let grad = |w: &[f64], tau: f64| {
        let (_, coefs) = soft_extreme(&idx.sigmas(w, delta, mode), tau, goal);
        idx.weighted_sigma_gradient(w, &coefs, delta, mode)
    };
    let starts = collect_starts(n, principled, cfg)?;
    let outcomes: Vec<RunOutcome> = starts
        .par_iter()
        .map(|(_, w0)| {
            let mut w = w0.clone();
            normalize_floored(&mut w);
            let tau0 = 0.05 * idx.sigmas(&w, delta, mode).iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
            let tau0 = if tau0 > 0.0 { tau0 } else { 0.05 * space.diam() };
            exponentiated_run(&w, goal, smooth, grad, exact, tau0, true, cfg)
        })
        .collect();
    Ok(merge_runs(&starts, outcomes, goal, exact))
}

/// Best-found `inf_mu max_t sigma(mu, t, delta)` via a softmax-smoothed max with
/// annealed temperature. The balanced measure of the same mode is added as a
/// starting point.
pub fn minimize_sup_m(
    space: &FiniteMetricSpace,
    mode: &IntegrandMode,
    cfg: &SearchConfig,
) -> Result<OptimizationResult> {
    let principled = balanced_start(space, mode, cfg);
    extreme_sigma_search(space, mode, Goal::Minimize, principled, cfg)
}

/// Best-found `sup_mu min_t sigma(mu, t, delta)`, started from the uniform and
/// balanced measures and random draws.
pub fn maximize_inf_m(
    space: &FiniteMetricSpace,
    mode: &IntegrandMode,
    cfg: &SearchConfig,
) -> Result<OptimizationResult> {
    let principled = balanced_start(space, mode, cfg);
    extreme_sigma_search(space, mode, Goal::Maximize, principled, cfg)
}

fn balanced_start(
    space: &FiniteMetricSpace,
    mode: &IntegrandMode,
    cfg: &SearchConfig,
) -> Vec<(String, Vec<f64>)> {
    if space.n() <= 1 || space.min_positive_distance().is_none() {
        return Vec::new();
    }
    let bcfg = BalanceConfig { delta: cfg.delta, ..BalanceConfig::default() };
    match balance(space, mode, None, &bcfg) {
        Ok(b) => vec![("balanced".to_string(), b.measure.weights().to_vec())],
        Err(_) => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub max_iter: usize,
    /// exponent of the multiplicative update
    pub damping: f64,
    /// stop when `spread <= tol * mean(phi)`
    pub tol: f64,
    pub delta: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self { max_iter: 10_000, damping: 0.5, tol: 1e-8, delta: f64::INFINITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedMeasure {
    pub measure: ProbabilityMeasure,
    pub phi_values: Vec<f64>,
    pub mean_phi: f64,
    pub spread: f64,
    pub iterations: usize,
    pub converged: bool,
    /// spread after every accepted update, starting with the initial one
    pub spread_history: Vec<f64>,
}

/// The measure `nu` with `phi^{-1}`-mode values `sigma(nu, t_i)` equal at every
/// point, integrated up to the diameter.
pub fn balanced_measure(
    space: &FiniteMetricSpace,
    young: &YoungFunction,
    init: Option<&ProbabilityMeasure>,
    cfg: &BalanceConfig,
) -> Result<BalancedMeasure> {
    balance(space, &IntegrandMode::YoungInverse(*young), init, cfg)
}

fn spread_of(phi: &[f64]) -> (f64, f64) {
    let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    (max - min, mean)
}

/// Equalizes `sigma(nu, t)` over all points.
///
/// Each iteration tries a damped Newton step on `phi(nu) = c 1, Σ nu = 1`;
/// when it fails to reduce the spread the damped multiplicative update
/// `nu_i <- nu_i (phi_i / mean phi)^theta` is tried, and `theta` is halved only
/// if both fail. Only spread-reducing proposals are accepted.
pub fn balance(
    space: &FiniteMetricSpace,
    mode: &IntegrandMode,
    init: Option<&ProbabilityMeasure>,
    cfg: &BalanceConfig,
) -> Result<BalancedMeasure> {
    let n = space.n();
    if n >= 2 && space.min_positive_distance().is_none() {
        return Err(Error::InvalidParameter("balanced measure needs distinct points".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if space.dist(i, j) == 0.0 {
                return Err(Error::InvalidParameter(format!("points {i} and {j} coincide")));
            }
        }
    }
    let idx = NeighborIndex::new(space);
    let delta = cfg.delta;
    let mut w = match init {
        Some(m) if m.len() == n => m.weights().to_vec(),
        Some(m) => {
            return Err(Error::InvalidMeasure(format!("initial measure has {} weights", m.len())))
        }
        None => vec![1.0 / n as f64; n],
    };
    normalize_floored(&mut w);
    let mut phi = idx.sigmas(&w, delta, mode);
    let (mut spread, mut mean) = spread_of(&phi);
    let mut history = vec![spread];
    let mut theta = cfg.damping;
    let mut iterations = 0;
    let mut converged = spread <= cfg.tol * mean;
    while !converged && iterations < cfg.max_iter && theta > 1e-12 {
        iterations += 1;
        let mut proposal = newton_proposal(&idx, &w, &phi, spread, delta, mode);
        if proposal.is_none() {
            // damped multiplicative update
            let mut cand: Vec<f64> = w.iter().zip(&phi).map(|(&a, &p)| a * (p / mean).powf(theta)).collect();
            normalize_floored(&mut cand);
            let cphi = idx.sigmas(&cand, delta, mode);
            let (cs, cm) = spread_of(&cphi);
            if cs < spread {
                proposal = Some((cand, cphi, cs, cm));
            }
        }
        match proposal {
            Some((cw, cphi, cs, cm)) => {
                w = cw;
                phi = cphi;
                spread = cs;
                mean = cm;
                history.push(spread);
                theta = (theta * 1.5).min(cfg.damping);
                converged = spread <= cfg.tol * mean;
            }
            None => theta *= 0.5,
        }
    }
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("balanced measure produced infinite values".into()));
    }
    Ok(BalancedMeasure {
        measure: ProbabilityMeasure::from_raw(w),
        phi_values: phi,
        mean_phi: mean,
        spread,
        iterations,
        converged,
        spread_history: history,
    })
}

type Proposal = (Vec<f64>, Vec<f64>, f64, f64);

fn newton_proposal(
    idx: &NeighborIndex,
    w: &[f64],
    phi: &[f64],
    spread: f64,
    delta: f64,
    mode: &IntegrandMode,
) -> Option<Proposal> {
    let n = w.len();
    let jac = idx.sigma_jacobian(w, delta, mode);
    let mean = phi.iter().sum::<f64>() / n as f64;
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = jac[i][j];
        }
        a[(i, n)] = -1.0;
        a[(n, i)] = 1.0;
        b[i] = -(phi[i] - mean);
    }
    b[n] = -(w.iter().sum::<f64>() - 1.0);
    let step = a.lu().solve(&b)?;
    let mut s = 1.0;
    for _ in 0..30 {
        let mut cand: Vec<f64> = (0..n).map(|i| w[i] + s * step[i]).collect();
        if cand.iter().all(|&x| x > 0.0) {
            normalize_floored(&mut cand);
            let cphi = idx.sigmas(&cand, delta, mode);
            let (cs, cm) = spread_of(&cphi);
            if cs < spread {
                return Some((cand, cphi, cs, cm));
            }
        }
        s *= 0.5;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundDirection {
    /// the true extremum is at least the reported value
    LowerBound,
    /// the true extremum is at most the reported value
    UpperBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCheck {
    pub problem: String,
    pub min_sigma: f64,
    pub self_functional: f64,
    pub max_sigma: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub sup_self: f64,
    pub inf_sup: f64,
    pub sup_inf: f64,
    pub esup: Option<f64>,
    pub esup_stderr: Option<f64>,
    pub sup_self_direction: BoundDirection,
    pub inf_sup_direction: BoundDirection,
    pub sup_inf_direction: BoundDirection,
    pub ratios: Vec<(String, Option<f64>)>,
    pub candidate_checks: Vec<CandidateCheck>,
    pub violations: Vec<String>,
    pub degenerate: bool,
    pub sup_self_result: OptimizationResult,
    pub inf_sup_result: OptimizationResult,
    pub sup_inf_result: OptimizationResult,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0 && a.is_finite() && b.is_finite()).then(|| a / b)
}

/// Runs the three searches (and the supremum estimate when a model is given)
/// and cross-checks the orderings that hold without constants.
pub fn duality_report(
    space: &FiniteMetricSpace,
    model: Option<&GaussianModel>,
    mode: &IntegrandMode,
    cfg: &SearchConfig,
    mc: &McConfig,
) -> Result<DualityReport> {
    let n = space.n();
    let (esup, esup_stderr, mu_f) = match model {
        Some(m) if n >= 2 => {
            if m.space().n() != n {
                return Err(Error::InvalidParameter("model and space sizes differ".into()));
            }
            let (est, arg) = simulate_supremum(m, mc.n_samples, mc.seed)?;
            (Some(est.mean), Some(est.stderr), Some(arg.measure))
        }
        _ => (None, None, None),
    };
    let sup_inf_result = maximize_inf_m(space, mode, cfg)?;
    let mut inits = Vec::new();
    if let Some(mu) = mu_f {
        inits.push(("argmax".to_string(), mu));
    }
    if n >= 2 {
        inits.push(("sup-inf-winner".to_string(), sup_inf_result.measure.clone()));
    }
    let sup_self_result = maximize_m_self(space, mode, &inits, cfg)?;
    let inf_sup_result = minimize_sup_m(space, mode, cfg)?;

    let idx = NeighborIndex::new(space);
    let mut candidate_checks = Vec::new();
    let mut violations = Vec::new();
    for (name, r) in [
        ("sup_self", &sup_self_result),
        ("inf_sup", &inf_sup_result),
        ("sup_inf", &sup_inf_result),
    ] {
        let w = r.measure.weights();
        let s = idx.sigmas(w, cfg.delta, mode);
        let min_sigma = s.iter().copied().fold(f64::INFINITY, f64::min);
        let max_sigma = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = idx.functional(w, w, cfg.delta, mode);
        let slack = 1e-9 * (1.0 + m.abs());
        let ok = min_sigma <= m + slack && m <= max_sigma + slack;
        if !ok {
            violations.push(format!("{name}: averaging sandwich violated"));
        }
        candidate_checks.push(CandidateCheck {
            problem: name.to_string(),
            min_sigma,
            self_functional: m,
            max_sigma,
            ok,
        });
    }
    let (sup_self, inf_sup, sup_inf) =
        (sup_self_result.objective, inf_sup_result.objective, sup_inf_result.objective);
    if sup_inf > sup_self + 1e-6 {
        violations.push(format!("sup_inf {sup_inf} exceeds sup_self {sup_self}"));
    }
    let e = esup.unwrap_or(f64::NAN);
    let ratios = vec![
        ("esup/sup_self".to_string(), ratio(e, sup_self)),
        ("esup/inf_sup".to_string(), ratio(e, inf_sup)),
        ("esup/sup_inf".to_string(), ratio(e, sup_inf)),
        ("sup_self/inf_sup".to_string(), ratio(sup_self, inf_sup)),
        ("sup_inf/sup_self".to_string(), ratio(sup_inf, sup_self)),
        ("sup_inf/inf_sup".to_string(), ratio(sup_inf, inf_sup)),
    ];
    Ok(DualityReport {
        sup_self,
        inf_sup,
        sup_inf,
        esup,
        esup_stderr,
        sup_self_direction: BoundDirection::LowerBound,
        inf_sup_direction: BoundDirection::UpperBound,
        sup_inf_direction: BoundDirection::LowerBound,
        ratios,
        candidate_checks,
        violations,
        degenerate: n <= 1 || space.diam() == 0.0,
        sup_self_result,
        inf_sup_result,
        sup_inf_result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: IntegrandMode = IntegrandMode::GaussianLog;

    fn two_point() -> FiniteMetricSpace {
        FiniteMetricSpace::from_distance_matrix(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn single() -> FiniteMetricSpace {
        FiniteMetricSpace::from_distance_matrix(&[vec![0.0]]).unwrap()
    }

    fn cfg() -> SearchConfig {
        SearchConfig { restarts: 3, max_iter: 300, tol: 1e-10, seed: 11, delta: f64::INFINITY }
    }

    // exhaustive grid over the segment mu = (a, 1 - a)
    fn two_point_grid(f: impl Fn(f64) -> f64) -> (f64, f64) {
        (1..10_000)
            .map(|k| k as f64 * 1e-4)
            .map(|a| (a, f(a)))
            .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
    }

    fn h(p: f64) -> f64 {
        (1.0 / p).log2().sqrt()
    }

    #[test]
    fn two_point_sup_self() {
        let (a, v) = two_point_grid(|a| a * h(a) + (1.0 - a) * h(1.0 - a));
        assert!((a - 0.5).abs() < 1e-4 && (v - 1.0).abs() < 1e-12);
        let r = maximize_m_self(&two_point(), &G, &[], &cfg()).unwrap();
        assert!((r.objective - 1.0).abs() < 1e-9);
        assert!((r.measure.weights()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn two_point_minimax_and_maximin() {
        let (a, v) = two_point_grid(|a| -(h(a).max(h(1.0 - a))));
        assert!((a - 0.5).abs() < 1e-4 && (v + 1.0).abs() < 1e-12);
        let r = minimize_sup_m(&two_point(), &G, &cfg()).unwrap();
        assert!((r.objective - 1.0).abs() < 1e-6, "{}", r.objective);
        let (a, v) = two_point_grid(|a| h(a).min(h(1.0 - a)));
        assert!((a - 0.5).abs() < 1e-4 && (v - 1.0).abs() < 1e-12);
        let r = maximize_inf_m(&two_point(), &G, &cfg()).unwrap();
        assert!((r.objective - 1.0).abs() < 1e-6, "{}", r.objective);
    }

    #[test]
    fn singletons_are_zero() {
        for r in [
            maximize_m_self(&single(), &G, &[], &cfg()).unwrap(),
            minimize_sup_m(&single(), &G, &cfg()).unwrap(),
            maximize_inf_m(&single(), &G, &cfg()).unwrap(),
        ] {
            assert_eq!(r.objective, 0.0);
        }
    }

    #[test]
    fn equidistant_sup_self_is_uniform() {
        let m = 7;
        let mat: Vec<Vec<f64>> =
            (0..m).map(|i| (0..m).map(|j| if i == j { 0.0 } else { 0.8 } as f64).collect()).collect();
        let s = FiniteMetricSpace::from_distance_matrix(&mat).unwrap();
        let r = maximize_m_self(&s, &G, &[], &cfg()).unwrap();
        assert!((r.objective - 0.8 * (m as f64).log2().sqrt()).abs() < 1e-9);
        for &w in r.measure.weights() {
            assert!((w - 1.0 / m as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn objectives_are_not_stale() {
        let s = FiniteMetricSpace::from_points(&[vec![0.0], vec![1.0], vec![3.0], vec![3.5]]).unwrap();
        let idx = NeighborIndex::new(&s);
        let r = maximize_m_self(&s, &G, &[], &cfg()).unwrap();
        let w = r.measure.weights();
        assert!((idx.functional(w, w, f64::INFINITY, &G) - r.objective).abs() < 1e-9);
        let r = minimize_sup_m(&s, &G, &cfg()).unwrap();
        let v = idx.sigmas(r.measure.weights(), f64::INFINITY, &G).into_iter().fold(0.0, f64::max);
        assert!((v - r.objective).abs() < 1e-9);
    }

    #[test]
    fn balanced_two_point_symmetric() {
        let b = balanced_measure(&two_point(), &YoungFunction::gaussian(), None, &BalanceConfig::default())
            .unwrap();
        assert!(b.converged);
        assert!((b.measure.weights()[0] - 0.5).abs() < 1e-12);
        assert!((b.phi_values[0] - b.phi_values[1]).abs() < 1e-12);
    }

    #[test]
    fn balanced_rejects_coincident_points() {
        let s = FiniteMetricSpace::from_distance_matrix(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(balanced_measure(&s, &YoungFunction::gaussian(), None, &BalanceConfig::default()).is_err());
    }

    #[test]
    fn balanced_spread_history_is_monotone() {
        let s = FiniteMetricSpace::from_points(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![2.0, 0.5],
            vec![2.0, 2.0],
            vec![-1.0, 1.0],
        ])
        .unwrap();
        let b = balanced_measure(&s, &YoungFunction::gaussian(), None, &BalanceConfig::default()).unwrap();
        assert!(b.converged, "spread {}", b.spread);
        assert!(b.spread_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn duality_two_point() {
        let model = GaussianModel::new(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let r = duality_report(model.space(), Some(&model), &G, &cfg(), &McConfig { n_samples: 20_000, seed: 3 })
            .unwrap();
        assert!((r.sup_self - 1.0).abs() < 1e-6);
        assert!((r.inf_sup - 1.0).abs() < 1e-6);
        assert!((r.sup_inf - 1.0).abs() < 1e-6);
        let se = r.esup_stderr.unwrap();
        assert!((r.esup.unwrap() - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 4.0 * se);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn duality_singleton_is_degenerate() {
        let r = duality_report(&single(), None, &G, &cfg(), &McConfig { n_samples: 1000, seed: 3 }).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.sup_self, r.inf_sup, r.sup_inf), (0.0, 0.0, 0.0));
    }
}
