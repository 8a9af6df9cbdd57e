//! Greedy partition trees driven by a set functional `F(A)`, usually the Monte
//! Carlo estimate of `E max_{t in A} X(t)`.
//!
//! Radii are measured in units of the diameter `D`: a cell created at level
//! `k >= 1` lies in the ball of radius `D r^{-k} / 2` around its center. Each
//! cell `B` of level `k - 1` is carved in order: the next center maximizes
//! `F(C(s))` over the remaining points `s`, where
//! `C(s) = B(s, D r^{-k-1} / 2) ∩ remaining`, and the new child is the ball of
//! radius `D r^{-k} / 2` around it intersected with the remaining points.
//!
//! Cells of zero diameter are leaves. So that every level is a partition of
//! the whole space, a leaf is repeated unchanged on every later level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianModel, SampleMatrix};
use crate::measure::{IntegrandMode, PointProfile, ProbabilityMeasure};
use crate::metric::FiniteMetricSpace;
use crate::rng::mean_stderr;

/// Set functional with a standard error. Singletons are expected to return 0.
pub trait SetFunctional: Sync {
    fn evaluate(&self, members: &[usize]) -> (f64, f64);
}

/// `E max_{t in A} X(t)` on one shared sample matrix, so that estimates are
/// monotone under inclusion sample by sample.
#[derive(Debug, Clone)]
pub struct McSupremum {
    samples: SampleMatrix,
}

impl McSupremum {
    pub fn new(model: &GaussianModel, n_samples: usize, seed: u64) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::InvalidParameter("set functional needs at least 2 samples".into()));
        }
        Ok(Self { samples: SampleMatrix::generate(model, n_samples, seed) })
    }

    pub fn samples(&self) -> &SampleMatrix {
        &self.samples
    }
}

impl SetFunctional for McSupremum {
    fn evaluate(&self, members: &[usize]) -> (f64, f64) {
        if members.len() <= 1 {
            return (0.0, 0.0);
        }
        mean_stderr(&self.samples.maxima(members))
    }
}

/// A deterministic functional given by a closure.
pub struct FnFunctional<F>(pub F);

impl<F: Fn(&[usize]) -> f64 + Sync> SetFunctional for FnFunctional<F> {
    fn evaluate(&self, members: &[usize]) -> (f64, f64) {
        if members.len() <= 1 {
            return (0.0, 0.0);
        }
        ((self.0)(members), 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub r: f64,
    /// slack of the selection rule in units of `D r^{-k}`; only audited
    pub eps_slack: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { r: 4.0, eps_slack: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub level: usize,
    pub members: Vec<usize>,
    pub center: usize,
    pub parent: Option<usize>,
    /// in carve order
    pub children: Vec<usize>,
    pub f_estimate: f64,
    pub f_stderr: f64,
    /// `F(C(t_A))` when the cell was carved (absent for the root and repeated leaves)
    pub selection_score: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub r: f64,
    pub eps_slack: f64,
    /// length unit of all radii (the diameter)
    pub scale: f64,
    pub n: usize,
    pub cells: Vec<Cell>,
    /// cell ids per level
    pub levels: Vec<Vec<usize>>,
    /// `lookup[k][t]` is the id of the level-`k` cell holding `t`
    lookup: Vec<Vec<usize>>,
}

fn cell_diameter(space: &FiniteMetricSpace, members: &[usize]) -> f64 {
    let mut d: f64 = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            d = d.max(space.dist(i, j));
        }
    }
    d
}

/// Builds the tree; `F` is evaluated only on subsets of the space.
pub fn build_partition(
    space: &FiniteMetricSpace,
    oracle: &dyn SetFunctional,
    cfg: &PartitionConfig,
) -> Result<PartitionTree> {
    if !(cfg.r > 1.0) || !cfg.r.is_finite() {
        return Err(Error::InvalidParameter(format!("r must be > 1, got {}", cfg.r)));
    }
    if !(cfg.eps_slack > 0.0) {
        return Err(Error::InvalidParameter(format!("eps_slack must be > 0, got {}", cfg.eps_slack)));
    }
    let n = space.n();
    if n == 0 {
        return Err(Error::Empty);
    }
    let scale = space.diam();
    let all: Vec<usize> = (0..n).collect();
    // root center: a point of smallest eccentricity
    let center = (0..n)
        .min_by(|&a, &b| {
            let ea = space.row(a).iter().copied().fold(0.0, f64::max);
            let eb = space.row(b).iter().copied().fold(0.0, f64::max);
            ea.total_cmp(&eb).then(a.cmp(&b))
        })
        .unwrap_or(0);
    let (f, se) = oracle.evaluate(&all);
    let mut cells = vec![Cell {
        id: 0,
        level: 0,
        members: all,
        center,
        parent: None,
        children: Vec::new(),
        f_estimate: f,
        f_stderr: se,
        selection_score: None,
    }];
    let mut levels = vec![vec![0usize]];
    let mut k = 1;
    loop {
        let prev = levels[k - 1].clone();
        let open: Vec<bool> = prev.iter().map(|&id| cell_diameter(space, &cells[id].members) > 0.0).collect();
        if !open.iter().any(|&o| o) {
            break;
        }
        let radius = scale * cfg.r.powi(-(k as i32)) / 2.0;
        let inner = radius / cfg.r;
        let mut level = Vec::new();
        for (&pid, &is_open) in prev.iter().zip(&open) {
            let parts: Vec<(Vec<usize>, usize, Option<(f64, f64)>)> = if is_open {
                carve(space, oracle, &cells[pid].members, radius, inner)
            } else {
                vec![(cells[pid].members.clone(), cells[pid].center, None)]
            };
            for (members, center, score) in parts {
                let id = cells.len();
                let (f, se) = if is_open { oracle.evaluate(&members) } else { (cells[pid].f_estimate, cells[pid].f_stderr) };
                cells.push(Cell {
                    id,
                    level: k,
                    members,
                    center,
                    parent: Some(pid),
                    children: Vec::new(),
                    f_estimate: f,
                    f_stderr: se,
                    selection_score: score,
                });
                cells[pid].children.push(id);
                level.push(id);
            }
        }
        levels.push(level);
        k += 1;
    }
    let lookup = levels
        .iter()
        .map(|ids| {
            let mut map = vec![0usize; n];
            for &id in ids {
                for &t in &cells[id].members {
                    map[t] = id;
                }
            }
            map
        })
        .collect();
    Ok(PartitionTree { r: cfg.r, eps_slack: cfg.eps_slack, scale, n, cells, levels, lookup })
}

type Part = (Vec<usize>, usize, Option<(f64, f64)>);

fn carve(
    space: &FiniteMetricSpace,
    oracle: &dyn SetFunctional,
    members: &[usize],
    radius: f64,
    inner: f64,
) -> Vec<Part> {
    let mut remaining: Vec<usize> = members.to_vec();
    remaining.sort_unstable();
    let ball = |s: usize, rem: &[usize], rad: f64| -> Vec<usize> {
        rem.iter().copied().filter(|&u| space.dist(s, u) <= rad).collect()
    };
    // cached (C(s), F(C(s))) for each remaining s
    let mut cache: Vec<(usize, Vec<usize>, (f64, f64))> = remaining
        .par_iter()
        .map(|&s| {
            let c = ball(s, &remaining, inner);
            let v = oracle.evaluate(&c);
            (s, c, v)
        })
        .collect();
    let mut parts = Vec::new();
    while !remaining.is_empty() {
        // exact maximizer, ties to the lowest index
        let mut best = 0;
        for (i, entry) in cache.iter().enumerate().skip(1) {
            if entry.2 .0 > cache[best].2 .0 {
                best = i;
            }
        }
        let t = cache[best].0;
        let score = cache[best].2;
        let child = ball(t, &remaining, radius);
        remaining.retain(|u| !child.contains(u));
        cache.retain(|e| !child.contains(&e.0));
        cache.par_iter_mut().for_each(|entry| {
            if entry.1.iter().any(|u| child.contains(u)) {
                entry.1.retain(|u| !child.contains(u));
                entry.2 = oracle.evaluate(&entry.1);
            }
        });
        parts.push((child, t, Some(score)));
    }
    parts
}

impl PartitionTree {
    /// Index of the deepest level.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Cell of level `k` holding point `t`.
    pub fn cell_of(&self, k: usize, t: usize) -> &Cell {
        &self.cells[self.lookup[k][t]]
    }

    /// `D r^{-k}`.
    pub fn level_scale(&self, k: usize) -> f64 {
        self.scale * self.r.powi(-(k as i32))
    }

    /// Cells of level `k >= 1` not contained in the ball of radius
    /// `D r^{-k} / 2` around their center, as `(cell id, excess)`.
    pub fn containment_violations(&self, space: &FiniteMetricSpace) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for c in self.cells.iter().filter(|c| c.level >= 1) {
            let radius = self.level_scale(c.level) / 2.0;
            let worst = c.members.iter().map(|&u| space.dist(c.center, u)).fold(0.0, f64::max);
            if worst > radius * (1.0 + 1e-12) {
                out.push((c.id, worst - radius));
            }
        }
        out
    }

    /// Every level covers all points exactly once and refines the previous one.
    pub fn is_nested_partition(&self) -> bool {
        for (k, ids) in self.levels.iter().enumerate() {
            let mut seen = vec![false; self.n];
            for &id in ids {
                for &t in &self.cells[id].members {
                    if seen[t] {
                        return false;
                    }
                    seen[t] = true;
                }
                if k > 0 {
                    let parent = &self.cells[self.cells[id].parent.unwrap_or(0)];
                    if !self.cells[id].members.iter().all(|t| parent.members.contains(t)) {
                        return false;
                    }
                }
            }
            if !seen.iter().all(|&s| s) {
                return false;
            }
        }
        true
    }
}

fn log_ratio_term(weight: f64, mu_b: f64, mu_a: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    if mu_a <= 0.0 {
        return f64::INFINITY;
    }
    weight * (mu_b / mu_a).log2().max(0.0).sqrt()
}

fn cell_mass(cell: &Cell, w: &[f64]) -> f64 {
    cell.members.iter().map(|&t| w[t]).sum()
}

fn check_len(tree: &PartitionTree, m: &ProbabilityMeasure) -> Result<()> {
    if m.len() != tree.n {
        return Err(Error::InvalidMeasure(format!("measure has {} weights, tree has {} points", m.len(), tree.n)));
    }
    Ok(())
}

/// `r Σ_k D r^{-k} Σ_{B in level k-1} Σ_{A child of B} nu(A) sqrt(log2(mu(B)/mu(A)))`.
pub fn chained_functional(tree: &PartitionTree, mu: &ProbabilityMeasure, nu: &ProbabilityMeasure) -> Result<f64> {
    check_len(tree, mu)?;
    check_len(tree, nu)?;
    let (wm, wn) = (mu.weights(), nu.weights());
    let mut total = 0.0;
    for k in 1..=tree.depth() {
        let mut level_sum = 0.0;
        for &bid in &tree.levels[k - 1] {
            let b = &tree.cells[bid];
            let mb = cell_mass(b, wm);
            for &aid in &b.children {
                let a = &tree.cells[aid];
                level_sum += log_ratio_term(cell_mass(a, wn), mb, cell_mass(a, wm));
            }
        }
        total += tree.level_scale(k) * level_sum;
    }
    Ok(tree.r * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Check {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `sigma(mu, t, delta) <= r Σ_k D r^{-k} sqrt(log2(mu(A_{k-1}(t)) / mu(A_k(t))))`.
pub fn verify_lemma2(
    tree: &PartitionTree,
    space: &FiniteMetricSpace,
    mu: &ProbabilityMeasure,
    t: usize,
    delta: f64,
) -> Result<Lemma2Check> {
    check_len(tree, mu)?;
    if t >= tree.n || space.n() != tree.n {
        return Err(Error::InvalidParameter(format!("point {t} out of range")));
    }
    let w = mu.weights();
    let lhs = PointProfile::new(space, t).sigma(w, delta, space.diam(), &IntegrandMode::GaussianLog);
    let mut rhs = 0.0;
    for k in 1..=tree.depth() {
        let mb = cell_mass(tree.cell_of(k - 1, t), w);
        let ma = cell_mass(tree.cell_of(k, t), w);
        rhs += tree.level_scale(k) * log_ratio_term(1.0, mb, ma);
    }
    rhs *= tree.r;
    Ok(Lemma2Check { lhs, rhs, ok: lhs <= rhs + 1e-9 })
}

/// Points and levels where `sqrt(log2(1/mu(A_k(t))))` exceeds the telescoped
/// sum `Σ_{l<=k} sqrt(log2(mu(A_{l-1}(t))/mu(A_l(t))))` by more than 1e-12.
pub fn telescoping_violations(tree: &PartitionTree, mu: &ProbabilityMeasure) -> Result<Vec<(usize, usize)>> {
    check_len(tree, mu)?;
    let w = mu.weights();
    let mut out = Vec::new();
    for t in 0..tree.n {
        let mut sum = 0.0;
        for k in 1..=tree.depth() {
            let ma = cell_mass(tree.cell_of(k, t), w);
            sum += log_ratio_term(1.0, cell_mass(tree.cell_of(k - 1, t), w), ma);
            let direct = log_ratio_term(1.0, 1.0, ma);
            if direct > sum + 1e-12 {
                out.push((t, k));
            }
        }
    }
    Ok(out)
}

/// `1 + Σ_{l=0}^{l0} (2^{l/2} + 1) / 2^{2^l}`.
pub fn grouping_constant(l0: usize) -> f64 {
    1.0 + (0..=l0).map(|l| (2f64.powf(l as f64 / 2.0) + 1.0) / 2f64.powf(2f64.powi(l as i32))).sum::<f64>()
}

/// `m_l = 2^{2^l}`, saturating.
fn block_bound(l: usize) -> usize {
    let e = 1u32 << l.min(31);
    if e >= usize::BITS {
        usize::MAX
    } else {
        1usize << e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub l: usize,
    /// child positions `[start, end)` in carve order
    pub start: usize,
    pub end: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAudit {
    pub cell: usize,
    /// level of the children
    pub level: usize,
    pub children: usize,
    pub l0: usize,
    pub blocks: Vec<Block>,
    pub grouping_constant: f64,
    pub lhs: f64,
    pub chain_term: f64,
    pub grandchild_term: f64,
    pub rhs_core: f64,
    /// smallest `L` with `lhs >= chain_term / (2L) + grandchild_term`
    pub empirical_l: f64,
    /// centers were selected in nonincreasing `F(C(t_i))` order up to 3 stderr
    pub carve_order_ok: bool,
    pub low_confidence: bool,
}

/// Both sides of the one-step induction inequality at parent cell `cell`.
pub fn audit_proposition(tree: &PartitionTree, mu: &ProbabilityMeasure, cell: usize) -> Result<CellAudit> {
    check_len(tree, mu)?;
    let b = tree.cells.get(cell).ok_or_else(|| Error::InvalidParameter(format!("no cell {cell}")))?;
    if b.children.is_empty() {
        return Err(Error::InvalidParameter(format!("cell {cell} has no children")));
    }
    let w = mu.weights();
    let k = b.level + 1;
    let s = tree.level_scale(k);
    let mb = cell_mass(b, w);
    let mut chain = 0.0;
    let mut grand = 0.0;
    let mut worst_se = b.f_stderr;
    for &aid in &b.children {
        let a = &tree.cells[aid];
        let ma = cell_mass(a, w);
        chain += log_ratio_term(ma, mb, ma);
        worst_se = worst_se.max(a.f_stderr);
        if a.children.is_empty() {
            grand += ma * a.f_estimate;
        } else {
            for &cid in &a.children {
                let c = &tree.cells[cid];
                grand += cell_mass(c, w) * c.f_estimate;
                worst_se = worst_se.max(c.f_stderr);
            }
        }
    }
    chain *= s;
    let lhs = mb * (b.f_estimate + 4.0 * s);
    let empirical_l = if chain == 0.0 {
        0.0
    } else if lhs - grand > 0.0 {
        chain / (2.0 * (lhs - grand))
    } else {
        f64::INFINITY
    };
    let m = b.children.len();
    let l0 = (0..).find(|&l| m <= block_bound(l)).unwrap_or(0);
    let mut blocks = Vec::new();
    let mut start = 0;
    for l in 0..=l0 {
        let end = block_bound(l).min(m);
        let mass = b.children[start..end].iter().map(|&id| cell_mass(&tree.cells[id], w)).sum();
        blocks.push(Block { l, start, end, mass });
        start = end;
    }
    let scores: Vec<(f64, f64)> = b.children.iter().filter_map(|&id| tree.cells[id].selection_score).collect();
    let carve_order_ok = scores.windows(2).all(|p| p[1].0 <= p[0].0 + 3.0 * (p[0].1 + p[1].1) + 1e-12);
    Ok(CellAudit {
        cell,
        level: k,
        children: m,
        l0,
        blocks,
        grouping_constant: grouping_constant(l0),
        lhs,
        chain_term: chain,
        grandchild_term: grand,
        rhs_core: chain + grand,
        empirical_l,
        carve_order_ok,
        low_confidence: worst_se > 0.1 * s,
    })
}

/// Audits of every cell that was actually split.
pub fn audit_all(tree: &PartitionTree, mu: &ProbabilityMeasure) -> Result<Vec<CellAudit>> {
    tree.cells
        .iter()
        .filter(|c| c.children.len() > 1 || c.children.first().is_some_and(|&a| tree.cells[a].members.len() < c.members.len()))
        .map(|c| audit_proposition(tree, mu, c.id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    /// `Σ_k D r^{-k} Σ_B Σ_A mu(A) sqrt(log2(mu(B)/mu(A)))`
    pub induction_sum: f64,
    pub per_level: Vec<f64>,
    /// same sum with the outer weight `mu(B)` in place of `mu(A)`
    pub parent_weighted_sum: f64,
    pub denominator: f64,
    pub empirical_constant: f64,
    pub esup_over_diam: f64,
}

/// The summed induction: `induction_sum / (2 (E sup + 4 D Σ_{k<=depth} r^{-k}))`.
pub fn lower_bound_report(tree: &PartitionTree, mu: &ProbabilityMeasure, esup: f64) -> Result<LowerBoundReport> {
    check_len(tree, mu)?;
    let w = mu.weights();
    let mut per_level = Vec::new();
    let mut parent_weighted_sum = 0.0;
    for k in 1..=tree.depth() {
        let mut sum = 0.0;
        let mut alt = 0.0;
        for &bid in &tree.levels[k - 1] {
            let b = &tree.cells[bid];
            let mb = cell_mass(b, w);
            for &aid in &b.children {
                let ma = cell_mass(&tree.cells[aid], w);
                sum += log_ratio_term(ma, mb, ma);
                alt += log_ratio_term(mb, mb, ma);
            }
        }
        per_level.push(tree.level_scale(k) * sum);
        parent_weighted_sum += tree.level_scale(k) * alt;
    }
    let induction_sum: f64 = per_level.iter().sum();
    let geometric: f64 = (1..=tree.depth()).map(|k| tree.level_scale(k)).sum();
    let denominator = 2.0 * (esup + 4.0 * geometric);
    let empirical_constant = if denominator > 0.0 { induction_sum / denominator } else { 0.0 };
    let esup_over_diam = if tree.scale > 0.0 { esup / tree.scale } else { 0.0 };
    Ok(LowerBoundReport { induction_sum, per_level, parent_weighted_sum, denominator, empirical_constant, esup_over_diam })
}
