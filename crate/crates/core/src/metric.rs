//! Finite metric spaces and their entropy geometry.
//!
//! A [`FiniteMetricSpace`] holds a validated `n × n` distance matrix. Balls are
//! closed, `B(t, r) = {x : d(x, t) <= r}`. Covering numbers are reported as a
//! certified sandwich: a greedy packing gives the lower end, the farthest-point
//! greedy cover the upper end, and for `n <= 12` the exact value is found by
//! exhaustive set cover.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the triangle inequality.
pub const TRIANGLE_TOL: f64 = 1e-9;

/// Relative tolerance on the smallest covariance eigenvalue.
pub const PSD_TOL: f64 = 1e-8;

/// Largest space for which covering numbers are computed exactly.
pub const EXACT_COVER_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    n: usize,
    dist: Vec<f64>,
    diam: f64,
}

impl FiniteMetricSpace {
    /// Validates `matrix` and builds the space.
    pub fn from_distance_matrix(matrix: &[Vec<f64>]) -> Result<Self> {
        let n = check_square(matrix)?;
        for (i, row) in matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(i, j));
                }
            }
        }
        for i in 0..n {
            if matrix[i][i] != 0.0 {
                return Err(Error::NonzeroDiagonal(i));
            }
        }
        for i in 0..n {
            for j in 0..n {
                if matrix[i][j] < 0.0 {
                    return Err(Error::Negative(i, j));
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (matrix[i][j], matrix[j][i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Asymmetric(i, j));
                }
            }
        }
        let mut dist = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                // store the symmetrized value so that dist(i,j) == dist(j,i) bitwise
                let v = if i <= j { matrix[i][j] } else { matrix[j][i] };
                dist.push(v);
            }
        }
        check_triangle(n, &dist)?;
        Ok(Self::assemble(n, dist))
    }

    /// Canonical distance of a centered Gaussian vector with covariance `cov`:
    /// `d(s,t) = sqrt(cov[s][s] + cov[t][t] - 2 cov[s][t])`.
    pub fn from_covariance(cov: &[Vec<f64>]) -> Result<Self> {
        check_covariance(cov)?;
        let n = cov.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = canonical_distance(cov[i][i], cov[j][j], cov[i][j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        check_triangle(n, &dist)?;
        Ok(Self::assemble(n, dist))
    }

    /// Euclidean distances between `points`.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty);
        }
        let dim = points[0].len();
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { index, found: p.len(), expected: dim });
            }
            if let Some(j) = p.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(index, j));
            }
        }
        let n = points.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclidean(&points[i], &points[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        check_triangle(n, &dist)?;
        Ok(Self::assemble(n, dist))
    }

    fn assemble(n: usize, dist: Vec<f64>) -> Self {
        let diam = dist.iter().copied().fold(0.0, f64::max);
        Self { labels: (0..n).map(|i| i.to_string()).collect(), n, dist, diam }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::InvalidParameter(format!(
                "{} labels for {} points",
                labels.len(),
                self.n
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.n..(i + 1) * self.n]
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Sorted distinct positive pairwise distances.
    pub fn distinct_distances(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.dist.iter().copied().filter(|&d| d > 0.0).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn min_positive_distance(&self) -> Option<f64> {
        self.dist.iter().copied().filter(|&d| d > 0.0).min_by(f64::total_cmp)
    }

    /// Members of the closed ball `B(t, radius)`, in index order.
    pub fn ball(&self, t: usize, radius: f64) -> Vec<usize> {
        self.row(t).iter().enumerate().filter(|(_, &d)| d <= radius).map(|(i, _)| i).collect()
    }

    /// The subspace induced by `indices` (in the given order).
    pub fn subspace(&self, indices: &[usize]) -> Self {
        let m = indices.len();
        let mut dist = Vec::with_capacity(m * m);
        for &i in indices {
            for &j in indices {
                dist.push(self.dist(i, j));
            }
        }
        let mut out = Self::assemble(m, dist);
        out.labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        out
    }

    /// Farthest-point traversal starting at point 0.
    pub fn farthest_point_order(&self) -> FarthestPointOrder {
        FarthestPointOrder::new(self)
    }

    /// Covering report at `radius`.
    pub fn covering_number(&self, radius: f64) -> Result<CoveringReport> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
        }
        let greedy = self.farthest_point_order().cover_size(radius);
        let packing = greedy_packing(self, Separation::Exceeds(radius)).len();
        let lower = greedy_packing(self, Separation::Exceeds(2.0 * radius)).len();
        let exact = (self.n <= EXACT_COVER_MAX_N).then(|| exact_cover_size(self, radius));
        Ok(CoveringReport {
            radius,
            greedy_cover_size: greedy,
            packing_size: packing,
            certified_bounds: (lower, greedy),
            exact,
        })
    }

    /// Exact integral of `eps -> sqrt(log2 N(eps))` over `(0, min(delta, diam)]`,
    /// with `N` the greedy cover size.
    pub fn entropy_integral(&self, delta: f64) -> Result<EntropyIntegral> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        let order = self.farthest_point_order();
        let upper = delta.min(self.diam);
        let mut starts = vec![0.0];
        starts.extend(self.distinct_distances().into_iter().filter(|&d| d < upper));
        let mut pieces = Vec::with_capacity(starts.len());
        let mut value = 0.0;
        for (j, &start) in starts.iter().enumerate() {
            let end = starts.get(j + 1).copied().unwrap_or(upper);
            let cover_size = order.cover_size(start);
            let integrand = (cover_size as f64).log2().max(0.0).sqrt();
            value += (end - start) * integrand;
            pieces.push(EntropyPiece { start, end, cover_size, integrand });
        }
        Ok(EntropyIntegral { delta, value, pieces })
    }

    /// Table of `delta * sqrt(log2 N(delta-))` over the distinct distances.
    pub fn modulus_entropy_diagnostic(&self) -> Vec<ModulusEntropyRow> {
        let order = self.farthest_point_order();
        let mut prev = 0.0;
        let mut rows = Vec::new();
        for delta in self.distinct_distances() {
            let cover_below = order.cover_size(prev);
            rows.push(ModulusEntropyRow {
                delta,
                cover_below,
                value: delta * (cover_below as f64).log2().max(0.0).sqrt(),
            });
            prev = delta;
        }
        rows
    }
}

fn check_square(matrix: &[Vec<f64>]) -> Result<usize> {
    let n = matrix.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    for (row, r) in matrix.iter().enumerate() {
        if r.len() != n {
            return Err(Error::NotSquare { row, len: r.len(), expected: n });
        }
    }
    Ok(n)
}

fn check_triangle(n: usize, dist: &[f64]) -> Result<()> {
    for i in 0..n {
        let row_i = &dist[i * n..(i + 1) * n];
        for j in 0..n {
            let dij = row_i[j];
            let row_j = &dist[j * n..(j + 1) * n];
            let bad = row_i.iter().zip(row_j).position(|(&dik, &djk)| dik > dij + djk + TRIANGLE_TOL);
            if let Some(k) = bad {
                let (a, b) = if i < k { (i, k) } else { (k, i) };
                return Err(Error::Triangle(a, b, j));
            }
        }
    }
    Ok(())
}

/// Checks symmetry, finiteness and positive semi-definiteness of `cov`.
pub(crate) fn check_covariance(cov: &[Vec<f64>]) -> Result<()> {
    let n = check_square(cov)?;
    let mut scale: f64 = 0.0;
    for (i, row) in cov.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(i, j));
            }
            scale = scale.max(v.abs());
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (cov[i][j] - cov[j][i]).abs() > 1e-12 * (1.0 + scale) {
                return Err(Error::Asymmetric(i, j));
            }
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (cov[i][j] + cov[j][i]));
    let eig = m.symmetric_eigenvalues();
    let norm = eig.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { eigenvalue: min });
    }
    Ok(())
}

fn canonical_distance(cii: f64, cjj: f64, cij: f64) -> f64 {
    let radicand = cii + cjj - 2.0 * cij;
    // cancellation noise on (near-)identical variables is clamped to zero
    if radicand <= 1e-14 * (cii.abs() + cjj.abs()) {
        0.0
    } else {
        radicand.sqrt()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Farthest-point (Gonzalez) traversal.
///
/// `radii[k]` is the covering radius of the first `k + 1` centers. The sequence
/// does not depend on the query radius, which makes the greedy cover size
/// monotone in the radius.
#[derive(Debug, Clone)]
pub struct FarthestPointOrder {
    pub centers: Vec<usize>,
    pub radii: Vec<f64>,
}

impl FarthestPointOrder {
    fn new(space: &FiniteMetricSpace) -> Self {
        let n = space.n();
        let mut nearest: Vec<f64> = space.row(0).to_vec();
        let mut centers = vec![0];
        let mut radii = Vec::new();
        loop {
            // lowest index wins among maximizers
            let (far, r) = nearest
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
            radii.push(r);
            if r <= 0.0 || centers.len() == n {
                break;
            }
            centers.push(far);
            for (x, d) in nearest.iter_mut().zip(space.row(far)) {
                *x = x.min(*d);
            }
        }
        Self { centers, radii }
    }

    /// Number of greedy centers needed to cover at `radius`.
    pub fn cover_size(&self, radius: f64) -> usize {
        self.radii.iter().position(|&r| r <= radius).map(|k| k + 1).unwrap_or(self.centers.len())
    }
}

/// Separation rule for greedy packings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Separation {
    /// pairwise distance `>= a`
    AtLeast(f64),
    /// pairwise distance `> a`
    Exceeds(f64),
}

impl Separation {
    fn admits(self, d: f64) -> bool {
        match self {
            Separation::AtLeast(a) => d >= a,
            Separation::Exceeds(a) => d > a,
        }
    }
}

/// Greedy maximal packing: scan points in index order, keep a point when it is
/// separated from every point kept so far.
pub fn greedy_packing(space: &FiniteMetricSpace, sep: Separation) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..space.n() {
        if kept.iter().all(|&j| sep.admits(space.dist(i, j))) {
            kept.push(i);
        }
    }
    kept
}

/// Minimal number of closed `radius`-balls centered at points of the space
/// covering it. Exhaustive over center subsets; only for `n <= 12`.
pub fn exact_cover_size(space: &FiniteMetricSpace, radius: f64) -> usize {
    let n = space.n();
    assert!(n <= EXACT_COVER_MAX_N, "exhaustive cover limited to {EXACT_COVER_MAX_N} points");
    let balls: Vec<u32> = (0..n)
        .map(|t| space.ball(t, radius).iter().fold(0u32, |m, &i| m | (1 << i)))
        .collect();
    let full = (1u32 << n) - 1;
    let mut best = n;
    for mask in 1u32..=full {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let mut union = 0u32;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            union |= balls[i];
            bits &= bits - 1;
        }
        if union == full {
            best = size;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub radius: f64,
    pub greedy_cover_size: usize,
    pub packing_size: usize,
    /// (packing at separation `> 2 radius`, greedy cover size)
    pub certified_bounds: (usize, usize),
    /// exhaustive set-cover value, for small spaces
    pub exact: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyPiece {
    pub start: f64,
    pub end: f64,
    pub cover_size: usize,
    pub integrand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyIntegral {
    pub delta: f64,
    pub value: f64,
    pub pieces: Vec<EntropyPiece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusEntropyRow {
    pub delta: f64,
    pub cover_below: usize,
    pub value: f64,
}
