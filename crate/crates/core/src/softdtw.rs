//! Soft-DTW and its relatives.
//!
//! `soft_dtw` runs the smoothed DP forward and the expected-alignment
//! recursion backward, which yields exact gradients in `O(mn)` memory.
//! `brute_force_soft_dtw` enumerates every warping path and exists as an
//! independent oracle for small inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::{AlignmentPath, FeatureSequence};

/// Stand-in for `+inf` on the DP boundary.
pub const BOUNDARY: f64 = 1e30;

/// Largest `m` or `n` accepted by the path-enumeration oracle.
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::SquaredEuclidean => a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftDtwConfig {
    pub gamma: f64,
    pub distance: Distance,
}

impl Default for SoftDtwConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            distance: Distance::SquaredEuclidean,
        }
    }
}

impl SoftDtwConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be positive, got {gamma}")))
    }
}

/// `-gamma * ln(sum_i exp(-a_i / gamma))`, shifted by the minimum for stability.
pub fn soft_min(values: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("soft_min of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("soft_min input".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|v| (-(v - min) / gamma).exp()).sum();
    Ok(min - gamma * sum.ln())
}

// Symmetric in (a, b) bit for bit, which keeps R exactly transpose-symmetric.
#[inline]
fn soft_min3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let min = a.min(b).min(c);
    let sum = (-(a - min) / gamma).exp() + (-(b - min) / gamma).exp() + (-(c - min) / gamma).exp();
    min - gamma * sum.ln()
}

/// `m x n` matrix of frame costs `d(x_i, y_j)`.
pub fn pairwise_cost(x: &FeatureSequence, y: &FeatureSequence, distance: Distance) -> Matrix {
    let mut cost = Matrix::zeros(x.len(), y.len());
    for (i, xi) in x.frames().enumerate() {
        let row = cost.row_mut(i);
        for (j, yj) in y.frames().enumerate() {
            row[j] = distance.eval(xi, yj);
        }
    }
    cost
}

#[derive(Debug, Clone)]
pub struct SoftDtwResult {
    pub value: f64,
    /// Forward accumulants `R`, `(m+1) x (n+1)`, with [`BOUNDARY`] on row and column 0
    /// except `R[0][0] = 0`.
    pub dp_table: Matrix,
    /// Expected alignment `E = d value / d cost`, `m x n`.
    pub alignment: Matrix,
    pub grad_x: Matrix,
    pub grad_y: Matrix,
}

fn forward(cost: &Matrix, gamma: f64) -> Matrix {
    let (m, n) = cost.shape();
    let mut r = Matrix::filled(m + 1, n + 1, BOUNDARY);
    r[(0, 0)] = 0.0;
    for i in 1..=m {
        for j in 1..=n {
            r[(i, j)] =
                cost[(i - 1, j - 1)] + soft_min3(r[(i - 1, j)], r[(i, j - 1)], r[(i - 1, j - 1)], gamma);
        }
    }
    r
}

fn expected_alignment(cost: &Matrix, r: &Matrix, gamma: f64) -> Matrix {
    let (m, n) = cost.shape();
    let mut e = Matrix::zeros(m, n);
    // Cells are 1-based in `r`, 0-based in `cost` and `e`.
    let weight = |e: &Matrix, si: usize, sj: usize, ri: f64| -> f64 {
        e[(si - 1, sj - 1)] * ((r[(si, sj)] - ri - cost[(si - 1, sj - 1)]) / gamma).exp()
    };
    for i in (1..=m).rev() {
        for j in (1..=n).rev() {
            if i == m && j == n {
                e[(i - 1, j - 1)] = 1.0;
                continue;
            }
            let rij = r[(i, j)];
            let down = if i < m { weight(&e, i + 1, j, rij) } else { 0.0 };
            let right = if j < n { weight(&e, i, j + 1, rij) } else { 0.0 };
            let diag = if i < m && j < n {
                weight(&e, i + 1, j + 1, rij)
            } else {
                0.0
            };
            e[(i - 1, j - 1)] = down + right + diag;
        }
    }
    e
}

fn check_pair(x: &FeatureSequence, y: &FeatureSequence, what: &str) -> Result<()> {
    x.ensure_same_dim(y, what)
}

/// Value only; skips the backward pass.
pub fn soft_dtw_value(x: &FeatureSequence, y: &FeatureSequence, cfg: &SoftDtwConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(x, y, "soft_dtw")?;
    let r = forward(&pairwise_cost(x, y, cfg.distance), cfg.gamma);
    Ok(r[(x.len(), y.len())])
}

pub fn soft_dtw(x: &FeatureSequence, y: &FeatureSequence, cfg: &SoftDtwConfig) -> Result<SoftDtwResult> {
    cfg.validate()?;
    check_pair(x, y, "soft_dtw")?;
    let (m, n, d) = (x.len(), y.len(), x.dim());
    let cost = pairwise_cost(x, y, cfg.distance);
    let dp_table = forward(&cost, cfg.gamma);
    let value = dp_table[(m, n)];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("soft-DTW value {value}")));
    }
    let alignment = expected_alignment(&cost, &dp_table, cfg.gamma);

    // d cost_ij / d x_i = 2 (x_i - y_j) for squared Euclidean.
    let mut grad_x = Matrix::zeros(m, d);
    for i in 0..m {
        let xi = x.frame(i);
        let g = grad_x.row_mut(i);
        for j in 0..n {
            let w = 2.0 * alignment[(i, j)];
            for (gk, (a, b)) in g.iter_mut().zip(xi.iter().zip(y.frame(j))) {
                *gk += w * (a - b);
            }
        }
    }
    let mut grad_y = Matrix::zeros(n, d);
    for j in 0..n {
        let yj = y.frame(j);
        let g = grad_y.row_mut(j);
        for i in 0..m {
            let w = 2.0 * alignment[(i, j)];
            for (gk, (b, a)) in g.iter_mut().zip(yj.iter().zip(x.frame(i))) {
                *gk += w * (b - a);
            }
        }
    }
    Ok(SoftDtwResult {
        value,
        dp_table,
        alignment,
        grad_x,
        grad_y,
    })
}

/// Number of monotonic paths through an `m x n` grid (the Delannoy number
/// `D(m-1, n-1)`).
pub fn path_count(m: usize, n: usize) -> u128 {
    if m == 0 || n == 0 {
        return 0;
    }
    let mut table = vec![vec![0u128; n]; m];
    for i in 0..m {
        for j in 0..n {
            table[i][j] = if i == 0 || j == 0 {
                1
            } else {
                table[i - 1][j] + table[i][j - 1] + table[i - 1][j - 1]
            };
        }
    }
    table[m - 1][n - 1]
}

/// Visits every path from `(0, 0)` to `(m-1, n-1)`, calling `f` with its cells.
pub fn for_each_path(m: usize, n: usize, mut f: impl FnMut(&[(usize, usize)])) {
    type Visitor<'a> = dyn FnMut(&[(usize, usize)]) + 'a;
    fn walk(m: usize, n: usize, path: &mut Vec<(usize, usize)>, f: &mut Visitor) {
        let (i, j) = *path.last().unwrap();
        if (i, j) == (m - 1, n - 1) {
            f(path);
            return;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < m && nj < n {
                path.push((ni, nj));
                walk(m, n, path, f);
                path.pop();
            }
        }
    }
    if m == 0 || n == 0 {
        return;
    }
    let mut path = vec![(0, 0)];
    walk(m, n, &mut path, &mut f);
}

/// Soft-min over the costs of every warping path, by explicit enumeration.
pub fn brute_force_soft_dtw(x: &FeatureSequence, y: &FeatureSequence, cfg: &SoftDtwConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(x, y, "brute_force_soft_dtw")?;
    if x.len() > BRUTE_FORCE_MAX_LEN || y.len() > BRUTE_FORCE_MAX_LEN {
        return Err(Error::InvalidArgument(format!(
            "path enumeration limited to {BRUTE_FORCE_MAX_LEN} frames per side, got {}x{}",
            x.len(),
            y.len()
        )));
    }
    let cost = pairwise_cost(x, y, cfg.distance);
    let mut totals = Vec::new();
    for_each_path(x.len(), y.len(), |p| {
        totals.push(p.iter().map(|&(i, j)| cost[(i, j)]).sum::<f64>());
    });
    soft_min(&totals, cfg.gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardDtw {
    pub value: f64,
    pub path: AlignmentPath,
}

/// Classic DTW. On ties the backtrace prefers the diagonal, then `(i-1, j)`,
/// then `(i, j-1)`.
pub fn hard_dtw(x: &FeatureSequence, y: &FeatureSequence) -> Result<HardDtw> {
    check_pair(x, y, "hard_dtw")?;
    let (m, n) = (x.len(), y.len());
    let cost = pairwise_cost(x, y, Distance::SquaredEuclidean);
    let mut acc = Matrix::filled(m + 1, n + 1, f64::INFINITY);
    acc[(0, 0)] = 0.0;
    for i in 1..=m {
        for j in 1..=n {
            let best = acc[(i - 1, j - 1)].min(acc[(i - 1, j)]).min(acc[(i, j - 1)]);
            acc[(i, j)] = cost[(i - 1, j - 1)] + best;
        }
    }
    let mut steps = vec![(m - 1, n - 1)];
    let (mut i, mut j) = (m, n);
    while (i, j) != (1, 1) {
        let mut next = (i - 1, j - 1);
        let mut best = acc[next];
        if acc[(i - 1, j)] < best {
            next = (i - 1, j);
            best = acc[next];
        }
        if acc[(i, j - 1)] < best {
            next = (i, j - 1);
        }
        (i, j) = next;
        steps.push((i - 1, j - 1));
    }
    steps.reverse();
    Ok(HardDtw {
        value: acc[(m, n)],
        path: AlignmentPath::new(steps, m, n)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsequenceMatch {
    /// Best alignment cost divided by the query length.
    pub value: f64,
    /// Unnormalized best alignment cost.
    pub cost: f64,
    /// First matched document frame.
    pub start: usize,
    /// One past the last matched document frame.
    pub end: usize,
}

/// DTW with a free start and end on the document axis.
pub fn subsequence_dtw(query: &FeatureSequence, doc: &FeatureSequence) -> Result<SubsequenceMatch> {
    check_pair(query, doc, "subsequence_dtw")?;
    let (m, n) = (query.len(), doc.len());
    let cost = pairwise_cost(query, doc, Distance::SquaredEuclidean);
    let mut acc = Matrix::filled(m + 1, n + 1, f64::INFINITY);
    let mut start = vec![0usize; (m + 1) * (n + 1)];
    for j in 0..=n {
        acc[(0, j)] = 0.0;
        start[j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let mut from = (i - 1, j - 1);
            let mut best = acc[from];
            if acc[(i - 1, j)] < best {
                from = (i - 1, j);
                best = acc[from];
            }
            if acc[(i, j - 1)] < best {
                from = (i, j - 1);
                best = acc[from];
            }
            acc[(i, j)] = cost[(i - 1, j - 1)] + best;
            // Leaving row 0 at column c means the match starts at document frame c
            // (diagonal) or c - 1 (vertical); both are frame j - 1 here.
            start[i * (n + 1) + j] = if from.0 == 0 {
                j - 1
            } else {
                start[from.0 * (n + 1) + from.1]
            };
        }
    }
    let mut end = 1;
    for j in 2..=n {
        if acc[(m, j)] < acc[(m, end)] {
            end = j;
        }
    }
    let total = acc[(m, end)];
    Ok(SubsequenceMatch {
        value: total / m as f64,
        cost: total,
        start: start[m * (n + 1) + end],
        end,
    })
}

/// Normalized soft-DTW divergence and its gradients.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub value: f64,
    pub grad_x: Matrix,
    pub grad_y: Matrix,
}

/// `L(x, y) - (L(x, x) + L(y, y)) / 2`, without length scaling.
pub fn divergence(x: &FeatureSequence, y: &FeatureSequence, cfg: &SoftDtwConfig) -> Result<Divergence> {
    let xy = soft_dtw(x, y, cfg)?;
    let xx = soft_dtw(x, x, cfg)?;
    let yy = soft_dtw(y, y, cfg)?;
    let value = xy.value - 0.5 * (xx.value + yy.value);
    // The self terms depend on their argument through both slots.
    let mut grad_x = xy.grad_x;
    grad_x.add_scaled(&xx.grad_x, -0.5);
    grad_x.add_scaled(&xx.grad_y, -0.5);
    let mut grad_y = xy.grad_y;
    grad_y.add_scaled(&yy.grad_x, -0.5);
    grad_y.add_scaled(&yy.grad_y, -0.5);
    Ok(Divergence {
        value,
        grad_x,
        grad_y,
    })
}

/// [`divergence`] divided by the total length `m + n`.
pub fn normalized_divergence(
    x: &FeatureSequence,
    y: &FeatureSequence,
    cfg: &SoftDtwConfig,
) -> Result<Divergence> {
    let mut d = divergence(x, y, cfg)?;
    let scale = 1.0 / (x.len() + y.len()) as f64;
    d.value *= scale;
    d.grad_x.scale(scale);
    d.grad_y.scale(scale);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[&[f64]]) -> FeatureSequence {
        FeatureSequence::from_rows(rows).unwrap()
    }

    #[test]
    fn soft_min_examples() {
        assert_eq!(soft_min(&[3.0], 0.1).unwrap(), 3.0);
        let v = soft_min(&[2.0, 2.0], 0.1).unwrap();
        assert!((v - (2.0 - 0.1 * 2f64.ln())).abs() < 1e-12);
        assert!((v - 1.930_685_3).abs() < 1e-7);
        assert!(soft_min(&[0.0, 1.0], 0.001).unwrap().abs() < 1e-6);
        assert!(soft_min(&[], 0.1).is_err());
        assert!(soft_min(&[1.0], 0.0).is_err());
    }

    #[test]
    fn soft_min_ignores_the_boundary_sentinel() {
        for a in [-3.5, 0.0, 1e-3, 7.25, 1e6] {
            let with = soft_min(&[a, BOUNDARY], 0.1).unwrap();
            assert!((with - a).abs() <= 1e-12, "{a}: {with}");
            let with = soft_min3(a, BOUNDARY, BOUNDARY, 0.01);
            assert!((with - a).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_frame_cases() {
        let r = soft_dtw(&seq(&[&[0.0]]), &seq(&[&[0.0]]), &SoftDtwConfig::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad_x.as_slice(), &[0.0]);

        for gamma in [1e-3, 0.1, 5.0] {
            let r = soft_dtw(
                &seq(&[&[1.0]]),
                &seq(&[&[3.0]]),
                &SoftDtwConfig::with_gamma(gamma),
            )
            .unwrap();
            assert_eq!(r.value, 4.0);
            assert_eq!(r.grad_x.as_slice(), &[-4.0]);
            assert_eq!(r.grad_y.as_slice(), &[4.0]);
            assert_eq!(r.dp_table[(1, 1)], r.value);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = seq(&[&[0.0, 1.0]]);
        let b = seq(&[&[0.0]]);
        let cfg = SoftDtwConfig::default();
        assert!(matches!(soft_dtw(&a, &b, &cfg), Err(Error::DimensionMismatch(_))));
        assert!(hard_dtw(&a, &b).is_err());
        assert!(subsequence_dtw(&a, &b).is_err());
        assert!(normalized_divergence(&a, &b, &cfg).is_err());
        assert!(soft_dtw(&a, &a, &SoftDtwConfig::with_gamma(-1.0)).is_err());
    }

    #[test]
    fn brute_force_census() {
        let cfg = SoftDtwConfig::default();
        let x = seq(&[&[0.5, 1.0]]);
        let y = seq(&[&[1.5, -1.0]]);
        assert_eq!(brute_force_soft_dtw(&x, &y, &cfg).unwrap(), 5.0);

        // 2x2 all-equal frames: paths of length 2, 3 and 2 with zero cost.
        let z = seq(&[&[1.0], &[1.0]]);
        let v = brute_force_soft_dtw(&z, &z, &cfg).unwrap();
        assert!((v + 0.1 * 3f64.ln()).abs() < 1e-12);

        let mut count = 0;
        for_each_path(3, 3, |_| count += 1);
        assert_eq!(count, 13);
        assert_eq!(path_count(3, 3), 13);
        assert_eq!(path_count(3, 4), 25);
        assert_eq!(path_count(1, 7), 1);

        let long = FeatureSequence::new(vec![0.0; 9], 9, 1).unwrap();
        assert!(brute_force_soft_dtw(&long, &z, &cfg).is_err());
    }

    #[test]
    fn every_enumerated_path_is_valid() {
        for_each_path(4, 3, |p| {
            AlignmentPath::new(p.to_vec(), 4, 3).unwrap();
        });
    }

    #[test]
    fn hard_dtw_examples() {
        let x = seq(&[&[0.0], &[1.0], &[2.0]]);
        let r = hard_dtw(&x, &x).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.path.is_diagonal());
        assert_eq!(r.path.len(), 3);

        let y = seq(&[&[0.0], &[2.0]]);
        let r = hard_dtw(&x, &y).unwrap();
        assert_eq!(r.value, 1.0);
        // Brute force over the 5 paths of the 3x2 grid.
        let cost = pairwise_cost(&x, &y, Distance::SquaredEuclidean);
        let mut best = f64::INFINITY;
        for_each_path(3, 2, |p| {
            best = best.min(p.iter().map(|&c| cost[c]).sum());
        });
        assert_eq!(best, r.value);
        let along: f64 = r.path.steps().iter().map(|&c| cost[c]).sum();
        assert_eq!(along, r.value);
    }

    #[test]
    fn hard_dtw_tie_break_prefers_diagonal_then_vertical() {
        // All costs zero: every predecessor ties.
        let z = seq(&[&[0.0], &[0.0], &[0.0]]);
        let w = seq(&[&[0.0], &[0.0]]);
        let r = hard_dtw(&z, &w).unwrap();
        assert_eq!(r.path.steps(), &[(0, 0), (1, 0), (2, 1)]);
    }

    #[test]
    fn subsequence_examples() {
        let doc = seq(&[&[5.0], &[0.0], &[1.0], &[2.0], &[7.0]]);
        let q = seq(&[&[0.0], &[1.0], &[2.0]]);
        let m = subsequence_dtw(&q, &doc).unwrap();
        assert_eq!((m.value, m.start, m.end), (0.0, 1, 4));

        let q1 = seq(&[&[6.5]]);
        let m = subsequence_dtw(&q1, &doc).unwrap();
        assert_eq!(m.value, 0.25);
        assert_eq!((m.start, m.end), (4, 5));
    }

    #[test]
    fn identical_sequences_have_zero_divergence() {
        let x = seq(&[&[0.1, 0.2], &[0.3, -0.4], &[1.0, 0.0]]);
        let d = normalized_divergence(&x, &x, &SoftDtwConfig::default()).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.grad_x.max_abs(), 0.0);
        assert_eq!(d.grad_y.max_abs(), 0.0);
    }

    #[test]
    fn normalized_is_divergence_over_total_length() {
        let x = seq(&[&[0.1], &[0.9], &[0.4]]);
        let y = seq(&[&[0.0], &[1.0]]);
        let cfg = SoftDtwConfig::default();
        let raw = divergence(&x, &y, &cfg).unwrap();
        let norm = normalized_divergence(&x, &y, &cfg).unwrap();
        assert!((norm.value - raw.value / 5.0).abs() < 1e-15);
        assert!(norm.value > 0.0);
    }
}
