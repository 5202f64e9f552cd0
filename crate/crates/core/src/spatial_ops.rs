//! Finite-difference diffusion operator and cubic Lagrange interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{PideError, Result};
use crate::grids::SpatialGrid;
use crate::levy::Mat2;
use crate::sparse::Csr;

/// Three-point stencils `(m-1, m, m+1)` for first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FdCoefficients {
    pub alpha: Vec<[f64; 3]>,
    pub beta: Vec<[f64; 3]>,
}

pub fn build_fd_coeffs(grid: &SpatialGrid) -> Result<FdCoefficients> {
    let n = grid.n_x;
    if n < 2 {
        return Err(PideError::InvalidConfig("finite differences need N_x >= 2".into()));
    }
    let h = grid.widths();
    let mut alpha = vec![[0.0; 3]; n + 1];
    let mut beta = vec![[0.0; 3]; n + 1];
    for m in 1..n {
        let (a, b) = (h[m], h[m + 1]);
        alpha[m] = [-b / (a * (a + b)), (b - a) / (a * b), a / (b * (a + b))];
        beta[m] = [2.0 / (a * (a + b)), -2.0 / (a * b), 2.0 / (b * (a + b))];
    }
    alpha[n] = [-1.0 / h[n], 1.0 / h[n], 0.0];
    Ok(FdCoefficients { alpha, beta })
}

/// `D = 1/2 s11 I (x) X^2 D2 + s12 X D1 (x) X D1 + 1/2 s22 X^2 D2 (x) I`
/// on vectors indexed `m2 * (n_x + 1) + m1`.
pub fn build_diffusion(grid: &SpatialGrid, sigma_w_sq: &Mat2) -> Result<Csr> {
    let s = sigma_w_sq;
    if (s[0][1] - s[1][0]).abs() > 1e-12 * (s[0][0].abs() + s[1][1].abs() + 1e-300) {
        return Err(PideError::InvalidConfig("diffusion matrix must be symmetric".into()));
    }
    let fd = build_fd_coeffs(grid)?;
    let n = grid.len();
    let x = &grid.nodes;
    let mut t = Vec::with_capacity(9 * n * n);
    for m2 in 0..n {
        for m1 in 0..n {
            let row = m2 * n + m1;
            for (j, off) in [-1i64, 0, 1].into_iter().enumerate() {
                let c1 = m1 as i64 + off;
                if (0..n as i64).contains(&c1) {
                    let v = 0.5 * s[0][0] * x[m1] * x[m1] * fd.beta[m1][j];
                    t.push((row, m2 * n + c1 as usize, v));
                }
                let c2 = m2 as i64 + off;
                if (0..n as i64).contains(&c2) {
                    let v = 0.5 * s[1][1] * x[m2] * x[m2] * fd.beta[m2][j];
                    t.push((row, c2 as usize * n + m1, v));
                }
            }
            if s[0][1] != 0.0 {
                for (j2, off2) in [-1i64, 0, 1].into_iter().enumerate() {
                    let c2 = m2 as i64 + off2;
                    if !(0..n as i64).contains(&c2) {
                        continue;
                    }
                    for (j1, off1) in [-1i64, 0, 1].into_iter().enumerate() {
                        let c1 = m1 as i64 + off1;
                        if !(0..n as i64).contains(&c1) {
                            continue;
                        }
                        let v = s[0][1] * x[m1] * fd.alpha[m1][j1] * x[m2] * fd.alpha[m2][j2];
                        t.push((row, c2 as usize * n + c1 as usize, v));
                    }
                }
            }
        }
    }
    Csr::from_triplets(n * n, n * n, t)
}

/// Treatment of interpolation targets outside the source node range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    Zero,
    LinearExtrapolation,
    Clamp,
}

/// Lagrange weights of a single target on increasing `source` nodes.
pub fn lagrange_weights(source: &[f64], t: f64, policy: BoundaryPolicy) -> Vec<(usize, f64)> {
    let n = source.len();
    let (first, last) = (source[0], source[n - 1]);
    if t < first || t > last {
        let low = t < first;
        return match policy {
            BoundaryPolicy::Zero => Vec::new(),
            BoundaryPolicy::Clamp => vec![(if low { 0 } else { n - 1 }, 1.0)],
            BoundaryPolicy::LinearExtrapolation => {
                let (i, j) = if low { (0, 1) } else { (n - 2, n - 1) };
                let (a, b) = (source[i], source[j]);
                vec![(i, (b - t) / (b - a)), (j, (t - a) / (b - a))]
            }
        };
    }
    let points = n.min(4);
    // first index with source[k] > t, so t lies in [source[k-1], source[k]]
    let k = source.partition_point(|&s| s <= t).clamp(1, n - 1);
    let start = (k as i64 - 2).clamp(0, (n - points) as i64) as usize;
    let window = &source[start..start + points];
    let mut out = Vec::with_capacity(points);
    for (i, &si) in window.iter().enumerate() {
        let mut w = 1.0;
        for (j, &sj) in window.iter().enumerate() {
            if i != j {
                w *= (t - sj) / (si - sj);
            }
        }
        if w != 0.0 {
            out.push((start + i, w));
        }
    }
    out
}

pub fn interpolation_1d(source: &[f64], targets: &[f64], policy: BoundaryPolicy) -> Result<Csr> {
    if source.len() < 2 {
        return Err(PideError::InvalidConfig("interpolation needs at least two source nodes".into()));
    }
    if source.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PideError::InvalidConfig("source nodes must be strictly increasing".into()));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(PideError::Domain("non-finite interpolation target".into()));
    }
    let mut t = Vec::with_capacity(4 * targets.len());
    for (r, &y) in targets.iter().enumerate() {
        for (c, w) in lagrange_weights(source, y, policy) {
            t.push((r, c, w));
        }
    }
    Csr::from_triplets(targets.len(), source.len(), t)
}

/// Interpolation between tensor grids as a pair of one-dimensional factors.
/// Vectors are indexed `i2 * len1 + i1` on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInterp {
    pub axis1: Csr,
    pub axis2: Csr,
}

impl TensorInterp {
    pub fn new(sources: [&[f64]; 2], targets: [&[f64]; 2], policy: BoundaryPolicy) -> Result<Self> {
        Ok(TensorInterp {
            axis1: interpolation_1d(sources[0], targets[0], policy)?,
            axis2: interpolation_1d(sources[1], targets[1], policy)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.axis1.rows * self.axis2.rows
    }

    pub fn cols(&self) -> usize {
        self.axis1.cols * self.axis2.cols
    }

    /// `out = (A2 (x) A1) x`, using `scratch` of length `axis2.cols * axis1.rows`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        let (t1, s1) = (self.axis1.rows, self.axis1.cols);
        let s2 = self.axis2.cols;
        debug_assert_eq!(x.len(), s1 * s2);
        debug_assert_eq!(out.len(), self.rows());
        scratch.clear();
        scratch.resize(s2 * t1, 0.0);
        for (src, dst) in x.chunks_exact(s1).zip(scratch.chunks_exact_mut(t1)) {
            self.axis1.mul_vec_into(src, dst);
        }
        for (r2, dst) in out.chunks_exact_mut(t1).enumerate() {
            dst.fill(0.0);
            let (idx, val) = self.axis2.row(r2);
            for (&c2, &w) in idx.iter().zip(val) {
                let src = &scratch[c2 * t1..(c2 + 1) * t1];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(x, &mut out, &mut Vec::new());
        out
    }

    pub fn to_csr(&self) -> Csr {
        Csr::kron(&self.axis2, &self.axis1)
    }
}

/// Interpolation from a tensor source grid to arbitrary points.
pub fn build_interpolation(sources: [&[f64]; 2], targets: &[[f64; 2]], policy: BoundaryPolicy) -> Result<Csr> {
    for s in sources {
        if s.len() < 2 || s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PideError::InvalidConfig("source nodes must be strictly increasing".into()));
        }
    }
    let n1 = sources[0].len();
    let mut t = Vec::with_capacity(16 * targets.len());
    for (r, p) in targets.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(PideError::Domain("non-finite interpolation target".into()));
        }
        let w1 = lagrange_weights(sources[0], p[0], policy);
        let w2 = lagrange_weights(sources[1], p[1], policy);
        for &(c2, b) in &w2 {
            for &(c1, a) in &w1 {
                t.push((r, c2 * n1 + c1, a * b));
            }
        }
    }
    Csr::from_triplets(targets.len(), n1 * sources[1].len(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::build_spatial_grid;

    fn grid(n: usize) -> SpatialGrid {
        build_spatial_grid(n, 600.0, 250.0, 0.65).unwrap()
    }

    #[test]
    fn uniform_coefficients() {
        let g = build_spatial_grid(10, 100.0, 50.0, 0.5).unwrap();
        let fd = build_fd_coeffs(&g).unwrap();
        let h = 10.0;
        for m in 1..10 {
            for (a, e) in fd.alpha[m].iter().zip([-0.5 / h, 0.0, 0.5 / h]) {
                assert!((a - e).abs() < 1e-15);
            }
            for (b, e) in fd.beta[m].iter().zip([1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h)]) {
                assert!((b - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stencils_exact_on_polynomials() {
        let g = grid(37);
        let fd = build_fd_coeffs(&g).unwrap();
        let x = &g.nodes;
        for m in 1..g.n_x {
            let d2: f64 = (0..3).map(|j| fd.beta[m][j] * x[m + j - 1].powi(2)).sum();
            assert!((d2 - 2.0).abs() < 1e-9, "{d2}");
            let d1: f64 = (0..3).map(|j| fd.alpha[m][j] * x[m + j - 1].powi(2)).sum();
            assert!((d1 - 2.0 * x[m]).abs() < 1e-9 * x[m].max(1.0));
            assert!(fd.alpha[m].iter().sum::<f64>().abs() < 1e-12);
        }
        let n = g.n_x;
        let back = fd.alpha[n][0] * x[n - 1] + fd.alpha[n][1] * x[n];
        assert!((back - 1.0).abs() < 1e-12);
        assert_eq!(fd.beta[n], [0.0; 3]);
        assert_eq!(fd.alpha[0], [0.0; 3]);
    }

    fn sample(g: &SpatialGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let n = g.len();
        (0..n * n).map(|i| f(g.nodes[i % n], g.nodes[i / n])).collect()
    }

    #[test]
    fn diffusion_on_separable_functions() {
        let g = grid(24);
        let s = [[0.04, 0.01], [0.01, 0.09]];
        let d = build_diffusion(&g, &s).unwrap();
        assert!(d.max_row_nnz() <= 9);
        let n = g.len();
        let bilinear = d.mul_vec(&sample(&g, |a, b| a * b));
        let square = d.mul_vec(&sample(&g, |a, _| a * a));
        let ones = d.mul_vec(&vec![1.0; n * n]);
        for m2 in 1..g.n_x {
            for m1 in 1..g.n_x {
                let i = m2 * n + m1;
                let (x1, x2) = (g.nodes[m1], g.nodes[m2]);
                assert!((bilinear[i] - 0.01 * x1 * x2).abs() < 1e-9 * x1 * x2);
                assert!((square[i] - 0.04 * x1 * x1).abs() < 1e-9 * x1 * x1);
            }
        }
        assert!(ones.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn diffusion_degenerates_on_axes() {
        let g = grid(12);
        let n = g.len();
        let only_axis1 = build_diffusion(&g, &[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        for m2 in 0..n {
            let (idx, _) = only_axis1.row(m2 * n);
            assert!(idx.is_empty());
        }
        let only_axis2 = build_diffusion(&g, &[[0.0, 0.0], [0.0, 1.0]]).unwrap();
        for m1 in 0..n {
            let (idx, _) = only_axis2.row(m1);
            assert!(idx.is_empty());
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_constants() {
        let g = grid(20);
        let targets: Vec<f64> = g.nodes.iter().map(|x| x * 0.97 + 0.3).collect();
        let a = interpolation_1d(&g.nodes, &targets, BoundaryPolicy::Zero).unwrap();
        for r in 0..a.rows {
            let (_, v) = a.row(r);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let at_nodes = interpolation_1d(&g.nodes, &g.nodes, BoundaryPolicy::Zero).unwrap();
        assert_eq!(at_nodes, Csr::identity(g.len()));
    }

    #[test]
    fn cubic_reproduction_in_two_dimensions() {
        let g = grid(18);
        let n = g.len();
        let f = |a: f64, b: f64| a.powi(3) - 2.0 * a * b * b + b;
        let v = sample(&g, f);
        let pts: Vec<[f64; 2]> = (0..50)
            .map(|k| {
                let u = (k as f64 * 0.618_033_988_75).fract();
                let w = (k as f64 * 0.414_213_562_37).fract();
                [600.0 * u, 600.0 * w]
            })
            .collect();
        let t = build_interpolation([&g.nodes, &g.nodes], &pts, BoundaryPolicy::Zero).unwrap();
        assert!(t.max_row_nnz() <= 16);
        let out = t.mul_vec(&v);
        for (p, o) in pts.iter().zip(&out) {
            let e = f(p[0], p[1]);
            assert!((o - e).abs() <= 1e-12 * 600f64.powi(3), "{o} vs {e}");
        }
        assert_eq!(v.len(), n * n);
    }

    #[test]
    fn boundary_policies() {
        let s = [1.0, 2.0, 4.0, 8.0];
        assert!(lagrange_weights(&s, 9.0, BoundaryPolicy::Zero).is_empty());
        assert_eq!(lagrange_weights(&s, 0.5, BoundaryPolicy::Clamp), vec![(0, 1.0)]);
        let w = lagrange_weights(&s, 0.0, BoundaryPolicy::LinearExtrapolation);
        // line through (1, f1), (2, f2) at 0: 2 f1 - f2
        assert_eq!(w, vec![(0, 2.0), (1, -1.0)]);
        let w = lagrange_weights(&s, 10.0, BoundaryPolicy::LinearExtrapolation);
        assert_eq!(w, vec![(2, -0.5), (3, 1.5)]);
    }

    #[test]
    fn tensor_matches_assembled() {
        let g = grid(10);
        let t1: Vec<f64> = (0..7).map(|k| 13.0 + 97.0 * k as f64).collect();
        let t2: Vec<f64> = (0..5).map(|k| 5.0 + 150.0 * k as f64).collect();
        let ti = TensorInterp::new([&g.nodes, &g.nodes], [&t1, &t2], BoundaryPolicy::Zero).unwrap();
        let v: Vec<f64> = (0..g.len() * g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let direct = ti.apply(&v);
        let pts: Vec<[f64; 2]> = (0..35).map(|i| [t1[i % 7], t2[i / 7]]).collect();
        let assembled = build_interpolation([&g.nodes, &g.nodes], &pts, BoundaryPolicy::Zero).unwrap();
        let ref_out = assembled.mul_vec(&v);
        let kron_out = ti.to_csr().mul_vec(&v);
        for i in 0..35 {
            assert!((direct[i] - ref_out[i]).abs() < 1e-13);
            assert!((direct[i] - kron_out[i]).abs() < 1e-13);
        }
    }
}
