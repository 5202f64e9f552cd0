//! Discretisation of the jump integral: the square z-grid, its three-region
//! partition, the weight matrix and the corrected drift/diffusion terms.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PideError, Result};
use crate::levy::{find_truncation_radius, LevyDensity, Mat2, NtsModel, Vec2};
use crate::special::gauss_legendre;

pub const TRUNCATION_LEVEL: f64 = 1e-8;
const CELL_REL_TOL: f64 = 1e-10;
const RING_REL_TOL: f64 = 1e-8;
const MAX_DEPTH: usize = 40;

/// Uniform cell-centred grid on `[-z_max, z_max]^2` with `2 n_z` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZGrid {
    pub n_z: usize,
    pub h_z: f64,
}

impl ZGrid {
    /// Number of cells per axis.
    pub fn len(&self) -> usize {
        2 * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.n_z == 0
    }

    /// Centre coordinate of the cell with storage index `k` in `0..2 n_z`
    /// (signed index `k - n_z`).
    #[inline]
    pub fn center(&self, k: usize) -> f64 {
        (k as f64 - self.n_z as f64 + 0.5) * self.h_z
    }

    pub fn cell(&self, k1: usize, k2: usize) -> Rect {
        let a1 = (k1 as f64 - self.n_z as f64) * self.h_z;
        let a2 = (k2 as f64 - self.n_z as f64) * self.h_z;
        Rect {
            x0: a1,
            x1: a1 + self.h_z,
            y0: a2,
            y1: a2 + self.h_z,
        }
    }
}

/// Radii (in the max-norm) bounding the inner, middle and outer regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionPartition {
    pub z_max_i: f64,
    pub z_max_ii: f64,
    pub z_max_iii: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Inner,
    Middle,
    Outer,
}

impl RegionPartition {
    pub fn classify(&self, z: &Vec2) -> Region {
        let n = z[0].abs().max(z[1].abs());
        if n <= self.z_max_i {
            Region::Inner
        } else if n <= self.z_max_ii {
            Region::Middle
        } else {
            Region::Outer
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    fn quarters(&self) -> [Rect; 4] {
        let xm = 0.5 * (self.x0 + self.x1);
        let ym = 0.5 * (self.y0 + self.y1);
        [
            Rect { x0: self.x0, x1: xm, y0: self.y0, y1: ym },
            Rect { x0: xm, x1: self.x1, y0: self.y0, y1: ym },
            Rect { x0: self.x0, x1: xm, y0: ym, y1: self.y1 },
            Rect { x0: xm, x1: self.x1, y0: ym, y1: self.y1 },
        ]
    }

    fn contains_origin(&self) -> bool {
        self.x0 <= 0.0 && self.x1 >= 0.0 && self.y0 <= 0.0 && self.y1 >= 0.0
    }
}

/// Discrete jump operator and the coefficients of the approximating generator.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureScheme {
    pub grid: ZGrid,
    pub partition: RegionPartition,
    /// Weights stored row-major as `omega[k2 * 2 n_z + k1]`.
    pub omega: Vec<f64>,
    pub sigma_w_sq: Mat2,
    pub kappa_w: Vec2,
    pub r_w: f64,
    pub second_moment_ri: Mat2,
}

impl QuadratureScheme {
    pub fn weight(&self, k1: usize, k2: usize) -> f64 {
        self.omega[k2 * self.grid.len() + k1]
    }

    pub fn total_weight(&self) -> f64 {
        self.omega.iter().sum()
    }
}

pub fn build_zgrid(model: &NtsModel, n_z: usize) -> Result<(ZGrid, RegionPartition)> {
    if n_z < 4 {
        return Err(PideError::InvalidConfig(format!("N_z must be at least 4, got {n_z}")));
    }
    let z_max_iii = find_truncation_radius(model, TRUNCATION_LEVEL)?;
    Ok(zgrid_with_radius(z_max_iii, n_z))
}

pub(crate) fn zgrid_with_radius(z_max_iii: f64, n_z: usize) -> (ZGrid, RegionPartition) {
    let h_z = z_max_iii / n_z as f64;
    (
        ZGrid { n_z, h_z },
        RegionPartition {
            z_max_i: 2.0 * h_z,
            z_max_ii: 0.1f64.sqrt() * z_max_iii,
            z_max_iii,
        },
    )
}

/// Tensor Gauss-Legendre rules of two orders used for error estimation.
struct Rules {
    low: (Vec<f64>, Vec<f64>),
    high: (Vec<f64>, Vec<f64>),
}

impl Rules {
    fn new() -> Self {
        Rules {
            low: gauss_legendre(6),
            high: gauss_legendre(10),
        }
    }
}

fn tensor<const K: usize>(f: &impl Fn(f64, f64) -> [f64; K], r: &Rect, rule: &(Vec<f64>, Vec<f64>)) -> [f64; K] {
    let (xs, ws) = rule;
    let cx = 0.5 * (r.x0 + r.x1);
    let hx = 0.5 * (r.x1 - r.x0);
    let cy = 0.5 * (r.y0 + r.y1);
    let hy = 0.5 * (r.y1 - r.y0);
    let mut acc = [0.0; K];
    for (yi, wy) in xs.iter().zip(ws) {
        let y = cy + hy * yi;
        for (xi, wx) in xs.iter().zip(ws) {
            let v = f(cx + hx * xi, y);
            let w = wx * wy;
            for k in 0..K {
                acc[k] += w * v[k];
            }
        }
    }
    for a in acc.iter_mut() {
        *a *= hx * hy;
    }
    acc
}

fn err_norm<const K: usize>(a: &[f64; K], b: &[f64; K]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mag<const K: usize>(a: &[f64; K]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Adaptive quadtree integration; cells that fail the two-rule test are
/// split, so refinement concentrates at the corner closest to a singularity.
fn adaptive<const K: usize>(
    f: &impl Fn(f64, f64) -> [f64; K],
    r: &Rect,
    rules: &Rules,
    rel_tol: f64,
) -> Result<[f64; K]> {
    let hi = tensor(f, r, &rules.high);
    let lo = tensor(f, r, &rules.low);
    let tol = (rel_tol * mag(&hi)).max(f64::MIN_POSITIVE);
    if err_norm(&hi, &lo) <= tol {
        return Ok(hi);
    }
    let mut worst = 0.0f64;
    let out = refine(f, r, rules, tol, 0, &mut worst);
    if worst > tol {
        return Err(PideError::Integration {
            estimate: out[0],
            error: worst,
        });
    }
    Ok(out)
}

fn refine<const K: usize>(
    f: &impl Fn(f64, f64) -> [f64; K],
    r: &Rect,
    rules: &Rules,
    tol: f64,
    depth: usize,
    worst: &mut f64,
) -> [f64; K] {
    let mut total = [0.0; K];
    for q in r.quarters() {
        let hi = tensor(f, &q, &rules.high);
        let lo = tensor(f, &q, &rules.low);
        let e = err_norm(&hi, &lo);
        let part = if e <= 0.25 * tol || depth >= MAX_DEPTH {
            if depth >= MAX_DEPTH {
                *worst = worst.max(e);
            }
            hi
        } else {
            refine(f, &q, rules, 0.25 * tol, depth + 1, worst)
        };
        for k in 0..K {
            total[k] += part[k];
        }
    }
    total
}

/// `int_cell |z|^2 l(z) dz` with the Euclidean norm.
pub fn cell_moment(model: &NtsModel, cell: &Rect) -> Result<f64> {
    if cell.contains_origin() {
        return Err(PideError::Domain("cell contains the origin".into()));
    }
    let dens = model.density();
    cell_moment_with(&dens, cell, &Rules::new())
}

fn cell_moment_with(dens: &LevyDensity, cell: &Rect, rules: &Rules) -> Result<f64> {
    let f = |x: f64, y: f64| [(x * x + y * y) * dens.eval(&[x, y])];
    Ok(adaptive(&f, cell, rules, CELL_REL_TOL)?[0])
}

/// `int_{|z|_inf <= z_max_i} z z^T l(z) dz`, summed over dyadic square rings.
pub fn second_moment_ri(model: &NtsModel, partition: &RegionPartition) -> Result<Mat2> {
    if !(model.alpha < 1.0) {
        return Err(PideError::Domain("second moment diverges for alpha >= 1".into()));
    }
    let dens = model.density();
    let rules = Rules::new();
    let f = |x: f64, y: f64| {
        let l = dens.eval(&[x, y]);
        [x * x * l, x * y * l, y * y * l]
    };
    // ring contributions shrink by 2^{-(2 - 2 alpha)} per halving
    let ratio = 2f64.powf(-(2.0 - 2.0 * model.alpha));
    let mut total = [0.0; 3];
    let mut outer = partition.z_max_i;
    for _ in 0..400 {
        let side = 0.5 * outer;
        let mut ring = [0.0; 3];
        for j in 0..4 {
            for i in 0..4 {
                if (1..3).contains(&i) && (1..3).contains(&j) {
                    continue;
                }
                let cell = Rect {
                    x0: -outer + i as f64 * side,
                    x1: -outer + (i + 1) as f64 * side,
                    y0: -outer + j as f64 * side,
                    y1: -outer + (j + 1) as f64 * side,
                };
                let v = adaptive(&f, &cell, &rules, 0.1 * RING_REL_TOL)?;
                for k in 0..3 {
                    ring[k] += v[k];
                }
            }
        }
        for k in 0..3 {
            total[k] += ring[k];
        }
        let trace_ring = ring[0] + ring[2];
        let trace = total[0] + total[2];
        if trace_ring * ratio / (1.0 - ratio) <= RING_REL_TOL * trace {
            for k in 0..3 {
                total[k] += ring[k] * ratio / (1.0 - ratio);
            }
            return Ok([[total[0], total[1]], [total[1], total[2]]]);
        }
        outer = side;
    }
    Err(PideError::Integration {
        estimate: total[0] + total[2],
        error: f64::NAN,
    })
}

pub fn build_scheme(model: &NtsModel, grid: &ZGrid, partition: &RegionPartition) -> Result<QuadratureScheme> {
    model.validate()?;
    let n = grid.len();
    let dens = model.density();
    let rules = Rules::new();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|k2| {
            let z2 = grid.center(k2);
            let mut row = vec![0.0; n];
            for (k1, w) in row.iter_mut().enumerate() {
                let z = [grid.center(k1), z2];
                *w = match partition.classify(&z) {
                    Region::Inner => 0.0,
                    Region::Middle => {
                        let m = cell_moment_with(&dens, &grid.cell(k1, k2), &rules)?;
                        m / (z[0] * z[0] + z[1] * z[1])
                    }
                    Region::Outer => dens.eval(&z) * grid.h_z * grid.h_z,
                };
            }
            Ok(row)
        })
        .collect();
    let mut omega = Vec::with_capacity(n * n);
    for row in rows {
        omega.extend(row?);
    }

    let mut total = 0.0;
    let mut jump_drift = [0.0; 2];
    for k2 in 0..n {
        let e2 = grid.center(k2).exp_m1();
        for k1 in 0..n {
            let w = omega[k2 * n + k1];
            total += w;
            jump_drift[0] += w * grid.center(k1).exp_m1();
            jump_drift[1] += w * e2;
        }
    }
    let m_ri = second_moment_ri(model, partition)?;
    let s = model.sigma_sq();
    Ok(QuadratureScheme {
        grid: *grid,
        partition: *partition,
        omega,
        sigma_w_sq: [
            [s[0][0] + m_ri[0][0], s[0][1] + m_ri[0][1]],
            [s[1][0] + m_ri[1][0], s[1][1] + m_ri[1][1]],
        ],
        kappa_w: [model.r - jump_drift[0], model.r - jump_drift[1]],
        r_w: model.r + total,
        second_moment_ri: m_ri,
    })
}
