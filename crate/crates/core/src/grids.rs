//! Spatial, log-spaced and departure grids.

use serde::Serialize;

use crate::error::{PideError, Result};
use crate::levy::Vec2;

/// Piecewise map from the uniform computational coordinate to price space:
/// linear up to `x_int`, sinh-stretched beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Stretch {
    Uniform,
    Sinh { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialGrid {
    pub n_x: usize,
    pub x_max: f64,
    pub x_int: f64,
    pub stretch: Stretch,
    pub nodes: Vec<f64>,
}

impl SpatialGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `h_{x,m} = x_m - x_{m-1}` for `m = 1..=n_x`; index 0 is unused (0).
    pub fn widths(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        for m in 1..self.len() {
            w[m] = self.nodes[m] - self.nodes[m - 1];
        }
        w
    }

    /// `x_{m-1/2}` for `m = 0..=n_x + 1`, including both ghost points.
    pub fn half_nodes(&self) -> Vec<f64> {
        let n = self.n_x;
        let x = &self.nodes;
        let mut h = Vec::with_capacity(n + 2);
        h.push(-0.5 * (x[0] + x[1]));
        for m in 0..n {
            h.push(0.5 * (x[m] + x[m + 1]));
        }
        h.push(2.0 * self.x_max - h[n]);
        h
    }

    /// `h_{x,m+1/2} = x_{m+1/2} - x_{m-1/2}` for `m = 0..=n_x`.
    pub fn half_widths(&self) -> Vec<f64> {
        self.half_nodes().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Number of nodes at or below `level`, relative to `n_x`.
    pub fn fraction_below(&self, level: f64) -> f64 {
        self.nodes.iter().filter(|&&x| x <= level).count() as f64 / self.n_x as f64
    }

    fn xi_max(&self) -> f64 {
        match self.stretch {
            Stretch::Uniform => self.x_max,
            Stretch::Sinh { c } => self.x_int / c + ((self.x_max - self.x_int) / c).asinh(),
        }
    }

    pub fn phi(&self, xi: f64) -> f64 {
        match self.stretch {
            Stretch::Uniform => xi,
            Stretch::Sinh { c } => {
                let xi_int = self.x_int / c;
                if xi <= xi_int {
                    c * xi
                } else {
                    self.x_int + c * (xi - xi_int).sinh()
                }
            }
        }
    }

    pub fn phi_inverse(&self, x: f64) -> f64 {
        match self.stretch {
            Stretch::Uniform => x,
            Stretch::Sinh { c } => {
                if x <= self.x_int {
                    x / c
                } else {
                    self.x_int / c + ((x - self.x_int) / c).asinh()
                }
            }
        }
    }
}

/// Limiting share of computational points mapped into `[0, x_int]`.
pub fn asymptotic_fraction(c: f64, x_int: f64, x_max: f64) -> f64 {
    1.0 / (1.0 + c / x_int * ((x_max - x_int) / c).asinh())
}

pub fn build_spatial_grid(n_x: usize, x_max: f64, x_int: f64, f_target: f64) -> Result<SpatialGrid> {
    if n_x < 2 {
        return Err(PideError::InvalidConfig(format!("N_x must be at least 2, got {n_x}")));
    }
    if !(x_int > 0.0 && x_int < x_max) {
        return Err(PideError::InvalidConfig(format!(
            "need 0 < x_int < x_max, got x_int={x_int}, x_max={x_max}"
        )));
    }
    let f_min = x_int / x_max;
    if !(f_target <= 1.0) || f_target < f_min * (1.0 - 1e-14) {
        return Err(PideError::InvalidConfig(format!(
            "target fraction {f_target} outside [{f_min}, 1]"
        )));
    }
    let stretch = if f_target <= f_min * (1.0 + 1e-14) {
        Stretch::Uniform
    } else {
        Stretch::Sinh {
            c: solve_stretch(x_int, x_max, f_target)?,
        }
    };
    let mut grid = SpatialGrid {
        n_x,
        x_max,
        x_int,
        stretch,
        nodes: Vec::new(),
    };
    let xi_max = grid.xi_max();
    let mut nodes: Vec<f64> = (0..=n_x).map(|m| grid.phi(xi_max * m as f64 / n_x as f64)).collect();
    nodes[0] = 0.0;
    nodes[n_x] = x_max;
    grid.nodes = nodes;
    Ok(grid)
}

/// Bisection in `ln c` on the decreasing map `c -> F(c)`.
fn solve_stretch(x_int: f64, x_max: f64, f_target: f64) -> Result<f64> {
    let mut lo = (x_int * 1e-6).ln();
    let mut hi = (x_int * 1e6).ln();
    let f = |lc: f64| asymptotic_fraction(lc.exp(), x_int, x_max) - f_target;
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return Err(PideError::Bracket(format!("no stretch parameter reaches fraction {f_target}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Log-spaced output and input grids of the jump correlation.
///
/// Output nodes are `e^{m h_z}` for `m = -ny_minus..=ny_plus`; input nodes are
/// `e^{(m + 1/2) h_z}` for `m = -n_z - ny_minus..n_z + ny_plus`.
/// `ny_minus` is negative when the first positive spatial node exceeds 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YGrids {
    pub n_z: usize,
    pub h_z: f64,
    pub ny_minus: i64,
    pub ny_plus: i64,
    pub ny_star: i64,
}

impl YGrids {
    pub fn sharp_in(&self) -> usize {
        (2 * self.n_z as i64 + self.ny_minus + self.ny_plus) as usize
    }

    pub fn sharp_out(&self) -> usize {
        (self.ny_minus + self.ny_plus + 1) as usize
    }

    /// Output node with storage index `j` in `0..sharp_out`.
    pub fn y_out(&self, j: usize) -> f64 {
        ((j as i64 - self.ny_minus) as f64 * self.h_z).exp()
    }

    /// Input node with storage index `j` in `0..sharp_in`.
    pub fn y_in(&self, j: usize) -> f64 {
        (((j as i64 - self.n_z as i64 - self.ny_minus) as f64 + 0.5) * self.h_z).exp()
    }

    pub fn y_out_nodes(&self) -> Vec<f64> {
        (0..self.sharp_out()).map(|j| self.y_out(j)).collect()
    }

    pub fn y_in_nodes(&self) -> Vec<f64> {
        (0..self.sharp_in()).map(|j| self.y_in(j)).collect()
    }
}

/// True when `n` has no prime factor larger than 7.
pub fn is_smooth7(mut n: usize) -> bool {
    if n == 0 {
        return false;
    }
    for p in [2, 3, 5, 7] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

pub fn build_ygrids(n_z: usize, h_z: f64, x_1: f64, x_max: f64) -> Result<YGrids> {
    if !(x_1 > 0.0) || !(x_max > 1.0) || !(h_z > 0.0) {
        return Err(PideError::InvalidConfig(format!(
            "y-grids need x_1 > 0, x_max > 1, h_z > 0 (got {x_1}, {x_max}, {h_z})"
        )));
    }
    let base_minus = (-x_1.ln() / h_z).ceil() as i64;
    let base_plus = (x_max.ln() / h_z).ceil() as i64;
    let mut ny_star = 0;
    loop {
        let g = YGrids {
            n_z,
            h_z,
            ny_minus: base_minus + ny_star,
            ny_plus: base_plus + ny_star,
            ny_star,
        };
        if g.ny_minus + g.ny_plus >= 0 && is_smooth7(g.sharp_in()) {
            return Ok(g);
        }
        ny_star += 1;
    }
}

/// Departure points of the semi-Lagrangian step along each axis.
pub fn sl_departure_grid(grid: &SpatialGrid, kappa_w: &Vec2, h_t: f64) -> [Vec<f64>; 2] {
    let axis = |k: f64| grid.nodes.iter().map(|x| x * (k * h_t).exp()).collect();
    [axis(kappa_w[0]), axis(kappa_w[1])]
}
