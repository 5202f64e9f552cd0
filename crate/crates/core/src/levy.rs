//! Two-dimensional Normal Tempered Stable (NTS) Lévy model.
//!
//! The jump part of the log-returns is Brownian motion with drift `eta` and
//! covariance `rho`, time-changed by a tempered stable subordinator with
//! parameters `(alpha, delta, lambda)`. `alpha = 0` is Variance Gamma and
//! `alpha = 1/2` is Normal Inverse Gaussian.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{PideError, Result};
use crate::special::bessel_k_scaled;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Market and model parameters of a two-asset exponential NTS model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtsModel {
    pub alpha: f64,
    pub delta: f64,
    pub lambda: f64,
    pub eta: Vec2,
    pub rho: Mat2,
    /// Diffusion matrix; zero for the pure-jump presets.
    #[serde(default)]
    pub sigma: Mat2,
    pub r: f64,
    /// Maturity in years.
    pub maturity: f64,
    pub strike: f64,
}

/// Named parameter sets used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "VG0")]
    Vg0,
    #[serde(rename = "VG1")]
    Vg1,
    #[serde(rename = "NIG0")]
    Nig0,
    #[serde(rename = "NIG1")]
    Nig1,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Vg0, Preset::Vg1, Preset::Nig0, Preset::Nig1];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Vg0 => "VG0",
            Preset::Vg1 => "VG1",
            Preset::Nig0 => "NIG0",
            Preset::Nig1 => "NIG1",
        }
    }

    pub fn from_name(name: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| PideError::InvalidConfig(format!("unknown preset '{name}'")))
    }

    pub fn model(self) -> NtsModel {
        let zero = [[0.0; 2]; 2];
        match self {
            Preset::Vg0 => NtsModel {
                alpha: 0.0,
                delta: 1.0,
                lambda: 1.0,
                eta: [-0.1, -0.2],
                rho: [[0.09, 0.06], [0.06, 0.16]],
                sigma: zero,
                r: 0.05,
                maturity: 1.0,
                strike: 100.0,
            },
            Preset::Vg1 => NtsModel {
                alpha: 0.0,
                delta: 6.0,
                lambda: 6.0,
                eta: [-0.1, -0.2],
                rho: [[0.01, 0.0], [0.0, 0.0225]],
                sigma: zero,
                r: 0.0,
                maturity: 0.5,
                strike: 100.0,
            },
            Preset::Nig0 => NtsModel {
                alpha: 0.5,
                delta: 0.77576,
                lambda: 20766.4,
                eta: [-37.688, -2.224],
                rho: [[3.984, 3.160], [3.160, 3.512]],
                sigma: zero,
                r: 0.0,
                maturity: 0.5,
                strike: 100.0,
            },
            Preset::Nig1 => NtsModel {
                alpha: 0.5,
                delta: 4.26367,
                lambda: 57.1108,
                eta: [-0.295846, -0.292984],
                rho: [[0.037021, 0.026574], [0.026574, 0.054613]],
                sigma: zero,
                r: 0.0,
                maturity: 0.5,
                strike: 100.0,
            },
        }
    }

    /// Upper end of the truncated price domain as a multiple of the strike.
    pub fn x_max_factor(self) -> f64 {
        match self {
            Preset::Vg0 => 57.0,
            Preset::Vg1 => 5.0,
            Preset::Nig0 => 6.0,
            Preset::Nig1 => 7.0,
        }
    }
}

/// Inner product `<x, y> = x^T rho^{-1} y` and its norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoMetric {
    pub rho_inverse: Mat2,
    pub determinant: f64,
}

impl RhoMetric {
    pub fn new(rho: &Mat2) -> Result<Self> {
        if (rho[0][1] - rho[1][0]).abs() > 1e-14 * (rho[0][1].abs() + 1.0) {
            return Err(PideError::InvalidModel("rho must be symmetric".into()));
        }
        // Cholesky feasibility
        if !(rho[0][0] > 0.0) {
            return Err(PideError::InvalidModel("rho is not positive definite".into()));
        }
        let det = rho[0][0] * rho[1][1] - rho[0][1] * rho[1][0];
        if !(det > 0.0) {
            return Err(PideError::InvalidModel("rho is not positive definite".into()));
        }
        Ok(RhoMetric {
            rho_inverse: [
                [rho[1][1] / det, -rho[0][1] / det],
                [-rho[1][0] / det, rho[0][0] / det],
            ],
            determinant: det,
        })
    }

    pub fn inner(&self, x: &Vec2, y: &Vec2) -> f64 {
        let m = &self.rho_inverse;
        x[0] * (m[0][0] * y[0] + m[0][1] * y[1]) + x[1] * (m[1][0] * y[0] + m[1][1] * y[1])
    }

    pub fn norm(&self, x: &Vec2) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }
}

/// Constants of the small-jump and tail bounds of the Lévy density in the
/// `rho`-norm: `l(z) <= C(h) |z|^{-A-2}` for `|z| <= h`, `l(z) = O(e^{-B |z|})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailConstants {
    pub a_ell: f64,
    pub b_ell: f64,
    c_base: f64,
    eta_norm: f64,
}

impl TailConstants {
    pub fn c_ell(&self, h: f64) -> f64 {
        self.c_base * (h * self.eta_norm).exp()
    }
}

/// Precomputed evaluator of the Lévy density.
#[derive(Debug, Clone, Copy)]
pub struct LevyDensity {
    metric: RhoMetric,
    rho_inv_eta: Vec2,
    c1: f64,
    nu: f64,
    ln_prefactor: f64,
}

impl LevyDensity {
    /// `ln l(z)`; `-inf` far in the tail, `+inf` at the origin.
    #[inline]
    pub fn ln_eval(&self, z: &Vec2) -> f64 {
        let tau = self.metric.norm(z);
        if tau == 0.0 {
            return f64::INFINITY;
        }
        let arg = self.c1 * tau;
        let tilt = z[0] * self.rho_inv_eta[0] + z[1] * self.rho_inv_eta[1];
        self.ln_prefactor + bessel_k_scaled(self.nu, arg).ln() - arg - self.nu * tau.ln() + tilt
    }

    #[inline]
    pub fn eval(&self, z: &Vec2) -> f64 {
        self.ln_eval(z).exp()
    }

    pub fn metric(&self) -> &RhoMetric {
        &self.metric
    }
}

impl NtsModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(PideError::InvalidModel(format!("alpha must lie in [0,1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0) || !(self.lambda > 0.0) {
            return Err(PideError::InvalidModel("delta and lambda must be positive".into()));
        }
        if !(self.maturity > 0.0) || !(self.strike > 0.0) {
            return Err(PideError::InvalidModel("maturity and strike must be positive".into()));
        }
        if self.eta.iter().chain(self.rho.iter().flatten()).chain(self.sigma.iter().flatten()).any(|v| !v.is_finite())
            || !self.r.is_finite()
        {
            return Err(PideError::InvalidModel("non-finite parameter".into()));
        }
        RhoMetric::new(&self.rho)?;
        // finite second moment of each asset price: E[e^{2 L_i}] < inf
        for i in 0..2 {
            if !(self.lambda - 2.0 * self.eta[i] - 2.0 * self.rho[i][i] > 0.0) {
                return Err(PideError::InvalidModel(format!(
                    "asset {} has no finite second moment (lambda - 2 eta - 2 rho_ii <= 0)",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn metric(&self) -> RhoMetric {
        RhoMetric::new(&self.rho).expect("validated model")
    }

    /// `sigma sigma^T`.
    pub fn sigma_sq(&self) -> Mat2 {
        let s = &self.sigma;
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = s[i][0] * s[j][0] + s[i][1] * s[j][1];
            }
        }
        out
    }

    pub fn eta_norm(&self) -> f64 {
        self.metric().norm(&self.eta)
    }

    /// `sqrt(|eta|_rho^2 + 2 lambda)`.
    fn c1(&self) -> f64 {
        let e = self.eta_norm();
        (e * e + 2.0 * self.lambda).sqrt()
    }

    pub fn density(&self) -> LevyDensity {
        let metric = self.metric();
        let c1 = self.c1();
        let nu = 1.0 + self.alpha;
        let m = &metric.rho_inverse;
        LevyDensity {
            metric,
            rho_inv_eta: [
                m[0][0] * self.eta[0] + m[0][1] * self.eta[1],
                m[1][0] * self.eta[0] + m[1][1] * self.eta[1],
            ],
            c1,
            nu,
            ln_prefactor: self.delta.ln() - PI.ln() + nu * c1.ln() - 0.5 * metric.determinant.ln(),
        }
    }

    /// Expected value of the subordinator at time 1.
    pub fn subordinator_mean(&self) -> f64 {
        self.delta * gamma(1.0 - self.alpha) / self.lambda.powf(1.0 - self.alpha)
    }

    pub fn subordinator_variance(&self) -> f64 {
        self.delta * gamma(2.0 - self.alpha) / self.lambda.powf(2.0 - self.alpha)
    }

    /// Compensating drift `c = E[G(1)] eta`.
    pub fn centering(&self) -> Vec2 {
        let m = self.subordinator_mean();
        [m * self.eta[0], m * self.eta[1]]
    }

    /// Martingale correction `kappa_i = psi_L(-i e_i)`, i.e. `E[e^{L_i(t)}] = e^{kappa_i t}`.
    pub fn martingale_exponents(&self) -> Result<Vec2> {
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let mut x = [Complex64::new(0.0, 0.0); 2];
            x[i] = Complex64::new(0.0, -1.0);
            *o = characteristic_exponent(self, &x)?.re;
        }
        Ok(out)
    }
}

/// Lévy density `l(z)` at `z != 0`.
pub fn levy_density(model: &NtsModel, z: &Vec2) -> Result<f64> {
    if z[0] == 0.0 && z[1] == 0.0 {
        return Err(PideError::Domain("Lévy density is singular at the origin".into()));
    }
    Ok(model.density().eval(z))
}

pub fn tail_constants(model: &NtsModel) -> Result<TailConstants> {
    model.validate()?;
    let metric = model.metric();
    let eta_norm = metric.norm(&model.eta);
    let c1 = (eta_norm * eta_norm + 2.0 * model.lambda).sqrt();
    let d = 2.0;
    let c_base = 2f64.powf(model.alpha) * model.delta * gamma(model.alpha + d / 2.0)
        / (PI.powf(d) * metric.determinant).sqrt();
    Ok(TailConstants {
        a_ell: 2.0 * model.alpha,
        b_ell: c1 - eta_norm,
        c_base,
        eta_norm,
    })
}

/// Covariance matrix of `L(t)`.
pub fn variance_of_l(model: &NtsModel, t: f64) -> Mat2 {
    let a = model.alpha;
    let scale = t * model.delta * gamma(2.0 - a) / model.lambda.powf(2.0 - a);
    let tilt = model.lambda / (1.0 - a);
    let mut v = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            v[i][j] = scale * (model.rho[i][j] * tilt + model.eta[i] * model.eta[j]);
        }
    }
    v
}

/// Characteristic exponent `psi_L` with `E[exp(i x^T L(t))] = exp(t psi_L(x))`,
/// for complex arguments (principal branch).
pub fn characteristic_exponent(model: &NtsModel, x: &[Complex64; 2]) -> Result<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    let lam = Complex64::new(model.lambda, 0.0);
    let x_eta = x[0] * model.eta[0] + x[1] * model.eta[1];
    let rho = &model.rho;
    let quad = x[0] * (x[0] * rho[0][0] + x[1] * rho[0][1]) + x[1] * (x[0] * rho[1][0] + x[1] * rho[1][1]);
    let w = lam - i * x_eta + 0.5 * quad;
    if w.im == 0.0 && w.re <= 0.0 {
        return Err(PideError::Domain(format!("characteristic exponent branch cut at w = {w}")));
    }
    let c = model.centering();
    let centering = i * (x[0] * c[0] + x[1] * c[1]);
    let a = model.alpha;
    let core = if a == 0.0 {
        -model.delta * (w / lam).ln()
    } else {
        model.delta * gamma(-a) * (w.powf(a) - lam.powf(a))
    };
    Ok(core - centering)
}

/// Largest `s = |z|_inf` on whose square boundary the density still reaches `level`.
pub fn find_truncation_radius(model: &NtsModel, level: f64) -> Result<f64> {
    model.validate()?;
    if !(level > 0.0) {
        return Err(PideError::Domain("truncation level must be positive".into()));
    }
    let dens = model.density();
    let target = level.ln();
    let g = |s: f64| boundary_max_ln(&dens, s);

    let mut hi = 1.0;
    let mut doublings = 0;
    loop {
        if g(hi) < target && g(2.0 * hi) < target && g(4.0 * hi) < target {
            break;
        }
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(PideError::Bracket("density does not fall below the level".into()));
        }
    }
    let mut lo = hi;
    let mut halvings = 0;
    while g(lo) < target {
        lo *= 0.5;
        halvings += 1;
        if halvings > 200 {
            return Err(PideError::Bracket("level exceeds the density near the origin".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Point on the boundary of the square `|z|_inf = s`, parametrised by arc
/// position `t` in `[0, 8)`.
fn square_point(s: f64, t: f64) -> Vec2 {
    let t = t.rem_euclid(8.0);
    let side = (t / 2.0).floor() as i32;
    let u = t - 2.0 * side as f64 - 1.0;
    match side {
        0 => [s, u * s],
        1 => [-u * s, s],
        2 => [-s, -u * s],
        _ => [u * s, -s],
    }
}

/// `max ln l` over the square boundary: 128 samples then golden-section search.
pub(crate) fn boundary_max_ln(dens: &LevyDensity, s: f64) -> f64 {
    const SAMPLES: usize = 128;
    let f = |t: f64| dens.ln_eval(&square_point(s, t));
    let step = 8.0 / SAMPLES as f64;
    let (best_i, mut best) = (0..SAMPLES)
        .map(|i| (i, f(i as f64 * step)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut a = (best_i as f64 - 1.0) * step;
    let mut b = (best_i as f64 + 1.0) * step;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        if b - a < 1e-13 {
            break;
        }
    }
    best = best.max(fc).max(fd);
    best
}
