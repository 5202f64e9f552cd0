//! Monte Carlo reference prices by exact simulation of the terminal assets.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PideError, Result};
use crate::levy::{Mat2, NtsModel, Vec2};
use crate::payoff::{payoff_eval, PayoffSpec};

/// Antithetic pairs simulated per RNG stream.
const PAIRS_PER_CHUNK: usize = 1 << 14;

/// Exact sampler of the subordinator at a fixed time.
#[derive(Debug, Clone, Copy)]
pub enum Subordinator {
    Gamma(Gamma<f64>),
    InverseGaussian(InverseGaussian<f64>),
}

impl Subordinator {
    pub fn new(model: &NtsModel, t: f64) -> Result<Self> {
        let dt = model.delta * t;
        let bad = |e: &dyn std::fmt::Display| PideError::InvalidModel(format!("subordinator: {e}"));
        if model.alpha == 0.0 {
            Gamma::new(dt, 1.0 / model.lambda)
                .map(Subordinator::Gamma)
                .map_err(|e| bad(&e))
        } else if model.alpha == 0.5 {
            let mean = dt * (std::f64::consts::PI / model.lambda).sqrt();
            let shape = 2.0 * std::f64::consts::PI * dt * dt;
            InverseGaussian::new(mean, shape)
                .map(Subordinator::InverseGaussian)
                .map_err(|e| bad(&e))
        } else {
            Err(PideError::Unsupported(format!(
                "exact subordinator sampling needs alpha 0 or 1/2, got {}",
                model.alpha
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Subordinator::Gamma(d) => d.sample(rng),
            Subordinator::InverseGaussian(d) => d.sample(rng),
        }
    }
}

fn cholesky(m: &Mat2) -> Result<Mat2> {
    if m[0][0] == 0.0 && m[0][1] == 0.0 && m[1][1] == 0.0 {
        return Ok([[0.0; 2]; 2]);
    }
    let l00 = m[0][0].sqrt();
    let l10 = if l00 > 0.0 { m[1][0] / l00 } else { 0.0 };
    let d = m[1][1] - l10 * l10;
    if !(l00.is_finite() && d >= -1e-14 * m[1][1].abs()) {
        return Err(PideError::InvalidModel("covariance is not positive semidefinite".into()));
    }
    Ok([[l00, 0.0], [l10, d.max(0.0).sqrt()]])
}

/// Generator of `ln(X(T) / x0)` in antithetic pairs.
#[derive(Debug, Clone)]
pub struct TerminalSampler {
    subordinator: Subordinator,
    drift: Vec2,
    eta: Vec2,
    jump_factor: Mat2,
    diffusion_factor: Mat2,
    horizon: f64,
}

impl TerminalSampler {
    pub fn new(model: &NtsModel) -> Result<Self> {
        model.validate()?;
        let t = model.maturity;
        let kappa = model.martingale_exponents()?;
        let c = model.centering();
        let s = model.sigma_sq();
        let drift = [0, 1].map(|i| (model.r - kappa[i] - 0.5 * s[i][i] - c[i]) * t);
        Ok(TerminalSampler {
            subordinator: Subordinator::new(model, t)?,
            drift,
            eta: model.eta,
            jump_factor: cholesky(&model.rho)?,
            diffusion_factor: cholesky(&s)?,
            horizon: t,
        })
    }

    /// Log-returns of a path and of its antithetic partner.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> [Vec2; 2] {
        let g = self.subordinator.sample(rng);
        let w: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let (sg, st) = (g.sqrt(), self.horizon.sqrt());
        let mut base = [0.0; 2];
        let mut noise = [0.0; 2];
        for i in 0..2 {
            base[i] = self.drift[i] + self.eta[i] * g;
            noise[i] = sg * (self.jump_factor[i][0] * w[0] + self.jump_factor[i][1] * w[1])
                + st * (self.diffusion_factor[i][0] * w[2] + self.diffusion_factor[i][1] * w[3]);
        }
        [
            [base[0] + noise[0], base[1] + noise[1]],
            [base[0] - noise[0], base[1] - noise[1]],
        ]
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub price: Estimate,
    /// Discounted terminal assets; both should match the spot.
    pub discounted_assets: [Estimate; 2],
    pub paths: usize,
    pub seed: u64,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sum: [f64; 3],
    sum_sq: [f64; 3],
}

impl Moments {
    fn push(&mut self, v: [f64; 3]) {
        self.n += 1.0;
        for k in 0..3 {
            self.sum[k] += v[k];
            self.sum_sq[k] += v[k] * v[k];
        }
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        for k in 0..3 {
            self.sum[k] += o.sum[k];
            self.sum_sq[k] += o.sum_sq[k];
        }
        self
    }

    fn estimate(&self, k: usize) -> Estimate {
        let mean = self.sum[k] / self.n;
        let var = (self.sum_sq[k] / self.n - mean * mean).max(0.0) * self.n / (self.n - 1.0);
        Estimate {
            mean,
            std_error: (var / self.n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McOptions {
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl McOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        McOptions {
            paths,
            seed,
            antithetic: true,
        }
    }
}

/// Monte Carlo price at `x0`. With antithetics, `paths` is rounded up to
/// an even number. The result depends only on the options.
pub fn mc_price(model: &NtsModel, payoff: &PayoffSpec, x0: &Vec2, opts: &McOptions) -> Result<McResult> {
    let McOptions { paths, seed, antithetic } = *opts;
    if paths < 4 {
        return Err(PideError::InvalidConfig("at least 4 Monte Carlo paths are needed".into()));
    }
    let sampler = TerminalSampler::new(model)?;
    let discount = (-model.r * model.maturity).exp();
    let per_draw = if antithetic { 2 } else { 1 };
    let pairs = paths.div_ceil(per_draw);
    let chunks = pairs.div_ceil(PAIRS_PER_CHUNK);
    let partial: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = PAIRS_PER_CHUNK.min(pairs - c * PAIRS_PER_CHUNK);
            let mut m = Moments::default();
            for _ in 0..count {
                let mut acc = [0.0; 3];
                let weight = discount / per_draw as f64;
                for ln in &sampler.sample_pair(&mut rng)[..per_draw] {
                    let x = [x0[0] * ln[0].exp(), x0[1] * ln[1].exp()];
                    acc[0] += weight * payoff_eval(payoff, &x);
                    acc[1] += weight * x[0];
                    acc[2] += weight * x[1];
                }
                m.push(acc);
            }
            m
        })
        .collect();
    let total = partial.into_iter().fold(Moments::default(), Moments::merge);
    Ok(McResult {
        price: total.estimate(0),
        discounted_assets: [total.estimate(1), total.estimate(2)],
        paths: per_draw * pairs,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{variance_of_l, Preset};

    #[test]
    fn subordinator_moments() {
        for p in Preset::ALL {
            let m = p.model();
            let s = Subordinator::new(&m, m.maturity).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let (em, ev) = (m.subordinator_mean() * m.maturity, m.subordinator_variance() * m.maturity);
            assert!((mean - em).abs() < 5.0 * (ev / n as f64).sqrt(), "{}: {mean} vs {em}", p.name());
            assert!((var - ev).abs() < 0.05 * ev, "{}: {var} vs {ev}", p.name());
        }
    }

    #[test]
    fn log_return_covariance() {
        for p in Preset::ALL {
            let m = p.model();
            let s = TerminalSampler::new(&m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 100_000;
            let mut sum = [0.0; 2];
            let mut cross = [[0.0; 2]; 2];
            for _ in 0..n {
                let x = s.sample_pair(&mut rng)[0];
                for i in 0..2 {
                    sum[i] += x[i];
                    for j in 0..2 {
                        cross[i][j] += x[i] * x[j];
                    }
                }
            }
            let v = variance_of_l(&m, m.maturity);
            for i in 0..2 {
                for j in 0..2 {
                    let c = cross[i][j] / n as f64 - sum[i] * sum[j] / (n as f64 * n as f64);
                    let scale = (v[i][i] * v[j][j]).sqrt();
                    assert!((c - v[i][j]).abs() < 0.05 * scale, "{} {i}{j}: {c} vs {}", p.name(), v[i][j]);
                }
            }
        }
    }

    #[test]
    fn unsupported_index() {
        let mut m = Preset::Vg0.model();
        m.alpha = 0.3;
        assert!(matches!(Subordinator::new(&m, 1.0), Err(PideError::Unsupported(_))));
    }

    #[test]
    fn seeded_runs_repeat() {
        let m = Preset::Vg1.model();
        let pay = PayoffSpec::put_on_average(m.strike);
        let run = |seed| mc_price(&m, &pay, &[100.0, 100.0], &McOptions::new(40_000, seed)).unwrap();
        let (a, b, c) = (run(9), run(9), run(10));
        assert_eq!(a.price, b.price);
        assert_ne!(a.price, c.price);
        assert_eq!(a.paths, 40_000);
    }

    #[test]
    fn antithetic_reduces_error() {
        let m = Preset::Nig0.model();
        let pay = PayoffSpec::put_on_average(m.strike);
        let mut opts = McOptions::new(100_000, 5);
        let anti = mc_price(&m, &pay, &[100.0, 100.0], &opts).unwrap();
        opts.antithetic = false;
        let plain = mc_price(&m, &pay, &[100.0, 100.0], &opts).unwrap();
        assert_eq!(plain.paths, anti.paths);
        assert!(anti.price.std_error <= plain.price.std_error);
    }

    #[test]
    fn worthless_put() {
        let m = Preset::Vg0.model();
        let r = mc_price(&m, &PayoffSpec::put_on_average(1e-9), &[100.0, 100.0], &McOptions::new(1000, 1)).unwrap();
        assert!(r.price.mean < 1e-6);
    }

    #[test]
    fn cholesky_factor() {
        let m = [[4.0, 2.0], [2.0, 5.0]];
        let l = cholesky(&m).unwrap();
        assert_eq!(l, [[2.0, 0.0], [1.0, 2.0]]);
        assert!(cholesky(&[[1.0, 2.0], [2.0, 1.0]]).is_err());
    }
}
