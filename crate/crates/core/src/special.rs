//! Special functions: modified Bessel functions of the second kind and
//! Gauss-Legendre rules.
//!
//! `K_nu` is evaluated in exponentially scaled form `e^tau K_nu(tau)` so that
//! callers can fold the `e^{-tau}` decay into their own exponents. Half-integer
//! orders use the closed form; every other order reduces to `|mu| <= 1/2` and
//! uses Temme's series for `tau < 2` or Steed's continued fraction otherwise,
//! followed by forward recurrence in the order (stable for `K`).

use std::f64::consts::PI;

use crate::error::{PideError, Result};

/// Taylor coefficients of `1/Gamma(z) = sum_k c_k z^k` (k = 1..26).
const RGAMMA_COEFFS: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

const MAX_ITER: usize = 10_000;

/// Modified Bessel function of the second kind `K_nu(tau)`, or
/// `e^tau K_nu(tau)` when `scaled` is set.
pub fn bessel_k(nu: f64, tau: f64, scaled: bool) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(PideError::Domain(format!("bessel_k order must be positive, got {nu}")));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(PideError::Domain(format!("bessel_k argument must be positive, got {tau}")));
    }
    let s = bessel_k_scaled(nu, tau);
    Ok(if scaled { s } else { s * (-tau).exp() })
}

/// `e^tau K_nu(tau)` for `nu >= 0`, `tau > 0`, without argument checks.
pub(crate) fn bessel_k_scaled(nu: f64, tau: f64) -> f64 {
    let twice = 2.0 * nu;
    if (twice - twice.round()).abs() < 1e-15 && (twice.round() as i64) % 2 == 1 {
        return half_integer_scaled(twice.round() as i64, tau);
    }
    let n = (nu + 0.5).floor();
    let mu = nu - n;
    let (mut k_lo, mut k_hi) = if tau < 2.0 {
        temme_scaled(mu, tau)
    } else {
        steed_scaled(mu, tau)
    };
    // k_lo = K_mu, k_hi = K_{mu+1}; walk up to K_nu.
    let steps = n as i64;
    if steps == 0 {
        return k_lo;
    }
    for k in 1..steps {
        let order = mu + k as f64;
        let next = k_lo + 2.0 * order / tau * k_hi;
        k_lo = k_hi;
        k_hi = next;
    }
    k_hi
}

/// Scaled `K_{m/2}` for odd `m > 0` from the closed form of `K_{1/2}`.
fn half_integer_scaled(twice_nu: i64, tau: f64) -> f64 {
    let base = (PI / (2.0 * tau)).sqrt();
    // K_{-1/2} = K_{1/2}
    let mut k_lo = base;
    let mut k_hi = base;
    let mut order = 0.5;
    while ((2.0 * order) as i64) < twice_nu {
        let next = k_lo + 2.0 * order / tau * k_hi;
        k_lo = k_hi;
        k_hi = next;
        order += 1.0;
    }
    k_hi
}

/// Returns `(g1, g2)` with `1/Gamma(1 -+ mu) = g2 +- mu g1`.
fn temme_gammas(mu: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    let mut pow = 1.0;
    // even powers j of mu pair with c_{j+1}; odd powers with c_{j+1} in g1
    for j in 0..13 {
        g2 += RGAMMA_COEFFS[2 * j] * pow;
        g1 -= RGAMMA_COEFFS[2 * j + 1] * pow;
        pow *= mu2;
    }
    (g1, g2)
}

/// Temme's series for `(e^x K_mu(x), e^x K_{mu+1}(x))`, `|mu| <= 1/2`, small x.
fn temme_scaled(mu: f64, x: f64) -> (f64, f64) {
    let half_x = 0.5 * x;
    let d = -half_x.ln();
    let e = mu * d;
    let pimu = PI * mu;
    let fact = if pimu.abs() < 1e-15 { 1.0 } else { pimu / pimu.sin() };
    let fact2 = if e.abs() < 1e-15 { 1.0 } else { e.sinh() / e };
    let (g1, g2) = temme_gammas(mu);
    let gampl = g2 - mu * g1; // 1/Gamma(1+mu)
    let gammi = g2 + mu * g1; // 1/Gamma(1-mu)
    let mut ff = fact * (g1 * e.cosh() + g2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = half_x * half_x;
    let mut sum1 = p;
    let mu2 = mu * mu;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= dd / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        let del1 = c * (p - fi * ff);
        sum1 += del1;
        if del.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    let scale = x.exp();
    (sum * scale, sum1 * 2.0 / x * scale)
}

/// Steed's continued fraction (CF2) for `(e^x K_mu(x), e^x K_{mu+1}(x))`.
fn steed_scaled(mu: f64, x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu * mu;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    h *= a1;
    let kmu = (PI / (2.0 * x)).sqrt() / s;
    let k1 = kmu * (mu + x + 0.5 - h) / x;
    (kmu, k1)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            dp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn half_order_closed_form() {
        let v = bessel_k(0.5, 1.0, false).unwrap();
        let expect = (PI / 2.0).sqrt() * (-1.0f64).exp();
        assert!(rel(v, expect) < 1e-15);
    }

    #[test]
    fn order_one_matches_reference() {
        // arbitrary-precision value of the integral representation
        assert!(rel(bessel_k(1.0, 2.0, false).unwrap(), 0.139_865_881_816_522_427_284_6) < 1e-12);
        assert!(rel(bessel_k(1.0, 0.5, false).unwrap(), 1.656_441_120_003_300_893_696_4) < 1e-12);
        assert!(rel(bessel_k(1.0, 30.0, true).unwrap(), 0.231_654_129_377_711_802_273_6) < 1e-12);
    }

    #[test]
    fn general_orders_match_reference() {
        assert!(rel(bessel_k(0.3, 1.7, false).unwrap(), 0.169_073_052_272_134_381_962_7) < 1e-12);
        assert!(rel(bessel_k(2.7, 0.2, false).unwrap(), 384.826_936_178_161_731_851_6) < 1e-12);
    }

    #[test]
    fn scaled_large_argument_is_finite() {
        let v = bessel_k(1.5, 700.0, true).unwrap();
        let expect = (PI / 1400.0).sqrt() * (1.0 + 1.0 / 700.0);
        assert!(v.is_finite());
        assert!(rel(v, expect) < 1e-14);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bessel_k(1.0, 0.0, false).is_err());
        assert!(bessel_k(1.0, -1.0, false).is_err());
        assert!(bessel_k(0.0, 1.0, false).is_err());
        assert!(bessel_k(-0.5, 1.0, false).is_err());
    }

    #[test]
    fn branches_agree_at_switch_point() {
        for &nu in &[0.25, 1.0, 1.3, 2.0] {
            let n = (nu + 0.5f64).floor();
            let mu = nu - n;
            let (a, _) = temme_scaled(mu, 2.0);
            let (b, _) = steed_scaled(mu, 2.0);
            assert!(rel(a, b) < 1e-13, "nu={nu}: {a} vs {b}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
