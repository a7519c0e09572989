//! Truncated Gaussian distribution functions evaluated in log space.
//!
//! Interval masses are written as `Φ̄(u)·(1 − exp(D(u, v)))` with
//! `D(u, v) = ln Φ̄(v) − ln Φ̄(u)` on the non-negative half line (mirrored
//! otherwise). `D` is formed from the Mills ratio so that ratios of masses far
//! in the tail never subtract two huge logarithms.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use libm::{erf, erfc};

use crate::error::{Error, Result};

/// Smallest truncation mass for which a pivot is still reported.
pub const MIN_MASS: f64 = 1e-300;
const CF_SWITCH: f64 = 30.0;
const CF_TERMS: usize = 200;
const GL_POINTS: usize = 20;

/// `ln R(z)` with `R(z) = Φ̄(z)/φ(z)` the Mills ratio, `z ≥ 0`.
fn ln_mills(z: f64) -> f64 {
    if z.is_infinite() {
        f64::NEG_INFINITY
    } else if z < CF_SWITCH {
        ln_mills_direct(z)
    } else {
        ln_mills_fraction(z)
    }
}

fn ln_mills_direct(z: f64) -> f64 {
    let tail = 0.5 * erfc(z * FRAC_1_SQRT_2);
    let density = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    (tail / density).ln()
}

/// `R(z) = 1/(z + 1/(z + 2/(z + 3/(z + …))))`.
fn ln_mills_fraction(z: f64) -> f64 {
    let mut t = z;
    for k in (1..=CF_TERMS).rev() {
        t = z + k as f64 / t;
    }
    -t.ln()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let m = GL_POINTS;
        (0..m)
            .map(|i| {
                let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=m {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

/// `ln Φ̄(z)` for any real `z`.
pub fn ln_upper_tail(z: f64) -> f64 {
    if z < CF_SWITCH {
        (0.5 * erfc(z * FRAC_1_SQRT_2)).ln()
    } else {
        -0.5 * z * z - 0.5 * (2.0 * PI).ln() + ln_mills(z)
    }
}

/// `ln Φ̄(v) − ln Φ̄(u)` for `0 ≤ u ≤ v`.
fn tail_drop(u: f64, v: f64) -> f64 {
    if v == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if u == v {
        return 0.0;
    }
    -0.5 * (v - u) * (v + u) + ln_mills(v) - ln_mills(u)
}

/// `ln(1 − e^d)` for `d ≤ 0`.
fn ln_one_minus_exp(d: f64) -> f64 {
    if d > -std::f64::consts::LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    }
}

/// `ln(1 − Φ̄(v)/Φ̄(u))` for `0 ≤ u < v`. Narrow cells are integrated
/// directly: `(Φ̄(u) − Φ̄(v))/Φ̄(u) = ∫_u^v exp(−(t−u)(t+u)/2) dt / R(u)`.
fn ln_cell_fraction(u: f64, v: f64) -> f64 {
    if v == f64::INFINITY {
        return 0.0;
    }
    if 0.5 * (v - u) * (v + u) <= 1.0 {
        let (mid, half) = (0.5 * (u + v), 0.5 * (v - u));
        let integral: f64 = gauss_legendre()
            .iter()
            .map(|&(x, w)| {
                let t = mid + half * x;
                w * (-0.5 * (t - u) * (t + u)).exp()
            })
            .sum::<f64>()
            * half;
        integral.ln() - ln_mills(u)
    } else {
        ln_one_minus_exp(tail_drop(u, v))
    }
}

/// `ln(Φ(v) − Φ(u))` for `u ≤ v` in standard units.
pub fn log_mass(u: f64, v: f64) -> f64 {
    if u >= v {
        return f64::NEG_INFINITY;
    }
    if u >= 0.0 {
        ln_upper_tail(u) + ln_cell_fraction(u, v)
    } else if v <= 0.0 {
        log_mass(-v, -u)
    } else {
        (0.5 * (erf(v * FRAC_1_SQRT_2) + erf(-u * FRAC_1_SQRT_2))).ln()
    }
}

/// `ln(mass[u1, v1] / mass[u2, v2])` for `[u1, v1] ⊆ [u2, v2]`.
fn log_mass_ratio(u1: f64, v1: f64, u2: f64, v2: f64) -> f64 {
    if u1 >= v1 {
        return f64::NEG_INFINITY;
    }
    if u2 >= 0.0 {
        tail_drop(u2, u1) + ln_cell_fraction(u1, v1) - ln_cell_fraction(u2, v2)
    } else if v2 <= 0.0 {
        log_mass_ratio(-v1, -u1, -v2, -u2)
    } else {
        log_mass(u1, v1) - log_mass(u2, v2)
    }
}

/// Normal distribution with mean `mu` and standard deviation `sd` restricted to
/// `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sd: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sd: f64, a: f64, b: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidInput(format!("standard deviation must be positive, got {sd}")));
        }
        if !(a < b) {
            return Err(Error::InvalidInput(format!("truncation interval [{a}, {b}] is empty")));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidInput("mean must be finite".into()));
        }
        Ok(Self { mu, sd, a, b })
    }

    fn standard(&self, x: f64) -> f64 {
        (x - self.mu) / self.sd
    }

    fn standard_bounds(&self, x: f64) -> (f64, f64, f64) {
        let (alpha, beta) = (self.standard(self.a), self.standard(self.b));
        (alpha, self.standard(x).clamp(alpha, beta), beta)
    }

    pub fn log_mass(&self) -> f64 {
        log_mass(self.standard(self.a), self.standard(self.b))
    }

    /// `P(X ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let (alpha, xi, beta) = self.standard_bounds(x);
        log_mass_ratio(alpha, xi, alpha, beta).exp().min(1.0)
    }

    /// `P(X ≥ x)`.
    pub fn sf(&self, x: f64) -> f64 {
        let (alpha, xi, beta) = self.standard_bounds(x);
        log_mass_ratio(xi, beta, alpha, beta).exp().min(1.0)
    }

    /// Errors when the truncation cell carries too little mass for the ratio
    /// to mean anything.
    pub fn check_mass(&self) -> Result<()> {
        let lm = self.log_mass();
        if lm < MIN_MASS.ln() || lm.is_nan() {
            return Err(Error::DegenerateTruncation { log_mass: lm });
        }
        Ok(())
    }
}

/// `F^{[a,b]}_{μ,σ²}(x)`.
pub fn truncated_gaussian_cdf(x: f64, mu: f64, sigma2: f64, a: f64, b: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("variance must be positive, got {sigma2}")));
    }
    if x.is_nan() {
        return Err(Error::InvalidInput("evaluation point is NaN".into()));
    }
    let dist = TruncatedNormal::new(mu, sigma2.sqrt(), a, b)?;
    dist.check_mass()?;
    Ok(dist.cdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn inf() -> f64 {
        f64::INFINITY
    }

    #[test]
    fn untruncated_is_standard_normal() {
        let v = truncated_gaussian_cdf(1.0, 0.0, 1.0, -inf(), inf()).unwrap();
        assert!((v - 0.841_344_746_068_542_9).abs() < 1e-15);
        let v = truncated_gaussian_cdf(-2.0, 0.0, 1.0, -inf(), inf()).unwrap();
        assert!((v - 0.022_750_131_948_179_2).abs() < 1e-15);
    }

    #[test]
    fn symmetric_truncation_at_center() {
        for t in [1e-6, 0.3, 2.0, 50.0] {
            let v = truncated_gaussian_cdf(1.7, 1.7, 4.0, 1.7 - t, 1.7 + t).unwrap();
            assert!((v - 0.5).abs() < 1e-12, "t = {t}: {v}");
        }
    }

    #[test]
    fn matches_rejection_sampling() {
        let mut rng = rng_from(2024, &[]);
        let (mut kept, mut below) = (0u64, 0u64);
        for _ in 0..1_000_000 {
            loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                if (1.0..=2.0).contains(&z) {
                    kept += 1;
                    if z <= 1.5 {
                        below += 1;
                    }
                    break;
                }
            }
        }
        let est = below as f64 / kept as f64;
        let se = (est * (1.0 - est) / kept as f64).sqrt();
        let exact = truncated_gaussian_cdf(1.5, 0.0, 1.0, 1.0, 2.0).unwrap();
        assert!((exact - est).abs() < 3.0 * se, "{exact} vs {est} ± {se}");
    }

    #[test]
    fn mills_ratio_routes_agree() {
        for z in [8.0, 15.0, 22.0, CF_SWITCH] {
            let (a, b) = (ln_mills_direct(z), ln_mills_fraction(z));
            assert!((a - b).abs() < 1e-13, "z = {z}: {a} vs {b}");
        }
        // asymptotic expansion R(z) ≈ (1 − 1/z² + 3/z⁴)/z
        let z: f64 = 200.0;
        let approx = ((1.0 - 1.0 / (z * z) + 3.0 / z.powi(4)) / z).ln();
        assert!((ln_mills(z) - approx).abs() < 1e-10);
    }

    #[test]
    fn narrow_cells_keep_relative_accuracy() {
        // mass of [u, u + w] is φ(u)·w to first order
        for u in [0.0, 1.0, 4.0, 35.0] {
            let v = u + 1e-9;
            let expected = -0.5 * u * u - 0.5 * (2.0 * PI).ln() + (v - u).ln();
            assert!((log_mass(u, v) - expected).abs() < 1e-6, "u = {u}: {} vs {expected}", log_mass(u, v));
        }
    }

    #[test]
    fn far_tail_ratios_stay_accurate() {
        // Exponential limit: given X > a for large a, (X − a)·a is approx Exp(1).
        let dist = TruncatedNormal::new(0.0, 1.0, 1e4, inf()).unwrap();
        let v = dist.cdf(1e4 + 1.0 / 1e4);
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-6, "{v}");
        let mirrored = TruncatedNormal::new(0.0, 1.0, -inf(), -1e4).unwrap();
        assert!((mirrored.sf(-1e4 - 1.0 / 1e4) - v).abs() < 1e-12);
        assert!(dist.check_mass().is_err());
    }

    #[test]
    fn tiny_mass_is_reported() {
        assert!(matches!(
            truncated_gaussian_cdf(40.5, 0.0, 1.0, 40.0, 41.0),
            Err(Error::DegenerateTruncation { .. })
        ));
        assert!(truncated_gaussian_cdf(30.5, 0.0, 1.0, 30.0, 31.0).is_ok());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(truncated_gaussian_cdf(0.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(truncated_gaussian_cdf(0.0, 0.0, 0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn cdf_and_sf_sum_to_one() {
        for &(mu, a, b, x) in &[(0.0, -1.0, 2.0, 0.4), (5.0, -3.0, -1.0, -2.0), (-8.0, 1.0, 1.5, 1.2)] {
            let d = TruncatedNormal::new(mu, 1.3, a, b).unwrap();
            assert!((d.cdf(x) + d.sf(x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn increasing_in_x_decreasing_in_mu() {
        let (a, b) = (-0.7, 2.3);
        let mut prev = 0.0;
        for i in 1..60 {
            let x = a + (b - a) * i as f64 / 60.0;
            let v = truncated_gaussian_cdf(x, 0.4, 1.5, a, b).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let mut prev = 1.0;
        for i in 0..60 {
            let mu = -6.0 + 0.2 * i as f64;
            let v = truncated_gaussian_cdf(0.8, mu, 1.5, a, b).unwrap();
            assert!(v < prev, "mu = {mu}");
            prev = v;
        }
    }
}
