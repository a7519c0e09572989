//! Inference for `ηᵀμ` after selection events of the form `{A y ≤ b}`.
//!
//! Given the event, `ηᵀy` is Gaussian truncated to `[𝒱⁻, 𝒱⁺]`, where the
//! bounds depend on `y` only through the component orthogonal to `η`.

mod contrast;
mod truncnorm;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proto::Polyhedron;

pub use contrast::{prototype_contrast, swap_contrast, Contrast};
pub use truncnorm::{ln_upper_tail, log_mass, truncated_gaussian_cdf, TruncatedNormal, MIN_MASS};

const FEASIBILITY_SLACK: f64 = 1e-8;
const MAX_DOUBLINGS: i32 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationInterval {
    pub v_minus: f64,
    pub v_plus: f64,
}

pub fn truncation_bounds(poly: &Polyhedron, eta: &DVector<f64>, y: &DVector<f64>) -> Result<TruncationInterval> {
    let n = y.len();
    if eta.len() != n || poly.dim() != n {
        return Err(Error::InvalidInput("contrast, response and polyhedron dimensions differ".into()));
    }
    let eta_sq = eta.norm_squared();
    if eta_sq == 0.0 {
        return Err(Error::InvalidInput("contrast is zero".into()));
    }
    let ay = &poly.a * y;
    for r in 0..poly.rows() {
        let violation = ay[r] - poly.b[r];
        if violation > FEASIBILITY_SLACK * (1.0 + poly.b[r].abs() + ay[r].abs()) {
            return Err(Error::Infeasible { row: r, violation });
        }
    }
    let c = eta / eta_sq;
    let stat = eta.dot(y);
    let z = y - &c * stat;
    let ac = &poly.a * &c;
    let az = &poly.a * &z;
    let c_norm = c.norm();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for r in 0..poly.rows() {
        let row_norm = poly.a.row(r).norm();
        let slack = poly.b[r] - az[r];
        if ac[r].abs() <= 1e-12 * row_norm * c_norm {
            if -slack > FEASIBILITY_SLACK * (1.0 + poly.b[r].abs() + az[r].abs()) {
                return Err(Error::Infeasible { row: r, violation: -slack });
            }
            continue;
        }
        let bound = slack / ac[r];
        if ac[r] < 0.0 {
            lo = lo.max(bound);
        } else {
            hi = hi.min(bound);
        }
    }
    if !(lo < hi) {
        return Err(Error::Infeasible { row: 0, violation: lo - hi });
    }
    Ok(TruncationInterval { v_minus: lo, v_plus: hi })
}

/// Everything needed to evaluate the pivot for one contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectivePivot {
    pub statistic: f64,
    pub sd: f64,
    pub bounds: TruncationInterval,
}

impl SelectivePivot {
    pub fn new(poly: &Polyhedron, eta: &DVector<f64>, y: &DVector<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        let bounds = truncation_bounds(poly, eta, y)?;
        Ok(Self { statistic: eta.dot(y), sd: sigma * eta.norm(), bounds })
    }

    fn dist(&self, mean: f64) -> TruncatedNormal {
        TruncatedNormal { mu: mean, sd: self.sd, a: self.bounds.v_minus, b: self.bounds.v_plus }
    }

    /// `(P(T ≤ t), P(T ≥ t))` under mean `m`.
    fn tails(&self, m: f64) -> (f64, f64) {
        let d = self.dist(m);
        (d.cdf(self.statistic), d.sf(self.statistic))
    }

    /// Pivot `F(ηᵀy)` at the given mean.
    pub fn pivot(&self, mean: f64) -> Result<f64> {
        let d = self.dist(mean);
        d.check_mass()?;
        Ok(d.cdf(self.statistic))
    }

    /// Two-sided p-value `2 min(u, 1 − u)` for `H₀: ηᵀμ = null`.
    pub fn p_value(&self, null: f64) -> Result<f64> {
        self.dist(null).check_mass()?;
        let (lower, upper) = self.tails(null);
        Ok((2.0 * lower.min(upper)).min(1.0))
    }

    /// Equal-tailed interval; the point 0 is always on the side consistent
    /// with [`Self::p_value`] at `null = 0`.
    pub fn confidence_interval(&self, alpha: f64) -> Result<(f64, f64)> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let target = alpha / 2.0;
        // lower tail decreases in m; the upper endpoint is where it falls to α/2
        let high = self.solve(|m| self.tails(m).0 >= target, true)?;
        // upper tail increases in m; the lower endpoint is where it rises to α/2
        let low = self.solve(|m| self.tails(m).1 >= target, false)?;
        Ok((low, high))
    }

    /// Finds the boundary of the set `{m : inside(m)}`, which is a half line
    /// extending left (`upper = true`) or right. Returns the last inside point.
    fn solve(&self, inside: impl Fn(f64) -> bool, upper: bool) -> Result<f64> {
        let toward_out = if upper { 1.0 } else { -1.0 };
        let mut probes = vec![0.0, self.statistic];
        let (mut best_in, mut best_out): (Option<f64>, Option<f64>) = (None, None);
        let classify = |m: f64, best_in: &mut Option<f64>, best_out: &mut Option<f64>| {
            if inside(m) {
                if best_in.is_none_or(|b| (m - b) * toward_out > 0.0) {
                    *best_in = Some(m);
                }
            } else if best_out.is_none_or(|b| (b - m) * toward_out > 0.0) {
                *best_out = Some(m);
            }
        };
        for m in probes.drain(..) {
            classify(m, &mut best_in, &mut best_out);
        }
        let mut step = self.sd;
        let mut k = 0;
        while best_in.is_none() || best_out.is_none() {
            if k > MAX_DOUBLINGS {
                return Err(Error::BracketFailure(format!(
                    "no sign change within {step:.3e} of the observed statistic"
                )));
            }
            if best_out.is_none() {
                classify(self.statistic + toward_out * step, &mut best_in, &mut best_out);
            }
            if best_in.is_none() {
                classify(self.statistic - toward_out * step, &mut best_in, &mut best_out);
            }
            step *= 2.0;
            k += 1;
        }
        let (mut inn, mut out) = (best_in.unwrap(), best_out.unwrap());
        let tol = 1e-8 * self.sd;
        while (out - inn).abs() > tol {
            let mid = 0.5 * (inn + out);
            if mid == inn || mid == out {
                break;
            }
            if inside(mid) {
                inn = mid;
            } else {
                out = mid;
            }
        }
        Ok(inn)
    }
}

pub fn selective_pvalue(
    eta: &DVector<f64>,
    y: &DVector<f64>,
    poly: &Polyhedron,
    sigma: f64,
    null: f64,
) -> Result<f64> {
    SelectivePivot::new(poly, eta, y, sigma)?.p_value(null)
}

pub fn selective_ci(
    eta: &DVector<f64>,
    y: &DVector<f64>,
    poly: &Polyhedron,
    sigma: f64,
    alpha: f64,
) -> Result<(f64, f64)> {
    SelectivePivot::new(poly, eta, y, sigma)?.confidence_interval(alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prototype,
    SwapIn,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Prototype => "prototype",
            Role::SwapIn => "swap_in",
        })
    }
}

/// One tested contrast. `p_value` and the interval are absent when the
/// truncation cell is too thin to support a pivot; `failure` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub feature: usize,
    pub name: String,
    pub role: Role,
    pub cluster: usize,
    /// Prototype the feature stands in for; equal to `feature` for prototypes.
    pub prototype: usize,
    pub prototype_name: String,
    #[serde(with = "crate::io::extended_float")]
    pub estimate: f64,
    pub p_value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    #[serde(with = "crate::io::extended_float")]
    pub v_minus: f64,
    #[serde(with = "crate::io::extended_float")]
    pub v_plus: f64,
    pub target: String,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub records: Vec<InferenceRecord>,
}

/// Infers one contrast, turning a degenerate cell or bracket failure into a
/// record-level failure.
pub fn infer_contrast(
    poly: &Polyhedron,
    contrast: &Contrast,
    y: &DVector<f64>,
    sigma: f64,
    alpha: f64,
) -> Result<(SelectivePivot, Option<f64>, Option<(f64, f64)>, Option<String>)> {
    let pivot = SelectivePivot::new(poly, &contrast.eta, y, sigma)?;
    let p = match pivot.p_value(0.0) {
        Ok(p) => p,
        Err(e @ Error::DegenerateTruncation { .. }) => return Ok((pivot, None, None, Some(e.to_string()))),
        Err(e) => return Err(e),
    };
    match pivot.confidence_interval(alpha) {
        Ok(ci) => Ok((pivot, Some(p), Some(ci), None)),
        Err(e @ Error::BracketFailure(_)) => Ok((pivot, Some(p), None, Some(e.to_string()))),
        Err(e) => Err(e),
    }
}
