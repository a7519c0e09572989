//! Summary statistics used by the simulation harness.

/// Kolmogorov-Smirnov distance between the empirical distribution of `values`
/// and Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0_f64, |d, (i, &u)| {
        let u = u.clamp(0.0, 1.0);
        d.max((i as f64 + 1.0) / n - u).max(u - i as f64 / n)
    })
}

/// Fraction of `values` at or below `t`.
pub fn ecdf_at(values: &[f64], t: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().filter(|&&v| v <= t).count() as f64 / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
