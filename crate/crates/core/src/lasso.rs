//! Lasso by cyclic coordinate descent, entry values along the path,
//! cross-validated λ, and the polyhedron describing a lasso selection event.
//!
//! Objective: `½‖y − Xβ‖² + λ‖β‖₁`, no intercept; inputs are expected to be
//! centered and standardized.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram_inverse, select_columns};
use crate::proto::{ConstraintTag, Polyhedron};
use crate::rng::rng_from;

pub const DEFAULT_TOL: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 100_000;
const QUIESCENCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub active: Vec<usize>,
    pub signs: Vec<f64>,
    pub tol: f64,
    pub sweeps: usize,
}

impl LassoFit {
    pub fn objective(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        lasso_objective(x, y, &self.beta, self.lambda)
    }

    pub fn kkt_residual(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        kkt_residual(x, y, &self.beta, self.lambda)
    }
}

pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (y - x * beta).norm_squared() + lambda * beta.lp_norm(1)
}

/// Largest relative violation of the stationarity conditions, in units of λ.
pub fn kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let grad = x.tr_mul(&(y - x * beta));
    let mut worst = 0.0_f64;
    for j in 0..beta.len() {
        let v = if beta[j] != 0.0 {
            (grad[j] - lambda * beta[j].signum()).abs() / lambda
        } else {
            (grad[j].abs() / lambda - 1.0).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    x.tr_mul(y).amax()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn fit_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, tol: f64) -> Result<LassoFit> {
    fit_lasso_warm(x, y, lambda, tol, None)
}

/// As [`fit_lasso`], starting coordinate descent from `start`.
pub fn fit_lasso_warm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    tol: f64,
    start: Option<&DVector<f64>>,
) -> Result<LassoFit> {
    let (n, p) = x.shape();
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if y.len() != n {
        return Err(Error::InvalidInput("response length does not match design".into()));
    }
    let norms: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut beta = match start {
        Some(b) if b.len() == p => b.clone(),
        Some(_) => return Err(Error::InvalidInput("warm start has wrong length".into())),
        None => DVector::zeros(p),
    };
    let mut resid = y - x * &beta;
    let threshold = QUIESCENCE * lambda;
    let mut sweeps = 0;
    let update = |j: usize, beta: &mut DVector<f64>, resid: &mut DVector<f64>| -> f64 {
        if norms[j] == 0.0 {
            return 0.0;
        }
        let col = x.column(j);
        let old = beta[j];
        let z = col.dot(resid) + norms[j] * old;
        let new = soft_threshold(z, lambda) / norms[j];
        let delta = new - old;
        if delta != 0.0 {
            resid.axpy(-delta, &col, 1.0);
            beta[j] = new;
        }
        delta.abs()
    };
    loop {
        // full pass, then iterate on the current support until it settles
        let mut change = 0.0_f64;
        for j in 0..p {
            change = change.max(update(j, &mut beta, &mut resid));
        }
        sweeps += 1;
        if change < threshold {
            resid = y - x * &beta;
            let kkt = kkt_residual(x, y, &beta, lambda);
            if kkt <= tol {
                break;
            }
        }
        loop {
            if sweeps >= MAX_SWEEPS {
                break;
            }
            let support: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            let mut inner = 0.0_f64;
            for &j in &support {
                inner = inner.max(update(j, &mut beta, &mut resid));
            }
            sweeps += 1;
            if inner < threshold {
                break;
            }
        }
        if sweeps >= MAX_SWEEPS {
            let kkt = kkt_residual(x, y, &beta, lambda);
            if kkt <= tol {
                break;
            }
            return Err(Error::NonConvergence { sweeps, kkt_residual: kkt });
        }
    }
    let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
    let signs = active.iter().map(|&j| beta[j].signum()).collect();
    Ok(LassoFit { beta, lambda, active, signs, tol, sweeps })
}

/// `count` log-spaced values from `λ_max` down to `λ_max / 1000`.
pub fn lambda_grid(lambda_max: f64, count: usize) -> Vec<f64> {
    let ratio: f64 = 1e-3;
    (0..count).map(|i| lambda_max * ratio.powf(i as f64 / (count - 1) as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryValues {
    /// Largest λ at which each feature is active; zero if never active.
    pub z: DVector<f64>,
    pub grid: Vec<f64>,
}

pub fn entry_values(x: &DMatrix<f64>, y: &DVector<f64>, grid_size: usize) -> Result<EntryValues> {
    if grid_size < 2 {
        return Err(Error::InvalidInput("entry values need a grid of at least 2 points".into()));
    }
    let p = x.ncols();
    let top = lambda_max(x, y);
    if top == 0.0 {
        return Ok(EntryValues { z: DVector::zeros(p), grid: vec![0.0; grid_size] });
    }
    let grid = lambda_grid(top, grid_size);
    let mut z = DVector::zeros(p);
    let mut entered_at: Vec<Option<usize>> = vec![None; p];
    let mut fits: Vec<DVector<f64>> = Vec::with_capacity(grid_size);
    let mut warm = DVector::zeros(p);
    for (i, &lam) in grid.iter().enumerate() {
        let fit = fit_lasso_warm(x, y, lam, DEFAULT_TOL, Some(&warm))?;
        for &j in &fit.active {
            if entered_at[j].is_none() {
                entered_at[j] = Some(i);
            }
        }
        warm = fit.beta.clone();
        fits.push(fit.beta);
    }
    for j in 0..p {
        let Some(i) = entered_at[j] else { continue };
        z[j] = grid[i];
        if i == 0 {
            continue;
        }
        let mid = (grid[i - 1] * grid[i]).sqrt();
        let fit = fit_lasso_warm(x, y, mid, DEFAULT_TOL, Some(&fits[i]))?;
        if fit.beta[j] != 0.0 {
            z[j] = mid;
        }
    }
    Ok(EntryValues { z, grid })
}

/// Fold index per observation: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[0xF01D]));
    let mut fold = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold[i] = rank % folds;
    }
    fold
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// λ from the full-data grid minimizing mean held-out squared error.
///
/// Training fits are centered within the fold and use `λ · n_train / n`, which
/// keeps the penalty per observation fixed.
pub fn cv_lambda(x: &DMatrix<f64>, y: &DVector<f64>, folds: usize, seed: u64, grid_size: usize) -> Result<f64> {
    let (n, p) = x.shape();
    if folds < 2 || n < folds {
        return Err(Error::InvalidInput(format!("cross-validation needs 2 <= folds <= n, got {folds} folds for n = {n}")));
    }
    let top = lambda_max(x, y);
    if top == 0.0 {
        return Err(Error::InvalidInput("response is orthogonal to every column".into()));
    }
    let grid = lambda_grid(top, grid_size.max(2));
    let fold = fold_assignment(n, folds, seed);
    let mut sse = vec![0.0; grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let mut xt = select_rows(x, &train);
        let yt_raw = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let y_mean = yt_raw.mean();
        let yt = yt_raw.add_scalar(-y_mean);
        let x_means: Vec<f64> = (0..p).map(|j| xt.column(j).mean()).collect();
        for j in 0..p {
            xt.column_mut(j).add_scalar_mut(-x_means[j]);
        }
        let scale = train.len() as f64 / n as f64;
        let mut warm = DVector::zeros(p);
        for (g, &lam) in grid.iter().enumerate() {
            let fit = fit_lasso_warm(&xt, &yt, lam * scale, DEFAULT_TOL, Some(&warm))?;
            for &i in &test {
                let mut pred = y_mean;
                for &j in &fit.active {
                    pred += (x[(i, j)] - x_means[j]) * fit.beta[j];
                }
                sse[g] += (y[i] - pred).powi(2);
            }
            warm = fit.beta;
        }
    }
    // grid is decreasing, so the first minimum is the largest λ
    let mut best = 0;
    for g in 1..grid.len() {
        if sse[g] < sse[best] {
            best = g;
        }
    }
    Ok(grid[best])
}

/// Bisection on `log λ` until the active set has exactly `target` members.
pub fn lambda_for_size(x: &DMatrix<f64>, y: &DVector<f64>, target: usize) -> Result<LassoFit> {
    let top = lambda_max(x, y);
    let fail = |reason: String| Error::SizeMatch { target, reason };
    if top == 0.0 {
        return Err(fail("response is orthogonal to every column".into()));
    }
    if target == 0 {
        return fit_lasso(x, y, top, DEFAULT_TOL);
    }
    if target > x.ncols().min(x.nrows()) {
        return Err(fail(format!("cannot select {target} of {} columns with {} rows", x.ncols(), x.nrows())));
    }
    let mut hi = top;
    let mut lo = top;
    let mut low_fit = None;
    for _ in 0..60 {
        lo *= 0.5;
        let fit = fit_lasso(x, y, lo, DEFAULT_TOL)?;
        if fit.active.len() >= target {
            low_fit = Some(fit);
            break;
        }
        hi = lo;
    }
    let Some(fit) = low_fit else {
        return Err(fail("active set never reaches the target size".into()));
    };
    if fit.active.len() == target {
        return Ok(fit);
    }
    let mut warm = fit.beta;
    for _ in 0..200 {
        let mid = (hi * lo).sqrt();
        let fit = fit_lasso_warm(x, y, mid, DEFAULT_TOL, Some(&warm))?;
        match fit.active.len().cmp(&target) {
            std::cmp::Ordering::Equal => return Ok(fit),
            std::cmp::Ordering::Greater => {
                lo = mid;
                warm = fit.beta;
            }
            std::cmp::Ordering::Less => hi = mid,
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    Err(fail("active set size jumps over the target".into()))
}

/// Rows of the lasso selection event `{M̂ = M, ŝ = s}` for a fit on `x` at `λ`:
/// two inactive blocks followed by the sign block.
pub fn lasso_constraints(x: &DMatrix<f64>, active: &[usize], signs: &[f64], lambda: f64) -> Result<Polyhedron> {
    let (n, p) = x.shape();
    if active.len() != signs.len() {
        return Err(Error::InvalidInput("active set and signs differ in length".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
        return Err(Error::InvalidInput("signs must be +1 or -1".into()));
    }
    let inactive: Vec<usize> = (0..p).filter(|j| !active.contains(j)).collect();
    let xm = select_columns(x, active);
    let xi = select_columns(x, &inactive);
    let s = DVector::from_column_slice(signs);
    let ginv = gram_inverse(&xm, "active set")?;
    // (I − Q_M) X_{-M} and X_{-M}ᵀ (X_Mᵀ)⁺ s
    let resid_inactive = &xi - &xm * (&ginv * xm.tr_mul(&xi));
    let shift = xi.tr_mul(&(&xm * (&ginv * &s)));
    let mut rows: Vec<(RowDVector<f64>, f64)> = Vec::with_capacity(2 * inactive.len() + active.len());
    for k in 0..inactive.len() {
        rows.push((resid_inactive.column(k).transpose() / lambda, 1.0 - shift[k]));
    }
    for k in 0..inactive.len() {
        rows.push((-resid_inactive.column(k).transpose() / lambda, 1.0 + shift[k]));
    }
    let coef_map = &ginv * xm.transpose();
    let offset = &ginv * &s;
    for k in 0..active.len() {
        rows.push((-signs[k] * coef_map.row(k), -lambda * signs[k] * offset[k]));
    }
    Ok(Polyhedron::from_rows(n, rows, ConstraintTag::Lasso))
}
