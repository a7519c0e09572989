//! Data model, standardization, synthetic generators and noise-scale estimation.
//!
//! Standardized columns have mean zero and sum of squares `n` (so `xᵀx / n = 1`,
//! i.e. `‖x‖₂ = √n`). The response is centered alongside and its mean kept as
//! `y_offset`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub sigma: Option<f64>,
    pub standardized: bool,
    /// Mean removed from the response during standardization.
    pub y_offset: f64,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 || p < 1 {
            return Err(Error::InvalidInput(format!("need n >= 2 and p >= 1, got {n}x{p}")));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!("response has {} entries, design has {n} rows", y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in data".into()));
        }
        let feature_names = match feature_names {
            Some(names) if names.len() == p => names,
            Some(names) => {
                return Err(Error::InvalidInput(format!("{} feature names for {p} columns", names.len())))
            }
            None => (1..=p).map(|j| format!("x{j}")).collect(),
        };
        Ok(Self { x, y, feature_names, sigma: None, standardized: false, y_offset: 0.0 })
    }

    /// Standardizes the columns of `x` and centers `y`.
    pub fn standardize(mut self) -> Result<Self> {
        self.x = standardize_named(&self.x, Some(&self.feature_names))?;
        let mean = self.y.mean();
        self.y.add_scalar_mut(-mean);
        self.y_offset += mean;
        self.standardized = true;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The supplied σ, or an error telling the user to provide one.
    pub fn require_sigma(&self) -> Result<f64> {
        self.sigma.ok_or_else(|| Error::SigmaUnavailable("no sigma set on the dataset".into()))
    }
}

/// Centers each column and rescales it to sum of squares `n`.
pub fn standardize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    standardize_named(x, None)
}

fn standardize_named(x: &DMatrix<f64>, names: Option<&[String]>) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let ss = col.norm_squared();
        let scale = x.column(j).amax().max(1.0);
        if ss <= 1e-24 * scale * scale * n {
            let name = names.map(|v| v[j].clone()).unwrap_or_else(|| format!("x{}", j + 1));
            return Err(Error::ConstantColumn { index: j, name });
        }
        col *= (n / ss).sqrt();
    }
    Ok(out)
}

/// Block-diagonal equicorrelated Gaussian design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDesignSpec {
    pub n: usize,
    pub block_sizes: Vec<usize>,
    pub rho: f64,
    pub seed: u64,
}

impl BlockDesignSpec {
    /// `blocks` blocks of `size` features each.
    pub fn uniform(n: usize, blocks: usize, size: usize, rho: f64, seed: u64) -> Self {
        Self { n, block_sizes: vec![size; blocks], rho, seed }
    }

    pub fn p(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    /// Block label (0-based) of every feature.
    pub fn block_labels(&self) -> Vec<usize> {
        self.block_sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput("block design needs n >= 2".into()));
        }
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(Error::InvalidInput("block sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// Draws rows i.i.d. from the block covariance (unit diagonal, `rho` within
/// blocks, zero across) and standardizes the result.
pub fn generate_block_design(spec: &BlockDesignSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed, &[0xB10C]);
    let p = spec.p();
    let shared = spec.rho.sqrt();
    let own = (1.0 - spec.rho).sqrt();
    let mut x = DMatrix::zeros(spec.n, p);
    for i in 0..spec.n {
        let mut j = 0;
        for &size in &spec.block_sizes {
            let common: f64 = StandardNormal.sample(&mut rng);
            for _ in 0..size {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] = shared * common + own * z;
                j += 1;
            }
        }
    }
    standardize(&x)
}

/// `y = Xβ + ε` with `ε ~ N(0, σ² I)`; `sigma = 0` gives the noiseless response.
pub fn generate_response(x: &DMatrix<f64>, beta: &DVector<f64>, sigma: f64, seed: u64) -> Result<DVector<f64>> {
    if beta.len() != x.ncols() {
        return Err(Error::InvalidInput(format!("beta has {} entries for {} columns", beta.len(), x.ncols())));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be non-negative, got {sigma}")));
    }
    let mut y = x * beta;
    if sigma > 0.0 {
        let mut rng = rng_from(seed, &[0x5E5]);
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * e;
        }
    }
    Ok(y)
}

/// Least-squares noise estimate `‖y − Hy‖² / (n − p)`.
pub fn least_squares_sigma(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(Error::SigmaUnavailable(format!("n = {n} does not exceed p = {p}")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * rmax) || rmax == 0.0 {
        return Err(Error::SigmaUnavailable("design is rank deficient".into()));
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * y);
    let rss = (y - fitted).norm_squared();
    Ok((rss / (n - p) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standardize_three_points() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let s = standardize(&x).unwrap();
        let h = (1.5f64).sqrt();
        assert_abs_diff_eq!(s[(0, 0)], -h, epsilon = 1e-14);
        assert_abs_diff_eq!(s[(1, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s[(2, 0)], h, epsilon = 1e-14);
    }

    #[test]
    fn standardize_is_idempotent() {
        let x = generate_block_design(&BlockDesignSpec::uniform(10, 2, 2, 0.3, 4)).unwrap();
        let again = standardize(&x).unwrap();
        assert!((x - again).amax() < 1e-12);
    }

    #[test]
    fn standardize_moments() {
        let mut rng = rng_from(11, &[]);
        let x = DMatrix::from_fn(10, 4, |_, _| StandardNormal.sample(&mut rng));
        let s = standardize(&x).unwrap();
        for col in s.column_iter() {
            assert!(col.mean().abs() < 1e-10);
            assert!((col.norm_squared() - 10.0).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_column_is_rejected_with_index() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        match standardize(&x) {
            Err(Error::ConstantColumn { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected constant column error, got {other:?}"),
        }
    }

    fn mean_corr(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
        let n = x.nrows() as f64;
        pairs.iter().map(|&(a, b)| x.column(a).dot(&x.column(b)) / n).sum::<f64>() / pairs.len() as f64
    }

    #[test]
    fn independent_design_has_small_cross_correlation() {
        let spec = BlockDesignSpec::uniform(200, 4, 5, 0.0, 1);
        let x = generate_block_design(&spec).unwrap();
        let labels = spec.block_labels();
        let pairs: Vec<_> = (0..20)
            .flat_map(|a| (a + 1..20).map(move |b| (a, b)))
            .filter(|&(a, b)| labels[a] != labels[b])
            .collect();
        assert!(mean_corr(&x, &pairs).abs() < 3.0 / (200f64).sqrt());
    }

    #[test]
    fn within_block_correlation_tracks_rho() {
        let spec = BlockDesignSpec::uniform(200, 3, 10, 0.5, 2);
        let x = generate_block_design(&spec).unwrap();
        let pairs: Vec<_> = (0..10).flat_map(|a| (a + 1..10).map(move |b| (a, b))).collect();
        let m = mean_corr(&x, &pairs);
        assert!((0.4..=0.6).contains(&m), "mean within-block correlation {m}");
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = BlockDesignSpec::uniform(20, 2, 3, 0.4, 9);
        assert_eq!(generate_block_design(&spec).unwrap(), generate_block_design(&spec).unwrap());
        let x = generate_block_design(&spec).unwrap();
        let beta = DVector::from_element(6, 0.5);
        assert_eq!(generate_response(&x, &beta, 1.0, 3).unwrap(), generate_response(&x, &beta, 1.0, 3).unwrap());
        assert_ne!(generate_response(&x, &beta, 1.0, 3).unwrap(), generate_response(&x, &beta, 1.0, 4).unwrap());
    }

    #[test]
    fn noiseless_response() {
        let x = generate_block_design(&BlockDesignSpec::uniform(8, 1, 3, 0.2, 1)).unwrap();
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(generate_response(&x, &beta, 0.0, 5).unwrap(), &x * &beta);
    }

    #[test]
    fn null_response_mean() {
        let n = 400;
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = generate_response(&x, &DVector::zeros(1), 1.0, 77).unwrap();
        assert!(y.mean().abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn sigma_zero_for_exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let y = &x * DVector::from_vec(vec![2.0, -3.0]);
        assert!(least_squares_sigma(&x, &y).unwrap() < 1e-12);
    }

    #[test]
    fn sigma_intercept_only_is_sample_sd() {
        let y: DVector<f64> = DVector::from_vec(vec![1.0, 4.0, 2.0, 7.0, 5.0]);
        let x = DMatrix::from_element(5, 1, 1.0);
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(least_squares_sigma(&x, &y).unwrap(), var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn sigma_matches_normal_equations() {
        let mut rng = rng_from(5, &[]);
        let x: DMatrix<f64> = DMatrix::from_fn(8, 2, |_, _| StandardNormal.sample(&mut rng));
        let y: DVector<f64> = DVector::from_fn(8, |_, _| StandardNormal.sample(&mut rng));
        // independent route: solve (XᵀX) b = Xᵀy by Cramer's rule
        let g = x.transpose() * &x;
        let r = x.transpose() * &y;
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        let b0 = (r[0] * g[(1, 1)] - g[(0, 1)] * r[1]) / det;
        let b1 = (g[(0, 0)] * r[1] - g[(1, 0)] * r[0]) / det;
        let resid = &y - &x * DVector::from_vec(vec![b0, b1]);
        let expected = (resid.norm_squared() / 6.0).sqrt();
        assert_abs_diff_eq!(least_squares_sigma(&x, &y).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn sigma_invariant_to_column_order() {
        let mut rng = rng_from(6, &[]);
        let x = DMatrix::from_fn(12, 3, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(12, |_, _| StandardNormal.sample(&mut rng));
        let perm = crate::linalg::select_columns(&x, &[2, 0, 1]);
        assert_abs_diff_eq!(
            least_squares_sigma(&x, &y).unwrap(),
            least_squares_sigma(&perm, &y).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sigma_needs_more_rows_than_columns() {
        let x = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(least_squares_sigma(&x, &DVector::zeros(3)), Err(Error::SigmaUnavailable(_))));
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        assert!(matches!(least_squares_sigma(&x, &DVector::zeros(4)), Err(Error::SigmaUnavailable(_))));
    }
}
