//! Split-sample knockoff filter on top of the prototype screen: prototypes
//! come from one half of the rows, knockoff statistics from the other.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::dataset::standardize;
use crate::error::{Error, Result};
use crate::lasso::entry_values;
use crate::linalg::{max_abs, orthogonal_complement, psd_factor, select_columns};
use crate::proto::{extract_prototypes, PrototypeSet};
use crate::prototest::signal_clusters;
use crate::rng::rng_from;

/// Smallest Gram eigenvalue (unit-diagonal scale) accepted for knockoffs.
pub const MIN_EIGENVALUE: f64 = 1e-10;
/// Tolerance on both Gram identities, unit-diagonal scale.
pub const CERTIFY_TOL: f64 = 1e-8;
/// Grid size for the entry values behind the W statistics.
pub const ENTRY_GRID: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffMatrix {
    /// Same row count as the (possibly augmented) source.
    pub x_tilde: DMatrix<f64>,
    /// Source with any zero rows appended.
    pub x_augmented: DMatrix<f64>,
    /// `s` in the source column scale.
    pub s: DVector<f64>,
    /// `s` after scaling columns to unit norm; at most 1.
    pub s_unit: f64,
    pub augmented_rows: usize,
    /// `max |X̃ᵀX̃ − XᵀX|`, unit-diagonal scale.
    pub gram_residual: f64,
    /// `max |XᵀX̃ − (XᵀX − diag s)|`, unit-diagonal scale.
    pub cross_residual: f64,
}

/// Equicorrelated knockoffs for every column of `x`. Zero rows are appended
/// when `x` has fewer than `2p` rows, or `2p + 1` when its columns are
/// centered; in that case the knockoffs are centered over the original rows.
pub fn make_knockoffs(x: &DMatrix<f64>) -> Result<KnockoffMatrix> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::InvalidInput("knockoffs need at least one column".into()));
    }
    // centered sources get centered knockoffs, which costs one extra row
    let centered = (0..p).all(|j| x.column(j).sum().abs() <= 1e-8 * x.column(j).norm() * (n as f64).sqrt());
    let augmented_rows = (2 * p + usize::from(centered)).saturating_sub(n);
    let mut xa = DMatrix::zeros(n + augmented_rows, p);
    xa.rows_mut(0, n).copy_from(x);
    let d: Vec<f64> = (0..p).map(|j| xa.column(j).norm()).collect();
    if let Some(j) = d.iter().position(|&v| v == 0.0) {
        return Err(Error::ConstantColumn { index: j, name: format!("x{}", j + 1) });
    }
    let xn = DMatrix::from_fn(xa.nrows(), p, |i, j| xa[(i, j)] / d[j]);
    let sigma = xn.transpose() * &xn;
    let lambda_min = sigma.clone().symmetric_eigen().eigenvalues.min();
    if lambda_min < MIN_EIGENVALUE {
        return Err(Error::SingularGram { lambda_min });
    }
    let s = (2.0 * lambda_min).min(1.0);
    let sigma_inv = sigma
        .clone()
        .cholesky()
        .ok_or(Error::SingularGram { lambda_min })?
        .inverse();
    let eye = DMatrix::<f64>::identity(p, p);
    let core = (&eye * 2.0 - &sigma_inv * s) * s;
    let core = (&core + core.transpose()) * 0.5;
    let c = psd_factor(&core, 1e-12);
    let u = if centered {
        let mut avoid = DMatrix::zeros(xn.nrows(), p + 1);
        avoid.columns_mut(0, p).copy_from(&xn);
        avoid.view_mut((0, p), (n, 1)).fill(1.0);
        orthogonal_complement(&avoid, p)?
    } else {
        orthogonal_complement(&xn, p)?
    };
    let xtn = &xn * (&eye - &sigma_inv * s) + u * c;

    let gram_residual = max_abs(&(xtn.transpose() * &xtn - &sigma));
    let cross_residual = max_abs(&(xn.transpose() * &xtn - (&sigma - &eye * s)));
    if gram_residual > CERTIFY_TOL || cross_residual > CERTIFY_TOL {
        return Err(Error::Certification(format!(
            "knockoff Gram identities off by {gram_residual:.2e} and {cross_residual:.2e}"
        )));
    }
    let x_tilde = DMatrix::from_fn(xa.nrows(), p, |i, j| xtn[(i, j)] * d[j]);
    let s_scaled = DVector::from_fn(p, |j, _| s * d[j] * d[j]);
    Ok(KnockoffMatrix {
        x_tilde,
        x_augmented: xa,
        s: s_scaled,
        s_unit: s,
        augmented_rows,
        gram_residual,
        cross_residual,
    })
}

/// `W_j = Z_j − Z̃_j` from entry values on `[X X̃]`.
pub fn knockoff_statistics(x: &DMatrix<f64>, x_tilde: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.shape() != x_tilde.shape() {
        return Err(Error::InvalidInput("knockoff block must match the design shape".into()));
    }
    let p = x.ncols();
    let mut both = DMatrix::zeros(x.nrows(), 2 * p);
    both.columns_mut(0, p).copy_from(x);
    both.columns_mut(p, p).copy_from(x_tilde);
    let z = entry_values(&both, y, ENTRY_GRID)?.z;
    Ok(DVector::from_fn(p, |j, _| z[j] - z[j + p]))
}

/// Data-dependent threshold; `+∞` when no candidate meets level `q`.
pub fn knockoff_threshold(w: &[f64], q: f64) -> f64 {
    let mut cands: Vec<f64> = w.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands
        .into_iter()
        .find(|&t| {
            let neg = w.iter().filter(|&&v| v <= -t).count();
            let pos = w.iter().filter(|&&v| v >= t).count();
            (1 + neg) as f64 / pos.max(1) as f64 <= q
        })
        .unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffRun {
    pub q: f64,
    /// Rows used for prototype extraction; the rest feed the knockoff stage.
    pub first_half: Vec<usize>,
    pub prototypes: PrototypeSet,
    /// One statistic per cluster, aligned with `prototypes`.
    pub w: Vec<f64>,
    #[serde(with = "crate::io::extended_float")]
    pub threshold: f64,
    /// Selected prototype features.
    pub selected: Vec<usize>,
    pub selected_clusters: Vec<usize>,
    pub gram_residual: f64,
    pub cross_residual: f64,
    pub augmented_rows: usize,
}

/// Second stage given prototypes fixed by the first half. Knockoffs are built
/// from every column of `x2` before reducing to the prototypes.
pub fn knockoff_stage(
    x1: &DMatrix<f64>,
    y1: &DVector<f64>,
    x2: &DMatrix<f64>,
    y2: &DVector<f64>,
    clustering: &Clustering,
    q: f64,
) -> Result<KnockoffRun> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidInput(format!("q must lie in (0, 1], got {q}")));
    }
    if x2.nrows() != y2.len() {
        return Err(Error::InvalidInput("second-half response length does not match design".into()));
    }
    let prototypes = extract_prototypes(x1, y1, clustering)?;
    let knock = make_knockoffs(x2)?;
    knockoff_filter(prototypes, &knock, y2, q)
}

/// Knockoff selection among fixed prototypes, reusing a knockoff matrix built
/// from the full second-half design.
pub fn knockoff_filter(prototypes: PrototypeSet, knock: &KnockoffMatrix, y2: &DVector<f64>, q: f64) -> Result<KnockoffRun> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidInput(format!("q must lie in (0, 1], got {q}")));
    }
    if y2.len() + knock.augmented_rows != knock.x_augmented.nrows() {
        return Err(Error::InvalidInput("second-half response length does not match design".into()));
    }
    let mut y_aug = DVector::zeros(knock.x_augmented.nrows());
    y_aug.rows_mut(0, y2.len()).copy_from(y2);
    let xp = select_columns(&knock.x_augmented, &prototypes.prototypes);
    let xtp = select_columns(&knock.x_tilde, &prototypes.prototypes);
    let w: Vec<f64> = knockoff_statistics(&xp, &xtp, &y_aug)?.iter().copied().collect();
    let threshold = knockoff_threshold(&w, q);
    let selected_clusters: Vec<usize> = (0..w.len()).filter(|&k| w[k] >= threshold).collect();
    let selected = selected_clusters.iter().map(|&k| prototypes.prototypes[k]).collect();
    Ok(KnockoffRun {
        q,
        first_half: Vec::new(),
        prototypes,
        w,
        threshold,
        selected,
        selected_clusters,
        gram_residual: knock.gram_residual,
        cross_residual: knock.cross_residual,
        augmented_rows: knock.augmented_rows,
    })
}

/// Seeded split, first `⌈n/2⌉` permuted rows to the prototype stage. Each half
/// is re-standardized and its response centered.
pub fn split_rows(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[0x5B11]));
    let second = order.split_off(n.div_ceil(2));
    let (mut a, mut b) = (order, second);
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

fn half(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let xs = DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)]);
    let ys = DVector::from_fn(rows.len(), |i, _| y[rows[i]]);
    let mean = ys.mean();
    Ok((standardize(&xs)?, ys.add_scalar(-mean)))
}

pub fn run_knockoff_protolasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clustering: &Clustering,
    q: f64,
    seed: u64,
) -> Result<KnockoffRun> {
    if x.nrows() < 4 {
        return Err(Error::InvalidInput("need at least 4 rows to split".into()));
    }
    let (a, b) = split_rows(x.nrows(), seed);
    if b.len() <= x.ncols() {
        return Err(Error::InvalidInput(format!(
            "the knockoff half has {} rows but needs more than p = {} for a nonsingular centered Gram matrix",
            b.len(),
            x.ncols()
        )));
    }
    let (x1, y1) = half(x, y, &a)?;
    let (x2, y2) = half(x, y, &b)?;
    let mut run = knockoff_stage(&x1, &y1, &x2, &y2, clustering, q)?;
    run.first_half = a;
    Ok(run)
}

/// Cluster-level false discovery proportion and power.
pub fn fdp_power(run: &KnockoffRun, clustering: &Clustering, beta: &DVector<f64>) -> (f64, f64) {
    let signal = signal_clusters(clustering, beta);
    let selected: Vec<usize> = run.selected.iter().map(|&j| clustering.label(j)).collect();
    let true_pos = selected.iter().filter(|k| signal.contains(k)).count();
    let fdp = (selected.len() - true_pos) as f64 / selected.len().max(1) as f64;
    let power = if signal.is_empty() { 0.0 } else { true_pos as f64 / signal.len() as f64 };
    (fdp, power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_block_design, generate_response, BlockDesignSpec};
    use crate::linalg::orthonormal_basis;
    use rand_distr::{Distribution, StandardNormal};

    fn check_identities(x: &DMatrix<f64>, k: &KnockoffMatrix) {
        let xa = &k.x_augmented;
        let d: Vec<f64> = (0..x.ncols()).map(|j| xa.column(j).norm()).collect();
        let g = xa.transpose() * xa;
        let gt = k.x_tilde.transpose() * &k.x_tilde;
        let cross = xa.transpose() * &k.x_tilde;
        for i in 0..x.ncols() {
            for j in 0..x.ncols() {
                let scale = d[i] * d[j];
                assert!(((gt[(i, j)] - g[(i, j)]) / scale).abs() < 1e-8);
                let target = g[(i, j)] - if i == j { k.s[i] } else { 0.0 };
                assert!(((cross[(i, j)] - target) / scale).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn orthogonal_design_gets_full_s() {
        let mut rng = rng_from(3, &[]);
        let g = DMatrix::from_fn(12, 3, |_, _| StandardNormal.sample(&mut rng));
        let x = orthonormal_basis(&g).unwrap() * 12f64.sqrt();
        let k = make_knockoffs(&x).unwrap();
        assert!((k.s_unit - 1.0).abs() < 1e-12);
        assert!((k.s[0] - 12.0).abs() < 1e-9);
        // each knockoff orthogonal to its own original
        let cross = x.transpose() * &k.x_tilde;
        assert!(max_abs(&cross) < 1e-9);
        check_identities(&x, &k);
    }

    #[test]
    fn identities_hold_on_block_designs() {
        for seed in 0..5 {
            let x = generate_block_design(&BlockDesignSpec::uniform(60, 4, 5, 0.5, seed)).unwrap();
            let k = make_knockoffs(&x).unwrap();
            assert_eq!(k.augmented_rows, 0);
            check_identities(&x, &k);
            assert!(k.s.iter().all(|&s| s > 0.0 && s <= 2.0 * 60.0));
        }
    }

    #[test]
    fn augmentation_when_rows_are_scarce() {
        let x = generate_block_design(&BlockDesignSpec::uniform(15, 2, 5, 0.3, 4)).unwrap();
        let k = make_knockoffs(&x).unwrap();
        assert_eq!(k.augmented_rows, 6);
        assert_eq!(k.x_tilde.nrows(), 21);
        check_identities(&x, &k);
    }

    #[test]
    fn centered_sources_get_centered_knockoffs() {
        let x = generate_block_design(&BlockDesignSpec::uniform(40, 4, 5, 0.5, 11)).unwrap();
        let k = make_knockoffs(&x).unwrap();
        assert_eq!(k.augmented_rows, 1);
        for j in 0..20 {
            assert!(k.x_tilde.rows(0, 40).column(j).sum().abs() < 1e-9);
        }
        check_identities(&x, &k);
    }

    #[test]
    fn duplicate_columns_are_rejected() {
        let mut x = generate_block_design(&BlockDesignSpec::uniform(20, 1, 3, 0.0, 5)).unwrap();
        x.set_column(2, &x.column(0).clone_owned());
        assert!(matches!(make_knockoffs(&x), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn threshold_hand_example() {
        let w = [3.0, -1.0, 2.0, -2.0, 5.0];
        let t = knockoff_threshold(&w, 0.5);
        assert_eq!(t, 3.0);
        let sel: Vec<usize> = (0..5).filter(|&j| w[j] >= t).collect();
        assert_eq!(sel, vec![0, 4]);
        assert_eq!(knockoff_threshold(&w, 1.0), 1.0);
        assert_eq!(knockoff_threshold(&[-1.0, -2.0, 0.0], 0.5), f64::INFINITY);
        assert_eq!(knockoff_threshold(&[0.0, 0.0], 1.0), f64::INFINITY);
    }

    #[test]
    fn swapping_a_pair_flips_its_statistic() {
        let x = generate_block_design(&BlockDesignSpec::uniform(40, 2, 4, 0.4, 6)).unwrap();
        let mut beta = DVector::zeros(8);
        beta[0] = 1.0;
        beta[5] = -0.7;
        let y = generate_response(&x, &beta, 1.0, 1).unwrap();
        let k = make_knockoffs(&x).unwrap();
        let w = knockoff_statistics(&x, &k.x_tilde, &y).unwrap();
        for j in [0, 3, 5] {
            let (mut a, mut b) = (x.clone(), k.x_tilde.clone());
            a.set_column(j, &k.x_tilde.column(j));
            b.set_column(j, &x.column(j));
            let ws = knockoff_statistics(&a, &b, &y).unwrap();
            for i in 0..8 {
                let expect = if i == j { -w[i] } else { w[i] };
                assert!((ws[i] - expect).abs() < 1e-9 * w.amax().max(1.0), "feature {i} after swapping {j}");
            }
        }
    }

    #[test]
    fn statistics_depend_only_on_gram_and_inner_products() {
        let x = generate_block_design(&BlockDesignSpec::uniform(30, 2, 3, 0.5, 7)).unwrap();
        let mut beta = DVector::zeros(6);
        beta[1] = 1.0;
        let y = generate_response(&x, &beta, 1.0, 2).unwrap();
        let k = make_knockoffs(&x).unwrap();
        let mut rng = rng_from(9, &[]);
        let g = DMatrix::from_fn(30, 30, |_, _| StandardNormal.sample(&mut rng));
        let q = orthonormal_basis(&g).unwrap();
        let w1 = knockoff_statistics(&x, &k.x_tilde, &y).unwrap();
        let w2 = knockoff_statistics(&(&q * &x), &(&q * &k.x_tilde), &(&q * &y)).unwrap();
        assert!((w1 - w2).amax() < 1e-9);
    }

    #[test]
    fn split_is_seeded_and_balanced() {
        let (a, b) = split_rows(11, 4);
        assert_eq!((a.len(), b.len()), (6, 5));
        assert_eq!(split_rows(11, 4), (a.clone(), b));
        assert_ne!(split_rows(11, 5).0, a);
    }

    #[test]
    fn prototypes_ignore_second_half_response() {
        let x = generate_block_design(&BlockDesignSpec::uniform(40, 3, 3, 0.5, 8)).unwrap();
        let c = Clustering::from_labels(&[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let mut beta = DVector::zeros(9);
        beta[0] = 2.0;
        let y = generate_response(&x, &beta, 1.0, 3).unwrap();
        let run = run_knockoff_protolasso(&x, &y, &c, 0.2, 1).unwrap();
        let (_, second) = split_rows(40, 1);
        let mut y2 = y.clone();
        let vals: Vec<f64> = second.iter().map(|&i| y[i]).rev().collect();
        for (&i, v) in second.iter().zip(vals) {
            y2[i] = v;
        }
        let run2 = run_knockoff_protolasso(&x, &y2, &c, 0.2, 1).unwrap();
        assert_eq!(run.prototypes, run2.prototypes);
        assert!(run.gram_residual < CERTIFY_TOL && run.cross_residual < CERTIFY_TOL);
    }

    #[test]
    fn fdp_power_arithmetic() {
        let c = Clustering::from_labels(&(0..10).map(|j| j / 2).collect::<Vec<_>>());
        let mut beta = DVector::zeros(10);
        for j in [0, 2, 4, 6, 8] {
            beta[j] = 1.0;
        }
        let mut run = KnockoffRun {
            q: 0.2,
            first_half: vec![],
            prototypes: PrototypeSet { prototypes: vec![], signs: vec![] },
            w: vec![],
            threshold: f64::INFINITY,
            selected: vec![],
            selected_clusters: vec![],
            gram_residual: 0.0,
            cross_residual: 0.0,
            augmented_rows: 0,
        };
        assert_eq!(fdp_power(&run, &c, &beta), (0.0, 0.0));
        run.selected = vec![1, 3, 5, 7, 9];
        assert_eq!(fdp_power(&run, &c, &beta), (0.0, 1.0));
        // five signal clusters; the selection hits two of them and one null
        let c5 = Clustering::from_labels(&[0, 0, 1, 1, 2, 2, 3, 3, 4, 5]);
        let mut b3 = DVector::zeros(10);
        for j in [0, 2, 4, 6, 8] {
            b3[j] = 1.0;
        }
        run.selected = vec![1, 3, 9];
        let (fdp, power) = fdp_power(&run, &c5, &b3);
        assert!((fdp - 1.0 / 3.0).abs() < 1e-15 && (power - 2.0 / 5.0).abs() < 1e-15);
    }
}
