//! Choosing the number of feature clusters from dendrogram merge heights.
//!
//! The observed merge-height curve `h_X(k)` is compared with the mean curve of
//! `B` reference matrices whose columns keep the range of `X` but lose the
//! correlation. The gap `ĝ_k = mean h_U(k) − h_X(k)` jumps where the observed
//! heights plunge, so the estimate is the argmax of its first difference.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{correlation_dissimilarity, hclust, Dendrogram, Linkage};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceScheme {
    /// Each column uniform on `[min, max]` of the matching column of `X`.
    #[default]
    Uniform,
    /// Each column an independent random permutation of the matching column.
    Permutation,
}

pub fn reference_matrix(x: &DMatrix<f64>, scheme: ReferenceScheme, seed: u64) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut rng = rng_from(seed, &[0x6A9]);
    let mut u = DMatrix::zeros(n, p);
    for j in 0..p {
        let col = x.column(j);
        match scheme {
            ReferenceScheme::Uniform => {
                let (lo, hi) = (col.min(), col.max());
                for i in 0..n {
                    let t: f64 = rng.random();
                    u[(i, j)] = lo + (hi - lo) * t;
                }
            }
            ReferenceScheme::Permutation => {
                let mut v: Vec<f64> = col.iter().copied().collect();
                v.shuffle(&mut rng);
                for i in 0..n {
                    u[(i, j)] = v[i];
                }
            }
        }
    }
    u
}

/// Height of the merge that leaves `k` clusters, for `k = 1..p−1`.
pub fn merge_heights(dendrogram: &Dendrogram) -> BTreeMap<usize, f64> {
    let p = dendrogram.leaf_count;
    dendrogram.merges.iter().enumerate().map(|(t, m)| (p - 1 - t, m.height)).collect()
}

fn heights_by_k(dendrogram: &Dendrogram) -> Vec<f64> {
    // index k − 1
    let mut h = dendrogram.heights();
    h.reverse();
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapOptions {
    pub replicates: usize,
    pub linkage: Linkage,
    pub k_max: Option<usize>,
    pub scheme: ReferenceScheme,
    pub seed: u64,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self { replicates: 100, linkage: Linkage::Complete, k_max: None, scheme: ReferenceScheme::Uniform, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    pub ks: Vec<usize>,
    pub h_x: Vec<f64>,
    pub h_u_mean: Vec<f64>,
    pub h_u_se: Vec<f64>,
    pub g_hat: Vec<f64>,
    /// `None` at `k = 1`, where the first difference is undefined.
    pub d_hat: Vec<Option<f64>>,
    pub k_hat: usize,
}

pub fn default_k_max(n: usize, p: usize) -> usize {
    (p - 1).min(n.saturating_sub(2))
}

pub fn estimate_clusters(x: &DMatrix<f64>, opts: &GapOptions) -> Result<GapCurve> {
    let (n, p) = x.shape();
    if opts.replicates < 1 {
        return Err(Error::InvalidInput("gap statistic needs at least one reference replicate".into()));
    }
    if p < 3 {
        return Err(Error::InvalidInput(format!("gap statistic needs p >= 3, got {p}")));
    }
    let k_max = opts.k_max.unwrap_or_else(|| default_k_max(n, p));
    if !(2..p).contains(&k_max) {
        return Err(Error::InvalidInput(format!("k_max must lie in 2..={}, got {k_max}", p - 1)));
    }
    let observed = heights_by_k(&hclust(&correlation_dissimilarity(x)?, opts.linkage));
    let reference: Vec<Vec<f64>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let u = reference_matrix(x, opts.scheme, crate::rng::derive_seed(opts.seed, &[b as u64]));
            correlation_dissimilarity(&u).map(|d| heights_by_k(&hclust(&d, opts.linkage)))
        })
        .collect::<Result<_>>()?;
    Ok(assemble_curve(&observed, &reference, k_max))
}

/// Builds the curve from observed heights and reference height curves, all
/// indexed by `k − 1`.
pub fn assemble_curve(observed: &[f64], reference: &[Vec<f64>], k_max: usize) -> GapCurve {
    let b = reference.len() as f64;
    let ks: Vec<usize> = (1..=k_max).collect();
    let mut curve = GapCurve {
        ks: ks.clone(),
        h_x: Vec::with_capacity(k_max),
        h_u_mean: Vec::with_capacity(k_max),
        h_u_se: Vec::with_capacity(k_max),
        g_hat: Vec::with_capacity(k_max),
        d_hat: Vec::with_capacity(k_max),
        k_hat: 2,
    };
    for &k in &ks {
        let mean = reference.iter().map(|h| h[k - 1]).sum::<f64>() / b;
        let var = reference.iter().map(|h| (h[k - 1] - mean).powi(2)).sum::<f64>() / b;
        curve.h_x.push(observed[k - 1]);
        curve.h_u_mean.push(mean);
        curve.h_u_se.push(var.sqrt());
        curve.g_hat.push(mean - observed[k - 1]);
    }
    let mut best = f64::NEG_INFINITY;
    for (idx, &k) in ks.iter().enumerate() {
        if k == 1 {
            curve.d_hat.push(None);
            continue;
        }
        let d = curve.g_hat[idx] - curve.g_hat[idx - 1];
        curve.d_hat.push(Some(d));
        if d > best {
            best = d;
            curve.k_hat = k;
        }
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Dissimilarity;
    use crate::dataset::{generate_block_design, BlockDesignSpec};

    #[test]
    fn reference_respects_column_ranges() {
        let x = generate_block_design(&BlockDesignSpec::uniform(40, 2, 3, 0.3, 1)).unwrap();
        let u = reference_matrix(&x, ReferenceScheme::Uniform, 5);
        for j in 0..6 {
            let (lo, hi) = (x.column(j).min(), x.column(j).max());
            assert!(u.column(j).iter().all(|&v| v >= lo && v <= hi));
        }
        assert_ne!(u, reference_matrix(&x, ReferenceScheme::Uniform, 6));
    }

    #[test]
    fn reference_column_mean_near_midrange() {
        let n = 2000;
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64).sin() * 3.0);
        let u = reference_matrix(&x, ReferenceScheme::Uniform, 3);
        let (lo, hi) = (x.min(), x.max());
        let tol = 4.0 * (hi - lo) / (12.0 * n as f64).sqrt();
        assert!((u.mean() - 0.5 * (lo + hi)).abs() < tol);
    }

    #[test]
    fn permutation_reference_keeps_values() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let u = reference_matrix(&x, ReferenceScheme::Permutation, 1);
        let mut v: Vec<f64> = u.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn merge_heights_small_trees() {
        let d = Dissimilarity::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0])).unwrap();
        assert_eq!(merge_heights(&hclust(&d, Linkage::Complete)), BTreeMap::from([(1, 0.3)]));
        let d = Dissimilarity::new(DMatrix::from_row_slice(3, 3, &[0.0, 0.1, 0.9, 0.1, 0.0, 0.8, 0.9, 0.8, 0.0]))
            .unwrap();
        assert_eq!(merge_heights(&hclust(&d, Linkage::Complete)), BTreeMap::from([(1, 0.9), (2, 0.1)]));
    }

    #[test]
    fn complete_heights_non_increasing_in_k() {
        let x = generate_block_design(&BlockDesignSpec::uniform(30, 3, 5, 0.5, 2)).unwrap();
        let h = merge_heights(&hclust(&correlation_dissimilarity(&x).unwrap(), Linkage::Complete));
        let v: Vec<f64> = h.values().copied().collect();
        assert!(v.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn two_replicate_curve_by_hand() {
        let x = generate_block_design(&BlockDesignSpec::uniform(12, 2, 2, 0.6, 4)).unwrap();
        let opts = GapOptions { replicates: 2, k_max: Some(3), seed: 10, ..Default::default() };
        let curve = estimate_clusters(&x, &opts).unwrap();
        // manual recomputation of both reference dendrograms
        let hx = merge_heights(&hclust(&correlation_dissimilarity(&x).unwrap(), Linkage::Complete));
        let refs: Vec<BTreeMap<usize, f64>> = (0..2u64)
            .map(|b| {
                let u = reference_matrix(&x, ReferenceScheme::Uniform, crate::rng::derive_seed(10, &[b]));
                merge_heights(&hclust(&correlation_dissimilarity(&u).unwrap(), Linkage::Complete))
            })
            .collect();
        for k in 1..=3 {
            let expected = 0.5 * (refs[0][&k] + refs[1][&k]) - hx[&k];
            assert!((curve.g_hat[k - 1] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn curve_invariants_and_determinism() {
        let x = generate_block_design(&BlockDesignSpec::uniform(30, 4, 5, 0.5, 7)).unwrap();
        let opts = GapOptions { replicates: 10, seed: 3, ..Default::default() };
        let a = estimate_clusters(&x, &opts).unwrap();
        let b = estimate_clusters(&x, &opts).unwrap();
        assert_eq!(a, b);
        for i in 0..a.ks.len() {
            assert_eq!(a.g_hat[i], a.h_u_mean[i] - a.h_x[i]);
        }
        let total: f64 = a.d_hat.iter().flatten().sum();
        let last = a.g_hat.len() - 1;
        assert!((total - (a.g_hat[last] - a.g_hat[0])).abs() < 1e-12);
        let best = a.d_hat.iter().flatten().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        assert_eq!(a.d_hat[a.k_hat - 1], Some(best));
    }

    #[test]
    fn more_replicates_leave_gap_stable() {
        let x = generate_block_design(&BlockDesignSpec::uniform(30, 3, 5, 0.5, 12)).unwrap();
        let small = estimate_clusters(&x, &GapOptions { replicates: 50, seed: 1, ..Default::default() }).unwrap();
        let large = estimate_clusters(&x, &GapOptions { replicates: 200, seed: 2, ..Default::default() }).unwrap();
        for i in 0..small.ks.len() {
            let pooled = (small.h_u_se[i].powi(2) / 50.0 + large.h_u_se[i].powi(2) / 200.0).sqrt();
            assert!(
                (small.g_hat[i] - large.g_hat[i]).abs() <= 6.0 * pooled + 1e-12,
                "k = {}: {} vs {}",
                i + 1,
                small.g_hat[i],
                large.g_hat[i]
            );
        }
    }

    #[test]
    fn rejects_bad_k_max() {
        let x = generate_block_design(&BlockDesignSpec::uniform(10, 2, 2, 0.2, 1)).unwrap();
        let opts = GapOptions { replicates: 2, k_max: Some(4), ..Default::default() };
        assert!(estimate_clusters(&x, &opts).is_err());
    }
}
