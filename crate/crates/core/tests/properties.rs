use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use protolasso::cluster::{adjusted_rand_index, correlation_dissimilarity, hclust, Clustering, Dissimilarity, Linkage};
use protolasso::dataset::{generate_block_design, least_squares_sigma, standardize, BlockDesignSpec};
use protolasso::gapstat::{estimate_clusters, GapOptions};
use protolasso::knockoff::{knockoff_stage, knockoff_statistics, make_knockoffs};
use protolasso::lasso::{entry_values, fit_lasso, lambda_max, lasso_constraints, DEFAULT_TOL};
use protolasso::linalg::{orthonormal_basis, select_columns};
use protolasso::polyhedra::{truncation_bounds, TruncatedNormal};
use protolasso::proto::{extract_prototypes, screening_constraints, ConstraintTag, Polyhedron};
use protolasso::prototest::bh_procedure;
use protolasso::rng::rng_from;

fn gaussian_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from(seed, &[0]);
    DMatrix::from_fn(n, p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    })
}

fn gaussian_vector(n: usize, seed: u64) -> DVector<f64> {
    gaussian_matrix(n, 1, seed).column(0).into_owned()
}

fn block_design(n: usize, sizes: Vec<usize>, rho: f64, seed: u64) -> (DMatrix<f64>, Clustering) {
    let spec = BlockDesignSpec { n, block_sizes: sizes, rho, seed };
    (generate_block_design(&spec).unwrap(), Clustering::from_labels(&spec.block_labels()))
}

fn permute_dissimilarity(d: &Dissimilarity, perm: &[usize]) -> Dissimilarity {
    let m = d.matrix();
    Dissimilarity::new(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], perm[j])])).unwrap()
}

fn permutation(p: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..p).collect();
    v.shuffle(&mut rng_from(seed, &[7]));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn standardize_is_idempotent(seed in any::<u64>(), n in 3usize..30, p in 1usize..8) {
        let once = standardize(&(gaussian_matrix(n, p, seed) * 3.0).add_scalar(2.0)).unwrap();
        let twice = standardize(&once).unwrap();
        prop_assert!((once - twice).amax() < 1e-12);
    }

    #[test]
    fn least_squares_sigma_ignores_column_order(seed in any::<u64>(), p in 1usize..6) {
        let x = gaussian_matrix(20, p, seed);
        let y = gaussian_vector(20, seed ^ 1);
        let perm = permutation(p, seed);
        let xp = select_columns(&x, &perm);
        let (a, b) = (least_squares_sigma(&x, &y).unwrap(), least_squares_sigma(&xp, &y).unwrap());
        prop_assert!((a - b).abs() < 1e-10 * a.max(1.0));
    }

    #[test]
    fn block_dissimilarity_is_smaller_within_blocks(seed in any::<u64>(), rho in 0.3f64..0.9) {
        let (x, c) = block_design(60, vec![5, 5, 5], rho, seed);
        let d = correlation_dissimilarity(&x).unwrap();
        let (mut within, mut across) = (Vec::new(), Vec::new());
        for i in 0..15 {
            for j in i + 1..15 {
                if c.label(i) == c.label(j) { within.push(d.get(i, j)) } else { across.push(d.get(i, j)) }
            }
        }
        prop_assert!(protolasso::stats::median(&within) < protolasso::stats::median(&across));
    }

    #[test]
    fn hclust_is_permutation_equivariant(seed in any::<u64>(), k in 1usize..8, linkage in prop_oneof![
        Just(Linkage::Complete), Just(Linkage::Single), Just(Linkage::Average)
    ]) {
        let d = correlation_dissimilarity(&gaussian_matrix(12, 8, seed)).unwrap();
        let perm = permutation(8, seed);
        let original = hclust(&d, linkage).cut(k).unwrap();
        let permuted = hclust(&permute_dissimilarity(&d, &perm), linkage).cut(k).unwrap();
        // feature i of the permuted problem is feature perm[i] of the original
        let back: Vec<usize> = (0..8).map(|i| original.label(perm[i])).collect();
        let ari = adjusted_rand_index(&Clustering::from_labels(&back), &permuted).unwrap();
        prop_assert!((ari - 1.0).abs() < 1e-12 || k == 1);
    }

    #[test]
    fn cuts_are_nested(seed in any::<u64>()) {
        let den = hclust(&correlation_dissimilarity(&gaussian_matrix(15, 9, seed)).unwrap(), Linkage::Complete);
        for k in 2..=9 {
            let (fine, coarse) = (den.cut(k).unwrap(), den.cut(k - 1).unwrap());
            for i in 0..9 {
                for j in 0..9 {
                    if fine.label(i) == fine.label(j) {
                        prop_assert_eq!(coarse.label(i), coarse.label(j));
                    }
                }
            }
        }
    }

    #[test]
    fn ari_is_symmetric(a in prop::collection::vec(0usize..4, 10), b in prop::collection::vec(0usize..5, 10)) {
        let (ca, cb) = (Clustering::from_labels(&a), Clustering::from_labels(&b));
        let (x, y) = (adjusted_rand_index(&ca, &cb).unwrap(), adjusted_rand_index(&cb, &ca).unwrap());
        prop_assert!((x - y).abs() < 1e-12 || (x.is_nan() && y.is_nan()));
    }

    #[test]
    fn gap_differences_telescope_and_repeat(seed in any::<u64>()) {
        let (x, _) = block_design(20, vec![3, 3, 3], 0.6, seed);
        let opts = GapOptions { replicates: 8, seed, ..Default::default() };
        let curve = estimate_clusters(&x, &opts).unwrap();
        prop_assert_eq!(&curve, &estimate_clusters(&x, &opts).unwrap());
        let m = curve.ks.len();
        let sum: f64 = curve.d_hat.iter().flatten().sum();
        prop_assert!((sum - (curve.g_hat[m - 1] - curve.g_hat[0])).abs() < 1e-12);
    }

    #[test]
    fn observed_response_satisfies_screening_event(seed in any::<u64>()) {
        let (x, c) = block_design(15, vec![3, 4, 2], 0.5, seed);
        let y = gaussian_vector(15, seed ^ 3);
        let protos = extract_prototypes(&x, &y, &c).unwrap();
        let poly = screening_constraints(&x, &y, &c, &protos).unwrap();
        prop_assert!(poly.contains(&y, 1e-10));
    }

    #[test]
    fn screening_membership_matches_reselection(seed in any::<u64>(), scale in 0.05f64..2.0) {
        let (x, c) = block_design(10, vec![3, 3], 0.4, seed);
        let y = gaussian_vector(10, seed ^ 5);
        let protos = extract_prototypes(&x, &y, &c).unwrap();
        let poly = screening_constraints(&x, &y, &c, &protos).unwrap();
        let y2 = &y + gaussian_vector(10, seed ^ 9) * scale;
        let slack = poly.slack(&y2);
        prop_assume!(slack.iter().all(|s| s.abs() > 1e-9));
        let member = slack.iter().all(|&s| s > 0.0);
        prop_assert_eq!(member, extract_prototypes(&x, &y2, &c).unwrap() == protos);
    }

    #[test]
    fn positive_scaling_keeps_prototypes(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (x, cl) = block_design(12, vec![4, 4, 4], 0.5, seed);
        let y = gaussian_vector(12, seed ^ 11);
        prop_assert_eq!(extract_prototypes(&x, &y, &cl).unwrap(), extract_prototypes(&x, &(&y * c), &cl).unwrap());
    }

    #[test]
    fn lasso_fits_are_certified_and_feasible(seed in any::<u64>(), frac in 0.05f64..0.95) {
        let x = standardize(&gaussian_matrix(20, 6, seed)).unwrap();
        let y = &x.column(0) * 2.0 + gaussian_vector(20, seed ^ 13);
        let lambda = frac * lambda_max(&x, &y);
        let fit = fit_lasso(&x, &y, lambda, DEFAULT_TOL).unwrap();
        prop_assert!(fit.kkt_residual(&x, &y) <= DEFAULT_TOL);
        prop_assume!(!fit.active.is_empty());
        let poly = lasso_constraints(&x, &fit.active, &fit.signs, lambda).unwrap();
        prop_assert!(poly.contains(&y, 1e-6));
    }

    #[test]
    fn entry_values_scale_with_response(seed in any::<u64>(), c in 0.1f64..10.0) {
        let x = standardize(&gaussian_matrix(25, 5, seed)).unwrap();
        let y = &x.column(1) + gaussian_vector(25, seed ^ 17);
        let (a, b) = (entry_values(&x, &y, 100).unwrap(), entry_values(&x, &(&y * c), 100).unwrap());
        prop_assert!((&a.z * c - &b.z).amax() < 1e-9 * (1.0 + b.z.amax()));
    }

    #[test]
    fn truncated_cdf_is_monotone(mu in -3.0f64..3.0, sd in 0.2f64..3.0, a in -4.0f64..0.0, w in 0.5f64..5.0, t in 0.05f64..0.95) {
        let b = a + w;
        let x = a + t * w;
        let h = 1e-3 * w;
        let tn = TruncatedNormal::new(mu, sd, a, b).unwrap();
        prop_assert!(tn.cdf(x + h) > tn.cdf(x));
        let shifted = TruncatedNormal::new(mu + 0.05, sd, a, b).unwrap();
        prop_assert!(shifted.cdf(x) < tn.cdf(x));
    }

    #[test]
    fn truncation_bounds_ignore_row_scaling(seed in any::<u64>(), scales in prop::collection::vec(0.01f64..100.0, 6)) {
        let a = gaussian_matrix(6, 5, seed);
        let y = gaussian_vector(5, seed ^ 19);
        let b = &a * &y + DVector::from_element(6, 0.5);
        let eta = gaussian_vector(5, seed ^ 23);
        let poly = Polyhedron { a: a.clone(), b: b.clone(), tags: vec![ConstraintTag::Screening; 6] };
        let scaled = Polyhedron {
            a: DMatrix::from_fn(6, 5, |i, j| a[(i, j)] * scales[i]),
            b: DVector::from_fn(6, |i, _| b[i] * scales[i]),
            tags: vec![ConstraintTag::Screening; 6],
        };
        let (u, v) = (truncation_bounds(&poly, &eta, &y).unwrap(), truncation_bounds(&scaled, &eta, &y).unwrap());
        let close = |p: f64, q: f64| (p == q) || (p - q).abs() < 1e-9 * (1.0 + p.abs());
        prop_assert!(close(u.v_minus, v.v_minus) && close(u.v_plus, v.v_plus));
        let stat = eta.dot(&y);
        prop_assert!(u.v_minus < stat && stat < u.v_plus);
    }

    #[test]
    fn bh_rejections_grow_with_level(p in prop::collection::vec(0.0f64..1.0, 1..30), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let pv: Vec<Option<f64>> = p.into_iter().map(Some).collect();
        let (small, large) = (bh_procedure(&pv, lo), bh_procedure(&pv, hi));
        prop_assert!(small.iter().all(|k| large.contains(k)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn knockoffs_keep_gram_identities(seed in any::<u64>(), n in 9usize..40) {
        let x = standardize(&gaussian_matrix(n, 4, seed)).unwrap();
        let k = make_knockoffs(&x).unwrap();
        prop_assert!(k.gram_residual <= 1e-8 && k.cross_residual <= 1e-8);
    }

    #[test]
    fn swapping_original_and_knockoff_flips_w(seed in any::<u64>()) {
        let x = standardize(&gaussian_matrix(30, 5, seed)).unwrap();
        let k = make_knockoffs(&x).unwrap();
        let mut y = gaussian_vector(x.nrows(), seed ^ 29);
        y.add_scalar_mut(-y.mean());
        let rows = k.x_augmented.nrows();
        let y = DVector::from_fn(rows, |i, _| if i < y.len() { y[i] } else { 0.0 });
        let w = knockoff_statistics(&k.x_augmented, &k.x_tilde, &y).unwrap();
        for j in 0..5 {
            let (mut xs, mut xt) = (k.x_augmented.clone(), k.x_tilde.clone());
            xs.set_column(j, &k.x_tilde.column(j));
            xt.set_column(j, &k.x_augmented.column(j));
            let ws = knockoff_statistics(&xs, &xt, &y).unwrap();
            prop_assert!((ws[j] + w[j]).abs() < 1e-9 * (1.0 + w[j].abs()));
            for i in (0..5).filter(|&i| i != j) {
                prop_assert!((ws[i] - w[i]).abs() < 1e-9 * (1.0 + w[i].abs()));
            }
        }
    }

    #[test]
    fn w_depends_only_on_gram_summaries(seed in any::<u64>()) {
        let x = standardize(&gaussian_matrix(30, 4, seed)).unwrap();
        let k = make_knockoffs(&x).unwrap();
        let rows = k.x_augmented.nrows();
        let y = gaussian_vector(rows, seed ^ 31);
        let q = orthonormal_basis(&gaussian_matrix(rows, rows, seed ^ 37)).unwrap();
        let w = knockoff_statistics(&k.x_augmented, &k.x_tilde, &y).unwrap();
        let wr = knockoff_statistics(&(&q * &k.x_augmented), &(&q * &k.x_tilde), &(&q * &y)).unwrap();
        prop_assert!((w - wr).amax() < 1e-8);
    }

    #[test]
    fn second_half_response_does_not_move_prototypes(seed in any::<u64>()) {
        let (x1, c) = block_design(30, vec![3, 3, 2], 0.5, seed);
        let (x2, _) = block_design(30, vec![3, 3, 2], 0.5, seed ^ 41);
        let y1 = gaussian_vector(30, seed ^ 43);
        let y2 = gaussian_vector(30, seed ^ 47);
        let perm = permutation(30, seed);
        let y2p = DVector::from_fn(30, |i, _| y2[perm[i]]);
        let a = knockoff_stage(&x1, &y1, &x2, &y2, &c, 0.2).unwrap();
        let b = knockoff_stage(&x1, &y1, &x2, &y2p, &c, 0.2).unwrap();
        prop_assert_eq!(a.prototypes, b.prototypes);
    }
}
