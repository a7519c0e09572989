//! The protolasso procedure: prototypes per cluster, a lasso on the
//! prototypes, and selective inference conditional on both steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::error::{Error, Result};
use crate::lasso::{cv_lambda, fit_lasso, lambda_for_size, lambda_max, lasso_constraints, LassoFit, DEFAULT_TOL};
use crate::linalg::select_columns;
use crate::polyhedra::{infer_contrast, prototype_contrast, swap_contrast, Contrast, InferenceRecord, InferenceReport, Role};
use crate::proto::{extract_prototypes, screening_constraints, Polyhedron, PrototypeSet};

/// How the second-stage regularization is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed(f64),
    /// Cross-validation on the prototype columns. The resulting λ depends on
    /// `y`, which the selection event does not account for.
    Cv { folds: usize, seed: u64 },
    /// Bisection until this many prototypes are active.
    TargetSize(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtolassoOptions {
    pub lambda: LambdaRule,
    pub alpha: f64,
    /// Also report swap-in inference for cluster-mates of selected prototypes.
    pub swap_ins: bool,
}

impl Default for ProtolassoOptions {
    fn default() -> Self {
        Self { lambda: LambdaRule::Cv { folds: 10, seed: 0 }, alpha: 0.05, swap_ins: true }
    }
}

#[derive(Debug, Clone)]
pub struct ProtolassoResult {
    pub prototypes: PrototypeSet,
    /// Fit on the prototype columns, indexed by cluster.
    pub fit: LassoFit,
    /// Feature indices of the selected prototypes, in cluster order.
    pub selected: Vec<usize>,
    pub selected_clusters: Vec<usize>,
    pub polyhedron: Polyhedron,
    pub report: InferenceReport,
}

impl ProtolassoResult {
    pub fn prototype_records(&self) -> impl Iterator<Item = &InferenceRecord> {
        self.report.records.iter().filter(|r| r.role == Role::Prototype)
    }

    pub fn swap_records(&self) -> impl Iterator<Item = &InferenceRecord> {
        self.report.records.iter().filter(|r| r.role == Role::SwapIn)
    }
}

fn resolve_lambda(xp: &DMatrix<f64>, y: &DVector<f64>, rule: LambdaRule) -> Result<LassoFit> {
    match rule {
        LambdaRule::Fixed(lam) => fit_lasso(xp, y, lam, DEFAULT_TOL),
        LambdaRule::Cv { folds, seed } => fit_lasso(xp, y, cv_lambda(xp, y, folds, seed, 100)?, DEFAULT_TOL),
        LambdaRule::TargetSize(k) => lambda_for_size(xp, y, k),
    }
}

fn feature_name(names: Option<&[String]>, j: usize) -> String {
    names.and_then(|n| n.get(j).cloned()).unwrap_or_else(|| format!("x{}", j + 1))
}

/// Runs the full procedure on a standardized design with known noise level.
pub fn run_protolasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clustering: &Clustering,
    sigma: f64,
    names: Option<&[String]>,
    opts: &ProtolassoOptions,
) -> Result<ProtolassoResult> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    let prototypes = extract_prototypes(x, y, clustering)?;
    let screening = screening_constraints(x, y, clustering, &prototypes)?;
    let xp = select_columns(x, &prototypes.prototypes);
    let fit = if lambda_max(&xp, y) == 0.0 {
        return Err(Error::InvalidInput("response is orthogonal to every prototype".into()));
    } else {
        resolve_lambda(&xp, y, opts.lambda)?
    };
    let lasso = lasso_constraints(&xp, &fit.active, &fit.signs, fit.lambda)?;
    let polyhedron = Polyhedron::stack(&[&screening, &lasso])?;
    let selected: Vec<usize> = fit.active.iter().map(|&k| prototypes.prototypes[k]).collect();
    let selected_clusters = fit.active.clone();

    let mut records = Vec::new();
    let clusters = clustering.clusters();
    for (&k, &proto) in selected_clusters.iter().zip(&selected) {
        let contrast = prototype_contrast(x, &selected, proto)?;
        records.push(record(&polyhedron, &contrast, y, sigma, opts.alpha, proto, proto, k, Role::Prototype, names)?);
        if !opts.swap_ins {
            continue;
        }
        for &j in clusters[k].iter().filter(|&&j| j != proto) {
            let rec = match swap_contrast(x, &selected, proto, j) {
                Ok(c) => record(&polyhedron, &c, y, sigma, opts.alpha, j, proto, k, Role::SwapIn, names)?,
                Err(e @ Error::RankDeficient(_)) => InferenceRecord {
                    feature: j,
                    name: feature_name(names, j),
                    role: Role::SwapIn,
                    cluster: k,
                    prototype: proto,
                    prototype_name: feature_name(names, proto),
                    estimate: f64::NAN,
                    p_value: None,
                    ci_low: None,
                    ci_high: None,
                    v_minus: f64::NAN,
                    v_plus: f64::NAN,
                    target: String::new(),
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            records.push(rec);
        }
    }
    let report = InferenceReport { alpha: opts.alpha, sigma, lambda: fit.lambda, records };
    Ok(ProtolassoResult { prototypes, fit, selected, selected_clusters, polyhedron, report })
}

#[allow(clippy::too_many_arguments)]
fn record(
    poly: &Polyhedron,
    contrast: &Contrast,
    y: &DVector<f64>,
    sigma: f64,
    alpha: f64,
    feature: usize,
    prototype: usize,
    cluster: usize,
    role: Role,
    names: Option<&[String]>,
) -> Result<InferenceRecord> {
    let (pivot, p, ci, failure) = infer_contrast(poly, contrast, y, sigma, alpha)?;
    Ok(InferenceRecord {
        feature,
        name: feature_name(names, feature),
        role,
        cluster,
        prototype,
        prototype_name: feature_name(names, prototype),
        estimate: pivot.statistic,
        p_value: p,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
        v_minus: pivot.bounds.v_minus,
        v_plus: pivot.bounds.v_plus,
        target: contrast.target.clone(),
        failure,
    })
}

/// Whether `y` reproduces the same prototypes, active set and signs.
pub fn same_selection(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clustering: &Clustering,
    lambda: f64,
    prototypes: &PrototypeSet,
    fit: &LassoFit,
) -> Result<bool> {
    let p = extract_prototypes(x, y, clustering)?;
    if p != *prototypes {
        return Ok(false);
    }
    let refit = fit_lasso(&select_columns(x, &p.prototypes), y, lambda, DEFAULT_TOL)?;
    Ok(refit.active == fit.active && refit.signs == fit.signs)
}
