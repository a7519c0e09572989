//! Simulation harness: synthetic designs, the three-way comparison of
//! protolasso against size-matched lasso and marginal screening, and the
//! named experiment suites.

mod designs;
mod suites;

pub use designs::{BetaConfig, ClusterRule, Design};
pub use suites::{
    fig3_study, gap_study, knockoff_study, prototest_study, ComparisonGrid, Fig3Config, Fig3Study, GapStudy,
    GapStudyConfig, KnockoffStudy, KnockoffStudyConfig, PrototestConfig, PrototestStudy, Suite, SuiteOutput,
};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::dataset::generate_response;
use crate::error::{Error, Result};
use crate::lasso::{lambda_for_size, lasso_constraints};
use crate::pipeline::{run_protolasso, LambdaRule, ProtolassoOptions, ProtolassoResult};
use crate::polyhedra::{infer_contrast, prototype_contrast};
use crate::proto::{top_m_screening, Polyhedron};
use crate::rng::derive_seed;
use crate::stats::{mean, median};

/// Selected prototypes together with every member of their clusters, ascending.
pub fn entertained_set(result: &ProtolassoResult, clustering: &Clustering) -> Vec<usize> {
    let mut out: Vec<usize> = result.selected_clusters.iter().flat_map(|&k| clustering.members(k)).collect();
    out.sort_unstable();
    out
}

/// `|S₀ ∩ Ŝ| / |S₀|`.
pub fn entertained_proportion(s0: &[usize], s_hat: &[usize]) -> Result<f64> {
    if s0.is_empty() {
        return Err(Error::InvalidInput("entertained proportion needs a nonempty true support".into()));
    }
    Ok(s0.iter().filter(|j| s_hat.contains(j)).count() as f64 / s0.len() as f64)
}

/// A plain CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn default_sigma() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.05
}

/// One cell of the method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: Design,
    pub beta_config: BetaConfig,
    pub beta_star: f64,
    pub rho: f64,
    pub n: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub clusters: ClusterRule,
    /// Number of prototypes the second-stage lasso is tuned to select.
    pub k_selected: usize,
    pub reps: usize,
    /// Seed for the design matrix, which is drawn once.
    pub design_seed: u64,
    /// Seed for the response replications.
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

/// One row of aggregated metrics; absent entries do not apply to the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub rho: f64,
    pub beta_star: f64,
    pub clusters_extracted: usize,
    pub clusters_selected: usize,
    pub reps_used: usize,
    pub reps_skipped: usize,
    pub ep_vs_lasso: Option<f64>,
    pub ep_vs_marginal: Option<f64>,
    pub width_ratio_vs_lasso: Option<f64>,
    pub width_ratio_vs_marginal: Option<f64>,
    pub coverage: Option<f64>,
    pub ks_distance: Option<f64>,
    pub fdr: Option<f64>,
    pub power: Option<f64>,
}

pub type MetricsTable = Vec<MetricsRow>;

pub fn metrics_table(rows: &[MetricsRow]) -> Table {
    let mut t = Table::new(
        "metrics",
        &[
            "label",
            "rho",
            "beta_star",
            "clusters_extracted",
            "clusters_selected",
            "reps_used",
            "reps_skipped",
            "ep_vs_lasso",
            "ep_vs_marginal",
            "width_ratio_vs_lasso",
            "width_ratio_vs_marginal",
            "coverage",
            "ks_distance",
            "fdr",
            "power",
        ],
    );
    for r in rows {
        t.push(vec![
            r.label.clone(),
            r.rho.to_string(),
            r.beta_star.to_string(),
            r.clusters_extracted.to_string(),
            r.clusters_selected.to_string(),
            r.reps_used.to_string(),
            r.reps_skipped.to_string(),
            cell(r.ep_vs_lasso),
            cell(r.ep_vs_marginal),
            cell(r.width_ratio_vs_lasso),
            cell(r.width_ratio_vs_marginal),
            cell(r.coverage),
            cell(r.ks_distance),
            cell(r.fdr),
            cell(r.power),
        ]);
    }
    t
}

/// Per-replication outcome of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReplicate {
    pub ep_protolasso: f64,
    pub ep_lasso: f64,
    pub ep_marginal: f64,
    /// Median finite interval width per method, if any interval was finite.
    pub mw_protolasso: Option<f64>,
    pub mw_lasso: Option<f64>,
    pub mw_marginal: Option<f64>,
    pub entertained: usize,
    pub covered: usize,
    pub intervals: usize,
}

/// Numerical trouble or an unattainable size match skips a replication.
fn skippable(e: &Error) -> bool {
    matches!(e, Error::SizeMatch { .. }) || e.is_numerical()
}

fn median_width(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    poly: &Polyhedron,
    model: &[usize],
    sigma: f64,
    alpha: f64,
) -> Result<Option<f64>> {
    let mut widths = Vec::with_capacity(model.len());
    for &j in model {
        let c = match prototype_contrast(x, model, j) {
            Ok(c) => c,
            Err(Error::RankDeficient(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if let (_, _, Some((lo, hi)), _) = infer_contrast(poly, &c, y, sigma, alpha)? {
            widths.push(hi - lo);
        }
    }
    Ok((!widths.is_empty()).then(|| median(&widths)))
}

/// One replication of the three-way comparison; `Ok(None)` means skipped.
pub fn comparison_replicate(
    x: &DMatrix<f64>,
    clustering: &Clustering,
    beta: &DVector<f64>,
    cfg: &ExperimentConfig,
    rep: usize,
) -> Result<Option<ComparisonReplicate>> {
    let run = || -> Result<ComparisonReplicate> {
        let s0: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        let y = generate_response(x, beta, cfg.sigma, derive_seed(cfg.seed, &[rep as u64]))?;
        let mu = x * beta;
        let opts = ProtolassoOptions { lambda: LambdaRule::TargetSize(cfg.k_selected), alpha: cfg.alpha, swap_ins: false };
        let pl = run_protolasso(x, &y, clustering, cfg.sigma, None, &opts)?;
        let s_pl = entertained_set(&pl, clustering);
        let size = s_pl.len();

        let lasso = lambda_for_size(x, &y, size)?;
        let lasso_poly = lasso_constraints(x, &lasso.active, &lasso.signs, lasso.lambda)?;
        let (ms, ms_poly) = top_m_screening(x, &y, size)?;
        let mut ms_set = ms.prototypes.clone();
        ms_set.sort_unstable();
        assert_eq!(lasso.active.len(), size, "lasso comparator not size-matched");
        assert_eq!(ms_set.len(), size, "marginal comparator not size-matched");

        let widths_pl: Vec<f64> = pl
            .prototype_records()
            .filter_map(|r| Some(r.ci_high? - r.ci_low?))
            .collect();
        let (mut covered, mut intervals) = (0, 0);
        for r in pl.prototype_records() {
            if let (Some(lo), Some(hi)) = (r.ci_low, r.ci_high) {
                let target = prototype_contrast(x, &pl.selected, r.feature)?.eta.dot(&mu);
                intervals += 1;
                covered += usize::from(lo <= target && target <= hi);
            }
        }
        let (ep_protolasso, ep_lasso, ep_marginal) = if s0.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                entertained_proportion(&s0, &s_pl)?,
                entertained_proportion(&s0, &lasso.active)?,
                entertained_proportion(&s0, &ms_set)?,
            )
        };
        Ok(ComparisonReplicate {
            ep_protolasso,
            ep_lasso,
            ep_marginal,
            mw_protolasso: (!widths_pl.is_empty()).then(|| median(&widths_pl)),
            mw_lasso: median_width(x, &y, &lasso_poly, &lasso.active, cfg.sigma, cfg.alpha)?,
            mw_marginal: median_width(x, &y, &ms_poly, &ms.prototypes, cfg.sigma, cfg.alpha)?,
            entertained: size,
            covered,
            intervals,
        })
    };
    match run() {
        Ok(r) => Ok(Some(r)),
        Err(e) if skippable(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

fn width_ratio(other: &[f64], pl: &[f64]) -> Option<f64> {
    if other.is_empty() || pl.is_empty() {
        return None;
    }
    let (a, b) = (median(other), median(pl));
    Some(a / (a + b))
}

/// Runs `cfg.reps` replications in parallel and aggregates them.
pub fn comparison_run(cfg: &ExperimentConfig) -> Result<MetricsRow> {
    let x = cfg.design.generate(cfg.n, cfg.rho, cfg.design_seed)?;
    let clustering = cfg.clusters.resolve(&x, &cfg.design.truth(), derive_seed(cfg.design_seed, &[0x6A9]))?;
    let beta = cfg.beta_config.beta(x.ncols(), cfg.beta_star)?;
    let reps: Vec<Option<ComparisonReplicate>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| comparison_replicate(&x, &clustering, &beta, cfg, rep))
        .collect::<Result<_>>()?;
    Ok(aggregate(cfg, clustering.k(), &reps))
}

pub(crate) fn aggregate(cfg: &ExperimentConfig, k: usize, reps: &[Option<ComparisonReplicate>]) -> MetricsRow {
    let done: Vec<&ComparisonReplicate> = reps.iter().flatten().collect();
    let collect = |f: fn(&ComparisonReplicate) -> Option<f64>| -> Vec<f64> { done.iter().filter_map(|r| f(r)).collect() };
    let mw_pl = collect(|r| r.mw_protolasso);
    let mw_lasso = collect(|r| r.mw_lasso);
    let mw_ms = collect(|r| r.mw_marginal);
    let (covered, intervals) = done.iter().fold((0, 0), |(c, t), r| (c + r.covered, t + r.intervals));
    let has_signal = !cfg.beta_config.support().is_empty() && cfg.beta_star != 0.0;
    let ep = |f: fn(&ComparisonReplicate) -> f64| -> Option<f64> {
        (has_signal && !done.is_empty()).then(|| mean(&done.iter().map(|r| f(r)).collect::<Vec<_>>()))
    };
    MetricsRow {
        label: format!("{:?}/{:?}", cfg.design, cfg.beta_config),
        rho: cfg.rho,
        beta_star: cfg.beta_star,
        clusters_extracted: k,
        clusters_selected: cfg.k_selected,
        reps_used: done.len(),
        reps_skipped: reps.len() - done.len(),
        ep_vs_lasso: ep(|r| r.ep_protolasso - r.ep_lasso),
        ep_vs_marginal: ep(|r| r.ep_protolasso - r.ep_marginal),
        width_ratio_vs_lasso: width_ratio(&mw_lasso, &mw_pl),
        width_ratio_vs_marginal: width_ratio(&mw_ms, &mw_pl),
        coverage: (intervals > 0).then(|| covered as f64 / intervals as f64),
        ..Default::default()
    }
}
