use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{aggregate, cell, comparison_replicate, metrics_table, BetaConfig, ClusterRule, Design, ExperimentConfig, MetricsRow, Table};
use crate::cluster::{adjusted_rand_index, correlation_dissimilarity, hclust, Clustering, Linkage};
use crate::dataset::generate_response;
use crate::error::{Error, Result};
use crate::gapstat::{estimate_clusters, GapCurve, GapOptions};
use crate::knockoff::{fdp_power, make_knockoffs, knockoff_filter};
use crate::pipeline::{run_protolasso, LambdaRule, ProtolassoOptions};
use crate::polyhedra::prototype_contrast;
use crate::proto::extract_prototypes;
use crate::prototest::{bh_procedure, run_prototest, signal_clusters};
use crate::rng::derive_seed;
use crate::stats::{ecdf_at, ks_uniform, mean, median};

fn qq_rows(table: &mut Table, regime: &str, role: &str, values: &[f64]) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    for (i, p) in v.iter().enumerate() {
        table.push(vec![
            regime.into(),
            role.into(),
            (i + 1).to_string(),
            p.to_string(),
            ((i as f64 + 0.5) / m).to_string(),
        ]);
    }
}

fn qq_table() -> Table {
    Table::new("qq", &["regime", "role", "rank", "p_value", "uniform_quantile"])
}

fn ks_or_none(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| ks_uniform(v))
}

// ---------------------------------------------------------------------------
// selective p-values of the protolasso, null and signal regimes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fig3Config {
    pub design: Design,
    pub n: usize,
    pub rho: f64,
    pub beta_config: BetaConfig,
    pub beta_star: f64,
    pub sigma: f64,
    pub clusters: ClusterRule,
    pub lambda: LambdaRule,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            design: Design::BlockDiagonal { blocks: 10, size: 10 },
            n: 50,
            rho: 0.5,
            beta_config: BetaConfig::Three,
            beta_star: 2.0,
            sigma: 1.0,
            clusters: ClusterRule::Gap { replicates: 100, linkage: Linkage::Complete },
            lambda: LambdaRule::Fixed(50f64.sqrt()),
            alpha: 0.05,
            reps: 100,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fig3Study {
    pub clusters: usize,
    /// Prototype and swap-in p-values with `β = 0`.
    pub null_prototype: Vec<f64>,
    pub null_swap: Vec<f64>,
    /// Prototypes of clusters containing signal, under the signal regime.
    pub signal_prototype: Vec<f64>,
    /// Prototypes of signal-free clusters, under the signal regime.
    pub signal_null_prototype: Vec<f64>,
    pub signal_swap: Vec<f64>,
    /// Prototype intervals covering `(X_Mᵀ)⁺μ`, signal regime.
    pub covered: usize,
    pub intervals: usize,
    /// Records without a p-value.
    pub failures: usize,
    /// Duality `p < α ⇔ 0 ∉ CI` violations over all records.
    pub duality_violations: usize,
}

impl Fig3Study {
    pub fn coverage(&self) -> Option<f64> {
        (self.intervals > 0).then(|| self.covered as f64 / self.intervals as f64)
    }

    fn merge(mut self, o: Fig3Study) -> Self {
        self.null_prototype.extend(o.null_prototype);
        self.null_swap.extend(o.null_swap);
        self.signal_prototype.extend(o.signal_prototype);
        self.signal_null_prototype.extend(o.signal_null_prototype);
        self.signal_swap.extend(o.signal_swap);
        self.covered += o.covered;
        self.intervals += o.intervals;
        self.failures += o.failures;
        self.duality_violations += o.duality_violations;
        self
    }
}

/// Each replication draws one noise vector and analyses both `y = ε` and
/// `y = Xβ + ε`.
pub fn fig3_study(cfg: &Fig3Config) -> Result<Fig3Study> {
    let x = cfg.design.generate(cfg.n, cfg.rho, derive_seed(cfg.seed, &[0xD5]))?;
    let clustering = cfg.clusters.resolve(&x, &cfg.design.truth(), derive_seed(cfg.seed, &[0x6A9]))?;
    let beta = cfg.beta_config.beta(x.ncols(), cfg.beta_star)?;
    let mu = &x * &beta;
    let signal = signal_clusters(&clustering, &beta);
    let opts = ProtolassoOptions { lambda: cfg.lambda, alpha: cfg.alpha, swap_ins: true };
    let parts: Vec<Fig3Study> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| -> Result<Fig3Study> {
            let eps = generate_response(&x, &beta.scale(0.0), cfg.sigma, derive_seed(cfg.seed, &[1, rep as u64]))?;
            let mut out = Fig3Study::default();
            for (null, y) in [(true, eps.clone()), (false, &eps + &mu)] {
                let res = run_protolasso(&x, &y, &clustering, cfg.sigma, None, &opts)?;
                for r in &res.report.records {
                    let Some(p) = r.p_value else {
                        out.failures += 1;
                        continue;
                    };
                    if let (Some(lo), Some(hi)) = (r.ci_low, r.ci_high) {
                        if (p < cfg.alpha) == (lo <= 0.0 && 0.0 <= hi) {
                            out.duality_violations += 1;
                        }
                    }
                    let proto = r.role == crate::polyhedra::Role::Prototype;
                    match (null, proto) {
                        (true, true) => out.null_prototype.push(p),
                        (true, false) => out.null_swap.push(p),
                        (false, false) => out.signal_swap.push(p),
                        (false, true) => {
                            if signal.contains(&r.cluster) {
                                out.signal_prototype.push(p);
                            } else {
                                out.signal_null_prototype.push(p);
                            }
                            if let (Some(lo), Some(hi)) = (r.ci_low, r.ci_high) {
                                let target = prototype_contrast(&x, &res.selected, r.feature)?.eta.dot(&mu);
                                out.intervals += 1;
                                out.covered += usize::from(lo <= target && target <= hi);
                            }
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut study = parts.into_iter().fold(Fig3Study::default(), Fig3Study::merge);
    study.clusters = clustering.k();
    Ok(study)
}

// ---------------------------------------------------------------------------
// entertained proportion and interval width heatmaps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonGrid {
    pub design: Design,
    pub beta_config: BetaConfig,
    pub beta_star: f64,
    pub rhos: Vec<f64>,
    pub clusters_extracted: Vec<usize>,
    pub clusters_selected: Vec<usize>,
    pub n: usize,
    pub sigma: f64,
    pub linkage: Linkage,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for ComparisonGrid {
    fn default() -> Self {
        Self {
            design: Design::BlockDiagonal { blocks: 10, size: 10 },
            beta_config: BetaConfig::Paired,
            beta_star: 0.2,
            rhos: vec![0.1, 0.4, 0.7],
            clusters_extracted: (8..=12).collect(),
            clusters_selected: (1..=7).collect(),
            n: 50,
            sigma: 1.0,
            linkage: Linkage::Complete,
            alpha: 0.05,
            reps: 100,
            seed: 1,
        }
    }
}

impl ComparisonGrid {
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for (ri, &rho) in self.rhos.iter().enumerate() {
            for &k in &self.clusters_extracted {
                for &m in &self.clusters_selected {
                    out.push(ExperimentConfig {
                        design: self.design.clone(),
                        beta_config: self.beta_config.clone(),
                        beta_star: self.beta_star,
                        rho,
                        n: self.n,
                        sigma: self.sigma,
                        clusters: ClusterRule::Cut { k, linkage: self.linkage },
                        k_selected: m,
                        reps: self.reps,
                        design_seed: derive_seed(self.seed, &[ri as u64]),
                        seed: derive_seed(self.seed, &[ri as u64, k as u64, m as u64]),
                        alpha: self.alpha,
                    });
                }
            }
        }
        out
    }

    /// All cells, replications flattened into one parallel pass.
    pub fn run(&self) -> Result<Vec<MetricsRow>> {
        let cells = self.cells();
        let mut designs = Vec::with_capacity(cells.len());
        for c in &cells {
            let x = c.design.generate(c.n, c.rho, c.design_seed)?;
            let clustering = c.clusters.resolve(&x, &c.design.truth(), 0)?;
            let beta = c.beta_config.beta(x.ncols(), c.beta_star)?;
            designs.push((x, clustering, beta));
        }
        let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|i| (0..self.reps).map(move |r| (i, r))).collect();
        let results: Vec<_> = jobs
            .par_iter()
            .map(|&(i, r)| comparison_replicate(&designs[i].0, &designs[i].1, &designs[i].2, &cells[i], r))
            .collect::<Result<_>>()?;
        Ok(cells
            .iter()
            .enumerate()
            .map(|(i, c)| aggregate(c, designs[i].1.k(), &results[i * self.reps..(i + 1) * self.reps]))
            .collect())
    }
}

fn heatmap_table(rows: &[MetricsRow]) -> Table {
    let mut t = Table::new("heatmap", &["rho", "clusters_extracted", "clusters_selected", "metric", "value"]);
    for r in rows {
        for (name, v) in [
            ("ep_vs_lasso", r.ep_vs_lasso),
            ("ep_vs_marginal", r.ep_vs_marginal),
            ("width_ratio_vs_lasso", r.width_ratio_vs_lasso),
            ("width_ratio_vs_marginal", r.width_ratio_vs_marginal),
        ] {
            t.push(vec![
                r.rho.to_string(),
                r.clusters_extracted.to_string(),
                r.clusters_selected.to_string(),
                name.into(),
                cell(v),
            ]);
        }
    }
    t
}

// ---------------------------------------------------------------------------
// prototest p-values and BH false discovery rate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrototestConfig {
    pub n: usize,
    pub rho: f64,
    pub beta_star: f64,
    pub sigma: f64,
    pub clusters: ClusterRule,
    pub levels: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for PrototestConfig {
    fn default() -> Self {
        Self {
            n: 50,
            rho: 0.7,
            beta_star: 1.0,
            sigma: 1.0,
            clusters: ClusterRule::Truth,
            levels: vec![0.05, 0.1, 0.2],
            reps: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: f64,
    /// Mean of `V / max(R, 1)` over replications.
    pub fdr: f64,
    /// Share of null clusters with unadjusted `p ≤ level`.
    pub null_rejection_rate: f64,
    /// Share of signal clusters rejected by BH.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototestStudy {
    pub null_pvalues: Vec<f64>,
    pub signal_pvalues: Vec<f64>,
    pub null_swap_pvalues: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    pub failures: usize,
}

pub fn prototest_study(cfg: &PrototestConfig) -> Result<PrototestStudy> {
    let design = Design::Prototest;
    let x = design.generate(cfg.n, cfg.rho, derive_seed(cfg.seed, &[0xD5]))?;
    let clustering = cfg.clusters.resolve(&x, &design.truth(), derive_seed(cfg.seed, &[0x6A9]))?;
    let beta = BetaConfig::Prototest.beta(x.ncols(), cfg.beta_star)?;
    let signal = signal_clusters(&clustering, &beta);
    let null_count = clustering.k() - signal.len();

    struct Rep {
        pvals: Vec<Option<f64>>,
        swaps: Vec<(usize, Option<f64>)>,
    }
    let reps: Vec<Rep> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| -> Result<Rep> {
            let y = generate_response(&x, &beta, cfg.sigma, derive_seed(cfg.seed, &[1, rep as u64]))?;
            let (_, report) = run_prototest(&x, &y, &clustering, cfg.sigma, 1.0, None)?;
            Ok(Rep {
                pvals: report.p_values(),
                swaps: report.swap_ins.iter().map(|r| (r.cluster, r.p_value)).collect(),
            })
        })
        .collect::<Result<_>>()?;

    let mut study = PrototestStudy {
        null_pvalues: Vec::new(),
        signal_pvalues: Vec::new(),
        null_swap_pvalues: Vec::new(),
        levels: Vec::new(),
        failures: 0,
    };
    for r in &reps {
        for (k, p) in r.pvals.iter().enumerate() {
            match (p, signal.contains(&k)) {
                (None, _) => study.failures += 1,
                (Some(p), true) => study.signal_pvalues.push(*p),
                (Some(p), false) => study.null_pvalues.push(*p),
            }
        }
        for &(k, p) in &r.swaps {
            if let (Some(p), false) = (p, signal.contains(&k)) {
                study.null_swap_pvalues.push(p);
            }
        }
    }
    for &level in &cfg.levels {
        let (mut fdp, mut null_rej, mut power) = (Vec::new(), 0usize, Vec::new());
        for r in &reps {
            let rejected = bh_procedure(&r.pvals, level);
            let v = rejected.iter().filter(|k| !signal.contains(k)).count();
            fdp.push(v as f64 / rejected.len().max(1) as f64);
            if !signal.is_empty() {
                power.push((rejected.len() - v) as f64 / signal.len() as f64);
            }
            null_rej += (0..clustering.k())
                .filter(|k| !signal.contains(k) && r.pvals[*k].is_some_and(|p| p <= level))
                .count();
        }
        study.levels.push(LevelSummary {
            level,
            fdr: mean(&fdp),
            null_rejection_rate: null_rej as f64 / (null_count * reps.len()).max(1) as f64,
            power: if power.is_empty() { 0.0 } else { mean(&power) },
        });
    }
    Ok(study)
}

// ---------------------------------------------------------------------------
// knockoff FDP and power

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnockoffStudyConfig {
    pub n: usize,
    pub blocks: usize,
    pub size: usize,
    pub rho: f64,
    pub signals_per_cluster: Vec<usize>,
    pub signal_clusters: usize,
    pub beta_stars: Vec<f64>,
    pub sigma: f64,
    pub clusters: ClusterRule,
    /// Prototype-set realizations.
    pub s1: usize,
    /// Knockoff replications per prototype set.
    pub s2: usize,
    pub q: f64,
    pub seed: u64,
}

impl Default for KnockoffStudyConfig {
    fn default() -> Self {
        Self {
            n: 200,
            blocks: 10,
            size: 10,
            rho: 0.5,
            signals_per_cluster: vec![1, 2, 3],
            signal_clusters: 5,
            beta_stars: (1..=9).map(f64::from).collect(),
            sigma: 1.0,
            clusters: ClusterRule::Cut { k: 10, linkage: Linkage::Complete },
            s1: 50,
            s2: 100,
            q: 0.2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffCell {
    pub signals_per_cluster: usize,
    pub beta_star: f64,
    /// Mean FDP and power over the inner replications, per prototype set.
    pub fdp_by_prototype_set: Vec<f64>,
    pub power_by_prototype_set: Vec<f64>,
    pub mean_fdp: f64,
    pub mean_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffStudy {
    pub cells: Vec<KnockoffCell>,
    pub gram_residual: f64,
    pub cross_residual: f64,
    pub augmented_rows: usize,
}

/// Two fixed designs; prototypes from `X⁽¹⁾` with fresh `y⁽¹⁾`, knockoff
/// selection on `X⁽²⁾` with fresh `y⁽²⁾`. The clustering uses both.
pub fn knockoff_study(cfg: &KnockoffStudyConfig) -> Result<KnockoffStudy> {
    let design = Design::BlockDiagonal { blocks: cfg.blocks, size: cfg.size };
    let x1 = design.generate(cfg.n, cfg.rho, derive_seed(cfg.seed, &[0xD5, 1]))?;
    let x2 = design.generate(cfg.n, cfg.rho, derive_seed(cfg.seed, &[0xD5, 2]))?;
    let mut stacked = nalgebra::DMatrix::zeros(2 * cfg.n, x1.ncols());
    stacked.rows_mut(0, cfg.n).copy_from(&x1);
    stacked.rows_mut(cfg.n, cfg.n).copy_from(&x2);
    let clustering = cfg.clusters.resolve(&stacked, &design.truth(), derive_seed(cfg.seed, &[0x6A9]))?;
    let knock = make_knockoffs(&x2)?;
    let mut cells = Vec::new();
    for (ci, &signals) in cfg.signals_per_cluster.iter().enumerate() {
        let config = BetaConfig::PerCluster { clusters: cfg.signal_clusters, signals, size: cfg.size };
        for (bi, &beta_star) in cfg.beta_stars.iter().enumerate() {
            let beta = config.beta(x1.ncols(), beta_star)?;
            let path = [ci as u64, bi as u64];
            let per_set: Vec<(f64, f64)> = (0..cfg.s1)
                .into_par_iter()
                .map(|s1| -> Result<(f64, f64)> {
                    let y1 = generate_response(&x1, &beta, cfg.sigma, derive_seed(cfg.seed, &[path[0], path[1], 1, s1 as u64]))?;
                    let protos = extract_prototypes(&x1, &y1, &clustering)?;
                    let (mut f, mut p) = (0.0, 0.0);
                    for s2 in 0..cfg.s2 {
                        let seed = derive_seed(cfg.seed, &[path[0], path[1], 2, s1 as u64, s2 as u64]);
                        let y2 = generate_response(&x2, &beta, cfg.sigma, seed)?;
                        let run = knockoff_filter(protos.clone(), &knock, &y2, cfg.q)?;
                        let (fdp, power) = fdp_power(&run, &clustering, &beta);
                        f += fdp;
                        p += power;
                    }
                    Ok((f / cfg.s2 as f64, p / cfg.s2 as f64))
                })
                .collect::<Result<_>>()?;
            let fdp: Vec<f64> = per_set.iter().map(|v| v.0).collect();
            let power: Vec<f64> = per_set.iter().map(|v| v.1).collect();
            cells.push(KnockoffCell {
                signals_per_cluster: signals,
                beta_star,
                mean_fdp: mean(&fdp),
                mean_power: mean(&power),
                fdp_by_prototype_set: fdp,
                power_by_prototype_set: power,
            });
        }
    }
    Ok(KnockoffStudy {
        cells,
        gram_residual: knock.gram_residual,
        cross_residual: knock.cross_residual,
        augmented_rows: knock.augmented_rows,
    })
}

// ---------------------------------------------------------------------------
// gap statistic recovery

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapStudyConfig {
    pub design: Design,
    pub n: usize,
    pub rho: f64,
    pub replicates: usize,
    pub linkage: Linkage,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for GapStudyConfig {
    fn default() -> Self {
        Self {
            design: Design::BlockDiagonal { blocks: 10, size: 10 },
            n: 50,
            rho: 0.5,
            replicates: 100,
            linkage: Linkage::Complete,
            seeds: 50,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub true_k: usize,
    pub k_hat: Vec<usize>,
    pub ari: Vec<f64>,
    /// Curve of the first data set.
    pub first_curve: Option<GapCurve>,
}

impl GapStudy {
    pub fn recovery_rate(&self) -> f64 {
        self.k_hat.iter().filter(|&&k| k == self.true_k).count() as f64 / self.k_hat.len().max(1) as f64
    }
}

pub fn gap_study(cfg: &GapStudyConfig) -> Result<GapStudy> {
    let truth = cfg.design.truth();
    let out: Vec<(usize, f64, GapCurve)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| -> Result<_> {
            let x = cfg.design.generate(cfg.n, cfg.rho, derive_seed(cfg.seed, &[s as u64]))?;
            let opts = GapOptions {
                replicates: cfg.replicates,
                linkage: cfg.linkage,
                seed: derive_seed(cfg.seed, &[s as u64, 0x6A9]),
                ..Default::default()
            };
            let curve = estimate_clusters(&x, &opts)?;
            let cut: Clustering = hclust(&correlation_dissimilarity(&x)?, cfg.linkage).cut(curve.k_hat)?;
            Ok((curve.k_hat, adjusted_rand_index(&cut, &truth)?, curve))
        })
        .collect::<Result<_>>()?;
    Ok(GapStudy {
        true_k: truth.k(),
        k_hat: out.iter().map(|o| o.0).collect(),
        ari: out.iter().map(|o| o.1).collect(),
        first_curve: out.into_iter().next().map(|o| o.2),
    })
}

// ---------------------------------------------------------------------------
// suite dispatch

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "snake_case")]
pub enum Suite {
    Fig3Pvalues(Fig3Config),
    Fig4Ep(ComparisonGrid),
    Fig5Prototest(PrototestConfig),
    Fig6Fdr(PrototestConfig),
    Fig9Knockoff(KnockoffStudyConfig),
    #[serde(rename = "appendixA_gap")]
    AppendixAGap(GapStudyConfig),
}

pub const SUITE_NAMES: [&str; 6] =
    ["fig3_pvalues", "fig4_ep", "fig5_prototest", "fig6_fdr", "fig9_knockoff", "appendixA_gap"];

/// Tables plus a JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub suite: String,
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
}

impl Suite {
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "fig3_pvalues" => Suite::Fig3Pvalues(Fig3Config::default()),
            "fig4_ep" => Suite::Fig4Ep(ComparisonGrid::default()),
            "fig5_prototest" => Suite::Fig5Prototest(PrototestConfig::default()),
            "fig6_fdr" => Suite::Fig6Fdr(PrototestConfig { reps: 100, ..Default::default() }),
            "fig9_knockoff" => Suite::Fig9Knockoff(KnockoffStudyConfig::default()),
            "appendixA_gap" => Suite::AppendixAGap(GapStudyConfig::default()),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown suite '{other}'; expected one of {}",
                    SUITE_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Fig3Pvalues(_) => SUITE_NAMES[0],
            Suite::Fig4Ep(_) => SUITE_NAMES[1],
            Suite::Fig5Prototest(_) => SUITE_NAMES[2],
            Suite::Fig6Fdr(_) => SUITE_NAMES[3],
            Suite::Fig9Knockoff(_) => SUITE_NAMES[4],
            Suite::AppendixAGap(_) => SUITE_NAMES[5],
        }
    }

    /// Replication count: responses per design, prototype-set realizations
    /// for the knockoff suite, data sets for the gap suite.
    pub fn set_reps(&mut self, reps: usize) {
        match self {
            Suite::Fig3Pvalues(c) => c.reps = reps,
            Suite::Fig4Ep(c) => c.reps = reps,
            Suite::Fig5Prototest(c) | Suite::Fig6Fdr(c) => c.reps = reps,
            Suite::Fig9Knockoff(c) => c.s1 = reps,
            Suite::AppendixAGap(c) => c.seeds = reps,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Suite::Fig3Pvalues(c) => c.seed = seed,
            Suite::Fig4Ep(c) => c.seed = seed,
            Suite::Fig5Prototest(c) | Suite::Fig6Fdr(c) => c.seed = seed,
            Suite::Fig9Knockoff(c) => c.seed = seed,
            Suite::AppendixAGap(c) => c.seed = seed,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Suite::Fig3Pvalues(c) => c.seed,
            Suite::Fig4Ep(c) => c.seed,
            Suite::Fig5Prototest(c) | Suite::Fig6Fdr(c) => c.seed,
            Suite::Fig9Knockoff(c) => c.seed,
            Suite::AppendixAGap(c) => c.seed,
        }
    }

    pub fn run(&self) -> Result<SuiteOutput> {
        let (tables, summary) = match self {
            Suite::Fig3Pvalues(c) => {
                let s = fig3_study(c)?;
                let mut qq = qq_table();
                qq_rows(&mut qq, "null", "prototype", &s.null_prototype);
                qq_rows(&mut qq, "null", "swap_in", &s.null_swap);
                qq_rows(&mut qq, "signal", "prototype", &s.signal_prototype);
                qq_rows(&mut qq, "signal", "prototype_null_cluster", &s.signal_null_prototype);
                qq_rows(&mut qq, "signal", "swap_in", &s.signal_swap);
                let row = MetricsRow {
                    label: "null".into(),
                    rho: c.rho,
                    clusters_extracted: s.clusters,
                    reps_used: c.reps,
                    ks_distance: ks_or_none(&s.null_prototype),
                    ..Default::default()
                };
                let signal_row = MetricsRow {
                    label: "signal".into(),
                    beta_star: c.beta_star,
                    ks_distance: ks_or_none(&s.signal_prototype),
                    coverage: s.coverage(),
                    ..row.clone()
                };
                let summary = json!({
                    "clusters": s.clusters,
                    "ks_null_prototype": ks_or_none(&s.null_prototype),
                    "ks_null_swap_in": ks_or_none(&s.null_swap),
                    "ecdf_005_null_prototype": (!s.null_prototype.is_empty()).then(|| ecdf_at(&s.null_prototype, 0.05)),
                    "ecdf_005_signal_prototype": (!s.signal_prototype.is_empty()).then(|| ecdf_at(&s.signal_prototype, 0.05)),
                    "coverage": s.coverage(),
                    "counts": {
                        "null_prototype": s.null_prototype.len(),
                        "null_swap_in": s.null_swap.len(),
                        "signal_prototype": s.signal_prototype.len(),
                        "signal_swap_in": s.signal_swap.len(),
                    },
                    "failures": s.failures,
                    "duality_violations": s.duality_violations,
                });
                (vec![qq, metrics_table(&[row, signal_row])], summary)
            }
            Suite::Fig4Ep(g) => {
                let rows = g.run()?;
                let skipped: usize = rows.iter().map(|r| r.reps_skipped).sum();
                let summary = json!({ "cells": rows.len(), "reps_skipped": skipped });
                (vec![metrics_table(&rows), heatmap_table(&rows)], summary)
            }
            Suite::Fig5Prototest(c) | Suite::Fig6Fdr(c) => {
                let s = prototest_study(c)?;
                let mut qq = qq_table();
                qq_rows(&mut qq, "signal", "null_cluster", &s.null_pvalues);
                qq_rows(&mut qq, "signal", "signal_cluster", &s.signal_pvalues);
                let mut fdr = Table::new("fdr", &["alpha", "fdr", "null_rejection_rate", "power"]);
                for l in &s.levels {
                    fdr.push(vec![
                        l.level.to_string(),
                        l.fdr.to_string(),
                        l.null_rejection_rate.to_string(),
                        l.power.to_string(),
                    ]);
                }
                let summary = json!({
                    "ks_null": ks_or_none(&s.null_pvalues),
                    "ks_null_swap_in": ks_or_none(&s.null_swap_pvalues),
                    "median_signal_pvalue": (!s.signal_pvalues.is_empty()).then(|| median(&s.signal_pvalues)),
                    "levels": s.levels,
                    "failures": s.failures,
                });
                let tables = if matches!(self, Suite::Fig5Prototest(_)) { vec![qq, fdr] } else { vec![fdr, qq] };
                (tables, summary)
            }
            Suite::Fig9Knockoff(c) => {
                let s = knockoff_study(c)?;
                let mut summary_t = Table::new("knockoff", &["beta_star", "config", "mean_fdp", "mean_power"]);
                let mut per_set = Table::new("prototype_sets", &["beta_star", "config", "set", "fdp", "power"]);
                let mut rows = Vec::new();
                for cell in &s.cells {
                    let config = format!("{}_per_cluster", cell.signals_per_cluster);
                    summary_t.push(vec![
                        cell.beta_star.to_string(),
                        config.clone(),
                        cell.mean_fdp.to_string(),
                        cell.mean_power.to_string(),
                    ]);
                    for (i, (f, p)) in cell.fdp_by_prototype_set.iter().zip(&cell.power_by_prototype_set).enumerate() {
                        per_set.push(vec![cell.beta_star.to_string(), config.clone(), i.to_string(), f.to_string(), p.to_string()]);
                    }
                    rows.push(MetricsRow {
                        label: config,
                        rho: c.rho,
                        beta_star: cell.beta_star,
                        clusters_extracted: c.blocks,
                        reps_used: c.s1 * c.s2,
                        fdr: Some(cell.mean_fdp),
                        power: Some(cell.mean_power),
                        ..Default::default()
                    });
                }
                let summary = json!({
                    "cells": s.cells.iter().map(|c| json!({
                        "signals_per_cluster": c.signals_per_cluster,
                        "beta_star": c.beta_star,
                        "mean_fdp": c.mean_fdp,
                        "mean_power": c.mean_power,
                    })).collect::<Vec<_>>(),
                    "gram_residual": s.gram_residual,
                    "cross_residual": s.cross_residual,
                    "augmented_rows": s.augmented_rows,
                });
                (vec![summary_t, per_set, metrics_table(&rows)], summary)
            }
            Suite::AppendixAGap(c) => {
                let s = gap_study(c)?;
                let mut t = Table::new("gap_recovery", &["dataset", "k_hat", "ari"]);
                for (i, (k, a)) in s.k_hat.iter().zip(&s.ari).enumerate() {
                    t.push(vec![i.to_string(), k.to_string(), a.to_string()]);
                }
                let mut tables = vec![t];
                if let Some(curve) = &s.first_curve {
                    let mut ct = Table::new("gap_curve", &["k", "h_x", "h_u_mean", "h_u_se", "gap", "gap_diff"]);
                    for i in 0..curve.ks.len() {
                        ct.push(vec![
                            curve.ks[i].to_string(),
                            curve.h_x[i].to_string(),
                            curve.h_u_mean[i].to_string(),
                            curve.h_u_se[i].to_string(),
                            curve.g_hat[i].to_string(),
                            cell(curve.d_hat[i]),
                        ]);
                    }
                    tables.push(ct);
                }
                let summary = json!({
                    "true_k": s.true_k,
                    "recovery_rate": s.recovery_rate(),
                    "median_ari": (!s.ari.is_empty()).then(|| median(&s.ari)),
                });
                (tables, summary)
            }
        };
        Ok(SuiteOutput { suite: self.name().into(), tables, summary })
    }
}
