//! Marginal testing of prototypes, conditioning on the screening step only,
//! with Benjamini-Hochberg control over the cluster-level hypotheses.
//!
//! The selective p-values of different clusters are not exactly independent,
//! so the BH guarantee is heuristic here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::error::{Error, Result};
use crate::polyhedra::{infer_contrast, swap_contrast, Contrast, Role};
use crate::proto::{extract_prototypes, screening_constraints, Polyhedron, PrototypeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRecord {
    pub cluster: usize,
    pub feature: usize,
    pub name: String,
    pub role: Role,
    pub prototype: usize,
    pub sign: f64,
    #[serde(with = "crate::io::extended_float")]
    pub estimate: f64,
    pub p_value: Option<f64>,
    #[serde(with = "crate::io::extended_float")]
    pub v_minus: f64,
    #[serde(with = "crate::io::extended_float")]
    pub v_plus: f64,
    /// `Some(true)` when the cluster is known to contain no signal.
    pub null_status: Option<bool>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTestReport {
    pub sigma: f64,
    pub q: f64,
    /// One record per cluster, in cluster order.
    pub clusters: Vec<MarginalRecord>,
    pub swap_ins: Vec<MarginalRecord>,
    /// Largest BH cutoff `kq/K` that was met, or 0 when nothing is rejected.
    pub bh_threshold: f64,
    /// Rejected clusters, ascending.
    pub rejected: Vec<usize>,
}

impl MarginalTestReport {
    pub fn p_values(&self) -> Vec<Option<f64>> {
        self.clusters.iter().map(|r| r.p_value).collect()
    }

    /// Marks each cluster null or non-null from the true coefficients.
    pub fn label_truth(&mut self, clustering: &Clustering, beta: &DVector<f64>) {
        let signal = signal_clusters(clustering, beta);
        for r in self.clusters.iter_mut().chain(self.swap_ins.iter_mut()) {
            r.null_status = Some(!signal.contains(&r.cluster));
        }
    }

    /// `(false rejections, rejections)` among clusters with known status.
    pub fn false_discoveries(&self) -> (usize, usize) {
        let v = self
            .rejected
            .iter()
            .filter(|&&k| self.clusters[k].null_status == Some(true))
            .count();
        (v, self.rejected.len())
    }

    /// Re-runs BH at a different level on the same p-values.
    pub fn with_level(&self, q: f64) -> Self {
        let (rejected, bh_threshold) = bh_with_threshold(&self.p_values(), q);
        Self { q, rejected, bh_threshold, ..self.clone() }
    }
}

/// Clusters containing at least one nonzero coefficient, ascending.
pub fn signal_clusters(clustering: &Clustering, beta: &DVector<f64>) -> Vec<usize> {
    let mut out: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).map(|j| clustering.label(j)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Benjamini-Hochberg step-up. Missing p-values count as 1.
pub fn bh_procedure(pvalues: &[Option<f64>], q: f64) -> Vec<usize> {
    bh_with_threshold(pvalues, q).0
}

fn bh_with_threshold(pvalues: &[Option<f64>], q: f64) -> (Vec<usize>, f64) {
    let m = pvalues.len();
    let mut order: Vec<(f64, usize)> = pvalues.iter().enumerate().map(|(i, p)| (p.unwrap_or(1.0), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cutoff = (1..=m).rev().find(|&k| order[k - 1].0 <= k as f64 * q / m as f64);
    match cutoff {
        Some(k) if q > 0.0 => {
            let mut rej: Vec<usize> = order[..k].iter().map(|&(_, i)| i).collect();
            rej.sort_unstable();
            (rej, k as f64 * q / m as f64)
        }
        _ => (Vec::new(), 0.0),
    }
}

fn marginal_record(
    poly: &Polyhedron,
    contrast: &Contrast,
    y: &DVector<f64>,
    sigma: f64,
    fields: (usize, usize, usize, f64, Role),
    names: Option<&[String]>,
) -> Result<MarginalRecord> {
    let (cluster, feature, prototype, sign, role) = fields;
    // alpha is irrelevant here; only the p-value is kept
    let (pivot, p, _, failure) = infer_contrast(poly, contrast, y, sigma, 0.05)?;
    Ok(MarginalRecord {
        cluster,
        feature,
        name: names.and_then(|n| n.get(feature).cloned()).unwrap_or_else(|| format!("x{}", feature + 1)),
        role,
        prototype,
        sign,
        estimate: pivot.statistic,
        p_value: p,
        v_minus: pivot.bounds.v_minus,
        v_plus: pivot.bounds.v_plus,
        null_status: None,
        failure: failure.filter(|_| p.is_none()),
    })
}

/// Tests `H₀: x_Pᵀμ = 0` for each prototype given the screening event.
pub fn run_prototest(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clustering: &Clustering,
    sigma: f64,
    q: f64,
    names: Option<&[String]>,
) -> Result<(PrototypeSet, MarginalTestReport)> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!("q must lie in [0, 1], got {q}")));
    }
    let protos = extract_prototypes(x, y, clustering)?;
    let poly = screening_constraints(x, y, clustering, &protos)?;
    let mut clusters = Vec::with_capacity(protos.len());
    let mut swap_ins = Vec::new();
    for (k, members) in clustering.clusters().into_iter().enumerate() {
        let (proto, sign) = (protos.prototypes[k], protos.signs[k]);
        let c = swap_contrast(x, &[proto], proto, proto)?;
        clusters.push(marginal_record(&poly, &c, y, sigma, (k, proto, proto, sign, Role::Prototype), names)?);
        for &j in members.iter().filter(|&&j| j != proto) {
            let c = swap_contrast(x, &[proto], proto, j)?;
            swap_ins.push(marginal_record(&poly, &c, y, sigma, (k, j, proto, sign, Role::SwapIn), names)?);
        }
    }
    let pvals: Vec<Option<f64>> = clusters.iter().map(|r| r.p_value).collect();
    let (rejected, bh_threshold) = bh_with_threshold(&pvals, q);
    Ok((protos, MarginalTestReport { sigma, q, clusters, swap_ins, bh_threshold, rejected }))
}
