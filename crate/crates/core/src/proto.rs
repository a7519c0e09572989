//! Supervised prototypes and the affine selection event of the screening step.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::error::{Error, Result};

/// One prototype per cluster: the member with the largest `|x_jᵀy|`, lowest
/// index on ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Vec<usize>,
    /// `sign(x_Pᵀy)` per cluster; zero counts as `+1`.
    pub signs: Vec<f64>,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }
}

/// Which stage of the pipeline contributed a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintTag {
    Screening,
    Lasso,
}

/// The set `{y : A y ≤ b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub tags: Vec<ConstraintTag>,
}

impl Polyhedron {
    /// No constraints on a response of length `n`.
    pub fn empty(n: usize) -> Self {
        Self { a: DMatrix::zeros(0, n), b: DVector::zeros(0), tags: Vec::new() }
    }

    pub fn from_rows(n: usize, rows: Vec<(RowDVector<f64>, f64)>, tag: ConstraintTag) -> Self {
        if rows.is_empty() {
            return Self::empty(n);
        }
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let a = DMatrix::from_rows(&rows.into_iter().map(|r| r.0).collect::<Vec<_>>());
        let tags = vec![tag; a.nrows()];
        Self { a, b, tags }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Stacks constraint sets on the same response space.
    pub fn stack(parts: &[&Polyhedron]) -> Result<Self> {
        let n = parts.first().map(|p| p.dim()).unwrap_or(0);
        if parts.iter().any(|p| p.dim() != n) {
            return Err(Error::InvalidInput("stacked polyhedra act on different dimensions".into()));
        }
        let m: usize = parts.iter().map(|p| p.rows()).sum();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        let mut tags = Vec::with_capacity(m);
        let mut r = 0;
        for part in parts {
            a.rows_mut(r, part.rows()).copy_from(&part.a);
            b.rows_mut(r, part.rows()).copy_from(&part.b);
            tags.extend_from_slice(&part.tags);
            r += part.rows();
        }
        Ok(Self { a, b, tags })
    }

    /// `b − A y`; non-negative entries mean the row is satisfied.
    pub fn slack(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * y
    }

    pub fn contains(&self, y: &DVector<f64>, tol: f64) -> bool {
        self.slack(y).iter().all(|&s| s >= -tol)
    }
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn extract_prototypes(x: &DMatrix<f64>, y: &DVector<f64>, clustering: &Clustering) -> Result<PrototypeSet> {
    if clustering.p() != x.ncols() {
        return Err(Error::InvalidInput(format!(
            "clustering covers {} features, design has {}",
            clustering.p(),
            x.ncols()
        )));
    }
    if y.len() != x.nrows() {
        return Err(Error::InvalidInput("response length does not match design".into()));
    }
    let scores = x.tr_mul(y);
    let mut prototypes = Vec::with_capacity(clustering.k());
    let mut signs = Vec::with_capacity(clustering.k());
    for members in clustering.clusters() {
        let mut best = members[0];
        for &j in &members[1..] {
            if scores[j].abs() > scores[best].abs() {
                best = j;
            }
        }
        prototypes.push(best);
        signs.push(sign(scores[best]));
    }
    Ok(PrototypeSet { prototypes, signs })
}

/// Rows `(±x_j − s_k x_{P_k})ᵀ y ≤ 0` for every non-prototype `j` of every
/// cluster; `2 Σ_k (|C_k| − 1)` rows in all.
pub fn screening_constraints(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    clustering: &Clustering,
    protos: &PrototypeSet,
) -> Result<Polyhedron> {
    let clusters = clustering.clusters();
    if protos.len() != clusters.len() {
        return Err(Error::InconsistentPrototypes(format!(
            "{} prototypes for {} clusters",
            protos.len(),
            clusters.len()
        )));
    }
    let scores = x.tr_mul(y);
    let n = x.nrows();
    let mut rows = Vec::new();
    for (k, members) in clusters.iter().enumerate() {
        let proto = protos.prototypes[k];
        let s = protos.signs[k];
        if !members.contains(&proto) {
            return Err(Error::InconsistentPrototypes(format!("prototype {proto} not in cluster {k}")));
        }
        if sign(scores[proto]) != s {
            return Err(Error::InconsistentPrototypes(format!("sign of prototype {proto} disagrees with response")));
        }
        let top = scores[proto].abs();
        if let Some(&j) = members.iter().find(|&&j| scores[j].abs() > top * (1.0 + 1e-12)) {
            return Err(Error::InconsistentPrototypes(format!(
                "feature {j} beats prototype {proto} in cluster {k}"
            )));
        }
        let xp = x.column(proto).transpose() * s;
        let others: Vec<usize> = members.iter().copied().filter(|&j| j != proto).collect();
        for &j in &others {
            rows.push((x.column(j).transpose() - &xp, 0.0));
        }
        for &j in &others {
            rows.push((-x.column(j).transpose() - &xp, 0.0));
        }
    }
    Ok(Polyhedron::from_rows(n, rows, ConstraintTag::Screening))
}

/// Top-`m` marginal screening over all features: the selected features in
/// decreasing `|x_jᵀy|` order, their signs, and the `2 m (p − m)` rows
/// `(±x_k − s_j x_j)ᵀ y ≤ 0` for selected `j` and unselected `k`.
pub fn top_m_screening(x: &DMatrix<f64>, y: &DVector<f64>, m: usize) -> Result<(PrototypeSet, Polyhedron)> {
    let p = x.ncols();
    if m == 0 || m > p {
        return Err(Error::InvalidInput(format!("cannot screen {m} of {p} features")));
    }
    if y.len() != x.nrows() {
        return Err(Error::InvalidInput("response length does not match design".into()));
    }
    let scores = x.tr_mul(y);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    let selected: Vec<usize> = order[..m].to_vec();
    let signs: Vec<f64> = selected.iter().map(|&j| sign(scores[j])).collect();
    let mut rows = Vec::with_capacity(2 * m * (p - m));
    for (&j, &s) in selected.iter().zip(&signs) {
        let xj = x.column(j).transpose() * s;
        for &k in &order[m..] {
            rows.push((x.column(k).transpose() - &xj, 0.0));
            rows.push((-x.column(k).transpose() - &xj, 0.0));
        }
    }
    Ok((PrototypeSet { prototypes: selected, signs }, Polyhedron::from_rows(x.nrows(), rows, ConstraintTag::Screening)))
}
