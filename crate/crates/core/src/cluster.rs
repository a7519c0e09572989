//! Correlation dissimilarity, agglomerative clustering of features, dendrogram
//! cutting and the adjusted Rand index.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p × p` matrix of `1 − corr(x_j, x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dissimilarity {
    d: DMatrix<f64>,
}

impl Dissimilarity {
    /// Wraps a precomputed matrix after checking symmetry, zero diagonal and range.
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if !d.is_square() {
            return Err(Error::InvalidInput("dissimilarity must be square".into()));
        }
        let p = d.nrows();
        for i in 0..p {
            if d[(i, i)].abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                if (d[(i, j)] - d[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!("asymmetric entry ({i}, {j})")));
                }
                if !(0.0..=2.0).contains(&d[(i, j)]) {
                    return Err(Error::InvalidInput(format!("entry ({i}, {j}) outside [0, 2]")));
                }
            }
        }
        Ok(Self { d })
    }

    pub fn len(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }
}

pub fn correlation_dissimilarity(x: &DMatrix<f64>) -> Result<Dissimilarity> {
    let (n, p) = x.shape();
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        let scale = x.column(j).amax().max(1.0);
        if norm <= 1e-12 * scale * (n as f64).sqrt() {
            return Err(Error::ConstantColumn { index: j, name: format!("x{}", j + 1) });
        }
        col /= norm;
    }
    let corr = z.transpose() * &z;
    let mut d = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..i {
            let v = (1.0 - corr[(i, j)]).clamp(0.0, 2.0);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(Dissimilarity { d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Complete,
    Single,
    Average,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            "average" => Ok(Linkage::Average),
            other => Err(Error::InvalidInput(format!("unknown linkage '{other}'"))),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Complete => "complete",
            Linkage::Single => "single",
            Linkage::Average => "average",
        })
    }
}

/// One agglomeration step. Nodes `0..p` are leaves; merge `t` creates node `p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaf_count: usize,
}

/// Agglomerative clustering by Lance-Williams updates. Among pairs at the minimal
/// linkage distance the one with the lexicographically smallest leaf indices
/// merges first.
pub fn hclust(d: &Dissimilarity, linkage: Linkage) -> Dendrogram {
    let p = d.len();
    let mut dist = d.d.clone();
    // slot i holds the cluster whose smallest leaf is i
    let mut active: Vec<usize> = (0..p).collect();
    let mut node: Vec<usize> = (0..p).collect();
    let mut size = vec![1usize; p];
    let mut merges = Vec::with_capacity(p.saturating_sub(1));

    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                let v = dist[(i, j)];
                if v < best.0 {
                    best = (v, i, j);
                }
            }
        }
        let (height, i, j) = best;
        let (si, sj) = (size[i], size[j]);
        merges.push(Merge { left: node[i], right: node[j], height, size: si + sj });
        active.retain(|&k| k != j);
        for &k in &active {
            if k == i {
                continue;
            }
            let (dik, djk) = (dist[(i, k)], dist[(j, k)]);
            let v = match linkage {
                Linkage::Complete => dik.max(djk),
                Linkage::Single => dik.min(djk),
                Linkage::Average => (si as f64 * dik + sj as f64 * djk) / (si + sj) as f64,
            };
            dist[(i, k)] = v;
            dist[(k, i)] = v;
        }
        size[i] = si + sj;
        node[i] = p + merges.len() - 1;
    }
    Dendrogram { merges, leaf_count: p }
}

impl Dendrogram {
    /// The partition left after undoing the last `k − 1` merges.
    pub fn cut(&self, k: usize) -> Result<Clustering> {
        let p = self.leaf_count;
        if k < 1 || k > p {
            return Err(Error::InvalidInput(format!("cannot cut {p} leaves into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..p).collect();
        fn find(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        // any leaf under each node
        let mut node_leaf: Vec<usize> = (0..p).collect();
        for m in &self.merges[..p - k] {
            let (a, b) = (node_leaf[m.left], node_leaf[m.right]);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
            node_leaf.push(lo);
        }
        let roots: Vec<usize> = (0..p).map(|leaf| find(&mut parent, leaf)).collect();
        Ok(Clustering::from_labels(&roots))
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }
}

/// A partition of features `0..p` into clusters `0..k`, numbered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    labels: Vec<usize>,
    k: usize,
}

impl Clustering {
    /// Relabels arbitrary ids so clusters are numbered by first appearance.
    pub fn from_labels<T: Eq + std::hash::Hash + Copy>(raw: &[T]) -> Self {
        let mut map = HashMap::new();
        let labels = raw
            .iter()
            .map(|v| {
                let next = map.len();
                *map.entry(*v).or_insert(next)
            })
            .collect();
        Self { labels, k: map.len() }
    }

    pub fn singletons(p: usize) -> Self {
        Self { labels: (0..p).collect(), k: p }
    }

    pub fn single(p: usize) -> Self {
        Self { labels: vec![0; p], k: usize::from(p > 0) }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, feature: usize) -> usize {
        self.labels[feature]
    }

    /// Members of every cluster, each in increasing feature order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (j, &c) in self.labels.iter().enumerate() {
            out[c].push(j);
        }
        out
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &c)| c == cluster).map(|(j, _)| j).collect()
    }
}

fn comb2(v: usize) -> f64 {
    let v = v as f64;
    v * (v - 1.0) / 2.0
}

/// Adjusted Rand index from the pair-count contingency table.
pub fn adjusted_rand_index(a: &Clustering, b: &Clustering) -> Result<f64> {
    if a.p() != b.p() {
        return Err(Error::InvalidInput(format!("partitions of {} and {} items", a.p(), b.p())));
    }
    let mut table = vec![0usize; a.k() * b.k()];
    let mut rows = vec![0usize; a.k()];
    let mut cols = vec![0usize; b.k()];
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        table[la * b.k() + lb] += 1;
        rows[la] += 1;
        cols[lb] += 1;
    }
    let index: f64 = table.iter().copied().map(comb2).sum();
    let sum_a: f64 = rows.iter().copied().map(comb2).sum();
    let sum_b: f64 = cols.iter().copied().map(comb2).sum();
    let total = comb2(a.p());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    Ok(if denom == 0.0 { 1.0 } else { (index - expected) / denom })
}
