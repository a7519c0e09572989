use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::{correlation_dissimilarity, hclust, Clustering, Linkage};
use crate::dataset::{generate_block_design, standardize, BlockDesignSpec};
use crate::error::{Error, Result};
use crate::gapstat::{estimate_clusters, GapOptions};
use crate::linalg::{select_columns, transpose_pinv};

/// Correlation structure of a synthetic design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// `blocks` equicorrelated blocks of `size` features.
    BlockDiagonal { blocks: usize, size: usize },
    /// One correlated block followed by uncorrelated singletons.
    SingleBlock { block: usize, singletons: usize },
    /// Ten groups of six; groups four to ten residualized against the first
    /// three and re-standardized.
    Prototest,
    /// One cluster of 20 followed by 40 correlated pairs.
    ClusterAndPairs,
}

impl Design {
    pub fn block_sizes(&self) -> Vec<usize> {
        match *self {
            Design::BlockDiagonal { blocks, size } => vec![size; blocks],
            Design::SingleBlock { block, singletons } => {
                let mut v = vec![block];
                v.extend(std::iter::repeat_n(1, singletons));
                v
            }
            Design::Prototest => vec![6; 10],
            Design::ClusterAndPairs => {
                let mut v = vec![20];
                v.extend(std::iter::repeat_n(2, 40));
                v
            }
        }
    }

    pub fn p(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    pub fn truth(&self) -> Clustering {
        let spec = BlockDesignSpec { n: 2, block_sizes: self.block_sizes(), rho: 0.0, seed: 0 };
        Clustering::from_labels(&spec.block_labels())
    }

    /// Standardized design matrix, a pure function of the arguments.
    pub fn generate(&self, n: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
        let spec = BlockDesignSpec { n, block_sizes: self.block_sizes(), rho, seed };
        let x = generate_block_design(&spec)?;
        match self {
            Design::Prototest => orthogonalize_noise_groups(&x, 18),
            _ => Ok(x),
        }
    }
}

/// Replaces columns `lead..` by their residuals on columns `..lead`.
fn orthogonalize_noise_groups(x: &DMatrix<f64>, lead: usize) -> Result<DMatrix<f64>> {
    if x.nrows() <= lead {
        return Err(Error::InvalidInput(format!("orthogonalizing needs more than {lead} rows")));
    }
    let signal: Vec<usize> = (0..lead).collect();
    let s = select_columns(x, &signal);
    let pinv_t = transpose_pinv(&s, "signal groups")?;
    let mut out = x.clone();
    for j in lead..x.ncols() {
        let col = x.column(j).into_owned();
        let fitted = &s * (pinv_t.transpose() * &col);
        out.set_column(j, &(col - fitted));
    }
    standardize(&out)
}

/// Placement of the nonzero coefficients (0-based indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaConfig {
    Zero,
    /// Features 1, 11, 21, 31, 41, 51.
    Single,
    /// Features 1, 2, 11, 12, 21, 22.
    Paired,
    /// Features 1 to 6.
    Tight,
    /// Features 1, 2, 3, 51, 52, 53.
    Split,
    /// Features 1, 11, 21.
    Three,
    /// First feature of groups one to three of the prototest design.
    Prototest,
    /// The first `signals` features of each of the first `clusters` blocks of
    /// width `size`.
    PerCluster { clusters: usize, signals: usize, size: usize },
    Indices { indices: Vec<usize> },
}

impl BetaConfig {
    pub fn support(&self) -> Vec<usize> {
        match self {
            BetaConfig::Zero => vec![],
            BetaConfig::Single => vec![0, 10, 20, 30, 40, 50],
            BetaConfig::Paired => vec![0, 1, 10, 11, 20, 21],
            BetaConfig::Tight => (0..6).collect(),
            BetaConfig::Split => vec![0, 1, 2, 50, 51, 52],
            BetaConfig::Three => vec![0, 10, 20],
            BetaConfig::Prototest => vec![0, 6, 12],
            BetaConfig::PerCluster { clusters, signals, size } => {
                (0..*clusters).flat_map(|c| (0..*signals).map(move |s| c * size + s)).collect()
            }
            BetaConfig::Indices { indices } => indices.clone(),
        }
    }

    pub fn beta(&self, p: usize, beta_star: f64) -> Result<DVector<f64>> {
        let mut beta = DVector::zeros(p);
        for j in self.support() {
            if j >= p {
                return Err(Error::InvalidInput(format!("signal index {j} outside {p} features")));
            }
            beta[j] = beta_star;
        }
        Ok(beta)
    }
}

/// How the feature clustering is obtained; every rule looks at `X` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterRule {
    /// The generating blocks.
    Truth,
    Cut { k: usize, #[serde(default)] linkage: Linkage },
    Gap { replicates: usize, #[serde(default)] linkage: Linkage },
}

impl ClusterRule {
    pub fn resolve(&self, x: &DMatrix<f64>, truth: &Clustering, seed: u64) -> Result<Clustering> {
        match self {
            ClusterRule::Truth => Ok(truth.clone()),
            ClusterRule::Cut { k, linkage } => hclust(&correlation_dissimilarity(x)?, *linkage).cut(*k),
            ClusterRule::Gap { replicates, linkage } => {
                let opts = GapOptions { replicates: *replicates, linkage: *linkage, seed, ..Default::default() };
                let k = estimate_clusters(x, &opts)?.k_hat;
                hclust(&correlation_dissimilarity(x)?, *linkage).cut(k)
            }
        }
    }
}
