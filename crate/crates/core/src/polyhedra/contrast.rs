use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{select_columns, transpose_pinv};

/// A linear functional `ηᵀμ` of the mean response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub eta: DVector<f64>,
    pub target: String,
}

impl Contrast {
    pub fn new(eta: DVector<f64>, target: impl Into<String>) -> Result<Self> {
        if eta.iter().all(|&v| v == 0.0) || eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("contrast must be finite and nonzero".into()));
        }
        Ok(Self { eta, target: target.into() })
    }
}

/// Contrast for the coefficient of column `j` when `μ` is regressed on the
/// columns `model` of `x`: the matching column of `(X_Mᵀ)⁺`.
pub fn prototype_contrast(x: &DMatrix<f64>, model: &[usize], j: usize) -> Result<Contrast> {
    let pos = model
        .iter()
        .position(|&m| m == j)
        .ok_or_else(|| Error::InvalidInput(format!("feature {j} is not in the model")))?;
    let pinv = transpose_pinv(&select_columns(x, model), "selected model")?;
    Contrast::new(pinv.column(pos).into_owned(), format!("coefficient of feature {j} given the selected model"))
}

/// As [`prototype_contrast`] after replacing `prototype` in the model by its
/// cluster-mate `swap`.
pub fn swap_contrast(x: &DMatrix<f64>, model: &[usize], prototype: usize, swap: usize) -> Result<Contrast> {
    let pos = model
        .iter()
        .position(|&m| m == prototype)
        .ok_or_else(|| Error::InvalidInput(format!("prototype {prototype} is not in the model")))?;
    if swap != prototype && model.contains(&swap) {
        return Err(Error::InvalidInput(format!("feature {swap} is already in the model")));
    }
    let mut swapped = model.to_vec();
    swapped[pos] = swap;
    let pinv = transpose_pinv(&select_columns(x, &swapped), "swapped model")?;
    Contrast::new(
        pinv.column(pos).into_owned(),
        format!("coefficient of feature {swap} with it standing in for prototype {prototype}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_block_design, BlockDesignSpec};

    #[test]
    fn single_column_model() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let c = prototype_contrast(&x, &[1], 1).unwrap();
        let col = x.column(1).into_owned();
        assert!((c.eta - &col / col.norm_squared()).amax() < 1e-14);
    }

    #[test]
    fn orthogonal_model_divides_by_n() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let c = prototype_contrast(&x, &[0, 1], 0).unwrap();
        assert!((c.eta - x.column(0) / 4.0).amax() < 1e-14);
    }

    #[test]
    fn contrast_extracts_its_coefficient() {
        let x = generate_block_design(&BlockDesignSpec::uniform(20, 3, 2, 0.6, 8)).unwrap();
        let model = [0, 2, 5];
        for (k, &j) in model.iter().enumerate() {
            let c = prototype_contrast(&x, &model, j).unwrap();
            let row = c.eta.transpose() * select_columns(&x, &model);
            for i in 0..3 {
                assert!((row[i] - if i == k { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn swap_with_itself_is_prototype_contrast() {
        let x = generate_block_design(&BlockDesignSpec::uniform(20, 3, 2, 0.6, 9)).unwrap();
        let a = prototype_contrast(&x, &[0, 2], 2).unwrap();
        let b = swap_contrast(&x, &[0, 2], 2, 2).unwrap();
        assert_eq!(a.eta, b.eta);
    }

    #[test]
    fn swap_contrast_extracts_swapped_coefficient() {
        let x = generate_block_design(&BlockDesignSpec::uniform(20, 3, 2, 0.6, 10)).unwrap();
        let c = swap_contrast(&x, &[0, 2, 4], 2, 3).unwrap();
        let row = c.eta.transpose() * select_columns(&x, &[0, 3, 4]);
        assert!((row[1] - 1.0).abs() < 1e-10 && row[0].abs() < 1e-10 && row[2].abs() < 1e-10);
    }

    #[test]
    fn swap_into_duplicate_is_rank_deficient() {
        let mut x = DMatrix::from_row_slice(4, 3, &[1.0, 0.5, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, -0.5, -1.0]);
        x.set_column(2, &x.column(1).clone_owned());
        assert!(matches!(swap_contrast(&x, &[0, 1], 0, 2), Err(Error::RankDeficient(_))));
    }
}
