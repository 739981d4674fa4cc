//! Coordinate-sensitive similarity: per-dimension correlation, orthogonal
//! Procrustes alignment and the inverse row entropy of the aligning map.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{center_columns, polar_factor};

/// Columns whose centered norm falls below this have no defined correlation.
pub const UNDEFINED_COLUMN_TOL: f64 = 1e-12;

/// Tolerance on row norms accepted by [`inverse_row_entropy`].
pub const UNIT_ROW_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimwiseCorrelation {
    /// One entry per feature; `None` where either column is constant.
    pub per_dim: Vec<Option<f64>>,
    pub mean: f64,
    pub num_undefined: usize,
}

fn same_shape(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

/// Pearson correlation of each feature column of `x` with the same column of `y`.
pub fn dimwise_correlation(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DimwiseCorrelation> {
    same_shape(x, y)?;
    let xc = center_columns(x);
    let yc = center_columns(y);
    let per_dim: Vec<Option<f64>> = xc
        .column_iter()
        .zip(yc.column_iter())
        .map(|(a, b)| {
            let (na, nb) = (a.norm(), b.norm());
            (na >= UNDEFINED_COLUMN_TOL && nb >= UNDEFINED_COLUMN_TOL)
                .then(|| a.dot(&b) / (na * nb))
        })
        .collect();
    let defined: Vec<f64> = per_dim.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::AllColumnsUndefined(per_dim.len()));
    }
    Ok(DimwiseCorrelation {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        num_undefined: per_dim.len() - defined.len(),
        per_dim,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesSolution {
    /// Row-major `D x D` orthogonal map taking `X` onto `Y`.
    pub o_star: Vec<Vec<f64>>,
    /// `‖X·O* − Y‖_F`.
    pub residual: f64,
    pub h_inv: f64,
    /// Set when `XᵀY` is numerically rank deficient and `O*` is not unique.
    pub degenerate: bool,
    pub centered: bool,
}

impl ProcrustesSolution {
    pub fn o_star_matrix(&self) -> DMatrix<f64> {
        let d = self.o_star.len();
        DMatrix::from_fn(d, d, |i, j| self.o_star[i][j])
    }
}

/// Solve `min ‖X·O − Y‖_F` over orthogonal `O`. With `center`, both inputs
/// are column-centered first.
pub fn procrustes_align(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    center: bool,
) -> Result<ProcrustesSolution> {
    same_shape(x, y)?;
    let (x, y) = if center {
        (center_columns(x), center_columns(y))
    } else {
        (x.clone(), y.clone())
    };
    let polar = polar_factor(&(x.transpose() * &y))?;
    let o = &polar.orthogonal;
    let residual = (&x * o - &y).norm();
    // D = 1 has no entropy normalization; a 1x1 orthogonal map is ±1, a trivial permutation
    let h_inv = if o.nrows() < 2 {
        1.0
    } else {
        inverse_row_entropy(o)?
    };
    Ok(ProcrustesSolution {
        o_star: o.row_iter().map(|r| r.iter().copied().collect()).collect(),
        residual,
        h_inv,
        degenerate: polar.is_degenerate(),
        centered: center,
    })
}

/// One minus the mean Shannon entropy of the squared rows of `o`, normalized
/// by `ln D`. One for permutation matrices, zero for maximally mixed ones.
pub fn inverse_row_entropy(o: &DMatrix<f64>) -> Result<f64> {
    let d = o.ncols();
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    if o.nrows() != d {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} is not square",
            o.nrows(),
            d
        )));
    }
    let mut total = 0.0;
    for (i, row) in o.row_iter().enumerate() {
        let norm = row.norm();
        if (norm - 1.0).abs() > UNIT_ROW_TOL {
            return Err(Error::NonUnitRow { row: i, norm });
        }
        for &v in row.iter() {
            let p = v * v;
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    let h = total / (d as f64 * (d as f64).ln());
    Ok((1.0 - h).clamp(0.0, 1.0))
}
