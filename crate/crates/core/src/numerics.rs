//! Deterministic kernels shared by the metrics: column centering, cosine
//! top-k neighbor search and the orthogonal polar factor.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows with a Euclidean norm at or below this are rejected by cosine search.
pub const ZERO_NORM_TOL: f64 = 1e-12;

const SVD_MAX_ITERS: usize = 10_000;

/// Subtract each column's mean over rows.
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// The k nearest neighbors of every row, one ascending index list per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSets {
    pub k: usize,
    pub sets: Vec<Vec<usize>>,
}

impl NeighborSets {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k + 1 > n {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

/// Rows scaled to unit length, stored row-major.
fn unit_rows(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, d) = m.shape();
    let mut out = vec![0.0; n * d];
    for (i, row) in m.row_iter().enumerate() {
        let norm = row.norm();
        if norm <= ZERO_NORM_TOL {
            return Err(Error::ZeroNormRow { row: i });
        }
        for (j, v) in row.iter().enumerate() {
            out[i * d + j] = v / norm;
        }
    }
    Ok(out)
}

/// Descending similarity, then ascending index.
fn neighbor_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Exact cosine k-nearest neighbors of each row, excluding the row itself.
///
/// Equal similarities are broken toward the smaller index, and each returned
/// set is sorted ascending.
pub fn topk_cosine_neighbors(m: &DMatrix<f64>, k: usize) -> Result<NeighborSets> {
    let (n, d) = m.shape();
    check_k(k, n)?;
    let unit = unit_rows(m)?;
    let sets = (0..n)
        .into_par_iter()
        .map(|i| {
            let query = &unit[i * d..(i + 1) * d];
            let mut candidates: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let other = &unit[j * d..(j + 1) * d];
                    let sim = query.iter().zip(other).map(|(a, b)| a * b).sum::<f64>();
                    (sim, j)
                })
                .collect();
            if k < candidates.len() {
                candidates.select_nth_unstable_by(k - 1, neighbor_order);
            }
            let mut set: Vec<usize> = candidates[..k].iter().map(|c| c.1).collect();
            set.sort_unstable();
            set
        })
        .collect();
    Ok(NeighborSets { k, sets })
}

/// Size of the intersection of two ascending index lists.
pub(crate) fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common
}

/// Orthogonal factor `U·Vᵀ` of `C = U·Σ·Vᵀ` together with the singular values.
#[derive(Clone, Debug)]
pub struct PolarFactor {
    pub orthogonal: DMatrix<f64>,
    pub singular_values: DVector<f64>,
}

impl PolarFactor {
    /// True when the smallest singular value is below `1e-10` of the largest,
    /// in which case the maximizer of `tr(OᵀC)` is not unique.
    pub fn is_degenerate(&self) -> bool {
        let max = self.singular_values.max();
        let min = self.singular_values.min();
        max <= 0.0 || min < 1e-10 * max
    }
}

pub fn polar_factor(c: &DMatrix<f64>) -> Result<PolarFactor> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "orthogonal factor of a non-finite matrix".into(),
        ));
    }
    if !c.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "orthogonal factor needs a square matrix, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let svd = SVD::try_new(c.clone(), true, true, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or(Error::SvdNonConvergence)?;
    let u = svd.u.as_ref().ok_or(Error::SvdNonConvergence)?;
    let v_t = svd.v_t.as_ref().ok_or(Error::SvdNonConvergence)?;
    Ok(PolarFactor {
        orthogonal: u * v_t,
        singular_values: svd.singular_values.clone(),
    })
}

/// The orthogonal matrix maximizing `tr(OᵀC)`.
pub fn orthogonal_factor(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    polar_factor(c).map(|p| p.orthogonal)
}
