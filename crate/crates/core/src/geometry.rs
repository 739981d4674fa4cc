//! Basis-invariant similarity: linear HSIC, linear CKA and k-NN overlap.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    center_columns, check_k, sorted_intersection, topk_cosine_neighbors, NeighborSets,
};

/// k values reported when a caller does not choose any.
pub const DEFAULT_K: [usize; 3] = [5, 10, 50];

/// Self-HSIC at or below this marks a constant representation.
const DEGENERATE_HSIC: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComputeForm {
    /// `N x N` kernel matrices, `tr(K_X H K_Y H)`.
    Gram,
    /// `‖X_cᵀ Y_c‖_F²` without materializing kernels.
    Feature,
}

fn same_n(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<usize> {
    if x.nrows() != y.nrows() {
        return Err(Error::TokenCountMismatch {
            x: x.nrows(),
            y: y.nrows(),
        });
    }
    if x.nrows() < 2 {
        return Err(Error::Invalid(format!(
            "HSIC needs N >= 2, got {}",
            x.nrows()
        )));
    }
    Ok(x.nrows())
}

fn scale(n: usize) -> f64 {
    let m = (n - 1) as f64;
    m * m
}

/// Linear-kernel HSIC via centered features.
pub fn hsic_linear(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let n = same_n(x, y)?;
    Ok(hsic_centered(&center_columns(x), &center_columns(y)) / scale(n))
}

fn hsic_centered(xc: &DMatrix<f64>, yc: &DMatrix<f64>) -> f64 {
    (xc.transpose() * yc).norm_squared()
}

/// Linear-kernel HSIC from raw Gram matrices, `tr(K_X H K_Y H) / (N−1)²`.
pub fn hsic_gram(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let n = same_n(x, y)?;
    let kx = x * x.transpose();
    let ky = y * y.transpose();
    Ok(gram_trace(&kx, &ky) / scale(n))
}

/// `tr(K H L H)` for symmetric `K`, `L`. `H` is idempotent, so this equals
/// the elementwise inner product of `H K H` with `L`.
fn gram_trace(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    double_center(k).dot(l)
}

fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows() as f64;
    let row_means: Vec<f64> = k.row_iter().map(|r| r.sum() / n).collect();
    let col_means: Vec<f64> = k.column_iter().map(|c| c.sum() / n).collect();
    let grand = row_means.iter().sum::<f64>() / n;
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        k[(i, j)] - row_means[i] - col_means[j] + grand
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaResult {
    pub value: f64,
    pub hsic_xy: f64,
    pub hsic_xx: f64,
    pub hsic_yy: f64,
    pub compute_form: ComputeForm,
}

/// Linear CKA, choosing the feature form when `N >= D` for both inputs.
pub fn linear_cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<CkaResult> {
    let n = x.nrows();
    let form = if n >= x.ncols() && n >= y.ncols() {
        ComputeForm::Feature
    } else {
        ComputeForm::Gram
    };
    linear_cka_with(x, y, form)
}

pub fn linear_cka_with(x: &DMatrix<f64>, y: &DMatrix<f64>, form: ComputeForm) -> Result<CkaResult> {
    let n = same_n(x, y)?;
    let (hsic_xy, hsic_xx, hsic_yy) = match form {
        ComputeForm::Feature => {
            let (xc, yc) = (center_columns(x), center_columns(y));
            (
                hsic_centered(&xc, &yc),
                hsic_centered(&xc, &xc),
                hsic_centered(&yc, &yc),
            )
        }
        ComputeForm::Gram => {
            let kx = x * x.transpose();
            let ky = y * y.transpose();
            let (kxc, kyc) = (double_center(&kx), double_center(&ky));
            (kxc.dot(&ky), kxc.dot(&kx), kyc.dot(&ky))
        }
    };
    let s = scale(n);
    let (hsic_xy, hsic_xx, hsic_yy) = (hsic_xy / s, hsic_xx / s, hsic_yy / s);
    if hsic_xx <= DEGENERATE_HSIC {
        return Err(Error::ConstantRepresentation("X"));
    }
    if hsic_yy <= DEGENERATE_HSIC {
        return Err(Error::ConstantRepresentation("Y"));
    }
    Ok(CkaResult {
        value: hsic_xy / (hsic_xx.sqrt() * hsic_yy.sqrt()),
        hsic_xy,
        hsic_xx,
        hsic_yy,
        compute_form: form,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnOverlapResult {
    pub k: usize,
    pub mean_overlap: f64,
    pub per_point: Vec<f64>,
}

/// Mean Jaccard index between the cosine k-NN sets of each row under `x` and `y`.
pub fn knn_overlap(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<KnnOverlapResult> {
    let n = same_n(x, y)?;
    check_k(k, n)?;
    let nx = topk_cosine_neighbors(x, k)?;
    let ny = topk_cosine_neighbors(y, k)?;
    overlap_of(&nx, &ny)
}

/// Jaccard overlap of two precomputed neighbor structures.
pub fn overlap_of(nx: &NeighborSets, ny: &NeighborSets) -> Result<KnnOverlapResult> {
    if nx.k != ny.k || nx.len() != ny.len() {
        return Err(Error::ShapeMismatch(format!(
            "neighbor sets (N={}, k={}) vs (N={}, k={})",
            nx.len(),
            nx.k,
            ny.len(),
            ny.k
        )));
    }
    let k = nx.k;
    let per_point: Vec<f64> = nx
        .sets
        .iter()
        .zip(&ny.sets)
        .map(|(a, b)| {
            let common = sorted_intersection(a, b);
            common as f64 / (2 * k - common) as f64
        })
        .collect();
    let mean_overlap = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(KnnOverlapResult {
        k,
        mean_overlap,
        per_point,
    })
}
