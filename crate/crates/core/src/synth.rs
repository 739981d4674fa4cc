//! Seeded synthetic data: Gaussian matrices, Haar-random orthogonal matrices
//! and smooth rotation paths. Used to build test fixtures and invariance
//! witnesses.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // fill row by row so the stream order matches the C-order layout
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of R's diagonal folded into Q.
pub fn orthogonal<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, dim, dim).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random skew-symmetric matrix.
pub fn skew<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let g = gaussian(rng, dim, dim);
    (&g - g.transpose()) * 0.5
}

/// Cayley transform `(I - tS/2)^-1 (I + tS/2)` of a skew-symmetric `S`.
/// Orthogonal for every `t` and equal to the identity at `t = 0`.
pub fn cayley(s: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = s.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let half = s * (t * 0.5);
    let lhs = &eye - &half;
    let rhs = &eye + &half;
    lhs.lu()
        .solve(&rhs)
        .expect("I - tS/2 is invertible for skew S")
}

/// Rotation of the plane by `angle` radians.
pub fn rotation_2d(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}
