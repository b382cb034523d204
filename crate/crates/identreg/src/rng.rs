//! Seeded random streams and the Gaussian draws used by Monte Carlo routines.
//!
//! Every replicate, probe or trial draws from its own ChaCha stream selected
//! by `(seed, index)`. Results therefore do not depend on how work is split
//! across threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Independent random stream number `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One standard normal draw.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Matrix of i.i.d. standard normal entries, filled row by row.
pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| normal(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Vector of i.i.d. standard normal entries.
pub fn normal_vector(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| normal(rng)))
}

/// Uniform draw on the unit sphere of `R^len`.
pub fn unit_vector(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = normal_vector(len, rng);
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Symmetric matrix from the Gaussian orthogonal ensemble, `(G + G^T) / 2`.
pub fn goe_matrix(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = normal_matrix(p, p, rng);
    (&g + g.transpose()) * 0.5
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with
/// columns signed so that the triangular factor has a positive diagonal.
pub fn haar_orthogonal(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = normal_matrix(p, p, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = (0..4).map(|_| normal(&mut stream(1, 0))).collect();
        let b: Vec<f64> = (0..4).map(|_| normal(&mut stream(1, 0))).collect();
        assert_eq!(a, b);
        let mut s0 = stream(1, 0);
        let mut s1 = stream(1, 1);
        assert_ne!(normal(&mut s0), normal(&mut s1));
    }

    #[test]
    fn haar_matrix_is_orthogonal_with_positive_r() {
        let mut rng = stream(3, 0);
        let q = haar_orthogonal(8, &mut rng);
        let dev = (q.transpose() * &q - DMatrix::identity(8, 8)).amax();
        assert!(dev < 1e-13);
        let mut rng = stream(3, 0);
        let g = normal_matrix(8, 8, &mut rng);
        let r = q.transpose() * g;
        for j in 0..8 {
            assert!(r[(j, j)] > 0.0);
        }
    }

    #[test]
    fn unit_vector_has_unit_norm() {
        let v = unit_vector(5, &mut stream(2, 9));
        assert!((v.norm() - 1.0).abs() < 1e-15);
    }
}
