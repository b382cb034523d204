//! Dense symmetric positive-semidefinite linear algebra.
//!
//! [`SymPsd`] validates its input once and caches the eigenpairs, sorted in
//! descending order. Everything else in the crate (pseudoinverses, square
//! roots, condition numbers, range projections) is read off the cached
//! eigenpairs, so no matrix is factorized twice.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerance::ToleranceConfig;

/// A validated symmetric positive-semidefinite matrix with cached eigenpairs.
#[derive(Debug, Clone)]
pub struct SymPsd {
    matrix: DMatrix<f64>,
    tol: ToleranceConfig,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    complete: bool,
}

/// Eigendecomposition with eigenvalue clusters and numerical rank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, one column per eigenvalue.
    pub eigenvectors: DMatrix<f64>,
    /// Index groups of numerically equal positive eigenvalues, in descending order.
    pub clusters: Vec<Vec<usize>>,
    /// Indices of eigenvalues treated as zero.
    pub zero_cluster: Vec<usize>,
    /// Number of eigenvalues above the rank cutoff.
    pub rank: usize,
    /// Relative rank cutoff that was applied.
    pub rank_tol: f64,
    /// False when eigenvectors of the zero eigenvalue were not computed
    /// (decompositions obtained from a thin factor).
    pub complete: bool,
}

impl SpectralDecomposition {
    /// Number of distinct positive eigenvalues.
    pub fn degree(&self) -> usize {
        self.clusters.len()
    }

    /// Orthonormal basis of the eigenspace of cluster `i`.
    pub fn cluster_basis(&self, i: usize) -> DMatrix<f64> {
        let idx = &self.clusters[i];
        DMatrix::from_fn(self.eigenvectors.nrows(), idx.len(), |r, c| {
            self.eigenvectors[(r, idx[c])]
        })
    }

    /// Mean eigenvalue of cluster `i`.
    pub fn cluster_value(&self, i: usize) -> f64 {
        let idx = &self.clusters[i];
        idx.iter().map(|&k| self.eigenvalues[k]).sum::<f64>() / idx.len() as f64
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigenpairs of a symmetric matrix in ascending order.
pub(crate) fn symmetric_eigenpairs(sym: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let evd = to_faer(sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("finite symmetric input");
    let values = evd.S().column_vector();
    let vectors = evd.U();
    (
        DVector::from_fn(n, |i, _| values[i]),
        DMatrix::from_fn(n, n, |i, j| vectors[(i, j)]),
    )
}

/// Singular values in descending order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    to_faer(m).singular_values().expect("finite input")
}

/// Minimum-norm least-squares solution `M^+ c`, treating singular values below
/// `rank_tol * sigma_max` as zero.
pub(crate) fn pinv_solve(m: &DMatrix<f64>, c: &DVector<f64>, rank_tol: f64) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(m.ncols());
    }
    let svd = to_faer(m).thin_svd().expect("finite input");
    let (u, sv, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let cutoff = (rank_tol * sv[0]).max(f64::MIN_POSITIVE);
    let mut x = DVector::zeros(m.ncols());
    for k in 0..sv.nrows() {
        if sv[k] <= cutoff {
            break;
        }
        let coef = (0..m.nrows()).map(|i| u[(i, k)] * c[i]).sum::<f64>() / sv[k];
        for j in 0..m.ncols() {
            x[j] += coef * v[(j, k)];
        }
    }
    x
}

/// Largest column norm of `A V - V diag(values)`.
fn eigen_residual(sym: &DMatrix<f64>, values: &DVector<f64>, vectors: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, v) in vectors.column_iter().enumerate() {
        worst = worst.max((sym * v - v * values[j]).norm());
    }
    worst
}

/// Sorts eigenpairs in descending order and fixes each eigenvector's sign so
/// that its largest-magnitude entry is positive.
fn sort_eigenpairs(values: &DVector<f64>, vectors: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let sorted_values = DVector::from_iterator(order.len(), order.iter().map(|&i| values[i]));
    let mut sorted_vectors = DMatrix::zeros(vectors.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        let col = vectors.column(i);
        let mut pivot = 0;
        for r in 0..col.len() {
            if col[r].abs() > col[pivot].abs() + 1e-14 {
                pivot = r;
            }
        }
        let sign = if !col.is_empty() && col[pivot] < 0.0 { -1.0 } else { 1.0 };
        sorted_vectors.set_column(c, &(col * sign));
    }
    (sorted_values, sorted_vectors)
}

impl SymPsd {
    /// Validates symmetry and positive semidefiniteness, then caches eigenpairs.
    ///
    /// The stored matrix is the symmetrized input `(A + A^T) / 2`.
    pub fn new(matrix: DMatrix<f64>, tol: &ToleranceConfig) -> Result<Self> {
        tol.validate()?;
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        check_finite(&matrix, "matrix")?;
        let scale = matrix.amax();
        let asymmetry = (&matrix - matrix.transpose()).amax();
        let threshold = tol.sym_tol * scale.max(f64::MIN_POSITIVE);
        if asymmetry > threshold {
            return Err(Error::NotSymmetric { asymmetry, threshold });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let (values, vectors) = symmetric_eigenpairs(&sym);
        let residual = eigen_residual(&sym, &values, &vectors);
        let threshold = tol.rec_tol * values.amax().max(f64::MIN_POSITIVE);
        if residual > threshold {
            return Err(Error::EigenFailure { residual, threshold });
        }
        let (values, vectors) = sort_eigenpairs(&values, &vectors);
        let (lmax, lmin) = match values.len() {
            0 => (0.0, 0.0),
            n => (values[0], values[n - 1]),
        };
        let psd_threshold = -tol.psd_tol * lmax.abs().max(lmin.abs());
        if lmin < psd_threshold {
            return Err(Error::NotPsd {
                min_eigenvalue: lmin,
                threshold: psd_threshold,
            });
        }
        Ok(Self {
            matrix: sym,
            tol: *tol,
            eigenvalues: values.map(|v| v.max(0.0)),
            eigenvectors: vectors,
            complete: true,
        })
    }

    /// Builds `V diag(values) V^T` from orthonormal columns `V` and nonnegative values.
    ///
    /// When `V` has fewer columns than rows, the remaining eigenvalues are zero
    /// and their eigenvectors are not stored.
    pub fn from_eigen(vectors: DMatrix<f64>, values: DVector<f64>, tol: &ToleranceConfig) -> Result<Self> {
        tol.validate()?;
        if vectors.ncols() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "from_eigen eigenvalue count",
                expected: vectors.ncols(),
                found: values.len(),
            });
        }
        check_finite(&vectors, "eigenvectors")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eigenvalues"));
        }
        if let Some(&bad) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::NotPsd {
                min_eigenvalue: bad,
                threshold: 0.0,
            });
        }
        let deviation = orthonormality_deviation(&vectors);
        if deviation > tol.ortho_tol.max(1e-12) * 10.0 {
            return Err(Error::NotOrthonormal { deviation });
        }
        let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| vectors[(r, c)] * values[c]);
        let matrix = &scaled * vectors.transpose();
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let (values, vectors) = sort_eigenpairs(&values, &vectors);
        let complete = vectors.ncols() == vectors.nrows();
        Ok(Self {
            matrix,
            tol: *tol,
            eigenvalues: values,
            eigenvectors: vectors,
            complete,
        })
    }

    /// Builds `F^T F` from a factor `F`.
    ///
    /// When `F` has fewer rows than columns, the eigenpairs come from a QR
    /// factorization `F^T = Q R` and the small eigensolve of `R R^T`. This is
    /// how sample moment matrices with `n < p` are formed without a `p x p`
    /// eigensolve.
    pub fn from_factor(factor: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<Self> {
        tol.validate()?;
        check_finite(factor, "factor")?;
        let p = factor.ncols();
        let matrix = factor.transpose() * factor;
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        if factor.nrows() == 0 || p == 0 {
            return Ok(Self {
                eigenvalues: DVector::zeros(0),
                eigenvectors: DMatrix::zeros(p, 0),
                complete: p == 0,
                matrix,
                tol: *tol,
            });
        }
        let (values, vectors) = if factor.nrows() < p {
            let qr = factor.transpose().qr();
            let q = qr.q();
            let r = qr.r();
            let gram = &r * r.transpose();
            let (values, vectors) = symmetric_eigenpairs(&((&gram + gram.transpose()) * 0.5));
            (values.map(|v| v.max(0.0)), q * vectors)
        } else {
            let (values, vectors) = symmetric_eigenpairs(&matrix);
            (values.map(|v| v.max(0.0)), vectors)
        };
        let (values, vectors) = sort_eigenpairs(&values, &vectors);
        let complete = vectors.ncols() == p;
        Ok(Self {
            matrix,
            tol: *tol,
            eigenvalues: values,
            eigenvectors: vectors,
            complete,
        })
    }

    /// The `p x p` identity.
    pub fn identity(p: usize, tol: &ToleranceConfig) -> Self {
        Self {
            matrix: DMatrix::identity(p, p),
            tol: *tol,
            eigenvalues: DVector::from_element(p, 1.0),
            eigenvectors: DMatrix::identity(p, p),
            complete: true,
        }
    }

    /// The `p x p` zero matrix.
    pub fn zeros(p: usize, tol: &ToleranceConfig) -> Self {
        Self {
            matrix: DMatrix::zeros(p, p),
            tol: *tol,
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(p, 0),
            complete: p == 0,
        }
    }

    /// The stored (symmetrized) matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Matrix dimension `p`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Tolerances the matrix was built with.
    pub fn tol(&self) -> &ToleranceConfig {
        &self.tol
    }

    /// Cached eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Cached eigenvectors matching [`SymPsd::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Largest eigenvalue, which is also the operator norm.
    pub fn op_norm(&self) -> f64 {
        self.eigenvalues.iter().next().copied().unwrap_or(0.0).max(0.0)
    }

    /// Trace of the matrix.
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Rank cutoff `rank_tol * lambda_max`.
    pub fn rank_cutoff(&self) -> f64 {
        self.tol.rank_tol * self.op_norm()
    }

    /// Numerical rank.
    pub fn rank(&self) -> usize {
        let cutoff = self.rank_cutoff();
        if self.op_norm() <= 0.0 {
            return 0;
        }
        self.eigenvalues.iter().take_while(|&&v| v > cutoff).count()
    }

    /// Smallest eigenvalue above the rank cutoff.
    pub fn min_positive_eigenvalue(&self) -> Option<f64> {
        let r = self.rank();
        (r > 0).then(|| self.eigenvalues[r - 1])
    }

    /// Orthonormal basis of the range (`p x rank`).
    pub fn range_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.rank()).into_owned()
    }

    fn apply_spectral<F: Fn(f64) -> f64>(&self, b: &DVector<f64>, f: F) -> DVector<f64> {
        let r = self.rank();
        let v = self.eigenvectors.columns(0, r);
        let mut coef = v.transpose() * b;
        for i in 0..r {
            coef[i] *= f(self.eigenvalues[i]);
        }
        v * coef
    }

    /// `A^+ b`.
    pub fn apply_pinv(&self, b: &DVector<f64>) -> DVector<f64> {
        self.apply_spectral(b, |l| 1.0 / l)
    }

    /// `A^{1/2} b`.
    pub fn apply_sqrt(&self, b: &DVector<f64>) -> DVector<f64> {
        self.apply_spectral(b, f64::sqrt)
    }

    /// `(A^+)^{1/2} b`.
    pub fn apply_pinv_sqrt(&self, b: &DVector<f64>) -> DVector<f64> {
        self.apply_spectral(b, |l| 1.0 / l.sqrt())
    }

    /// Orthogonal projection of `b` onto the range.
    pub fn project_range(&self, b: &DVector<f64>) -> DVector<f64> {
        self.apply_spectral(b, |_| 1.0)
    }

    /// `A^{1/2}` as a dense matrix.
    pub fn sqrt_matrix(&self) -> DMatrix<f64> {
        let r = self.rank();
        let v = self.eigenvectors.columns(0, r);
        let scaled = DMatrix::from_fn(v.nrows(), r, |i, j| v[(i, j)] * self.eigenvalues[j].sqrt());
        &scaled * v.transpose()
    }

    /// Relative residual `||A A^+ b - b|| / ||b||`.
    pub fn range_residual(&self, b: &DVector<f64>) -> Result<f64> {
        let nb = b.norm();
        if nb == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok((self.project_range(b) - b).norm() / nb)
    }

    /// Quadratic form `v^T A v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.matrix * v))
    }
}

/// Returns the eigendecomposition of `a` with clusters and rank computed under `tol`.
pub fn eigendecompose(a: &SymPsd, tol: &ToleranceConfig) -> SpectralDecomposition {
    let values: Vec<f64> = a.eigenvalues.iter().copied().collect();
    let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = tol.rank_tol * lmax;
    let rank = if lmax > 0.0 {
        values.iter().take_while(|&&v| v > cutoff).count()
    } else {
        0
    };
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..rank {
        let joins = i > 0 && (values[i - 1] - values[i]) < tol.cluster_tol * values[i - 1];
        match clusters.last_mut() {
            Some(last) if joins => last.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    SpectralDecomposition {
        eigenvalues: values.clone(),
        eigenvectors: a.eigenvectors.clone(),
        clusters,
        zero_cluster: (rank..values.len()).collect(),
        rank,
        rank_tol: tol.rank_tol,
        complete: a.complete,
    }
}

/// Moore-Penrose pseudoinverse.
pub fn pseudoinverse(a: &SymPsd, tol: &ToleranceConfig) -> SymPsd {
    let r = a.rank();
    let vectors = a.eigenvectors.columns(0, r).into_owned();
    let values = DVector::from_iterator(r, a.eigenvalues.iter().take(r).map(|l| 1.0 / l));
    SymPsd::from_eigen(vectors, values, tol).expect("eigenvectors of a validated matrix are orthonormal")
}

/// Condition number `lambda_max / lambda_min^+` of the matrix as given.
///
/// Callers take square roots to obtain the condition number of `A^{1/2}`.
pub fn condition_number(a: &SymPsd) -> Result<f64> {
    match a.min_positive_eigenvalue() {
        Some(lmin) => Ok(a.op_norm() / lmin),
        None => Err(Error::ZeroMatrix),
    }
}

/// Effective rank `Tr(A) / ||A||_op`.
pub fn effective_rank(a: &SymPsd) -> Result<f64> {
    let norm = a.op_norm();
    if norm <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(a.trace() / norm)
}

/// Operator norm of a symmetric matrix, `max |lambda_i|`.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    symmetric_eigenpairs(&sym).0.amax()
}

/// Operator norm (largest singular value) of a general matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `||B^T B - I||_op` for a matrix with orthonormal columns.
pub fn orthonormality_deviation(basis: &DMatrix<f64>) -> f64 {
    let d = basis.ncols();
    if d == 0 {
        return 0.0;
    }
    let gap = basis.transpose() * basis - DMatrix::identity(d, d);
    let frobenius = gap.norm();
    if frobenius <= 1e-13 {
        return frobenius;
    }
    sym_op_norm(&gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn toy_sigma(rho: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 2.0])
    }

    fn random_orthogonal(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
        g.qr().q()
    }

    #[test]
    fn diagonal_clusters_and_rank() {
        let a = SymPsd::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0])), &tol()).unwrap();
        let d = eigendecompose(&a, &tol());
        assert_eq!(d.eigenvalues, vec![2.0, 1.0, 1.0]);
        assert_eq!(d.clusters, vec![vec![0], vec![1, 2]]);
        assert_eq!(d.rank, 3);
        assert!(d.zero_cluster.is_empty());
    }

    #[test]
    fn toy_covariance_eigenvalues() {
        let a = SymPsd::new(toy_sigma(0.98), &tol()).unwrap();
        let ev = a.eigenvalues();
        assert_relative_eq!(ev[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 1.98, epsilon = 1e-12);
        assert_relative_eq!(ev[2], 0.02, epsilon = 1e-12);
        assert_eq!(a.rank(), 3);
    }

    #[test]
    fn recovers_planted_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_orthogonal(6, &mut rng);
            let lambda = [9.0, 5.0, 3.0, 1.0, 0.5, 0.0];
            let m = &q * DMatrix::from_diagonal(&DVector::from_row_slice(&lambda)) * q.transpose();
            let a = SymPsd::new(m, &tol()).unwrap();
            for (i, l) in lambda.iter().enumerate() {
                assert!((a.eigenvalues()[i] - l).abs() <= 1e-10 * 9.0);
            }
            assert_eq!(a.rank(), 5);
        }
    }

    #[test]
    fn decomposition_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = DMatrix::<f64>::from_fn(7, 4, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x
        });
        let a = SymPsd::new(&g * g.transpose(), &tol()).unwrap();
        let d = eigendecompose(&a, &tol());
        let v = &d.eigenvectors;
        let rec = v * DMatrix::from_diagonal(&DVector::from_vec(d.eigenvalues.clone())) * v.transpose();
        assert!(sym_op_norm(&(rec - a.matrix())) <= 1e-10 * a.op_norm());
        assert!(orthonormality_deviation(v) <= 1e-10);
        assert_eq!(d.rank, 4);
        assert_eq!(d.zero_cluster.len(), 3);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymPsd::new(m, &tol()), Err(Error::NotSymmetric { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]);
        assert!(matches!(SymPsd::new(m, &tol()), Err(Error::NotPsd { .. })));
        let m = DMatrix::from_row_slice(2, 3, &[1.0; 6]);
        assert!(matches!(SymPsd::new(m, &tol()), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn pseudoinverse_examples() {
        let id = SymPsd::identity(4, &tol());
        assert_relative_eq!(
            pseudoinverse(&id, &tol()).matrix().clone(),
            DMatrix::identity(4, 4),
            epsilon = 1e-14
        );

        let d = SymPsd::new(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]), &tol()).unwrap();
        let pd = pseudoinverse(&d, &tol());
        assert_relative_eq!(
            pd.matrix().clone(),
            DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.0]),
            epsilon = 1e-14
        );

        let rank_two = SymPsd::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            &tol(),
        )
        .unwrap();
        let pinv = pseudoinverse(&rank_two, &tol());
        let expected = DMatrix::from_row_slice(3, 3, &[0.25, 0.25, 0.0, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(pinv.matrix().clone(), expected, epsilon = 1e-14);
        let a = rank_two.matrix();
        let p = pinv.matrix();
        assert_relative_eq!(a * p * a, a.clone(), epsilon = 1e-12);
        assert_relative_eq!(p * a * p, p.clone(), epsilon = 1e-12);
        assert_relative_eq!((a * p).transpose(), a * p, epsilon = 1e-12);
        assert_relative_eq!((p * a).transpose(), p * a, epsilon = 1e-12);
    }

    #[test]
    fn condition_number_examples() {
        let id = SymPsd::identity(3, &tol());
        assert_eq!(condition_number(&id).unwrap(), 1.0);
        let rho: f64 = 0.98;
        let sigma_y = DMatrix::from_row_slice(3, 3, &[1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let a = SymPsd::new(sigma_y, &tol()).unwrap();
        assert_relative_eq!(
            condition_number(&a).unwrap(),
            (1.0 + rho) / (1.0 - rho),
            max_relative = 1e-12
        );
        assert_relative_eq!(condition_number(&a).unwrap().sqrt(), 99f64.sqrt(), max_relative = 1e-12);
        assert!(matches!(
            condition_number(&SymPsd::zeros(2, &tol())),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn effective_rank_examples() {
        for rho in [0.0, 0.3, 0.98] {
            let a = SymPsd::new(toy_sigma(rho), &tol()).unwrap();
            assert_relative_eq!(effective_rank(&a).unwrap(), 2.0, epsilon = 1e-12);
        }
        assert_relative_eq!(effective_rank(&SymPsd::identity(5, &tol())).unwrap(), 5.0);
        assert!(matches!(
            effective_rank(&SymPsd::zeros(2, &tol())),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn factor_route_matches_direct_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = DMatrix::from_fn(4, 9, |_, _| StandardNormal.sample(&mut rng));
        let via_factor = SymPsd::from_factor(&f, &tol()).unwrap();
        let direct = SymPsd::new(f.transpose() * &f, &tol()).unwrap();
        assert_eq!(via_factor.rank(), 4);
        assert!(!via_factor.eigenvalues().is_empty());
        for i in 0..4 {
            assert_relative_eq!(
                via_factor.eigenvalues()[i],
                direct.eigenvalues()[i],
                max_relative = 1e-10
            );
        }
        let b = f.transpose() * DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert_relative_eq!(via_factor.apply_pinv(&b), direct.apply_pinv(&b), max_relative = 1e-8);
    }

    #[test]
    fn scale_invariance_of_condition_number() {
        let a = SymPsd::new(toy_sigma(0.5), &tol()).unwrap();
        let b = SymPsd::new(toy_sigma(0.5) * 7.5, &tol()).unwrap();
        assert_relative_eq!(
            condition_number(&a).unwrap(),
            condition_number(&b).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn operator_norms_agree() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, -4.0]);
        let svd_max = m.clone().svd(false, false).singular_values.max();
        assert_relative_eq!(singular_values(&m)[0], svd_max, max_relative = 1e-12);
        assert_relative_eq!(sym_op_norm(&m), svd_max, max_relative = 1e-12);
        assert_relative_eq!(op_norm(&m), svd_max, max_relative = 1e-12);
        let wide = DMatrix::from_row_slice(1, 3, &[3.0, 0.0, 4.0]);
        assert_relative_eq!(op_norm(&wide), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn rank_deficient_wide_factor_reconstructs() {
        for seed in 0..40 {
            let mut rng = crate::rng::stream(seed, 0);
            let mut f = crate::rng::normal_matrix(5, 12, &mut rng);
            let means = f.row_sum() / 5.0;
            for mut row in f.row_iter_mut() {
                row -= &means;
            }
            let a = SymPsd::from_factor(&f, &ToleranceConfig::default()).unwrap();
            let v = a.eigenvectors();
            let rebuilt = v * DMatrix::from_diagonal(a.eigenvalues()) * v.transpose();
            assert!((rebuilt - a.matrix()).amax() < 1e-12, "seed {seed}");
            assert_eq!(a.rank(), 4);
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn nearly_diagonal_input_keeps_eigenpairs_together() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0000000000000009,
                3.0964814046186006e-16,
                3.3562313152958193e-16,
                3.0964814046186006e-16,
                0.04399050215984755,
                3.5100958334811615e-17,
                3.3562313152958193e-16,
                3.5100958334811615e-17,
                0.0019351642802754865,
            ],
        );
        let a = SymPsd::new(m.clone(), &ToleranceConfig::default()).unwrap();
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let x = a.apply_pinv(&b);
        let expected = DVector::from_vec(vec![1.0 / m[(0, 0)], 1.0 / m[(1, 1)], 1.0 / m[(2, 2)]]);
        assert!((x - &expected).norm() < 1e-9 * expected.norm());
    }
}
