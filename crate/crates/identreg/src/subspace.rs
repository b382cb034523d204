//! Orthonormal subspaces, orthogonal projectors, principal angles and Krylov
//! bases.
//!
//! Subspaces are always compared through principal angles, never through
//! their bases, because bases are only defined up to rotation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectral::{eigendecompose, op_norm, orthonormality_deviation, SymPsd};
use crate::tolerance::ToleranceConfig;

/// A linear subspace of `R^p` stored through an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wraps a basis after checking `||B^T B - I||_op <= ortho_tol`.
    pub fn new(basis: DMatrix<f64>, tol: &ToleranceConfig) -> Result<Self> {
        if basis.ncols() > basis.nrows() {
            return Err(Error::DimensionMismatch {
                context: "subspace dimension exceeds ambient dimension",
                expected: basis.nrows(),
                found: basis.ncols(),
            });
        }
        let deviation = orthonormality_deviation(&basis);
        if deviation > tol.ortho_tol {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { basis })
    }

    /// Wraps a basis that is orthonormal by construction.
    pub(crate) fn from_orthonormal(basis: DMatrix<f64>) -> Self {
        Self { basis }
    }

    /// The zero-dimensional subspace of `R^p`.
    pub fn zero(p: usize) -> Self {
        Self {
            basis: DMatrix::zeros(p, 0),
        }
    }

    /// Orthonormal basis of the span of the columns of `vectors`.
    ///
    /// Columns are processed in order with two Gram-Schmidt passes; a column
    /// whose orthogonal residual is below `rank_tol` times the largest column
    /// norm is dropped.
    pub fn span(vectors: &DMatrix<f64>, tol: &ToleranceConfig) -> Self {
        let p = vectors.nrows();
        let scale = (0..vectors.ncols())
            .map(|j| vectors.column(j).norm())
            .fold(0.0, f64::max);
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for j in 0..vectors.ncols() {
            let mut w = vectors.column(j).into_owned();
            orthogonalize(&mut w, &cols);
            let nw = w.norm();
            if nw > tol.rank_tol * scale && nw > 0.0 && cols.len() < p {
                cols.push(w / nw);
            }
        }
        Self::from_columns(p, &cols)
    }

    fn from_columns(p: usize, cols: &[DVector<f64>]) -> Self {
        let mut basis = DMatrix::zeros(p, cols.len());
        for (j, c) in cols.iter().enumerate() {
            basis.set_column(j, c);
        }
        Self { basis }
    }

    /// Ambient dimension `p`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Subspace dimension `d`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// The `p x d` orthonormal basis.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Span of the first `d` basis vectors.
    pub fn prefix(&self, d: usize) -> Subspace {
        Self {
            basis: self.basis.columns(0, d.min(self.dim())).into_owned(),
        }
    }

    /// Orthogonal projection `B B^T v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * v)
    }
}

/// Removes from `w` its components along the orthonormal vectors `cols`,
/// using two modified Gram-Schmidt passes.
fn orthogonalize(w: &mut DVector<f64>, cols: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in cols {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// Orthogonal projector `B B^T`.
pub fn projector(s: &Subspace) -> SymPsd {
    let tol = ToleranceConfig::default();
    SymPsd::from_eigen(s.basis.clone(), DVector::from_element(s.dim(), 1.0), &tol)
        .expect("subspace bases are orthonormal")
}

/// Principal angle `arcsin ||P_1 - P_2||_op` between subspaces of equal dimension.
///
/// For equal dimensions `||P_1 - P_2||_op = ||(I - P_2) B_1||_op`, which is
/// evaluated on a `p x d` matrix and keeps full relative accuracy for tiny
/// angles.
pub fn principal_angle(s1: &Subspace, s2: &Subspace) -> Result<f64> {
    if s1.ambient_dim() != s2.ambient_dim() || s1.dim() != s2.dim() {
        return Err(incompatible(s1, s2));
    }
    Ok(residual_angle(s1, s2))
}

/// Largest angle between `inner` and the larger subspace `outer`; zero
/// exactly when `inner` is contained in `outer`.
pub fn embedding_angle(inner: &Subspace, outer: &Subspace) -> Result<f64> {
    if inner.ambient_dim() != outer.ambient_dim() || inner.dim() > outer.dim() {
        return Err(incompatible(inner, outer));
    }
    Ok(residual_angle(inner, outer))
}

/// `||P_1 - P_2||_op` for subspaces of equal dimension.
pub fn projector_distance(s1: &Subspace, s2: &Subspace) -> Result<f64> {
    principal_angle(s1, s2).map(f64::sin)
}

fn residual_angle(inner: &Subspace, outer: &Subspace) -> f64 {
    if inner.dim() == 0 {
        return 0.0;
    }
    let residual = &inner.basis - &outer.basis * (outer.basis.transpose() * &inner.basis);
    op_norm(&residual).clamp(0.0, 1.0).asin()
}

fn incompatible(a: &Subspace, b: &Subspace) -> Error {
    Error::IncompatibleSubspaces {
        ambient_a: a.ambient_dim(),
        ambient_b: b.ambient_dim(),
        dim_a: a.dim(),
        dim_b: b.dim(),
    }
}

/// Orthonormal basis of the Krylov space `span{b, Ab, ..., A^{t-1} b}`.
///
/// Every exact Krylov vector lies in the span `E` of the eigenspaces of `A`
/// that `b` loads on, so the recursion runs in coordinates of an orthonormal
/// basis of `E` on the compressed operator `E^T A E`, which keeps roundoff
/// from leaking into the other eigenspaces. Directions are generated in order
/// as `M y_k` followed by two modified Gram-Schmidt passes, so every new
/// direction has a positive inner product with the raw generated vector.
/// Growth stops at `dim E` (the Krylov degree) or earlier when the
/// orthogonalized residual falls below `krylov_tol * ||A||_op`.
pub fn krylov_basis(a: &SymPsd, b: &DVector<f64>, t: usize, tol: &ToleranceConfig) -> Result<Subspace> {
    let p = a.dim();
    if b.len() != p {
        return Err(Error::DimensionMismatch {
            context: "krylov_basis vector length",
            expected: p,
            found: b.len(),
        });
    }
    let nb = b.norm();
    if nb == 0.0 || !nb.is_finite() {
        return Err(Error::ZeroVector);
    }
    let relative_residual = a.range_residual(b)?;
    if relative_residual > tol.range_tol {
        return Err(Error::NotInRange { relative_residual });
    }
    if t == 0 {
        return Ok(Subspace::zero(p));
    }
    let envelope = loaded_eigenspaces(a, b, tol);
    let compressed = envelope.transpose() * a.matrix() * &envelope;
    let start = envelope.transpose() * b;
    let scale = a.op_norm();
    let mut cols: Vec<DVector<f64>> = vec![&start / start.norm()];
    while cols.len() < t.min(envelope.ncols()) {
        let mut w = &compressed * cols.last().expect("nonempty");
        orthogonalize(&mut w, &cols);
        let nw = w.norm();
        if !(nw > tol.krylov_tol * scale) {
            break;
        }
        cols.push(w / nw);
    }
    let lifted: Vec<DVector<f64>> = cols.iter().map(|y| &envelope * y).collect();
    Ok(Subspace::from_columns(p, &lifted))
}

/// Orthonormal basis whose columns are the unit projections of `b` onto the
/// eigenspaces of `A` it loads on.
fn loaded_eigenspaces(a: &SymPsd, b: &DVector<f64>, tol: &ToleranceConfig) -> DMatrix<f64> {
    let decomposition = eigendecompose(a, tol);
    let nb = b.norm();
    let cols: Vec<DVector<f64>> = (0..decomposition.degree())
        .filter_map(|i| {
            let basis = decomposition.cluster_basis(i);
            let projection = &basis * (basis.transpose() * b);
            let norm = projection.norm();
            (norm > tol.relevance_tol * nb).then(|| projection / norm)
        })
        .collect();
    Subspace::from_columns(a.dim(), &cols).basis
}
