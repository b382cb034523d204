//! Population least squares, the relevant subspace, the eigenspace truncation
//! ladder and tau-identifiable parameters.
//!
//! The relevant subspace `B_y` is the smallest reducing subspace of `Sigma`
//! that contains `sigma`. It is spanned by the normalized projections of
//! `sigma` onto the eigenspaces of `Sigma`, one direction per distinct
//! eigenvalue. Restricted to `B_y`, the covariance `Sigma_y` therefore has
//! simple eigenvalues, and the truncation ladder keeps its leading `s`
//! eigendirections for `s = 1..d_y`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{eigendecompose, sym_op_norm, SymPsd};
use crate::subspace::Subspace;
use crate::tolerance::ToleranceConfig;

/// A covariance matrix `Sigma` and a cross-covariance vector `sigma` in its range.
#[derive(Debug, Clone)]
pub struct PopulationPair {
    sigma_mat: SymPsd,
    sigma_vec: DVector<f64>,
}

impl PopulationPair {
    /// Validates `sigma != 0` and `sigma` in the range of `Sigma`, using the
    /// tolerances stored in `sigma_mat`.
    pub fn new(sigma_mat: SymPsd, sigma_vec: DVector<f64>) -> Result<Self> {
        if sigma_vec.len() != sigma_mat.dim() {
            return Err(Error::DimensionMismatch {
                context: "cross-covariance length",
                expected: sigma_mat.dim(),
                found: sigma_vec.len(),
            });
        }
        if sigma_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cross-covariance vector"));
        }
        let relative_residual = sigma_mat.range_residual(&sigma_vec)?;
        if relative_residual > sigma_mat.tol().range_tol {
            return Err(Error::NotInRange { relative_residual });
        }
        Ok(Self { sigma_mat, sigma_vec })
    }

    /// Builds the pair from a raw matrix and vector.
    pub fn from_parts(matrix: DMatrix<f64>, vector: DVector<f64>, tol: &ToleranceConfig) -> Result<Self> {
        Self::new(SymPsd::new(matrix, tol)?, vector)
    }

    /// Covariance matrix `Sigma`.
    pub fn sigma_mat(&self) -> &SymPsd {
        &self.sigma_mat
    }

    /// Cross-covariance vector `sigma`.
    pub fn sigma_vec(&self) -> &DVector<f64> {
        &self.sigma_vec
    }

    /// Number of features `p`.
    pub fn dim(&self) -> usize {
        self.sigma_vec.len()
    }

    /// Tolerances attached to the covariance matrix.
    pub fn tol(&self) -> &ToleranceConfig {
        self.sigma_mat.tol()
    }
}

/// Minimum-norm least-squares coefficients `Sigma^+ sigma`.
pub fn least_squares(pair: &PopulationPair) -> Result<DVector<f64>> {
    let beta = pair.sigma_mat.apply_pinv(&pair.sigma_vec);
    let residual = (pair.sigma_mat.matrix() * &beta - &pair.sigma_vec).norm() / pair.sigma_vec.norm();
    if residual > pair.tol().range_tol.max(1e-8) {
        return Err(Error::NotInRange {
            relative_residual: residual,
        });
    }
    Ok(beta)
}

/// The relevant subspace `B_y` with the covariance and cross-covariance
/// restricted to it.
#[derive(Debug, Clone)]
pub struct RelevantDecomposition {
    /// Orthonormal basis of `B_y`, one direction per relevant eigenspace, in
    /// descending eigenvalue order.
    pub relevant: Subspace,
    /// Eigenvalue of `Sigma` attached to each relevant direction.
    pub eigenvalues: Vec<f64>,
    /// `||U_i sigma|| / ||sigma||` for each relevant direction.
    pub loadings: Vec<f64>,
    /// Smallest loading among discarded eigenspaces (0 when none was discarded).
    pub largest_discarded_loading: f64,
    /// `Sigma_y = U_y Sigma U_y`.
    pub sigma_mat_rel: SymPsd,
    /// `sigma_y = sigma`.
    pub sigma_vec_rel: DVector<f64>,
    /// `p - dim(B_y)`.
    pub irrelevant_dim: usize,
    /// Least-squares coefficients `beta_LS`.
    pub beta: DVector<f64>,
}

impl RelevantDecomposition {
    /// Number of relevant eigenspaces `d_y`.
    pub fn degree(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The pair `(Sigma_y, sigma_y)`.
    pub fn relevant_pair(&self) -> Result<PopulationPair> {
        PopulationPair::new(self.sigma_mat_rel.clone(), self.sigma_vec_rel.clone())
    }
}

/// Extracts the relevant subspace from the eigenspace projections of `sigma`.
pub fn relevant_subspace(pair: &PopulationPair, tol: &ToleranceConfig) -> Result<RelevantDecomposition> {
    let decomposition = eigendecompose(&pair.sigma_mat, tol);
    let sigma = &pair.sigma_vec;
    let sigma_norm = sigma.norm();
    let p = pair.dim();
    let mut directions: Vec<DVector<f64>> = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut loadings = Vec::new();
    let mut largest_discarded: f64 = 0.0;
    for i in 0..decomposition.degree() {
        let basis = decomposition.cluster_basis(i);
        let projection = &basis * (basis.transpose() * sigma);
        let loading = projection.norm() / sigma_norm;
        if loading > tol.relevance_tol {
            let v = &projection / projection.norm();
            eigenvalues.push(pair.sigma_mat.quadratic_form(&v));
            directions.push(v);
            loadings.push(loading);
        } else {
            largest_discarded = largest_discarded.max(loading);
        }
    }
    let mut basis = DMatrix::zeros(p, directions.len());
    for (j, v) in directions.iter().enumerate() {
        basis.set_column(j, v);
    }
    let relevant = Subspace::new(
        basis.clone(),
        &ToleranceConfig {
            ortho_tol: tol.ortho_tol.max(1e-8),
            ..*tol
        },
    )?;
    let sigma_mat_rel = SymPsd::from_eigen(
        basis,
        DVector::from_vec(eigenvalues.clone()),
        &ToleranceConfig {
            ortho_tol: tol.ortho_tol.max(1e-8),
            ..*pair.tol()
        },
    )?;
    let beta = least_squares(pair)?;
    Ok(RelevantDecomposition {
        irrelevant_dim: p - relevant.dim(),
        relevant,
        eigenvalues,
        loadings,
        largest_discarded_loading: largest_discarded,
        sigma_mat_rel,
        sigma_vec_rel: sigma.clone(),
        beta,
    })
}

/// One level `s` of the truncation ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderLevel {
    /// Level index `s` (number of leading eigenspaces kept).
    pub level: usize,
    /// `dim(B_s)`.
    pub dim: usize,
    /// Condition number `kappa(Sigma_s)`.
    pub condition_number: f64,
    /// `kappa(Sigma_s^{1/2}) = sqrt(kappa(Sigma_s))`.
    pub sqrt_condition_number: f64,
    /// Coefficients `beta_s = Sigma_s^+ sigma_s`.
    pub beta: Vec<f64>,
    /// `||beta_LS - beta_s||`.
    pub beta_perp_norm: f64,
    /// Exact relative risk of `beta_s`.
    pub exact_risk: f64,
    /// Upper bound `||beta_{s,perp}||^2 / (kappa(Sigma_{s+1}) ||beta||^2)`.
    pub risk_bound: f64,
}

/// Nested truncations `B_1 ⊂ ... ⊂ B_{d_y} = B_y` with their coefficients and risks.
#[derive(Debug, Clone)]
pub struct TruncationLadder {
    /// Levels `s = 1..d_y`.
    pub levels: Vec<LadderLevel>,
    /// Basis of `B_y` in ladder order.
    pub relevant: Subspace,
    /// Eigenvalues of `Sigma_y` in ladder order.
    pub eigenvalues: Vec<f64>,
    /// Cross-covariance vector `sigma`.
    pub sigma_vec: DVector<f64>,
    /// Least-squares coefficients `beta_LS`.
    pub beta: DVector<f64>,
    /// Notes about truncated or degenerate levels.
    pub warnings: Vec<String>,
    tol: ToleranceConfig,
}

impl TruncationLadder {
    /// Number of levels.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level `s` (1-based).
    pub fn level(&self, s: usize) -> Result<&LadderLevel> {
        if s == 0 || s > self.depth() {
            return Err(Error::OutOfRange {
                what: "ladder level",
                value: s as f64,
                allowed: "1..=d_y",
            });
        }
        Ok(&self.levels[s - 1])
    }

    /// `kappa(Sigma_s)`, with `kappa(Sigma_{d_y+1}) = +inf`.
    pub fn condition_at(&self, s: usize) -> f64 {
        if s > self.eigenvalues.len() {
            f64::INFINITY
        } else {
            self.eigenvalues[0] / self.eigenvalues[s - 1]
        }
    }

    /// Subspace `B_s`.
    pub fn subspace(&self, s: usize) -> Subspace {
        self.relevant.prefix(s)
    }

    /// Matrix `Sigma_s`.
    pub fn sigma_mat(&self, s: usize) -> Result<SymPsd> {
        let basis = self.relevant.basis().columns(0, s).into_owned();
        let values = DVector::from_iterator(s, self.eigenvalues.iter().take(s).copied());
        SymPsd::from_eigen(
            basis,
            values,
            &ToleranceConfig {
                ortho_tol: self.tol.ortho_tol.max(1e-8),
                ..self.tol
            },
        )
    }

    /// Vector `sigma_s = U_s sigma`.
    pub fn sigma_vec(&self, s: usize) -> DVector<f64> {
        self.subspace(s).project(&self.sigma_vec)
    }

    /// The pair `(Sigma_s, sigma_s)`.
    pub fn pair(&self, s: usize) -> Result<PopulationPair> {
        PopulationPair::new(self.sigma_mat(s)?, self.sigma_vec(s))
    }
}

/// Builds the ladder of leading-eigenspace truncations of `Sigma_y`.
pub fn truncation_ladder(rel: &RelevantDecomposition) -> Result<TruncationLadder> {
    let tol = *rel.sigma_mat_rel.tol();
    let d = rel.degree();
    let beta = &rel.beta;
    let beta_sq = beta.norm_squared();
    let sigma_y = rel.sigma_mat_rel.matrix();
    let sigma_y_norm = rel.sigma_mat_rel.op_norm();
    let mut ladder = TruncationLadder {
        levels: Vec::with_capacity(d),
        relevant: rel.relevant.clone(),
        eigenvalues: rel.eigenvalues.clone(),
        sigma_vec: rel.sigma_vec_rel.clone(),
        beta: beta.clone(),
        warnings: Vec::new(),
        tol,
    };
    for s in 1..=d {
        let sigma_s = ladder.sigma_vec(s);
        if sigma_s.norm() == 0.0 {
            ladder.warnings.push(format!("{}", Error::DegenerateLevel { level: s }));
            break;
        }
        let sigma_mat_s = ladder.sigma_mat(s)?;
        let beta_s = sigma_mat_s.apply_pinv(&sigma_s);
        let gap = beta - &beta_s;
        let exact_risk = gap.dot(&(sigma_y * &gap)) / (sigma_y_norm * beta_sq);
        let kappa_s = ladder.condition_at(s);
        let kappa_next = ladder.condition_at(s + 1);
        let risk_bound = gap.norm_squared() / (kappa_next * beta_sq);
        ladder.levels.push(LadderLevel {
            level: s,
            dim: s,
            condition_number: kappa_s,
            sqrt_condition_number: kappa_s.sqrt(),
            beta: beta_s.iter().copied().collect(),
            beta_perp_norm: gap.norm(),
            exact_risk,
            risk_bound,
        });
    }
    ladder.eigenvalues.truncate(ladder.levels.len());
    Ok(ladder)
}

/// The tau-identifiable parameter and its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifiableParameter {
    /// Threshold `tau`.
    pub tau: f64,
    /// Selected level `s*`.
    pub level: usize,
    /// Degrees of freedom `dim(B_{s*})`.
    pub dof: usize,
    /// Coefficients `beta_{s*}`.
    pub beta: Vec<f64>,
    /// `kappa(Sigma_{s*}^{1/2})`.
    pub sqrt_condition_number: f64,
    /// `kappa(Sigma_{s*+1}^{1/2})`, infinite at the last level.
    pub next_sqrt_condition_number: f64,
    /// Exact relative risk of `beta_{s*}`.
    pub exact_risk: f64,
    /// Risk bound from the ladder.
    pub risk_bound: f64,
    /// Guarantee `tau^{-2}` on the relative risk.
    pub risk_guarantee: f64,
}

/// Selects the unique level with `kappa(Sigma_s^{1/2}) < tau <= kappa(Sigma_{s+1}^{1/2})`.
pub fn identifiable_parameter(ladder: &TruncationLadder, tau: f64) -> Result<IdentifiableParameter> {
    if !(tau > 1.0) || !tau.is_finite() {
        return Err(Error::OutOfRange {
            what: "tau",
            value: tau,
            allowed: "tau > 1",
        });
    }
    let first = ladder.level(1)?;
    if first.sqrt_condition_number >= tau {
        return Err(Error::NoIdentifiableLevel {
            first: first.sqrt_condition_number,
            tau,
        });
    }
    let s = ladder
        .levels
        .iter()
        .take_while(|l| l.sqrt_condition_number < tau)
        .count();
    let level = &ladder.levels[s - 1];
    Ok(IdentifiableParameter {
        tau,
        level: s,
        dof: level.dim,
        beta: level.beta.clone(),
        sqrt_condition_number: level.sqrt_condition_number,
        next_sqrt_condition_number: ladder.condition_at(s + 1).sqrt(),
        exact_risk: level.exact_risk,
        risk_bound: level.risk_bound,
        risk_guarantee: tau.powi(-2),
    })
}

/// Relative perturbation size `max(||A~ - A|| / ||A||, ||b~ - b|| / ||b||)`.
pub fn perturbation_size(
    pert_mat: &SymPsd,
    pert_vec: &DVector<f64>,
    ref_mat: &SymPsd,
    ref_vec: &DVector<f64>,
) -> Result<f64> {
    perturbation_size_dense(pert_mat.matrix(), pert_vec, ref_mat.matrix(), ref_vec)
}

/// [`perturbation_size`] on raw symmetric matrices.
pub fn perturbation_size_dense(
    pert_mat: &DMatrix<f64>,
    pert_vec: &DVector<f64>,
    ref_mat: &DMatrix<f64>,
    ref_vec: &DVector<f64>,
) -> Result<f64> {
    if pert_mat.shape() != ref_mat.shape() || pert_vec.len() != ref_vec.len() {
        return Err(Error::DimensionMismatch {
            context: "perturbation_size operands",
            expected: ref_vec.len(),
            found: pert_vec.len(),
        });
    }
    let ref_norm = sym_op_norm(ref_mat);
    let ref_vec_norm = ref_vec.norm();
    if ref_norm == 0.0 || ref_vec_norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    let mat_term = sym_op_norm(&(pert_mat - ref_mat)) / ref_norm;
    let vec_term = (pert_vec - ref_vec).norm() / ref_vec_norm;
    Ok(mat_term.max(vec_term))
}

/// Upper bound on the perturbation size between `(Sigma_y, sigma_y)` and
/// `(Sigma_s, sigma_s)`:
/// `max(1 / kappa(Sigma_{s+1}), kappa(Sigma_s) / kappa(Sigma_{s+1}) * ||beta_{s,perp}|| / ||beta_s||)`.
pub fn rel_eps_bound(rel: &RelevantDecomposition, s: usize) -> Result<f64> {
    let ladder = truncation_ladder(rel)?;
    if s == 0 || s > ladder.depth() {
        return Err(Error::OutOfRange {
            what: "ladder level",
            value: s as f64,
            allowed: "1..=d_y",
        });
    }
    let level = ladder.level(s)?;
    let kappa_next = ladder.condition_at(s + 1);
    let beta_s_norm = level.beta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let first = 1.0 / kappa_next;
    let second = level.condition_number / kappa_next * level.beta_perp_norm / beta_s_norm;
    Ok(first.max(second))
}
