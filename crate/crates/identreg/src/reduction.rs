//! Reduction paths: nested subspaces with reduced least-squares solutions,
//! instantiated as principal component regression (PCR), partial least
//! squares (PLS) and forward subset selection (FSS).
//!
//! All three policies produce subspaces that grow by appending basis vectors,
//! so a path stores one ordered orthonormal basis `W` and, for each step `s`,
//! the number of leading columns in use (the degrees of freedom).
//!
//! Each step carries two solutions:
//!
//! - the reduced solution `W (W^T A W)^+ W^T b`, the least-squares fit
//!   restricted to the selected subspace;
//! - the projected solution `W W^T zeta_LS`, the orthogonal projection of the
//!   full least-squares solution.
//!
//! They coincide when the selected subspace reduces `A` (always for PCR, and
//! at the terminal step of every policy) and differ in general otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::population::{relevant_subspace, truncation_ladder, PopulationPair};
use crate::spectral::{eigendecompose, pinv_solve, SymPsd};
use crate::subspace::{embedding_angle, krylov_basis, principal_angle, Subspace};
use crate::tolerance::ToleranceConfig;

/// The subspace-selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    /// Leading eigenspaces of `A`.
    Pcr,
    /// Krylov spaces `span{b, Ab, ...}`.
    Pls,
    /// Canonical coordinates added greedily by population residual decrease.
    Fss,
}

impl AlgorithmKind {
    /// All policies in a fixed order.
    pub const ALL: [AlgorithmKind; 3] = [AlgorithmKind::Pcr, AlgorithmKind::Pls, AlgorithmKind::Fss];

    /// Lowercase name.
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Pcr => "pcr",
            AlgorithmKind::Pls => "pls",
            AlgorithmKind::Fss => "fss",
        }
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcr" => Ok(AlgorithmKind::Pcr),
            "pls" => Ok(AlgorithmKind::Pls),
            "fss" => Ok(AlgorithmKind::Fss),
            other => Err(Error::ConfigInvalid(format!(
                "unknown method '{other}' (expected pcr, pls or fss)"
            ))),
        }
    }
}

/// Which of the two per-step solutions to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionForm {
    /// `W (W^T A W)^+ W^T b`.
    Reduced,
    /// `W W^T zeta_LS`.
    Projected,
}

/// One step of a reduction path.
#[derive(Debug, Clone)]
pub struct PathStep {
    /// Step index `s`.
    pub step: usize,
    /// Degrees of freedom: dimension of the selected subspace.
    pub dof: usize,
    /// Reduced least-squares solution on the selected subspace.
    pub solution: DVector<f64>,
    /// Projection of the full least-squares solution onto the selected subspace.
    pub projected_solution: DVector<f64>,
    /// `||solution - projected_solution|| / ||zeta_LS||`.
    pub representation_gap: f64,
}

/// Nested subspaces and solutions for steps `0..=max_step`.
#[derive(Debug, Clone)]
pub struct ReductionPath {
    /// Policy that produced the path.
    pub kind: AlgorithmKind,
    /// Ordered orthonormal basis; step `s` uses its first `dof` columns.
    pub basis: DMatrix<f64>,
    /// Steps in increasing order starting from `s = 0`.
    pub steps: Vec<PathStep>,
    /// Minimum-norm least-squares solution `A^+ b`.
    pub ls_solution: DVector<f64>,
    /// Selected coordinates in order (FSS only).
    pub selected: Vec<usize>,
    /// SHA-256 of the input pair, hex encoded.
    pub fingerprint: String,
}

impl ReductionPath {
    /// Ambient dimension `p`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Largest degrees of freedom along the path.
    pub fn max_dof(&self) -> usize {
        self.steps.last().map_or(0, |s| s.dof)
    }

    /// Subspace selected at step `s`.
    pub fn subspace(&self, s: usize) -> Subspace {
        Subspace::from_orthonormal(self.basis.columns(0, self.steps[s].dof).into_owned())
    }

    /// Subspace of dimension `r` spanned by the leading basis vectors.
    pub fn subspace_of_dim(&self, r: usize) -> Subspace {
        Subspace::from_orthonormal(self.basis.columns(0, r.min(self.basis.ncols())).into_owned())
    }

    /// Terminal subspace.
    pub fn terminal_subspace(&self) -> Subspace {
        self.subspace_of_dim(self.max_dof())
    }

    /// The set of attained degrees of freedom, increasing.
    pub fn dof_set(&self) -> Vec<usize> {
        let mut dofs: Vec<usize> = self.steps.iter().map(|s| s.dof).collect();
        dofs.dedup();
        dofs
    }

    /// The unique solution with `r` degrees of freedom.
    pub fn coefficients_at_dof(&self, r: usize, form: SolutionForm) -> Result<DVector<f64>> {
        let step = self
            .steps
            .iter()
            .find(|s| s.dof == r)
            .ok_or(Error::DofNotAttained { dof: r })?;
        Ok(match form {
            SolutionForm::Reduced => step.solution.clone(),
            SolutionForm::Projected => step.projected_solution.clone(),
        })
    }

    /// Picks the step whose dof matches `target`, or the smallest step whose
    /// dof exceeds it when `target` is skipped. Falls back to the last step
    /// when no step reaches `target`.
    pub fn select_dof(&self, target: usize) -> DofSelection {
        let step = self
            .steps
            .iter()
            .find(|s| s.dof >= target)
            .unwrap_or_else(|| self.steps.last().expect("paths have a step 0"));
        DofSelection {
            target,
            step: step.step,
            dof: step.dof,
            matched: step.dof == target,
        }
    }
}

/// Outcome of [`ReductionPath::select_dof`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DofSelection {
    /// Requested degrees of freedom.
    pub target: usize,
    /// Selected step.
    pub step: usize,
    /// Degrees of freedom at the selected step.
    pub dof: usize,
    /// Whether `dof == target`.
    pub matched: bool,
}

/// SHA-256 fingerprint of `(A, b)` over little-endian `f64` bytes.
pub fn fingerprint(a: &DMatrix<f64>, b: &DVector<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((a.nrows() as u64).to_le_bytes());
    for v in a.iter().chain(b.iter()) {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|byte| format!("{byte:02x}")).collect()
}

fn validate_input(a: &SymPsd, b: &DVector<f64>, tol: &ToleranceConfig) -> Result<()> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            context: "reduction input vector length",
            expected: a.dim(),
            found: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reduction input vector"));
    }
    let relative_residual = a.range_residual(b)?;
    if relative_residual > tol.range_tol {
        return Err(Error::NotInRange { relative_residual });
    }
    Ok(())
}

/// Runs `kind` on `(A, b)` for every step `s = 0..=p`.
pub fn run(kind: AlgorithmKind, a: &SymPsd, b: &DVector<f64>, tol: &ToleranceConfig) -> Result<ReductionPath> {
    run_to(kind, a, b, a.dim(), tol)
}

/// Runs `kind` on `(A, b)` for steps `s = 0..=min(max_step, p)`.
pub fn run_to(
    kind: AlgorithmKind,
    a: &SymPsd,
    b: &DVector<f64>,
    max_step: usize,
    tol: &ToleranceConfig,
) -> Result<ReductionPath> {
    tol.validate()?;
    validate_input(a, b, tol)?;
    let p = a.dim();
    let last = max_step.min(p);
    let ls_solution = a.apply_pinv(b);
    let (basis, dofs, selected) = match kind {
        AlgorithmKind::Pcr => pcr_policy(a, last, tol),
        AlgorithmKind::Pls => pls_policy(a, b, last, tol)?,
        AlgorithmKind::Fss => fss_policy(a, b, &ls_solution, last),
    };
    let aw = a.matrix() * &basis;
    let ls_norm = ls_solution.norm();
    let mut steps = Vec::with_capacity(last + 1);
    let mut cache: Option<(usize, DVector<f64>, DVector<f64>)> = None;
    for (s, &dof) in dofs.iter().enumerate() {
        let (solution, projected) = match &cache {
            Some((d, sol, proj)) if *d == dof => (sol.clone(), proj.clone()),
            _ => {
                let sol = reduced_solution(&basis, &aw, b, dof, tol)?;
                let w = basis.columns(0, dof);
                let proj = w * (w.transpose() * &ls_solution);
                cache = Some((dof, sol.clone(), proj.clone()));
                (sol, proj)
            }
        };
        let gap = if ls_norm > 0.0 {
            (&solution - &projected).norm() / ls_norm
        } else {
            0.0
        };
        steps.push(PathStep {
            step: s,
            dof,
            solution,
            projected_solution: projected,
            representation_gap: gap,
        });
    }
    Ok(ReductionPath {
        kind,
        basis,
        steps,
        ls_solution,
        selected,
        fingerprint: fingerprint(a.matrix(), b),
    })
}

/// `W_r (W_r^T A W_r)^+ W_r^T b` using the precomputed product `A W`.
fn reduced_solution(
    basis: &DMatrix<f64>,
    aw: &DMatrix<f64>,
    b: &DVector<f64>,
    r: usize,
    tol: &ToleranceConfig,
) -> Result<DVector<f64>> {
    let p = basis.nrows();
    if r == 0 {
        return Ok(DVector::zeros(p));
    }
    let w = basis.columns(0, r);
    let small = w.transpose() * aw.columns(0, r);
    let small = (&small + small.transpose()) * 0.5;
    let small = SymPsd::new(small, tol)?;
    let coef = small.apply_pinv(&(w.transpose() * b));
    Ok(w * coef)
}

fn columns_to_matrix(p: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

fn pcr_policy(a: &SymPsd, last: usize, tol: &ToleranceConfig) -> (DMatrix<f64>, Vec<usize>, Vec<usize>) {
    let p = a.dim();
    let decomposition = eigendecompose(a, tol);
    let mut cols = Vec::new();
    let mut boundaries = vec![0usize];
    for i in 0..decomposition.degree() {
        let block = decomposition.cluster_basis(i);
        for j in 0..block.ncols() {
            cols.push(block.column(j).into_owned());
        }
        boundaries.push(cols.len());
    }
    let dofs = (0..=last)
        .map(|s| boundaries.iter().copied().filter(|&c| c <= s).max().unwrap_or(0))
        .collect();
    (columns_to_matrix(p, &cols), dofs, Vec::new())
}

fn pls_policy(
    a: &SymPsd,
    b: &DVector<f64>,
    last: usize,
    tol: &ToleranceConfig,
) -> Result<(DMatrix<f64>, Vec<usize>, Vec<usize>)> {
    let krylov = krylov_basis(a, b, last, tol)?;
    let degree = krylov.dim();
    let dofs = (0..=last).map(|s| s.min(degree)).collect();
    Ok((krylov.basis().clone(), dofs, Vec::new()))
}

/// Greedy coordinate selection. With `w = U_J zeta_LS` the current fit,
/// adding coordinate `j` changes the residual criterion
/// `f(w) = w^T A w - 2 w^T b` by
/// `beta_j (2 (A w)_j + beta_j A_jj - 2 b_j)`.
fn fss_policy(
    a: &SymPsd,
    b: &DVector<f64>,
    beta: &DVector<f64>,
    last: usize,
) -> (DMatrix<f64>, Vec<usize>, Vec<usize>) {
    let p = a.dim();
    let m = a.matrix();
    let beta_max = beta.amax();
    let support: Vec<usize> = (0..p).filter(|&j| beta[j].abs() > 1e-10 * beta_max).collect();
    let tie_tol = 1e-12 * a.op_norm() * beta.norm_squared();
    let mut in_set = vec![false; p];
    let mut selected = Vec::new();
    let mut fit = DVector::zeros(p);
    let mut dofs = vec![0usize];
    for _ in 1..=last {
        if selected.len() < support.len() {
            let a_fit = m * &fit;
            let mut best: Option<(usize, f64)> = None;
            for &j in support.iter().filter(|&&j| !in_set[j]) {
                let bj = beta[j];
                let delta = bj * (2.0 * a_fit[j] + bj * m[(j, j)] - 2.0 * b[j]);
                match best {
                    Some((_, d)) if delta >= d - tie_tol => {}
                    _ => best = Some((j, delta)),
                }
            }
            let (j, _) = best.expect("support not exhausted");
            in_set[j] = true;
            selected.push(j);
            fit[j] = beta[j];
        }
        dofs.push(selected.len());
    }
    let cols: Vec<DVector<f64>> = selected
        .iter()
        .map(|&j| {
            let mut e = DVector::zeros(p);
            e[j] = 1.0;
            e
        })
        .collect();
    (columns_to_matrix(p, &cols), dofs, selected)
}

/// The solution at one step computed in three ways.
#[derive(Debug, Clone)]
pub struct SolutionRepresentations {
    /// Step index.
    pub step: usize,
    /// Degrees of freedom.
    pub dof: usize,
    /// `(U A U)^+ U b`.
    pub reduced: DVector<f64>,
    /// `(A^{1/2} U)^+ (A^+)^{1/2} b`.
    pub square_root: DVector<f64>,
    /// `U zeta_LS`.
    pub projected: DVector<f64>,
}

impl SolutionRepresentations {
    /// Largest pairwise gap relative to `scale` (typically `||zeta_LS||`).
    pub fn max_relative_gap(&self, scale: f64) -> f64 {
        let g1 = (&self.reduced - &self.square_root).norm();
        let g2 = (&self.reduced - &self.projected).norm();
        let g3 = (&self.square_root - &self.projected).norm();
        g1.max(g2).max(g3) / scale
    }

    /// Gap between the reduced and square-root forms relative to `scale`.
    pub fn reduced_vs_square_root(&self, scale: f64) -> f64 {
        (&self.reduced - &self.square_root).norm() / scale
    }
}

/// Evaluates the three solution representations at every step of `path`.
///
/// The square-root form is computed independently as the minimum-norm
/// least-squares solution of the `p x r` system `A^{1/2} W_r x = (A^+)^{1/2} b`.
pub fn solution_representations(path: &ReductionPath, a: &SymPsd, b: &DVector<f64>) -> Vec<SolutionRepresentations> {
    let sqrt_a = a.sqrt_matrix();
    let c = a.apply_pinv_sqrt(b);
    path.steps
        .iter()
        .map(|step| {
            let w = path.basis.columns(0, step.dof).into_owned();
            let square_root = if step.dof == 0 {
                DVector::zeros(path.ambient_dim())
            } else {
                let m = &sqrt_a * &w;
                &w * pinv_solve(&m, &c, a.tol().rank_tol)
            };
            SolutionRepresentations {
                step: step.step,
                dof: step.dof,
                reduced: step.solution.clone(),
                square_root,
                projected: &w * (w.transpose() * &path.ls_solution),
            }
        })
        .collect()
}

/// Verdict of [`check_adaptive`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptivityVerdict {
    /// Policy tested.
    pub kind: AlgorithmKind,
    /// True when all steps agree.
    pub adaptive: bool,
    /// First step where the two paths disagree.
    pub first_mismatch: Option<usize>,
    /// Largest principal angle between matched subspaces.
    pub max_angle: f64,
    /// Largest relative gap between matched reduced solutions.
    pub max_solution_gap: f64,
}

/// Runs `kind` on `(Sigma, sigma)` and on `(Sigma_y, sigma_y)` and compares
/// subspaces and solutions step by step.
pub fn check_adaptive(kind: AlgorithmKind, pair: &PopulationPair) -> Result<AdaptivityVerdict> {
    let tol = *pair.tol();
    let rel = relevant_subspace(pair, &tol)?;
    let full = run(kind, pair.sigma_mat(), pair.sigma_vec(), &tol)?;
    let restricted = run(kind, &rel.sigma_mat_rel, &rel.sigma_vec_rel, &tol)?;
    Ok(compare_paths(kind, &full, &restricted, tol.verdict_tol))
}

/// Compares two paths step by step.
pub fn compare_paths(kind: AlgorithmKind, a: &ReductionPath, b: &ReductionPath, verdict_tol: f64) -> AdaptivityVerdict {
    let mut max_angle: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    let mut first_mismatch = None;
    let scale = a.ls_solution.norm().max(b.ls_solution.norm());
    for (sa, sb) in a.steps.iter().zip(b.steps.iter()) {
        let angle = if sa.dof == sb.dof {
            principal_angle(&a.subspace(sa.step), &b.subspace(sb.step)).unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        let gap = if scale > 0.0 {
            (&sa.solution - &sb.solution).norm() / scale
        } else {
            0.0
        };
        max_angle = max_angle.max(angle);
        max_gap = max_gap.max(gap);
        if first_mismatch.is_none() && (angle >= verdict_tol || gap >= verdict_tol) {
            first_mismatch = Some(sa.step);
        }
    }
    if a.steps.len() != b.steps.len() && first_mismatch.is_none() {
        first_mismatch = Some(a.steps.len().min(b.steps.len()));
    }
    AdaptivityVerdict {
        kind,
        adaptive: first_mismatch.is_none(),
        first_mismatch,
        max_angle,
        max_solution_gap: max_gap,
    }
}

/// Verdict of [`check_parsimonious`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParsimonyVerdict {
    /// Policy tested.
    pub kind: AlgorithmKind,
    /// Ladder level `s`.
    pub level: usize,
    /// True when the terminal subspace lies in `B_s`.
    pub parsimonious: bool,
    /// Dimension of the terminal subspace.
    pub terminal_dim: usize,
    /// Dimension of `B_s`.
    pub level_dim: usize,
    /// Embedding angle of the terminal subspace into `B_s` (`pi/2` when the
    /// terminal subspace is larger than `B_s`).
    pub embedding_angle: f64,
}

/// Runs `kind` on `(Sigma_s, sigma_s)` and checks that its terminal subspace
/// lies in `B_s`.
pub fn check_parsimonious(kind: AlgorithmKind, pair: &PopulationPair, s: usize) -> Result<ParsimonyVerdict> {
    let tol = *pair.tol();
    let rel = relevant_subspace(pair, &tol)?;
    let ladder = truncation_ladder(&rel)?;
    ladder.level(s)?;
    let level_pair = ladder.pair(s)?;
    let level_space = ladder.subspace(s);
    let path = run(kind, level_pair.sigma_mat(), level_pair.sigma_vec(), &tol)?;
    let terminal = path.terminal_subspace();
    let angle = if terminal.dim() > level_space.dim() {
        std::f64::consts::FRAC_PI_2
    } else {
        embedding_angle(&terminal, &level_space)?
    };
    Ok(ParsimonyVerdict {
        kind,
        level: s,
        parsimonious: angle < tol.verdict_tol,
        terminal_dim: terminal.dim(),
        level_dim: level_space.dim(),
        embedding_angle: angle,
    })
}
