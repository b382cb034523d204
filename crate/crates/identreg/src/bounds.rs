//! Stability constants and perturbation bounds for least-squares problems and
//! reduction paths.
//!
//! Reports never fail because a precondition is violated: the precondition
//! flag is recorded next to the observed error and the bound, and the bound is
//! only meant to be read when the flag is set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{
    identifiable_parameter, perturbation_size, relevant_subspace, truncation_ladder, PopulationPair,
};
use crate::reduction::{check_adaptive, check_parsimonious, fingerprint, run, run_to, AlgorithmKind, ReductionPath};
use crate::rng;
use crate::spectral::{condition_number, sym_op_norm, symmetric_eigenpairs, SymPsd};
use crate::subspace::{principal_angle, Subspace};
use crate::tolerance::ToleranceConfig;

/// Which bound a report evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `5 kappa(A) eps` for minimum-norm least squares.
    LeastSquares,
    /// `(5/2) M eps` for reduced solutions at matched dof.
    Reduction,
    /// Reduction bound applied to `(Sigma_s, sigma_s)` perturbed into `(Sigma_y, sigma_y)`.
    Population,
    /// Population bound with the early-stopping inflation `sqrt(r* - r)`.
    PopulationEarlyStopping,
    /// Sample bound with the early-stopping inflation `sqrt(r - r')`.
    SampleEarlyStopping,
}

/// Evaluated bound with its inputs and the observed error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    /// Bound evaluated.
    pub bound: BoundKind,
    /// Policy, when the bound concerns a reduction path.
    pub kind: Option<AlgorithmKind>,
    /// Degrees of freedom compared.
    pub dof: Option<usize>,
    /// Relative perturbation size.
    pub epsilon: f64,
    /// Condition number entering the bound (`kappa(A)` or `kappa(U A U)`).
    pub condition_number: f64,
    /// Stability constant used.
    pub c_constant: Option<f64>,
    /// Amplification constant `M`.
    pub m_constant: Option<f64>,
    /// Value of the bound.
    pub bound_value: f64,
    /// Observed relative error.
    pub observed_error: f64,
    /// Whether every precondition of the bound holds.
    pub precondition_met: bool,
    /// `observed_error <= bound_value`.
    pub holds: bool,
    /// `||U~ - U||_op` between matched projectors.
    pub projector_deviation: Option<f64>,
    /// Principal angle between matched subspaces.
    pub principal_angle: Option<f64>,
    /// Reasons for failed preconditions and other remarks.
    pub notes: Vec<String>,
}

fn dominates(observed: f64, bound: f64) -> bool {
    observed <= bound * (1.0 + 1e-9) + 1e-12
}

fn relative_gap(x: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let denominator = reference.norm();
    if denominator == 0.0 {
        if (x - reference).norm() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (x - reference).norm() / denominator
    }
}

/// Checks `||zeta~_LS - zeta_LS|| / ||zeta_LS|| <= 5 kappa(A) eps` under the
/// preconditions `rank(A~) = rank(A)`, `b~` in the range of `A~` and
/// `eps <= 1 / (2 kappa(A))`.
pub fn least_squares_bound_check(
    a: &SymPsd,
    b: &DVector<f64>,
    a_pert: &SymPsd,
    b_pert: &DVector<f64>,
) -> Result<BoundReport> {
    let epsilon = perturbation_size(a_pert, b_pert, a, b)?;
    let kappa = condition_number(a)?;
    let zeta = a.apply_pinv(b);
    let zeta_pert = a_pert.apply_pinv(b_pert);
    let observed = relative_gap(&zeta_pert, &zeta);
    let mut notes = Vec::new();
    if a_pert.rank() != a.rank() {
        notes.push(format!("rank changed from {} to {}", a.rank(), a_pert.rank()));
    }
    if b_pert.norm() > 0.0 && a_pert.range_residual(b_pert)? > a.tol().range_tol {
        notes.push("perturbed vector is not in the range of the perturbed matrix".into());
    }
    if epsilon > 1.0 / (2.0 * kappa) {
        notes.push(format!(
            "epsilon {epsilon:.3e} exceeds 1/(2 kappa) = {:.3e}",
            1.0 / (2.0 * kappa)
        ));
    }
    let bound_value = 5.0 * kappa * epsilon;
    Ok(BoundReport {
        bound: BoundKind::LeastSquares,
        kind: None,
        dof: None,
        epsilon,
        condition_number: kappa,
        c_constant: None,
        m_constant: None,
        bound_value,
        observed_error: observed,
        precondition_met: notes.is_empty(),
        holds: dominates(observed, bound_value),
        projector_deviation: None,
        principal_angle: None,
        notes,
    })
}

/// Compressed matrix `W^T A W` for an orthonormal basis `W`.
fn compress(a: &DMatrix<f64>, w: &DMatrix<f64>, tol: &ToleranceConfig) -> Result<SymPsd> {
    let small = w.transpose() * a * w;
    SymPsd::new((&small + small.transpose()) * 0.5, tol)
}

/// Amplification constant
/// `M = 2 kappa(A_U) (4 c + 1) max(||A|| / ||A_U||, ||b|| / ||U b||)`
/// for the projector `U` onto `subspace` and `A_U = U A U`.
pub fn m_constant(c_a: f64, a: &SymPsd, b: &DVector<f64>, subspace: &Subspace) -> Result<f64> {
    if !(c_a >= 1.0) || !c_a.is_finite() {
        return Err(Error::OutOfRange {
            what: "stability constant",
            value: c_a,
            allowed: "c >= 1",
        });
    }
    if subspace.dim() == 0 {
        return Err(Error::DegenerateProjection("empty subspace"));
    }
    let compressed = compress(a.matrix(), subspace.basis(), a.tol())?;
    let a_u_norm = compressed.op_norm();
    if a_u_norm <= 0.0 {
        return Err(Error::DegenerateProjection("projected matrix is zero"));
    }
    let b_u_norm = (subspace.basis().transpose() * b).norm();
    if b_u_norm <= 0.0 {
        return Err(Error::DegenerateProjection("projected vector is zero"));
    }
    let kappa = condition_number(&compressed)?;
    let ratio = (a.op_norm() / a_u_norm).max(b.norm() / b_u_norm);
    Ok(2.0 * kappa * (4.0 * c_a + 1.0) * ratio)
}

fn step_with_dof(path: &ReductionPath, r: usize) -> Option<usize> {
    path.steps.iter().find(|s| s.dof == r).map(|s| s.step)
}

/// Checks `||zeta~^(r) - zeta^(r)|| / ||zeta^(r)|| <= (5/2) M eps` for the
/// reduced solutions of `kind` at `r` degrees of freedom.
///
/// When `c_a` is `None`, the realized ratio `max(1, ||U~ - U|| / eps)` of this
/// perturbation is used as the stability constant. A supplied constant that is
/// smaller than the realized ratio fails the precondition.
pub fn algorithm_perturbation_check(
    kind: AlgorithmKind,
    a: &SymPsd,
    b: &DVector<f64>,
    a_pert: &SymPsd,
    b_pert: &DVector<f64>,
    r: usize,
    c_a: Option<f64>,
) -> Result<BoundReport> {
    let tol = *a.tol();
    let base = run(kind, a, b, &tol)?;
    let pert = run(kind, a_pert, b_pert, &tol)?;
    reduction_report(kind, a, b, a_pert, b_pert, &base, &pert, r, c_a)
}

#[allow(clippy::too_many_arguments)]
fn reduction_report(
    kind: AlgorithmKind,
    a: &SymPsd,
    b: &DVector<f64>,
    a_pert: &SymPsd,
    b_pert: &DVector<f64>,
    base: &ReductionPath,
    pert: &ReductionPath,
    r: usize,
    c_a: Option<f64>,
) -> Result<BoundReport> {
    let tol = *a.tol();
    let base_step = step_with_dof(base, r).ok_or(Error::DofNotAttained { dof: r })?;
    let epsilon = perturbation_size(a_pert, b_pert, a, b)?;
    let subspace = base.subspace(base_step);
    let zeta = &base.steps[base_step].solution;
    let mut notes = Vec::new();
    let Some(pert_step) = step_with_dof(pert, r) else {
        notes.push(format!("perturbed path does not attain dof {r}"));
        return Ok(BoundReport {
            bound: BoundKind::Reduction,
            kind: Some(kind),
            dof: Some(r),
            epsilon,
            condition_number: f64::NAN,
            c_constant: c_a,
            m_constant: None,
            bound_value: f64::NAN,
            observed_error: f64::NAN,
            precondition_met: false,
            holds: false,
            projector_deviation: None,
            principal_angle: None,
            notes,
        });
    };
    let pert_subspace = pert.subspace(pert_step);
    let angle = principal_angle(&subspace, &pert_subspace)?;
    let deviation = angle.sin();
    let realized = if epsilon > 0.0 {
        (deviation / epsilon).max(1.0)
    } else {
        1.0
    };
    let c = match c_a {
        Some(c) => {
            if realized > c * (1.0 + 1e-9) {
                notes.push(format!(
                    "realized stability ratio {realized:.3e} exceeds supplied constant {c:.3e}"
                ));
            }
            c
        }
        None => realized,
    };
    let m = match m_constant(c, a, b, &subspace) {
        Ok(m) => m,
        Err(Error::DegenerateProjection(reason)) => {
            notes.push(format!("amplification constant is unbounded: {reason}"));
            f64::INFINITY
        }
        Err(e) => return Err(e),
    };
    let compressed = compress(a.matrix(), subspace.basis(), &tol)?;
    let kappa = condition_number(&compressed)?;
    let compressed_pert = compress(a_pert.matrix(), pert_subspace.basis(), &tol)?;
    if compressed.rank() != r || compressed_pert.rank() != r {
        notes.push(format!(
            "compressed ranks {} and {} differ from dof {r}",
            compressed.rank(),
            compressed_pert.rank()
        ));
    }
    if m * epsilon >= 1.0 {
        notes.push(format!("M eps = {:.3e} is not below 1", m * epsilon));
    }
    if b_pert.norm() > 0.0 && a_pert.range_residual(b_pert)? > tol.range_tol {
        notes.push("perturbed vector is not in the range of the perturbed matrix".into());
    }
    let observed = relative_gap(&pert.steps[pert_step].solution, zeta);
    let bound_value = if m.is_infinite() {
        f64::INFINITY
    } else {
        2.5 * m * epsilon
    };
    Ok(BoundReport {
        bound: BoundKind::Reduction,
        kind: Some(kind),
        dof: Some(r),
        epsilon,
        condition_number: kappa,
        c_constant: Some(c),
        m_constant: Some(m),
        bound_value,
        observed_error: observed,
        precondition_met: notes.is_empty(),
        holds: dominates(observed, bound_value),
        projector_deviation: Some(deviation),
        principal_angle: Some(angle),
        notes,
    })
}

/// A random perturbation `(A~, b~)` of `(A, b)`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// Perturbed matrix.
    pub matrix: SymPsd,
    /// Perturbed vector, in the range of the perturbed matrix.
    pub vector: DVector<f64>,
    /// Realized relative size.
    pub epsilon: f64,
}

/// Draws a perturbation of target size `eps`.
///
/// The matrix direction is a Gaussian orthogonal ensemble draw scaled to
/// operator norm `eps ||A||`. The perturbed matrix keeps its `rank(A)` largest
/// eigenvalues clipped at zero, so the rank is preserved whenever `eps` is
/// small against the smallest positive eigenvalue. The vector moves by
/// `eps ||b||` in a uniform direction and is then projected onto the range of
/// the perturbed matrix. The realized size is recomputed.
pub fn sample_perturbation(a: &SymPsd, b: &DVector<f64>, eps: f64, rng: &mut ChaCha8Rng) -> Result<Perturbation> {
    let p = a.dim();
    let tol = *a.tol();
    let direction = rng::goe_matrix(p, rng);
    let scale = sym_op_norm(&direction);
    let shifted = if scale > 0.0 {
        a.matrix() + direction * (eps * a.op_norm() / scale)
    } else {
        a.matrix().clone()
    };
    let shifted = (&shifted + shifted.transpose()) * 0.5;
    let (eigenvalues, eigenvectors) = symmetric_eigenpairs(&shifted);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]).then(i.cmp(&j)));
    let rank = a.rank();
    let mut vectors = DMatrix::zeros(p, rank);
    let mut values = DVector::zeros(rank);
    for (c, &i) in order.iter().take(rank).enumerate() {
        vectors.set_column(c, &eigenvectors.column(i));
        values[c] = eigenvalues[i].max(0.0);
    }
    let matrix = SymPsd::from_eigen(
        vectors,
        values,
        &ToleranceConfig {
            ortho_tol: tol.ortho_tol.max(1e-9),
            ..tol
        },
    )?;
    let moved = b + rng::unit_vector(p, rng) * (eps * b.norm());
    let vector = matrix.project_range(&moved);
    let epsilon = perturbation_size(&matrix, &vector, a, b)?;
    Ok(Perturbation {
        matrix,
        vector,
        epsilon,
    })
}

/// Random PSD matrix of the given rank with eigenvalues log-spaced over
/// `10^{-log10_cond} .. 1` in a Haar-random basis, and a vector in its range.
pub fn random_instance(
    p: usize,
    rank: usize,
    log10_cond: f64,
    tol: &ToleranceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SymPsd, DVector<f64>)> {
    let rank = rank.clamp(1, p);
    let q = rng::haar_orthogonal(p, rng);
    let values = DVector::from_iterator(
        rank,
        (0..rank).map(|i| {
            let t = if rank == 1 { 0.0 } else { i as f64 / (rank - 1) as f64 };
            10f64.powf(-log10_cond * t)
        }),
    );
    let matrix = SymPsd::from_eigen(
        q.columns(0, rank).into_owned(),
        values,
        &ToleranceConfig {
            ortho_tol: tol.ortho_tol.max(1e-9),
            ..*tol
        },
    )?;
    let z = rng::normal_vector(p, rng);
    let b = matrix.matrix() * z;
    Ok((matrix, b))
}

/// Empirical stability constants from random dof-preserving perturbations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityEstimate {
    /// Policy.
    pub kind: AlgorithmKind,
    /// Degrees of freedom.
    pub dof: usize,
    /// `max(1, max ||U~ - U|| / eps)` over the probes.
    pub c_hat: f64,
    /// `max(1, max angle / eps)` over the probes.
    pub d_hat: f64,
    /// Probes drawn.
    pub n_samples: usize,
    /// Probes whose perturbed path attained the dof.
    pub n_preserved: usize,
    /// Probes whose perturbed path skipped the dof.
    pub n_dof_lost: usize,
    /// Target probe radius.
    pub eps_probe: f64,
    /// Seed of the probe streams.
    pub seed: u64,
    /// Fingerprint of the probe attaining `c_hat`.
    pub max_ratio_witness: Option<String>,
}

/// Monte Carlo lower estimate of the stability constants `C` and `D` at dof `r`.
pub fn estimate_stability_constant(
    kind: AlgorithmKind,
    a: &SymPsd,
    b: &DVector<f64>,
    r: usize,
    eps_probe: f64,
    n_samples: usize,
    seed: u64,
) -> Result<StabilityEstimate> {
    if !(eps_probe >= 0.0) || !eps_probe.is_finite() {
        return Err(Error::OutOfRange {
            what: "eps_probe",
            value: eps_probe,
            allowed: "eps_probe >= 0",
        });
    }
    let tol = *a.tol();
    let base = run(kind, a, b, &tol)?;
    let step = step_with_dof(&base, r).ok_or(Error::DofNotAttained { dof: r })?;
    let subspace = base.subspace(step);
    let probes: Vec<Result<Option<(f64, f64, String)>>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng::stream(seed, i as u64);
            let pert = sample_perturbation(a, b, eps_probe, &mut stream)?;
            let path = run(kind, &pert.matrix, &pert.vector, &tol)?;
            let Some(ps) = step_with_dof(&path, r) else {
                return Ok(None);
            };
            let angle = principal_angle(&subspace, &path.subspace(ps))?;
            let (c, d) = if pert.epsilon > 0.0 {
                (angle.sin() / pert.epsilon, angle / pert.epsilon)
            } else {
                (0.0, 0.0)
            };
            Ok(Some((c, d, fingerprint(pert.matrix.matrix(), &pert.vector))))
        })
        .collect();
    let mut c_hat: f64 = 1.0;
    let mut d_hat: f64 = 1.0;
    let mut witness = None;
    let mut preserved = 0;
    let mut lost = 0;
    for probe in probes {
        match probe? {
            Some((c, d, fp)) => {
                preserved += 1;
                if c > c_hat {
                    c_hat = c;
                    witness = Some(fp);
                }
                d_hat = d_hat.max(d);
            }
            None => lost += 1,
        }
    }
    Ok(StabilityEstimate {
        kind,
        dof: r,
        c_hat,
        d_hat,
        n_samples,
        n_preserved: preserved,
        n_dof_lost: lost,
        eps_probe,
        seed,
        max_ratio_witness: witness,
    })
}

/// Which bound a Monte Carlo dominance study exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominanceTarget {
    /// [`least_squares_bound_check`].
    LeastSquares,
    /// [`algorithm_perturbation_check`] for one policy.
    Reduction(AlgorithmKind),
}

/// Settings of a Monte Carlo dominance study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DominanceConfig {
    /// Number of precondition-satisfying perturbations to collect.
    pub target: usize,
    /// Upper limit on attempts.
    pub max_attempts: usize,
    /// Smallest dimension.
    pub p_min: usize,
    /// Largest dimension.
    pub p_max: usize,
    /// Largest `log10` condition number of the random instances.
    pub max_log10_cond: f64,
    /// Seed of the per-attempt streams.
    pub seed: u64,
}

impl Default for DominanceConfig {
    fn default() -> Self {
        Self {
            target: 1000,
            max_attempts: 20_000,
            p_min: 2,
            p_max: 12,
            max_log10_cond: 2.0,
            seed: 0,
        }
    }
}

/// Outcome of a dominance study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceSummary {
    /// Bound exercised.
    pub target: DominanceTarget,
    /// Attempts consumed.
    pub attempted: usize,
    /// Reports whose preconditions held (at most `config.target`).
    pub precondition_met: usize,
    /// Reports with `observed > bound` among those.
    pub violations: usize,
    /// Largest `observed / bound` among those.
    pub worst_ratio: f64,
    /// The reports whose preconditions held, in attempt order.
    pub reports: Vec<BoundReport>,
}

fn dominance_attempt(target: DominanceTarget, cfg: &DominanceConfig, index: u64) -> Result<BoundReport> {
    let tol = ToleranceConfig::default();
    let mut stream = rng::stream(cfg.seed, index);
    let p = stream.random_range(cfg.p_min..=cfg.p_max);
    let rank = if index % 3 == 2 && p > 2 {
        stream.random_range(1..p)
    } else {
        p
    };
    let log10_cond = stream.random_range(0.0..=cfg.max_log10_cond);
    let (a, b) = random_instance(p, rank, log10_cond, &tol, &mut stream)?;
    let u: f64 = stream.random_range(0.02..1.0);
    match target {
        DominanceTarget::LeastSquares => {
            let kappa = condition_number(&a)?;
            let pert = sample_perturbation(&a, &b, u / (2.0 * kappa), &mut stream)?;
            least_squares_bound_check(&a, &b, &pert.matrix, &pert.vector)
        }
        DominanceTarget::Reduction(kind) => {
            let base = run(kind, &a, &b, &tol)?;
            let dofs: Vec<usize> = base.dof_set().into_iter().filter(|&d| d > 0).collect();
            let r = dofs[stream.random_range(0..dofs.len())];
            let step = step_with_dof(&base, r).expect("dof taken from the path");
            let m0 = m_constant(1.0, &a, &b, &base.subspace(step))?;
            let pert = sample_perturbation(&a, &b, u / m0, &mut stream)?;
            let path = run(kind, &pert.matrix, &pert.vector, &tol)?;
            reduction_report(kind, &a, &b, &pert.matrix, &pert.vector, &base, &path, r, None)
        }
    }
}

/// Collects `cfg.target` precondition-satisfying random perturbations and
/// counts bound violations. Attempts run in parallel batches; the result only
/// depends on the seed.
pub fn dominance_study(target: DominanceTarget, cfg: &DominanceConfig) -> Result<DominanceSummary> {
    const BATCH: usize = 256;
    let mut reports = Vec::new();
    let mut attempted = 0;
    while reports.len() < cfg.target && attempted < cfg.max_attempts {
        let end = (attempted + BATCH).min(cfg.max_attempts);
        let batch: Vec<Result<BoundReport>> = (attempted..end)
            .into_par_iter()
            .map(|i| dominance_attempt(target, cfg, i as u64))
            .collect();
        for report in batch {
            attempted += 1;
            let report = report?;
            if report.precondition_met {
                reports.push(report);
                if reports.len() == cfg.target {
                    break;
                }
            }
        }
    }
    let violations = reports.iter().filter(|r| !r.holds).count();
    let worst_ratio = reports
        .iter()
        .map(|r| {
            if r.bound_value > 0.0 {
                r.observed_error / r.bound_value
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    Ok(DominanceSummary {
        target,
        attempted,
        precondition_met: reports.len(),
        violations,
        worst_ratio,
        reports,
    })
}

/// Evaluates the bound of `target` on `count` random perturbations of a fixed
/// pair `(A, b)`. Sizes are drawn below the precondition threshold: `u / (2 kappa)`
/// for least squares and `u / M(1)` for a reduction, with `u` uniform on
/// `[0.02, 1)`. Reduction trials use `dof` when given, otherwise a random
/// attained dof with a finite amplification constant. Trial `i` draws from
/// stream `i` of `seed`.
pub fn perturbation_trials(
    target: DominanceTarget,
    a: &SymPsd,
    b: &DVector<f64>,
    dof: Option<usize>,
    count: usize,
    seed: u64,
) -> Result<Vec<BoundReport>> {
    let tol = *a.tol();
    match target {
        DominanceTarget::LeastSquares => {
            let kappa = condition_number(a)?;
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let mut stream = rng::stream(seed, i as u64);
                    let u: f64 = stream.random_range(0.02..1.0);
                    let pert = sample_perturbation(a, b, u / (2.0 * kappa), &mut stream)?;
                    least_squares_bound_check(a, b, &pert.matrix, &pert.vector)
                })
                .collect()
        }
        DominanceTarget::Reduction(kind) => {
            let base = run(kind, a, b, &tol)?;
            let mut candidates = Vec::new();
            for r in base.dof_set().into_iter().filter(|&d| d > 0) {
                if dof.is_some_and(|d| d != r) {
                    continue;
                }
                let step = step_with_dof(&base, r).expect("dof taken from the path");
                match m_constant(1.0, a, b, &base.subspace(step)) {
                    Ok(m0) => candidates.push((r, m0)),
                    Err(Error::DegenerateProjection(_)) if dof.is_none() => {}
                    Err(e) => return Err(e),
                }
            }
            if candidates.is_empty() {
                return Err(match dof {
                    Some(d) => Error::DofNotAttained { dof: d },
                    None => Error::DegenerateProjection("no attained dof has a finite amplification constant"),
                });
            }
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let mut stream = rng::stream(seed, i as u64);
                    let (r, m0) = candidates[stream.random_range(0..candidates.len())];
                    let u: f64 = stream.random_range(0.02..1.0);
                    let pert = sample_perturbation(a, b, u / m0, &mut stream)?;
                    let path = run(kind, &pert.matrix, &pert.vector, &tol)?;
                    reduction_report(kind, a, b, &pert.matrix, &pert.vector, &base, &path, r, None)
                })
                .collect()
        }
    }
}

/// Interpretation status of a population error report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpretabilityStatus {
    /// Adaptive, parsimonious and below the perturbation threshold.
    Interpretable,
    /// The adaptivity or parsimony verdict failed.
    NotInterpretable,
    /// `M eps* >= 1`.
    ThresholdViolated,
}

/// Population error of a policy against the tau-identifiable parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationErrorReport {
    /// Threshold `tau`.
    pub tau: f64,
    /// Identifiable level `s*`.
    pub level: usize,
    /// Interpretation status.
    pub status: InterpretabilityStatus,
    /// Whether the policy is adaptive on the pair.
    pub adaptive: bool,
    /// Whether the policy is parsimonious at level `s*`.
    pub parsimonious: bool,
    /// Terminal dof of the oracle run on `(Sigma_s, sigma_s)`.
    pub oracle_dof: usize,
    /// Bound evaluation with the reduced solution as observed error.
    pub report: BoundReport,
    /// Observed error when the projected solution is used instead.
    pub observed_projected: f64,
    /// Coefficients of the run on `(Sigma, sigma)` at the oracle dof (reduced form).
    pub coefficients: Vec<f64>,
    /// Coefficients of the identifiable parameter.
    pub identifiable_beta: Vec<f64>,
}

struct PopulationSetting {
    tau: f64,
    level: usize,
    beta_s: DVector<f64>,
    sigma_s: SymPsd,
    vec_s: DVector<f64>,
    sigma_y: SymPsd,
    vec_y: DVector<f64>,
    oracle: ReductionPath,
    full: ReductionPath,
    adaptive: bool,
    parsimonious: bool,
}

fn population_setting(kind: AlgorithmKind, pair: &PopulationPair, tau: f64) -> Result<PopulationSetting> {
    let tol = *pair.tol();
    let rel = relevant_subspace(pair, &tol)?;
    let ladder = truncation_ladder(&rel)?;
    let id = identifiable_parameter(&ladder, tau)?;
    let level_pair = ladder.pair(id.level)?;
    let oracle = run(kind, level_pair.sigma_mat(), level_pair.sigma_vec(), &tol)?;
    let full = run(kind, pair.sigma_mat(), pair.sigma_vec(), &tol)?;
    let adaptive = check_adaptive(kind, pair)?.adaptive;
    let parsimonious = check_parsimonious(kind, pair, id.level)?.parsimonious;
    Ok(PopulationSetting {
        tau,
        level: id.level,
        beta_s: DVector::from_vec(id.beta),
        sigma_s: level_pair.sigma_mat().clone(),
        vec_s: level_pair.sigma_vec().clone(),
        sigma_y: rel.sigma_mat_rel,
        vec_y: rel.sigma_vec_rel,
        oracle,
        full,
        adaptive,
        parsimonious,
    })
}

/// Evaluates the population bound `(5/2) M(Sigma_s, sigma_s) eps*` with
/// `eps* = eps(Sigma_y, sigma_y, Sigma_s, sigma_s)` and compares it with the
/// observed error of the run on `(Sigma, sigma)` at the oracle dof.
///
/// Failed verdicts and a violated threshold are reported through
/// [`InterpretabilityStatus`]. The observed error is NaN, with a note, when
/// the run on the full pair never attains the oracle dof.
pub fn population_error_report(
    kind: AlgorithmKind,
    pair: &PopulationPair,
    tau: f64,
    c_a: Option<f64>,
) -> Result<PopulationErrorReport> {
    let setting = population_setting(kind, pair, tau)?;
    let r = setting.oracle.max_dof();
    population_report_at(kind, &setting, r, c_a, BoundKind::Population)
}

fn population_report_at(
    kind: AlgorithmKind,
    setting: &PopulationSetting,
    r: usize,
    c_a: Option<f64>,
    bound: BoundKind,
) -> Result<PopulationErrorReport> {
    let r_star = setting.oracle.max_dof();
    let oracle_subspace = setting.oracle.terminal_subspace();
    let epsilon = perturbation_size(&setting.sigma_y, &setting.vec_y, &setting.sigma_s, &setting.vec_s)?;
    let mut notes = Vec::new();
    let full_step = step_with_dof(&setting.full, r_star);
    let deviation_angle = match full_step {
        Some(step) => Some(principal_angle(&oracle_subspace, &setting.full.subspace(step))?),
        None => None,
    };
    let realized = match (deviation_angle, epsilon > 0.0) {
        (Some(angle), true) => (angle.sin() / epsilon).max(1.0),
        _ => 1.0,
    };
    let c = c_a.unwrap_or(realized);
    if realized > c * (1.0 + 1e-9) {
        notes.push(format!(
            "realized stability ratio {realized:.3e} exceeds supplied constant {c:.3e}"
        ));
    }
    let m = m_constant(c, &setting.sigma_s, &setting.vec_s, &oracle_subspace)?;
    let compressed = compress(setting.sigma_s.matrix(), oracle_subspace.basis(), setting.sigma_s.tol())?;
    let kappa = condition_number(&compressed)?;
    let (coefficients, projected) = match step_with_dof(&setting.full, r) {
        Some(step) => (
            setting.full.steps[step].solution.clone(),
            setting.full.steps[step].projected_solution.clone(),
        ),
        None => {
            notes.push(format!("run on the full pair does not attain dof {r}"));
            (
                DVector::from_element(setting.beta_s.len(), f64::NAN),
                DVector::from_element(setting.beta_s.len(), f64::NAN),
            )
        }
    };
    let observed = relative_gap(&coefficients, &setting.beta_s);
    let observed_projected = relative_gap(&projected, &setting.beta_s);
    let status = if !setting.adaptive || !setting.parsimonious {
        notes.push(format!(
            "policy is {}adaptive and {}parsimonious",
            if setting.adaptive { "" } else { "not " },
            if setting.parsimonious { "" } else { "not " }
        ));
        InterpretabilityStatus::NotInterpretable
    } else if m * epsilon >= 1.0 {
        notes.push(format!("M eps* = {:.3e} is not below 1", m * epsilon));
        InterpretabilityStatus::ThresholdViolated
    } else {
        InterpretabilityStatus::Interpretable
    };
    let inflation = ((r_star - r.min(r_star)) as f64).sqrt();
    let bound_value = inflation + 2.5 * m * epsilon;
    let precondition_met = notes.is_empty();
    Ok(PopulationErrorReport {
        tau: setting.tau,
        level: setting.level,
        status,
        adaptive: setting.adaptive,
        parsimonious: setting.parsimonious,
        oracle_dof: r_star,
        report: BoundReport {
            bound,
            kind: Some(kind),
            dof: Some(r),
            epsilon,
            condition_number: kappa,
            c_constant: Some(c),
            m_constant: Some(m),
            bound_value,
            observed_error: observed,
            precondition_met,
            holds: dominates(observed, bound_value),
            projector_deviation: deviation_angle.map(f64::sin),
            principal_angle: deviation_angle,
            notes,
        },
        observed_projected,
        coefficients: coefficients.iter().copied().collect(),
        identifiable_beta: setting.beta_s.iter().copied().collect(),
    })
}

/// Population error at an early-stopped dof `r <= r*`, bounded by
/// `sqrt(r* - r) + (5/2) M* eps*`.
pub fn early_stopping_report(
    kind: AlgorithmKind,
    pair: &PopulationPair,
    tau: f64,
    r: usize,
    c_a: Option<f64>,
) -> Result<PopulationErrorReport> {
    let setting = population_setting(kind, pair, tau)?;
    let r_star = setting.oracle.max_dof();
    if r > r_star {
        return Err(Error::OutOfRange {
            what: "early-stopping dof",
            value: r as f64,
            allowed: "r <= terminal oracle dof",
        });
    }
    population_report_at(kind, &setting, r, c_a, BoundKind::PopulationEarlyStopping)
}

/// Sample-size quantities entering the sample rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleRate {
    /// Sample size `n`.
    pub n: usize,
    /// Effective rank `rho_x`.
    pub rho_x: f64,
    /// Uniform effective rank `rho_{x,n}`.
    pub rho_xn: f64,
}

impl SampleRate {
    /// `sqrt(rho_x / (n nu^2)) + rho_{x,n} / (n nu)`.
    pub fn threshold(&self, nu: f64) -> f64 {
        let n = self.n as f64;
        (self.rho_x / (n * nu * nu)).sqrt() + self.rho_xn / (n * nu)
    }

    /// `delta_n = sqrt(rho_x / n) + rho_{x,n} / n`.
    pub fn delta(&self) -> f64 {
        let n = self.n as f64;
        (self.rho_x / n).sqrt() + self.rho_xn / n
    }
}

/// Sample error at an early-stopped dof `r <= r_A`, bounded by
/// `sqrt(r_A - r) + (5/2) K M_A (sqrt(rho_x / (n nu^2)) + rho_{x,n} / (n nu))`.
///
/// `population` is `(Sigma, sigma)`, `sample` is `(Sigma^, sigma^)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_early_stopping_report(
    kind: AlgorithmKind,
    population: &PopulationPair,
    sample: &PopulationPair,
    r: usize,
    k: f64,
    rate: SampleRate,
    nu: f64,
    c_a: f64,
) -> Result<BoundReport> {
    if !(nu > 0.0 && nu < 0.5) {
        return Err(Error::OutOfRange {
            what: "nu",
            value: nu,
            allowed: "0 < nu < 1/2",
        });
    }
    let tol = *population.tol();
    let pop_path = run(kind, population.sigma_mat(), population.sigma_vec(), &tol)?;
    let r_a = pop_path.max_dof();
    if r > r_a {
        return Err(Error::OutOfRange {
            what: "early-stopping dof",
            value: r as f64,
            allowed: "r <= terminal population dof",
        });
    }
    let max_step = sample.dim();
    let sample_path = run_to(kind, sample.sigma_mat(), sample.sigma_vec(), max_step, &tol)?;
    let terminal = pop_path.terminal_subspace();
    let m = m_constant(c_a, population.sigma_mat(), population.sigma_vec(), &terminal)?;
    let compressed = compress(population.sigma_mat().matrix(), terminal.basis(), &tol)?;
    let kappa = condition_number(&compressed)?;
    let epsilon = perturbation_size(
        sample.sigma_mat(),
        sample.sigma_vec(),
        population.sigma_mat(),
        population.sigma_vec(),
    )?;
    let beta_a = &pop_path.steps[pop_path.steps.len() - 1].solution;
    let mut notes = Vec::new();
    let observed = match step_with_dof(&sample_path, r) {
        Some(step) => relative_gap(&sample_path.steps[step].solution, beta_a),
        None => {
            notes.push(format!("sample path does not attain dof {r}"));
            f64::NAN
        }
    };
    let threshold = k * rate.delta() / nu;
    if epsilon > threshold {
        notes.push(format!(
            "sample perturbation {epsilon:.3e} is outside the event threshold {threshold:.3e}"
        ));
    }
    if k * m * rate.delta() >= nu {
        notes.push(format!("K M delta_n = {:.3e} is not below nu", k * m * rate.delta()));
    }
    let bound_value = ((r_a - r) as f64).sqrt() + 2.5 * k * m * rate.threshold(nu);
    Ok(BoundReport {
        bound: BoundKind::SampleEarlyStopping,
        kind: Some(kind),
        dof: Some(r),
        epsilon,
        condition_number: kappa,
        c_constant: Some(c_a),
        m_constant: Some(m),
        bound_value,
        observed_error: observed,
        precondition_met: notes.is_empty(),
        holds: dominates(observed, bound_value),
        projector_deviation: None,
        principal_angle: None,
        notes,
    })
}

/// Relative prediction risk
/// `(beta_LS - coef)^T Sigma (beta_LS - coef) / (||Sigma|| ||beta_LS||^2)`.
pub fn relative_prediction_risk(pair: &PopulationPair, coef: &DVector<f64>) -> Result<f64> {
    if coef.len() != pair.dim() {
        return Err(Error::DimensionMismatch {
            context: "coefficient length",
            expected: pair.dim(),
            found: coef.len(),
        });
    }
    let beta = pair.sigma_mat().apply_pinv(pair.sigma_vec());
    let d = &beta - coef;
    Ok(pair.sigma_mat().quadratic_form(&d) / (pair.sigma_mat().op_norm() * beta.norm_squared()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::SolutionForm;
    use approx::assert_relative_eq;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn toy(rho: f64, b1: f64, b2: f64) -> PopulationPair {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let v = DVector::from_vec(vec![b1 + rho * b2, rho * b1 + b2, 0.0]);
        PopulationPair::from_parts(m, v, &tol()).unwrap()
    }

    fn diag(values: &[f64]) -> SymPsd {
        SymPsd::new(DMatrix::from_diagonal(&DVector::from_row_slice(values)), &tol()).unwrap()
    }

    #[test]
    fn least_squares_bound_zero_perturbation() {
        let a = diag(&[2.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 1.0]);
        let report = least_squares_bound_check(&a, &b, &a, &b).unwrap();
        assert_eq!(report.observed_error, 0.0);
        assert_eq!(report.bound_value, 0.0);
        assert!(report.precondition_met && report.holds);
    }

    #[test]
    fn least_squares_bound_holds_on_random_rank_preserving_perturbations() {
        let a = diag(&[2.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 1.0]);
        let mut met = 0;
        for i in 0..1000 {
            let mut stream = rng::stream(11, i);
            let pert = sample_perturbation(&a, &b, 0.1, &mut stream).unwrap();
            let report = least_squares_bound_check(&a, &b, &pert.matrix, &pert.vector).unwrap();
            if report.precondition_met {
                met += 1;
                assert!(report.holds, "{report:?}");
            }
        }
        assert!(met > 900);
    }

    #[test]
    fn least_squares_rank_breaking_is_flagged() {
        let a = diag(&[2.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 1.0]);
        let broken = diag(&[2.0, 0.0]);
        let report = least_squares_bound_check(&a, &b, &broken, &DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert!(!report.precondition_met);
    }

    #[test]
    fn m_constant_examples() {
        let a = diag(&[4.0, 2.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let full = Subspace::new(DMatrix::identity(3, 3), &tol()).unwrap();
        assert_relative_eq!(
            m_constant(1.0, &a, &b, &full).unwrap(),
            10.0 * 4.0,
            max_relative = 1e-12
        );
        let m1 = m_constant(1.0, &a, &b, &full).unwrap();
        let m2 = m_constant(2.0, &a, &b, &full).unwrap();
        assert_relative_eq!(m2 / m1, 9.0 / 5.0, max_relative = 1e-12);
        let e1 = Subspace::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]), &tol()).unwrap();
        let b_orth = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            m_constant(1.0, &a, &b_orth, &e1),
            Err(Error::DegenerateProjection(_))
        ));
    }

    #[test]
    fn reduction_check_zero_perturbation() {
        let pair = toy(0.9, 1.0, 0.5);
        for kind in AlgorithmKind::ALL {
            let r = run(kind, pair.sigma_mat(), pair.sigma_vec(), &tol()).unwrap().max_dof();
            let report = algorithm_perturbation_check(
                kind,
                pair.sigma_mat(),
                pair.sigma_vec(),
                pair.sigma_mat(),
                pair.sigma_vec(),
                r,
                None,
            )
            .unwrap();
            assert_eq!(report.observed_error, 0.0);
            assert!(report.holds && report.precondition_met, "{report:?}");
        }
        let pcr = algorithm_perturbation_check(
            AlgorithmKind::Pcr,
            pair.sigma_mat(),
            pair.sigma_vec(),
            pair.sigma_mat(),
            pair.sigma_vec(),
            1,
            None,
        )
        .unwrap();
        assert!(pcr.bound_value.is_infinite() && !pcr.precondition_met);
    }

    #[test]
    fn reduction_check_matches_least_squares_on_full_range() {
        let a = diag(&[3.0, 2.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let mut stream = rng::stream(5, 0);
        let pert = sample_perturbation(&a, &b, 1e-3, &mut stream).unwrap();
        let ls = least_squares_bound_check(&a, &b, &pert.matrix, &pert.vector).unwrap();
        let alg =
            algorithm_perturbation_check(AlgorithmKind::Pcr, &a, &b, &pert.matrix, &pert.vector, 3, None).unwrap();
        assert_relative_eq!(ls.observed_error, alg.observed_error, max_relative = 1e-8);
        assert_relative_eq!(ls.epsilon, alg.epsilon, max_relative = 1e-12);
    }

    #[test]
    fn stability_estimates() {
        let a = SymPsd::identity(3, &tol());
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        for kind in AlgorithmKind::ALL {
            let r = run(kind, &a, &b, &tol()).unwrap().max_dof();
            let est = estimate_stability_constant(kind, &a, &b, r, 0.0, 4, 1).unwrap();
            assert_eq!(est.c_hat, 1.0);
        }
        let a = diag(&[4.0, 2.0, 1.0]);
        let b = DVector::from_vec(vec![4.0, 0.2, 1.0]);
        let est = estimate_stability_constant(AlgorithmKind::Fss, &a, &b, 1, 1e-6, 32, 3).unwrap();
        assert_eq!(est.c_hat, 1.0);
        let mut previous = 0.0;
        for gap in [1.0, 0.1, 0.01] {
            let a = diag(&[2.0 + gap, 2.0, 1.0]);
            let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
            let est = estimate_stability_constant(AlgorithmKind::Pcr, &a, &b, 1, 1e-4, 64, 9).unwrap();
            assert!(est.c_hat > previous, "gap {gap}: {} <= {previous}", est.c_hat);
            previous = est.c_hat;
        }
    }

    #[test]
    fn stability_estimate_is_deterministic() {
        let a = diag(&[3.0, 2.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let e1 = estimate_stability_constant(AlgorithmKind::Pls, &a, &b, 2, 1e-3, 16, 4).unwrap();
        let e2 = estimate_stability_constant(AlgorithmKind::Pls, &a, &b, 2, 1e-3, 16, 4).unwrap();
        assert_eq!(e1.c_hat, e2.c_hat);
        assert_eq!(e1.max_ratio_witness, e2.max_ratio_witness);
    }

    #[test]
    fn toy_population_reports() {
        let rho: f64 = 0.98;
        let pair = toy(rho, 1.0, 0.0);
        let pls = population_error_report(AlgorithmKind::Pls, &pair, 5.0, None).unwrap();
        assert_eq!(pls.level, 1);
        assert_eq!(pls.status, InterpretabilityStatus::Interpretable);
        let delta =
            (1.0 - rho) * ((1.0 + rho).powi(2) + (1.0 - rho).powi(2)).sqrt() / (2f64.sqrt() * (1.0 + rho * rho));
        assert_relative_eq!(pls.observed_projected, delta, max_relative = 1e-9);
        assert!(pls.report.holds);
        assert_relative_eq!(pls.report.m_constant.unwrap(), 10.0, max_relative = 1e-9);
        let pcr = population_error_report(AlgorithmKind::Pcr, &pair, 5.0, None).unwrap();
        assert_eq!(pcr.status, InterpretabilityStatus::NotInterpretable);
        assert_relative_eq!(pcr.report.observed_error, 1.0, max_relative = 1e-12);
        let full = population_error_report(AlgorithmKind::Pls, &pair, 20.0, None).unwrap();
        assert_eq!(full.level, 2);
        assert!(full.report.observed_error < 1e-10);
        assert!(full.report.epsilon < 1e-12);
    }

    #[test]
    fn early_stopping_cases() {
        let pair = toy(0.98, 1.0, 0.0);
        let at_terminal = early_stopping_report(AlgorithmKind::Pls, &pair, 20.0, 2, None).unwrap();
        let plain = population_error_report(AlgorithmKind::Pls, &pair, 20.0, None).unwrap();
        assert_relative_eq!(at_terminal.report.bound_value, plain.report.bound_value);
        let at_zero = early_stopping_report(AlgorithmKind::Pls, &pair, 20.0, 0, None).unwrap();
        assert_relative_eq!(at_zero.report.observed_error, 1.0);
        assert!(at_zero.report.bound_value >= 1.0);
        assert!(matches!(
            early_stopping_report(AlgorithmKind::Pls, &pair, 20.0, 3, None),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn relative_risk_examples() {
        let rho: f64 = 0.98;
        let pair = toy(rho, 1.0, 0.0);
        let beta = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(relative_prediction_risk(&pair, &beta).unwrap() < 1e-14);
        assert_relative_eq!(
            relative_prediction_risk(&pair, &DVector::zeros(3)).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        let path = run(AlgorithmKind::Pls, pair.sigma_mat(), pair.sigma_vec(), &tol()).unwrap();
        let coef = path.coefficients_at_dof(1, SolutionForm::Projected).unwrap();
        let expected = rho * rho * (1.0 - rho * rho) / (2.0 * (1.0 + rho * rho).powi(2));
        assert_relative_eq!(
            relative_prediction_risk(&pair, &coef).unwrap(),
            expected,
            max_relative = 1e-9
        );
    }

    #[test]
    fn small_dominance_studies_have_no_violations() {
        let cfg = DominanceConfig {
            target: 60,
            max_attempts: 2000,
            seed: 17,
            ..Default::default()
        };
        for target in [
            DominanceTarget::LeastSquares,
            DominanceTarget::Reduction(AlgorithmKind::Pcr),
            DominanceTarget::Reduction(AlgorithmKind::Pls),
            DominanceTarget::Reduction(AlgorithmKind::Fss),
        ] {
            let summary = dominance_study(target, &cfg).unwrap();
            assert_eq!(summary.precondition_met, 60, "{target:?}");
            assert_eq!(summary.violations, 0, "{target:?}");
        }
    }

    #[test]
    fn trials_on_fixed_pair_hold_and_are_reproducible() {
        let pair = toy(0.98, 1.0, 0.0);
        let (a, b) = (pair.sigma_mat(), pair.sigma_vec());
        let ls = perturbation_trials(DominanceTarget::LeastSquares, a, b, None, 40, 3).unwrap();
        assert!(ls.iter().all(|r| r.precondition_met && r.holds));
        let target = DominanceTarget::Reduction(AlgorithmKind::Pls);
        let first = perturbation_trials(target, a, b, None, 40, 3).unwrap();
        let second = perturbation_trials(target, a, b, None, 40, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
        assert!(first.iter().filter(|r| r.precondition_met).all(|r| r.holds));
        let pcr = DominanceTarget::Reduction(AlgorithmKind::Pcr);
        assert!(perturbation_trials(pcr, a, b, None, 5, 3).is_ok());
        assert!(matches!(
            perturbation_trials(pcr, a, b, Some(7), 5, 3),
            Err(Error::DofNotAttained { dof: 7 })
        ));
    }
}
