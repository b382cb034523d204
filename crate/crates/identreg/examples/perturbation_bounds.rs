//! Perturbation bounds for least squares and for reduction algorithms, a
//! stability-constant estimate and a population error report.

use identreg::bounds::{
    dominance_study, estimate_stability_constant, least_squares_bound_check, population_error_report,
    sample_perturbation, DominanceConfig, DominanceTarget,
};
use identreg::harness::{toy_population, ToyConfig};
use identreg::reduction::AlgorithmKind;
use identreg::spectral::condition_number;
use identreg::{rng, Result, ToleranceConfig};

pub fn run_example() -> Result<()> {
    let tol = ToleranceConfig::default();
    let pair = toy_population(&ToyConfig::default(), &tol)?;
    let (a, b) = (pair.sigma_mat(), pair.sigma_vec());

    let kappa = condition_number(a)?;
    let pert = sample_perturbation(a, b, 0.1 / kappa, &mut rng::stream(1, 0))?;
    let ls = least_squares_bound_check(a, b, &pert.matrix, &pert.vector)?;
    println!(
        "least squares: eps {:.3e}, observed {:.3e} <= bound {:.3e}: {}",
        ls.epsilon, ls.observed_error, ls.bound_value, ls.holds
    );

    let cfg = DominanceConfig {
        target: 100,
        seed: 2,
        ..Default::default()
    };
    for target in [
        DominanceTarget::LeastSquares,
        DominanceTarget::Reduction(AlgorithmKind::Pls),
    ] {
        let study = dominance_study(target, &cfg)?;
        println!(
            "{target:?}: {} checks, {} violations, worst ratio {:.3e}",
            study.precondition_met, study.violations, study.worst_ratio
        );
    }

    let stability = estimate_stability_constant(AlgorithmKind::Pls, a, b, 2, 1e-4, 64, 3)?;
    println!(
        "PLS stability at dof 2: C >= {:.3}, D >= {:.3}",
        stability.c_hat, stability.d_hat
    );

    for kind in AlgorithmKind::ALL {
        let report = population_error_report(kind, &pair, 5.0, None)?;
        println!(
            "{kind}: status {:?}, observed {:.3e}, bound {:.3e}",
            report.status, report.report.observed_error, report.report.bound_value
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("bounds example");
}
