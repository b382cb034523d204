//! A reduced-size latent-factor simulation comparing PCR, PLS and forward
//! subset selection at five degrees of freedom.

use identreg::harness::{run_study, SimConfig, SimulationDesign};
use identreg::reduction::AlgorithmKind;
use identreg::{Result, ToleranceConfig};

pub fn run_example() -> Result<()> {
    let tol = ToleranceConfig::default();
    let cfg = SimConfig {
        p: 200,
        r_y: 40,
        reps: 5,
        rotation_seed: 1,
        data_seed: 2,
        ..Default::default()
    };
    let design = SimulationDesign::new(cfg)?;
    let population = design.population_summary(5.0, &tol)?;
    println!(
        "population effective rank {:.2}, identifiable gap {:.2e} (bound {:.2e})",
        population.effective_rank, population.identifiable_gap, population.gap_bound
    );
    let study = run_study(&design, &AlgorithmKind::ALL, 5, &tol)?;
    for kind in AlgorithmKind::ALL {
        println!(
            "{kind}: median estimation error {:.3}",
            study.median(kind, "estimation_error").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("simulation example");
}
