//! Sample moments, plug-in complexity functionals and the Monte Carlo
//! frequency of the sample-perturbation event on the toy generator.

use identreg::harness::{ToyConfig, ToyGenerator};
use identreg::sample::{
    complexity_report, heavy_tail_check, perturbation_event_check, sample_moments, EventCheckConfig, PairGenerator,
};
use identreg::{rng, Result, ToleranceConfig};

pub fn run_example() -> Result<()> {
    let tol = ToleranceConfig::default();
    let generator = ToyGenerator::new(ToyConfig::default(), &tol)?;
    let data = generator.draw(500, &mut rng::stream(11, 0))?;
    let moments = sample_moments(&data, &tol)?;
    println!(
        "sample covariance diagonal: {:?}",
        moments.sigma_mat().matrix().diagonal().as_slice()
    );

    let report = complexity_report(&data, 8.0, 256, 12, &tol)?;
    println!(
        "rho_x {:.3}, rho_xn_hat {:.3}, delta_n {:.4}, K_hat {:?}",
        report.rho_x, report.rho_xn_hat, report.delta_n, report.k_hat
    );
    let check = heavy_tail_check(&report);
    println!(
        "heavy-tail rate bound {:.4} >= delta_n: {}",
        check.rate_bound, check.holds
    );

    for nu in [0.1, 0.25] {
        let cfg = EventCheckConfig {
            n: 500,
            nu,
            k: None,
            n_trials: 100,
            q: 8.0,
            seed: 13,
        };
        let event = perturbation_event_check(&generator, &cfg, &tol)?;
        println!(
            "nu = {nu}: frequency {:.3} against target {:.3} (K from {:?})",
            event.frequency, event.target, event.k_source
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("sample example");
}
