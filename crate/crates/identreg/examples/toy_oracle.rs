//! Closed-form errors of the three-feature toy model next to the values the
//! generic reduction framework computes.

use identreg::harness::{toy_framework, toy_oracle, ToyConfig};
use identreg::{Result, ToleranceConfig};

pub fn run_example() -> Result<()> {
    let cfg = ToyConfig::default();
    let oracle = toy_oracle(&cfg)?;
    println!(
        "closed form: delta pcr {:.4}, spr {:.4}, pls {:.4}; eps pcr {:.4}, spr {:.4}, pls {:.4}",
        oracle.delta_pcr, oracle.delta_spr, oracle.delta_pls, oracle.eps_pcr, oracle.eps_spr, oracle.eps_pls
    );
    for estimate in toy_framework(&cfg, 5.0, &ToleranceConfig::default())? {
        println!(
            "framework {}: delta {:.4}, eps {:.4}",
            estimate.kind, estimate.delta_projected, estimate.eps_projected
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("toy example");
}
