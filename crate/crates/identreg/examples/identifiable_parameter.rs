//! The relevant subspace, the truncation ladder and the tau-identifiable
//! parameter of an ill-conditioned three-feature model.

use identreg::population::{
    identifiable_parameter, least_squares, relevant_subspace, truncation_ladder, PopulationPair,
};
use identreg::{Result, ToleranceConfig};
use nalgebra::{DMatrix, DVector};

pub fn run_example() -> Result<()> {
    let tol = ToleranceConfig::default();
    let rho = 0.98;
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 100.0]);
    let beta = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let pair = PopulationPair::from_parts(sigma.clone(), &sigma * &beta, &tol)?;
    println!("least squares: {:?}", least_squares(&pair)?.as_slice());

    let rel = relevant_subspace(&pair, &tol)?;
    println!("relevant dimension {} of {}", rel.relevant.dim(), pair.dim());
    let ladder = truncation_ladder(&rel)?;
    for level in &ladder.levels {
        println!(
            "level {}: sqrt condition {:.4}, exact risk {:.4e}, risk bound {:.4e}, beta {:?}",
            level.level, level.sqrt_condition_number, level.exact_risk, level.risk_bound, level.beta
        );
    }
    for tau in [5.0, 10.0] {
        let id = identifiable_parameter(&ladder, tau)?;
        println!(
            "tau = {tau}: level {} with dof {} and beta {:?}",
            id.level, id.dof, id.beta
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("identifiability example");
}
