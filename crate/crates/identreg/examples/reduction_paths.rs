//! PCR, PLS and forward subset selection paths with their adaptivity and
//! parsimony verdicts.

use identreg::population::PopulationPair;
use identreg::reduction::{check_adaptive, check_parsimonious, run, solution_representations, AlgorithmKind};
use identreg::{Result, ToleranceConfig};
use nalgebra::{DMatrix, DVector};

pub fn run_example() -> Result<()> {
    let tol = ToleranceConfig::default();
    let rho = 0.98;
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 100.0]);
    let pair = PopulationPair::from_parts(sigma.clone(), &sigma * DVector::from_vec(vec![1.0, 0.0, 0.0]), &tol)?;
    for kind in AlgorithmKind::ALL {
        let path = run(kind, pair.sigma_mat(), pair.sigma_vec(), &tol)?;
        println!("{kind}: dof set {:?}", path.dof_set());
        let mut reps = solution_representations(&path, pair.sigma_mat(), pair.sigma_vec());
        reps.dedup_by_key(|rep| rep.dof);
        for rep in reps {
            println!(
                "  dof {}: reduced {:?}, projected {:?}",
                rep.dof,
                rep.reduced.as_slice(),
                rep.projected.as_slice()
            );
        }
        let adaptive = check_adaptive(kind, &pair)?;
        let parsimonious = check_parsimonious(kind, &pair, 1)?;
        println!(
            "  adaptive {}, parsimonious at level 1 {}",
            adaptive.adaptive, parsimonious.parsimonious
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("reduction example");
}
