//! Orthonormal subspaces, principal angles and Krylov bases.

use identreg::spectral::SymPsd;
use identreg::subspace::{krylov_basis, principal_angle, projector, Subspace};
use identreg::{Result, ToleranceConfig};
use nalgebra::{DMatrix, DVector};

pub fn run_example() -> Result<()> {
    let tol = ToleranceConfig::default();
    let plane = Subspace::span(&DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), &tol);
    let theta = 0.3_f64;
    let tilted = Subspace::span(
        &DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, theta.cos(), 0.0, theta.sin()]),
        &tol,
    );
    println!(
        "principal angle between the planes: {:.6} (tilt {theta})",
        principal_angle(&plane, &tilted)?
    );
    println!("projector onto the first plane:\n{}", projector(&plane).matrix());

    let a = SymPsd::new(
        DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 2.0, 1.0])),
        &tol,
    )?;
    let b = DVector::from_vec(vec![1.0, 1.0, 0.0, 1.0]);
    for t in 1..=4 {
        let krylov = krylov_basis(&a, &b, t, &tol)?;
        println!("Krylov space of order {t} has dimension {}", krylov.dim());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("subspace example");
}
