//! Eigendecomposition, pseudoinverse, condition number and effective rank of
//! a rank-deficient covariance matrix.

use identreg::spectral::{condition_number, effective_rank, eigendecompose, pseudoinverse, SymPsd};
use identreg::{Result, ToleranceConfig};
use nalgebra::{DMatrix, DVector};

pub fn run_example() -> Result<()> {
    let tol = ToleranceConfig::default();
    let a = SymPsd::new(
        DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 1.0, 0.0, 0.0, //
                1.0, 2.0, 0.0, 0.0, //
                0.0, 0.0, 3.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        ),
        &tol,
    )?;
    let decomposition = eigendecompose(&a, &tol);
    println!("eigenvalues        {:?}", decomposition.eigenvalues);
    println!(
        "eigenspace sizes   {:?}",
        decomposition.clusters.iter().map(Vec::len).collect::<Vec<_>>()
    );
    println!("rank               {}", decomposition.rank);
    println!("condition number   {:.6}", condition_number(&a)?);
    println!("effective rank     {:.6}", effective_rank(&a)?);

    let pinv = pseudoinverse(&a, &tol);
    let b = DVector::from_vec(vec![1.0, 0.0, 3.0, 0.0]);
    let x = pinv.matrix() * &b;
    println!("minimum-norm solution of A x = b: {:?}", x.as_slice());
    println!("residual ||A x - b|| = {:.3e}", (a.matrix() * &x - &b).norm());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("spectral example");
}
