//! Writes toy moment files and runs `identify` and `fit` through the command
//! line entry point in-process.

use std::path::PathBuf;

use identreg::io::{write_matrix, write_vector};
use identreg::{Error, Result};
use nalgebra::{DMatrix, DVector};

fn invoke(args: &[&str]) -> Result<String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("identreg").chain(args.iter().copied());
    let code = identreg::cli::run(argv, &|_| None, &mut out, &mut err);
    if code != identreg::cli::EXIT_OK {
        return Err(Error::Io(String::from_utf8_lossy(&err).into_owned()));
    }
    Ok(String::from_utf8_lossy(&out).into_owned())
}

pub fn run_example() -> Result<()> {
    let dir: PathBuf = std::env::temp_dir().join(format!("identreg-cli-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(e.to_string()))?;
    let rho = 0.98;
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 100.0]);
    let sigvec = DVector::from_vec(vec![1.0, rho, 0.0]);
    let sigma_path = dir.join("sigma.csv");
    let sigvec_path = dir.join("sigvec.csv");
    let file = |p: &PathBuf| std::fs::File::create(p).map_err(|e| Error::Io(e.to_string()));
    write_matrix(file(&sigma_path)?, &sigma)?;
    write_vector(file(&sigvec_path)?, &sigvec)?;
    let (s, v) = (
        sigma_path.to_str().unwrap_or_default(),
        sigvec_path.to_str().unwrap_or_default(),
    );

    print!(
        "{}",
        invoke(&["identify", "--sigma", s, "--sigvec", v, "--tau", "10", "--format", "csv"])?
    );
    print!(
        "{}",
        invoke(&["fit", "--sigma", s, "--sigvec", v, "--method", "pls", "--dof", "1", "--format", "csv"])?
    );
    std::fs::remove_dir_all(&dir).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("cli example");
}
