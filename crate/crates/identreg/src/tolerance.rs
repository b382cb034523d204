//! Numerical tolerances used by every decomposition and verdict.
//!
//! All values are relative and must lie strictly between 0 and 1. Defaults can
//! be overridden programmatically, through environment variables
//! (`IDENTREG_RANK_TOL`, `IDENTREG_CLUSTER_TOL`, ...) or through the command
//! line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerances for rank, clustering, validation and verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    /// Eigenvalues below `rank_tol * lambda_max` count as zero.
    pub rank_tol: f64,
    /// Consecutive sorted eigenvalues whose relative gap is below this value
    /// share one eigenspace.
    pub cluster_tol: f64,
    /// Allowed asymmetry `|A_ij - A_ji|` relative to `max |A_ij|`.
    pub sym_tol: f64,
    /// Allowed negative eigenvalue relative to `||A||_op`.
    pub psd_tol: f64,
    /// Allowed reconstruction error of an eigendecomposition relative to `||A||_op`.
    pub rec_tol: f64,
    /// Allowed deviation `||B^T B - I||_op` of an orthonormal basis.
    pub ortho_tol: f64,
    /// Krylov growth stops once the orthogonalized residual falls below
    /// `krylov_tol * ||A||_op`.
    pub krylov_tol: f64,
    /// Allowed relative residual `||A A^+ b - b|| / ||b||` for range membership.
    pub range_tol: f64,
    /// An eigenspace is relevant when `||U_i sigma|| > relevance_tol * ||sigma||`.
    pub relevance_tol: f64,
    /// Angle (radians) and relative gap below which two subspaces or two
    /// coefficient vectors are declared equal in verdicts.
    pub verdict_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            cluster_tol: 1e-8,
            sym_tol: 1e-10,
            psd_tol: 1e-10,
            rec_tol: 1e-10,
            ortho_tol: 1e-10,
            krylov_tol: 1e-10,
            range_tol: 1e-8,
            relevance_tol: 1e-8,
            verdict_tol: 1e-6,
        }
    }
}

/// Environment variable names paired with their setters.
const ENV_KEYS: [&str; 10] = [
    "IDENTREG_RANK_TOL",
    "IDENTREG_CLUSTER_TOL",
    "IDENTREG_SYM_TOL",
    "IDENTREG_PSD_TOL",
    "IDENTREG_REC_TOL",
    "IDENTREG_ORTHO_TOL",
    "IDENTREG_KRYLOV_TOL",
    "IDENTREG_RANGE_TOL",
    "IDENTREG_RELEVANCE_TOL",
    "IDENTREG_VERDICT_TOL",
];

impl ToleranceConfig {
    /// Checks that every tolerance lies in `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.named() {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::InvalidTolerance { name, value });
            }
        }
        Ok(())
    }

    /// Returns the tolerances with their field names.
    pub fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("rank_tol", self.rank_tol),
            ("cluster_tol", self.cluster_tol),
            ("sym_tol", self.sym_tol),
            ("psd_tol", self.psd_tol),
            ("rec_tol", self.rec_tol),
            ("ortho_tol", self.ortho_tol),
            ("krylov_tol", self.krylov_tol),
            ("range_tol", self.range_tol),
            ("relevance_tol", self.relevance_tol),
            ("verdict_tol", self.verdict_tol),
        ]
    }

    fn slot(&mut self, index: usize) -> &mut f64 {
        match index {
            0 => &mut self.rank_tol,
            1 => &mut self.cluster_tol,
            2 => &mut self.sym_tol,
            3 => &mut self.psd_tol,
            4 => &mut self.rec_tol,
            5 => &mut self.ortho_tol,
            6 => &mut self.krylov_tol,
            7 => &mut self.range_tol,
            8 => &mut self.relevance_tol,
            _ => &mut self.verdict_tol,
        }
    }

    /// Sets one tolerance by field name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let index = self
            .named()
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown tolerance '{name}'")))?;
        *self.slot(index) = value;
        self.validate()
    }

    /// Applies overrides from `IDENTREG_*_TOL` environment variables.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        self.apply_overrides(|key| std::env::var(key).ok())?;
        Ok(self)
    }

    /// Applies overrides looked up by environment-variable name.
    pub fn apply_overrides<F>(&mut self, lookup: F) -> Result<()>
    where
        F: Fn(&str) -> Option<String>,
    {
        for (i, key) in ENV_KEYS.iter().enumerate() {
            if let Some(raw) = lookup(key) {
                let value: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::ConfigInvalid(format!("{key}={raw} is not a number")))?;
                *self.slot(i) = value;
            }
        }
        self.validate()
    }
}
