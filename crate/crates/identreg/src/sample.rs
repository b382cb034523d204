//! Datasets, sample moments, complexity functionals and the Monte Carlo
//! frequency of the sample perturbation event.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::population::{perturbation_size, PopulationPair};
use crate::rng;
use crate::spectral::SymPsd;
use crate::tolerance::ToleranceConfig;

/// Observations `X` (rows) with responses `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    centered: bool,
}

impl Dataset {
    /// Raw dataset; sample moments center it.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || y.is_empty() {
            return Err(Error::EmptyData);
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "response length",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        Ok(Self { x, y, centered: false })
    }

    /// Dataset declared centered. Column means of `X` and the mean of `y`
    /// must vanish up to `tol.range_tol` times the largest absolute entry.
    pub fn precentered(x: DMatrix<f64>, y: DVector<f64>, tol: &ToleranceConfig) -> Result<Self> {
        let mut data = Self::new(x, y)?;
        let n = data.n() as f64;
        let scale = data.x.amax().max(data.y.amax()).max(f64::MIN_POSITIVE);
        let worst_x = data.x.row_sum().iter().map(|s| (s / n).abs()).fold(0.0, f64::max);
        let worst = worst_x.max((data.y.sum() / n).abs());
        if worst > tol.range_tol * scale {
            return Err(Error::ConfigInvalid(format!(
                "dataset declared centered but a mean is {worst:e}"
            )));
        }
        data.centered = true;
        Ok(data)
    }

    /// Copy with column means of `X` and the mean of `y` subtracted.
    pub fn centered(&self) -> Self {
        if self.centered {
            return self.clone();
        }
        let n = self.n() as f64;
        let means = self.x.row_sum() / n;
        let mut x = self.x.clone();
        for mut row in x.row_iter_mut() {
            row -= &means;
        }
        let y = self.y.add_scalar(-self.y.sum() / n);
        Self { x, y, centered: true }
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of features.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Design matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Responses.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Whether the dataset is centered.
    pub fn is_centered(&self) -> bool {
        self.centered
    }
}

/// Sample moments `Sigma^ = X^T X / n` and `sigma^ = X^T y / n` of the
/// centered dataset.
///
/// `sigma^` lies in the range of `Sigma^` exactly. Directions whose sample
/// variance falls below the rank cutoff are dropped from `sigma^`, so that
/// the vector lies in the numerical range used by every pseudo-inverse.
pub fn sample_moments(data: &Dataset, tol: &ToleranceConfig) -> Result<PopulationPair> {
    let data = data.centered();
    let n = data.n() as f64;
    let factor = data.x() / n.sqrt();
    let sigma_mat = SymPsd::from_factor(&factor, tol)?;
    let sigma_vec = sigma_mat.project_range(&(data.x().transpose() * data.y() / n));
    PopulationPair::new(sigma_mat, sigma_vec)
}

/// Plug-in complexity functionals of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// Observations.
    pub n: usize,
    /// Features.
    pub p: usize,
    /// Rank of the sample covariance.
    pub r_x: usize,
    /// Effective rank `tr(Sigma^) / ||Sigma^||`.
    pub rho_x: f64,
    /// Uniform effective rank plug-in `(max_i ||x_i||^q)^{2/q} / ||Sigma^||`.
    pub rho_xn_hat: f64,
    /// Moment order.
    pub q: f64,
    /// `sqrt(rho_x / n) + rho_xn_hat / n`.
    pub delta_n: f64,
    /// Response moment ratio `(mean |y|^q)^{1/q} / (mean y^2)^{1/2}`.
    pub l_y_hat: f64,
    /// Largest directional moment ratio over the sampled directions. The
    /// population quantity is a supremum over all directions, so this is a
    /// lower-bound estimate.
    pub l_x_hat: f64,
    /// Number of random directions used for `l_x_hat` (canonical directions
    /// are always included).
    pub n_directions: usize,
    /// Norm moment ratio `(mean ||x_i||^q)^{2/q} / mean ||x_i||^2`.
    pub l_norm_hat: f64,
    /// Response scale `(mean y^2)^{1/2}`.
    pub sigma_y_hat: f64,
    /// `max(1, l_y_hat l_x_hat sigma_y_hat ||Sigma^||^{1/2} / ||sigma^||)`;
    /// absent when `sigma^ = 0`.
    pub k_hat: Option<f64>,
    /// Seed of the random directions.
    pub seed: u64,
}

fn moment_ratio(values: impl Iterator<Item = f64> + Clone, q: f64) -> Option<f64> {
    let count = values.clone().count() as f64;
    let second = values.clone().map(|v| v * v).sum::<f64>() / count;
    if second <= 0.0 {
        return None;
    }
    let higher = values.map(|v| v.abs().powf(q)).sum::<f64>() / count;
    Some(higher.powf(1.0 / q) / second.sqrt())
}

/// Computes the plug-in complexity functionals of the centered dataset.
///
/// `l_x_hat` is maximized over the `p` canonical directions and
/// `n_directions` uniform random directions drawn from `seed`.
pub fn complexity_report(
    data: &Dataset,
    q: f64,
    n_directions: usize,
    seed: u64,
    tol: &ToleranceConfig,
) -> Result<ComplexityReport> {
    if !(q > 4.0) || !q.is_finite() {
        return Err(Error::BadMomentOrder { q });
    }
    let data = data.centered();
    let pair = sample_moments(&data, tol)?;
    let n = data.n();
    let p = data.p();
    let sigma = pair.sigma_mat();
    let op = sigma.op_norm();
    if op <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let rho_x = sigma.trace() / op;
    let sq_norms: Vec<f64> = data.x().row_iter().map(|r| r.norm_squared()).collect();
    let max_sq = sq_norms.iter().copied().fold(0.0, f64::max);
    let rho_xn_hat = max_sq / op;
    let delta_n = (rho_x / n as f64).sqrt() + rho_xn_hat / n as f64;
    let mean_sq = sq_norms.iter().sum::<f64>() / n as f64;
    let mean_q = sq_norms.iter().map(|s| s.powf(q / 2.0)).sum::<f64>() / n as f64;
    let l_norm_hat = mean_q.powf(2.0 / q) / mean_sq;

    let l_y_hat = moment_ratio(data.y().iter().copied(), q).unwrap_or(f64::NAN);
    let sigma_y_hat = (data.y().norm_squared() / n as f64).sqrt();

    let mut directions: Vec<DVector<f64>> = (0..p)
        .map(|j| {
            let mut e = DVector::zeros(p);
            e[j] = 1.0;
            e
        })
        .collect();
    let mut stream = rng::stream(seed, 0);
    directions.extend((0..n_directions).map(|_| rng::unit_vector(p, &mut stream)));
    let l_x_hat = directions
        .par_iter()
        .filter_map(|v| {
            let proj = data.x() * v;
            moment_ratio(proj.iter().copied(), q)
        })
        .reduce(|| 0.0, f64::max);

    let sigma_vec_norm = pair.sigma_vec().norm();
    let k_hat = if sigma_vec_norm > 0.0 && l_y_hat.is_finite() {
        Some((l_y_hat * l_x_hat * sigma_y_hat * op.sqrt() / sigma_vec_norm).max(1.0))
    } else {
        None
    };
    Ok(ComplexityReport {
        n,
        p,
        r_x: sigma.rank(),
        rho_x,
        rho_xn_hat,
        q,
        delta_n,
        l_y_hat,
        l_x_hat,
        n_directions,
        l_norm_hat,
        sigma_y_hat,
        k_hat,
        seed,
    })
}

/// Both sides of the heavy-tail rate inequality
/// `delta_n <= sqrt(rho_x / n) (1 + L sqrt(rho_x / n^{(q-4)/q}))`
/// evaluated with the plug-in norm moment ratio as `L`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeavyTailCheck {
    /// `delta_n` from the report.
    pub delta_n: f64,
    /// Right-hand side.
    pub rate_bound: f64,
    /// `delta_n <= rate_bound`.
    pub holds: bool,
}

/// Evaluates the heavy-tail rate inequality on a complexity report.
pub fn heavy_tail_check(report: &ComplexityReport) -> HeavyTailCheck {
    let n = report.n as f64;
    let rate_bound = (report.rho_x / n).sqrt()
        * (1.0 + report.l_norm_hat * (report.rho_x / n.powf((report.q - 4.0) / report.q)).sqrt());
    HeavyTailCheck {
        delta_n: report.delta_n,
        rate_bound,
        holds: report.delta_n <= rate_bound * (1.0 + 1e-12),
    }
}

/// Source of i.i.d. datasets with known population moments.
pub trait PairGenerator: Sync {
    /// Population pair `(Sigma, sigma)` of the generator.
    fn population(&self) -> &PopulationPair;

    /// Draws `n` i.i.d. observations.
    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset>;

    /// Population `(L_y, L_x, sigma_y)` at moment order `q`, when known in
    /// closed form.
    fn moment_constants(&self, _q: f64) -> Option<(f64, f64, f64)> {
        None
    }
}

/// `(E |Z|^q)^{1/q}` for a standard normal `Z`.
pub fn gaussian_moment_ratio(q: f64) -> f64 {
    let log_moment = 0.5 * q * 2f64.ln() + ln_gamma((q + 1.0) / 2.0) - 0.5 * std::f64::consts::PI.ln();
    (log_moment / q).exp()
}

/// Settings of [`perturbation_event_check`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EventCheckConfig {
    /// Observations per dataset.
    pub n: usize,
    /// Confidence parameter in `(0, 1/2)`.
    pub nu: f64,
    /// Constant `K`; `None` derives it from the generator or from plug-ins.
    pub k: Option<f64>,
    /// Independent datasets.
    pub n_trials: usize,
    /// Moment order entering the uniform effective rank and `K`.
    pub q: f64,
    /// Seed of the per-trial streams.
    pub seed: u64,
}

/// How the constant `K` of an event check was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSource {
    /// Supplied by the caller.
    Supplied,
    /// Closed-form population moments of the generator.
    Population,
    /// Average of per-trial plug-in values.
    PlugIn,
}

/// Frequency of the event `eps^ <= K delta_n / nu`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventReport {
    /// Observations per dataset.
    pub n: usize,
    /// Confidence parameter.
    pub nu: f64,
    /// Constant `K`.
    pub k: f64,
    /// Origin of `K`.
    pub k_source: KSource,
    /// Population effective rank.
    pub rho_x: f64,
    /// Monte Carlo estimate of the uniform effective rank.
    pub rho_xn: f64,
    /// `sqrt(rho_x / n) + rho_xn / n`.
    pub delta_n: f64,
    /// `K delta_n / nu`.
    pub threshold: f64,
    /// Datasets drawn.
    pub n_trials: usize,
    /// Datasets inside the event.
    pub hits: usize,
    /// `hits / n_trials`.
    pub frequency: f64,
    /// `1 - 2 nu`.
    pub target: f64,
    /// `frequency >= target`.
    pub meets_target: bool,
    /// Median of `eps^` over the trials.
    pub median_epsilon: f64,
    /// Seed.
    pub seed: u64,
}

struct Trial {
    epsilon: f64,
    max_norm_q: f64,
    k_plug_in: Option<f64>,
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    }
}

/// Monte Carlo frequency of `{eps^ <= K delta_n / nu}` over independent
/// datasets of size `n`, where `eps^` is the relative perturbation of the
/// sample moments against the population pair.
///
/// `rho_x` is computed from the population matrix. `rho_{x,n}` is estimated as
/// `(mean over trials of max_i ||x_i||^q)^{2/q} / ||Sigma||`.
pub fn perturbation_event_check(
    generator: &dyn PairGenerator,
    cfg: &EventCheckConfig,
    tol: &ToleranceConfig,
) -> Result<EventReport> {
    if !(cfg.nu > 0.0 && cfg.nu < 0.5) {
        return Err(Error::OutOfRange {
            what: "nu",
            value: cfg.nu,
            allowed: "0 < nu < 1/2",
        });
    }
    if cfg.n == 0 || cfg.n_trials == 0 {
        return Err(Error::EmptyData);
    }
    if !(cfg.q > 4.0) {
        return Err(Error::BadMomentOrder { q: cfg.q });
    }
    if let Some(k) = cfg.k {
        if !(k >= 1.0) || !k.is_finite() {
            return Err(Error::OutOfRange {
                what: "K",
                value: k,
                allowed: "K >= 1",
            });
        }
    }
    let population = generator.population();
    let trials: Vec<Result<Trial>> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng::stream(cfg.seed, i as u64);
            let data = generator.draw(cfg.n, &mut stream)?;
            let pair = sample_moments(&data, tol)?;
            let epsilon = perturbation_size(
                pair.sigma_mat(),
                pair.sigma_vec(),
                population.sigma_mat(),
                population.sigma_vec(),
            )?;
            let max_norm_q = data
                .x()
                .row_iter()
                .map(|r| r.norm_squared().powf(cfg.q / 2.0))
                .fold(0.0, f64::max);
            let k_plug_in = if cfg.k.is_none() && generator.moment_constants(cfg.q).is_none() {
                complexity_report(&data, cfg.q, 64, cfg.seed ^ (i as u64), tol)?.k_hat
            } else {
                None
            };
            Ok(Trial {
                epsilon,
                max_norm_q,
                k_plug_in,
            })
        })
        .collect();
    let trials: Vec<Trial> = trials.into_iter().collect::<Result<_>>()?;
    let op = population.sigma_mat().op_norm();
    let rho_x = population.sigma_mat().trace() / op;
    let mean_max = trials.iter().map(|t| t.max_norm_q).sum::<f64>() / trials.len() as f64;
    let rho_xn = mean_max.powf(2.0 / cfg.q) / op;
    let n = cfg.n as f64;
    let delta_n = (rho_x / n).sqrt() + rho_xn / n;
    let (k, k_source) = match (cfg.k, generator.moment_constants(cfg.q)) {
        (Some(k), _) => (k, KSource::Supplied),
        (None, Some((l_y, l_x, sigma_y))) => {
            let ratio = l_y * l_x * sigma_y * op.sqrt() / population.sigma_vec().norm();
            (ratio.max(1.0), KSource::Population)
        }
        (None, None) => {
            let values: Vec<f64> = trials.iter().filter_map(|t| t.k_plug_in).collect();
            if values.is_empty() {
                return Err(Error::ZeroReference);
            }
            (values.iter().sum::<f64>() / values.len() as f64, KSource::PlugIn)
        }
    };
    let threshold = k * delta_n / cfg.nu;
    let epsilons: Vec<f64> = trials.iter().map(|t| t.epsilon).collect();
    let hits = epsilons.iter().filter(|&&e| e <= threshold).count();
    let frequency = hits as f64 / cfg.n_trials as f64;
    let target = 1.0 - 2.0 * cfg.nu;
    Ok(EventReport {
        n: cfg.n,
        nu: cfg.nu,
        k,
        k_source,
        rho_x,
        rho_xn,
        delta_n,
        threshold,
        n_trials: cfg.n_trials,
        hits,
        frequency,
        target,
        meets_target: frequency >= target,
        median_epsilon: median(&epsilons),
        seed: cfg.seed,
    })
}

/// Draws `n` rows of `N(0, Sigma)` as `Z Sigma^{1/2}`.
pub fn gaussian_rows(sqrt_sigma: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    rng::normal_matrix(n, sqrt_sigma.nrows(), rng) * sqrt_sigma
}
