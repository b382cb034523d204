//! Closed-form toy model and the latent-factor simulation study.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::relative_prediction_risk;
use crate::error::{Error, Result};
use crate::population::{identifiable_parameter, relevant_subspace, truncation_ladder, PopulationPair};
use crate::reduction::{run, run_to, AlgorithmKind, SolutionForm};
use crate::rng;
use crate::sample::{gaussian_moment_ratio, gaussian_rows, median, sample_moments, Dataset, PairGenerator};
use crate::spectral::SymPsd;
use crate::tolerance::ToleranceConfig;

/// Parameters of the three-feature toy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// First coefficient.
    pub beta1: f64,
    /// Second coefficient.
    pub beta2: f64,
    /// Correlation between the first two features, in `[0, 1]`.
    pub rho: f64,
    /// Variance of the additive response noise.
    pub noise_var: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 0.0,
            rho: 0.98,
            noise_var: 1.0,
        }
    }
}

impl ToyConfig {
    /// Checks `rho` in `[0, 1]`, a positive noise variance and finite coefficients.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::OutOfRange {
                what: "rho",
                value: self.rho,
                allowed: "0 <= rho <= 1",
            });
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::OutOfRange {
                what: "noise_var",
                value: self.noise_var,
                allowed: "noise_var > 0",
            });
        }
        if !self.beta1.is_finite() || !self.beta2.is_finite() {
            return Err(Error::NonFinite("toy coefficients"));
        }
        Ok(())
    }

    /// Coefficient vector `(beta1, beta2, 0)`.
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.beta1, self.beta2, 0.0])
    }

    /// Feature covariance `[[1, rho, 0], [rho, 1, 0], [0, 0, 2]]`.
    pub fn sigma_mat(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, self.rho, 0.0, self.rho, 1.0, 0.0, 0.0, 0.0, 2.0])
    }
}

/// Population pair of the toy model.
pub fn toy_population(cfg: &ToyConfig, tol: &ToleranceConfig) -> Result<PopulationPair> {
    cfg.validate()?;
    let sigma = DVector::from_vec(vec![
        cfg.beta1 + cfg.rho * cfg.beta2,
        cfg.rho * cfg.beta1 + cfg.beta2,
        0.0,
    ]);
    PopulationPair::from_parts(cfg.sigma_mat(), sigma, tol)
}

/// Closed-form conditioning and first-level risk of the toy model, valid for
/// every `beta2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ToyLadder {
    /// Square-root condition number of the first level, `1`.
    pub kappa_1: f64,
    /// Square-root condition number of the second level, `sqrt((1 + rho) / (1 - rho))`.
    pub kappa_2: f64,
    /// Exact first-level risk `(1 - rho) (beta1 - beta2)^2 / (4 (beta1^2 + beta2^2))`.
    pub eps_1: f64,
    /// Upper bound `(1 - rho) / (1 + rho) (beta1 - beta2)^2 / (2 (beta1^2 + beta2^2))`.
    pub eps_1_bound: f64,
}

/// Conditioning and first-level risk in closed form.
pub fn toy_ladder(cfg: &ToyConfig) -> Result<ToyLadder> {
    cfg.validate()?;
    let norm_sq = cfg.beta1 * cfg.beta1 + cfg.beta2 * cfg.beta2;
    if norm_sq == 0.0 {
        return Err(Error::ZeroVector);
    }
    let rho = cfg.rho;
    let diff_sq = (cfg.beta1 - cfg.beta2).powi(2);
    Ok(ToyLadder {
        kappa_1: 1.0,
        kappa_2: ((1.0 + rho) / (1.0 - rho)).sqrt(),
        eps_1: (1.0 - rho) * diff_sq / (4.0 * norm_sq),
        eps_1_bound: (1.0 - rho) / (1.0 + rho) * diff_sq / (2.0 * norm_sq),
    })
}

/// Closed-form one-dimensional estimates of the toy model with `beta2 = 0`.
///
/// Errors are relative to the identifiable parameter `(beta1/2, beta1/2, 0)`,
/// risks are relative prediction risks against the least-squares solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyOracle {
    /// Model parameters.
    pub config: ToyConfig,
    /// Identifiable parameter at the first level.
    pub beta_identifiable: Vec<f64>,
    /// Unsupervised estimate, the projection on the top eigenvector.
    pub beta_pcr: Vec<f64>,
    /// Sparse estimate, the projection on the first coordinate.
    pub beta_spr: Vec<f64>,
    /// Supervised estimate, the projection on the covariance direction.
    pub beta_pls: Vec<f64>,
    /// Relative error of the unsupervised estimate.
    pub delta_pcr: f64,
    /// Relative error of the sparse estimate.
    pub delta_spr: f64,
    /// Relative error of the supervised estimate.
    pub delta_pls: f64,
    /// Relative risk of the unsupervised estimate.
    pub eps_pcr: f64,
    /// Relative risk of the sparse estimate.
    pub eps_spr: f64,
    /// Relative risk of the supervised estimate.
    pub eps_pls: f64,
    /// Conditioning ladder and first-level risk.
    pub ladder: ToyLadder,
}

/// Closed-form record of the toy model. Requires `beta2 = 0` and `beta1 != 0`.
pub fn toy_oracle(cfg: &ToyConfig) -> Result<ToyOracle> {
    cfg.validate()?;
    if cfg.beta2 != 0.0 {
        return Err(Error::UnsupportedBranch(format!(
            "closed-form estimates need beta2 = 0, got {}",
            cfg.beta2
        )));
    }
    if cfg.beta1 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let rho = cfg.rho;
    let b = cfg.beta1;
    let r2 = 1.0 + rho * rho;
    Ok(ToyOracle {
        config: *cfg,
        beta_identifiable: vec![b / 2.0, b / 2.0, 0.0],
        beta_pcr: vec![0.0, 0.0, 0.0],
        beta_spr: vec![b, 0.0, 0.0],
        beta_pls: vec![b / r2, rho * b / r2, 0.0],
        delta_pcr: 1.0,
        delta_spr: 1.0,
        delta_pls: (1.0 - rho) * ((1.0 + rho).powi(2) + (1.0 - rho).powi(2)).sqrt() / (2f64.sqrt() * r2),
        eps_pcr: 0.5,
        eps_spr: 0.0,
        eps_pls: rho * rho * (1.0 - rho * rho) / (2.0 * r2 * r2),
        ladder: toy_ladder(cfg)?,
    })
}

/// One policy evaluated on the toy model at one degree of freedom.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyEstimate {
    /// Policy.
    pub kind: AlgorithmKind,
    /// Projected solution `W W^T beta_LS`.
    pub projected: Vec<f64>,
    /// Reduced solution `W (W^T Sigma W)^+ W^T sigma`.
    pub reduced: Vec<f64>,
    /// Relative error of the projected solution against the identifiable parameter.
    pub delta_projected: f64,
    /// Relative error of the reduced solution against the identifiable parameter.
    pub delta_reduced: f64,
    /// Relative risk of the projected solution.
    pub eps_projected: f64,
    /// Relative risk of the reduced solution.
    pub eps_reduced: f64,
}

/// Runs every policy on the toy model and evaluates errors and risks at
/// dof 1 against the identifiable parameter selected with threshold `tau`.
pub fn toy_framework(cfg: &ToyConfig, tau: f64, tol: &ToleranceConfig) -> Result<Vec<ToyEstimate>> {
    let pair = toy_population(cfg, tol)?;
    let rel = relevant_subspace(&pair, tol)?;
    let ladder = truncation_ladder(&rel)?;
    let target = DVector::from_vec(identifiable_parameter(&ladder, tau)?.beta);
    AlgorithmKind::ALL
        .iter()
        .map(|&kind| {
            let path = run(kind, pair.sigma_mat(), pair.sigma_vec(), tol)?;
            let projected = path.coefficients_at_dof(1, SolutionForm::Projected)?;
            let reduced = path.coefficients_at_dof(1, SolutionForm::Reduced)?;
            Ok(ToyEstimate {
                kind,
                delta_projected: (&projected - &target).norm() / target.norm(),
                delta_reduced: (&reduced - &target).norm() / target.norm(),
                eps_projected: relative_prediction_risk(&pair, &projected)?,
                eps_reduced: relative_prediction_risk(&pair, &reduced)?,
                projected: projected.iter().copied().collect(),
                reduced: reduced.iter().copied().collect(),
            })
        })
        .collect()
}

/// Gaussian sampler of the toy model: `x ~ N(0, Sigma)`, `y = x^T beta + e`
/// with `e ~ N(0, noise_var)`.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    config: ToyConfig,
    pair: PopulationPair,
    sqrt_sigma: DMatrix<f64>,
}

impl ToyGenerator {
    /// Builds the sampler.
    pub fn new(config: ToyConfig, tol: &ToleranceConfig) -> Result<Self> {
        let pair = toy_population(&config, tol)?;
        let sqrt_sigma = pair.sigma_mat().sqrt_matrix();
        Ok(Self {
            config,
            pair,
            sqrt_sigma,
        })
    }
}

impl PairGenerator for ToyGenerator {
    fn population(&self) -> &PopulationPair {
        &self.pair
    }

    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let x = gaussian_rows(&self.sqrt_sigma, n, rng);
        let noise = rng::normal_vector(n, rng) * self.config.noise_var.sqrt();
        let y = &x * self.config.beta() + noise;
        Dataset::new(x, y)
    }

    fn moment_constants(&self, q: f64) -> Option<(f64, f64, f64)> {
        let l = gaussian_moment_ratio(q);
        let beta = self.config.beta();
        let sigma_y = (self.pair.sigma_mat().quadratic_form(&beta) + self.config.noise_var).sqrt();
        Some((l, l, sigma_y))
    }
}

/// Settings of the latent-factor simulation.
///
/// Latent standard deviations are linear between their endpoints, the
/// relevant noise and irrelevant ladders are log-linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Observations per dataset.
    pub n: usize,
    /// Features.
    pub p: usize,
    /// Relevant latent dimension.
    pub r_y: usize,
    /// True degrees of freedom.
    pub r: usize,
    /// Repetitions.
    pub reps: usize,
    /// First and last latent standard deviation.
    pub sigma_q: (f64, f64),
    /// First and last relevant noise standard deviation.
    pub sigma_0: (f64, f64),
    /// First and last irrelevant standard deviation.
    pub sigma_perp: (f64, f64),
    /// Standard deviation of the response noise.
    pub response_sd: f64,
    /// Seed of the orthonormal rotation.
    pub rotation_seed: u64,
    /// Seed of the per-repetition data streams.
    pub data_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            p: 1000,
            r_y: 100,
            r: 5,
            reps: 50,
            sigma_q: (5.0, 1.0),
            sigma_0: (1e-1, 1e-6),
            sigma_perp: (10.0, 1e-6),
            response_sd: 1.0,
            rotation_seed: 0,
            data_seed: 0,
        }
    }
}

fn linear_ladder(len: usize, (first, last): (f64, f64)) -> Vec<f64> {
    if len == 1 {
        return vec![first];
    }
    (0..len)
        .map(|i| first + (last - first) * i as f64 / (len - 1) as f64)
        .collect()
}

fn log_ladder(len: usize, (first, last): (f64, f64)) -> Vec<f64> {
    if len == 1 {
        return vec![first];
    }
    let (a, b) = (first.ln(), last.ln());
    (0..len)
        .map(|i| (a + (b - a) * i as f64 / (len - 1) as f64).exp())
        .collect()
}

impl SimConfig {
    /// Checks dimensions, positivity and strictly decreasing ladders.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.r == 0 || self.r > self.r_y || self.r_y > self.p {
            return invalid(format!(
                "need 1 <= r <= r_y <= p, got r={}, r_y={}, p={}",
                self.r, self.r_y, self.p
            ));
        }
        if self.n < 2 {
            return invalid(format!("need n >= 2, got {}", self.n));
        }
        if self.reps == 0 {
            return invalid("need at least one repetition".into());
        }
        for (name, (first, last), len) in [
            ("sigma_q", self.sigma_q, self.r),
            ("sigma_0", self.sigma_0, self.r_y),
            ("sigma_perp", self.sigma_perp, self.p - self.r_y),
        ] {
            if !(first.is_finite() && last.is_finite() && last > 0.0) {
                return invalid(format!("{name} endpoints must be positive and finite"));
            }
            if len > 1 && first <= last {
                return invalid(format!(
                    "{name} ladder must be strictly decreasing, got {first} -> {last}"
                ));
            }
        }
        if !(self.response_sd > 0.0) || !self.response_sd.is_finite() {
            return invalid("response_sd must be positive".into());
        }
        Ok(())
    }

    /// Latent standard deviations.
    pub fn sigma_q_ladder(&self) -> Vec<f64> {
        linear_ladder(self.r, self.sigma_q)
    }

    /// Relevant noise standard deviations.
    pub fn sigma_0_ladder(&self) -> Vec<f64> {
        log_ladder(self.r_y, self.sigma_0)
    }

    /// Irrelevant standard deviations.
    pub fn sigma_perp_ladder(&self) -> Vec<f64> {
        log_ladder(self.p - self.r_y, self.sigma_perp)
    }

    /// Latent coefficients `(1, 2, ..., r)`.
    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_iterator(self.r, (1..=self.r).map(|i| i as f64))
    }

    /// Feature variances in rotated coordinates.
    pub fn latent_variances(&self) -> DVector<f64> {
        let q = self.sigma_q_ladder();
        let s0 = self.sigma_0_ladder();
        let perp = self.sigma_perp_ladder();
        let mut d = DVector::zeros(self.p);
        for i in 0..self.r_y {
            d[i] = s0[i] * s0[i] + if i < self.r { q[i] * q[i] } else { 0.0 };
        }
        for (j, s) in perp.iter().enumerate() {
            d[self.r_y + j] = s * s;
        }
        d
    }

    /// Feature-response covariance in rotated coordinates.
    pub fn latent_covariance(&self) -> DVector<f64> {
        let q = self.sigma_q_ladder();
        let alpha = self.alpha();
        let mut v = DVector::zeros(self.p);
        for i in 0..self.r {
            v[i] = q[i] * q[i] * alpha[i];
        }
        v
    }

    /// Population pair in rotated coordinates. Every rotation-invariant
    /// quantity of the study can be read from it.
    pub fn latent_population(&self, tol: &ToleranceConfig) -> Result<PopulationPair> {
        self.validate()?;
        let sigma = SymPsd::from_eigen(DMatrix::identity(self.p, self.p), self.latent_variances(), tol)?;
        PopulationPair::new(sigma, self.latent_covariance())
    }
}

/// Simulation design: configuration and its fixed orthonormal rotation.
#[derive(Debug, Clone)]
pub struct SimulationDesign {
    config: SimConfig,
    rotation: DMatrix<f64>,
}

/// One simulated dataset with its oracle coefficients.
#[derive(Debug, Clone)]
pub struct SimulationDraw {
    /// Observations.
    pub data: Dataset,
    /// Oracle coefficients `P alpha`.
    pub beta: DVector<f64>,
}

/// Population quantities of a simulation design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSummary {
    /// `sigma_q[0] / sigma_q[r-1]`.
    pub latent_sqrt_condition: f64,
    /// Population effective rank `tr(Sigma) / ||Sigma||`.
    pub effective_rank: f64,
    /// `||beta||`.
    pub beta_norm: f64,
    /// Identifiable level at threshold `tau`.
    pub identifiable_level: usize,
    /// Threshold used.
    pub tau: f64,
    /// Square-root condition number at the identifiable level.
    pub identifiable_sqrt_condition: f64,
    /// `||beta_s - beta|| / ||beta||` for the identifiable parameter `beta_s`.
    pub identifiable_gap: f64,
    /// `5 sigma_0[0]^2`.
    pub gap_bound: f64,
}

impl SimulationDesign {
    /// Validates the configuration and draws the rotation.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let rotation = rng::haar_orthogonal(config.p, &mut rng::stream(config.rotation_seed, 0));
        Ok(Self { config, rotation })
    }

    /// Configuration.
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Orthonormal rotation `U`.
    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Oracle coefficients `beta = U[:, :r] alpha`.
    pub fn beta(&self) -> DVector<f64> {
        self.rotation.columns(0, self.config.r) * self.config.alpha()
    }

    /// Population pair in feature coordinates.
    pub fn population(&self, tol: &ToleranceConfig) -> Result<PopulationPair> {
        let d = self.config.latent_variances();
        let sigma = SymPsd::from_eigen(self.rotation.clone(), d, tol)?;
        PopulationPair::new(sigma, &self.rotation * self.config.latent_covariance())
    }

    /// Draws repetition `rep` from its own stream under `data_seed`.
    pub fn draw(&self, rep: usize) -> Result<SimulationDraw> {
        let cfg = &self.config;
        let mut stream = rng::stream(cfg.data_seed, rep as u64);
        let sq = cfg.sigma_q_ladder();
        let s0 = cfg.sigma_0_ladder();
        let perp = cfg.sigma_perp_ladder();
        let alpha = cfg.alpha();
        let mut latent = rng::normal_matrix(cfg.n, cfg.r, &mut stream);
        for (j, s) in sq.iter().enumerate() {
            latent.column_mut(j).scale_mut(*s);
        }
        let mut z = rng::normal_matrix(cfg.n, cfg.p, &mut stream);
        for j in 0..cfg.p {
            let scale = if j < cfg.r_y { s0[j] } else { perp[j - cfg.r_y] };
            z.column_mut(j).scale_mut(scale);
        }
        for j in 0..cfg.r {
            let col = latent.column(j).into_owned();
            let mut target = z.column_mut(j);
            target += &col;
        }
        let x = z * self.rotation.transpose();
        let noise = rng::normal_vector(cfg.n, &mut stream) * cfg.response_sd;
        let y = &latent * &alpha + noise;
        Ok(SimulationDraw {
            data: Dataset::new(x, y)?,
            beta: self.beta(),
        })
    }

    /// Population summary with the identifiable parameter at threshold `tau`.
    pub fn population_summary(&self, tau: f64, tol: &ToleranceConfig) -> Result<PopulationSummary> {
        let cfg = &self.config;
        let pair = cfg.latent_population(tol)?;
        let rel = relevant_subspace(&pair, tol)?;
        let ladder = truncation_ladder(&rel)?;
        let id = identifiable_parameter(&ladder, tau)?;
        let mut oracle = DVector::zeros(cfg.p);
        oracle.rows_mut(0, cfg.r).copy_from(&cfg.alpha());
        let beta_s = DVector::from_vec(id.beta);
        let sq = cfg.sigma_q_ladder();
        let s0 = cfg.sigma_0_ladder();
        Ok(PopulationSummary {
            latent_sqrt_condition: sq[0] / sq[cfg.r - 1],
            effective_rank: pair.sigma_mat().trace() / pair.sigma_mat().op_norm(),
            beta_norm: oracle.norm(),
            identifiable_level: id.level,
            tau,
            identifiable_sqrt_condition: id.sqrt_condition_number,
            identifiable_gap: (&beta_s - &oracle).norm() / oracle.norm(),
            gap_bound: 5.0 * s0[0] * s0[0],
        })
    }
}

/// Draws one dataset of the simulation.
pub fn generate_simulation(design: &SimulationDesign, rep: usize) -> Result<SimulationDraw> {
    design.draw(rep)
}

/// Error metrics of one policy on one repetition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRecord {
    /// Policy.
    pub method: AlgorithmKind,
    /// Repetition index.
    pub rep: usize,
    /// Degrees of freedom actually used.
    pub dof: usize,
    /// `||beta^ - beta|| / ||beta||`.
    pub estimation_error: f64,
    /// `||X beta^ - X beta|| / ||X beta||`.
    pub approximation_error: f64,
}

/// Distribution summary of one metric for one policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Policy.
    pub method: AlgorithmKind,
    /// Metric name.
    pub metric: String,
    /// 10% quantile.
    pub q10: f64,
    /// 25% quantile.
    pub q25: f64,
    /// Median.
    pub median: f64,
    /// 75% quantile.
    pub q75: f64,
    /// 90% quantile.
    pub q90: f64,
    /// Mean.
    pub mean: f64,
}

/// Results of a simulation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    /// Configuration.
    pub config: SimConfig,
    /// Degrees of freedom requested.
    pub s_star: usize,
    /// Policies run.
    pub methods: Vec<AlgorithmKind>,
    /// Method substitutions relative to the reference study design.
    pub substitutions: Vec<String>,
    /// Per-repetition records, ordered by repetition then method.
    pub records: Vec<StudyRecord>,
    /// Sample effective rank `tr(Sigma^) / ||Sigma^||` per repetition.
    pub effective_ranks: Vec<f64>,
    /// Quantile summaries per method and metric.
    pub summaries: Vec<MetricSummary>,
}

impl StudyResult {
    /// Median of a metric for one method.
    pub fn median(&self, method: AlgorithmKind, metric: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.metric == metric)
            .map(|s| s.median)
    }

    /// Tidy rows `(method, rep, metric, value)`.
    pub fn tidy_rows(&self) -> Vec<(String, usize, String, f64)> {
        let mut rows = Vec::with_capacity(self.records.len() * 2 + self.effective_ranks.len());
        for r in &self.records {
            rows.push((
                r.method.name().to_string(),
                r.rep,
                "estimation_error".to_string(),
                r.estimation_error,
            ));
            rows.push((
                r.method.name().to_string(),
                r.rep,
                "approximation_error".to_string(),
                r.approximation_error,
            ));
        }
        for (rep, value) in self.effective_ranks.iter().enumerate() {
            rows.push(("dataset".to_string(), rep, "effective_rank".to_string(), *value));
        }
        rows
    }
}

fn quantile(sorted: &[f64], prob: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(method: AlgorithmKind, metric: &str, values: &[f64]) -> MetricSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    MetricSummary {
        method,
        metric: metric.to_string(),
        q10: quantile(&sorted, 0.1),
        q25: quantile(&sorted, 0.25),
        median: median(values),
        q75: quantile(&sorted, 0.75),
        q90: quantile(&sorted, 0.9),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    }
}

/// Runs every method on `reps` simulated datasets at `s_star` degrees of
/// freedom, using the reduced solution on the sample moments.
pub fn run_study(
    design: &SimulationDesign,
    methods: &[AlgorithmKind],
    s_star: usize,
    tol: &ToleranceConfig,
) -> Result<StudyResult> {
    if s_star == 0 {
        return Err(Error::OutOfRange {
            what: "s_star",
            value: 0.0,
            allowed: "s_star >= 1",
        });
    }
    if methods.is_empty() {
        return Err(Error::ConfigInvalid("no methods selected".into()));
    }
    let cfg = design.config();
    let per_rep: Vec<Result<(Vec<StudyRecord>, f64)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let draw = design.draw(rep)?;
            let pair = sample_moments(&draw.data, tol)?;
            let rank = pair.sigma_mat().trace() / pair.sigma_mat().op_norm();
            let x_beta = draw.data.x() * &draw.beta;
            let mut records = Vec::with_capacity(methods.len());
            for &method in methods {
                let path = run_to(method, pair.sigma_mat(), pair.sigma_vec(), s_star, tol)?;
                let selection = path.select_dof(s_star);
                let coef = &path.steps[selection.step].solution;
                let approx = (draw.data.x() * coef - &x_beta).norm() / x_beta.norm();
                records.push(StudyRecord {
                    method,
                    rep,
                    dof: selection.dof,
                    estimation_error: (coef - &draw.beta).norm() / draw.beta.norm(),
                    approximation_error: approx,
                });
            }
            Ok((records, rank))
        })
        .collect();
    let mut records = Vec::new();
    let mut effective_ranks = Vec::new();
    for item in per_rep {
        let (recs, rank) = item?;
        records.extend(recs);
        effective_ranks.push(rank);
    }
    let mut summaries = Vec::new();
    for &method in methods {
        for metric in ["estimation_error", "approximation_error"] {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method)
                .map(|r| {
                    if metric == "estimation_error" {
                        r.estimation_error
                    } else {
                        r.approximation_error
                    }
                })
                .collect();
            summaries.push(summarize(method, metric, &values));
        }
    }
    let substitutions = if methods.contains(&AlgorithmKind::Fss) {
        vec![
            "sparse regression uses forward stepwise selection at matched dof in place of a tuned elastic net"
                .to_string(),
        ]
    } else {
        Vec::new()
    };
    Ok(StudyResult {
        config: cfg.clone(),
        s_star,
        methods: methods.to_vec(),
        substitutions,
        records,
        effective_ranks,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn toy_population_examples() {
        let cfg = ToyConfig {
            beta1: 0.3,
            beta2: -1.2,
            rho: 0.0,
            noise_var: 1.0,
        };
        let pair = toy_population(&cfg, &tol()).unwrap();
        assert_eq!(
            pair.sigma_mat().matrix(),
            &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0]))
        );
        assert_eq!(pair.sigma_vec(), &DVector::from_vec(vec![0.3, -1.2, 0.0]));
        let cfg = ToyConfig {
            beta1: 1.0,
            beta2: 1.0,
            rho: 1.0,
            noise_var: 1.0,
        };
        let pair = toy_population(&cfg, &tol()).unwrap();
        assert_eq!(pair.sigma_vec(), &DVector::from_vec(vec![2.0, 2.0, 0.0]));
        assert!(pair.sigma_mat().range_residual(pair.sigma_vec()).unwrap() < 1e-12);
        assert!(toy_population(&ToyConfig { rho: 1.5, ..cfg }, &tol()).is_err());
    }

    #[test]
    fn oracle_values() {
        let oracle = toy_oracle(&ToyConfig::default()).unwrap();
        assert!((oracle.delta_pls - 0.014).abs() < 5e-4);
        assert!((oracle.eps_pls - 0.005).abs() < 5e-4);
        let zero = toy_oracle(&ToyConfig {
            rho: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_relative_eq!(zero.delta_pls, 1.0, max_relative = 1e-15);
        let mut previous = f64::INFINITY;
        for rho in [0.9, 0.99, 0.999] {
            let value = toy_oracle(&ToyConfig {
                rho,
                ..Default::default()
            })
            .unwrap()
            .delta_pls;
            assert!(value < previous);
            previous = value;
        }
        assert!(matches!(
            toy_oracle(&ToyConfig {
                beta2: 0.5,
                ..Default::default()
            }),
            Err(Error::UnsupportedBranch(_))
        ));
    }

    #[test]
    fn framework_matches_oracle() {
        for rho in [0.5, 0.9, 0.98] {
            let cfg = ToyConfig {
                rho,
                ..Default::default()
            };
            let oracle = toy_oracle(&cfg).unwrap();
            let estimates = toy_framework(&cfg, 1.5, &tol()).unwrap();
            let by_kind = |k| estimates.iter().find(|e| e.kind == k).unwrap();
            let pcr = by_kind(AlgorithmKind::Pcr);
            let pls = by_kind(AlgorithmKind::Pls);
            let fss = by_kind(AlgorithmKind::Fss);
            assert_relative_eq!(pcr.delta_projected, oracle.delta_pcr, epsilon = 1e-10);
            assert_relative_eq!(fss.delta_projected, oracle.delta_spr, epsilon = 1e-10);
            assert_relative_eq!(pls.delta_projected, oracle.delta_pls, epsilon = 1e-10);
            assert_relative_eq!(pcr.eps_projected, oracle.eps_pcr, epsilon = 1e-10);
            assert_relative_eq!(fss.eps_projected, oracle.eps_spr, epsilon = 1e-10);
            assert_relative_eq!(pls.eps_projected, oracle.eps_pls, epsilon = 1e-10);
            for (est, closed) in [
                (pcr, &oracle.beta_pcr),
                (pls, &oracle.beta_pls),
                (fss, &oracle.beta_spr),
            ] {
                for (a, b) in est.projected.iter().zip(closed) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn ladder_bound_dominates_exact_risk() {
        for (b1, b2) in [(1.0, 0.0), (1.0, -1.0), (0.2, 3.0)] {
            let ladder = toy_ladder(&ToyConfig {
                beta1: b1,
                beta2: b2,
                rho: 0.98,
                noise_var: 1.0,
            })
            .unwrap();
            assert_relative_eq!(ladder.kappa_2, 99f64.sqrt(), max_relative = 1e-12);
            assert!(ladder.eps_1 <= ladder.eps_1_bound);
        }
    }

    #[test]
    fn ladders_have_requested_endpoints() {
        let cfg = SimConfig::default();
        let q = cfg.sigma_q_ladder();
        assert_eq!(q, vec![5.0, 4.0, 3.0, 2.0, 1.0]);
        let s0 = cfg.sigma_0_ladder();
        assert_relative_eq!(s0[0], 0.1, max_relative = 1e-14);
        assert_relative_eq!(s0[99], 1e-6, max_relative = 1e-12);
        assert!(s0.windows(2).all(|w| w[0] > w[1]));
        let perp = cfg.sigma_perp_ladder();
        assert_eq!(perp.len(), 900);
        assert!(SimConfig { r: 0, ..cfg.clone() }.validate().is_err());
        assert!(SimConfig {
            sigma_0: (1e-6, 1e-1),
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(SimConfig { r_y: 1001, ..cfg }.validate().is_err());
    }

    fn tiny() -> SimConfig {
        SimConfig {
            n: 50,
            p: 40,
            r_y: 10,
            r: 3,
            reps: 2,
            sigma_q: (5.0, 1.0),
            rotation_seed: 3,
            data_seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn oracle_coefficients_have_alpha_norm() {
        let design = SimulationDesign::new(SimConfig {
            p: 200,
            r_y: 20,
            reps: 1,
            ..Default::default()
        })
        .unwrap();
        assert_relative_eq!(design.beta().norm(), 55f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn tiny_study_is_reproducible() {
        let design = SimulationDesign::new(tiny()).unwrap();
        let a = run_study(&design, &[AlgorithmKind::Pls], 3, &tol()).unwrap();
        let b = run_study(
            &SimulationDesign::new(tiny()).unwrap(),
            &[AlgorithmKind::Pls],
            3,
            &tol(),
        )
        .unwrap();
        assert_eq!(a.records.len(), 2);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!(x.estimation_error.is_finite());
            assert_eq!(x.estimation_error.to_bits(), y.estimation_error.to_bits());
            assert_eq!(x.approximation_error.to_bits(), y.approximation_error.to_bits());
        }
        assert!(a.substitutions.is_empty());
        let all = run_study(&design, &AlgorithmKind::ALL, 3, &tol()).unwrap();
        assert_eq!(all.substitutions.len(), 1);
        assert_eq!(all.tidy_rows().len(), 2 * 3 * 2 + 2);
    }

    #[test]
    fn sample_covariance_matches_population_in_large_samples() {
        let cfg = SimConfig {
            n: 20_000,
            reps: 1,
            ..tiny()
        };
        let design = SimulationDesign::new(cfg).unwrap();
        let draw = design.draw(0).unwrap();
        let sample = sample_moments(&draw.data, &tol()).unwrap();
        let population = design.population(&tol()).unwrap();
        let gap =
            (sample.sigma_mat().matrix() - population.sigma_mat().matrix()).norm() / population.sigma_mat().op_norm();
        assert!(gap < 0.05, "{gap}");
        let vec_gap = (sample.sigma_vec() - population.sigma_vec()).norm() / population.sigma_vec().norm();
        assert!(vec_gap < 0.05, "{vec_gap}");
    }

    #[test]
    fn population_summary_of_default_design() {
        let cfg = SimConfig {
            p: 300,
            ..Default::default()
        };
        let design = SimulationDesign::new(cfg).unwrap();
        let summary = design.population_summary(5.0, &tol()).unwrap();
        assert_relative_eq!(summary.latent_sqrt_condition, 5.0);
        assert_eq!(summary.identifiable_level, 5);
        assert!(summary.identifiable_sqrt_condition < 5.0);
        assert!(summary.identifiable_gap <= summary.gap_bound);
    }
}
