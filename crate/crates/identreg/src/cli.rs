//! The `identreg` command line.
//!
//! Every command writes a provenance header followed by its result. JSON
//! output is one object `{"provenance": ..., "result": ...}`; CSV output
//! starts with `# key=value` comment lines. Settings are resolved in the order
//! built-in defaults, `IDENTREG_*_TOL` environment variables, the `--config`
//! JSON file, then command-line flags.
//!
//! The config file may hold `threads`, `format`, a `tolerances` object keyed
//! by tolerance name, and one object per subcommand (`fit`, `identify`,
//! `diagnose`, `simulate`, `verify_bounds`, `toy`) whose keys are the long
//! flag names with `-` replaced by `_`.
//!
//! Exit codes: 0 on success, 2 on invalid input, 1 on numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::bounds::{
    dominance_study, early_stopping_report, perturbation_trials, population_error_report, random_instance, BoundReport,
    DominanceConfig, DominanceTarget,
};
use crate::error::{Error, Result};
use crate::harness::{
    run_study, toy_framework, toy_ladder, toy_oracle, toy_population, SimConfig, SimulationDesign, ToyConfig,
    ToyGenerator,
};
use crate::io::{file_digest, format_number, read_dataset, read_matrix, read_vector, to_json, write_records};
use crate::population::{identifiable_parameter, relevant_subspace, truncation_ladder, PopulationPair};
use crate::reduction::{self, fingerprint, AlgorithmKind, SolutionForm};
use crate::sample::{
    complexity_report, heavy_tail_check, perturbation_event_check, sample_moments, Dataset, EventCheckConfig,
};
use crate::tolerance::ToleranceConfig;
use crate::{bounds, rng};

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code of a numerical failure on valid input.
pub const EXIT_NUMERICAL: i32 = 1;
/// Exit code of invalid input or usage.
pub const EXIT_VALIDATION: i32 = 2;

/// Identifiable regression coefficients, reduction paths and perturbation bounds.
#[derive(Debug, Parser)]
#[command(name = "identreg", version, about)]
pub struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON configuration file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the output to this file instead of standard output.
    #[arg(long, short = 'o', global = true, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Tolerance override, e.g. `--tol rank_tol=1e-12` (repeatable).
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE")]
    tol: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a reduction path and report coefficients at a dof or threshold.
    Fit(FitArgs),
    /// Compute the truncation ladder and the tau-identifiable parameter.
    Identify(IdentifyArgs),
    /// Report plug-in complexity functionals of a dataset.
    Diagnose(DiagnoseArgs),
    /// Run the latent-factor simulation study.
    Simulate(SimulateArgs),
    /// Check perturbation bounds on toy, random or file instances.
    VerifyBounds(VerifyArgs),
    /// Print the closed-form toy-model record.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Args)]
struct PairArgs {
    /// Dataset CSV whose last column is the response.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Covariance matrix CSV.
    #[arg(long, value_name = "FILE", requires = "sigvec")]
    sigma: Option<PathBuf>,
    /// Cross-covariance vector CSV.
    #[arg(long, value_name = "FILE", requires = "sigma")]
    sigvec: Option<PathBuf>,
    /// Treat the dataset as already centered.
    #[arg(long)]
    no_center: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Reduction policy: pcr, pls or fss.
    #[arg(long)]
    method: Option<String>,
    /// Degrees of freedom.
    #[arg(long, conflicts_with = "tau")]
    dof: Option<usize>,
    /// Threshold selecting the dof of the tau-identifiable parameter.
    #[arg(long)]
    tau: Option<f64>,
    /// Solution form: reduced or projected.
    #[arg(long)]
    form: Option<String>,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Conditioning threshold tau > 1.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Dataset CSV whose last column is the response.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Treat the dataset as already centered.
    #[arg(long)]
    no_center: bool,
    /// Moment order q > 4 (default 8).
    #[arg(long)]
    q: Option<f64>,
    /// Random directions for the moment-ratio estimate (default 256).
    #[arg(long)]
    directions: Option<usize>,
    /// Seed of the random directions.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Observations per dataset.
    #[arg(long)]
    n: Option<usize>,
    /// Features.
    #[arg(long)]
    p: Option<usize>,
    /// Relevant latent dimension.
    #[arg(long)]
    r_y: Option<usize>,
    /// True degrees of freedom.
    #[arg(long)]
    r: Option<usize>,
    /// Repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// First and last latent standard deviation, e.g. `5,1`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    sigma_q: Option<Vec<f64>>,
    /// First and last relevant noise standard deviation.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    sigma_0: Option<Vec<f64>>,
    /// First and last irrelevant standard deviation.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    sigma_perp: Option<Vec<f64>>,
    /// Standard deviation of the response noise.
    #[arg(long)]
    response_sd: Option<f64>,
    /// Seed of the per-repetition data streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the rotation (default: the data seed).
    #[arg(long)]
    rotation_seed: Option<u64>,
    /// Degrees of freedom of every estimator (default 5).
    #[arg(long)]
    s_star: Option<usize>,
    /// Comma-separated policies (default pcr,pls,fss).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Threshold of the population summary (default 5).
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Theorem {
    LeastSquares,
    Reduction,
    Population,
    EarlyStopping,
    SampleEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Source {
    Toy,
    Random,
    File,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Bound to check.
    #[arg(long, value_enum)]
    theorem: Option<Theorem>,
    /// Instance source (default: random for perturbation bounds, toy otherwise).
    #[arg(long, value_enum)]
    source: Option<Source>,
    /// Comma-separated policies (default pcr,pls,fss).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Perturbations or random instances per policy (default 1000).
    #[arg(long)]
    count: Option<usize>,
    /// Seed of the random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Covariance matrix CSV for the file source.
    #[arg(long, value_name = "FILE")]
    sigma: Option<PathBuf>,
    /// Cross-covariance vector CSV for the file source.
    #[arg(long, value_name = "FILE")]
    sigvec: Option<PathBuf>,
    /// Toy correlation.
    #[arg(long)]
    rho: Option<f64>,
    /// Toy coefficient on the first feature.
    #[arg(long)]
    beta1: Option<f64>,
    /// Toy coefficient on the second feature.
    #[arg(long)]
    beta2: Option<f64>,
    /// Toy response noise variance.
    #[arg(long)]
    noise_var: Option<f64>,
    /// Conditioning threshold (default 10).
    #[arg(long)]
    tau: Option<f64>,
    /// Degrees of freedom of reduction checks (default: random attained dof).
    #[arg(long)]
    dof: Option<usize>,
    /// Stability constant; omitted means the realized ratio is used.
    #[arg(long)]
    c: Option<f64>,
    /// Largest dimension of random instances (default 12).
    #[arg(long)]
    p_max: Option<usize>,
    /// Largest log10 condition number of random instances (default 2).
    #[arg(long)]
    max_log10_cond: Option<f64>,
    /// Attempt limit of random dominance studies (default 20 x count).
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Observations per simulated dataset in the sample-event check (default 500).
    #[arg(long)]
    n: Option<usize>,
    /// Confidence parameter in (0, 1/2) of the sample-event check (default 0.1).
    #[arg(long)]
    nu: Option<f64>,
    /// Trials of the sample-event check (default 200).
    #[arg(long)]
    trials: Option<usize>,
    /// Moment order of the sample-event check (default 8).
    #[arg(long)]
    q: Option<f64>,
    /// Constant K of the sample-event check (default: Gaussian closed form).
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    /// Correlation of the first two features (default 0.98).
    #[arg(long)]
    rho: Option<f64>,
    /// Coefficient on the first feature (default 1).
    #[arg(long)]
    beta1: Option<f64>,
    /// Coefficient on the second feature (default 0).
    #[arg(long)]
    beta2: Option<f64>,
    /// Response noise variance (default 1).
    #[arg(long)]
    noise_var: Option<f64>,
    /// Threshold of the framework evaluation (default 5).
    #[arg(long)]
    tau: Option<f64>,
}

/// A file read by a command, with its SHA-256 digest.
#[derive(Debug, Clone, Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

/// Header attached to every output.
#[derive(Debug, Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    tolerances: ToleranceConfig,
    config_file: Option<InputFile>,
    inputs: Vec<InputFile>,
}

/// CSV body of a command.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Result of a command before rendering.
struct Outcome {
    seed: Option<u64>,
    inputs: Vec<InputFile>,
    result: Value,
    table: Option<Table>,
    summary: Option<String>,
}

/// Values of the config file for one subcommand.
struct Section {
    name: &'static str,
    values: Map<String, Value>,
}

impl Section {
    fn new(config: &Map<String, Value>, name: &'static str, allowed: &[&str]) -> Result<Self> {
        let values = match config.get(name) {
            None => Map::new(),
            Some(Value::Object(map)) => map.clone(),
            Some(_) => {
                return Err(Error::ConfigInvalid(format!(
                    "config section '{name}' must be an object"
                )))
            }
        };
        if let Some(key) = values.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::ConfigInvalid(format!(
                "unknown key '{key}' in config section '{name}'"
            )));
        }
        Ok(Self { name, values })
    }

    /// The flag value when given, otherwise the config value.
    fn merge<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::ConfigInvalid(format!("config {}.{key}: {e}", self.name))),
        }
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.merge::<bool>(None, key)?.unwrap_or(false))
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        self.merge(flag, key)
    }
}

fn required<T>(value: Option<T>, flag: &str, command: &str) -> Result<T> {
    value.ok_or_else(|| Error::ConfigInvalid(format!("--{flag} is required for `{command}`")))
}

fn parse_methods(names: Option<Vec<String>>) -> Result<Vec<AlgorithmKind>> {
    match names {
        None => Ok(AlgorithmKind::ALL.to_vec()),
        Some(names) => {
            let mut kinds = names
                .iter()
                .map(|n| n.trim().parse())
                .collect::<Result<Vec<AlgorithmKind>>>()?;
            if kinds.is_empty() {
                return Err(Error::ConfigInvalid("no methods selected".into()));
            }
            kinds.dedup();
            Ok(kinds)
        }
    }
}

fn parse_form(name: Option<String>) -> Result<SolutionForm> {
    match name.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None | Some("reduced") => Ok(SolutionForm::Reduced),
        Some("projected") => Ok(SolutionForm::Projected),
        Some(other) => Err(Error::ConfigInvalid(format!(
            "unknown form '{other}' (expected reduced or projected)"
        ))),
    }
}

fn pair_of(values: Option<Vec<f64>>, what: &str) -> Result<Option<(f64, f64)>> {
    match values {
        None => Ok(None),
        Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
        Some(v) => Err(Error::ConfigInvalid(format!(
            "{what} needs two values, got {}",
            v.len()
        ))),
    }
}

fn input_file(path: &Path) -> Result<InputFile> {
    Ok(InputFile {
        path: path.display().to_string(),
        sha256: file_digest(path)?,
    })
}

fn num(v: f64) -> String {
    format_number(v)
}

/// Loads a moment pair from a dataset or from matrix and vector files.
fn load_pair(args: &PairArgs, tol: &ToleranceConfig, inputs: &mut Vec<InputFile>) -> Result<(PopulationPair, Value)> {
    match (&args.data, &args.sigma, &args.sigvec) {
        (Some(data), None, None) => {
            let dataset = load_dataset(data, args.no_center, tol, inputs)?;
            let pair = sample_moments(&dataset, tol)?;
            Ok((
                pair,
                json!({"kind": "dataset", "n": dataset.n(), "p": dataset.p(), "centered_by_tool": !args.no_center}),
            ))
        }
        (None, Some(sigma), Some(sigvec)) => {
            let matrix = read_matrix(sigma)?;
            let vector = read_vector(sigvec)?;
            inputs.push(input_file(sigma)?);
            inputs.push(input_file(sigvec)?);
            let pair = PopulationPair::from_parts(matrix, vector, tol)?;
            Ok((pair.clone(), json!({"kind": "moments", "p": pair.dim()})))
        }
        _ => Err(Error::ConfigInvalid(
            "give either --data or both --sigma and --sigvec".into(),
        )),
    }
}

fn load_dataset(path: &Path, no_center: bool, tol: &ToleranceConfig, inputs: &mut Vec<InputFile>) -> Result<Dataset> {
    let dataset = read_dataset(path)?;
    inputs.push(input_file(path)?);
    if no_center {
        Dataset::precentered(dataset.x().clone(), dataset.y().clone(), tol)
    } else {
        Ok(dataset.centered())
    }
}

fn pair_args(section: &Section, args: PairArgs) -> Result<PairArgs> {
    Ok(PairArgs {
        data: section.path(args.data, "data")?,
        sigma: section.path(args.sigma, "sigma")?,
        sigvec: section.path(args.sigvec, "sigvec")?,
        no_center: section.flag(args.no_center, "no_center")?,
    })
}

const PAIR_KEYS: [&str; 4] = ["data", "sigma", "sigvec", "no_center"];

fn keys(extra: &[&'static str], with_pair: bool) -> Vec<&'static str> {
    let mut all: Vec<&str> = extra.to_vec();
    if with_pair {
        all.extend(PAIR_KEYS);
    }
    all
}

fn fit(args: FitArgs, config: &Map<String, Value>, tol: &ToleranceConfig) -> Result<Outcome> {
    let section = Section::new(config, "fit", &keys(&["method", "dof", "tau", "form"], true))?;
    let pair_args = pair_args(&section, args.pair)?;
    let kind: AlgorithmKind = required(section.merge(args.method, "method")?, "method", "fit")?.parse()?;
    let dof = section.merge(args.dof, "dof")?;
    let tau = section.merge(args.tau, "tau")?;
    let form = parse_form(section.merge(args.form, "form")?)?;
    if dof.is_some() == tau.is_some() {
        return Err(Error::ConfigInvalid(
            "`fit` needs exactly one of --dof and --tau".into(),
        ));
    }
    let mut inputs = Vec::new();
    let (pair, source) = load_pair(&pair_args, tol, &mut inputs)?;
    let identifiable = match tau {
        Some(tau) => {
            let ladder = truncation_ladder(&relevant_subspace(&pair, tol)?)?;
            Some(identifiable_parameter(&ladder, tau)?)
        }
        None => None,
    };
    let target = dof
        .or(identifiable.as_ref().map(|id| id.dof))
        .expect("dof or tau is set");
    let path = reduction::run(kind, pair.sigma_mat(), pair.sigma_vec(), tol)?;
    let selection = path.select_dof(target);
    let step = &path.steps[selection.step];
    let coefficients = match form {
        SolutionForm::Reduced => step.solution.clone(),
        SolutionForm::Projected => step.projected_solution.clone(),
    };
    let summary: Vec<Value> = path
        .steps
        .iter()
        .map(|s| {
            Ok(json!({
                "step": s.step,
                "dof": s.dof,
                "coefficient_norm": s.solution.norm(),
                "relative_risk": bounds::relative_prediction_risk(&pair, &s.solution)?,
                "representation_gap": s.representation_gap,
            }))
        })
        .collect::<Result<_>>()?;
    let result = json!({
        "method": kind,
        "source": source,
        "requested_dof": target,
        "tau": tau,
        "identifiable_level": identifiable.as_ref().map(|id| id.level),
        "selection": selection,
        "form": form,
        "coefficients": coefficients.as_slice(),
        "relative_risk": bounds::relative_prediction_risk(&pair, &coefficients)?,
        "least_squares": path.ls_solution.as_slice(),
        "selected_features": path.selected,
        "fingerprint": fingerprint(pair.sigma_mat().matrix(), pair.sigma_vec()),
        "path": summary,
    });
    let table = Table {
        header: vec!["feature".into(), "coefficient".into()],
        rows: coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| vec![i.to_string(), num(*c)])
            .collect(),
    };
    Ok(Outcome {
        seed: None,
        inputs,
        result,
        table: Some(table),
        summary: None,
    })
}

fn identify(args: IdentifyArgs, config: &Map<String, Value>, tol: &ToleranceConfig) -> Result<Outcome> {
    let section = Section::new(config, "identify", &keys(&["tau"], true))?;
    let pair_args = pair_args(&section, args.pair)?;
    let tau = required(section.merge(args.tau, "tau")?, "tau", "identify")?;
    let mut inputs = Vec::new();
    let (pair, source) = load_pair(&pair_args, tol, &mut inputs)?;
    let rel = relevant_subspace(&pair, tol)?;
    let ladder = truncation_ladder(&rel)?;
    let selected = identifiable_parameter(&ladder, tau)?;
    let table = Table {
        header: [
            "level",
            "dim",
            "sqrt_condition_number",
            "exact_risk",
            "risk_bound",
            "selected",
        ]
        .map(String::from)
        .to_vec(),
        rows: ladder
            .levels
            .iter()
            .map(|l| {
                vec![
                    l.level.to_string(),
                    l.dim.to_string(),
                    num(l.sqrt_condition_number),
                    num(l.exact_risk),
                    num(l.risk_bound),
                    (l.level == selected.level).to_string(),
                ]
            })
            .collect(),
    };
    let result = json!({
        "source": source,
        "relevant_dim": rel.relevant.dim(),
        "irrelevant_dim": rel.irrelevant_dim,
        "largest_discarded_loading": rel.largest_discarded_loading,
        "levels": ladder.levels,
        "selected": selected,
    });
    Ok(Outcome {
        seed: None,
        inputs,
        result,
        table: Some(table),
        summary: None,
    })
}

fn diagnose(args: DiagnoseArgs, config: &Map<String, Value>, tol: &ToleranceConfig) -> Result<Outcome> {
    let section = Section::new(config, "diagnose", &["data", "no_center", "q", "directions", "seed"])?;
    let data = required(section.path(args.data, "data")?, "data", "diagnose")?;
    let no_center = section.flag(args.no_center, "no_center")?;
    let q = section.merge(args.q, "q")?.unwrap_or(8.0);
    let directions = section.merge(args.directions, "directions")?.unwrap_or(256);
    let seed = required(section.merge(args.seed, "seed")?, "seed", "diagnose")?;
    if !(q > 4.0) || !q.is_finite() {
        return Err(Error::BadMomentOrder { q });
    }
    let mut inputs = Vec::new();
    let dataset = load_dataset(&data, no_center, tol, &mut inputs)?;
    let complexity = complexity_report(&dataset, q, directions, seed, tol)?;
    let heavy_tail = heavy_tail_check(&complexity);
    Ok(Outcome {
        seed: Some(seed),
        inputs,
        result: json!({"complexity": complexity, "heavy_tail": heavy_tail}),
        table: None,
        summary: None,
    })
}

fn simulate(args: SimulateArgs, config: &Map<String, Value>, tol: &ToleranceConfig) -> Result<Outcome> {
    let section = Section::new(
        config,
        "simulate",
        &[
            "n",
            "p",
            "r_y",
            "r",
            "reps",
            "sigma_q",
            "sigma_0",
            "sigma_perp",
            "response_sd",
            "seed",
            "rotation_seed",
            "s_star",
            "methods",
            "tau",
        ],
    )?;
    let defaults = SimConfig::default();
    let seed = required(section.merge(args.seed, "seed")?, "seed", "simulate")?;
    let cfg = SimConfig {
        n: section.merge(args.n, "n")?.unwrap_or(defaults.n),
        p: section.merge(args.p, "p")?.unwrap_or(defaults.p),
        r_y: section.merge(args.r_y, "r_y")?.unwrap_or(defaults.r_y),
        r: section.merge(args.r, "r")?.unwrap_or(defaults.r),
        reps: section.merge(args.reps, "reps")?.unwrap_or(defaults.reps),
        sigma_q: pair_of(section.merge(args.sigma_q, "sigma_q")?, "sigma_q")?.unwrap_or(defaults.sigma_q),
        sigma_0: pair_of(section.merge(args.sigma_0, "sigma_0")?, "sigma_0")?.unwrap_or(defaults.sigma_0),
        sigma_perp: pair_of(section.merge(args.sigma_perp, "sigma_perp")?, "sigma_perp")?
            .unwrap_or(defaults.sigma_perp),
        response_sd: section
            .merge(args.response_sd, "response_sd")?
            .unwrap_or(defaults.response_sd),
        rotation_seed: section.merge(args.rotation_seed, "rotation_seed")?.unwrap_or(seed),
        data_seed: seed,
    };
    let s_star = section.merge(args.s_star, "s_star")?.unwrap_or(5);
    let methods = parse_methods(section.merge(args.methods, "methods")?)?;
    let tau = section.merge(args.tau, "tau")?.unwrap_or(5.0);
    cfg.validate()?;
    let design = SimulationDesign::new(cfg)?;
    let population = design.population_summary(tau, tol)?;
    let study = run_study(&design, &methods, s_star, tol)?;
    let table = Table {
        header: ["method", "rep", "metric", "value"].map(String::from).to_vec(),
        rows: study
            .tidy_rows()
            .into_iter()
            .map(|(method, rep, metric, value)| vec![method, rep.to_string(), metric, num(value)])
            .collect(),
    };
    let result = json!({"population": population, "study": study});
    Ok(Outcome {
        seed: Some(seed),
        inputs: Vec::new(),
        result,
        table: Some(table),
        summary: None,
    })
}

fn toy_config(rho: Option<f64>, beta1: Option<f64>, beta2: Option<f64>, noise_var: Option<f64>) -> ToyConfig {
    let d = ToyConfig::default();
    ToyConfig {
        beta1: beta1.unwrap_or(d.beta1),
        beta2: beta2.unwrap_or(d.beta2),
        rho: rho.unwrap_or(d.rho),
        noise_var: noise_var.unwrap_or(d.noise_var),
    }
}

fn toy(args: ToyArgs, config: &Map<String, Value>, tol: &ToleranceConfig) -> Result<Outcome> {
    let section = Section::new(config, "toy", &["rho", "beta1", "beta2", "noise_var", "tau"])?;
    let cfg = toy_config(
        section.merge(args.rho, "rho")?,
        section.merge(args.beta1, "beta1")?,
        section.merge(args.beta2, "beta2")?,
        section.merge(args.noise_var, "noise_var")?,
    );
    let tau = section.merge(args.tau, "tau")?.unwrap_or(5.0);
    cfg.validate()?;
    let oracle = match toy_oracle(&cfg) {
        Ok(oracle) => Some(oracle),
        Err(Error::UnsupportedBranch(_)) => None,
        Err(e) => return Err(e),
    };
    let result = json!({
        "config": cfg,
        "tau": tau,
        "oracle": oracle,
        "ladder": toy_ladder(&cfg)?,
        "framework": toy_framework(&cfg, tau, tol)?,
    });
    Ok(Outcome {
        seed: None,
        inputs: Vec::new(),
        result,
        table: None,
        summary: None,
    })
}

#[derive(Debug, Default, Serialize)]
struct VerifySummary {
    count: usize,
    precondition_met: usize,
    holds: usize,
    holds_rate: f64,
    worst_ratio: f64,
}

impl VerifySummary {
    fn of(reports: &[BoundReport]) -> Self {
        let met: Vec<&BoundReport> = reports.iter().filter(|r| r.precondition_met).collect();
        let holds = met.iter().filter(|r| r.holds).count();
        let worst_ratio = met
            .iter()
            .map(|r| {
                if r.bound_value > 0.0 {
                    r.observed_error / r.bound_value
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        Self {
            count: reports.len(),
            precondition_met: met.len(),
            holds,
            holds_rate: if met.is_empty() {
                f64::NAN
            } else {
                holds as f64 / met.len() as f64
            },
            worst_ratio,
        }
    }
}

fn verify_bounds(args: VerifyArgs, config: &Map<String, Value>, tol: &ToleranceConfig) -> Result<Outcome> {
    let section = Section::new(
        config,
        "verify_bounds",
        &[
            "theorem",
            "source",
            "methods",
            "count",
            "seed",
            "sigma",
            "sigvec",
            "rho",
            "beta1",
            "beta2",
            "noise_var",
            "tau",
            "dof",
            "c",
            "p_max",
            "max_log10_cond",
            "max_attempts",
            "n",
            "nu",
            "trials",
            "q",
            "k",
        ],
    )?;
    let theorem = match args.theorem {
        Some(t) => t,
        None => {
            let name: String = required(section.merge(None, "theorem")?, "theorem", "verify-bounds")?;
            Theorem::from_str(&name, true).map_err(|_| Error::ConfigInvalid(format!("unknown theorem '{name}'")))?
        }
    };
    let source = match args.source {
        Some(s) => Some(s),
        None => match section.merge::<String>(None, "source")? {
            Some(name) => Some(
                Source::from_str(&name, true).map_err(|_| Error::ConfigInvalid(format!("unknown source '{name}'")))?,
            ),
            None => None,
        },
    };
    let source = source.unwrap_or(match theorem {
        Theorem::LeastSquares | Theorem::Reduction => Source::Random,
        _ => Source::Toy,
    });
    let methods = parse_methods(section.merge(args.methods, "methods")?)?;
    let count = section.merge(args.count, "count")?.unwrap_or(1000);
    let seed = section.merge(args.seed, "seed")?;
    let tau = section.merge(args.tau, "tau")?.unwrap_or(10.0);
    let dof = section.merge(args.dof, "dof")?;
    let c = section.merge(args.c, "c")?;
    let toy_cfg = toy_config(
        section.merge(args.rho, "rho")?,
        section.merge(args.beta1, "beta1")?,
        section.merge(args.beta2, "beta2")?,
        section.merge(args.noise_var, "noise_var")?,
    );
    let sigma = section.path(args.sigma, "sigma")?;
    let sigvec = section.path(args.sigvec, "sigvec")?;
    let stochastic = match theorem {
        Theorem::LeastSquares | Theorem::Reduction | Theorem::SampleEvent => true,
        Theorem::Population | Theorem::EarlyStopping => source == Source::Random,
    };
    if stochastic && seed.is_none() {
        return Err(Error::ConfigInvalid(
            "--seed is required for this `verify-bounds` check".into(),
        ));
    }
    let seed_value = seed.unwrap_or(0);
    if count == 0 {
        return Err(Error::ConfigInvalid("--count must be positive".into()));
    }
    if let Some(c) = c {
        if !(c >= 1.0) || !c.is_finite() {
            return Err(Error::OutOfRange {
                what: "c",
                value: c,
                allowed: "finite c >= 1",
            });
        }
    }
    if source == Source::Toy {
        toy_cfg.validate()?;
    }
    if theorem == Theorem::SampleEvent {
        if source != Source::Toy {
            return Err(Error::ConfigInvalid(
                "the sample-event check runs on the toy generator only".into(),
            ));
        }
        let event_cfg = EventCheckConfig {
            n: section.merge(args.n, "n")?.unwrap_or(500),
            nu: section.merge(args.nu, "nu")?.unwrap_or(0.1),
            k: section.merge(args.k, "k")?,
            n_trials: section.merge(args.trials, "trials")?.unwrap_or(200),
            q: section.merge(args.q, "q")?.unwrap_or(8.0),
            seed: seed_value,
        };
        let generator = ToyGenerator::new(toy_cfg, tol)?;
        let event = perturbation_event_check(&generator, &event_cfg, tol)?;
        let summary = format!(
            "sample-event: frequency {:.4} vs target {:.4} over {} trials ({})",
            event.frequency,
            event.target,
            event.n_trials,
            if event.meets_target { "met" } else { "not met" }
        );
        return Ok(Outcome {
            seed,
            inputs: Vec::new(),
            result: json!({"theorem": "sample_event", "source": "toy", "event": event}),
            table: None,
            summary: Some(summary),
        });
    }

    let mut inputs = Vec::new();
    let fixed_pair = match source {
        Source::Toy => Some(toy_population(&toy_cfg, tol)?),
        Source::File => {
            let sigma = required(sigma, "sigma", "verify-bounds --source file")?;
            let sigvec = required(sigvec, "sigvec", "verify-bounds --source file")?;
            let matrix = read_matrix(&sigma)?;
            let vector = read_vector(&sigvec)?;
            inputs.push(input_file(&sigma)?);
            inputs.push(input_file(&sigvec)?);
            Some(PopulationPair::from_parts(matrix, vector, tol)?)
        }
        Source::Random => None,
    };
    let p_max = section.merge(args.p_max, "p_max")?.unwrap_or(12);
    let max_log10_cond = section.merge(args.max_log10_cond, "max_log10_cond")?.unwrap_or(2.0);
    let max_attempts = section.merge(args.max_attempts, "max_attempts")?.unwrap_or(20 * count);
    if p_max < 2 {
        return Err(Error::ConfigInvalid("--p-max must be at least 2".into()));
    }
    if !(max_log10_cond >= 0.0) || !max_log10_cond.is_finite() {
        return Err(Error::OutOfRange {
            what: "max_log10_cond",
            value: max_log10_cond,
            allowed: "finite and >= 0",
        });
    }
    let dominance = DominanceConfig {
        target: count,
        max_attempts,
        p_min: 2,
        p_max,
        max_log10_cond,
        seed: seed_value,
    };

    let targets: Vec<DominanceTarget> = match theorem {
        Theorem::LeastSquares => vec![DominanceTarget::LeastSquares],
        _ => methods.iter().map(|&k| DominanceTarget::Reduction(k)).collect(),
    };
    let mut groups = Vec::new();
    let mut all_reports = Vec::new();
    for target in targets {
        let method = match target {
            DominanceTarget::LeastSquares => None,
            DominanceTarget::Reduction(k) => Some(k),
        };
        let (reports, extra) = match (theorem, &fixed_pair) {
            (Theorem::LeastSquares | Theorem::Reduction, None) => {
                let study = dominance_study(target, &dominance)?;
                let extra = json!({"attempted": study.attempted});
                (study.reports, extra)
            }
            (Theorem::LeastSquares | Theorem::Reduction, Some(pair)) => {
                let reports = perturbation_trials(target, pair.sigma_mat(), pair.sigma_vec(), dof, count, seed_value)?;
                (reports, Value::Null)
            }
            (Theorem::Population | Theorem::EarlyStopping, pair) => {
                let kind = method.expect("population checks run per policy");
                let instances: Vec<PopulationPair> = match pair {
                    Some(pair) => vec![pair.clone()],
                    None => (0..count)
                        .map(|i| {
                            let mut stream = rng::stream(seed_value, i as u64);
                            let p = 2 + (i % (p_max - 1));
                            let (a, b) =
                                random_instance(p, p, max_log10_cond * (i as f64 / count as f64), tol, &mut stream)?;
                            PopulationPair::new(a, b)
                        })
                        .collect::<Result<_>>()?,
                };
                let mut reports = Vec::new();
                let mut details = Vec::new();
                for pair in &instances {
                    let population = population_error_report(kind, pair, tau, c)?;
                    if theorem == Theorem::Population {
                        reports.push(population.report.clone());
                        details.push(population);
                    } else {
                        let oracle_dof = population.oracle_dof;
                        let levels: Vec<usize> = match dof {
                            Some(r) => vec![r],
                            None => (0..=oracle_dof).collect(),
                        };
                        for r in levels {
                            let early = early_stopping_report(kind, pair, tau, r, c)?;
                            reports.push(early.report.clone());
                            details.push(early);
                        }
                    }
                }
                (reports, json!({"details": details}))
            }
            (Theorem::SampleEvent, _) => unreachable!("handled above"),
        };
        let summary = VerifySummary::of(&reports);
        groups.push(json!({
            "method": method,
            "summary": summary,
            "extra": extra,
        }));
        all_reports.extend(reports);
    }
    let summary = VerifySummary::of(&all_reports);
    let line = format!(
        "{}: {} reports, {} with preconditions met, holds-rate {:.4}, worst ratio {:.4e}",
        theorem_name(theorem),
        summary.count,
        summary.precondition_met,
        summary.holds_rate,
        summary.worst_ratio
    );
    let table = Table {
        header: [
            "index",
            "bound",
            "method",
            "dof",
            "epsilon",
            "bound_value",
            "observed_error",
            "precondition_met",
            "holds",
        ]
        .map(String::from)
        .to_vec(),
        rows: all_reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    i.to_string(),
                    serde_json::to_value(r.bound)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                    r.kind.map(|k| k.name().to_string()).unwrap_or_default(),
                    r.dof.map(|d| d.to_string()).unwrap_or_default(),
                    num(r.epsilon),
                    num(r.bound_value),
                    num(r.observed_error),
                    r.precondition_met.to_string(),
                    r.holds.to_string(),
                ]
            })
            .collect(),
    };
    let result = json!({
        "theorem": theorem_name(theorem),
        "source": source_name(source),
        "tau": tau,
        "summary": summary,
        "groups": groups,
        "reports": all_reports,
    });
    Ok(Outcome {
        seed,
        inputs,
        result,
        table: Some(table),
        summary: Some(line),
    })
}

fn theorem_name(t: Theorem) -> &'static str {
    match t {
        Theorem::LeastSquares => "least_squares",
        Theorem::Reduction => "reduction",
        Theorem::Population => "population",
        Theorem::EarlyStopping => "early_stopping",
        Theorem::SampleEvent => "sample_event",
    }
}

fn source_name(s: Source) -> &'static str {
    match s {
        Source::Toy => "toy",
        Source::Random => "random",
        Source::File => "file",
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fit(_) => "fit",
        Command::Identify(_) => "identify",
        Command::Diagnose(_) => "diagnose",
        Command::Simulate(_) => "simulate",
        Command::VerifyBounds(_) => "verify-bounds",
        Command::Toy(_) => "toy",
    }
}

fn read_config(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::ConfigInvalid(format!(
            "{}: the config must be a JSON object",
            path.display()
        ))),
        Err(e) => Err(Error::Parse(format!("{}: {e}", path.display()))),
    }
}

/// Tolerances from defaults, then environment, then config, then flags.
fn resolve_tolerances(
    env: &dyn Fn(&str) -> Option<String>,
    config: &Map<String, Value>,
    flags: &[String],
) -> Result<ToleranceConfig> {
    let mut tol = ToleranceConfig::default();
    tol.apply_overrides(env)?;
    match config.get("tolerances") {
        None => {}
        Some(Value::Object(map)) => {
            for (name, value) in map {
                let value = value
                    .as_f64()
                    .ok_or_else(|| Error::ConfigInvalid(format!("tolerance '{name}' must be a number")))?;
                tol.set(name, value)?;
            }
        }
        Some(_) => return Err(Error::ConfigInvalid("config 'tolerances' must be an object".into())),
    }
    for flag in flags {
        let (name, raw) = flag
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("--tol expects NAME=VALUE, got '{flag}'")))?;
        let value: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("--tol {flag}: '{raw}' is not a number")))?;
        tol.set(name.trim(), value)?;
    }
    Ok(tol)
}

fn render_csv(provenance: &Provenance, table: &Table) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut line = |text: String| {
        out.extend_from_slice(text.as_bytes());
        out.push(b'\n');
    };
    line(format!("# tool={}", provenance.tool));
    line(format!("# version={}", provenance.version));
    line(format!("# command={}", provenance.command));
    line(format!(
        "# seed={}",
        provenance.seed.map_or_else(|| "none".to_string(), |s| s.to_string())
    ));
    for (name, value) in provenance.tolerances.named() {
        line(format!("# {name}={}", format_number(value)));
    }
    if let Some(config) = &provenance.config_file {
        line(format!("# config_file={} sha256={}", config.path, config.sha256));
    }
    for input in &provenance.inputs {
        line(format!("# input={} sha256={}", input.path, input.sha256));
    }
    write_records(
        &mut out,
        &table.header.iter().map(String::as_str).collect::<Vec<_>>(),
        &table.rows,
    )?;
    Ok(out)
}

/// Flattens scalar leaves of a JSON value into `key,value` rows.
fn flatten(prefix: &str, value: &Value, rows: &mut Vec<Vec<String>>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, rows);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), v, rows);
            }
        }
        Value::String(s) => rows.push(vec![prefix.to_string(), s.clone()]),
        Value::Null => rows.push(vec![prefix.to_string(), String::new()]),
        other => rows.push(vec![prefix.to_string(), other.to_string()]),
    }
}

fn execute(cli: Cli, env: &dyn Fn(&str) -> Option<String>) -> Result<(Vec<u8>, Option<String>, Option<PathBuf>)> {
    let GlobalArgs {
        config: config_path,
        threads,
        output,
        format,
        tol: tol_flags,
    } = cli.global;
    let config = match &config_path {
        Some(path) => read_config(path)?,
        None => Map::new(),
    };
    if let Some(key) = config.keys().find(|k| {
        ![
            "threads",
            "format",
            "tolerances",
            "fit",
            "identify",
            "diagnose",
            "simulate",
            "verify_bounds",
            "toy",
        ]
        .contains(&k.as_str())
    }) {
        return Err(Error::ConfigInvalid(format!("unknown top-level config key '{key}'")));
    }
    let global = Section {
        name: "config",
        values: config.clone(),
    };
    let threads: Option<usize> = global.merge(threads, "threads")?;
    let format: Option<Format> = global.merge(format, "format")?;
    let tol = resolve_tolerances(env, &config, &tol_flags)?;
    let command = command_name(&cli.command);
    let default_format = if matches!(cli.command, Command::Simulate(_)) {
        Format::Csv
    } else {
        Format::Json
    };
    let format = format.unwrap_or(default_format);

    let dispatch = || -> Result<Outcome> {
        match cli.command {
            Command::Fit(a) => fit(a, &config, &tol),
            Command::Identify(a) => identify(a, &config, &tol),
            Command::Diagnose(a) => diagnose(a, &config, &tol),
            Command::Simulate(a) => simulate(a, &config, &tol),
            Command::VerifyBounds(a) => verify_bounds(a, &config, &tol),
            Command::Toy(a) => toy(a, &config, &tol),
        }
    };
    let outcome = match threads {
        Some(0) => return Err(Error::ConfigInvalid("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("cannot build a pool of {n} threads: {e}")))?
            .install(dispatch)?,
        None => dispatch()?,
    };

    let provenance = Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: outcome.seed,
        tolerances: tol,
        config_file: config_path.as_deref().map(input_file).transpose()?,
        inputs: outcome.inputs,
    };
    let bytes = match format {
        Format::Json => to_json(&json!({"provenance": provenance, "result": outcome.result}))?.into_bytes(),
        Format::Csv => {
            let table = outcome.table.unwrap_or_else(|| {
                let mut rows = Vec::new();
                flatten("", &outcome.result, &mut rows);
                Table {
                    header: vec!["key".into(), "value".into()],
                    rows,
                }
            });
            render_csv(&provenance, &table)?
        }
    };
    Ok((bytes, outcome.summary, output))
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. `env` looks up environment variables.
pub fn run<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(cli, env) {
        Ok((bytes, summary, output)) => {
            let written = match &output {
                Some(path) => std::fs::write(path, &bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
                None => stdout.write_all(&bytes).map_err(|e| Error::Io(e.to_string())),
            };
            if let Err(e) = written {
                let _ = writeln!(stderr, "error: {e}");
                return EXIT_VALIDATION;
            }
            if let Some(line) = summary {
                let _ = writeln!(stderr, "{line}");
            }
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

/// Runs the command line against the process environment and standard streams.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(
        args,
        &|key| std::env::var(key).ok(),
        &mut stdout.lock(),
        &mut stderr.lock(),
    )
}
