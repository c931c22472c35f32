//! The `npmle` command line: `fit`, `denoise` and `simulate`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::denoise::{canonical_rho, hetero_target, oracle_bayes, tweedie_denoise, DenoiseResult, HeteroModel};
use crate::error::{NpmleError, Result};
use crate::io::{denoise_to_csv, read_dataset, read_latents, read_text, write_text, ModelFile, RiskSummary};
use crate::metrics::mean_squared_error;
use crate::mixture::{Dataset, MixingMeasure};
use crate::sim::experiment::{DEFAULT_N_LIST, DEFAULT_REPLICATES, FULL_N_LIST, FULL_REPLICATES};
use crate::sim::{run_experiment, Competitor, ExperimentConfig, ScenarioKind};
use crate::solver::{fit, FitResult, Method, SolverConfig};
use crate::support::{default_grid_points, SupportStrategy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "npmle", version, about = "Gaussian location mixture NPMLE and empirical-Bayes denoising")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the NPMLE to a CSV of observations and write the model as JSON.
    Fit(FitArgs),
    /// Denoise observations with a fitted or inline-fitted model.
    Denoise(DenoiseArgs),
    /// Run a replicated simulation experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SupportKind {
    Exemplar,
    Grid,
    Subsample,
    Binned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Em,
    Fw,
    EmFw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RhoArg {
    #[value(name = "0")]
    Zero,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Eb,
    Oracle,
    KmeansOracle,
    KmeansGap,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Candidate support for the atoms.
    #[arg(long, value_enum, default_value = "exemplar")]
    pub support: SupportKind,
    /// Grid points per axis (default: about n^(1/(2d)), at least 8).
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Subsample size (default: ceil(sqrt(n))).
    #[arg(long)]
    pub subsample_m: Option<usize>,
    /// Bins per axis for binned support (default as for the grid).
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, value_enum, default_value = "em-fw")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1e-6)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iters: usize,
    #[arg(long, env = "NPMLE_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Model JSON written by `fit`.
    #[arg(long, conflicts_with = "fit_inline", required_unless_present = "fit_inline")]
    pub model: Option<PathBuf>,
    /// Fit the model from the input instead of reading one.
    #[arg(long)]
    pub fit_inline: bool,
    /// Lower bound on the per-observation noise standard deviation.
    #[arg(long)]
    pub sigma_min: Option<f64>,
    /// True means: d columns, or d + d*d columns adding the row-major covariance.
    #[arg(long)]
    pub latents: Option<PathBuf>,
    /// Density floor in Tweedie's formula.
    #[arg(long, value_enum, default_value = "0")]
    pub rho: RhoArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Risk summary JSON (requires --latents).
    #[arg(long, requires = "latents")]
    pub risk_out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: String,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, env = "NPMLE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the full protocol: n from 300 to 2100 and 1000 replicates.
    #[arg(long)]
    pub full: bool,
    /// Comma-separated competitors (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodName>>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            method: match self.method {
                MethodArg::Em => Method::Em,
                MethodArg::Fw => Method::FrankWolfe,
                MethodArg::EmFw => Method::EmThenFw,
            },
            max_iters: self.max_iters,
            gap_tol: self.gap_tol,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn strategy(&self, data: &Dataset) -> SupportStrategy {
        let (n, d) = (data.len(), data.dim());
        match self.support {
            SupportKind::Exemplar => SupportStrategy::Exemplar,
            SupportKind::Grid => SupportStrategy::Grid {
                points_per_dim: self.grid_points.unwrap_or_else(|| default_grid_points(n, d)),
            },
            SupportKind::Subsample => SupportStrategy::Subsample {
                m: self.subsample_m.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize),
                seed: self.seed,
            },
            SupportKind::Binned => SupportStrategy::Binned {
                bins_per_dim: self.bins.unwrap_or_else(|| default_grid_points(n, d)),
            },
        }
    }

    /// Rejects flags that do not belong to the chosen support.
    fn check_flags(&self) -> Result<()> {
        let stray = [
            (self.grid_points.is_some(), SupportKind::Grid, "--grid-points"),
            (self.subsample_m.is_some(), SupportKind::Subsample, "--subsample-m"),
            (self.bins.is_some(), SupportKind::Binned, "--bins"),
        ];
        for (set, kind, flag) in stray {
            if set && self.support != kind {
                return Err(NpmleError::Config(format!("{flag} only applies with --support {kind:?}").to_lowercase()));
            }
        }
        Ok(())
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(NpmleError::Config("--threads must be at least 1".into()));
        }
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn report_fit(fit: &FitResult, tol: f64) {
    eprintln!("duality gap: {:.3e}", fit.duality_gap);
    eprintln!("log-likelihood: {:.10}", fit.log_likelihood());
    eprintln!("atoms: {}", fit.mixture.len());
    if !fit.converged {
        eprintln!(
            "warning: solver stopped after {} iterations with gap {:.3e} above tolerance {:.1e}",
            fit.iterations, fit.duality_gap, tol
        );
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    args.solver.check_flags()?;
    let cfg = args.solver.config()?;
    set_threads(args.threads)?;
    let data = read_dataset(&args.input)?;
    let fitted = fit(&data, args.solver.strategy(&data), &cfg)?;
    report_fit(&fitted, cfg.gap_tol);
    write_text(&args.out, &ModelFile::from_fit(&fitted).to_json())
}

fn load_model(path: &Path, dim: usize) -> Result<MixingMeasure> {
    let model = ModelFile::from_json(&read_text(path)?)?.mixture()?;
    if model.dim() != dim {
        return Err(NpmleError::Data(format!(
            "model has dimension {}, data has dimension {dim}",
            model.dim()
        )));
    }
    Ok(model)
}

pub fn cmd_denoise(args: &DenoiseArgs) -> Result<()> {
    args.solver.check_flags()?;
    let cfg = args.solver.config()?;
    set_threads(args.threads)?;
    let s = args.sigma_min.unwrap_or(1.0);
    HeteroModel::new(s, None, None)?;
    let data = read_dataset(&args.input)?;
    let (n, d) = (data.len(), data.dim());
    let latents = match &args.latents {
        Some(p) => {
            let l = read_latents(p, d)?;
            if l.means.len() != n {
                return Err(NpmleError::Data(format!("{} latent rows for {n} observations", l.means.len())));
            }
            Some(l)
        }
        None => None,
    };
    if let Some(covs) = latents.as_ref().and_then(|l| l.covariances.clone()) {
        // validates Σ_i ⪰ σ_min² I
        HeteroModel::new(s, None, Some(covs))?.check_covariances(&data)?;
    }

    // everything below runs on X/σ_min and maps back by σ_min
    let scaled = data.scaled(1.0 / s);
    let mixture = match &args.model {
        Some(p) => load_model(p, d)?,
        None => {
            let fitted = fit(&scaled, args.solver.strategy(&scaled), &cfg)?;
            report_fit(&fitted, cfg.gap_tol);
            fitted.mixture
        }
    };
    let rho = match args.rho {
        RhoArg::Zero => None,
        RhoArg::Auto => Some(canonical_rho(n, d)),
    };
    let mut result = tweedie_denoise(&mixture, &scaled, rho)?;
    result.estimates = result.estimates.scaled(s);

    if let Some(l) = &latents {
        let oracle = match &l.covariances {
            Some(covs) => hetero_target(&l.means, covs, &data, s)?,
            None => oracle_bayes(&MixingMeasure::empirical(&l.means.scaled(1.0 / s))?, &scaled)?.scaled(s),
        };
        result.risk_vs_truth = Some(mean_squared_error(&result.estimates, &l.means)?);
        result.risk_vs_oracle = Some(mean_squared_error(&result.estimates, &oracle)?);
        result.oracle = Some(oracle);
    }
    write_text(&args.out, &denoise_to_csv(&data, &result))?;
    if let Some(p) = &args.risk_out {
        write_text(p, &risk_summary(&result, n, d).to_json())?;
    }
    Ok(())
}

fn risk_summary(result: &DenoiseResult, n: usize, dim: usize) -> RiskSummary {
    RiskSummary {
        n,
        dim,
        rho_used: result.rho_used,
        risk_vs_truth: result.risk_vs_truth,
        risk_vs_oracle: result.risk_vs_oracle,
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let kind = ScenarioKind::from_name(&args.scenario).ok_or_else(|| {
        NpmleError::Config(format!(
            "unknown scenario {:?}; valid names: {}",
            args.scenario,
            ScenarioKind::NAMES.join(", ")
        ))
    })?;
    set_threads(args.threads)?;
    let (default_n, default_reps) = if args.full {
        (FULL_N_LIST.to_vec(), FULL_REPLICATES)
    } else {
        (DEFAULT_N_LIST.to_vec(), DEFAULT_REPLICATES)
    };
    let n_list = args.n.clone().unwrap_or(default_n);
    let replicates = args.replicates.unwrap_or(default_reps);
    let mut cfg = ExperimentConfig::default();
    if let Some(methods) = &args.methods {
        cfg.methods = methods
            .iter()
            .map(|m| match m {
                MethodName::Eb => Competitor::EmpiricalBayes,
                MethodName::Oracle => Competitor::OracleBayes,
                MethodName::KmeansOracle => Competitor::KMeansOracleK,
                MethodName::KmeansGap => Competitor::KMeansGap,
            })
            .collect();
    }
    let report = run_experiment(&kind, &n_list, replicates, &cfg, args.seed)?;
    let prefix = args.out.display().to_string();
    write_text(Path::new(&format!("{prefix}.csv")), &report.to_csv())?;
    let mut json = report.summary_json();
    json.push('\n');
    write_text(Path::new(&format!("{prefix}.json")), &json)?;
    eprintln!(
        "{}: {} replicates at n = {:?}, {} rows",
        report.scenario,
        replicates,
        n_list,
        report.records.iter().map(|r| r.values.len()).sum::<usize>()
    );
    Ok(())
}

/// Exit status for a failed command.
pub fn exit_code(err: &NpmleError) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
