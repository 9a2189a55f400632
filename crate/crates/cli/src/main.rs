//! Command-line pipeline: simulate or ingest a corpus, check the role effect,
//! fit the regression models, diagnose convergence, compare RMSE, and derive
//! per-project thresholds.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence
//! (`diagnose` always; other commands only under `--strict`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use poolfit::corpus::Corpus;
use poolfit::diagnostics::ConvergenceReport;
use poolfit::effects::{effect_report, per_project_effects, EffectReport};
use poolfit::inference::{fit, rmse_compare_with, rmse_for_fit, FitResult, PointEstimates, RmseRow, RmseTable};
use poolfit::models::ModelKind;
use poolfit::sampler::{ParamSummary, SamplerConfig};
use poolfit::synth::{generate, GenSpec};
use poolfit::thresholds::{threshold_report, ThresholdOptions, DEFAULT_TAUS};
use poolfit::{Error, RmseOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "poolfit", version, about = "Hierarchical Bayesian regression for per-project metric thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and report point estimates and diagnostics
    Fit(FitArgs),
    /// Fit all three models and compare per-project RMSE
    Validate(ValidateArgs),
    /// Derive per-project risk thresholds from a partial-pooling fit
    Thresholds(ThresholdsArgs),
    /// Convergence diagnostics; exits 3 if the fit did not converge
    Diagnose(DiagnoseArgs),
    /// Mann-Whitney U and Cliff's delta for the role split
    Effect(EffectArgs),
    /// Generate a synthetic corpus with known ground truth
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Full,
    Unpooled,
    Partial,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Full => ModelKind::FullPool,
            Model::Unpooled => ModelKind::Unpooled,
            Model::Partial => ModelKind::PartialPool,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Controller,
    None,
}

#[derive(Args)]
struct SamplerArgs {
    /// MCMC chains
    #[arg(long, default_value_t = 2)]
    chains: usize,
    /// Iterations per chain, warmup included
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Warmup iterations discarded from each chain
    #[arg(long, default_value_t = 500)]
    warmup: usize,
    /// Leapfrog steps per proposal
    #[arg(long, default_value_t = 20)]
    leapfrog: usize,
    /// Step-size adaptation target acceptance rate
    #[arg(long, default_value_t = 0.8)]
    target_accept: f64,
    /// RNG seed; chain c uses seed + c
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            iterations: self.iters,
            warmup: self.warmup,
            leapfrog_steps: self.leapfrog,
            target_accept: self.target_accept,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Directory for output files and the run manifest
    #[arg(long, env = "POOLFIT_OUT")]
    out: Option<PathBuf>,
    /// Exit with code 3 when the fit did not converge
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Corpus CSV (project,file,role,cbo)
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Model::Partial)]
    model: Model,
    /// Also write every post-warmup draw as chain,draw,param,value CSV
    #[arg(long)]
    dump_draws: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Restrict the comparison to a single model
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// Report errors on the raw count scale instead of the log scale
    #[arg(long)]
    raw_space: bool,
    /// Pool squared errors over files instead of averaging project RMSEs
    #[arg(long)]
    weighted: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ThresholdsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Thresholds are defined by the partial-pooling posterior
    #[arg(long, value_enum, default_value_t = Model::Partial)]
    model: Model,
    /// Role indicator the thresholds are computed for
    #[arg(long, value_enum, default_value_t = Role::Controller)]
    role: Role,
    /// Average the quantile over posterior draws instead of plugging in means
    #[arg(long)]
    predictive: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Model::Partial)]
    model: Model,
    /// Include the Mann-Whitney / Cliff's delta effect report
    #[arg(long)]
    effect: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EffectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Report one effect per project instead of the pooled comparison
    #[arg(long)]
    per_project: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of projects
    #[arg(long = "J", default_value_t = 30)]
    projects: usize,
    #[arg(long, default_value_t = 28)]
    files_min: usize,
    #[arg(long, default_value_t = 300)]
    files_max: usize,
    #[arg(long, default_value_t = 0.2)]
    controller_fraction: f64,
    #[arg(long, default_value_t = 2.5)]
    mu_a: f64,
    #[arg(long, default_value_t = 0.6)]
    sigma_a: f64,
    #[arg(long, default_value_t = 0.8)]
    mu_b: f64,
    #[arg(long, default_value_t = 0.3)]
    sigma_b: f64,
    #[arg(long, default_value_t = 0.7)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

/// Reproducibility record written next to every output file.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    input: Option<String>,
    seed: u64,
    config: Option<SamplerConfig>,
    version: String,
    timings_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, input: Option<&Path>, seed: u64, config: Option<SamplerConfig>) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            input: input.map(|p| p.display().to_string()),
            seed,
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timings_seconds: BTreeMap::new(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Thresholds(args) => cmd_thresholds(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Effect(args) => cmd_effect(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn load_filtered(path: &Path) -> Result<Corpus, Error> {
    Corpus::load_csv(path)?.filter_projects_with_role()
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_owned(), source })?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(&path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(path)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), Error> {
    write_json(dir, "manifest.json", manifest)?;
    Ok(())
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Compact fit record: estimates and diagnostics, no draws.
#[derive(Serialize)]
struct FitSummary<'a> {
    model: ModelKind,
    converged: bool,
    max_split_rhat: f64,
    divergences: usize,
    accept_rate: &'a [f64],
    unidentified: &'a [String],
    warnings: &'a [String],
    point_estimates: &'a PointEstimates,
}

#[derive(Serialize)]
struct FitFile<'a> {
    #[serde(flatten)]
    summary: FitSummary<'a>,
    params: Vec<ParamSummary>,
    convergence: &'a ConvergenceReport,
}

fn summarize(result: &FitResult) -> FitSummary<'_> {
    FitSummary {
        model: result.kind,
        converged: result.converged(),
        max_split_rhat: result.convergence.max_split_rhat,
        divergences: result.convergence.divergence_count,
        accept_rate: &result.samples.accept_rate,
        unidentified: &result.unidentified,
        warnings: &result.warnings,
        point_estimates: &result.point_estimates,
    }
}

fn strictness_exit(strict: bool, converged: bool) -> ExitCode {
    if strict && !converged {
        ExitCode::from(EXIT_NOT_CONVERGED)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode, Error> {
    let config = args.sampler.config();
    let corpus = load_filtered(&args.data)?;
    let start = Instant::now();
    let result = fit(args.model.into(), &corpus, &config)?;
    let elapsed = start.elapsed().as_secs_f64();

    print_json(&summarize(&result));
    if let Some(dir) = &args.out.out {
        let file = FitFile { summary: summarize(&result), params: result.samples.summary(), convergence: &result.convergence };
        write_json(dir, "fit.json", &file)?;
        if args.dump_draws {
            let path = dir.join("draws.csv");
            let writer = std::fs::File::create(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
            result
                .samples
                .write_draws_csv(std::io::BufWriter::new(writer))
                .map_err(|source| Error::Io { path, source })?;
        }
        let mut manifest = RunManifest::new("fit", Some(&args.data), config.seed, Some(config.clone()));
        manifest.timings_seconds.insert(result.kind.to_string(), elapsed);
        write_manifest(dir, &manifest)?;
    }
    Ok(strictness_exit(args.out.strict, result.converged()))
}

fn table_label(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::FullPool => "Full Pool",
        ModelKind::Unpooled => "Unpooled",
        ModelKind::PartialPool => "Partial Pool",
    }
}

fn format_seconds(seconds: f64) -> String {
    if seconds >= 60.0 {
        format!("{}m{:02.0}s", (seconds / 60.0).floor(), seconds % 60.0)
    } else {
        format!("{seconds:.1}s")
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode, Error> {
    let config = args.sampler.config();
    let corpus = load_filtered(&args.data)?;
    let opts = RmseOptions { weighted: args.weighted, raw_space: args.raw_space };

    let table = match args.model {
        None => rmse_compare_with(&corpus, &config, opts)?,
        Some(model) => {
            let start = Instant::now();
            let result = fit(model.into(), &corpus, &config)?;
            let seconds = start.elapsed().as_secs_f64();
            let (mean_rmse, per_project) = rmse_for_fit(&result, &corpus, opts)?;
            RmseTable {
                space: if opts.raw_space { "cbo".into() } else { "lcbo".into() },
                weighted: opts.weighted,
                rows: vec![RmseRow { model: model.into(), mean_rmse, per_project, seconds }],
            }
        }
    };

    println!("{:<14} {:>7}  {:>13}", "Model", "RMSE", "Sampling Time");
    for row in &table.rows {
        println!(
            "{:<14} {:>7.3}  {:>13}",
            table_label(row.model),
            row.mean_rmse,
            format_seconds(row.seconds)
        );
    }

    if let Some(dir) = &args.out.out {
        write_json(dir, "rmse.json", &table)?;
        let mut manifest = RunManifest::new("validate", Some(&args.data), config.seed, Some(config));
        for row in &table.rows {
            manifest.timings_seconds.insert(row.model.to_string(), row.seconds);
        }
        write_manifest(dir, &manifest)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_thresholds(args: ThresholdsArgs) -> Result<ExitCode, Error> {
    if args.model != Model::Partial {
        eprintln!("error: thresholds are derived from the partial-pooling model; pass --model partial");
        return Ok(ExitCode::from(EXIT_USAGE));
    }
    let config = args.sampler.config();
    let corpus = load_filtered(&args.data)?;
    let start = Instant::now();
    let result = fit(ModelKind::PartialPool, &corpus, &config)?;
    let elapsed = start.elapsed().as_secs_f64();

    let opts = ThresholdOptions {
        x: if args.role == Role::Controller { 1.0 } else { 0.0 },
        predictive: args.predictive,
    };
    let report = threshold_report(&result, &DEFAULT_TAUS, opts)?;

    let mut stdout = Vec::new();
    report.write_csv(&mut stdout).expect("in-memory write");
    print!("{}", String::from_utf8(stdout).expect("utf8"));

    if let Some(dir) = &args.out.out {
        write_json(dir, "thresholds.json", &report)?;
        let path = dir.join("thresholds.csv");
        let writer = std::fs::File::create(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
        report
            .write_csv(std::io::BufWriter::new(writer))
            .map_err(|source| Error::Io { path, source })?;
        let mut manifest = RunManifest::new("thresholds", Some(&args.data), config.seed, Some(config));
        manifest.timings_seconds.insert("partial_pool".into(), elapsed);
        write_manifest(dir, &manifest)?;
    }
    Ok(strictness_exit(args.out.strict, result.converged()))
}

#[derive(Serialize)]
struct DiagnoseFile<'a> {
    convergence: &'a ConvergenceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    effect: Option<EffectReport>,
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<ExitCode, Error> {
    let config = args.sampler.config();
    let full_corpus = Corpus::load_csv(&args.data)?;
    let corpus = full_corpus.filter_projects_with_role()?;
    let start = Instant::now();
    let result = fit(args.model.into(), &corpus, &config)?;
    let elapsed = start.elapsed().as_secs_f64();

    // The effect check compares roles across the whole corpus, pre-filter.
    let effect = if args.effect { Some(effect_report(&full_corpus)?) } else { None };
    let file = DiagnoseFile { convergence: &result.convergence, effect };
    if args.effect {
        print_json(&file);
    } else {
        print_json(&result.convergence);
    }

    if let Some(dir) = &args.out.out {
        write_json(dir, "diagnose.json", &file)?;
        let mut manifest = RunManifest::new("diagnose", Some(&args.data), config.seed, Some(config));
        manifest.timings_seconds.insert(result.kind.to_string(), elapsed);
        write_manifest(dir, &manifest)?;
    }
    if result.converged() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}

#[derive(Serialize)]
struct ProjectEffect {
    project: String,
    #[serde(flatten)]
    report: EffectReport,
}

fn cmd_effect(args: EffectArgs) -> Result<ExitCode, Error> {
    let corpus = Corpus::load_csv(&args.data)?;
    if args.per_project {
        let rows: Vec<ProjectEffect> = per_project_effects(&corpus)
            .into_iter()
            .map(|(project, report)| ProjectEffect { project, report })
            .collect();
        print_json(&rows);
        if let Some(dir) = &args.out.out {
            write_json(dir, "effect.json", &rows)?;
            write_manifest(dir, &RunManifest::new("effect", Some(&args.data), 0, None))?;
        }
    } else {
        let report = effect_report(&corpus)?;
        print_json(&report);
        if let Some(dir) = &args.out.out {
            write_json(dir, "effect.json", &report)?;
            write_manifest(dir, &RunManifest::new("effect", Some(&args.data), 0, None))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SimulateStatus {
    corpus: String,
    truth: String,
    files: usize,
    projects: usize,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    gen: &'a GenSpec,
    seed: u64,
    a: &'a [f64],
    b: &'a [f64],
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, Error> {
    let spec = GenSpec {
        n_projects: args.projects,
        files_min: args.files_min,
        files_max: args.files_max,
        controller_fraction: args.controller_fraction,
        mu_a: args.mu_a,
        sigma_a: args.sigma_a,
        mu_b: args.mu_b,
        sigma_b: args.sigma_b,
        sigma: args.sigma,
    };
    let (corpus, truth) = generate(&spec, args.seed)?;
    let dir = args.out.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    let corpus_path = dir.join("corpus.csv");
    corpus.save_csv(&corpus_path)?;
    let truth_file = TruthFile { gen: &spec, seed: args.seed, a: &truth.a, b: &truth.b };
    let truth_path = write_json(&dir, "truth.json", &truth_file)?;
    write_manifest(&dir, &RunManifest::new("simulate", None, args.seed, None))?;

    print_json(&SimulateStatus {
        corpus: corpus_path.display().to_string(),
        truth: truth_path.display().to_string(),
        files: corpus.len(),
        projects: corpus.n_projects(),
    });
    Ok(ExitCode::SUCCESS)
}
