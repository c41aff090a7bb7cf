use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use fads::factor::{fit_factors, fit_factors_auto, DEFAULT_K_BAR};
use fads::io::{ingest_with, standardize_columns, IngestOptions, Ingested};
use fads::sim::{run_power_study, Alternative, Case, SimConfig, SimReport};
use fads::test_procedure::{run_fads_test, FactorCount, FadsConfig, Lambda1Choice, Lambda2Choice, TestResult};
use fads::FadsError;

const SCHEMA_VERSION: u32 = 1;
const CV_FOLDS: usize = 5;
const CV_PATH_LENGTH: usize = 30;

#[derive(Parser)]
#[command(name = "fads", version, about = "Factor-adjusted decorrelated score tests for grouped Cox models")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "FADS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test each requested group for association with survival.
    Test(TestArgs),
    /// Estimate the latent factors of each group.
    Factors(FactorArgs),
    /// Empirical rejection rate at one or more signal levels.
    Simulate(SimArgs),
    /// Empirical power over the full signal grid of the chosen alternative.
    PowerCurve(SimArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Ci,
    Paper,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    survival: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    /// Group to analyse; repeat for several. Defaults to every group.
    #[arg(long = "group")]
    group: Vec<String>,
    /// Separate tied event times instead of failing.
    #[arg(long)]
    break_ties: bool,
    /// Scale covariates to unit standard deviation first.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args)]
struct TuningArgs {
    /// Number of factors, or `ratio` for the eigenvalue-ratio estimate.
    #[arg(long, default_value = "ratio")]
    k: String,
    #[arg(long, default_value_t = DEFAULT_K_BAR)]
    k_bar: usize,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// LASSO penalty: a number, `cv` or `rate`.
    #[arg(long, default_value = "rate")]
    lambda1: String,
    /// Dantzig bound: a number or `rate`.
    #[arg(long, default_value = "rate")]
    lambda2: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct FactorArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum, default_value = "ci")]
    preset: Preset,
    /// Design: 1 (factor model), 2 (AR covariates) or 3 (cross-group dependence).
    #[arg(long, default_value = "1")]
    case: String,
    #[arg(long, default_value = "sparse")]
    alternative: String,
    /// Signal levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    b0: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// LASSO penalty: a number, `cv` or `rate`.
    #[arg(long, default_value = "rate")]
    lambda1: String,
    /// Dantzig bound: a number or `rate`.
    #[arg(long, default_value = "rate")]
    lambda2: String,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output stem: writes `<out>.json` and `<out>.tsv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format printed to stdout when `--out` is absent.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

/// Input problems exit with 1, statistical degeneracy with 2.
struct Failure {
    code: u8,
    message: String,
}

impl From<FadsError> for Failure {
    fn from(e: FadsError) -> Self {
        let code = if matches!(e.root(), FadsError::Degenerate { .. }) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = run(cli);
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let threads = match cli.threads {
        Some(0) => return Err(input_error("--threads must be at least 1")),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| input_error(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Factors(args) => cmd_factors(args),
        Command::Simulate(args) => cmd_simulate(args, threads, false),
        Command::PowerCurve(args) => cmd_simulate(args, threads, true),
    }
}

fn load(args: &DataArgs) -> Result<(Ingested, Vec<String>), Failure> {
    for (flag, path) in [
        ("--covariates", &args.covariates),
        ("--survival", &args.survival),
        ("--groups", &args.groups),
    ] {
        if !path.is_file() {
            return Err(input_error(format!("{flag}: no such file {}", path.display())));
        }
    }
    let mut ingested = ingest_with(
        &args.covariates,
        &args.survival,
        &args.groups,
        IngestOptions {
            break_ties: args.break_ties,
        },
    )?;
    if args.standardize {
        ingested.data = standardize_columns(&ingested.data)?;
    }
    let groups = if args.group.is_empty() {
        ingested.data.groups().iter().map(|g| g.id.clone()).collect()
    } else {
        for g in &args.group {
            if ingested.data.group(g).is_none() {
                return Err(input_error(format!("unknown group `{g}`")));
            }
        }
        args.group.clone()
    };
    Ok((ingested, groups))
}

fn parse_k(tuning: &TuningArgs) -> Result<FactorCount, Failure> {
    match tuning.k.as_str() {
        "ratio" => Ok(FactorCount::Ratio { k_bar: tuning.k_bar }),
        s => s
            .parse()
            .map(|k| FactorCount::Fixed { k })
            .map_err(|_| input_error(format!("--k expects an integer or `ratio`, got `{s}`"))),
    }
}

fn parse_positive(flag: &str, s: &str) -> Result<f64, Failure> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(input_error(format!("{flag} expects a positive number or a keyword, got `{s}`"))),
    }
}

fn test_config(
    lambda1: &str,
    lambda2: &str,
    tuning: &TuningArgs,
    alpha: f64,
    seed: u64,
) -> Result<FadsConfig, Failure> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(input_error(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let defaults = FadsConfig::default();
    let lambda1 = match lambda1 {
        "rate" => defaults.lambda1,
        "cv" => Lambda1Choice::CrossValidate {
            folds: CV_FOLDS,
            path_length: CV_PATH_LENGTH,
            seed,
        },
        s => Lambda1Choice::Value {
            value: parse_positive("--lambda1", s)?,
        },
    };
    let lambda2 = match lambda2 {
        "rate" => defaults.lambda2,
        s => Lambda2Choice::Value {
            value: parse_positive("--lambda2", s)?,
        },
    };
    Ok(FadsConfig {
        lambda1,
        lambda2,
        factors: parse_k(tuning)?,
        alphas: vec![alpha],
        ..defaults
    })
}

#[derive(Serialize)]
struct TestDiagnostics {
    kkt_residual: Option<f64>,
    dantzig_feasibility: Vec<f64>,
    sigma_min_eig: f64,
    nonzero_beta: usize,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct TestRecord {
    group: String,
    k_hat: usize,
    statistic: f64,
    df: usize,
    p_value: Option<f64>,
    reject: Option<bool>,
    degenerate: bool,
    lambda1: Option<f64>,
    lambda2: f64,
    diagnostics: TestDiagnostics,
}

impl TestRecord {
    fn new(r: TestResult, alpha: f64) -> Self {
        let reject = r.rejects(alpha);
        TestRecord {
            group: r.group,
            k_hat: r.df,
            statistic: r.statistic,
            df: r.df,
            p_value: r.p_value,
            reject,
            degenerate: r.degenerate,
            lambda1: r.diagnostics.lambda1,
            lambda2: r.diagnostics.lambda2,
            diagnostics: TestDiagnostics {
                kkt_residual: r.diagnostics.kkt_residual,
                dantzig_feasibility: r.diagnostics.dantzig_feasibility,
                sigma_min_eig: r.diagnostics.sigma_min_eig,
                nonzero_beta: r.diagnostics.nonzero_beta,
                warnings: r.diagnostics.warnings,
            },
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| input_error(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn cmd_test(args: TestArgs) -> Result<u8, Failure> {
    let config = test_config(&args.lambda1, &args.lambda2, &args.tuning, args.alpha, args.seed)?;
    let (ingested, groups) = load(&args.data)?;
    let mut records = Vec::with_capacity(groups.len());
    for g in &groups {
        let result = run_fads_test(&ingested.data, g, &config)?;
        records.push(TestRecord::new(result, args.alpha));
    }
    let body = match args.format {
        Format::Json => {
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "ingest": ingested.report,
                "alpha": args.alpha,
                "results": records,
            });
            serde_json::to_string_pretty(&doc).map_err(FadsError::from)? + "\n"
        }
        Format::Tsv => {
            let mut s = String::from("group\tk_hat\tstatistic\tdf\tp_value\tlambda1\tlambda2\tsigma_min_eig\n");
            for r in &records {
                s.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    r.group,
                    r.k_hat,
                    r.statistic,
                    r.df,
                    fmt_opt(r.p_value),
                    fmt_opt(r.lambda1),
                    r.lambda2,
                    r.diagnostics.sigma_min_eig
                ));
            }
            s
        }
    };
    emit(args.out.as_deref(), &body)?;
    Ok(if records.iter().any(|r| r.degenerate) { 2 } else { 0 })
}

fn cmd_factors(args: FactorArgs) -> Result<u8, Failure> {
    let (ingested, groups) = load(&args.data)?;
    let count = parse_k(&args.tuning)?;
    let mut out = Vec::new();
    for g in &groups {
        let x = ingested.data.group_matrix(g)?;
        let limit = x.nrows().min(x.ncols()).saturating_sub(1);
        let fit = match count {
            FactorCount::Fixed { k } => fit_factors(&x, k),
            FactorCount::Ratio { k_bar } => fit_factors_auto(&x, k_bar.min(limit)),
        }
        .map_err(|e| input_error(format!("group `{g}`: {e}")))?;
        out.push(json!({
            "group": g,
            "k_hat": fit.k,
            "eigenvalues": fit.eigenvalues,
            "variance_explained": fit.variance_explained(&x),
            "warnings": fit.warnings,
        }));
    }
    let doc = json!({ "schema_version": SCHEMA_VERSION, "groups": out });
    emit(
        args.out.as_deref(),
        &(serde_json::to_string_pretty(&doc).map_err(FadsError::from)? + "\n"),
    )?;
    Ok(0)
}

fn sim_config(args: &SimArgs, threads: usize, full_grid: bool) -> Result<SimConfig, Failure> {
    let mut cfg = match args.preset {
        Preset::Ci => SimConfig::ci(),
        Preset::Paper => SimConfig::paper(),
    };
    cfg.case = args.case.parse::<Case>()?;
    cfg.alternative = args.alternative.parse::<Alternative>()?;
    cfg.threads = threads;
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.p = args.p.unwrap_or(cfg.p);
    cfg.replicates = args.replicates.unwrap_or(cfg.replicates);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.test = test_config(&args.lambda1, &args.lambda2, &args.tuning, cfg.alpha, cfg.seed)?;
    cfg.b0_grid = match (&args.b0, full_grid) {
        (Some(grid), _) => grid.clone(),
        (None, true) => match cfg.alternative {
            Alternative::Sparse => (0..=10).map(|i| 0.05 * i as f64).collect(),
            Alternative::Dense => (0..=10).map(|i| 0.02 * i as f64).collect(),
        },
        (None, false) => vec![0.0],
    };
    if cfg.b0_grid.is_empty() {
        return Err(input_error("--b0 grid is empty"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(args: SimArgs, threads: usize, full_grid: bool) -> Result<u8, Failure> {
    let cfg = sim_config(&args, threads, full_grid)?;
    let report: SimReport = run_power_study(&cfg)?;
    let json = report.to_json()? + "\n";
    let tsv = report.to_tsv();
    match &args.out {
        Some(stem) => {
            emit(Some(&stem.with_extension("json")), &json)?;
            emit(Some(&stem.with_extension("tsv")), &tsv)?;
            print!("{}", report.summary_table());
        }
        None => {
            eprint!("{}", report.summary_table());
            match args.format {
                Format::Json => print!("{json}"),
                Format::Tsv => print!("{tsv}"),
            }
        }
    }
    if !report.valid {
        eprintln!("warning: more than 5% of replicates failed; see failure_messages");
    }
    Ok(0)
}
