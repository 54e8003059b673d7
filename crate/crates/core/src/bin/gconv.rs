use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gconv::report::{self, ExperimentSpec, Format, Kind, OneOrMany, CONFIG_EXIT_CODE};
use gconv::seqtest::HypothesisConfig;
use gconv::Error;

/// Convergence-rate experiments for Cesaro means under moderate growth functions.
///
/// Exit status: 0 when the report passes (or is purely descriptive), 1 when a
/// bound fails or verdicts disagree, 2 on configuration errors.
#[derive(Parser, Debug)]
#[command(name = "gconv", version)]
struct Cli {
    /// JSON experiment spec; command-line knobs override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format [default: json]; csv is available for sprt-sweep.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Root seed [default: 1].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Doubling-ratio audit of a growth function.
    ModerateAudit(Knobs),
    /// Monte Carlo E[G(L_a)] for the last exit of the running mean.
    LastExit(Knobs),
    /// Partial sums of sum_n G(n)/n P[|S_n/n| >= a].
    Series(Knobs),
    /// Two-sided audit of one effective bound.
    Bounds(Knobs),
    /// Law with a finite moment whose doubled-argument moment diverges.
    Counterexample(Knobs),
    /// One run of the multi-hypothesis sequential test.
    SprtRun(Knobs),
    /// E[G(tau)] against its first-order reference over decreasing error targets.
    SprtSweep(Knobs),
    /// Moment, series and last-exit verdicts on a grid of laws and functions.
    Theorem1Matrix(Knobs),
}

#[derive(Args, Debug, Default)]
struct Knobs {
    /// Distribution spec, e.g. rademacher, gaussian:sigma=1, pareto2:beta=4,scale=1; repeat for matrices.
    #[arg(long)]
    dist: Vec<String>,
    /// Growth function spec, e.g. power:r=1, powlog:r=1,s=1, exp:b=1, const; repeat for matrices.
    #[arg(long = "G", alias = "g")]
    g: Vec<String>,
    /// Path horizon [default: 16384].
    #[arg(long)]
    horizon: Option<u64>,
    /// Monte Carlo replicates [default: 100000].
    #[arg(long)]
    reps: Option<usize>,
    /// Series truncation [default: horizon].
    #[arg(long)]
    n_max: Option<u64>,
    /// Deviation level [default: 1].
    #[arg(long)]
    a: Option<f64>,
    /// Deviation levels for the matrix [default: 0.5,1].
    #[arg(long, value_delimiter = ',')]
    a_grid: Option<Vec<f64>>,
    /// Truncation mass for the moment bound [default: 0.5].
    #[arg(long)]
    alpha: Option<f64>,
    /// Order of the series bound [default: smallest admissible].
    #[arg(long)]
    p: Option<u32>,
    /// Which bound: 1, 2, 3 or sym.
    #[arg(long)]
    prop: Option<String>,
    /// Audit grid lower end [default: 1].
    #[arg(long)]
    t_min: Option<f64>,
    /// Audit grid upper end [default: 1e6].
    #[arg(long)]
    t_max: Option<f64>,
    /// Audit grid points [default: 200].
    #[arg(long)]
    points: Option<usize>,
    /// Counterexample atoms [default: 100000].
    #[arg(long)]
    atoms: Option<usize>,
    /// Counterexample search grid ratio [default: 1.000001].
    #[arg(long)]
    ratio: Option<f64>,
    /// Counterexample search limit [default: 300].
    #[arg(long)]
    search_limit: Option<f64>,
    /// JSON hypothesis set: {"alphabet": [...], "hypotheses": [[...], ...], "levels": [...]}.
    #[arg(long)]
    hypotheses: Option<PathBuf>,
    /// Hypothesis generating the simulated stream, 0-based [sweep default: 0].
    #[arg(long)]
    true_index: Option<usize>,
    /// Explicit observation stream for sprt-run.
    #[arg(long, value_delimiter = ',')]
    observations: Option<Vec<f64>>,
    /// Target errors for the sweep, strictly decreasing [default: 1e-1,1e-2,1e-3,1e-4].
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
    /// Largest acceptable censor rate [default: 0.001].
    #[arg(long)]
    censor_bound: Option<f64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn many(v: Vec<String>) -> Option<OneOrMany> {
    (!v.is_empty()).then_some(OneOrMany::Many(v))
}

fn knobs_spec(kind: Kind, k: Knobs) -> Result<ExperimentSpec, Error> {
    let hypotheses = k
        .hypotheses
        .as_ref()
        .map(read_json::<HypothesisConfig>)
        .transpose()?;
    Ok(ExperimentSpec {
        kind: Some(kind),
        dist: many(k.dist),
        g: many(k.g),
        horizon: k.horizon,
        reps: k.reps,
        n_max: k.n_max,
        a: k.a,
        a_grid: k.a_grid,
        alpha: k.alpha,
        p: k.p,
        prop: k.prop,
        t_min: k.t_min,
        t_max: k.t_max,
        points: k.points,
        atoms: k.atoms,
        ratio: k.ratio,
        search_limit: k.search_limit,
        hypotheses,
        true_index: k.true_index,
        observations: k.observations,
        targets: k.targets,
        censor_bound: k.censor_bound,
        ..Default::default()
    })
}

fn build_spec(cli: Cli) -> Result<ExperimentSpec, Error> {
    let mut spec = match &cli.config {
        Some(path) => read_json::<ExperimentSpec>(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(cmd) = cli.command {
        let (kind, knobs) = match cmd {
            Command::ModerateAudit(k) => (Kind::ModerateAudit, k),
            Command::LastExit(k) => (Kind::LastExit, k),
            Command::Series(k) => (Kind::Series, k),
            Command::Bounds(k) => (Kind::Bounds, k),
            Command::Counterexample(k) => (Kind::Counterexample, k),
            Command::SprtRun(k) => (Kind::SprtRun, k),
            Command::SprtSweep(k) => (Kind::SprtSweep, k),
            Command::Theorem1Matrix(k) => (Kind::Theorem1Matrix, k),
        };
        spec = spec.overlay(knobs_spec(kind, knobs)?);
    }
    spec = spec.overlay(ExperimentSpec {
        seed: cli.seed,
        format: cli.format.map(|f| match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }),
        ..Default::default()
    });
    Ok(spec)
}

fn run(cli: Cli) -> Result<i32, Error> {
    let out = cli.out.clone();
    let threads = cli.threads;
    let spec = build_spec(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| report::run_experiment(&spec))?;
    match out {
        Some(path) => std::fs::write(&path, &outcome.document)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{}", outcome.document),
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CONFIG_EXIT_CODE as u8)
        }
    }
}
