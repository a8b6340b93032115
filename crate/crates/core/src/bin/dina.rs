use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dina::evaluation::bootstrap_ci;
use dina::experiment::{fit_spec, run_experiment, scenarios, ExperimentId, MethodSpec, RunConfig};
use dina::io::{read_dataset, write_dataset};
use dina::learners::LearnerSpec;
use dina::{DinaError, Family, Result};

#[derive(Parser)]
#[command(name = "dina", version, about = "Heterogeneous treatment effects by differencing natural parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one dataset from an experiment design; writes data.csv and truth.csv.
    Simulate(SimulateArgs),
    /// Fit one method to a dataset CSV and print the coefficients.
    Fit(FitArgs),
    /// Run an experiment and write its CSV tables.
    Experiment(ExperimentArgs),
    /// Fit with bootstrap intervals (as `fit --bootstrap`, default 100 resamples).
    Bootstrap(FitArgs),
}

#[derive(Args)]
struct RunSource {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment id, when no config file is given.
    #[arg(long, short = 'e')]
    experiment: Option<ExperimentId>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

impl RunSource {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.experiment) {
            (Some(path), _) => RunConfig::parse(&fs::read_to_string(path)?)
                .map_err(|e| DinaError::Config(format!("{}: {e}", path.display())))?,
            (None, Some(id)) => RunConfig::new(id),
            (None, None) => return Err(DinaError::Config("give --config or --experiment".into())),
        };
        if let (Some(_), Some(id)) = (&self.config, self.experiment) {
            cfg.experiment = id;
        }
        for kv in &self.settings {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| DinaError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: RunSource,
    /// Scenario label; defaults to the experiment's first scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Sample size; defaults to the first configured size.
    #[arg(long, short = 'n')]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV with columns x1..xd, w, y and (Cox) delta.
    #[arg(long)]
    data: PathBuf,
    /// gaussian[:σ²], bernoulli, poisson, cox-partial or cox-full[:power:<scale>:<shape>].
    #[arg(long)]
    family: Family,
    /// dina, e, se, x or pax; append -partial to refit Cox data on the partial likelihood.
    #[arg(long, default_value = "dina")]
    method: MethodSpec,
    #[arg(long, default_value = "glm")]
    propensity_learner: LearnerSpec,
    #[arg(long, default_value = "glm")]
    outcome_learner: LearnerSpec,
    /// Number of treatment arms; inferred from `w` when absent.
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap resamples for normal-type 95% intervals.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    source: RunSource,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = args.source.load()?;
    if let Some(s) = args.scenario {
        cfg.scenarios = vec![s];
    }
    let n = args.n.unwrap_or(cfg.sizes[0]);
    let scenario = scenarios(&cfg)?.into_iter().next().ok_or_else(|| DinaError::Config("no scenario".into()))?;
    let (data, truth) = scenario.design.simulate(n, cfg.seed)?;
    fs::create_dir_all(&args.out)?;
    write_dataset(&data, BufWriter::new(File::create(args.out.join("data.csv"))?))?;
    truth.write_csv(BufWriter::new(File::create(args.out.join("truth.csv"))?))?;
    Ok(())
}

fn fit(args: FitArgs, default_bootstrap: Option<usize>) -> Result<()> {
    let data = read_dataset(File::open(&args.data)?, &args.family, args.arms)
        .map_err(|e| DinaError::Config(format!("{}: {e}", args.data.display())))?;
    let fit_once = |d: &dina::Dataset| {
        fit_spec(args.method, d, &args.propensity_learner, &args.outcome_learner, args.seed).map(|f| f.beta)
    };
    let run = || -> Result<()> {
        let stdout = io::stdout();
        let mut out = csv::Writer::from_writer(stdout.lock());
        match args.bootstrap.or(default_bootstrap) {
            None => {
                out.write_record(["coefficient", "estimate"])?;
                for (j, b) in fit_once(&data)?.iter().enumerate() {
                    out.write_record([j.to_string(), b.to_string()])?;
                }
            }
            Some(b) => {
                let r = bootstrap_ci(&data, fit_once, b, args.level, args.seed)?;
                out.write_record(["coefficient", "estimate", "se", "ci_lo", "ci_hi"])?;
                for j in 0..r.estimate.len() {
                    out.write_record([
                        j.to_string(),
                        r.estimate[j].to_string(),
                        r.se[j].to_string(),
                        r.ci_lo[j].to_string(),
                        r.ci_hi[j].to_string(),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    };
    with_threads(args.threads, run)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| DinaError::Config(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = args.source.load()?;
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if let Some(b) = args.bootstrap {
        cfg.bootstrap = b;
    }
    if cfg.out.is_none() {
        cfg.out = Some(Path::new("results").join(cfg.experiment.name()));
    }
    let written = run_experiment(&cfg)?;
    let mut err = io::stderr().lock();
    for p in written {
        writeln!(err, "wrote {}", p.display())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a, None),
        Command::Bootstrap(a) => fit(a, Some(100)),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
