//! `misclass`: simulate datasets, fit misclassification models, run studies.
//!
//! Exit codes: 0 success (fits may still be flagged non-converged), 2 usage
//! or configuration error, 3 I/O error.

mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Instant, SystemTime};

use clap::{Args, Parser, Subcommand};
use misclass_core::em::InitStrategy;
use misclass_core::mcmc::McmcConfig;
use misclass_core::sim::run_study_with_progress;
use misclass_core::{
    fit_em, fit_mcmc, fit_naive, fit_one_directional_em, generate_dataset, read_dataset,
    write_dataset, EmConfig, Error as CoreError, FixedDirection, Method, Prior, PriorSpec,
    ScenarioConfig,
};
use serde_json::json;

use crate::config::{parse_scenario, ConfigError};
use crate::output::{fit_table, manifest_path_for, write_atomic, write_json_atomic, RunManifest};

#[derive(Parser)]
#[command(name = "misclass", version, about = "Logistic regression with a misclassified binary outcome")]
struct Cli {
    /// Worker threads for replicates, chains and random starts.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one dataset from a simulation setting.
    Simulate(SimulateArgs),
    /// Fit one estimator to a CSV dataset.
    Fit(FitArgs),
    /// Run a Monte Carlo study and report bias, rMSE and probability recovery.
    Study(StudyArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Built-in setting: 1, 2 or 3.
    #[arg(long, value_parser = ["1", "2", "3"])]
    setting: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate index within the scenario's random streams.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    /// Add the latent `y_true` column.
    #[arg(long)]
    with_truth: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    method: Method,
    /// FitResult JSON destination; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prior for every coefficient, e.g. `uniform:-10:10`, `normal:0:10`.
    #[arg(long)]
    prior: Option<Prior>,
    /// Per-coefficient prior, e.g. `gamma_120=normal:0:5`. Repeatable.
    #[arg(long = "prior-override", value_parser = parse_override)]
    prior_overrides: Vec<(String, Prior)>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Write one CSV of retained draws per chain into this directory.
    #[arg(long)]
    draws_dir: Option<PathBuf>,
    /// EM iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Best of this many random EM starts instead of the naive start.
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated estimators: em, mcmc, naive, perfect-spec, perfect-sens.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for study.txt, study.csv, study.json and the manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_override(s: &str) -> Result<(String, Prior), String> {
    let (name, spec) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PRIOR, got `{s}`"))?;
    let prior = spec.parse::<Prior>().map_err(|e| e.to_string())?;
    Ok((name.trim().to_string(), prior))
}

enum CliError {
    Usage(String),
    Config(ConfigError),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Config(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Io(_) => CliError::Io(e.to_string()),
            CoreError::Csv(c) if c.is_io_error() => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn load_scenario(source: &ScenarioSource) -> Result<ScenarioConfig, CliError> {
    if let Some(path) = &source.config {
        let src = fs::read_to_string(path).map_err(io_err(path))?;
        parse_scenario(&path.display().to_string(), &src).map_err(CliError::Config)
    } else {
        let s = source.setting.as_deref().unwrap_or("1");
        ScenarioConfig::from_preset(s).ok_or_else(|| CliError::Usage(format!("unknown setting {s}")))
    }
}

fn finish_manifest(
    config: &serde_json::Value,
    seed: u64,
    started: (SystemTime, Instant),
    outputs: Vec<PathBuf>,
    path: &Path,
) -> Result<(), CliError> {
    RunManifest::new(config, seed, started.0, started.1.elapsed(), outputs)
        .write(path)
        .map_err(io_err(path))
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let started = (SystemTime::now(), Instant::now());
    let mut scenario = load_scenario(&args.source)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let generated = generate_dataset(&scenario, args.replicate)?;
    let truth = args.with_truth.then_some(generated.y_true.as_slice());
    let mut failure = None;
    write_atomic(&args.out, |w| {
        write_dataset(&generated.data, truth, w).map_err(|e| {
            failure = Some(e.to_string());
            std::io::Error::other("dataset write failed")
        })
    })
    .map_err(|e| CliError::Io(format!("{}: {}", args.out.display(), failure.unwrap_or(e.to_string()))))?;
    let config = json!({ "scenario": scenario, "replicate": args.replicate, "with_truth": args.with_truth });
    finish_manifest(&config, scenario.seed, started, vec![args.out.clone()], &manifest_path_for(&args.out))?;
    eprintln!(
        "wrote {} rows to {} (realized P(Y=1) {:.3}, sensitivity {:.3}, specificity {:.3})",
        generated.data.n(),
        args.out.display(),
        generated.realized.prevalence,
        generated.realized.sensitivity,
        generated.realized.specificity
    );
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), CliError> {
    let started = (SystemTime::now(), Instant::now());
    let file = fs::File::open(&args.data).map_err(io_err(&args.data))?;
    let loaded = read_dataset(file).map_err(|e| match CliError::from(e) {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", args.data.display())),
        other => other,
    })?;
    let data = loaded.data;

    let mut em = EmConfig { seed: args.seed, ..EmConfig::default() };
    if let Some(m) = args.max_iter {
        em.max_iter = m;
    }
    if let Some(s) = args.starts {
        em.init = InitStrategy::RandomStarts { starts: s };
    }
    let mut mcmc = McmcConfig { seed: args.seed, ..McmcConfig::default() };
    if let Some(v) = args.chains {
        mcmc.chains = v;
    }
    if let Some(v) = args.iterations {
        mcmc.iterations = v;
    }
    if let Some(v) = args.burn_in {
        mcmc.burn_in = v;
    }
    if let Some(v) = args.thin {
        mcmc.thin = v;
    }
    let mut prior = args.prior.map_or_else(PriorSpec::default, PriorSpec::all);
    prior.overrides.extend(args.prior_overrides.iter().cloned());
    let known = data.coefficient_names().all();
    if let Some((name, _)) = prior.overrides.iter().find(|(n, _)| !known.contains(n)) {
        return Err(CliError::Usage(format!(
            "--prior-override names unknown coefficient `{name}` (known: {})",
            known.join(", ")
        )));
    }

    let (result, sample) = match args.method {
        Method::Em => (fit_em(&data, &em)?, None),
        Method::Naive => (fit_naive(&data)?, None),
        Method::PerfectSpec => (fit_one_directional_em(&data, FixedDirection::PerfectSpecificity, &em)?, None),
        Method::PerfectSens => (fit_one_directional_em(&data, FixedDirection::PerfectSensitivity, &em)?, None),
        Method::Mcmc => {
            let (f, s) = fit_mcmc(&data, &prior, &mcmc)?;
            (f, Some(s))
        }
    };

    print!("{}", fit_table(&result));
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if !result.converged {
        eprintln!("warning: fit did not converge; estimates are reported with converged=false");
    }

    let mut outputs = Vec::new();
    if let (Some(dir), Some(sample)) = (&args.draws_dir, &sample) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for c in 0..sample.chains.len() {
            let path = dir.join(format!("chain{}.csv", c + 1));
            let mut failure = None;
            write_atomic(&path, |w| {
                sample.write_chain_csv(c, w).map_err(|e| {
                    failure = Some(e.to_string());
                    std::io::Error::other("draw write failed")
                })
            })
            .map_err(|e| CliError::Io(format!("{}: {}", path.display(), failure.unwrap_or(e.to_string()))))?;
            outputs.push(path);
        }
    }
    if let Some(out) = &args.out {
        write_json_atomic(out, &result.to_json()).map_err(io_err(out))?;
        outputs.push(out.clone());
    }
    if let Some(first) = outputs.last() {
        let config = json!({
            "data": args.data,
            "method": args.method,
            "em": em,
            "mcmc": mcmc,
            "prior": prior,
        });
        let manifest = match &args.out {
            Some(out) => manifest_path_for(out),
            None => manifest_path_for(first),
        };
        finish_manifest(&config, args.seed, started, outputs, &manifest)?;
    }
    Ok(())
}

fn study(args: StudyArgs) -> Result<(), CliError> {
    let started = (SystemTime::now(), Instant::now());
    let mut scenario = load_scenario(&args.source)?;
    if let Some(r) = args.replicates {
        scenario.n_realizations = r;
    }
    if let Some(m) = args.methods {
        scenario.estimators = m;
    }
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    scenario.validate()?;

    let done = AtomicUsize::new(0);
    let total = scenario.n_realizations;
    let report = run_study_with_progress(&scenario, &|_| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        if k % 10 == 0 || k == total {
            eprintln!("{k}/{total} replicates");
        }
    })?;

    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let table = report.to_table();
    let txt = args.out_dir.join("study.txt");
    let csv = args.out_dir.join("study.csv");
    let json_path = args.out_dir.join("study.json");
    write_atomic(&txt, |w| w.write_all(table.as_bytes())).map_err(io_err(&txt))?;
    let mut failure = None;
    write_atomic(&csv, |w| {
        report.write_csv(w).map_err(|e| {
            failure = Some(e.to_string());
            std::io::Error::other("csv write failed")
        })
    })
    .map_err(|e| CliError::Io(format!("{}: {}", csv.display(), failure.unwrap_or(e.to_string()))))?;
    write_json_atomic(&json_path, &report.to_json()).map_err(io_err(&json_path))?;
    print!("{table}");
    for t in &report.tallies {
        if t.failed > 0 {
            eprintln!("warning: {} failed on {} replicates (excluded from summaries)", t.method, t.failed);
        }
    }
    let config = serde_json::to_value(&scenario).expect("scenario serializes");
    finish_manifest(
        &config,
        scenario.seed,
        started,
        vec![txt, csv, json_path],
        &args.out_dir.join("manifest.json"),
    )
}


fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Study(a) => study(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
