//! `evocot`: command-line driver for the self-evolving curriculum pipeline.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evocot::config::{BackendConfig, RunConfig};
use evocot::data::write_jsonl;
use evocot::events::Observer;
use evocot::evolution::{load_dataset, load_reports, Run};
use evocot::toy::ToyLab;
use evocot::verifier::raw_equivalent;
use evocot::Error;

/// Exit code for transport failures (network, server errors, timeouts).
const EXIT_TRANSPORT: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "evocot",
    version,
    about = "Self-evolving chain-of-thought curriculum training",
    after_help = "Flags override the config file. Exit codes: 0 success, 1 contract or usage error, 2 transport error."
)]
struct Cli {
    /// JSON run config (field names as in RunConfig); defaults apply to missing fields
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run directory name under --out [default: run-<config hash prefix>]
    #[arg(long, global = true, value_name = "ID")]
    run_id: Option<String>,

    /// Number of self-evolution iterations
    #[arg(long, global = true, value_name = "N")]
    iterations: Option<u32>,

    /// Model backend: toy, scripted:<fixture.jsonl> or http:<endpoint>
    #[arg(long, global = true, value_name = "SPEC")]
    backend: Option<String>,

    /// Base seed for every random choice of the run
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Root directory for run directories
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    out: PathBuf,

    /// Append machine-readable JSONL events to this file
    #[arg(long, global = true, value_name = "PATH")]
    log: Option<PathBuf>,

    /// Suppress progress lines on stderr
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select the problems the current policy fails in every rollout
    SelectHard {
        #[arg(long, default_value_t = 1)]
        iteration: u32,
    },
    /// Generate, verify and select reasoning paths for the hard problems
    Stage1 {
        #[arg(long, default_value_t = 1)]
        iteration: u32,
    },
    /// Train on the step-truncation curriculum built from Stage 1 paths
    Stage2 {
        #[arg(long, default_value_t = 1)]
        iteration: u32,
    },
    /// Run the full loop: select, Stage 1, Stage 2, evaluate, repeat
    Evolve,
    /// Evaluate pass@1 of the policy after an iteration
    Eval {
        #[arg(long, default_value_t = 1)]
        iteration: u32,
    },
    /// GRPO on bare hard questions for a fixed number of batches, no curriculum
    Baseline {
        /// Training batches [default: max_train_steps]
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare two answers; prints "equivalent" (exit 0) or "different" (exit 1)
    Verify { a: String, b: String },
    /// Write metrics.csv and curves.csv for a run and print a summary table
    Report,
    /// Write the toy task set described by the config as problems JSONL
    GenToy {
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
}

fn parse_backend(spec: &str, current: &BackendConfig) -> Result<BackendConfig, Error> {
    if spec == "toy" {
        return Ok(BackendConfig::Toy);
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        return Ok(BackendConfig::Scripted {
            fixture_path: PathBuf::from(path),
        });
    }
    if let Some(url) = spec.strip_prefix("http:") {
        let mut backend = match current {
            BackendConfig::Http { .. } => current.clone(),
            _ => BackendConfig::http("", "default"),
        };
        if let BackendConfig::Http { endpoint, .. } = &mut backend {
            *endpoint = url.to_string();
        }
        return Ok(backend);
    }
    Err(Error::Config(format!(
        "unknown backend `{spec}`; expected toy, scripted:<path> or http:<url>"
    )))
}

impl Cli {
    /// Config file, else the manifest of an existing run, else defaults; then flag overrides.
    fn resolve_config(&self) -> Result<RunConfig, Error> {
        let mut config = match (&self.config, &self.run_id) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(id)) if self.out.join(id).join("manifest.json").exists() => {
                RunConfig::load(&self.out.join(id).join("manifest.json"))?
            }
            _ => RunConfig::default(),
        };
        if let Some(n) = self.iterations {
            config.iterations = n;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(spec) = &self.backend {
            config.backend = parse_backend(spec, &config.backend)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn run_id(&self, config: &RunConfig) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("run-{}", &config.hash()[..12]))
    }

    fn observer(&self) -> Result<Observer, Error> {
        let observer = if self.quiet { Observer::silent() } else { Observer::stderr() };
        match &self.log {
            Some(path) => observer.with_log(path),
            None => Ok(observer),
        }
    }

    fn open_run(&self) -> Result<Run, Error> {
        let config = self.resolve_config()?;
        let run_id = self.run_id(&config);
        Run::open(config, &self.out, &run_id, self.observer()?)
    }
}

fn execute(cli: &Cli) -> Result<ExitCode, Error> {
    match &cli.command {
        Command::Verify { a, b } => {
            return Ok(if raw_equivalent(a, b) {
                println!("equivalent");
                ExitCode::SUCCESS
            } else {
                println!("different");
                ExitCode::FAILURE
            });
        }
        Command::Report => {
            let run_id = cli
                .run_id
                .clone()
                .ok_or_else(|| Error::contract("report needs --run-id"))?;
            let dir = cli.out.join(&run_id);
            let reports = if dir.exists() { load_reports(&dir)? } else { Vec::new() };
            if reports.is_empty() {
                eprintln!("no reports found");
                return Ok(ExitCode::FAILURE);
            }
            report::write_csvs(&dir, &reports)?;
            print!("{}", report::table(&reports));
            return Ok(ExitCode::SUCCESS);
        }
        Command::GenToy { output } => {
            let config = cli.resolve_config()?;
            let lab = ToyLab::new(&config.toy)?;
            let problems = load_dataset(&RunConfig { dataset: None, ..config }, Some(&lab))?;
            write_jsonl(output, &problems)?;
            println!("wrote {} toy problems to {}", problems.len(), output.display());
            return Ok(ExitCode::SUCCESS);
        }
        _ => {}
    }

    let mut run = cli.open_run()?;
    match &cli.command {
        Command::SelectHard { iteration } => {
            let hard = run.select_step(*iteration)?;
            println!("{} hard problems -> {}", hard.len(), show(&run.iter_dir(*iteration).join("problems.jsonl")));
        }
        Command::Stage1 { iteration } => {
            let r = run.stage1_step(*iteration)?;
            println!(
                "{} trajectories, {} unsolved, {}/{} candidates verified -> {}",
                r.trajectories.len(),
                r.unsolved.len(),
                r.verified,
                r.generated,
                show(&run.iter_dir(*iteration).join("trajectories.jsonl"))
            );
        }
        Command::Stage2 { iteration } => {
            let o = run.stage2_step(*iteration)?;
            println!(
                "{} train steps over {} curriculum samples -> {}",
                o.train_steps,
                o.samples,
                show(&run.iter_dir(*iteration).join("curve.csv"))
            );
        }
        Command::Eval { iteration } => {
            let e = run.eval_step(*iteration)?;
            println!(
                "pass@1 {:.2} over {} problems ({} missing)",
                e.summary.pass_at_1, e.summary.scored, e.summary.missing
            );
        }
        Command::Baseline { steps } => {
            let steps = steps.unwrap_or(run.config.max_train_steps);
            let b = run.baseline(steps)?;
            println!(
                "baseline: {} hard problems, {} train steps, pass@1 {:.2}",
                b.hard_count, b.stage2.train_steps, b.evaluation.summary.pass_at_1
            );
        }
        Command::Evolve => {
            let outcome = run.evolve()?;
            print!("{}", report::table(&outcome.reports));
            if let Some(t) = outcome.saturated_at {
                println!("saturated at iteration {t}");
            }
            println!("run directory: {}", show(&run.dir));
        }
        Command::Verify { .. } | Command::Report | Command::GenToy { .. } => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first}\nrun `evocot --help` for usage");
            return ExitCode::FAILURE;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_transport() {
                ExitCode::from(EXIT_TRANSPORT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
