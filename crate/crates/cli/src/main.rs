// SPDX-License-Identifier: Apache-2.0

mod config;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use coevolve::pareto::IntraLevelCriterion;
use coevolve::report::{
    export_front, render_text, report_csv, summarize_log, FrontFormat, ReportRow,
};
use coevolve::Error;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use walkdir::WalkDir;

use config::Config;
use runner::{run_dir, RunOptions, LOG_FILE};

#[derive(Parser)]
#[command(name = "coevolve", version, about = "Correctness and PPA co-evolution of hardware designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one task.
    Run {
        #[command(flatten)]
        common: RunFlags,
        #[arg(long)]
        task: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to <output_dir>/<task>/seed-<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after checkpointing generation t; continue with `resume`.
        #[arg(long)]
        halt_after: Option<u32>,
    },
    /// Execute every task of the configuration with seeded repetitions.
    Suite {
        #[command(flatten)]
        common: RunFlags,
        /// Repetitions per task.
        #[arg(long)]
        runs: Option<u32>,
        #[arg(long)]
        seed_base: Option<u64>,
        /// Maximum number of runs executing at once.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue a run from its checkpoint.
    Resume {
        #[arg(long)]
        config: PathBuf,
        /// Run directory holding the log and checkpoint.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        keep_artifacts: bool,
    },
    /// Print the Pareto front of a completed run log.
    Front {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Aggregate Pass@k and PPA over every run log below a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Also write the per-run CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    /// Generation backend: synthetic or http.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    generations: Option<u32>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    offspring: Option<usize>,
    /// Intra-level criterion, e.g. product, area or nds:area,delay.
    #[arg(long)]
    criterion: Option<String>,
    /// Keep simulator and synthesizer scratch directories.
    #[arg(long)]
    keep_artifacts: bool,
}

impl RunFlags {
    /// Command-line overrides as a run-settings layer.
    fn overrides(&self, seed: Option<u64>) -> Result<Value, Error> {
        let mut m = Map::new();
        if let Some(b) = &self.backend {
            m.insert("backend".into(), json!(b));
        }
        if let Some(g) = self.generations {
            m.insert("generations".into(), json!(g));
        }
        if let Some(n) = self.population {
            m.insert("population_size".into(), json!(n));
        }
        if let Some(l) = self.offspring {
            m.insert("offspring_count".into(), json!(l));
        }
        if let Some(c) = &self.criterion {
            let parsed: IntraLevelCriterion = c.parse()?;
            m.insert("criterion".into(), serde_json::to_value(parsed)?);
        }
        if let Some(s) = seed {
            m.insert("seed".into(), json!(s));
        }
        Ok(Value::Object(m))
    }

    fn load(&self) -> Result<Config, Error> {
        let mut config = Config::load(&self.config)?;
        if let Some(b) = &self.backend {
            config.backend = b.clone();
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::BackendUnavailable(_)) => 3,
        Some(Error::TaskAborted(_)) => 4,
        Some(
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::TruncatedLog { .. },
        ) => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { common, task, seed, out, halt_after } => {
            let config = common.load()?;
            let loaded = config.task(&task)?;
            // The run-settings default seed applies when no flag is given.
            let run = config.run_config(&loaded, &common.overrides(seed)?)?;
            let dir = out.unwrap_or_else(|| run_dir(&config.output_dir, &task, run.seed));
            let options = RunOptions { keep_artifacts: common.keep_artifacts, halt_after };
            let outcome = runner::execute(&config, &loaded, run, &options, &dir)
                .with_context(|| format!("task '{task}'"))?;
            print_outcome(&dir, &outcome);
        }
        Command::Suite { common, runs, seed_base, workers, out } => {
            let config = common.load()?;
            let output = out.unwrap_or_else(|| config.output_dir.clone());
            suite(&config, &common, &output, runs, seed_base, workers)?;
        }
        Command::Resume { config, dir, keep_artifacts } => {
            let config = Config::load(&config)?;
            let outcome = runner::resume(&config, &dir, &RunOptions { keep_artifacts, halt_after: None })?;
            print_outcome(&dir, &outcome);
        }
        Command::Front { log, format } => {
            let format: FrontFormat = format.parse()?;
            print!("{}", export_front(&log, format)?);
        }
        Command::Report { dir, csv } => {
            let rows = collect_rows(&dir)?;
            print!("{}", render_text(&rows));
            if let Some(path) = csv {
                std::fs::write(&path, report_csv(&rows)?)
                    .map_err(Error::from)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn print_outcome(dir: &Path, outcome: &coevolve::engine::RunOutcome) {
    if outcome.halted {
        println!("{}: halted after generation {}", dir.display(), outcome.generations_completed);
    } else {
        println!(
            "{}: {} generations, front {}, pass {}",
            dir.display(),
            outcome.generations_completed,
            outcome.front.len(),
            outcome.pass
        );
    }
}

fn suite(
    config: &Config,
    flags: &RunFlags,
    output: &Path,
    runs: Option<u32>,
    seed_base: Option<u64>,
    workers: usize,
) -> anyhow::Result<()> {
    let runs = runs.unwrap_or(config.suite.runs);
    let seed_base = seed_base.unwrap_or(config.suite.seed_base);
    let options = RunOptions { keep_artifacts: flags.keep_artifacts, halt_after: None };

    // Configuration problems surface before any run starts.
    let mut jobs = Vec::new();
    for manifest in &config.tasks {
        let task = config.load_task(manifest)?;
        for i in 0..runs {
            let seed = seed_base + u64::from(i);
            let run = config.run_config(&task, &flags.overrides(Some(seed))?)?;
            jobs.push((task.clone(), run));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building the worker pool")?;
    let results: Vec<Result<(), Error>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(task, run)| {
                let dir = run_dir(output, &task.id, run.seed);
                let seed = run.seed;
                let outcome = runner::execute(config, &task, run, &options, &dir);
                match &outcome {
                    Ok(o) => log::info!("{} seed {seed}: pass {}", task.id, o.pass),
                    Err(e) => log::error!("{} seed {seed}: {e}", task.id),
                }
                outcome.map(|_| ())
            })
            .collect()
    });

    let rows = collect_rows(output)?;
    std::fs::write(output.join("report.csv"), report_csv(&rows)?).map_err(Error::from)?;
    let text = render_text(&rows);
    std::fs::write(output.join("report.txt"), &text).map_err(Error::from)?;
    print!("{text}");

    let failed = results.iter().filter(|r| r.is_err()).count();
    match results.into_iter().find_map(Result::err) {
        Some(first) => Err(anyhow::Error::new(first).context(format!("{failed} run(s) failed"))),
        None => Ok(()),
    }
}

/// Summaries of every complete run log below `dir`, ordered by task then seed.
fn collect_rows(dir: &Path) -> anyhow::Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if entry.file_name() != LOG_FILE {
            continue;
        }
        match summarize_log(entry.path()) {
            Ok(summary) => rows.push(ReportRow::of(&summary)),
            Err(Error::TruncatedLog { last_generation }) => log::warn!(
                "skipping incomplete run {} (last generation {last_generation:?})",
                entry.path().display()
            ),
            Err(e) => return Err(anyhow::Error::new(e).context(entry.path().display().to_string())),
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("no completed run logs under {}", dir.display())).into());
    }
    rows.sort_by(|a, b| a.task.cmp(&b.task).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}
