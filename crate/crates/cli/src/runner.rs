// SPDX-License-Identifier: Apache-2.0

//! Wiring of backends, evaluators and run directories.

use std::path::{Path, PathBuf};
use std::time::Duration;

use coevolve::backends::process::Scratch;
use coevolve::backends::{
    CommandTemplate, GenerationBackend, HttpGenerationBackend, LibraryConfig, ProcessSimulator,
    ProcessSynthesizer, ReqwestTransport, SyntheticDesignSpace,
};
use coevolve::engine::{Backends, Checkpoint, Engine, RunConfig, RunOutcome};
use coevolve::evaluation::{
    build_enhanced_testbench, DesignEvaluator, PpaFormat, TestbenchArtifact, TestbenchOrigin,
    TestbenchRequest, ToolchainEvaluator,
};
use coevolve::runlog::{read_json, write_json_atomic, RunLog};
use coevolve::templates::TemplateSet;
use coevolve::Error;

use crate::config::{Config, LoadedTask, ToolchainConfig};

pub const LOG_FILE: &str = "run.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
/// Testbenches used by a toolchain run, kept so a resume scores identically.
pub const TESTBENCH_FILE: &str = "testbenches.json";

pub fn run_dir(output: &Path, task: &str, seed: u64) -> PathBuf {
    output.join(task).join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct TestbenchSet {
    scoring: TestbenchArtifact,
    verdict: Option<TestbenchArtifact>,
}

/// Everything a run borrows from.
struct Wiring {
    generator: Box<dyn GenerationBackend>,
    evaluator: Box<dyn DesignEvaluator>,
    verdict: Option<Box<dyn DesignEvaluator>>,
}

impl Wiring {
    fn backends(&self) -> Backends<'_> {
        Backends {
            generator: self.generator.as_ref(),
            evaluator: self.evaluator.as_ref(),
            verdict: self.verdict.as_deref(),
        }
    }
}

pub struct RunOptions {
    pub keep_artifacts: bool,
    pub halt_after: Option<u32>,
}

fn templates(config: &Config) -> Result<TemplateSet, Error> {
    match &config.templates_dir {
        Some(dir) => TemplateSet::load(&config.resolve(dir)),
        None => Ok(TemplateSet::default()),
    }
}

fn generator(config: &Config, run: &RunConfig) -> Result<Box<dyn GenerationBackend>, Error> {
    match run.backend.as_str() {
        "synthetic" => Ok(Box::new(SyntheticDesignSpace::from_seed(run.seed))),
        "http" => {
            let endpoint = config
                .http
                .clone()
                .ok_or_else(|| Error::Config("backend 'http' needs an 'http' section".into()))?;
            Ok(Box::new(HttpGenerationBackend::new(endpoint, Box::new(ReqwestTransport::new()?))))
        }
        other => Err(Error::Config(format!("unknown backend '{other}' (expected synthetic or http)"))),
    }
}

fn toolchain_evaluator(
    tc: &ToolchainConfig,
    testbench: TestbenchArtifact,
    scratch: &Scratch,
) -> Result<ToolchainEvaluator, Error> {
    Ok(ToolchainEvaluator {
        simulator: Box::new(ProcessSimulator {
            template: CommandTemplate::new(tc.simulate.clone()),
            scratch: scratch.clone(),
        }),
        synthesizer: Box::new(ProcessSynthesizer {
            template: CommandTemplate::new(tc.synthesize.clone()),
            scratch: scratch.clone(),
        }),
        testbench,
        format: tc.ppa_format.parse::<PpaFormat>()?,
        library: LibraryConfig {
            liberty: tc.liberty.clone(),
            extra: tc.extra.clone(),
        },
        simulation_timeout: Duration::from_secs(tc.simulation_timeout_secs),
        synthesis_timeout: Duration::from_secs(tc.synthesis_timeout_secs),
    })
}

/// Builds or reloads the scoring and verdict testbenches for a toolchain run.
fn testbenches(
    config: &Config,
    tc: &ToolchainConfig,
    task: &LoadedTask,
    run: &RunConfig,
    generator: &dyn GenerationBackend,
    scratch: &Scratch,
    dir: &Path,
) -> Result<TestbenchSet, Error> {
    let saved = dir.join(TESTBENCH_FILE);
    if saved.exists() {
        return read_json(&saved);
    }
    let provided = match &task.testbench {
        Some(src) => Some(TestbenchArtifact::new(src.clone(), config.test_cases, TestbenchOrigin::Provided)?),
        None => None,
    };
    let set = match &task.golden_reference {
        Some(golden) => {
            let simulator = ProcessSimulator {
                template: CommandTemplate::new(tc.simulate.clone()),
                scratch: scratch.clone(),
            };
            let scoring = build_enhanced_testbench(
                &templates(config)?,
                generator,
                &simulator,
                &TestbenchRequest {
                    spec: &task.spec,
                    golden_reference: golden,
                    provided: task.testbench.as_deref(),
                    case_target: config.test_cases,
                    attempts: tc.testbench_attempts,
                    timeout: Duration::from_secs(tc.simulation_timeout_secs),
                    seed: run.seed,
                },
            )?;
            let verdict = match scoring.origin {
                TestbenchOrigin::Provided => None,
                _ => provided,
            };
            TestbenchSet { scoring, verdict }
        }
        None => TestbenchSet {
            scoring: provided.ok_or_else(|| {
                Error::Config(format!("task '{}' has neither a golden reference nor a testbench", task.id))
            })?,
            verdict: None,
        },
    };
    write_json_atomic(&saved, &set)?;
    Ok(set)
}

fn wire(
    config: &Config,
    task: &LoadedTask,
    run: &RunConfig,
    options: &RunOptions,
    dir: &Path,
) -> Result<Wiring, Error> {
    let generator = generator(config, run)?;
    if run.backend == "synthetic" && config.toolchain.is_none() {
        return Ok(Wiring {
            generator,
            evaluator: Box::new(SyntheticDesignSpace::from_seed(run.seed)),
            verdict: None,
        });
    }
    let tc = config
        .toolchain
        .as_ref()
        .ok_or_else(|| Error::Config("backend 'http' needs a 'toolchain' section".into()))?;
    let scratch = Scratch {
        root: tc.scratch_dir.as_deref().map(|d| config.resolve(d)),
        keep_artifacts: options.keep_artifacts,
    };
    let set = testbenches(config, tc, task, run, generator.as_ref(), &scratch, dir)?;
    let verdict = match set.verdict {
        Some(tb) => Some(Box::new(toolchain_evaluator(tc, tb, &scratch)?) as Box<dyn DesignEvaluator>),
        None => None,
    };
    Ok(Wiring {
        generator,
        evaluator: Box::new(toolchain_evaluator(tc, set.scoring, &scratch)?),
        verdict,
    })
}

/// Executes one task from scratch into `dir`.
pub fn execute(
    config: &Config,
    task: &LoadedTask,
    run: RunConfig,
    options: &RunOptions,
    dir: &Path,
) -> Result<RunOutcome, Error> {
    std::fs::create_dir_all(dir)?;
    match std::fs::remove_file(dir.join(TESTBENCH_FILE)) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
        _ => {}
    }
    let wiring = wire(config, task, &run, options, dir)?;
    let mut engine = Engine::new(run, task.spec.clone(), templates(config)?, wiring.backends())?
        .with_checkpoint(dir.join(CHECKPOINT_FILE));
    if let Some(t) = options.halt_after {
        engine = engine.halt_after(t);
    }
    let mut log = RunLog::create(&dir.join(LOG_FILE))?;
    engine.run(&mut log)
}

/// Continues the run stored in `dir` from its checkpoint.
pub fn resume(config: &Config, dir: &Path, options: &RunOptions) -> Result<RunOutcome, Error> {
    let checkpoint: Checkpoint = read_json(&dir.join(CHECKPOINT_FILE))?;
    let task = config.task(&checkpoint.config.task)?;
    let wiring = wire(config, &task, &checkpoint.config, options, dir)?;
    let engine = Engine::new(
        checkpoint.config,
        task.spec.clone(),
        templates(config)?,
        wiring.backends(),
    )?
    .with_checkpoint(dir.join(CHECKPOINT_FILE));
    let mut log = RunLog::resume(&dir.join(LOG_FILE), checkpoint.state.event_log_position)?;
    engine.resume(checkpoint.state, &mut log)
}
