// SPDX-License-Identifier: Apache-2.0

//! The generational loop: initialize, then per generation produce offspring,
//! repair failed syntheses, reward operators, gate and select survivors.
//!
//! Slots of one generation run in parallel. Each slot draws from its own
//! random stream derived from `(seed, t, j)` and results are merged in slot
//! order, so the run log does not depend on scheduling.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::GenerationBackend;
use crate::bandit::{componentwise_best, compute_reward, BanditState};
use crate::error::{Error, Result};
use crate::evaluation::{DesignEvaluator, Evaluation};
use crate::gate::{apply_gate, GateSchedule};
use crate::objective::{DesignCandidate, Lineage, PpaResult};
use crate::operators::{
    build_prompt, build_repair_prompt, multi_arch_init, parse_generation, select_parents,
    ArchitectureStrategy, InitConfig, OperatorId, PromptInputs, Sampling,
};
use crate::pareto::{pareto_front, select_survivors, sort_candidates, IntraLevelCriterion};
use crate::runlog::{write_json_atomic, LogEvent, RunLog};
use crate::seeds::stream_seed;
use crate::templates::TemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub explore_coef: f64,
    pub softmax_temperature: f64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            explore_coef: 2.0,
            softmax_temperature: 1.0,
        }
    }
}

/// Gate parameters; the horizon is the run's generation count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub alpha: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        let s = GateSchedule::default();
        Self {
            theta_min: s.theta_min,
            theta_max: s.theta_max,
            alpha: s.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: String,
    pub population_size: usize,
    pub offspring_count: usize,
    pub generations: u32,
    pub repair_budget: u32,
    pub gate: GateConfig,
    pub bandit: BanditConfig,
    pub criterion: IntraLevelCriterion,
    pub seed: u64,
    pub sampling: Sampling,
    pub strategies: Vec<ArchitectureStrategy>,
    /// Adapter id of the generation backend, recorded for reports.
    pub backend: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: "task".into(),
            population_size: 10,
            offspring_count: 10,
            generations: 10,
            repair_budget: 3,
            gate: GateConfig::default(),
            bandit: BanditConfig::default(),
            criterion: IntraLevelCriterion::default(),
            seed: 0,
            sampling: Sampling::default(),
            strategies: ArchitectureStrategy::defaults(),
            backend: "synthetic".into(),
        }
    }
}

impl RunConfig {
    pub fn gate_schedule(&self) -> GateSchedule {
        GateSchedule {
            theta_min: self.gate.theta_min,
            theta_max: self.gate.theta_max,
            alpha: self.gate.alpha,
            total_generations: self.generations,
        }
    }

    /// `λ = 0` is accepted and yields a loop that only re-selects the
    /// initial population.
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::Config("population_size must be at least 1".into()));
        }
        if self.generations == 0 {
            return Err(Error::Config("generations must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one architecture strategy is required".into()));
        }
        if !(self.bandit.softmax_temperature > 0.0 && self.bandit.explore_coef >= 0.0) {
            return Err(Error::Config(
                "bandit needs softmax_temperature > 0 and explore_coef >= 0".into(),
            ));
        }
        self.gate_schedule().validate()?;
        self.criterion.validate()
    }
}

/// Coordinator random stream, stored as its seed and word position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// `u128` as decimal text; JSON numbers cannot hold it.
    pub word_pos: String,
}

impl RngState {
    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng word position '{}'", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub generation: u32,
    pub population: Vec<DesignCandidate>,
    pub bandit: BanditState,
    pub rng_state: RngState,
    pub archive: Vec<DesignCandidate>,
    pub event_log_position: u64,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: RunState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Non-dominated subset of the final population.
    pub front: Vec<DesignCandidate>,
    pub population: Vec<DesignCandidate>,
    pub archive: Vec<DesignCandidate>,
    pub generations_completed: u32,
    /// A final candidate reaches full correctness on the verdict testbench.
    pub pass: bool,
    /// Stopped early on request; resumable from the checkpoint.
    pub halted: bool,
}

pub struct Backends<'a> {
    pub generator: &'a dyn GenerationBackend,
    pub evaluator: &'a dyn DesignEvaluator,
    /// Re-scores the final population for the pass verdict, typically with
    /// the task's original testbench. Falls back to the stored scores.
    pub verdict: Option<&'a dyn DesignEvaluator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivorOutcome {
    pub survivors: Vec<DesignCandidate>,
    pub fallback: bool,
    pub admitted: usize,
    pub rejected: usize,
}

/// Gates `pool` at `theta` and keeps up to `capacity` survivors.
pub fn survivor_selection(
    pool: Vec<DesignCandidate>,
    theta: f64,
    capacity: usize,
    criterion: &IntraLevelCriterion,
) -> Result<SurvivorOutcome> {
    let gate = apply_gate(pool, theta, capacity);
    Ok(SurvivorOutcome {
        survivors: select_survivors(&gate.gated, capacity, criterion)?,
        fallback: gate.fallback,
        admitted: gate.gated.len(),
        rejected: gate.rejected.len(),
    })
}

struct RepairAttempt {
    candidate: DesignCandidate,
    accepted: bool,
}

struct SlotResult {
    operator: OperatorId,
    parent_ids: Vec<String>,
    /// Candidate as first evaluated (or its placeholder).
    candidate: DesignCandidate,
    repairs: Vec<RepairAttempt>,
    basis: Option<(f64, PpaResult)>,
    failure: Option<Error>,
}

pub struct Engine<'a> {
    config: RunConfig,
    spec: String,
    templates: TemplateSet,
    backends: Backends<'a>,
    checkpoint: Option<PathBuf>,
    halt_after: Option<u32>,
}

impl<'a> Engine<'a> {
    pub fn new(
        config: RunConfig,
        spec: impl Into<String>,
        templates: TemplateSet,
        backends: Backends<'a>,
    ) -> Result<Self> {
        config.validate()?;
        if backends.evaluator.case_count() == 0 {
            return Err(Error::Config("the testbench has no cases".into()));
        }
        let spec = spec.into();
        if spec.trim().is_empty() {
            return Err(Error::Config("task specification is empty".into()));
        }
        Ok(Self {
            config,
            spec,
            templates,
            backends,
            checkpoint: None,
            halt_after: None,
        })
    }

    /// Writes a checkpoint to `path` after every generation.
    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    /// Stops once generation `t` is checkpointed.
    pub fn halt_after(mut self, t: u32) -> Self {
        self.halt_after = Some(t);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run(&self, log: &mut RunLog) -> Result<RunOutcome> {
        log.append(&LogEvent::new(
            "run_started",
            0,
            None,
            json!({ "config": self.config }),
        ))?;
        let initial = multi_arch_init(
            &self.templates,
            self.backends.generator,
            &InitConfig {
                spec: &self.spec,
                population_size: self.config.population_size,
                strategies: &self.config.strategies,
                sampling: self.config.sampling,
                seed: self.config.seed,
            },
        )?;
        let population: Vec<DesignCandidate> = initial
            .into_par_iter()
            .map(|c| self.evaluate(c))
            .collect();
        for c in &population {
            log_candidate(log, 0, c)?;
        }
        log.append(&LogEvent::new("survivors", 0, None, json!({ "ids": ids(&population) })))?;

        let coord_seed = stream_seed(self.config.seed, &[u64::MAX - 1]);
        let rng = ChaCha8Rng::seed_from_u64(coord_seed);
        let mut state = RunState {
            generation: 0,
            archive: population.clone(),
            population,
            bandit: BanditState::new(
                OperatorId::ALL.len(),
                self.config.bandit.explore_coef,
                self.config.bandit.softmax_temperature,
            ),
            rng_state: RngState::capture(coord_seed, &rng),
            event_log_position: log.position(),
        };
        self.save(&state)?;
        if self.halt_after == Some(0) {
            return self.halted(state);
        }
        self.advance(&mut state, log)
    }

    /// Continues from `state`. `log` must already be positioned at
    /// `state.event_log_position`.
    pub fn resume(&self, mut state: RunState, log: &mut RunLog) -> Result<RunOutcome> {
        if log.position() != state.event_log_position {
            return Err(Error::Config(format!(
                "log is at byte {} but the checkpoint expects {}",
                log.position(),
                state.event_log_position
            )));
        }
        if state.generation >= self.config.generations {
            return self.finish(state, log);
        }
        self.advance(&mut state, log)
    }

    fn advance(&self, state: &mut RunState, log: &mut RunLog) -> Result<RunOutcome> {
        let schedule = self.config.gate_schedule();
        let mut rng = state.rng_state.restore()?;
        for t in state.generation + 1..=self.config.generations {
            let theta = schedule.threshold(t)?;
            log.append(&LogEvent::new("generation_started", t, None, json!({ "theta": theta })))?;

            let operators: Vec<OperatorId> = (0..self.config.offspring_count)
                .map(|_| OperatorId::ALL[state.bandit.select(&mut rng)])
                .collect();
            let results = self.produce_offspring(t, &operators, &state.population)?;

            let mut offspring = Vec::with_capacity(results.len());
            for (j, slot) in results.into_iter().enumerate() {
                self.merge_slot(t, j, slot, state, log, &mut offspring)?;
            }

            let mut pool = state.population.clone();
            pool.extend(offspring);
            let pool_size = pool.len();
            let selected =
                survivor_selection(pool, theta, self.config.population_size, &self.config.criterion)?;
            if selected.fallback {
                log::warn!("generation {t}: no candidate reached theta = {theta}; gate fallback");
                log.append(&LogEvent::new(
                    "gate_fallback",
                    t,
                    None,
                    json!({ "theta": theta, "pool": pool_size, "admitted": selected.admitted }),
                ))?;
            }
            log.append(&LogEvent::new(
                "gate",
                t,
                None,
                json!({ "theta": theta, "admitted": selected.admitted, "rejected": selected.rejected }),
            ))?;
            state.population = selected.survivors;
            log.append(&LogEvent::new(
                "survivors",
                t,
                None,
                json!({ "ids": ids(&state.population) }),
            ))?;

            state.generation = t;
            state.rng_state = RngState::capture(state.rng_state.seed, &rng);
            state.event_log_position = log.position();
            self.save(state)?;
            if self.halt_after == Some(t) && t < self.config.generations {
                return self.halted(state.clone());
            }
        }
        self.finish(state.clone(), log)
    }

    /// Runs the slots of generation `t` for the given operators. Fails only
    /// when every slot lost its generation backend.
    fn produce_offspring(
        &self,
        t: u32,
        operators: &[OperatorId],
        population: &[DesignCandidate],
    ) -> Result<Vec<SlotResult>> {
        let levels = sort_candidates(population)?;
        let results: Vec<SlotResult> = operators
            .par_iter()
            .enumerate()
            .map(|(j, &op)| self.run_slot(t, j, op, population, &levels))
            .collect();
        let outage = |r: &SlotResult| matches!(r.failure, Some(Error::BackendUnavailable(_)));
        if !results.is_empty() && results.iter().all(outage) {
            let reason = results
                .iter()
                .find_map(|r| r.failure.as_ref().map(|e| e.to_string()))
                .unwrap_or_default();
            return Err(Error::BackendUnavailable(format!(
                "generation {t}: every slot failed ({reason})"
            )));
        }
        Ok(results)
    }

    fn run_slot(
        &self,
        t: u32,
        j: usize,
        op: OperatorId,
        population: &[DesignCandidate],
        levels: &crate::pareto::ParetoLevels,
    ) -> SlotResult {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, &[t as u64, j as u64]));
        let picked = select_parents(population, levels, op, &mut rng);
        let parents: Vec<&DesignCandidate> = picked.iter().map(|&i| &population[i]).collect();
        let basis = if parents.is_empty() {
            let ppas: Vec<PpaResult> = population.iter().map(|c| c.ppa_or_failed()).collect();
            componentwise_best(population.iter().map(|c| c.c()).zip(&ppas))
        } else {
            let ppas: Vec<PpaResult> = parents.iter().map(|c| c.ppa_or_failed()).collect();
            componentwise_best(parents.iter().map(|c| c.c()).zip(&ppas))
        };
        let parent_ids: Vec<String> = parents.iter().map(|p| p.id.clone()).collect();
        let lineage = Lineage {
            parents: parent_ids.clone(),
            operator: Some(op.name().to_string()),
            generation: t,
            ..Lineage::default()
        };
        let id = format!("g{t}-o{j}");

        let request = build_prompt(
            &self.templates,
            op,
            &PromptInputs {
                spec: &self.spec,
                parents: &parents,
                population,
                generation: t,
                seed: rng.gen(),
                sampling: self.config.sampling,
            },
        );
        let generated = request
            .and_then(|r| self.backends.generator.generate(&r))
            .and_then(|reply| parse_generation(&reply));
        let (candidate, failure) = match generated {
            Ok(source) => (self.evaluate(DesignCandidate::unevaluated(&id, source, lineage)), None),
            Err(e) => {
                log::debug!("slot {id}: {e}");
                let total = self.backends.evaluator.case_count();
                let placeholder = DesignCandidate::placeholder(&id, total, lineage)
                    .expect("case count checked at construction");
                (placeholder, Some(e))
            }
        };

        let repairs = if failure.is_none() {
            self.synthesis_repair(&candidate, t, &mut rng)
        } else {
            Vec::new()
        };
        SlotResult {
            operator: op,
            parent_ids,
            candidate,
            repairs,
            basis,
            failure,
        }
    }

    /// Up to `R` repair rounds for a candidate whose synthesis failed. The
    /// first attempt that synthesizes without losing correctness is accepted
    /// and ends the rounds.
    fn synthesis_repair(
        &self,
        original: &DesignCandidate,
        t: u32,
        rng: &mut ChaCha8Rng,
    ) -> Vec<RepairAttempt> {
        let mut attempts = Vec::new();
        if !original.ppa_or_failed().is_failed() || original.source.trim().is_empty() {
            return attempts;
        }
        for round in 1..=self.config.repair_budget {
            let seed: u64 = rng.gen();
            let lineage = Lineage {
                repairs: round,
                ..original.lineage.clone()
            };
            let id = format!("{}-r{round}", original.id);
            let source = build_repair_prompt(
                &self.templates,
                &self.spec,
                original,
                t,
                seed,
                self.config.sampling,
            )
            .and_then(|r| self.backends.generator.generate(&r))
            .and_then(|reply| parse_generation(&reply));
            let attempt = match source {
                Ok(source) => self.evaluate(DesignCandidate::unevaluated(id, source, lineage)),
                Err(e) => {
                    log::debug!("repair {id}: {e}");
                    continue;
                }
            };
            let accepted = !attempt.ppa_or_failed().is_failed() && attempt.c() >= original.c();
            attempts.push(RepairAttempt {
                candidate: attempt,
                accepted,
            });
            if accepted {
                break;
            }
        }
        attempts
    }

    fn merge_slot(
        &self,
        t: u32,
        j: usize,
        slot: SlotResult,
        state: &mut RunState,
        log: &mut RunLog,
        offspring: &mut Vec<DesignCandidate>,
    ) -> Result<()> {
        let SlotResult {
            operator,
            parent_ids,
            candidate,
            repairs,
            basis,
            failure,
        } = slot;
        let slot_id = format!("g{t}-o{j}");
        log.append(&LogEvent::new(
            "operator_selected",
            t,
            Some(&slot_id),
            json!({ "slot": j, "operator": operator, "parents": parent_ids }),
        ))?;
        if let Some(e) = &failure {
            log.append(&LogEvent::new(
                "slot_failed",
                t,
                Some(&slot_id),
                json!({ "slot": j, "reason": e.to_string() }),
            ))?;
        }
        log_candidate(log, t, &candidate)?;
        state.archive.push(candidate.clone());
        let mut survivor = candidate;
        for (round, attempt) in repairs.into_iter().enumerate() {
            log_candidate(log, t, &attempt.candidate)?;
            log.append(&LogEvent::new(
                "repair_attempt",
                t,
                Some(&attempt.candidate.id),
                json!({ "slot": j, "round": round + 1, "accepted": attempt.accepted }),
            ))?;
            state.archive.push(attempt.candidate.clone());
            if attempt.accepted {
                survivor = attempt.candidate;
            }
        }
        let candidate = survivor;

        let reward = match &basis {
            Some((c, m)) => compute_reward(
                operator.category(),
                (candidate.c(), &candidate.ppa_or_failed()),
                (*c, m),
            ),
            None => false,
        };
        state.bandit.record(operator.index(), reward);
        log.append(&LogEvent::new(
            "reward",
            t,
            Some(&candidate.id),
            json!({ "slot": j, "operator": operator, "reward": reward }),
        ))?;
        offspring.push(candidate);
        Ok(())
    }

    fn evaluate(&self, mut candidate: DesignCandidate) -> DesignCandidate {
        let total = self.backends.evaluator.case_count();
        let evaluation = if candidate.source.trim().is_empty() {
            Evaluation::empty(total)
        } else {
            self.backends.evaluator.evaluate(&candidate.source)
        };
        let evaluation = evaluation.unwrap_or_else(|e| {
            log::warn!("evaluation of {} failed: {e}", candidate.id);
            let mut empty = Evaluation::empty(total).expect("case count checked at construction");
            if let Some(d) = empty.diagnosis.as_mut() {
                d.raw_log_digest = format!("evaluation failed: {e}");
            }
            empty
        });
        candidate.correctness = Some(evaluation.correctness);
        candidate.ppa = Some(evaluation.ppa);
        candidate.test_report = evaluation.test_report;
        candidate.synthesis_diagnosis = evaluation.diagnosis;
        candidate
    }

    fn save(&self, state: &RunState) -> Result<()> {
        match &self.checkpoint {
            Some(path) => write_json_atomic(
                path,
                &Checkpoint {
                    config: self.config.clone(),
                    state: state.clone(),
                },
            ),
            None => Ok(()),
        }
    }

    fn halted(&self, state: RunState) -> Result<RunOutcome> {
        Ok(RunOutcome {
            front: pareto_front(&state.population, &self.config.criterion)?,
            generations_completed: state.generation,
            population: state.population,
            archive: state.archive,
            pass: false,
            halted: true,
        })
    }

    fn finish(&self, state: RunState, log: &mut RunLog) -> Result<RunOutcome> {
        let front = pareto_front(&state.population, &self.config.criterion)?;
        let pass = match self.backends.verdict {
            Some(judge) => state.population.par_iter().any(|c| {
                !c.source.trim().is_empty()
                    && judge
                        .evaluate(&c.source)
                        .map(|e| e.correctness.is_perfect())
                        .unwrap_or(false)
            }),
            None => state
                .population
                .iter()
                .any(|c| c.correctness.is_some_and(|s| s.is_perfect())),
        };
        log.append(&LogEvent::new(
            "run_finished",
            state.generation,
            None,
            json!({
                "front": ids(&front),
                "population": ids(&state.population),
                "pass": pass,
                "criterion": self.config.criterion,
            }),
        ))?;
        Ok(RunOutcome {
            front,
            generations_completed: state.generation,
            population: state.population,
            archive: state.archive,
            pass,
            halted: false,
        })
    }
}

fn ids(candidates: &[DesignCandidate]) -> Value {
    Value::from(candidates.iter().map(|c| c.id.clone()).collect::<Vec<_>>())
}

fn log_candidate(log: &mut RunLog, t: u32, candidate: &DesignCandidate) -> Result<()> {
    log.append(&LogEvent::new(
        "candidate_evaluated",
        t,
        Some(&candidate.id),
        serde_json::to_value(candidate)?,
    ))
}
