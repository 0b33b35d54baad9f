// SPDX-License-Identifier: Apache-2.0

//! The seven evolutionary operators, multi-architecture initialization,
//! parent selection, prompt assembly and reply parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::GenerationBackend;
use crate::bandit::OperatorCategory;
use crate::error::{Error, Result};
use crate::objective::{DesignCandidate, Lineage, PpaResult};
use crate::pareto::{level_weight, ParetoLevels};
use crate::seeds::stream_seed;
use crate::templates::TemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorId {
    Fix,
    Simplify,
    Optimize,
    Restructure,
    Explore,
    PpaAwareFix,
    ArchitectureFusion,
}

impl OperatorId {
    /// Registry order; also the bandit arm index.
    pub const ALL: [OperatorId; 7] = [
        OperatorId::Fix,
        OperatorId::Simplify,
        OperatorId::Optimize,
        OperatorId::Restructure,
        OperatorId::Explore,
        OperatorId::PpaAwareFix,
        OperatorId::ArchitectureFusion,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&o| o == self).expect("registered")
    }

    pub fn category(self) -> OperatorCategory {
        match self {
            OperatorId::Fix | OperatorId::Simplify => OperatorCategory::Correctness,
            OperatorId::Optimize | OperatorId::Restructure | OperatorId::Explore => {
                OperatorCategory::Ppa
            }
            OperatorId::PpaAwareFix | OperatorId::ArchitectureFusion => OperatorCategory::Joint,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            OperatorId::Explore => 0,
            OperatorId::ArchitectureFusion => 2,
            _ => 1,
        }
    }

    /// Snake-case name, also the template file stem.
    pub fn name(self) -> &'static str {
        match self {
            OperatorId::Fix => "fix",
            OperatorId::Simplify => "simplify",
            OperatorId::Optimize => "optimize",
            OperatorId::Restructure => "restructure",
            OperatorId::Explore => "explore",
            OperatorId::PpaAwareFix => "ppa_aware_fix",
            OperatorId::ArchitectureFusion => "architecture_fusion",
        }
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown operator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorSpec {
    pub id: OperatorId,
    pub category: OperatorCategory,
    pub arity: usize,
    pub prompt_template: String,
}

/// The closed registry of operators with their current templates.
pub fn operator_registry(templates: &TemplateSet) -> Result<Vec<OperatorSpec>> {
    OperatorId::ALL
        .into_iter()
        .map(|id| {
            Ok(OperatorSpec {
                id,
                category: id.category(),
                arity: id.arity(),
                prompt_template: templates.get(id.name())?.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureStrategy {
    pub name: String,
    pub description: String,
}

impl ArchitectureStrategy {
    pub fn new(name: &str, description: &str) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new(
                "behavioral",
                "Describe the function at the behavioural level and let synthesis infer the structure.",
            ),
            Self::new(
                "structural",
                "Compose the design explicitly from small gate-level or arithmetic building blocks.",
            ),
            Self::new(
                "pipeline",
                "Split long combinational paths into registered stages.",
            ),
            Self::new(
                "resource-shared",
                "Reuse a minimal set of arithmetic and storage units across operations.",
            ),
            Self::new(
                "fsm-minimized",
                "Use a control state machine with the fewest states and a compact encoding.",
            ),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            top_p: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum RequestKind {
    StrategyQuery,
    Init { strategy: String },
    Operator(OperatorId),
    Repair,
    Testbench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMetadata {
    pub kind: RequestKind,
    pub parent_ids: Vec<String>,
    pub generation: u32,
    /// Per-request random stream; deterministic backends derive their reply
    /// from it.
    pub seed: u64,
}

/// Structured view of a parent, for backends that act on design data
/// directly instead of reading the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentContext {
    pub source: String,
    pub correctness: f64,
    pub ppa: PpaResult,
    pub failing_cases: Vec<String>,
}

impl ParentContext {
    pub fn of(candidate: &DesignCandidate) -> Self {
        Self {
            source: candidate.source.clone(),
            correctness: candidate.c(),
            ppa: candidate.ppa_or_failed(),
            failing_cases: candidate.failing_cases().map(|r| r.case_id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub sampling: Sampling,
    pub metadata: RequestMetadata,
    pub parents: Vec<ParentContext>,
}

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

fn format_diagnostics(candidate: &DesignCandidate) -> String {
    if candidate.test_report.is_empty() {
        return "(no test report is available for this design; its correctness is \
                unknown beyond the score)"
            .into();
    }
    let failing: Vec<String> = candidate
        .failing_cases()
        .map(|r| {
            let at = r.time.as_deref().map(|t| format!(" at t={t}")).unwrap_or_default();
            format!(
                "- case {}: signal {} expected {} actual {}{}",
                r.case_id, r.signal, r.expected, r.actual, at
            )
        })
        .collect();
    if failing.is_empty() {
        "(all reported test cases pass)".into()
    } else {
        failing.join("\n")
    }
}

fn format_synthesis_diagnosis(candidate: &DesignCandidate) -> String {
    let Some(d) = &candidate.synthesis_diagnosis else {
        return "(no synthesis diagnosis is available for this design)".into();
    };
    let mut out = String::new();
    if let Some(m) = candidate.ppa.as_ref().and_then(PpaResult::metrics) {
        out.push_str(&format!(
            "area {} um^2, delay {} ns, power {} uW\n",
            m.area, m.delay, m.power
        ));
    }
    out.push_str(&format!("cell count: {}\n", d.cell_count));
    if !d.critical_path.is_empty() {
        out.push_str("critical path:\n");
        for step in &d.critical_path {
            out.push_str(&format!("  {} +{} ns\n", step.point, step.delay));
        }
    }
    for note in &d.resource_notes {
        out.push_str(&format!("note: {note}\n"));
    }
    if !d.raw_log_digest.is_empty() {
        out.push_str(&format!("summary: {}\n", d.raw_log_digest));
    }
    out.trim_end().to_string()
}

/// One line per population member: id, correctness, composite cost and the
/// first line of its source.
pub fn population_digest(population: &[DesignCandidate]) -> String {
    if population.is_empty() {
        return "(none)".into();
    }
    population
        .iter()
        .map(|c| {
            let head: String = c
                .source
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .unwrap_or("(empty)")
                .chars()
                .take(96)
                .collect();
            let cost = match c.ppa.as_ref().and_then(PpaResult::metrics) {
                Some(m) => format!("{:.4}", m.product()),
                None => "n/a".into(),
            };
            let strategy = c
                .lineage
                .strategy
                .as_deref()
                .map(|s| format!(" [{s}]"))
                .unwrap_or_default();
            format!("- {}{}: c={:.3}, AxDxP={}: {}", c.id, strategy, c.c(), cost, head)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct PromptInputs<'a> {
    pub spec: &'a str,
    pub parents: &'a [&'a DesignCandidate],
    /// Existing architectures, shown to Explore.
    pub population: &'a [DesignCandidate],
    pub generation: u32,
    pub seed: u64,
    pub sampling: Sampling,
}

/// Builds the generation request for one operator application.
pub fn build_prompt(
    templates: &TemplateSet,
    operator: OperatorId,
    inputs: &PromptInputs<'_>,
) -> Result<GenerationRequest> {
    if inputs.parents.len() != operator.arity() {
        return Err(Error::InvalidArgument(format!(
            "{operator} takes {} parent(s), got {}",
            operator.arity(),
            inputs.parents.len()
        )));
    }
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    values.insert("spec", inputs.spec.trim().to_string());
    if let Some(first) = inputs.parents.first() {
        values.insert("parent_source", first.source.clone());
        values.insert("diagnostics", format_diagnostics(first));
        values.insert("synthesis_diagnosis", format_synthesis_diagnosis(first));
    }
    if operator == OperatorId::Explore {
        values.insert("population_digest", population_digest(inputs.population));
    }
    if let [first, second] = inputs.parents {
        values.insert("second_parent_source", second.source.clone());
        values.insert(
            "first_parent_strength",
            format!("correctness contributor, c = {:.3}", first.c()),
        );
        let cost = second
            .ppa
            .as_ref()
            .and_then(PpaResult::metrics)
            .map(|m| format!("A x D x P = {:.4}", m.product()))
            .unwrap_or_else(|| "did not synthesize".into());
        values.insert("second_parent_strength", format!("PPA contributor, {cost}"));
    }
    Ok(GenerationRequest {
        prompt: templates.render(operator.name(), &values)?,
        sampling: inputs.sampling,
        metadata: RequestMetadata {
            kind: RequestKind::Operator(operator),
            parent_ids: inputs.parents.iter().map(|p| p.id.clone()).collect(),
            generation: inputs.generation,
            seed: inputs.seed,
        },
        parents: inputs.parents.iter().map(|p| ParentContext::of(p)).collect(),
    })
}

/// Prompt asking for a synthesis fix of `candidate`.
pub fn build_repair_prompt(
    templates: &TemplateSet,
    spec: &str,
    candidate: &DesignCandidate,
    generation: u32,
    seed: u64,
    sampling: Sampling,
) -> Result<GenerationRequest> {
    let error = candidate
        .synthesis_diagnosis
        .as_ref()
        .map(|d| d.raw_log_digest.clone())
        .filter(|d| !d.is_empty())
        .unwrap_or_else(|| "(synthesis failed without a diagnostic message)".into());
    let values = BTreeMap::from([
        ("spec", spec.trim().to_string()),
        ("parent_source", candidate.source.clone()),
        ("synthesis_error", error),
    ]);
    Ok(GenerationRequest {
        prompt: templates.render("repair", &values)?,
        sampling,
        metadata: RequestMetadata {
            kind: RequestKind::Repair,
            parent_ids: vec![candidate.id.clone()],
            generation,
            seed,
        },
        parents: vec![ParentContext::of(candidate)],
    })
}

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[^\n`]*\n(.*?)```").expect("valid regex"))
}

fn module_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)\bmodule\b.*\bendmodule\b").expect("valid regex"))
}

/// Extracts design source from a model reply: the last fenced block, or
/// failing that the span from the first `module` to the last `endmodule`.
pub fn parse_generation(reply: &str) -> Result<String> {
    if let Some(block) = fence_re().captures_iter(reply).last() {
        let body = block[1].trim();
        if !body.is_empty() {
            return Ok(body.to_string());
        }
    }
    module_re()
        .find(reply)
        .map(|m| m.as_str().trim().to_string())
        .ok_or(Error::ParseFailure)
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Parses a `STRATEGIES: a, b` line into the matching configured strategies,
/// in configured order. `None` when nothing usable is found.
pub fn parse_strategy_reply(
    reply: &str,
    strategies: &[ArchitectureStrategy],
) -> Option<Vec<ArchitectureStrategy>> {
    let line = reply
        .lines()
        .find_map(|l| l.trim().strip_prefix("STRATEGIES:"))?;
    let named: Vec<String> = line
        .split(',')
        .map(|s| s.trim().trim_matches(|c: char| c == '`' || c == '.').to_lowercase())
        .collect();
    let chosen: Vec<ArchitectureStrategy> = strategies
        .iter()
        .filter(|s| named.iter().any(|n| *n == s.name.to_lowercase()))
        .cloned()
        .collect();
    (!chosen.is_empty()).then_some(chosen)
}

pub struct InitConfig<'a> {
    pub spec: &'a str,
    pub population_size: usize,
    pub strategies: &'a [ArchitectureStrategy],
    pub sampling: Sampling,
    pub seed: u64,
}

/// Generates the `N` initial (unevaluated) candidates. Each applicable
/// strategy contributes `⌈N / |K|⌉` candidates in strategy order, truncated
/// to `N`. A failed request yields an empty-source candidate.
pub fn multi_arch_init(
    templates: &TemplateSet,
    backend: &dyn GenerationBackend,
    config: &InitConfig<'_>,
) -> Result<Vec<DesignCandidate>> {
    if config.population_size == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    if config.strategies.is_empty() {
        return Err(Error::Config("at least one architecture strategy is required".into()));
    }

    let listing = config
        .strategies
        .iter()
        .map(|s| format!("- {}: {}", s.name, s.description))
        .collect::<Vec<_>>()
        .join("\n");
    let query = GenerationRequest {
        prompt: templates.render(
            "strategy_query",
            &BTreeMap::from([("spec", config.spec.trim().to_string()), ("strategies", listing)]),
        )?,
        sampling: config.sampling,
        metadata: RequestMetadata {
            kind: RequestKind::StrategyQuery,
            parent_ids: Vec::new(),
            generation: 0,
            seed: stream_seed(config.seed, &[0, u64::MAX]),
        },
        parents: Vec::new(),
    };
    let applicable = match backend.generate(&query) {
        Ok(reply) => parse_strategy_reply(&reply, config.strategies),
        Err(e) => {
            log::warn!("strategy query failed ({e}); using all strategies");
            None
        }
    }
    .unwrap_or_else(|| config.strategies.to_vec());

    let per_strategy = config.population_size.div_ceil(applicable.len());
    let plan: Vec<&ArchitectureStrategy> = applicable
        .iter()
        .flat_map(|s| std::iter::repeat_n(s, per_strategy))
        .take(config.population_size)
        .collect();

    let requests = plan
        .iter()
        .enumerate()
        .map(|(k, strategy)| {
            let values = BTreeMap::from([
                ("spec", config.spec.trim().to_string()),
                ("strategy", strategy.name.clone()),
                ("strategy_description", strategy.description.clone()),
            ]);
            Ok(GenerationRequest {
                prompt: templates.render("init", &values)?,
                sampling: config.sampling,
                metadata: RequestMetadata {
                    kind: RequestKind::Init {
                        strategy: strategy.name.clone(),
                    },
                    parent_ids: Vec::new(),
                    generation: 0,
                    seed: stream_seed(config.seed, &[0, k as u64]),
                },
                parents: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(requests
        .par_iter()
        .enumerate()
        .map(|(k, request)| {
            let source = match backend.generate(request).and_then(|r| parse_generation(&r)) {
                Ok(source) => source,
                Err(e) => {
                    log::warn!("initial candidate {k} failed: {e}");
                    String::new()
                }
            };
            let strategy = match &request.metadata.kind {
                RequestKind::Init { strategy } => Some(strategy.clone()),
                _ => None,
            };
            DesignCandidate::unevaluated(
                format!("g0-i{k}"),
                source,
                Lineage {
                    generation: 0,
                    strategy,
                    ..Lineage::default()
                },
            )
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Parent selection
// ---------------------------------------------------------------------------

/// Picks parents for `operator` (indices into `population`). Single parents
/// are drawn with weight `1/(k+1)` for a member of Pareto level `k`. For a
/// two-parent operator the second parent complements the first, and the pair
/// is returned as (correctness contributor, PPA contributor).
pub fn select_parents<R: Rng + ?Sized>(
    population: &[DesignCandidate],
    levels: &ParetoLevels,
    operator: OperatorId,
    rng: &mut R,
) -> Vec<usize> {
    assert!(!population.is_empty(), "parent selection needs a population");
    match operator.arity() {
        0 => Vec::new(),
        1 => vec![sample_by_level(population.len(), levels, rng)],
        _ => {
            let first = sample_by_level(population.len(), levels, rng);
            if population.len() == 1 {
                return vec![first, first];
            }
            let others: Vec<usize> = (0..population.len()).filter(|&i| i != first).collect();
            let best_other_c = others
                .iter()
                .map(|&i| population[i].c())
                .fold(f64::NEG_INFINITY, f64::max);
            if population[first].c() >= best_other_c {
                // Correctness-strong: pair with the cheapest synthesized design.
                let partner = others
                    .iter()
                    .copied()
                    .filter(|&i| !population[i].ppa_or_failed().is_failed())
                    .min_by(|&a, &b| {
                        population[a]
                            .ppa_or_failed()
                            .product_or_inf()
                            .total_cmp(&population[b].ppa_or_failed().product_or_inf())
                    })
                    .unwrap_or(others[0]);
                vec![first, partner]
            } else {
                // PPA-strong: pair with the most correct design.
                let partner = others
                    .iter()
                    .copied()
                    .reduce(|a, b| if population[b].c() > population[a].c() { b } else { a })
                    .expect("at least one other");
                vec![partner, first]
            }
        }
    }
}

fn sample_by_level<R: Rng + ?Sized>(len: usize, levels: &ParetoLevels, rng: &mut R) -> usize {
    let level_of = levels.level_of(len);
    let weights: Vec<f64> = level_of
        .iter()
        .map(|&k| if k == usize::MAX { 0.0 } else { level_weight(k + 1) })
        .collect();
    WeightedIndex::new(&weights)
        .expect("levels cover the population")
        .sample(rng)
}
