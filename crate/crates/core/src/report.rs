// SPDX-License-Identifier: Apache-2.0

//! Pass@k, per-run summaries rebuilt from run logs, and front export.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{DesignCandidate, PpaResult};
use crate::pareto::{pareto_front, IntraLevelCriterion};
use crate::runlog::{read_events, LogEvent};

/// Unbiased Pass@k for `f` successes out of `n` runs:
/// `1 - C(n-f, k) / C(n, k)`, evaluated as a running product.
pub fn pass_at_k(n: u32, f: u32, k: u32) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
    }
    if f > n {
        return Err(Error::InvalidArgument(format!("{f} successes out of {n} runs")));
    }
    let misses = n - f;
    if misses < k {
        return Ok(1.0);
    }
    let ratio: f64 = (0..k)
        .map(|i| (misses - i) as f64 / (n - i) as f64)
        .product();
    Ok(1.0 - ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontFormat {
    Csv,
    Json,
}

impl FromStr for FrontFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown front format '{other}'"))),
        }
    }
}

/// What one run log says about its run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub task: String,
    pub seed: u64,
    pub criterion: IntraLevelCriterion,
    pub population: Vec<DesignCandidate>,
    pub front: Vec<DesignCandidate>,
    pub pass: bool,
    pub generations_used: u32,
    pub operator_usage: BTreeMap<String, u64>,
    /// `(t, θ_t)` for each executed generation.
    pub gate_trajectory: Vec<(u32, f64)>,
    pub gate_fallbacks: u32,
}

impl RunSummary {
    /// Most correct front member, ties broken by lowest `A×D×P`.
    pub fn best(&self) -> Option<&DesignCandidate> {
        self.front.iter().min_by(|a, b| {
            b.c()
                .total_cmp(&a.c())
                .then(product(a).total_cmp(&product(b)))
        })
    }
}

fn product(c: &DesignCandidate) -> f64 {
    c.ppa_or_failed().product_or_inf()
}

/// Rebuilds the final population and front of a finished run.
pub fn summarize_log(path: &Path) -> Result<RunSummary> {
    let (events, clean) = read_events(path)?;
    summarize_events(&events, clean)
}

pub fn summarize_events(events: &[LogEvent], clean: bool) -> Result<RunSummary> {
    let mut candidates: HashMap<String, DesignCandidate> = HashMap::new();
    let mut task = String::new();
    let mut seed = 0;
    let mut criterion = IntraLevelCriterion::default();
    let mut last_survivors: Option<(u32, Vec<String>)> = None;
    let mut finished: Option<&LogEvent> = None;
    let mut operator_usage = BTreeMap::new();
    let mut gate_trajectory = Vec::new();
    let mut gate_fallbacks = 0;

    for e in events {
        match e.event.as_str() {
            "run_started" => {
                let config = &e.payload["config"];
                task = config["task"].as_str().unwrap_or_default().to_string();
                seed = config["seed"].as_u64().unwrap_or_default();
                if let Ok(c) = serde_json::from_value(config["criterion"].clone()) {
                    criterion = c;
                }
            }
            "candidate_evaluated" => {
                let c: DesignCandidate = serde_json::from_value(e.payload.clone())?;
                candidates.insert(c.id.clone(), c);
            }
            "survivors" => {
                let ids = serde_json::from_value(e.payload["ids"].clone())?;
                last_survivors = Some((e.generation, ids));
            }
            "operator_selected" => {
                if let Some(op) = e.payload["operator"].as_str() {
                    *operator_usage.entry(op.to_string()).or_insert(0) += 1;
                }
            }
            "generation_started" => {
                if let Some(theta) = e.payload["theta"].as_f64() {
                    gate_trajectory.push((e.generation, theta));
                }
            }
            "gate_fallback" => gate_fallbacks += 1,
            "run_finished" => finished = Some(e),
            _ => {}
        }
    }

    let last_generation = last_survivors.as_ref().map(|(t, _)| *t);
    let (Some(done), true) = (finished, clean) else {
        return Err(Error::TruncatedLog { last_generation });
    };
    let (generations_used, ids) = last_survivors.ok_or(Error::TruncatedLog { last_generation })?;
    let population = ids
        .iter()
        .map(|id| {
            candidates
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("log names unknown candidate '{id}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let front = pareto_front(&population, &criterion)?;
    Ok(RunSummary {
        task,
        seed,
        criterion,
        front,
        population,
        pass: done.payload["pass"].as_bool().unwrap_or(false),
        generations_used,
        operator_usage,
        gate_trajectory,
        gate_fallbacks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub id: String,
    pub correctness: f64,
    pub area_um2: Option<f64>,
    pub delay_ns: Option<f64>,
    pub power_uw: Option<f64>,
    pub adp_product: Option<f64>,
}

impl FrontRow {
    pub fn of(c: &DesignCandidate) -> Self {
        let m = match c.ppa_or_failed() {
            PpaResult::Synthesized(m) => Some(m),
            PpaResult::SynthesisFailed => None,
        };
        Self {
            id: c.id.clone(),
            correctness: c.c(),
            area_um2: m.map(|m| m.area),
            delay_ns: m.map(|m| m.delay),
            power_uw: m.map(|m| m.power),
            adp_product: m.map(|m| m.product()),
        }
    }
}

/// Front of `candidates` (already ordered) as CSV or JSON.
pub fn render_front(front: &[DesignCandidate], format: FrontFormat) -> Result<String> {
    let rows: Vec<FrontRow> = front.iter().map(FrontRow::of).collect();
    match format {
        FrontFormat::Json => Ok(serde_json::to_string_pretty(&rows)?),
        FrontFormat::Csv => to_csv(&rows),
    }
}

/// The front of a finished run log, in the run's intra-level order.
pub fn export_front(log: &Path, format: FrontFormat) -> Result<String> {
    render_front(&summarize_log(log)?.front, format)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One line of the suite report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub seed: u64,
    pub pass: bool,
    pub best_c: f64,
    pub area_um2: Option<f64>,
    pub delay_ns: Option<f64>,
    pub power_uw: Option<f64>,
    pub adp_product: Option<f64>,
    pub generations_used: u32,
}

impl ReportRow {
    pub fn of(summary: &RunSummary) -> Self {
        let best = summary.best().map(FrontRow::of);
        Self {
            task: summary.task.clone(),
            seed: summary.seed,
            pass: summary.pass,
            best_c: best.as_ref().map_or(0.0, |b| b.correctness),
            area_um2: best.as_ref().and_then(|b| b.area_um2),
            delay_ns: best.as_ref().and_then(|b| b.delay_ns),
            power_uw: best.as_ref().and_then(|b| b.power_uw),
            adp_product: best.as_ref().and_then(|b| b.adp_product),
            generations_used: summary.generations_used,
        }
    }
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    to_csv(rows)
}

pub const PASS_AT: [u32; 3] = [1, 5, 10];

/// Per-task Pass@k over the runs in `rows`; `None` where `k` exceeds the
/// number of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PassAtK {
    pub task: String,
    pub runs: u32,
    pub successes: u32,
    pub values: Vec<(u32, Option<f64>)>,
}

pub fn pass_at_k_table(rows: &[ReportRow]) -> Vec<PassAtK> {
    let mut by_task: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    for r in rows {
        let e = by_task.entry(&r.task).or_default();
        e.0 += 1;
        e.1 += u32::from(r.pass);
    }
    by_task
        .into_iter()
        .map(|(task, (n, f))| PassAtK {
            task: task.to_string(),
            runs: n,
            successes: f,
            values: PASS_AT.iter().map(|&k| (k, pass_at_k(n, f, k).ok())).collect(),
        })
        .collect()
}

/// Plain-text report: Pass@k per task, then the best design of each run.
pub fn render_text(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>5} {:>5} {:>8} {:>8} {:>8}", "task", "runs", "pass", "pass@1", "pass@5", "pass@10");
    for t in pass_at_k_table(rows) {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<24} {:>5} {:>5} {:>8} {:>8} {:>8}",
            t.task,
            t.runs,
            t.successes,
            cell(t.values[0].1),
            cell(t.values[1].1),
            cell(t.values[2].1)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:>5} {:>7} {:>10} {:>9} {:>10} {:>12}",
        "task", "seed", "pass", "best_c", "area_um2", "delay_ns", "power_uw", "A*D*P"
    );
    let num = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>5} {:>7.4} {:>10} {:>9} {:>10} {:>12}",
            r.task,
            r.seed,
            r.pass,
            r.best_c,
            num(r.area_um2, 2),
            num(r.delay_ns, 3),
            num(r.power_uw, 2),
            num(r.adp_product, 3)
        );
    }
    out
}
