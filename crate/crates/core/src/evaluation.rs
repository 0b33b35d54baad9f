// SPDX-License-Identifier: Apache-2.0

//! Correctness scoring from self-checking testbench output, synthesis report
//! parsing, and the evaluator that runs both for a candidate.
//!
//! Testbench output protocol, one line per case:
//!
//! ```text
//! CASE <id> PASS
//! CASE <id> FAIL signal=<name> expected=<value> actual=<value> time=<t>
//! TOTAL <T>
//! ```

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{GenerationBackend, LibraryConfig, SimulationBackend, SynthesisBackend, ToolStatus};
use crate::error::{Error, Result};
use crate::objective::{CorrectnessScore, PpaMetrics, PpaResult};
use crate::operators::{parse_generation, GenerationRequest, RequestKind, RequestMetadata, Sampling};
use crate::seeds::stream_seed;
use crate::templates::TemplateSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCaseResult {
    pub case_id: String,
    pub passed: bool,
    #[serde(default)]
    pub signal: String,
    #[serde(default)]
    pub expected: String,
    #[serde(default)]
    pub actual: String,
    #[serde(default)]
    pub time: Option<String>,
}

impl TestCaseResult {
    pub fn pass(case_id: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            passed: true,
            signal: String::new(),
            expected: String::new(),
            actual: String::new(),
            time: None,
        }
    }

    pub fn fail(
        case_id: impl Into<String>,
        signal: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
        time: Option<String>,
    ) -> Self {
        let nonempty = |s: String| if s.is_empty() { "?".to_string() } else { s };
        Self {
            case_id: case_id.into(),
            passed: false,
            signal: signal.into(),
            expected: nonempty(expected.into()),
            actual: nonempty(actual.into()),
            time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestbenchOrigin {
    Provided,
    BackendGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestbenchArtifact {
    pub source: String,
    pub case_count: u32,
    pub origin: TestbenchOrigin,
}

impl TestbenchArtifact {
    pub fn new(source: String, case_count: u32, origin: TestbenchOrigin) -> Result<Self> {
        if case_count == 0 {
            return Err(Error::Config("a testbench needs at least one case".into()));
        }
        Ok(Self {
            source,
            case_count,
            origin,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub point: String,
    /// Incremental delay in ns.
    pub delay: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDiagnosis {
    pub cell_count: u64,
    pub critical_path: Vec<PathStep>,
    pub resource_notes: Vec<String>,
    pub raw_log_digest: String,
}

/// Parsed testbench output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TestbenchOutput {
    pub results: Vec<TestCaseResult>,
    pub reported_total: Option<u32>,
}

fn case_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^CASE (\S+) (?:(PASS)|FAIL signal=(\S*) expected=(\S*) actual=(\S*) time=(\S*))$",
        )
        .expect("valid regex")
    })
}

/// Parses protocol lines out of raw simulator output. Lines that start with
/// `CASE` but do not match the protocol count as failures of that case. A
/// case reported more than once passes only if every report passes.
pub fn parse_testbench_output(raw: &str) -> TestbenchOutput {
    let mut results: Vec<TestCaseResult> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut reported_total = None;
    for line in raw.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("TOTAL ") {
            reported_total = rest.trim().parse().ok();
            continue;
        }
        if !line.starts_with("CASE ") {
            continue;
        }
        let result = match case_re().captures(line) {
            Some(caps) if caps.get(2).is_some() => TestCaseResult::pass(&caps[1]),
            Some(caps) => TestCaseResult::fail(
                &caps[1],
                &caps[3],
                &caps[4],
                &caps[5],
                Some(caps[6].to_string()).filter(|t| !t.is_empty()),
            ),
            None => {
                let id = line.split_whitespace().nth(1).unwrap_or("?");
                TestCaseResult::fail(id, "", "<protocol>", line, None)
            }
        };
        match index.get(&result.case_id) {
            Some(&i) => {
                if !result.passed {
                    results[i] = result;
                }
            }
            None => {
                index.insert(result.case_id.clone(), results.len());
                results.push(result);
            }
        }
    }
    TestbenchOutput {
        results,
        reported_total,
    }
}

/// `c = passed / T`. Cases absent from `results` count as failed.
pub fn score_correctness(results: &[TestCaseResult], total: u32) -> Result<CorrectnessScore> {
    let passed = results.iter().filter(|r| r.passed).count().min(total as usize) as u32;
    CorrectnessScore::new(passed, total)
}

/// `A × D × P`.
pub fn ppa_product(ppa: &PpaResult) -> Result<f64> {
    ppa.metrics()
        .map(PpaMetrics::product)
        .ok_or_else(|| Error::InvalidArgument("no PPA product for a failed synthesis".into()))
}

// ---------------------------------------------------------------------------
// Synthesis reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PpaFormat {
    /// Yosys `stat` output followed by OpenSTA `report_checks` and
    /// `report_power` output.
    #[serde(rename = "yosys-opensta")]
    YosysOpenSta,
    /// The normalized JSON record.
    #[serde(rename = "json")]
    NormalizedJson,
}

impl FromStr for PpaFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yosys-opensta" => Ok(PpaFormat::YosysOpenSta),
            "json" => Ok(PpaFormat::NormalizedJson),
            other => Err(Error::Config(format!("unknown PPA report format '{other}'"))),
        }
    }
}

/// Normalized PPA record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PpaRecord {
    Synthesized {
        area_um2: f64,
        delay_ns: f64,
        power_uw: f64,
    },
    Failed {
        synthesis_failed: bool,
        reason: String,
    },
}

impl PpaRecord {
    pub fn from_result(ppa: &PpaResult, reason: &str) -> Self {
        match ppa {
            PpaResult::Synthesized(m) => PpaRecord::Synthesized {
                area_um2: m.area,
                delay_ns: m.delay,
                power_uw: m.power,
            },
            PpaResult::SynthesisFailed => PpaRecord::Failed {
                synthesis_failed: true,
                reason: reason.to_string(),
            },
        }
    }
}

fn failed(reason: String) -> (PpaResult, Option<SynthesisDiagnosis>) {
    (
        PpaResult::SynthesisFailed,
        Some(SynthesisDiagnosis {
            raw_log_digest: format!("synthesis failed: {reason}"),
            ..SynthesisDiagnosis::default()
        }),
    )
}

pub fn parse_ppa_report(raw: &str, format: PpaFormat) -> (PpaResult, Option<SynthesisDiagnosis>) {
    match format {
        PpaFormat::NormalizedJson => parse_json_record(raw),
        PpaFormat::YosysOpenSta => parse_yosys_opensta(raw),
    }
}

fn parse_json_record(raw: &str) -> (PpaResult, Option<SynthesisDiagnosis>) {
    match serde_json::from_str::<PpaRecord>(raw.trim()) {
        Ok(PpaRecord::Synthesized {
            area_um2,
            delay_ns,
            power_uw,
        }) => match PpaMetrics::new(area_um2, delay_ns, power_uw) {
            Ok(m) => (PpaResult::Synthesized(m), None),
            Err(e) => failed(e.to_string()),
        },
        Ok(PpaRecord::Failed { reason, .. }) => failed(reason),
        Err(e) => failed(format!("unreadable PPA record: {e}")),
    }
}

struct YosysPatterns {
    error: Regex,
    area: Regex,
    cells: Regex,
    cells_short: Regex,
    cell_type: Regex,
    arrival: Regex,
    path_step: Regex,
    power_total: Regex,
    power_inline: Regex,
}

fn yosys_patterns() -> &'static YosysPatterns {
    static P: OnceLock<YosysPatterns> = OnceLock::new();
    P.get_or_init(|| YosysPatterns {
        error: Regex::new(r"(?i)^\s*error\b:?\s*(.*)$").unwrap(),
        area: Regex::new(r"Chip area for (?:top )?module\s+'?[^:]*'?\s*:\s*([0-9.eE+-]+)").unwrap(),
        cells: Regex::new(r"^\s*Number of cells:\s*(\d+)").unwrap(),
        cells_short: Regex::new(r"^\s*(\d+)\s+cells\s*$").unwrap(),
        cell_type: Regex::new(r"^\s+(\$?[A-Za-z_][\w$]*)\s+(\d+)\s*$").unwrap(),
        arrival: Regex::new(r"^\s*(-?[0-9.]+)\s+data arrival time").unwrap(),
        path_step: Regex::new(r"^\s*(-?[0-9.]+)\s+(-?[0-9.]+)\s+[\^v]\s+(\S+)").unwrap(),
        power_total: Regex::new(
            r"^Total\s+([0-9.eE+-]+)\s+([0-9.eE+-]+)\s+([0-9.eE+-]+)\s+([0-9.eE+-]+)",
        )
        .unwrap(),
        power_inline: Regex::new(r"(?i)total power\s*[:=]\s*([0-9.eE+-]+)\s*(W|mW|uW|µW|nW)\b")
            .unwrap(),
    })
}

fn parse_yosys_opensta(raw: &str) -> (PpaResult, Option<SynthesisDiagnosis>) {
    if raw.trim().is_empty() {
        return failed("empty synthesis report".into());
    }
    let p = yosys_patterns();
    let mut errors = Vec::new();
    let mut area = None;
    let mut cells: Option<u64> = None;
    let mut in_cell_list = false;
    let mut notes = Vec::new();
    let mut arrival = None;
    let mut path = Vec::new();
    let mut path_done = false;
    let mut power = None;

    for line in raw.lines() {
        if let Some(caps) = p.error.captures(line) {
            errors.push(caps[1].trim().to_string());
            continue;
        }
        if line.trim_start().starts_with("Warning:") {
            notes.push(line.trim().to_string());
        }
        if let Some(caps) = p.area.captures(line) {
            area = caps[1].parse::<f64>().ok();
        }
        if let Some(caps) = p.cells.captures(line).or_else(|| p.cells_short.captures(line)) {
            cells = caps[1].parse().ok();
            in_cell_list = true;
            notes.retain(|n| !n.starts_with("cell "));
            continue;
        }
        if in_cell_list {
            match p.cell_type.captures(line) {
                Some(caps) => notes.push(format!("cell {} x{}", &caps[1], &caps[2])),
                None if line.trim().is_empty() => {}
                None => in_cell_list = false,
            }
        }
        if !path_done {
            if let Some(caps) = p.arrival.captures(line) {
                arrival = caps[1].parse::<f64>().ok();
                path_done = true;
                continue;
            }
            if let Some(caps) = p.path_step.captures(line) {
                if let Ok(delay) = caps[1].parse::<f64>() {
                    path.push(PathStep {
                        point: caps[3].to_string(),
                        delay,
                    });
                }
            }
        }
        if let Some(caps) = p.power_total.captures(line) {
            power = caps[4].parse::<f64>().ok().map(|w| w * 1e6);
        } else if let Some(caps) = p.power_inline.captures(line) {
            let scale = match &caps[2] {
                "W" => 1e6,
                "mW" => 1e3,
                "nW" => 1e-3,
                _ => 1.0,
            };
            power = caps[1].parse::<f64>().ok().map(|v| v * scale);
        }
    }

    if !errors.is_empty() {
        return failed(errors.join("; "));
    }
    if cells == Some(0) {
        return failed("logic optimized to zero cells".into());
    }
    let (Some(area), Some(delay), Some(power)) = (area, arrival, power) else {
        let missing: Vec<&str> = [("area", area), ("delay", arrival), ("power", power)]
            .into_iter()
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| n)
            .collect();
        return failed(format!("report lacks {}", missing.join(", ")));
    };
    let metrics = match PpaMetrics::new(area, delay, power) {
        Ok(m) => m,
        Err(e) => return failed(e.to_string()),
    };
    // Keep only the path prefix that fits inside the reported arrival time.
    let mut acc = 0.0;
    path.retain(|s| {
        acc += s.delay;
        acc <= delay + 1e-6
    });
    let digest = format!(
        "cells={} area={} delay={} power={}",
        cells.map_or("?".to_string(), |c| c.to_string()),
        area,
        delay,
        power
    );
    (
        PpaResult::Synthesized(metrics),
        Some(SynthesisDiagnosis {
            cell_count: cells.unwrap_or(0),
            critical_path: path,
            resource_notes: notes,
            raw_log_digest: digest,
        }),
    )
}

// ---------------------------------------------------------------------------
// Evaluators
// ---------------------------------------------------------------------------

/// Everything measured about one design.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub correctness: CorrectnessScore,
    pub ppa: PpaResult,
    pub test_report: Vec<TestCaseResult>,
    pub diagnosis: Option<SynthesisDiagnosis>,
}

impl Evaluation {
    /// Score of a design with no usable source.
    pub fn empty(total: u32) -> Result<Self> {
        Ok(Self {
            correctness: CorrectnessScore::zero(total)?,
            ppa: PpaResult::SynthesisFailed,
            test_report: Vec::new(),
            diagnosis: Some(SynthesisDiagnosis {
                raw_log_digest: "synthesis failed: empty design source".into(),
                ..SynthesisDiagnosis::default()
            }),
        })
    }
}

/// Simulates and synthesizes designs. Implementations must be callable
/// from several threads at once.
pub trait DesignEvaluator: Send + Sync {
    /// `T`, fixed for the task.
    fn case_count(&self) -> u32;

    fn evaluate(&self, source: &str) -> Result<Evaluation>;
}

/// Evaluator backed by an external simulator and synthesizer.
pub struct ToolchainEvaluator {
    pub simulator: Box<dyn SimulationBackend>,
    pub synthesizer: Box<dyn SynthesisBackend>,
    pub testbench: TestbenchArtifact,
    pub format: PpaFormat,
    pub library: LibraryConfig,
    pub simulation_timeout: Duration,
    pub synthesis_timeout: Duration,
}

impl DesignEvaluator for ToolchainEvaluator {
    fn case_count(&self) -> u32 {
        self.testbench.case_count
    }

    fn evaluate(&self, source: &str) -> Result<Evaluation> {
        let total = self.testbench.case_count;
        if source.trim().is_empty() {
            return Evaluation::empty(total);
        }
        let sim = self
            .simulator
            .simulate(source, &self.testbench.source, self.simulation_timeout)?;
        let output = parse_testbench_output(&sim.stdout);
        let correctness = score_correctness(&output.results, total)?;

        let syn = self
            .synthesizer
            .synthesize(source, &self.library, self.synthesis_timeout)?;
        let (ppa, diagnosis) = match &syn.status {
            ToolStatus::Exited(0) => parse_ppa_report(&syn.combined(), self.format),
            status => {
                let (ppa, mut diag) = parse_ppa_report(&syn.combined(), self.format);
                let reason = format!("synthesis tool {status}");
                let digest = match diag.as_ref().map(|d| d.raw_log_digest.as_str()) {
                    Some(d) if ppa.is_failed() => format!("{d}; {reason}"),
                    _ => format!("synthesis failed: {reason}"),
                };
                diag.get_or_insert_with(SynthesisDiagnosis::default).raw_log_digest = digest;
                (PpaResult::SynthesisFailed, diag)
            }
        };
        Ok(Evaluation {
            correctness,
            ppa,
            test_report: output.results,
            diagnosis,
        })
    }
}

// ---------------------------------------------------------------------------
// Enhanced testbench construction
// ---------------------------------------------------------------------------

pub struct TestbenchRequest<'a> {
    pub spec: &'a str,
    pub golden_reference: &'a str,
    pub provided: Option<&'a str>,
    pub case_target: u32,
    pub attempts: u32,
    pub timeout: Duration,
    pub seed: u64,
}

/// Asks the generation backend for a self-checking testbench and keeps the
/// first one the golden reference passes completely. Falls back to the
/// provided testbench when no generated one qualifies.
pub fn build_enhanced_testbench(
    templates: &TemplateSet,
    backend: &dyn GenerationBackend,
    simulator: &dyn SimulationBackend,
    request: &TestbenchRequest<'_>,
) -> Result<TestbenchArtifact> {
    let golden_cases = |tb: &str| -> Result<Option<(bool, u32)>> {
        let out = simulator.simulate(request.golden_reference, tb, request.timeout)?;
        if !matches!(out.status, ToolStatus::Exited(0)) {
            return Ok(None);
        }
        let parsed = parse_testbench_output(&out.stdout);
        let total = parsed.reported_total.unwrap_or(parsed.results.len() as u32);
        let all_pass = total > 0
            && parsed.results.len() as u32 == total
            && parsed.results.iter().all(|r| r.passed);
        Ok(Some((all_pass, total)))
    };

    let provided = match request.provided {
        Some(tb) => match golden_cases(tb)? {
            Some((_, total)) if total > 0 => Some((tb, total)),
            Some(_) => None,
            None => {
                return Err(Error::TaskAborted(
                    "golden reference does not simulate with the provided testbench".into(),
                ))
            }
        },
        None => None,
    };

    let values = BTreeMap::from([
        ("spec", request.spec.trim().to_string()),
        ("parent_source", request.golden_reference.to_string()),
        ("case_count", request.case_target.to_string()),
    ]);
    let prompt = templates.render("testbench", &values)?;
    let mut golden_ran = false;
    let mut golden_crashed = false;
    for attempt in 0..request.attempts {
        let req = GenerationRequest {
            prompt: prompt.clone(),
            sampling: Sampling::default(),
            metadata: RequestMetadata {
                kind: RequestKind::Testbench,
                parent_ids: Vec::new(),
                generation: 0,
                seed: stream_seed(request.seed, &[u64::from(attempt), 0x7e57]),
            },
            parents: Vec::new(),
        };
        let source = match backend.generate(&req).and_then(|r| parse_generation(&r)) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("testbench generation attempt {attempt} failed: {e}");
                continue;
            }
        };
        match golden_cases(&source)? {
            Some((true, total)) => {
                return TestbenchArtifact::new(source, total, TestbenchOrigin::BackendGenerated)
            }
            Some(_) => golden_ran = true,
            None => golden_crashed = true,
        }
    }
    match provided {
        Some((tb, total)) => TestbenchArtifact::new(tb.to_string(), total, TestbenchOrigin::Provided),
        None if golden_crashed && !golden_ran => Err(Error::TaskAborted(
            "golden reference failed to simulate and no provided testbench exists".into(),
        )),
        None => Err(Error::Config(
            "no usable testbench: generation failed and none was provided".into(),
        )),
    }
}
