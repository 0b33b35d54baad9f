// SPDX-License-Identifier: Apache-2.0

//! Candidates, PPA metrics, correctness scores and the four-objective
//! Pareto dominance relation.
//!
//! A candidate is compared on `(1 - c, area, delay, power)`, all minimized.
//! A candidate whose synthesis failed carries no metrics; it compares as
//! strictly worse than any synthesized candidate on every PPA coordinate and
//! equal to any other failed candidate.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{SynthesisDiagnosis, TestCaseResult};

/// Area (µm²), critical path delay (ns) and power (µW) of a synthesized design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpaMetrics {
    pub area: f64,
    pub delay: f64,
    pub power: f64,
}

impl PpaMetrics {
    pub fn new(area: f64, delay: f64, power: f64) -> Result<Self> {
        for (name, v) in [("area", area), ("delay", delay), ("power", power)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidMetrics(format!("{name} = {v}")));
            }
        }
        Ok(Self { area, delay, power })
    }

    /// Composite `A × D × P`.
    pub fn product(&self) -> f64 {
        self.area * self.delay * self.power
    }

    fn coords(&self) -> [f64; 3] {
        [self.area, self.delay, self.power]
    }
}

/// Outcome of logic synthesis. `SynthesisFailed` is the bottom element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpaResult {
    Synthesized(PpaMetrics),
    SynthesisFailed,
}

impl PpaResult {
    pub fn metrics(&self) -> Option<&PpaMetrics> {
        match self {
            PpaResult::Synthesized(m) => Some(m),
            PpaResult::SynthesisFailed => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, PpaResult::SynthesisFailed)
    }

    /// Compares one PPA coordinate (0 = area, 1 = delay, 2 = power) where
    /// `Less` means `self` is better.
    pub(crate) fn cmp_coord(&self, other: &PpaResult, coord: usize) -> Ordering {
        match (self, other) {
            (PpaResult::Synthesized(a), PpaResult::Synthesized(b)) => {
                a.coords()[coord].total_cmp(&b.coords()[coord])
            }
            (PpaResult::Synthesized(_), PpaResult::SynthesisFailed) => Ordering::Less,
            (PpaResult::SynthesisFailed, PpaResult::Synthesized(_)) => Ordering::Greater,
            (PpaResult::SynthesisFailed, PpaResult::SynthesisFailed) => Ordering::Equal,
        }
    }

    /// `A × D × P`, with failed synthesis mapped to `+∞`.
    pub(crate) fn product_or_inf(&self) -> f64 {
        self.metrics().map_or(f64::INFINITY, PpaMetrics::product)
    }
}

/// Fraction of passed test cases, `passed / total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessScore {
    pub value: f64,
    pub passed: u32,
    pub total: u32,
}

impl CorrectnessScore {
    pub fn new(passed: u32, total: u32) -> Result<Self> {
        if total == 0 || passed > total {
            return Err(Error::InvalidScore { passed, total });
        }
        Ok(Self {
            value: f64::from(passed) / f64::from(total),
            passed,
            total,
        })
    }

    pub fn zero(total: u32) -> Result<Self> {
        Self::new(0, total)
    }

    pub fn is_perfect(&self) -> bool {
        self.passed == self.total
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parents: Vec<String>,
    pub operator: Option<String>,
    pub generation: u32,
    /// Initialization strategy, for generation-0 candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Number of synthesis-repair rounds that produced this candidate.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub repairs: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

/// One individual of the population: design source plus its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCandidate {
    pub id: String,
    pub source: String,
    pub correctness: Option<CorrectnessScore>,
    pub ppa: Option<PpaResult>,
    #[serde(default)]
    pub test_report: Vec<TestCaseResult>,
    #[serde(default)]
    pub synthesis_diagnosis: Option<SynthesisDiagnosis>,
    pub lineage: Lineage,
}

impl DesignCandidate {
    pub fn unevaluated(id: impl Into<String>, source: impl Into<String>, lineage: Lineage) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            correctness: None,
            ppa: None,
            test_report: Vec::new(),
            synthesis_diagnosis: None,
            lineage,
        }
    }

    /// A zero-correctness, failed-synthesis stand-in for a generation that
    /// produced no usable source.
    pub fn placeholder(id: impl Into<String>, total_cases: u32, lineage: Lineage) -> Result<Self> {
        Ok(Self {
            correctness: Some(CorrectnessScore::zero(total_cases)?),
            ppa: Some(PpaResult::SynthesisFailed),
            ..Self::unevaluated(id, String::new(), lineage)
        })
    }

    pub fn is_evaluated(&self) -> bool {
        self.correctness.is_some() && self.ppa.is_some()
    }

    /// Correctness value, or 0 when unevaluated.
    pub fn c(&self) -> f64 {
        self.correctness.map_or(0.0, |s| s.value)
    }

    pub fn ppa_or_failed(&self) -> PpaResult {
        self.ppa.unwrap_or(PpaResult::SynthesisFailed)
    }

    pub fn failing_cases(&self) -> impl Iterator<Item = &TestCaseResult> {
        self.test_report.iter().filter(|r| !r.passed)
    }
}

/// The point `(1 - c, m)` in objective space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub incorrectness: f64,
    pub ppa: PpaResult,
}

impl ObjectiveVector {
    pub fn new(correctness: f64, ppa: PpaResult) -> Self {
        Self {
            incorrectness: 1.0 - correctness,
            ppa,
        }
    }

    pub fn correctness(&self) -> f64 {
        1.0 - self.incorrectness
    }
}

pub fn objective_vector(candidate: &DesignCandidate) -> Result<ObjectiveVector> {
    match (candidate.correctness, candidate.ppa) {
        (Some(c), Some(ppa)) => Ok(ObjectiveVector::new(c.value, ppa)),
        _ => Err(Error::Unevaluated(candidate.id.clone())),
    }
}

pub fn objective_vectors(pool: &[DesignCandidate]) -> Result<Vec<ObjectiveVector>> {
    pool.iter().map(objective_vector).collect()
}

/// Strict Pareto dominance: `a` is no worse than `b` on all four coordinates
/// and strictly better on at least one.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    let mut strictly_better = false;
    let coords = std::iter::once(a.incorrectness.total_cmp(&b.incorrectness))
        .chain((0..3).map(|k| a.ppa.cmp_coord(&b.ppa, k)));
    for ord in coords {
        match ord {
            Ordering::Greater => return false,
            Ordering::Less => strictly_better = true,
            Ordering::Equal => {}
        }
    }
    strictly_better
}
