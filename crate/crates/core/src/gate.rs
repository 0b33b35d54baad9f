// SPDX-License-Identifier: Apache-2.0

//! Annealed correctness gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::DesignCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSchedule {
    pub theta_min: f64,
    pub theta_max: f64,
    pub alpha: f64,
    pub total_generations: u32,
}

impl GateSchedule {
    pub fn new(theta_min: f64, theta_max: f64, alpha: f64, total_generations: u32) -> Result<Self> {
        let s = Self {
            theta_min,
            theta_max,
            alpha,
            total_generations,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_generations(total_generations: u32) -> Self {
        Self {
            total_generations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.theta_min) || !unit(self.theta_max) || self.theta_min > self.theta_max {
            return Err(Error::Config(format!(
                "gate range [{}, {}] must satisfy 0 <= min <= max <= 1",
                self.theta_min, self.theta_max
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("gate alpha must be positive, got {}", self.alpha)));
        }
        if self.total_generations == 0 {
            return Err(Error::Config("gate needs at least one generation".into()));
        }
        Ok(())
    }

    /// `θ_t = θ_min + (θ_max − θ_min)·(t/G)^α` for `t` in `1..=G`.
    pub fn threshold(&self, t: u32) -> Result<f64> {
        if t == 0 || t > self.total_generations {
            return Err(Error::GenerationOutOfRange {
                t,
                total: self.total_generations,
            });
        }
        if t == self.total_generations {
            return Ok(self.theta_max);
        }
        let progress = f64::from(t) / f64::from(self.total_generations);
        let theta = self.theta_min + (self.theta_max - self.theta_min) * progress.powf(self.alpha);
        Ok(theta.min(self.theta_max))
    }
}

impl Default for GateSchedule {
    fn default() -> Self {
        Self {
            theta_min: 0.25,
            theta_max: 1.0,
            alpha: 2.0,
            total_generations: 10,
        }
    }
}

pub fn gate_threshold(schedule: &GateSchedule, t: u32) -> Result<f64> {
    schedule.threshold(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub gated: Vec<DesignCandidate>,
    pub rejected: Vec<DesignCandidate>,
    /// Set when nobody met the threshold and the top-by-correctness
    /// candidates were admitted instead.
    pub fallback: bool,
}

/// Keeps candidates with `c ≥ theta`, in pool order. If that leaves nothing,
/// admits the `min(|pool|, capacity)` most correct candidates instead.
pub fn apply_gate(pool: Vec<DesignCandidate>, theta: f64, capacity: usize) -> GateOutcome {
    let (gated, rejected): (Vec<_>, Vec<_>) = pool.into_iter().partition(|c| c.c() >= theta);
    if !gated.is_empty() || rejected.is_empty() {
        return GateOutcome {
            gated,
            rejected,
            fallback: false,
        };
    }
    let mut order: Vec<usize> = (0..rejected.len()).collect();
    order.sort_by(|&a, &b| rejected[b].c().total_cmp(&rejected[a].c()));
    let keep = capacity.min(rejected.len()).max(1);
    let mut admitted = vec![false; rejected.len()];
    for &i in &order[..keep] {
        admitted[i] = true;
    }
    let mut gated = Vec::with_capacity(keep);
    let mut rest = Vec::new();
    let mut by_rank: Vec<Option<DesignCandidate>> = rejected.into_iter().map(Some).collect();
    for &i in &order[..keep] {
        gated.push(by_rank[i].take().expect("each index admitted once"));
    }
    for (i, c) in by_rank.into_iter().enumerate() {
        if !admitted[i] {
            rest.push(c.expect("not admitted"));
        }
    }
    GateOutcome {
        gated,
        rejected: rest,
        fallback: true,
    }
}
