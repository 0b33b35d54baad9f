// SPDX-License-Identifier: Apache-2.0

//! Adaptive operator selection.
//!
//! Each operator (arm) is scored by `Q + c·√(ln T / n)` where `Q` is its mean
//! reward, `n` its selection count and `T` the total selections over all
//! arms. Arms are drawn from a softmax over the scores. Unvisited arms are
//! drawn uniformly among themselves before any visited arm.
//!
//! Rewards are binary and depend on the operator's category: correctness
//! operators pay on a correctness gain, PPA operators on a Pareto improvement
//! of the metrics without correctness regression, joint operators only when
//! both improve.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::objective::{PpaMetrics, PpaResult};

/// Score reported for an arm that has never been selected.
pub const UNVISITED_SCORE: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorCategory {
    Correctness,
    Ppa,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorStats {
    pub mean_reward: f64,
    pub selections: u64,
    pub cumulative_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub arms: Vec<OperatorStats>,
    pub total_selections: u64,
    pub explore_coef: f64,
    pub softmax_temperature: f64,
}

impl BanditState {
    pub fn new(arm_count: usize, explore_coef: f64, softmax_temperature: f64) -> Self {
        Self {
            arms: vec![OperatorStats::default(); arm_count],
            total_selections: 0,
            explore_coef,
            softmax_temperature,
        }
    }

    pub fn with_defaults(arm_count: usize) -> Self {
        Self::new(arm_count, 2.0, 1.0)
    }

    pub fn ucb_score(&self, arm: usize) -> f64 {
        let stats = &self.arms[arm];
        if stats.selections == 0 || self.total_selections == 0 {
            return UNVISITED_SCORE;
        }
        let total = self.total_selections as f64;
        stats.mean_reward + self.explore_coef * (total.ln() / stats.selections as f64).sqrt()
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.arms.len()).map(|i| self.ucb_score(i)).collect()
    }

    /// Selection probabilities over all arms.
    pub fn probabilities(&self) -> Vec<f64> {
        let scores = self.scores();
        let unvisited = scores.iter().filter(|s| s.is_infinite()).count();
        if unvisited > 0 {
            let p = 1.0 / unvisited as f64;
            return scores
                .iter()
                .map(|s| if s.is_infinite() { p } else { 0.0 })
                .collect();
        }
        softmax(&scores, self.softmax_temperature)
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        assert!(!self.arms.is_empty(), "bandit has no arms");
        let probs = self.probabilities();
        WeightedIndex::new(&probs)
            .expect("probabilities are finite, non-negative and sum to one")
            .sample(rng)
    }

    pub fn record(&mut self, arm: usize, reward: bool) {
        let stats = &mut self.arms[arm];
        stats.selections += 1;
        if reward {
            stats.cumulative_reward += 1.0;
        }
        stats.mean_reward = stats.cumulative_reward / stats.selections as f64;
        self.total_selections += 1;
    }
}

pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `m' < m` read as a Pareto improvement of the metrics. A synthesized child
/// improves on a failed parent; a failed child never improves.
pub fn ppa_improved(child: &PpaResult, parent: &PpaResult) -> bool {
    match (child, parent) {
        (PpaResult::SynthesisFailed, _) => false,
        (PpaResult::Synthesized(_), PpaResult::SynthesisFailed) => true,
        (PpaResult::Synthesized(a), PpaResult::Synthesized(b)) => {
            let (ca, cb) = ([a.area, a.delay, a.power], [b.area, b.delay, b.power]);
            ca.iter().zip(&cb).all(|(x, y)| x <= y) && ca.iter().zip(&cb).any(|(x, y)| x < y)
        }
    }
}

/// Binary category-specific reward.
pub fn compute_reward(
    category: OperatorCategory,
    child: (f64, &PpaResult),
    parent: (f64, &PpaResult),
) -> bool {
    let (c_child, m_child) = child;
    let (c_parent, m_parent) = parent;
    match category {
        OperatorCategory::Correctness => c_child > c_parent,
        OperatorCategory::Ppa => ppa_improved(m_child, m_parent) && c_child >= c_parent,
        OperatorCategory::Joint => c_child > c_parent && ppa_improved(m_child, m_parent),
    }
}

/// Componentwise best of several `(c, m)` points: maximum correctness and the
/// componentwise minimum over synthesized metrics (failed if none
/// synthesized).
pub fn componentwise_best<'a, I>(points: I) -> Option<(f64, PpaResult)>
where
    I: IntoIterator<Item = (f64, &'a PpaResult)>,
{
    let mut best: Option<(f64, PpaResult)> = None;
    for (c, m) in points {
        best = Some(match best {
            None => (c, *m),
            Some((bc, bm)) => {
                let merged = match (bm, m) {
                    (PpaResult::Synthesized(a), PpaResult::Synthesized(b)) => {
                        PpaResult::Synthesized(PpaMetrics {
                            area: a.area.min(b.area),
                            delay: a.delay.min(b.delay),
                            power: a.power.min(b.power),
                        })
                    }
                    (PpaResult::Synthesized(a), PpaResult::SynthesisFailed) => {
                        PpaResult::Synthesized(a)
                    }
                    (PpaResult::SynthesisFailed, other) => *other,
                };
                (bc.max(c), merged)
            }
        });
    }
    best
}
