// SPDX-License-Identifier: Apache-2.0

//! Multi-objective evolutionary search over hardware designs, trading
//! functional correctness against area, delay and power.

pub mod backends;
pub mod bandit;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod gate;
pub mod objective;
pub mod operators;
pub mod pareto;
pub mod report;
pub mod runlog;
pub mod seeds;
pub mod templates;

pub use error::{Error, Result};
pub use objective::{dominates, CorrectnessScore, DesignCandidate, ObjectiveVector, PpaMetrics, PpaResult};
pub use bandit::OperatorCategory;
pub use operators::OperatorId;
pub use pareto::{non_dominated_sort, select_survivors, IntraLevelCriterion, ParetoLevels};
