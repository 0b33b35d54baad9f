// SPDX-License-Identifier: Apache-2.0

//! Survivor selection: non-dominated sorting into Pareto levels, configurable
//! ranking inside a level, and level-weighted slot allocation with cascade.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{dominates, objective_vectors, DesignCandidate, ObjectiveVector};

/// Pareto levels as indices into the sorted pool. Level 0 is the front.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParetoLevels {
    pub levels: Vec<Vec<usize>>,
}

impl ParetoLevels {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn front(&self) -> &[usize] {
        self.levels.first().map_or(&[], Vec::as_slice)
    }

    /// Zero-based level of every pool member.
    pub fn level_of(&self, pool_len: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; pool_len];
        for (k, level) in self.levels.iter().enumerate() {
            for &i in level {
                out[i] = k;
            }
        }
        out
    }
}

/// Objective used by [`IntraLevelCriterion::SecondaryNds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Correctness,
    Area,
    Delay,
    Power,
}

impl Objective {
    /// `Less` means `a` is better.
    fn compare(self, a: &ObjectiveVector, b: &ObjectiveVector) -> Ordering {
        match self {
            Objective::Correctness => a.incorrectness.total_cmp(&b.incorrectness),
            Objective::Area => a.ppa.cmp_coord(&b.ppa, 0),
            Objective::Delay => a.ppa.cmp_coord(&b.ppa, 1),
            Objective::Power => a.ppa.cmp_coord(&b.ppa, 2),
        }
    }
}

/// How candidates inside one Pareto level are ordered.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraLevelCriterion {
    #[default]
    CorrectnessDescending,
    AreaAscending,
    DelayAscending,
    PowerAscending,
    PpaProductAscending,
    SecondaryNds(Vec<Objective>),
}

impl IntraLevelCriterion {
    pub fn validate(&self) -> Result<()> {
        if let IntraLevelCriterion::SecondaryNds(subset) = self {
            if subset.is_empty() {
                return Err(Error::Config("secondary NDS needs at least one objective".into()));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for IntraLevelCriterion {
    type Err = Error;

    /// Accepts `correctness`, `area`, `delay`, `power`, `product`, or
    /// `nds:<obj>,<obj>...`.
    fn from_str(s: &str) -> Result<Self> {
        let parse_obj = |o: &str| match o.trim() {
            "correctness" => Ok(Objective::Correctness),
            "area" => Ok(Objective::Area),
            "delay" => Ok(Objective::Delay),
            "power" => Ok(Objective::Power),
            other => Err(Error::Config(format!("unknown objective '{other}'"))),
        };
        let c = match s.trim() {
            "correctness" => IntraLevelCriterion::CorrectnessDescending,
            "area" => IntraLevelCriterion::AreaAscending,
            "delay" => IntraLevelCriterion::DelayAscending,
            "power" => IntraLevelCriterion::PowerAscending,
            "product" => IntraLevelCriterion::PpaProductAscending,
            other => match other.strip_prefix("nds:") {
                Some(list) => IntraLevelCriterion::SecondaryNds(
                    list.split(',').map(parse_obj).collect::<Result<_>>()?,
                ),
                None => return Err(Error::Config(format!("unknown criterion '{other}'"))),
            },
        };
        c.validate()?;
        Ok(c)
    }
}

/// Partitions `points` into Pareto levels by repeatedly peeling off the
/// members dominated by no other remaining member. Input order is kept
/// within each level.
pub fn non_dominated_sort(points: &[ObjectiveVector]) -> ParetoLevels {
    let n = points.len();
    // dominated_by[i]: how many points dominate i; dominating[i]: whom i dominates.
    let mut dominated_by = vec![0usize; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominating[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominating[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }

    let mut levels = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominating[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        levels.push(std::mem::replace(&mut current, next));
    }
    ParetoLevels { levels }
}

pub fn sort_candidates(pool: &[DesignCandidate]) -> Result<ParetoLevels> {
    Ok(non_dominated_sort(&objective_vectors(pool)?))
}

/// Orders `level` (indices into `points`) by `criterion`. Stable on ties.
pub fn rank_within_level(
    points: &[ObjectiveVector],
    level: &[usize],
    criterion: &IntraLevelCriterion,
) -> Vec<usize> {
    let mut ranked = level.to_vec();
    match criterion {
        IntraLevelCriterion::CorrectnessDescending => {
            ranked.sort_by(|&a, &b| Objective::Correctness.compare(&points[a], &points[b]))
        }
        IntraLevelCriterion::AreaAscending => {
            ranked.sort_by(|&a, &b| Objective::Area.compare(&points[a], &points[b]))
        }
        IntraLevelCriterion::DelayAscending => {
            ranked.sort_by(|&a, &b| Objective::Delay.compare(&points[a], &points[b]))
        }
        IntraLevelCriterion::PowerAscending => {
            ranked.sort_by(|&a, &b| Objective::Power.compare(&points[a], &points[b]))
        }
        IntraLevelCriterion::PpaProductAscending => ranked.sort_by(|&a, &b| {
            points[a]
                .ppa
                .product_or_inf()
                .total_cmp(&points[b].ppa.product_or_inf())
        }),
        IntraLevelCriterion::SecondaryNds(subset) => {
            let sub_dominates = |a: usize, b: usize| {
                let mut better = false;
                for obj in subset {
                    match obj.compare(&points[a], &points[b]) {
                        Ordering::Greater => return false,
                        Ordering::Less => better = true,
                        Ordering::Equal => {}
                    }
                }
                better
            };
            let mut secondary_level = vec![0usize; ranked.len()];
            let mut remaining: Vec<usize> = (0..ranked.len()).collect();
            let mut k = 0;
            while !remaining.is_empty() {
                let (front, rest): (Vec<usize>, Vec<usize>) =
                    remaining.iter().partition(|&&i| {
                        !remaining
                            .iter()
                            .any(|&j| j != i && sub_dominates(ranked[j], ranked[i]))
                    });
                for &i in &front {
                    secondary_level[i] = k;
                }
                remaining = rest;
                k += 1;
            }
            let mut order: Vec<usize> = (0..ranked.len()).collect();
            order.sort_by_key(|&i| secondary_level[i]);
            ranked = order.into_iter().map(|i| ranked[i]).collect();
        }
    }
    ranked
}

/// Level weight `1 / (k + 1)` for one-based level `k`.
pub fn level_weight(k: usize) -> f64 {
    1.0 / (k as f64 + 1.0)
}

/// Slots per level, proportional to the level weights and rounded half-up,
/// then corrected so the total is exactly `capacity`.
pub fn allocate_slots(level_count: usize, capacity: usize) -> Result<Vec<usize>> {
    if level_count == 0 {
        return Err(Error::InvalidArgument("slot allocation needs at least one level".into()));
    }
    let total_weight: f64 = (1..=level_count).map(level_weight).sum();
    let mut slots: Vec<usize> = (1..=level_count)
        .map(|k| (level_weight(k) / total_weight * capacity as f64 + 0.5).floor() as usize)
        .collect();

    let mut sum: usize = slots.iter().sum();
    let mut k = 0;
    while sum < capacity {
        slots[k % level_count] += 1;
        sum += 1;
        k += 1;
    }
    let mut k = level_count;
    while sum > capacity {
        k = if k == 0 { level_count - 1 } else { k - 1 };
        if slots[k] > 0 {
            slots[k] -= 1;
            sum -= 1;
        }
    }
    Ok(slots)
}

/// Picks `min(capacity, |points|)` indices. Levels are filled in rank order up
/// to their slots; unused slots cascade to the next level, and any capacity
/// left once the levels run out is backfilled level by level in rank order.
pub fn select_survivor_indices(
    points: &[ObjectiveVector],
    capacity: usize,
    criterion: &IntraLevelCriterion,
) -> Vec<usize> {
    let target = capacity.min(points.len());
    if target == 0 {
        return Vec::new();
    }
    let levels = non_dominated_sort(points);
    let ranked: Vec<Vec<usize>> = levels
        .levels
        .iter()
        .map(|level| rank_within_level(points, level, criterion))
        .collect();
    // Non-empty pool always yields at least one level.
    let slots = allocate_slots(ranked.len(), capacity).expect("levels present");

    let mut taken = vec![0usize; ranked.len()];
    let mut selected = Vec::with_capacity(target);
    let mut carry = 0;
    for (k, level) in ranked.iter().enumerate() {
        let budget = slots[k] + carry;
        let take = budget.min(level.len()).min(target - selected.len());
        selected.extend_from_slice(&level[..take]);
        taken[k] = take;
        carry = budget - take;
    }
    for (k, level) in ranked.iter().enumerate() {
        if selected.len() == target {
            break;
        }
        let take = (level.len() - taken[k]).min(target - selected.len());
        selected.extend_from_slice(&level[taken[k]..taken[k] + take]);
    }
    selected
}

pub fn select_survivors(
    pool: &[DesignCandidate],
    capacity: usize,
    criterion: &IntraLevelCriterion,
) -> Result<Vec<DesignCandidate>> {
    let points = objective_vectors(pool)?;
    Ok(select_survivor_indices(&points, capacity, criterion)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Non-dominated subset of `pool`, ordered by `criterion`.
pub fn pareto_front(
    pool: &[DesignCandidate],
    criterion: &IntraLevelCriterion,
) -> Result<Vec<DesignCandidate>> {
    let points = objective_vectors(pool)?;
    let levels = non_dominated_sort(&points);
    Ok(rank_within_level(&points, levels.front(), criterion)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}
