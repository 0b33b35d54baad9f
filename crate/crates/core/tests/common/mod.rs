// SPDX-License-Identifier: Apache-2.0

//! Reference implementations used as test oracles. They work on plain
//! `[f64; 4]` objective tuples where a failed synthesis is encoded as
//! `+inf` in every PPA coordinate, independent of the library's enum form.

#![allow(dead_code)]

use coevolve::bandit::OperatorCategory;
use coevolve::objective::Lineage;
use coevolve::{CorrectnessScore, DesignCandidate, ObjectiveVector, PpaMetrics, PpaResult};
use rand::Rng;

/// `(c, Some([area, delay, power]))`, or `None` metrics for a failed synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pt {
    pub c: f64,
    pub m: Option<[f64; 3]>,
}

impl Pt {
    pub fn tuple(&self) -> [f64; 4] {
        match self.m {
            Some([a, d, p]) => [1.0 - self.c, a, d, p],
            None => [1.0 - self.c, f64::INFINITY, f64::INFINITY, f64::INFINITY],
        }
    }

    pub fn ppa(&self) -> PpaResult {
        match self.m {
            Some([a, d, p]) => PpaResult::Synthesized(PpaMetrics::new(a, d, p).unwrap()),
            None => PpaResult::SynthesisFailed,
        }
    }

    pub fn vector(&self) -> ObjectiveVector {
        ObjectiveVector::new(self.c, self.ppa())
    }
}

pub fn oracle_dominates(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Brute-force level peeling.
pub fn oracle_levels(points: &[[f64; 4]]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut levels = Vec::new();
    while !remaining.is_empty() {
        let level: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| oracle_dominates(&points[j], &points[i])))
            .collect();
        remaining.retain(|i| !level.contains(i));
        levels.push(level);
    }
    levels
}

/// Coarse grids make ties and dominance frequent.
pub fn random_pt<R: Rng>(rng: &mut R, failed_rate: f64) -> Pt {
    let c = rng.gen_range(0..=4) as f64 / 4.0;
    if rng.gen_bool(failed_rate) {
        return Pt { c, m: None };
    }
    let mut coord = || rng.gen_range(1..=5) as f64 * 0.5;
    Pt {
        c,
        m: Some([coord(), coord(), coord()]),
    }
}

fn choose(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Pass@k from exact integer binomials.
pub fn oracle_pass_at_k(n: u32, f: u32, k: u32) -> f64 {
    1.0 - choose(n - f, k) as f64 / choose(n, k) as f64
}

/// Category reward with failed metrics read as `+inf`.
pub fn oracle_reward(category: OperatorCategory, child: Pt, parent: Pt) -> bool {
    let (mc, mp) = (child.tuple(), parent.tuple());
    let ppa_better = mc[1..].iter().zip(&mp[1..]).all(|(x, y)| x <= y)
        && mc[1..].iter().zip(&mp[1..]).any(|(x, y)| x < y);
    match category {
        OperatorCategory::Correctness => child.c > parent.c,
        OperatorCategory::Ppa => ppa_better && child.c >= parent.c,
        OperatorCategory::Joint => child.c > parent.c && ppa_better,
    }
}

pub fn candidate(id: &str, passed: u32, total: u32, m: Option<[f64; 3]>) -> DesignCandidate {
    let pt = Pt {
        c: passed as f64 / total as f64,
        m,
    };
    DesignCandidate {
        correctness: Some(CorrectnessScore::new(passed, total).unwrap()),
        ppa: Some(pt.ppa()),
        ..DesignCandidate::unevaluated(id, format!("module {id}; endmodule"), Lineage::default())
    }
}

pub fn tuple_of(c: &DesignCandidate) -> [f64; 4] {
    Pt {
        c: c.c(),
        m: c.ppa_or_failed().metrics().map(|m| [m.area, m.delay, m.power]),
    }
    .tuple()
}

/// No member of `front` dominates another (oracle relation).
pub fn internally_non_dominated(front: &[DesignCandidate]) -> bool {
    let t: Vec<[f64; 4]> = front.iter().map(tuple_of).collect();
    t.iter()
        .all(|a| !t.iter().any(|b| oracle_dominates(b, a)))
}
