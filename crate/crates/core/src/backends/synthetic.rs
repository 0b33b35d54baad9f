// SPDX-License-Identifier: Apache-2.0

//! A deterministic stand-in for the model, simulator and synthesizer.
//!
//! A design is a genome of 32 function bits, 8 cost bits and an architecture
//! tag. Test case `i` passes iff function bit `i` matches a hidden target.
//! Synthesis fails iff all cost bits are set; otherwise each tag has base
//! area/delay/power, every set cost bit adds area and power, and every
//! mismatched function bit adds delay. Tag 2 is fast but large, tag 3 small
//! but slow, so the metrics trade off against each other.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GenerationBackend;
use crate::error::{Error, Result};
use crate::evaluation::{DesignEvaluator, Evaluation, SynthesisDiagnosis, TestCaseResult};
use crate::objective::{CorrectnessScore, PpaMetrics, PpaResult};
use crate::operators::{ArchitectureStrategy, GenerationRequest, OperatorId, ParentContext, RequestKind};
use crate::seeds::stream_seed;

pub const FUNC_BITS: usize = 32;
pub const COST_BITS: usize = 8;
pub const TAG_COUNT: u8 = 5;
const ILLEGAL_COST: u8 = 0xFF;

/// (area, delay, power) per architecture tag.
pub const BASE_METRICS: [(f64, f64, f64); TAG_COUNT as usize] = [
    (100.0, 1.0, 50.0),
    (90.0, 1.2, 45.0),
    (140.0, 0.6, 70.0),
    (80.0, 1.4, 40.0),
    (95.0, 1.1, 42.0),
];
const AREA_PER_COST_BIT: f64 = 10.0;
const POWER_PER_COST_BIT: f64 = 5.0;
const DELAY_PER_MISMATCH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SyntheticGenome {
    pub func_bits: [bool; FUNC_BITS],
    pub cost_bits: [bool; COST_BITS],
    pub arch_tag: u8,
}

fn bits_of<const N: usize>(value: u64) -> [bool; N] {
    std::array::from_fn(|i| value >> i & 1 == 1)
}

fn word_of(bits: &[bool]) -> u64 {
    bits.iter()
        .enumerate()
        .fold(0, |acc, (i, &b)| acc | (u64::from(b) << i))
}

impl SyntheticGenome {
    pub fn from_words(func: u32, cost: u8, arch_tag: u8) -> Self {
        Self {
            func_bits: bits_of(u64::from(func)),
            cost_bits: bits_of(u64::from(cost)),
            arch_tag: arch_tag % TAG_COUNT,
        }
    }

    pub fn func_word(&self) -> u32 {
        word_of(&self.func_bits) as u32
    }

    pub fn cost_word(&self) -> u8 {
        word_of(&self.cost_bits) as u8
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_words(rng.gen(), rng.gen(), rng.gen_range(0..TAG_COUNT))
    }

    pub fn cost_popcount(&self) -> u32 {
        self.cost_bits.iter().filter(|&&b| b).count() as u32
    }

    pub fn mismatches(&self, target: &[bool; FUNC_BITS]) -> Vec<usize> {
        (0..FUNC_BITS).filter(|&i| self.func_bits[i] != target[i]).collect()
    }

    /// Canonical text form stored as a candidate's source.
    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn decode(text: &str) -> Result<Self> {
        text.parse()
    }
}

impl fmt::Display for SyntheticGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = |bs: &[bool]| bs.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>();
        write!(
            f,
            "SYNTH v1 func={} cost={} tag={}",
            bits(&self.func_bits),
            bits(&self.cost_bits),
            self.arch_tag
        )
    }
}

impl FromStr for SyntheticGenome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("not a synthetic genome: '{}'", s.trim()));
        let mut fields = s.split_whitespace();
        if fields.next() != Some("SYNTH") || fields.next() != Some("v1") {
            return Err(bad());
        }
        let mut take = |key: &str| fields.next().and_then(|f| f.strip_prefix(key)).ok_or_else(bad);
        let parse_bits = |text: &str, out: &mut [bool]| -> Result<()> {
            if text.len() != out.len() {
                return Err(bad());
            }
            for (slot, ch) in out.iter_mut().zip(text.chars()) {
                *slot = match ch {
                    '0' => false,
                    '1' => true,
                    _ => return Err(bad()),
                };
            }
            Ok(())
        };
        let mut g = SyntheticGenome {
            func_bits: [false; FUNC_BITS],
            cost_bits: [false; COST_BITS],
            arch_tag: 0,
        };
        parse_bits(take("func=")?, &mut g.func_bits)?;
        parse_bits(take("cost=")?, &mut g.cost_bits)?;
        g.arch_tag = take("tag=")?.parse().map_err(|_| bad())?;
        if g.arch_tag >= TAG_COUNT || fields.next().is_some() {
            return Err(bad());
        }
        Ok(g)
    }
}

/// Correctness, PPA and the per-case report of `genome` against `target`.
pub fn synthetic_evaluate(
    genome: &SyntheticGenome,
    target: &[bool; FUNC_BITS],
) -> (CorrectnessScore, PpaResult, Vec<TestCaseResult>) {
    let bit = |b: bool| if b { "1" } else { "0" };
    let report: Vec<TestCaseResult> = (0..FUNC_BITS)
        .map(|i| {
            if genome.func_bits[i] == target[i] {
                TestCaseResult::pass(i.to_string())
            } else {
                TestCaseResult::fail(
                    i.to_string(),
                    format!("out[{i}]"),
                    bit(target[i]),
                    bit(genome.func_bits[i]),
                    Some((10 * i).to_string()),
                )
            }
        })
        .collect();
    let matched = report.iter().filter(|r| r.passed).count() as u32;
    let score = CorrectnessScore::new(matched, FUNC_BITS as u32).expect("32 cases");

    let ppa = if genome.cost_word() == ILLEGAL_COST {
        PpaResult::SynthesisFailed
    } else {
        let (area, delay, power) = BASE_METRICS[genome.arch_tag as usize];
        let pop = f64::from(genome.cost_popcount());
        PpaResult::Synthesized(PpaMetrics {
            area: area + AREA_PER_COST_BIT * pop,
            delay: delay + DELAY_PER_MISMATCH * f64::from(FUNC_BITS as u32 - matched),
            power: power + POWER_PER_COST_BIT * pop,
        })
    };
    (score, ppa, report)
}

/// A parent as seen by the synthetic operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParent {
    pub genome: SyntheticGenome,
    pub correctness: f64,
    pub ppa: PpaResult,
    pub mismatches: Vec<usize>,
}

fn flip_one_mismatch<R: Rng + ?Sized>(g: &mut SyntheticGenome, mismatches: &[usize], rng: &mut R) {
    if let Some(&i) = mismatches.choose(rng) {
        g.func_bits[i] = !g.func_bits[i];
    }
}

fn clear_set_cost_bits<R: Rng + ?Sized>(g: &mut SyntheticGenome, count: usize, rng: &mut R) {
    let set: Vec<usize> = (0..COST_BITS).filter(|&i| g.cost_bits[i]).collect();
    for &i in set.choose_multiple(rng, count) {
        g.cost_bits[i] = false;
    }
}

/// Tag with the smallest base delay other than `current`.
fn fastest_other_tag(current: u8) -> u8 {
    (0..TAG_COUNT)
        .filter(|&t| t != current)
        .min_by(|&a, &b| BASE_METRICS[a as usize].1.total_cmp(&BASE_METRICS[b as usize].1))
        .expect("more than one tag")
}

/// Applies `operator` to `parents`. Arity must match the operator.
pub fn synthetic_operator_apply<R: Rng + ?Sized>(
    operator: OperatorId,
    parents: &[SyntheticParent],
    rng: &mut R,
) -> Result<SyntheticGenome> {
    if parents.len() != operator.arity() {
        return Err(Error::InvalidArgument(format!(
            "{operator} takes {} parent(s), got {}",
            operator.arity(),
            parents.len()
        )));
    }
    if operator == OperatorId::Explore {
        return Ok(SyntheticGenome::random(rng));
    }
    let first = &parents[0];
    let mut g = first.genome;
    match operator {
        OperatorId::Fix | OperatorId::PpaAwareFix => flip_one_mismatch(&mut g, &first.mismatches, rng),
        OperatorId::Simplify => {
            clear_set_cost_bits(&mut g, 2, rng);
            if rng.gen_bool(0.5) {
                flip_one_mismatch(&mut g, &first.mismatches, rng);
            }
        }
        OperatorId::Optimize => clear_set_cost_bits(&mut g, 1, rng),
        OperatorId::Restructure => g.arch_tag = fastest_other_tag(g.arch_tag),
        OperatorId::ArchitectureFusion => {
            let second = &parents[1];
            let functional = if second.correctness > first.correctness { second } else { first };
            let cheap = if second.ppa.product_or_inf() < first.ppa.product_or_inf() {
                second
            } else {
                first
            };
            g.func_bits = functional.genome.func_bits;
            g.cost_bits = cheap.genome.cost_bits;
            g.arch_tag = cheap.genome.arch_tag;
        }
        OperatorId::Explore => unreachable!("handled above"),
    }
    Ok(g)
}

/// Model, simulator and synthesizer over the synthetic genome space.
#[derive(Debug, Clone)]
pub struct SyntheticDesignSpace {
    target: [bool; FUNC_BITS],
    /// Chance that an initial design is exactly right.
    pub init_exact_probability: f64,
    /// Upper bound on wrong bits in an imperfect initial design.
    pub init_max_errors: usize,
}

impl SyntheticDesignSpace {
    pub fn new(target: u32) -> Self {
        Self {
            target: bits_of(u64::from(target)),
            init_exact_probability: 0.3,
            init_max_errors: 6,
        }
    }

    /// Target drawn from the run seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[0x007a_26e7]));
        Self::new(rng.gen())
    }

    pub fn target(&self) -> &[bool; FUNC_BITS] {
        &self.target
    }

    fn initial_genome<R: Rng + ?Sized>(&self, strategy: &str, rng: &mut R) -> SyntheticGenome {
        let tag = ArchitectureStrategy::defaults()
            .iter()
            .position(|s| s.name == strategy)
            .unwrap_or_else(|| strategy.bytes().map(usize::from).sum::<usize>()) as u8
            % TAG_COUNT;
        let mut g = SyntheticGenome {
            func_bits: self.target,
            cost_bits: bits_of(u64::from(rng.gen::<u8>())),
            arch_tag: tag,
        };
        if !rng.gen_bool(self.init_exact_probability) {
            let errors = rng.gen_range(1..=self.init_max_errors.max(1));
            let positions: Vec<usize> = (0..FUNC_BITS).collect();
            for &i in positions.choose_multiple(rng, errors) {
                g.func_bits[i] = !g.func_bits[i];
            }
        }
        g
    }

    fn parent_of(&self, ctx: &ParentContext) -> Option<SyntheticParent> {
        let genome = SyntheticGenome::decode(&ctx.source).ok()?;
        Some(SyntheticParent {
            genome,
            correctness: ctx.correctness,
            ppa: ctx.ppa,
            mismatches: ctx.failing_cases.iter().filter_map(|c| c.parse().ok()).collect(),
        })
    }
}

fn reply_with(genome: &SyntheticGenome) -> String {
    format!("Here is the design.\n```\n{}\n```\n", genome.encode())
}

const NO_DESIGN: &str = "I could not make sense of the design I was given.";

impl GenerationBackend for SyntheticDesignSpace {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(request.metadata.seed);
        match &request.metadata.kind {
            RequestKind::StrategyQuery => {
                let names: Vec<String> = ArchitectureStrategy::defaults()
                    .into_iter()
                    .map(|s| s.name)
                    .collect();
                Ok(format!("STRATEGIES: {}", names.join(", ")))
            }
            RequestKind::Init { strategy } => Ok(reply_with(&self.initial_genome(strategy, &mut rng))),
            RequestKind::Operator(op) => {
                let parents: Option<Vec<SyntheticParent>> =
                    request.parents.iter().map(|p| self.parent_of(p)).collect();
                match parents {
                    Some(parents) => Ok(reply_with(&synthetic_operator_apply(*op, &parents, &mut rng)?)),
                    None => Ok(NO_DESIGN.into()),
                }
            }
            RequestKind::Repair => match request.parents.first().and_then(|p| self.parent_of(p)) {
                Some(parent) => {
                    let mut g = parent.genome;
                    if g.cost_word() == ILLEGAL_COST {
                        clear_set_cost_bits(&mut g, 1, &mut rng);
                    }
                    Ok(reply_with(&g))
                }
                None => Ok(NO_DESIGN.into()),
            },
            RequestKind::Testbench => Err(Error::BackendProtocol(
                "the synthetic backend does not write testbenches".into(),
            )),
        }
    }
}

impl DesignEvaluator for SyntheticDesignSpace {
    fn case_count(&self) -> u32 {
        FUNC_BITS as u32
    }

    fn evaluate(&self, source: &str) -> Result<Evaluation> {
        let Ok(genome) = SyntheticGenome::decode(source) else {
            return Evaluation::empty(FUNC_BITS as u32);
        };
        let (correctness, ppa, test_report) = synthetic_evaluate(&genome, &self.target);
        let digest = match &ppa {
            PpaResult::SynthesisFailed => {
                "synthesis failed: multi-driver conflict (all cost bits set)".to_string()
            }
            PpaResult::Synthesized(m) => format!(
                "cells={} area={} delay={} power={}",
                32 + 4 * genome.cost_popcount(),
                m.area,
                m.delay,
                m.power
            ),
        };
        let diagnosis = SynthesisDiagnosis {
            cell_count: if ppa.is_failed() { 0 } else { 32 + 4 * u64::from(genome.cost_popcount()) },
            critical_path: Vec::new(),
            resource_notes: (0..COST_BITS)
                .filter(|&i| genome.cost_bits[i])
                .map(|i| format!("redundant resource {i} present"))
                .collect(),
            raw_log_digest: digest,
        };
        Ok(Evaluation {
            correctness,
            ppa,
            test_report,
            diagnosis: Some(diagnosis),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target_bits(word: u32) -> [bool; FUNC_BITS] {
        bits_of(u64::from(word))
    }

    #[test]
    fn exact_genome_on_tag3() {
        let target = 0xDEAD_BEEF;
        let g = SyntheticGenome::from_words(target, 0, 3);
        let (c, m, report) = synthetic_evaluate(&g, &target_bits(target));
        assert_eq!(c.value, 1.0);
        assert_eq!(m, PpaResult::Synthesized(PpaMetrics::new(80.0, 1.4, 40.0).unwrap()));
        assert!(report.iter().all(|r| r.passed));
    }

    #[test]
    fn illegal_cost_pattern_fails_synthesis() {
        for func in [0u32, 0xFFFF_FFFF, 0x1234_5678] {
            let g = SyntheticGenome::from_words(func, 0xFF, 1);
            assert!(synthetic_evaluate(&g, &target_bits(0)).1.is_failed());
        }
    }

    #[test]
    fn half_matched_tag0_two_cost_bits() {
        let target = 0u32;
        let g = SyntheticGenome::from_words(0xFFFF_0000, 0b0000_0101, 0);
        let (c, m, report) = synthetic_evaluate(&g, &target_bits(target));
        assert_eq!(c.value, 0.5);
        let m = m.metrics().copied().unwrap();
        assert!((m.area - 120.0).abs() < 1e-12);
        assert!((m.delay - 1.8).abs() < 1e-12);
        assert!((m.power - 60.0).abs() < 1e-12);
        let failing: Vec<_> = report.iter().filter(|r| !r.passed).map(|r| r.case_id.clone()).collect();
        assert_eq!(failing, (16..32).map(|i| i.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn encoding_is_canonical() {
        let g = SyntheticGenome::from_words(1, 0x80, 4);
        assert_eq!(
            g.encode(),
            "SYNTH v1 func=10000000000000000000000000000000 cost=00000001 tag=4"
        );
        assert_eq!(SyntheticGenome::decode(&g.encode()).unwrap(), g);
        assert!(SyntheticGenome::decode("SYNTH v1 func=10 cost=00000001 tag=4").is_err());
        assert!(SyntheticGenome::decode(&g.encode().replace("tag=4", "tag=5")).is_err());
        assert!(SyntheticGenome::decode("module x; endmodule").is_err());
    }

    fn parent(g: SyntheticGenome, target: u32) -> SyntheticParent {
        let t = target_bits(target);
        let (c, ppa, _) = synthetic_evaluate(&g, &t);
        SyntheticParent {
            genome: g,
            correctness: c.value,
            ppa,
            mismatches: g.mismatches(&t),
        }
    }

    #[test]
    fn fix_flips_exactly_one_mismatch() {
        let target = 0u32;
        let g = SyntheticGenome::from_words((1 << 3) | (1 << 17), 0, 0);
        let p = parent(g, target);
        assert_eq!(p.mismatches, vec![3, 17]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let child = synthetic_operator_apply(OperatorId::Fix, std::slice::from_ref(&p), &mut rng).unwrap();
            let w = child.func_word();
            assert!(w == 1 << 3 || w == 1 << 17);
        }
    }

    #[test]
    fn fix_without_mismatches_is_identity() {
        let p = parent(SyntheticGenome::from_words(7, 3, 2), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for op in [OperatorId::Fix, OperatorId::PpaAwareFix] {
            assert_eq!(synthetic_operator_apply(op, std::slice::from_ref(&p), &mut rng).unwrap(), p.genome);
        }
    }

    #[test]
    fn optimize_clears_one_cost_bit() {
        let p = parent(SyntheticGenome::from_words(0, 0b1000_0000, 0), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let child = synthetic_operator_apply(OperatorId::Optimize, &[p], &mut rng).unwrap();
        assert_eq!(child.cost_word(), 0);
    }

    #[test]
    fn restructure_moves_to_fastest_other_tag() {
        let on = |tag| {
            let p = parent(SyntheticGenome::from_words(0, 0, tag), 0);
            synthetic_operator_apply(OperatorId::Restructure, &[p], &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap()
                .arch_tag
        };
        assert_eq!(on(0), 2);
        assert_eq!(on(3), 2);
        assert_eq!(on(2), 0);
    }

    #[test]
    fn fusion_takes_function_and_cost_from_the_right_parents() {
        let target = 0u32;
        // ~0.9 correct, expensive.
        let a = parent(SyntheticGenome::from_words(0b111, 0b0111_1111, 2), target);
        // 0.5 correct, cheap.
        let b = parent(SyntheticGenome::from_words(0xFFFF_0000, 0, 3), target);
        assert!(a.correctness > b.correctness);
        assert!(a.ppa.product_or_inf() > b.ppa.product_or_inf());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let child =
            synthetic_operator_apply(OperatorId::ArchitectureFusion, &[a.clone(), b.clone()], &mut rng).unwrap();
        assert_eq!(child.func_bits, a.genome.func_bits);
        assert_eq!(child.cost_bits, b.genome.cost_bits);
        assert_eq!(child.arch_tag, 3);
    }

    #[test]
    fn arity_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synthetic_operator_apply(OperatorId::Fix, &[], &mut rng).is_err());
        assert!(synthetic_operator_apply(OperatorId::Explore, &[], &mut rng).is_ok());
    }

    #[test]
    fn unparseable_source_scores_zero() {
        let space = SyntheticDesignSpace::new(0);
        let e = space.evaluate("").unwrap();
        assert_eq!(e.correctness.passed, 0);
        assert!(e.ppa.is_failed());
    }

    #[test]
    fn testbench_requests_are_refused() {
        let space = SyntheticDesignSpace::new(0);
        let req = GenerationRequest {
            prompt: String::new(),
            sampling: Default::default(),
            metadata: crate::operators::RequestMetadata {
                kind: RequestKind::Testbench,
                parent_ids: vec![],
                generation: 0,
                seed: 0,
            },
            parents: vec![],
        };
        assert!(space.generate(&req).is_err());
    }
}
