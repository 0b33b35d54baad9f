// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;

use coevolve::backends::synthetic::{synthetic_evaluate, synthetic_operator_apply, SyntheticParent};
use coevolve::backends::{SyntheticDesignSpace, SyntheticGenome};
use coevolve::bandit::{softmax, BanditState};
use coevolve::evaluation::{parse_ppa_report, ppa_product, score_correctness, PpaFormat, TestCaseResult};
use coevolve::gate::{apply_gate, GateSchedule};
use coevolve::operators::{
    build_prompt, multi_arch_init, ArchitectureStrategy, InitConfig, OperatorId, PromptInputs,
    Sampling,
};
use coevolve::pareto::{
    non_dominated_sort, rank_within_level, select_survivor_indices, Objective,
};
use coevolve::report::pass_at_k;
use coevolve::templates::TemplateSet;
use coevolve::{dominates, IntraLevelCriterion, ObjectiveVector, PpaMetrics, PpaResult};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pt() -> impl Strategy<Value = Pt> {
    let coord = (1u32..=5).prop_map(|v| v as f64 * 0.5);
    (
        0u32..=4,
        prop::option::weighted(0.85, [coord.clone(), coord.clone(), coord]),
    )
        .prop_map(|(c, m)| Pt { c: c as f64 / 4.0, m })
}

fn criterion() -> impl Strategy<Value = IntraLevelCriterion> {
    prop_oneof![
        Just(IntraLevelCriterion::CorrectnessDescending),
        Just(IntraLevelCriterion::AreaAscending),
        Just(IntraLevelCriterion::DelayAscending),
        Just(IntraLevelCriterion::PowerAscending),
        Just(IntraLevelCriterion::PpaProductAscending),
        Just(IntraLevelCriterion::SecondaryNds(vec![Objective::Area, Objective::Power])),
    ]
}

fn sentinel_dominates(a: &Pt, b: &Pt, big: f64) -> bool {
    let t = |p: &Pt| match p.m {
        Some([x, y, z]) => [1.0 - p.c, x, y, z],
        None => [1.0 - p.c, big, big, big],
    };
    oracle_dominates(&t(a), &t(b))
}

proptest! {
    #[test]
    fn dominance_is_a_strict_partial_order(a in pt(), b in pt(), c in pt()) {
        let (va, vb, vc) = (a.vector(), b.vector(), c.vector());
        prop_assert!(!dominates(&va, &va));
        prop_assert!(!(dominates(&va, &vb) && dominates(&vb, &va)));
        if dominates(&va, &vb) && dominates(&vb, &vc) {
            prop_assert!(dominates(&va, &vc));
        }
    }

    #[test]
    fn failed_synthesis_acts_as_a_large_sentinel(pool in prop::collection::vec(pt(), 1..20)) {
        let big = 1e9;
        for a in &pool {
            for b in &pool {
                prop_assert_eq!(dominates(&a.vector(), &b.vector()), sentinel_dominates(a, b, big));
            }
        }
    }

    #[test]
    fn sorting_matches_peel_off(pool in prop::collection::vec(pt(), 0..25)) {
        let vectors: Vec<ObjectiveVector> = pool.iter().map(Pt::vector).collect();
        let tuples: Vec<[f64; 4]> = pool.iter().map(Pt::tuple).collect();
        prop_assert_eq!(non_dominated_sort(&vectors).levels, oracle_levels(&tuples));
    }

    #[test]
    fn survivors_are_sized_ranked_and_deterministic(
        pool in prop::collection::vec(pt(), 0..25),
        n in 0usize..15,
        crit in criterion(),
    ) {
        let points: Vec<ObjectiveVector> = pool.iter().map(Pt::vector).collect();
        let picked = select_survivor_indices(&points, n, &crit);
        prop_assert_eq!(picked.len(), n.min(points.len()));
        prop_assert_eq!(&picked, &select_survivor_indices(&points, n, &crit));
        let mut unique = picked.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(unique.len(), picked.len());

        // Within a level, every survivor outranks every discarded member.
        for level in non_dominated_sort(&points).levels {
            let ranked = rank_within_level(&points, &level, &crit);
            let kept: Vec<usize> = (0..ranked.len()).filter(|&r| picked.contains(&ranked[r])).collect();
            if let (Some(&last_kept), Some(first_dropped)) =
                (kept.last(), (0..ranked.len()).find(|r| !kept.contains(r)))
            {
                prop_assert!(last_kept < first_dropped || kept.is_empty());
            }
        }
    }

    #[test]
    fn gate_threshold_is_monotone_and_pinned(
        lo in 0.0f64..=1.0,
        span in 0.0f64..=1.0,
        alpha in 0.05f64..8.0,
        g in 1u32..80,
    ) {
        let hi = lo + (1.0 - lo) * span;
        let s = GateSchedule::new(lo, hi, alpha, g).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for t in 1..=g {
            let th = s.threshold(t).unwrap();
            prop_assert!(th >= prev && th >= lo && th <= hi);
            prev = th;
        }
        prop_assert_eq!(s.threshold(g).unwrap(), hi);
        prop_assert!(s.threshold(0).is_err() && s.threshold(g + 1).is_err());
    }

    #[test]
    fn gate_is_nested_and_never_empties(
        scores in prop::collection::vec(0u32..=8, 1..20),
        theta in 0.0f64..=1.0,
        bump in 0.0f64..=0.5,
        cap in 1usize..12,
    ) {
        let pool: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, &p)| candidate(&format!("c{i}"), p, 8, Some([1.0, 1.0, 1.0])))
            .collect();
        let loose = apply_gate(pool.clone(), theta, cap);
        let strict = apply_gate(pool, theta + bump, cap);
        prop_assert!(!loose.gated.is_empty() && !strict.gated.is_empty());
        if !loose.fallback && !strict.fallback {
            for c in &strict.gated {
                prop_assert!(loose.gated.iter().any(|d| d.id == c.id));
            }
        }
    }

    #[test]
    fn bandit_counts_and_probabilities(arms in prop::collection::vec((0u8..2, 0usize..7), 0..200)) {
        let mut state = BanditState::with_defaults(7);
        for (reward, arm) in arms {
            state.record(arm, reward == 1);
        }
        let sum: u64 = state.arms.iter().map(|a| a.selections).sum();
        prop_assert_eq!(sum, state.total_selections);
        let p: f64 = state.probabilities().iter().sum();
        prop_assert!((p - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_sums_to_one(scores in prop::collection::vec(-50.0f64..50.0, 1..12), temp in 0.05f64..5.0) {
        let total: f64 = softmax(&scores, temp).iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn correctness_is_monotone(passes in prop::collection::vec(any::<bool>(), 1..30), extra in any::<bool>()) {
        let results: Vec<TestCaseResult> = passes
            .iter()
            .enumerate()
            .map(|(i, &p)| if p { TestCaseResult::pass(i.to_string()) } else { TestCaseResult::fail(i.to_string(), "o", "1", "0", None) })
            .collect();
        let total = passes.len() as u32 + 1;
        let before = score_correctness(&results, total).unwrap();
        let mut more = results.clone();
        more.push(if extra {
            TestCaseResult::pass("extra")
        } else {
            TestCaseResult::fail("extra", "o", "1", "0", None)
        });
        let after = score_correctness(&more, total).unwrap();
        if extra {
            prop_assert!(after.value >= before.value);
        } else {
            prop_assert!(after.value <= before.value);
        }
        prop_assert!((0.0..=1.0).contains(&after.value));
        prop_assert_eq!(after.value == 1.0, more.iter().all(|r| r.passed) && more.len() as u32 == total);
    }

    #[test]
    fn parsed_metrics_are_finite_and_non_negative(
        area in -1e3f64..1e3,
        delay in -10.0f64..10.0,
        power in -1.0f64..1.0,
        noise in "[ -~]{0,40}",
    ) {
        let raw = format!(
            "{noise}\nNumber of cells: 4\nChip area for module 'x': {area}\n  {delay}  data arrival time\nTotal 0 0 0 {power}\n"
        );
        let (ppa, _) = parse_ppa_report(&raw, PpaFormat::YosysOpenSta);
        if let PpaResult::Synthesized(m) = ppa {
            for v in [m.area, m.delay, m.power] {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
        }
        let json = format!("{{\"area_um2\": {area}, \"delay_ns\": {delay}, \"power_uw\": {power}}}");
        if let (PpaResult::Synthesized(m), _) = parse_ppa_report(&json, PpaFormat::NormalizedJson) {
            prop_assert!(m.area >= 0.0 && m.delay >= 0.0 && m.power >= 0.0);
        }
    }

    #[test]
    fn product_is_strictly_monotone(
        m in [0.1f64..100.0, 0.1f64..100.0, 0.1f64..100.0],
        axis in 0usize..3,
        bump in 0.01f64..10.0,
    ) {
        let base = PpaResult::Synthesized(PpaMetrics::new(m[0], m[1], m[2]).unwrap());
        let mut bigger = m;
        bigger[axis] += bump;
        let grown = PpaResult::Synthesized(PpaMetrics::new(bigger[0], bigger[1], bigger[2]).unwrap());
        prop_assert!(ppa_product(&grown).unwrap() > ppa_product(&base).unwrap());
    }

    #[test]
    fn genome_round_trip(func in any::<u32>(), cost in any::<u8>(), tag in 0u8..5) {
        let g = SyntheticGenome::from_words(func, cost, tag);
        prop_assert_eq!(SyntheticGenome::decode(&g.encode()).unwrap(), g);
    }

    #[test]
    fn synthetic_operator_guarantees(func in any::<u32>(), cost in any::<u8>(), tag in 0u8..5, target in any::<u32>(), seed in any::<u64>()) {
        let space = SyntheticDesignSpace::new(target);
        let g = SyntheticGenome::from_words(func, cost, tag);
        let (c, m, _) = synthetic_evaluate(&g, space.target());
        prop_assert_eq!(synthetic_evaluate(&g, space.target()).0, c);
        let parent = SyntheticParent { genome: g, correctness: c.value, ppa: m, mismatches: g.mismatches(space.target()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let fixed = synthetic_operator_apply(OperatorId::Fix, std::slice::from_ref(&parent), &mut rng).unwrap();
        prop_assert!(synthetic_evaluate(&fixed, space.target()).0.value >= c.value);

        let opt = synthetic_operator_apply(OperatorId::Optimize, &[parent], &mut rng).unwrap();
        let (oc, om, _) = synthetic_evaluate(&opt, space.target());
        prop_assert_eq!(oc, c);
        if let (PpaResult::Synthesized(a), PpaResult::Synthesized(b)) = (om, m) {
            prop_assert!(a.area <= b.area && a.delay <= b.delay && a.power <= b.power);
        }
    }

    #[test]
    fn init_yields_exactly_n(n in 1usize..25, k in 1usize..=5, seed in any::<u64>()) {
        let space = SyntheticDesignSpace::from_seed(seed);
        let strategies: Vec<ArchitectureStrategy> = ArchitectureStrategy::defaults().into_iter().take(k).collect();
        let init = multi_arch_init(&TemplateSet::default(), &space, &InitConfig {
            spec: "spec",
            population_size: n,
            strategies: &strategies,
            sampling: Sampling::default(),
            seed,
        }).unwrap();
        prop_assert_eq!(init.len(), n);
    }

    #[test]
    fn prompts_have_no_unfilled_placeholders(
        c1 in 0u32..=4,
        c2 in 0u32..=4,
        failed in any::<bool>(),
        spec in "[a-z {}_]{1,40}",
    ) {
        let a = candidate("a", c1, 4, if failed { None } else { Some([1.0, 2.0, 3.0]) });
        let b = candidate("b", c2, 4, Some([3.0, 2.0, 1.0]));
        let population = vec![a.clone(), b.clone()];
        let templates = TemplateSet::default();
        let placeholder = regex::Regex::new(r"\{[a-z_]+\}").unwrap();
        for op in OperatorId::ALL {
            let parents: Vec<&coevolve::DesignCandidate> = [&a, &b].into_iter().take(op.arity()).collect();
            let req = build_prompt(&templates, op, &PromptInputs {
                spec: &spec,
                parents: &parents,
                population: &population,
                generation: 1,
                seed: 0,
                sampling: Sampling::default(),
            }).unwrap();
            let without_spec = req.prompt.replace(spec.trim(), "");
            prop_assert!(!placeholder.is_match(&without_spec), "{op}: {}", req.prompt);
        }
    }

    #[test]
    fn pass_at_k_is_monotone(n in 1u32..40, f in 0u32..40, k in 1u32..40) {
        let f = f.min(n);
        let k = k.min(n);
        let v = pass_at_k(n, f, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if k < n {
            prop_assert!(pass_at_k(n, f, k + 1).unwrap() >= v);
        }
        if f < n {
            prop_assert!(pass_at_k(n, f + 1, k).unwrap() >= v);
        }
    }
}

#[test]
fn parent_frequencies_follow_level_weights() {
    use coevolve::operators::select_parents;
    use coevolve::pareto::sort_candidates;

    let population = vec![
        candidate("f1a", 4, 4, Some([1.0, 5.0, 5.0])),
        candidate("f1b", 4, 4, Some([5.0, 1.0, 5.0])),
        candidate("f2", 4, 4, Some([2.0, 6.0, 6.0])),
        candidate("f3", 4, 4, Some([3.0, 7.0, 7.0])),
        candidate("f3b", 3, 4, Some([4.0, 8.0, 8.0])),
    ];
    let levels = sort_candidates(&population).unwrap();
    let level_of = levels.level_of(population.len());
    let weights: Vec<f64> = level_of.iter().map(|&k| 1.0 / (k as f64 + 2.0)).collect();
    let total: f64 = weights.iter().sum();

    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for _ in 0..draws {
        let p = select_parents(&population, &levels, OperatorId::Fix, &mut rng);
        *counts.entry(p[0]).or_default() += 1;
    }
    for (i, w) in weights.iter().enumerate() {
        let observed = f64::from(counts.get(&i).copied().unwrap_or(0)) / draws as f64;
        assert!((observed - w / total).abs() <= 0.01, "member {i}: {observed} vs {}", w / total);
    }
}

#[test]
fn registry_is_closed() {
    use coevolve::bandit::OperatorCategory::*;
    let table: Vec<_> = OperatorId::ALL.iter().map(|o| (o.name(), o.category(), o.arity())).collect();
    assert_eq!(
        table,
        [
            ("fix", Correctness, 1),
            ("simplify", Correctness, 1),
            ("optimize", Ppa, 1),
            ("restructure", Ppa, 1),
            ("explore", Ppa, 0),
            ("ppa_aware_fix", Joint, 1),
            ("architecture_fusion", Joint, 2),
        ]
    );
}
