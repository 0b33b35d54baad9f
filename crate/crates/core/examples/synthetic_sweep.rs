// SPDX-License-Identifier: Apache-2.0

//! Runs the default configuration on the synthetic design space over a range
//! of seeds and prints per-seed outcomes.

use coevolve::backends::SyntheticDesignSpace;
use coevolve::engine::{Backends, Engine, RunConfig};
use coevolve::runlog::RunLog;
use coevolve::templates::TemplateSet;

fn best_product(pop: &[coevolve::DesignCandidate]) -> Option<f64> {
    pop.iter()
        .filter(|c| c.correctness.is_some_and(|s| s.is_perfect()))
        .filter_map(|c| c.ppa.and_then(|p| p.metrics().map(|m| m.product())))
        .reduce(f64::min)
}

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let start = std::time::Instant::now();
    for seed in 0..seeds {
        let space = SyntheticDesignSpace::from_seed(seed);
        let config = RunConfig { seed, ..RunConfig::default() };
        let engine = Engine::new(
            config,
            "synthetic target",
            TemplateSet::default(),
            Backends { generator: &space, evaluator: &space, verdict: None },
        )
        .unwrap();
        let (mut log, _) = RunLog::memory();
        let out = engine.run(&mut log).unwrap();
        let initial: Vec<_> = out.archive.iter().filter(|c| c.lineage.generation == 0).cloned().collect();
        println!(
            "seed {seed:>3} pass={} init_best={:?} final_best={:?} front={}",
            out.pass,
            best_product(&initial),
            best_product(&out.population),
            out.front.len()
        );
    }
    println!("elapsed {:?}", start.elapsed());
}
