use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use num_rational::Ratio;
use rayon::ThreadPoolBuilder;

use secdiv_core::copmodel::Mode;
use secdiv_core::corpus;
use secdiv_core::gadgets::{histogram, DEFAULT_K};
use secdiv_core::machine::{encode, MachineProfile, MachineProgram};
use secdiv_core::pipeline::{prepare, Strategy};
use secdiv_core::solver::{diversify, solve_optimal};

const BUDGET: Duration = Duration::from_secs(600);

fn workers() -> [(&'static str, usize); 2] {
    // 0 lets rayon pick one worker per core.
    [("sequential", 1), ("parallel", 0)]
}

fn bench_diversify(c: &mut Criterion) {
    let p = MachineProfile::tight8();
    let prob = prepare(&corpus::load("share_compare"), Mode::Tsc, Strategy::Ebb)
        .problem(&p, Mode::Tsc, Ratio::from_integer(0), None)
        .unwrap();
    let best = solve_optimal(&prob, BUDGET, 0).unwrap().solution;
    let mut g = c.benchmark_group("diversify_share_compare_20");
    g.sample_size(10);
    for (name, n) in workers() {
        let pool = ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        g.bench_function(name, |b| {
            b.iter(|| pool.install(|| diversify(&prob, &best, 20, Ratio::new(1, 10), 1, BUDGET, 0)))
        });
    }
    g.finish();
}

fn bench_gadgets(c: &mut Criterion) {
    let p = MachineProfile::tight8();
    let prob = prepare(&corpus::load("modexp"), Mode::Tsc, Strategy::Ebb)
        .problem(&p, Mode::Tsc, Ratio::from_integer(0), None)
        .unwrap();
    let best = solve_optimal(&prob, BUDGET, 0).unwrap().solution;
    let pool = diversify(&prob, &best, 20, Ratio::new(1, 10), 1, BUDGET, 0);
    let programs: Vec<MachineProgram> = pool
        .solutions
        .iter()
        .map(|s| encode(&pool.function, &s.alloc, &p).unwrap())
        .collect();
    let mut g = c.benchmark_group("srate_grid_modexp_20");
    for (name, n) in workers() {
        let threads = ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        g.bench_function(name, |b| b.iter(|| threads.install(|| histogram(&programs, DEFAULT_K).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, bench_diversify, bench_gadgets);
criterion_main!(benches);
