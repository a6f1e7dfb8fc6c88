//! Security-unaware randomizer used as the breakage baseline.

use std::collections::BTreeSet;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{conflict_graph, Classes, Model};
use super::{solve_optimal, SolveError, StopReason, VariantPool, DEFAULT_BUDGET};
use crate::copmodel::{objective_value, CopProblem, Solution};
use crate::machine::{Allocation, Impl, Loc, MachineProfile};
use crate::mir::{Definition, FunctionIR};
use crate::pipeline::{prepare, secure_mode, Strategy};

/// Re-allocates registers at random inside the base solution's register
/// footprint (keeping interference valid) and inserts a NOP before each
/// operation with probability 1/2. Member 0 is the secure base solution.
pub fn naive_diversify(f: &FunctionIR, p: &MachineProfile, n: usize, seed: u64) -> Result<VariantPool, SolveError> {
    let mode = secure_mode(f);
    let prob = prepare(f, mode, Strategy::Ebb).problem(p, mode, Ratio::from_integer(0), None)?;
    let base = solve_optimal(&prob, DEFAULT_BUDGET, seed)?.solution;
    let m = Model::new(&prob);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut solutions = vec![base.clone()];
    for _ in 1..n {
        let s = seeds.next_u64();
        let alloc = randomize(&m, &base.alloc, &mut ChaCha8Rng::seed_from_u64(s));
        solutions.push(Solution {
            objective: objective_value(&prob, &alloc).expect("full assignment"),
            alloc,
            seed: s,
        });
    }
    Ok(VariantPool {
        function: prob.function.clone(),
        solutions,
        gap: None,
        dthresh: 0,
        reason: StopReason::Complete,
    })
}

fn randomize(m: &Model, base: &Allocation, rng: &mut ChaCha8Rng) -> Allocation {
    let f = m.f;
    let prob: &CopProblem = m.prob;
    let choice: Vec<Option<Impl>> = base.ops.iter().map(|o| o.active.then_some(o.choice)).collect();
    let mut pos = vec![0i64; f.num_ops()];
    for b in &f.blocks {
        let mut act: Vec<_> = b.ops.iter().filter(|o| base.ops[o.id].active).map(|o| o.id).collect();
        act.sort_by_key(|&o| base.ops[o].cycle);
        for (i, o) in act.into_iter().enumerate() {
            pos[o] = i as i64;
        }
    }
    let cl = Classes::new(f, &choice);
    let adj = conflict_graph(m, &choice, &pos, &cl);
    let footprint: BTreeSet<Loc> = base.loc.iter().flatten().copied().filter(|l| matches!(l, Loc::Reg(_))).collect();
    let all_regs: Vec<Loc> = (0..prob.profile.num_registers).map(Loc::Reg).collect();

    let mut order: Vec<usize> = (0..cl.len()).collect();
    order.sort_by_key(|&c| match f.temps[cl.root[c]].def {
        Definition::Op(o) => (f.block_of(o), pos[o]),
        _ => (0, -1),
    });
    let mut loc: Vec<Option<Loc>> = vec![None; cl.len()];
    for c in order {
        let old = base.loc[cl.root[c]].expect("base solution is complete");
        if !matches!(old, Loc::Reg(_)) {
            loc[c] = Some(old);
            continue;
        }
        let free = |l: &Loc| adj[c].iter().all(|&y| loc[y] != Some(*l));
        let mut cands: Vec<Loc> = footprint.iter().copied().filter(free).collect();
        if cands.is_empty() {
            cands = all_regs.iter().copied().filter(free).collect();
        }
        loc[c] = Some(cands.choose(rng).copied().unwrap_or(old));
    }

    let mut ops = base.ops.clone();
    for b in &f.blocks {
        let mut act: Vec<_> = b.ops.iter().filter(|o| base.ops[o.id].active).map(|o| o.id).collect();
        act.sort_by_key(|&o| base.ops[o].cycle);
        let mut shift = 0;
        for o in act {
            if rng.gen_bool(0.5) {
                shift += 1;
            }
            ops[o].cycle += shift;
        }
    }
    Allocation {
        loc: (0..f.temps.len()).map(|t| loc[cl.of[t]]).collect(),
        ops,
    }
}
