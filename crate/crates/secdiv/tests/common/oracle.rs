//! Exhaustive reference solver for small problems. It enumerates every
//! activity, implementation, issue order, idle-gap placement, swap and
//! location assignment, and asks the constraint checker to judge each
//! candidate. It shares no code with the branch-and-bound search.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use secdiv_core::copmodel::{check_solution, objective_value, CopProblem, Solution, Violation};
use secdiv_core::machine::{Allocation, Impl, Loc, OpPlacement};
use secdiv_core::mir::{BlockId, OpId, Opcode, TempId};

#[derive(Clone, Debug)]
struct Local {
    cost: u32,
    placements: Vec<(OpId, OpPlacement)>,
}

const IDLE: OpPlacement = OpPlacement {
    active: false,
    cycle: 0,
    choice: Impl::Default,
    swap: false,
};

fn placeholder_locs(prob: &CopProblem) -> Vec<Option<Loc>> {
    let n = prob.profile.num_registers as usize;
    (0..prob.function.temps.len())
        .map(|t| Some(if t < n { Loc::Reg(t as u8) } else { Loc::Spill((t - n) as u8) }))
        .collect()
}

fn solution(prob: &CopProblem, alloc: Allocation) -> Solution {
    let objective = objective_value(prob, &alloc).expect("full assignment");
    Solution {
        alloc,
        objective,
        seed: 0,
    }
}

/// Violations that only depend on the placements of block `b`.
fn local_violation(prob: &CopProblem, v: &Violation, b: BlockId) -> bool {
    let f = &prob.function;
    match *v {
        Violation::MandatoryInactive(o) | Violation::NonCanonical(o) | Violation::Horizon(o) => f.block_of(o) == b,
        Violation::Overlap { block, .. } => block == b,
        Violation::TerminatorNotLast(x) | Violation::NopOrder(x) => x == b,
        Violation::Dependency { after, .. } => f.block_of(after) == b,
        _ => false,
    }
}

/// Violations independent of locations and swaps.
fn schedule_violation(v: &Violation) -> bool {
    matches!(
        v,
        Violation::Shape(_)
            | Violation::MandatoryInactive(_)
            | Violation::NonCanonical(_)
            | Violation::BadImpl(_)
            | Violation::BadSwap(_)
            | Violation::Horizon(_)
            | Violation::Overlap { .. }
            | Violation::TerminatorNotLast(_)
            | Violation::Dependency { .. }
            | Violation::NopOrder(_)
            | Violation::Balance { .. }
            | Violation::OptimalityGap { .. }
    )
}

/// Issue orders of `items` in which the balancing NOPs `nops` keep their
/// relative order; any other order of them is rejected by the checker anyway.
fn permutations(items: &[OpId], nops: &[OpId]) -> Vec<Vec<OpId>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let first_nop = items.iter().copied().find(|o| nops.contains(o));
    for i in 0..items.len() {
        let x = items[i];
        if nops.contains(&x) && Some(x) != first_nop {
            continue;
        }
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest, nops) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Ways to put at most `budget` idle cycles into `k` gaps.
fn gaps(k: usize, budget: u32) -> Vec<Vec<u32>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for g in 0..=budget {
        for mut rest in gaps(k - 1, budget - g) {
            rest.insert(0, g);
            out.push(rest);
        }
    }
    out
}

fn impl_vectors(prob: &CopProblem, ops: &[OpId]) -> Vec<Vec<Impl>> {
    let mut out = vec![Vec::new()];
    for &o in ops {
        out = out
            .into_iter()
            .flat_map(|v: Vec<Impl>| {
                prob.vars.ops[o].impls.iter().map(move |&c| {
                    let mut v = v.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

fn local_schedules(prob: &CopProblem, b: BlockId) -> Vec<Local> {
    let f = &prob.function;
    let ops: Vec<OpId> = f.blocks[b].ops.iter().map(|o| o.id).collect();
    let optional: Vec<OpId> = ops.iter().copied().filter(|&o| prob.vars.ops[o].optional).collect();
    let nops: Vec<OpId> = optional
        .iter()
        .copied()
        .filter(|&o| f.op(o).opcode == Opcode::Nop)
        .collect();
    let horizon = prob.vars.horizon[b];
    let mut base = Allocation {
        loc: placeholder_locs(prob),
        ops: vec![IDLE; f.num_ops()],
    };
    let mut out = Vec::new();
    for mask in 0..1u32 << optional.len() {
        let active: Vec<OpId> = ops
            .iter()
            .copied()
            .filter(|o| match optional.iter().position(|x| x == o) {
                Some(i) => mask & (1 << i) != 0,
                None => true,
            })
            .collect();
        // Active balancing NOPs always form a prefix.
        let k = nops.iter().take_while(|o| active.contains(o)).count();
        if nops[k..].iter().any(|o| active.contains(o)) {
            continue;
        }
        for choices in impl_vectors(prob, &active) {
            let lat: BTreeMap<OpId, u32> = active.iter().zip(&choices).map(|(&o, &c)| (o, prob.latency(o, c))).collect();
            let work: u32 = lat.values().sum();
            if work > horizon {
                continue;
            }
            for order in permutations(&active, &nops) {
                for g in gaps(order.len(), horizon - work) {
                    for &o in &ops {
                        base.ops[o] = IDLE;
                    }
                    let mut t = 0;
                    for (&o, &idle) in order.iter().zip(&g) {
                        t += idle;
                        let choice = choices[active.iter().position(|&x| x == o).unwrap()];
                        base.ops[o] = OpPlacement {
                            active: true,
                            cycle: t,
                            choice,
                            swap: false,
                        };
                        t += lat[&o];
                    }
                    let sol = solution(prob, base.clone());
                    if check_solution(&sol, prob).iter().any(|v| local_violation(prob, v, b)) {
                        continue;
                    }
                    out.push(Local {
                        cost: t,
                        placements: ops.iter().map(|&o| (o, base.ops[o])).collect(),
                    });
                }
            }
        }
    }
    out
}

/// Temps that some active non-copy operation reads or writes.
fn register_bound(prob: &CopProblem, a: &Allocation) -> BTreeSet<TempId> {
    prob.function
        .ops()
        .filter(|o| a.ops[o.id].active && o.opcode != Opcode::Copy)
        .flat_map(|o| o.used_temps().chain(o.def).collect::<Vec<_>>())
        .collect()
}

/// Location assignments up to renaming of registers and of spill slots.
/// Every temp's domain must contain all registers or none, and likewise
/// for spill slots, for the renaming argument to hold.
fn assign_locations(
    prob: &CopProblem,
    regs_only: &BTreeSet<TempId>,
    t: TempId,
    locs: &mut Vec<Option<Loc>>,
    visit: &mut dyn FnMut(&[Option<Loc>]) -> bool,
) -> bool {
    let n = locs.len();
    if t == n {
        return visit(locs);
    }
    let dom = &prob.vars.locs[t];
    let used: BTreeSet<Loc> = locs[..t].iter().flatten().copied().collect();
    let mut options: Vec<Loc> = used.iter().copied().filter(|l| dom.contains(l)).collect();
    let fresh_reg = (0..prob.profile.num_registers).map(Loc::Reg).find(|l| !used.contains(l));
    let fresh_spill = (0..=u8::MAX).map(Loc::Spill).find(|l| !used.contains(l));
    options.extend(fresh_reg.filter(|l| dom.contains(l)));
    if !regs_only.contains(&t) {
        options.extend(fresh_spill.filter(|l| dom.contains(l)));
    }
    for l in options {
        if regs_only.contains(&t) && !matches!(l, Loc::Reg(_)) {
            continue;
        }
        locs[t] = Some(l);
        if assign_locations(prob, regs_only, t + 1, locs, visit) {
            return true;
        }
    }
    locs[t] = None;
    false
}

fn check_symmetric_domains(prob: &CopProblem) {
    let regs: BTreeSet<Loc> = (0..prob.profile.num_registers).map(Loc::Reg).collect();
    let spills: BTreeSet<Loc> = prob.vars.locs.iter().flatten().copied().filter(|l| matches!(l, Loc::Spill(_))).collect();
    for d in &prob.vars.locs {
        let d: BTreeSet<Loc> = d.iter().copied().collect();
        let r: BTreeSet<Loc> = d.iter().copied().filter(|l| matches!(l, Loc::Reg(_))).collect();
        let s: BTreeSet<Loc> = d.difference(&r).copied().collect();
        assert!(r.is_empty() || r == regs, "register domain is not symmetric");
        assert!(s.is_empty() || s == spills, "spill domain is not symmetric");
    }
}

/// Completes a schedule with swaps and locations; first feasible one wins.
fn complete(prob: &CopProblem, alloc: &Allocation) -> Option<Solution> {
    let f = &prob.function;
    let swappable: Vec<OpId> = f
        .ops()
        .filter(|o| alloc.ops[o.id].active && prob.vars.ops[o.id].swappable)
        .map(|o| o.id)
        .collect();
    let regs_only = register_bound(prob, alloc);
    for mask in 0..1u32 << swappable.len() {
        let mut a = alloc.clone();
        for (i, &o) in swappable.iter().enumerate() {
            a.ops[o].swap = mask & (1 << i) != 0;
        }
        let mut found = None;
        let mut locs = vec![None; f.temps.len()];
        assign_locations(prob, &regs_only, 0, &mut locs, &mut |l| {
            a.loc = l.to_vec();
            let s = solution(prob, a.clone());
            if check_solution(&s, prob).is_empty() {
                found = Some(s);
                true
            } else {
                false
            }
        });
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Minimum-objective feasible solution, or `None` when there is none.
pub fn brute_force_optimum(prob: &CopProblem) -> Option<Solution> {
    check_symmetric_domains(prob);
    let f = &prob.function;
    let nb = f.blocks.len();
    let locals: Vec<Vec<Local>> = (0..nb).map(|b| local_schedules(prob, b)).collect();
    if locals.iter().any(Vec::is_empty) {
        return None;
    }
    let by_cost: Vec<BTreeMap<u32, Vec<&Local>>> = locals
        .iter()
        .map(|ls| {
            let mut m: BTreeMap<u32, Vec<&Local>> = BTreeMap::new();
            for l in ls {
                m.entry(l.cost).or_default().push(l);
            }
            m
        })
        .collect();
    // Every cost vector, cheapest first.
    let mut vectors: Vec<Vec<u32>> = vec![Vec::new()];
    for m in &by_cost {
        vectors = vectors
            .into_iter()
            .flat_map(|v| {
                m.keys().map(move |&c| {
                    let mut v = v.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    let objective = |v: &[u32]| -> Ratio<u64> {
        v.iter()
            .enumerate()
            .map(|(b, &c)| prob.weight(b) * Ratio::from_integer(u64::from(c)))
            .sum()
    };
    vectors.sort_by_key(|v| objective(v));
    let placeholder = placeholder_locs(prob);
    for v in vectors {
        let groups: Vec<&Vec<&Local>> = v.iter().enumerate().map(|(b, c)| &by_cost[b][c]).collect();
        let mut idx = vec![0usize; nb];
        'product: loop {
            let mut a = Allocation {
                loc: placeholder.clone(),
                ops: vec![IDLE; f.num_ops()],
            };
            for (b, &i) in idx.iter().enumerate() {
                for &(o, p) in &groups[b][i].placements {
                    a.ops[o] = p;
                }
            }
            let viol = check_solution(&solution(prob, a.clone()), prob);
            // Balance depends on block costs alone.
            if viol.iter().any(|x| matches!(x, Violation::Balance { .. })) {
                break 'product;
            }
            if !viol.iter().any(schedule_violation) {
                if let Some(s) = complete(prob, &a) {
                    return Some(s);
                }
            }
            for b in (0..nb).rev() {
                idx[b] += 1;
                if idx[b] < groups[b].len() {
                    continue 'product;
                }
                idx[b] = 0;
            }
            break;
        }
    }
    None
}
