//! Constraint checker that re-derives every constraint from the raw
//! assignment. It shares no code with the solver's propagation.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;

use super::{objective_value, Constraint, CopProblem, Solution};
use crate::machine::{Impl, Loc};
use crate::mir::{build_cfg, BlockId, Definition, EdgeKind, OpId, Opcode, TempId};
use crate::secanalysis::{value_origin, MemNode, Node};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Shape(String),
    MandatoryInactive(OpId),
    NonCanonical(OpId),
    BadImpl(OpId),
    BadSwap(OpId),
    Horizon(OpId),
    Unmapped(TempId),
    LocationDomain(TempId),
    LocationKind { op: OpId, temp: TempId },
    CopySemantics(OpId),
    Overlap { block: BlockId, a: OpId, b: OpId },
    TerminatorNotLast(BlockId),
    Dependency { before: OpId, after: OpId },
    NopOrder(BlockId),
    InputsShareRegister(TempId, TempId),
    Interference(TempId, TempId),
    Balance { branch: BlockId, path_costs: Vec<u64> },
    Rot { op: OpId, reg: u8, prev: Node, next: TempId },
    Mre { op: OpId, prev: MemNode },
    OptimalityGap { objective: Ratio<u64>, bound: Ratio<u64> },
    Objective { claimed: Ratio<u64>, actual: Ratio<u64> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(s) => write!(f, "shape: {s}"),
            Violation::MandatoryInactive(o) => write!(f, "mandatory operation o{o} inactive"),
            Violation::NonCanonical(o) => write!(f, "inactive operation o{o} carries non-default values"),
            Violation::BadImpl(o) => write!(f, "o{o}: implementation outside its domain"),
            Violation::BadSwap(o) => write!(f, "o{o}: operands cannot be swapped"),
            Violation::Horizon(o) => write!(f, "o{o} completes after the block horizon"),
            Violation::Unmapped(t) => write!(f, "t{t} has no location"),
            Violation::LocationDomain(t) => write!(f, "t{t}: location outside its domain"),
            Violation::LocationKind { op, temp } => write!(f, "o{op}: t{temp} in the wrong kind of location"),
            Violation::CopySemantics(o) => write!(f, "copy-semantics violated at o{o}"),
            Violation::Overlap { block, a, b } => write!(f, "single-issue: o{a} and o{b} overlap in block {block}"),
            Violation::TerminatorNotLast(b) => write!(f, "terminator of block {b} is not last"),
            Violation::Dependency { before, after } => write!(f, "dependency o{before} -> o{after} violated"),
            Violation::NopOrder(b) => write!(f, "NOPs of block {b} not compact"),
            Violation::InputsShareRegister(a, b) => write!(f, "inputs t{a} and t{b} share a register"),
            Violation::Interference(a, b) => write!(f, "register-interference: t{a} and t{b} overlap in one location"),
            Violation::Balance { branch, path_costs } => {
                write!(f, "balance: paths from block {branch} cost {path_costs:?}")
            }
            Violation::Rot { op, reg, prev, next } => {
                write!(f, "conflict_rassign: o{op} writes t{next} over {prev} in r{reg}")
            }
            Violation::Mre { op, prev } => write!(f, "conflict_order: o{op} follows {prev:?} on the bus"),
            Violation::OptimalityGap { objective, bound } => {
                write!(f, "optimality-gap: objective {objective} exceeds {bound}")
            }
            Violation::Objective { claimed, actual } => write!(f, "objective {claimed} != {actual}"),
        }
    }
}

const INF: i64 = i64::MAX;

/// Live segment of a value: block, first and last cycle.
type Segment = (BlockId, i64, i64);

/// Re-evaluates every constraint of `prob` on `sol`. Empty means feasible.
pub fn check_solution(sol: &Solution, prob: &CopProblem) -> Vec<Violation> {
    let f = &prob.function;
    let a = &sol.alloc;
    let mut v = Vec::new();
    if a.ops.len() != f.num_ops() || a.loc.len() != f.temps.len() {
        v.push(Violation::Shape(format!(
            "{} placements / {} locations for {} operations / {} temps",
            a.ops.len(),
            a.loc.len(),
            f.num_ops(),
            f.temps.len()
        )));
        return v;
    }
    let lat = |o: OpId| prob.latency(o, a.ops[o].choice) as i64;
    let cyc = |o: OpId| a.ops[o].cycle as i64;
    let end = |o: OpId| cyc(o) + lat(o);

    // Per-operation domains.
    for o in f.ops() {
        let pl = a.ops[o.id];
        let vars = &prob.vars.ops[o.id];
        if !o.optional && !pl.active {
            v.push(Violation::MandatoryInactive(o.id));
        }
        if !pl.active && (pl.cycle != 0 || pl.choice != Impl::Default || pl.swap) {
            v.push(Violation::NonCanonical(o.id));
        }
        if !vars.impls.contains(&pl.choice) {
            v.push(Violation::BadImpl(o.id));
        }
        if pl.swap && !vars.swappable {
            v.push(Violation::BadSwap(o.id));
        }
        if pl.active && end(o.id) > prob.vars.horizon[vars.block] as i64 {
            v.push(Violation::Horizon(o.id));
        }
    }
    for t in 0..f.temps.len() {
        match a.loc[t] {
            None => v.push(Violation::Unmapped(t)),
            Some(l) if !prob.vars.locs[t].contains(&l) => v.push(Violation::LocationDomain(t)),
            _ => {}
        }
    }
    if v.iter().any(|x| matches!(x, Violation::Unmapped(_) | Violation::BadImpl(_))) {
        return v;
    }
    let loc = |t: TempId| a.loc[t].unwrap();
    let is_reg = |t: TempId| matches!(loc(t), Loc::Reg(_));

    // Location kinds and copy semantics.
    for o in f.ops() {
        let pl = a.ops[o.id];
        if o.opcode == Opcode::Copy {
            let (s, d) = (o.uses[0].temp().unwrap(), o.def.unwrap());
            let ok = if !pl.active {
                loc(s) == loc(d)
            } else {
                match pl.choice {
                    Impl::Default | Impl::AddZero | Impl::OrZero => is_reg(s) && is_reg(d),
                    Impl::Store => is_reg(s) && !is_reg(d),
                    Impl::Load => !is_reg(s) && is_reg(d),
                    Impl::Remat => is_reg(d) && f.def_op(s).is_some_and(|x| x.opcode == Opcode::Li),
                }
            };
            if !ok {
                v.push(Violation::CopySemantics(o.id));
            }
        } else if pl.active {
            for t in o.used_temps().chain(o.def) {
                if !is_reg(t) {
                    v.push(Violation::LocationKind { op: o.id, temp: t });
                }
            }
        }
    }
    let inputs: Vec<TempId> = f.inputs().map(|(t, _)| t).collect();
    for (i, &x) in inputs.iter().enumerate() {
        for &y in &inputs[i + 1..] {
            if loc(x) == loc(y) {
                v.push(Violation::InputsShareRegister(x, y));
            }
        }
    }

    // Issue order within blocks.
    for b in &f.blocks {
        let mut act: Vec<OpId> = b.ops.iter().filter(|o| a.ops[o.id].active).map(|o| o.id).collect();
        act.sort_by_key(|&o| (cyc(o), o));
        for w in act.windows(2) {
            if end(w[0]) > cyc(w[1]) {
                v.push(Violation::Overlap {
                    block: b.id,
                    a: w[0],
                    b: w[1],
                });
            }
        }
        if let Some(t) = b.terminator() {
            if act.last() != Some(&t.id) {
                v.push(Violation::TerminatorNotLast(b.id));
            }
        }
        // Balancing NOPs: active ones first, issued in order; NOP-only blocks run back to back.
        let nops: Vec<OpId> = b.ops.iter().filter(|o| o.opcode == Opcode::Nop && o.optional).map(|o| o.id).collect();
        let k = nops.iter().take_while(|&&o| a.ops[o].active).count();
        let prefix = nops[k..].iter().all(|&o| !a.ops[o].active);
        let ordered = nops[..k].windows(2).all(|w| cyc(w[0]) < cyc(w[1]));
        let nop_only = !nops.is_empty() && b.ops.iter().all(|o| o.opcode == Opcode::Nop || o.opcode.is_terminator());
        let mut compact = true;
        if nop_only {
            let mut t = 0;
            for &o in &act {
                compact &= cyc(o) == t;
                t = end(o);
            }
        }
        if !(prefix && ordered && compact) {
            v.push(Violation::NopOrder(b.id));
        }
    }

    // Value flow, looking through inactive copies.
    let provider = |mut t: TempId| -> Option<OpId> {
        loop {
            let d = f.def_op(t)?;
            if d.opcode == Opcode::Copy && !a.ops[d.id].active {
                t = d.uses[0].temp().unwrap();
            } else {
                return Some(d.id);
            }
        }
    };
    for o in f.ops().filter(|o| a.ops[o.id].active) {
        let b = f.block_of(o.id);
        for t in o.used_temps() {
            if let Some(p) = provider(t) {
                if f.block_of(p) == b && end(p) > cyc(o.id) {
                    v.push(Violation::Dependency { before: p, after: o.id });
                }
            }
        }
    }
    for b in &f.blocks {
        for (j, o) in b.ops.iter().enumerate() {
            for p in &b.ops[..j] {
                let mem = |x: Opcode| matches!(x, Opcode::Ld | Opcode::St);
                if mem(o.opcode) && mem(p.opcode) && o.slot == p.slot && (o.opcode == Opcode::St || p.opcode == Opcode::St) && end(p.id) > cyc(o.id) {
                    v.push(Violation::Dependency { before: p.id, after: o.id });
                }
            }
        }
    }
    if v.iter().any(|x| matches!(x, Violation::CopySemantics(_))) {
        return v;
    }

    v.extend(interference(prob, sol));

    let costs: Vec<u64> = f
        .blocks
        .iter()
        .map(|b| b.ops.iter().filter(|o| a.ops[o.id].active).map(|o| end(o.id)).max().unwrap_or(0) as u64)
        .collect();
    let g = build_cfg(f);
    for c in &prob.constraints {
        let Constraint::Balance { set } = c else { continue };
        let s = &prob.psets[*set];
        let sink = s.sink().is_some();
        let sums: Vec<u64> = s
            .paths
            .iter()
            .map(|p| {
                let inner = &p[1..p.len() - usize::from(sink)];
                let taken = p
                    .windows(2)
                    .filter(|w| g.edge(w[0], w[1]).is_some_and(|e| e.kind == EdgeKind::Taken))
                    .count() as u64;
                inner.iter().map(|&b| costs[b]).sum::<u64>() + taken * prob.profile.taken_branch_overhead as u64
            })
            .collect();
        if sums.iter().any(|&x| x != sums[0]) {
            v.push(Violation::Balance {
                branch: s.branch_block,
                path_costs: sums,
            });
        }
    }

    v.extend(transitions(prob, sol));

    if let Ok(actual) = objective_value(prob, a) {
        if let Some(bound) = prob.bound() {
            if actual > bound {
                v.push(Violation::OptimalityGap { objective: actual, bound });
            }
        }
        if actual != sol.objective {
            v.push(Violation::Objective {
                claimed: sol.objective,
                actual,
            });
        }
    }
    v
}

/// Live-range overlap of values sharing a location.
fn interference(prob: &CopProblem, sol: &Solution) -> Vec<Violation> {
    let f = &prob.function;
    let a = &sol.alloc;
    let n = f.temps.len();
    // A value and its inactive copies form one class, rooted at the real definition.
    let root = |mut t: TempId| loop {
        match f.def_op(t) {
            Some(d) if d.opcode == Opcode::Copy && !a.ops[d.id].active => t = d.uses[0].temp().unwrap(),
            _ => return t,
        }
    };
    let roots: BTreeSet<TempId> = (0..n).map(root).collect();
    let origin = value_origin(f);
    let nb = f.blocks.len();

    // Segments per class: (block, start, end).
    let mut segs: Vec<(TempId, Vec<Segment>)> = Vec::new();
    for &r in &roots {
        let (def_block, def_cycle) = match f.temps[r].def {
            Definition::Op(o) => (f.block_of(o), a.ops[o].cycle as i64),
            _ => (0, -1),
        };
        let mut last_use: Vec<Option<i64>> = vec![None; nb];
        for o in f.ops().filter(|o| a.ops[o.id].active) {
            if o.used_temps().any(|t| root(t) == r) {
                let b = f.block_of(o.id);
                let c = a.ops[o.id].cycle as i64;
                last_use[b] = Some(last_use[b].map_or(c, |x: i64| x.max(c)));
            }
        }
        let mut live_in = vec![false; nb];
        let mut live_out = vec![false; nb];
        for b in (0..nb).rev() {
            live_out[b] = f.blocks[b].successors().iter().any(|&s| live_in[s]);
            live_in[b] = b != def_block && (last_use[b].is_some() || live_out[b]);
        }
        let mut s = Vec::new();
        for b in 0..nb {
            if b != def_block && !live_in[b] {
                continue;
            }
            let start = if b == def_block { def_cycle } else { -1 };
            let stop = if live_out[b] { INF } else { last_use[b].unwrap_or(start).max(start) };
            s.push((b, start, stop));
        }
        segs.push((r, s));
    }
    let mut out = Vec::new();
    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            let (x, sx) = &segs[i];
            let (y, sy) = &segs[j];
            if a.loc[*x] != a.loc[*y] || origin[*x] == origin[*y] {
                continue;
            }
            let clash = sx.iter().any(|&(b1, s1, e1)| sy.iter().any(|&(b2, s2, e2)| b1 == b2 && s1 < e2 && s2 < e1));
            if clash {
                out.push(Violation::Interference(*x, *y));
            }
        }
    }
    out
}

/// Register-overwrite and memory-bus transitions along every path.
fn transitions(prob: &CopProblem, sol: &Solution) -> Vec<Violation> {
    let mut rot: BTreeSet<(Node, Node)> = BTreeSet::new();
    let mut mre: BTreeSet<(MemNode, MemNode)> = BTreeSet::new();
    for c in &prob.constraints {
        match *c {
            Constraint::RotConflict { a, b } => {
                rot.insert((a.min(b), a.max(b)));
            }
            Constraint::MreConflict { a, b } => {
                mre.insert((a.min(b), a.max(b)));
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    if rot.is_empty() && mre.is_empty() {
        return out;
    }
    let f = &prob.function;
    let a = &sol.alloc;
    let nregs = prob.profile.num_registers as usize;
    let nb = f.blocks.len();
    let mut reg_out: Vec<Vec<BTreeSet<Node>>> = vec![Vec::new(); nb];
    let mut bus_out: Vec<BTreeSet<MemNode>> = vec![BTreeSet::new(); nb];
    let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); nb];
    for b in &f.blocks {
        for s in b.successors() {
            preds[s].push(b.id);
        }
    }
    for b in 0..nb {
        let (mut regs, mut bus) = if b == 0 {
            let mut r = vec![BTreeSet::from([Node::Bottom]); nregs];
            for (t, _) in f.inputs() {
                if let Some(Loc::Reg(x)) = a.loc[t] {
                    r[x as usize] = BTreeSet::from([Node::Temp(t)]);
                }
            }
            (r, BTreeSet::from([MemNode::Bottom]))
        } else {
            let mut r = vec![BTreeSet::new(); nregs];
            let mut m = BTreeSet::new();
            for &p in &preds[b] {
                for (x, s) in reg_out[p].iter().enumerate() {
                    r[x].extend(s.iter().copied());
                }
                m.extend(bus_out[p].iter().copied());
            }
            (r, m)
        };
        let mut act: Vec<&crate::mir::Operation> = f.blocks[b].ops.iter().filter(|o| a.ops[o.id].active).collect();
        act.sort_by_key(|o| (a.ops[o.id].cycle, o.id));
        for o in act {
            let choice = a.ops[o.id].choice;
            let mem = match o.opcode {
                Opcode::Ld | Opcode::St => true,
                Opcode::Copy => matches!(choice, Impl::Store | Impl::Load),
                _ => false,
            };
            if mem {
                let me = MemNode::Op(o.id);
                for &p in &bus {
                    if mre.contains(&(p.min(me), p.max(me))) {
                        out.push(Violation::Mre { op: o.id, prev: p });
                    }
                }
                bus = BTreeSet::from([me]);
            }
            if let Some(d) = o.def {
                if let Some(Loc::Reg(r)) = a.loc[d] {
                    if !(o.opcode == Opcode::Copy && choice == Impl::Store) {
                        let me = Node::Temp(d);
                        for &p in &regs[r as usize] {
                            if rot.contains(&(p.min(me), p.max(me))) {
                                out.push(Violation::Rot {
                                    op: o.id,
                                    reg: r,
                                    prev: p,
                                    next: d,
                                });
                            }
                        }
                        regs[r as usize] = BTreeSet::from([me]);
                    }
                }
            }
        }
        reg_out[b] = regs;
        bus_out[b] = bus;
    }
    out
}
