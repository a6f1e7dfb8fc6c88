//! Static tables derived from a problem, shared by the search and the naive randomizer.

use std::collections::BTreeSet;

use crate::copmodel::{nop_only_block, Constraint, CopProblem};
use crate::machine::{Impl, Loc};
use crate::mir::{build_cfg, BlockId, Definition, EdgeKind, FunctionIR, OpId, Opcode, TempId};
use crate::secanalysis::{value_origin, MemNode, Node};

/// A phase-one decision: activity and latency class of one operation, or
/// the number of active balancing NOPs of one block.
#[derive(Clone, Debug)]
pub(crate) enum Item {
    Op { op: OpId, options: Vec<Option<Impl>> },
    Nops { block: BlockId },
}

pub(crate) struct Model<'a> {
    pub prob: &'a CopProblem,
    pub f: &'a FunctionIR,
    pub block_ops: Vec<Vec<OpId>>,
    pub nop_only: Vec<bool>,
    pub opt_nops: Vec<Vec<OpId>>,
    pub term: Vec<Option<OpId>>,
    pub horizon: Vec<u32>,
    /// Block weights scaled to integers by `denom`.
    pub weight: Vec<u64>,
    pub denom: u64,
    pub items: Vec<Item>,
    /// Phase-one value of ops that are not items; optional NOPs start off.
    pub fixed: Vec<Option<Impl>>,
    pub preds: Vec<Vec<BlockId>>,
    pub succs: Vec<Vec<BlockId>>,
    /// Per balance set, per path: interior blocks and the taken-edge constant.
    pub balance: Vec<Vec<(Vec<BlockId>, u64)>>,
    pub rot: BTreeSet<(Node, Node)>,
    pub mre: BTreeSet<(MemNode, MemNode)>,
    /// Scaled objective bound from the optimality-gap constraint.
    pub bound: Option<u64>,
    pub origin: Vec<TempId>,
    pub inputs: Vec<TempId>,
    /// Earlier same-block memory operations each op must follow.
    pub mem_deps: Vec<Vec<OpId>>,
    pub swappable: Vec<bool>,
    /// ALU alternatives available in the final phase, per op.
    pub alu_variants: Vec<Vec<Impl>>,
}

fn lcm(a: u64, b: u64) -> u64 {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

fn ordered<T: Ord + Copy>(a: T, b: T) -> (T, T) {
    (a.min(b), a.max(b))
}

impl<'a> Model<'a> {
    pub fn new(prob: &'a CopProblem) -> Self {
        let f = &prob.function;
        let nb = f.blocks.len();
        let n = f.num_ops();
        let block_ops: Vec<Vec<OpId>> = f.blocks.iter().map(|b| b.ops.iter().map(|o| o.id).collect()).collect();
        let nop_only: Vec<bool> = (0..nb).map(|b| nop_only_block(f, b)).collect();
        let opt_nops: Vec<Vec<OpId>> = f
            .blocks
            .iter()
            .map(|b| b.ops.iter().filter(|o| o.opcode == Opcode::Nop && o.optional).map(|o| o.id).collect())
            .collect();
        let term = f.blocks.iter().map(|b| b.terminator().map(|o| o.id)).collect();

        let denom = f.blocks.iter().fold(1u64, |d, b| lcm(d, *b.weight.denom()));
        let weight = f.blocks.iter().map(|b| (b.weight * denom).to_integer()).collect();

        let mut items = Vec::new();
        let mut fixed = vec![Some(Impl::Default); n];
        let mut alu_variants = vec![Vec::new(); n];
        for o in f.ops() {
            let dom = &prob.vars.ops[o.id].impls;
            alu_variants[o.id] = dom.iter().copied().filter(|i| matches!(i, Impl::AddZero | Impl::OrZero)).collect();
            if o.opcode == Opcode::Nop && o.optional {
                fixed[o.id] = None;
                continue;
            }
            let mut options: Vec<Option<Impl>> = Vec::new();
            if o.optional {
                options.push(None);
            }
            options.extend(
                dom.iter()
                    .copied()
                    .filter(|i| !matches!(i, Impl::AddZero | Impl::OrZero))
                    .map(Some),
            );
            if options.len() > 1 {
                items.push(Item::Op { op: o.id, options });
            } else {
                fixed[o.id] = options[0];
            }
        }
        for (b, nops) in opt_nops.iter().enumerate() {
            if !nops.is_empty() {
                items.push(Item::Nops { block: b });
            }
        }

        let mut preds = vec![Vec::new(); nb];
        let succs: Vec<Vec<BlockId>> = f.blocks.iter().map(|b| b.successors()).collect();
        for (b, ss) in succs.iter().enumerate() {
            for &s in ss {
                preds[s].push(b);
            }
        }

        let g = build_cfg(f);
        let mut balance = Vec::new();
        let mut rot = BTreeSet::new();
        let mut mre = BTreeSet::new();
        let mut bound = None;
        for c in &prob.constraints {
            match *c {
                Constraint::Balance { set } => {
                    let s = &prob.psets[set];
                    let sink = usize::from(s.sink().is_some());
                    balance.push(
                        s.paths
                            .iter()
                            .map(|p| {
                                let taken = p
                                    .windows(2)
                                    .filter(|w| g.edge(w[0], w[1]).is_some_and(|e| e.kind == EdgeKind::Taken))
                                    .count() as u64;
                                (p[1..p.len() - sink].to_vec(), taken * prob.profile.taken_branch_overhead as u64)
                            })
                            .collect(),
                    );
                }
                Constraint::RotConflict { a, b } => {
                    rot.insert(ordered(a, b));
                }
                Constraint::MreConflict { a, b } => {
                    mre.insert(ordered(a, b));
                }
                Constraint::OptimalityGap { bound: r } => {
                    bound = Some((r * denom).floor().to_integer());
                }
                _ => {}
            }
        }

        let mut mem_deps = vec![Vec::new(); n];
        for b in &f.blocks {
            for (j, o) in b.ops.iter().enumerate() {
                if !matches!(o.opcode, Opcode::Ld | Opcode::St) {
                    continue;
                }
                for p in &b.ops[..j] {
                    if matches!(p.opcode, Opcode::Ld | Opcode::St)
                        && p.slot == o.slot
                        && (p.opcode == Opcode::St || o.opcode == Opcode::St)
                    {
                        mem_deps[o.id].push(p.id);
                    }
                }
            }
        }

        Model {
            prob,
            f,
            block_ops,
            nop_only,
            opt_nops,
            term,
            horizon: prob.vars.horizon.clone(),
            weight,
            denom,
            items,
            fixed,
            preds,
            succs,
            balance,
            rot,
            mre,
            bound,
            origin: value_origin(f),
            inputs: f.inputs().map(|(t, _)| t).collect(),
            mem_deps,
            swappable: prob.vars.ops.iter().map(|v| v.swappable).collect(),
            alu_variants,
        }
    }

    pub fn latency(&self, op: OpId, choice: Option<Impl>) -> u32 {
        choice.map_or(0, |c| self.prob.latency(op, c))
    }

    pub fn is_rot(&self, a: Node, b: Node) -> bool {
        self.rot.contains(&ordered(a, b))
    }

    pub fn is_mre(&self, a: MemNode, b: MemNode) -> bool {
        self.mre.contains(&ordered(a, b))
    }

    /// Active operation that produces the value `t` holds, looking through inactive copies.
    pub fn provider(&self, choice: &[Option<Impl>], mut t: TempId) -> Option<OpId> {
        loop {
            let d = self.f.def_op(t)?;
            if d.opcode == Opcode::Copy && choice[d.id].is_none() {
                t = d.uses[0].temp().unwrap();
            } else {
                return Some(d.id);
            }
        }
    }

    /// In-block predecessors of each active op under `choice`.
    pub fn block_deps(&self, choice: &[Option<Impl>], b: BlockId) -> Vec<(OpId, Vec<OpId>)> {
        let mut out = Vec::new();
        let mut last_nop = None;
        for &o in &self.block_ops[b] {
            if choice[o].is_none() {
                continue;
            }
            let op = self.f.op(o);
            let mut d: Vec<OpId> = op
                .used_temps()
                .filter_map(|t| self.provider(choice, t))
                .filter(|&p| self.f.block_of(p) == b)
                .collect();
            d.extend(self.mem_deps[o].iter().copied());
            if op.opcode == Opcode::Nop && op.optional {
                d.extend(last_nop);
                last_nop = Some(o);
            }
            d.sort_unstable();
            d.dedup();
            out.push((o, d));
        }
        out
    }

    /// Whether an active op with this choice puts a value on the memory bus.
    pub fn on_bus(&self, op: OpId, choice: Impl) -> bool {
        match self.f.op(op).opcode {
            Opcode::Ld | Opcode::St => true,
            Opcode::Copy => matches!(choice, Impl::Store | Impl::Load),
            _ => false,
        }
    }
}

/// Values grouped by inactive copies; one location per class.
#[derive(Clone, Debug)]
pub(crate) struct Classes {
    pub of: Vec<usize>,
    pub root: Vec<TempId>,
    pub members: Vec<Vec<TempId>>,
}

impl Classes {
    pub fn new(f: &FunctionIR, choice: &[Option<Impl>]) -> Self {
        let n = f.temps.len();
        let root_of = |mut t: TempId| loop {
            match f.def_op(t) {
                Some(d) if d.opcode == Opcode::Copy && choice[d.id].is_none() => t = d.uses[0].temp().unwrap(),
                _ => return t,
            }
        };
        let mut of = vec![usize::MAX; n];
        let mut root = Vec::new();
        let mut members: Vec<Vec<TempId>> = Vec::new();
        let mut index = vec![usize::MAX; n];
        for t in 0..n {
            let r = root_of(t);
            if index[r] == usize::MAX {
                index[r] = root.len();
                root.push(r);
                members.push(Vec::new());
            }
            of[t] = index[r];
            members[index[r]].push(t);
        }
        Classes { of, root, members }
    }

    pub fn len(&self) -> usize {
        self.root.len()
    }
}

/// Where each class may live, or `None` if some class has no location.
pub(crate) fn class_domains(m: &Model, choice: &[Option<Impl>], cl: &Classes) -> Option<Vec<Vec<Loc>>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Need {
        Any,
        Reg,
        Spill,
    }
    let mut need = vec![Need::Any; cl.len()];
    let mut conflict = false;
    let mut require = |c: usize, k: Need| {
        if need[c] == Need::Any {
            need[c] = k;
        } else if need[c] != k {
            conflict = true;
        }
    };
    for o in m.f.ops() {
        let Some(ch) = choice[o.id] else { continue };
        if o.opcode == Opcode::Copy {
            let (s, d) = (cl.of[o.uses[0].temp().unwrap()], cl.of[o.def.unwrap()]);
            match ch {
                Impl::Store => {
                    require(s, Need::Reg);
                    require(d, Need::Spill);
                }
                Impl::Load => {
                    require(s, Need::Spill);
                    require(d, Need::Reg);
                }
                Impl::Remat => require(d, Need::Reg),
                _ => {
                    require(s, Need::Reg);
                    require(d, Need::Reg);
                }
            }
        } else {
            for t in o.used_temps().chain(o.def) {
                require(cl.of[t], Need::Reg);
            }
        }
    }
    if conflict {
        return None;
    }
    let mut out = Vec::with_capacity(cl.len());
    for c in 0..cl.len() {
        let mut dom: Vec<Loc> = m.prob.vars.locs[cl.members[c][0]].clone();
        for &t in &cl.members[c][1..] {
            let other = &m.prob.vars.locs[t];
            dom.retain(|l| other.contains(l));
        }
        dom.retain(|l| match need[c] {
            Need::Any => true,
            Need::Reg => matches!(l, Loc::Reg(_)),
            Need::Spill => matches!(l, Loc::Spill(_)),
        });
        if dom.is_empty() {
            return None;
        }
        out.push(dom);
    }
    Some(out)
}

/// Pairs of classes that may not share a location, given each active op's
/// position in its block's issue order.
pub(crate) fn conflict_graph(m: &Model, choice: &[Option<Impl>], pos: &[i64], cl: &Classes) -> Vec<Vec<usize>> {
    const INF: i64 = i64::MAX;
    let f = m.f;
    let nb = f.blocks.len();
    let k = cl.len();
    // Per class: per block (start, end) or nothing.
    let mut segs: Vec<Vec<Option<(i64, i64)>>> = Vec::with_capacity(k);
    for c in 0..k {
        let r = cl.root[c];
        let (db, dc) = match f.temps[r].def {
            Definition::Op(o) => (f.block_of(o), pos[o]),
            _ => (0, -1),
        };
        let mut last = vec![None::<i64>; nb];
        for &t in &cl.members[c] {
            for u in f.users(t) {
                if choice[u.id].is_some() {
                    let b = f.block_of(u.id);
                    last[b] = Some(last[b].map_or(pos[u.id], |x| x.max(pos[u.id])));
                }
            }
        }
        let mut live_in = vec![false; nb];
        let mut live_out = vec![false; nb];
        for b in (0..nb).rev() {
            live_out[b] = m.succs[b].iter().any(|&s| live_in[s]);
            live_in[b] = b != db && (last[b].is_some() || live_out[b]);
        }
        segs.push(
            (0..nb)
                .map(|b| {
                    (b == db || live_in[b]).then(|| {
                        let s = if b == db { dc } else { -1 };
                        let e = if live_out[b] { INF } else { last[b].unwrap_or(s).max(s) };
                        (s, e)
                    })
                })
                .collect(),
        );
    }
    let mut adj = vec![Vec::new(); k];
    for x in 0..k {
        for y in x + 1..k {
            let both_inputs = f.temps[cl.root[x]].is_input() && f.temps[cl.root[y]].is_input();
            let clash = m.origin[cl.root[x]] != m.origin[cl.root[y]]
                && (0..nb).any(|b| match (segs[x][b], segs[y][b]) {
                    (Some((s1, e1)), Some((s2, e2))) => s1 < e2 && s2 < e1,
                    _ => false,
                });
            if both_inputs || clash {
                adj[x].push(y);
                adj[y].push(x);
            }
        }
    }
    adj
}
