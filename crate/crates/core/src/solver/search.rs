//! Depth-first search over the problem in five phases:
//! A activity and latency class, B issue order per block, C locations,
//! D block costs (balance and objective bound), E free choices (gap
//! placement, ALU variant, operand swap). Feasibility of everything except
//! balance and the bound depends only on A, B and C, since on a single-issue
//! machine relative order is all that matters.

use std::collections::BTreeSet;
use std::time::Instant;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::distance_alloc;
use super::model::{class_domains, conflict_graph, Classes, Item, Model};
use crate::copmodel::{check_solution, Solution};
use crate::machine::{Allocation, Impl, Loc, OpPlacement};
use crate::mir::{BlockId, Definition, OpId};
use crate::secanalysis::{MemNode, Node};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Flow {
    Continue,
    Found,
    Stop,
}

pub(crate) struct Search<'m, 'a> {
    m: &'m Model<'a>,
    /// Branch and bound with symmetry breaking and canonical free choices.
    optimal: bool,
    rng: Option<ChaCha8Rng>,
    deadline: Option<Instant>,
    blocking: &'m [Allocation],
    dthresh: usize,
    bound: Option<u64>,
    nodes: u64,
    pub timed_out: bool,
    pub best: Option<(u64, Allocation)>,
    pub found: Option<Allocation>,
    choice: Vec<Option<Impl>>,
    order: Vec<Vec<OpId>>,
    pos: Vec<i64>,
    bus_out: Vec<BTreeSet<MemNode>>,
    cost: Vec<u32>,
    work: Vec<u32>,
    classes: Option<Classes>,
    doms: Vec<Vec<Loc>>,
    adj: Vec<Vec<usize>>,
    class_order: Vec<usize>,
    /// Register-writing classes per block, by issue position.
    events: Vec<Vec<(i64, usize)>>,
    event_of: Vec<Option<(BlockId, i64)>>,
    class_loc: Vec<Option<Loc>>,
    gaps: Vec<Vec<u32>>,
    variant: Vec<Impl>,
    swap: Vec<bool>,
}

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    fn rec(total: u32, parts: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            cur.push(total);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for x in 0..=total {
            cur.push(x);
            rec(total - x, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(total, parts, &mut Vec::new(), &mut out);
    }
    out
}

impl<'m, 'a> Search<'m, 'a> {
    pub fn new(
        m: &'m Model<'a>,
        optimal: bool,
        rng: Option<ChaCha8Rng>,
        deadline: Option<Instant>,
        blocking: &'m [Allocation],
        dthresh: usize,
    ) -> Self {
        let nb = m.f.blocks.len();
        let n = m.f.num_ops();
        Search {
            m,
            optimal,
            rng,
            deadline,
            blocking,
            dthresh,
            bound: m.bound,
            nodes: 0,
            timed_out: false,
            best: None,
            found: None,
            choice: m.fixed.clone(),
            order: vec![Vec::new(); nb],
            pos: vec![0; n],
            bus_out: vec![BTreeSet::new(); nb],
            cost: vec![0; nb],
            work: vec![0; nb],
            classes: None,
            doms: Vec::new(),
            adj: Vec::new(),
            class_order: Vec::new(),
            events: vec![Vec::new(); nb],
            event_of: Vec::new(),
            class_loc: Vec::new(),
            gaps: vec![Vec::new(); nb],
            variant: vec![Impl::Default; n],
            swap: vec![false; n],
        }
    }

    pub fn run(&mut self) -> Flow {
        self.phase_a(0)
    }

    fn tick(&mut self) -> bool {
        self.nodes += 1;
        if self.nodes.is_multiple_of(256) {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    self.timed_out = true;
                }
            }
        }
        self.timed_out
    }

    fn arrange<T>(&mut self, v: &mut [T]) {
        if let Some(r) = self.rng.as_mut() {
            v.shuffle(r);
        }
    }

    fn within_bound(&self, v: u64) -> bool {
        self.bound.is_none_or(|b| v <= b)
    }

    // ---- phase A ----

    fn item_min(&self, it: &Item) -> u32 {
        match it {
            Item::Op { op, options } => options.iter().map(|&c| self.m.latency(*op, c)).min().unwrap(),
            Item::Nops { .. } => 0,
        }
    }

    fn lower_bound(&self, decided: usize) -> u64 {
        let mut work = vec![0u32; self.m.f.blocks.len()];
        let mut pending = vec![false; self.m.f.num_ops()];
        for it in &self.m.items[decided..] {
            match it {
                Item::Op { op, .. } => {
                    pending[*op] = true;
                    work[self.m.f.block_of(*op)] += self.item_min(it);
                }
                Item::Nops { block } => {
                    for &o in &self.m.opt_nops[*block] {
                        pending[o] = true;
                    }
                }
            }
        }
        for o in 0..pending.len() {
            if !pending[o] {
                work[self.m.f.block_of(o)] += self.m.latency(o, self.choice[o]);
            }
        }
        work.iter().zip(&self.m.weight).map(|(&c, &w)| c as u64 * w).sum()
    }

    fn phase_a(&mut self, i: usize) -> Flow {
        if self.tick() {
            return Flow::Stop;
        }
        if i == self.m.items.len() {
            return self.after_a();
        }
        let m = self.m;
        match &m.items[i] {
            Item::Op { op, options } => {
                let mut opts = options.clone();
                if self.rng.is_some() {
                    self.arrange(&mut opts);
                } else {
                    opts.sort_by_key(|&c| m.latency(*op, c));
                }
                for c in opts {
                    self.choice[*op] = c;
                    if self.within_bound(self.lower_bound(i + 1)) {
                        let r = self.phase_a(i + 1);
                        if r != Flow::Continue {
                            self.choice[*op] = m.fixed[*op];
                            return r;
                        }
                    }
                }
                self.choice[*op] = m.fixed[*op];
            }
            Item::Nops { block } => {
                let nops = &m.opt_nops[*block];
                let mut counts: Vec<usize> = (0..=nops.len()).collect();
                self.arrange(&mut counts);
                for k in counts {
                    for (j, &o) in nops.iter().enumerate() {
                        self.choice[o] = (j < k).then_some(Impl::Default);
                    }
                    if self.within_bound(self.lower_bound(i + 1)) {
                        let r = self.phase_a(i + 1);
                        if r != Flow::Continue {
                            for &o in nops {
                                self.choice[o] = None;
                            }
                            return r;
                        }
                    }
                }
                for &o in nops {
                    self.choice[o] = None;
                }
            }
        }
        Flow::Continue
    }

    fn after_a(&mut self) -> Flow {
        let m = self.m;
        for b in 0..m.f.blocks.len() {
            self.work[b] = m.block_ops[b].iter().map(|&o| m.latency(o, self.choice[o])).sum();
            if self.work[b] > m.horizon[b] {
                return Flow::Continue;
            }
        }
        let lb: u64 = self.work.iter().zip(&m.weight).map(|(&c, &w)| c as u64 * w).sum();
        if !self.within_bound(lb) || !self.costs_exist(0) {
            return Flow::Continue;
        }
        if self.optimal {
            match self.phase_b(0) {
                Flow::Found => self.phase_d(0),
                other => other,
            }
        } else {
            self.phase_b(0)
        }
    }

    // ---- phase B ----

    fn phase_b(&mut self, b: BlockId) -> Flow {
        if b == self.m.f.blocks.len() {
            return self.start_c();
        }
        let deps = self.m.block_deps(&self.choice, b);
        self.order[b].clear();
        self.order_dfs(b, &deps)
    }

    fn order_dfs(&mut self, b: BlockId, deps: &[(OpId, Vec<OpId>)]) -> Flow {
        if self.tick() {
            return Flow::Stop;
        }
        if self.order[b].len() == deps.len() {
            if !self.bus_ok(b) {
                return Flow::Continue;
            }
            return self.phase_b(b + 1);
        }
        let placed = &self.order[b];
        let remaining = deps.len() - placed.len();
        let term = self.m.term[b];
        let mut ready: Vec<OpId> = deps
            .iter()
            .filter(|(o, d)| {
                !placed.contains(o) && d.iter().all(|p| placed.contains(p)) && (Some(*o) != term || remaining == 1)
            })
            .map(|(o, _)| *o)
            .collect();
        self.arrange(&mut ready);
        for o in ready {
            self.pos[o] = self.order[b].len() as i64;
            self.order[b].push(o);
            let r = self.order_dfs(b, deps);
            if r != Flow::Continue {
                return r;
            }
            self.order[b].pop();
        }
        Flow::Continue
    }

    fn bus_ok(&mut self, b: BlockId) -> bool {
        let m = self.m;
        let mut state: BTreeSet<MemNode> = if b == 0 {
            BTreeSet::from([MemNode::Bottom])
        } else {
            m.preds[b].iter().flat_map(|&p| self.bus_out[p].iter().copied()).collect()
        };
        for &o in &self.order[b] {
            if !m.on_bus(o, self.choice[o].unwrap()) {
                continue;
            }
            let me = MemNode::Op(o);
            if state.iter().any(|&p| m.is_mre(p, me)) {
                return false;
            }
            state = BTreeSet::from([me]);
        }
        self.bus_out[b] = state;
        true
    }

    // ---- phase C ----

    fn start_c(&mut self) -> Flow {
        let m = self.m;
        let cl = Classes::new(m.f, &self.choice);
        let Some(doms) = class_domains(m, &self.choice, &cl) else {
            return Flow::Continue;
        };
        self.adj = conflict_graph(m, &self.choice, &self.pos, &cl);
        self.doms = doms;
        let key = |c: usize| match m.f.temps[cl.root[c]].def {
            Definition::Op(o) => (m.f.block_of(o), self.pos[o], c),
            _ => (0, -1, c),
        };
        let mut order: Vec<usize> = (0..cl.len()).collect();
        order.sort_by_key(|&c| key(c));
        for e in &mut self.events {
            e.clear();
        }
        self.event_of = vec![None; cl.len()];
        for c in 0..cl.len() {
            if let Definition::Op(o) = m.f.temps[cl.root[c]].def {
                if self.choice[o] != Some(Impl::Store) {
                    let b = m.f.block_of(o);
                    self.events[b].push((self.pos[o], c));
                    self.event_of[c] = Some((b, self.pos[o]));
                }
            }
        }
        for e in &mut self.events {
            e.sort_unstable();
        }
        self.class_order = order;
        self.class_loc = vec![None; cl.len()];
        self.classes = Some(cl);
        self.assign(0)
    }

    fn writers_before(&self, b: BlockId, p: i64, r: Loc, out: &mut BTreeSet<Node>) {
        let cl = self.classes.as_ref().unwrap();
        for &(q, c) in self.events[b].iter().rev() {
            if q < p && self.class_loc[c] == Some(r) {
                out.insert(Node::Temp(cl.root[c]));
                return;
            }
        }
        if b == 0 {
            let holder = self
                .m
                .inputs
                .iter()
                .find(|&&t| self.class_loc[cl.of[t]] == Some(r));
            out.insert(holder.map_or(Node::Bottom, |&t| Node::Temp(t)));
            return;
        }
        for &pb in &self.m.preds[b] {
            self.writers_before(pb, i64::MAX, r, out);
        }
    }

    fn rot_ok(&self, c: usize, l: Loc) -> bool {
        if self.m.rot.is_empty() || !matches!(l, Loc::Reg(_)) {
            return true;
        }
        let Some((b, p)) = self.event_of[c] else { return true };
        let me = Node::Temp(self.classes.as_ref().unwrap().root[c]);
        let mut prev = BTreeSet::new();
        self.writers_before(b, p, l, &mut prev);
        prev.iter().all(|&x| !self.m.is_rot(x, me))
    }

    fn assign(&mut self, k: usize) -> Flow {
        if self.tick() {
            return Flow::Stop;
        }
        if k == self.class_order.len() {
            return if self.optimal { Flow::Found } else { self.phase_d(0) };
        }
        let c = self.class_order[k];
        let mut cands = self.doms[c].clone();
        if self.optimal {
            // Untouched locations of one kind are interchangeable: keep the first.
            let used: BTreeSet<Loc> = self.class_loc.iter().flatten().copied().collect();
            let mut seen_reg = false;
            let mut seen_spill = false;
            cands.retain(|&l| {
                if used.contains(&l) {
                    return true;
                }
                let seen = match l {
                    Loc::Reg(_) => &mut seen_reg,
                    Loc::Spill(_) => &mut seen_spill,
                };
                !std::mem::replace(seen, true)
            });
        } else {
            self.arrange(&mut cands);
        }
        for l in cands {
            if self.adj[c].iter().any(|&y| self.class_loc[y] == Some(l)) {
                continue;
            }
            if !self.rot_ok(c, l) {
                continue;
            }
            self.class_loc[c] = Some(l);
            let r = self.assign(k + 1);
            if r != Flow::Continue {
                return r;
            }
            self.class_loc[c] = None;
        }
        Flow::Continue
    }

    // ---- phase D ----

    fn cost_range(&self, b: BlockId) -> (u32, u32) {
        let w = self.work[b];
        if w == 0 {
            (0, 0)
        } else if self.m.nop_only[b] {
            (w, w)
        } else {
            (w, self.m.horizon[b])
        }
    }

    fn balance_ok(&self, decided: BlockId) -> bool {
        for set in &self.m.balance {
            let mut lo_max = 0u64;
            let mut hi_min = u64::MAX;
            for (inner, k) in set {
                let (mut lo, mut hi) = (*k, *k);
                for &b in inner {
                    if b <= decided {
                        lo += self.cost[b] as u64;
                        hi += self.cost[b] as u64;
                    } else {
                        let (l, h) = self.cost_range(b);
                        lo += l as u64;
                        hi += h as u64;
                    }
                }
                lo_max = lo_max.max(lo);
                hi_min = hi_min.min(hi);
            }
            if lo_max > hi_min {
                return false;
            }
        }
        true
    }

    /// Whether some block costs satisfy balance and the bound. Depends on
    /// phase A only, so checking it early saves re-running B and C in vain.
    fn costs_exist(&mut self, b: BlockId) -> bool {
        let m = self.m;
        let nb = m.f.blocks.len();
        if b == nb {
            return true;
        }
        let fixed: u64 = (0..b).map(|x| self.cost[x] as u64 * m.weight[x]).sum();
        let rest: u64 = (b + 1..nb).map(|x| self.work[x] as u64 * m.weight[x]).sum();
        let (lo, hi) = self.cost_range(b);
        for c in lo..=hi {
            if !self.within_bound(fixed + c as u64 * m.weight[b] + rest) {
                break;
            }
            self.cost[b] = c;
            if self.balance_ok(b) && self.costs_exist(b + 1) {
                return true;
            }
        }
        false
    }

    fn phase_d(&mut self, b: BlockId) -> Flow {
        if self.tick() {
            return Flow::Stop;
        }
        let m = self.m;
        let nb = m.f.blocks.len();
        if b == nb {
            return self.phase_e_start();
        }
        let fixed: u64 = (0..b).map(|x| self.cost[x] as u64 * m.weight[x]).sum();
        let rest: u64 = (b + 1..nb).map(|x| self.work[x] as u64 * m.weight[x]).sum();
        let (lo, hi) = self.cost_range(b);
        let mut vals: Vec<u32> = (lo..=hi).collect();
        self.arrange(&mut vals);
        for c in vals {
            if !self.within_bound(fixed + c as u64 * m.weight[b] + rest) {
                if self.rng.is_none() {
                    break;
                }
                continue;
            }
            self.cost[b] = c;
            if !self.balance_ok(b) {
                continue;
            }
            let r = self.phase_d(b + 1);
            if r != Flow::Continue {
                return r;
            }
        }
        Flow::Continue
    }

    // ---- phase E ----

    fn phase_e_start(&mut self) -> Flow {
        let m = self.m;
        for b in 0..m.f.blocks.len() {
            let n = self.order[b].len();
            let g = self.cost[b] - self.work[b];
            self.gaps[b] = vec![0; n];
            if n > 0 {
                // Canonical: idle time just before the last operation.
                self.gaps[b][n - 1] = g;
            }
        }
        for o in 0..m.f.num_ops() {
            self.variant[o] = self.choice[o].unwrap_or(Impl::Default);
            self.swap[o] = false;
        }
        if self.optimal {
            return self.leaf();
        }
        self.phase_e(0)
    }

    /// Free choices, enumerated block gaps first, then per-op variants and swaps.
    fn phase_e(&mut self, i: usize) -> Flow {
        if self.tick() {
            return Flow::Stop;
        }
        let m = self.m;
        let nb = m.f.blocks.len();
        let n = m.f.num_ops();
        if i < nb {
            let b = i;
            let g = self.cost[b] - self.work[b];
            let parts = self.order[b].len();
            if g == 0 || parts == 0 {
                return self.phase_e(i + 1);
            }
            let mut comps = compositions(g, parts);
            self.arrange(&mut comps);
            for cp in comps {
                self.gaps[b] = cp;
                let r = self.phase_e(i + 1);
                if r != Flow::Continue {
                    return r;
                }
            }
            return Flow::Continue;
        }
        let o = i - nb;
        if o == n {
            return self.leaf();
        }
        let mut opts: Vec<(Impl, bool)> = Vec::new();
        match self.choice[o] {
            None => opts.push((Impl::Default, false)),
            Some(c) => {
                let mut vs = vec![c];
                if c == Impl::Default {
                    vs.extend(m.alu_variants[o].iter().copied());
                }
                for v in vs {
                    opts.push((v, false));
                    if m.swappable[o] {
                        opts.push((v, true));
                    }
                }
            }
        }
        self.arrange(&mut opts);
        for (v, s) in opts {
            self.variant[o] = v;
            self.swap[o] = s;
            let r = self.phase_e(i + 1);
            if r != Flow::Continue {
                return r;
            }
        }
        self.variant[o] = self.choice[o].unwrap_or(Impl::Default);
        self.swap[o] = false;
        Flow::Continue
    }

    fn allocation(&self) -> Allocation {
        let m = self.m;
        let mut ops = vec![
            OpPlacement {
                active: false,
                cycle: 0,
                choice: Impl::Default,
                swap: false,
            };
            m.f.num_ops()
        ];
        for b in 0..m.f.blocks.len() {
            let mut t = 0;
            for (i, &o) in self.order[b].iter().enumerate() {
                t += self.gaps[b][i];
                ops[o] = OpPlacement {
                    active: true,
                    cycle: t,
                    choice: self.variant[o],
                    swap: self.swap[o],
                };
                t += m.latency(o, self.choice[o]);
            }
        }
        let cl = self.classes.as_ref().unwrap();
        let loc = (0..m.f.temps.len()).map(|t| self.class_loc[cl.of[t]]).collect();
        Allocation { loc, ops }
    }

    fn leaf(&mut self) -> Flow {
        let m = self.m;
        let alloc = self.allocation();
        if self.blocking.iter().any(|b| distance_alloc(b, &alloc) < self.dthresh) {
            return Flow::Continue;
        }
        let obj: u64 = self.cost.iter().zip(&m.weight).map(|(&c, &w)| c as u64 * w).sum();
        let sol = Solution {
            alloc,
            objective: Ratio::new(obj, m.denom),
            seed: 0,
        };
        let v = check_solution(&sol, m.prob);
        if !v.is_empty() {
            debug_assert!(false, "search produced an infeasible assignment: {v:?}");
            return Flow::Continue;
        }
        if self.optimal {
            self.best = Some((obj, sol.alloc));
            match obj.checked_sub(1) {
                Some(b) => {
                    self.bound = Some(b);
                    Flow::Continue
                }
                // Nothing beats zero.
                None => Flow::Stop,
            }
        } else {
            self.found = Some(sol.alloc);
            Flow::Found
        }
    }
}
