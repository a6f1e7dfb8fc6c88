//! The combinatorial problem over schedules and register assignments.
//!
//! Variables per operation: activity (optional ops only), issue cycle,
//! implementation alternative and operand swap. Variables per temp: a
//! location (register or spill slot). The objective is the block-weighted
//! sum of block makespans. Taken-branch overheads belong to paths, not
//! blocks, and only appear in the balance constraints.

mod check;
mod sexpr;

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::machine::{op_latency, Allocation, Impl, Loc, MachineProfile};
use crate::mir::{BlockId, Definition, FunctionIR, OpId, Opcode, Operand, TempId, Weight};
use crate::secanalysis::{padding_bound, value_origin, LeakPairSets, MemNode, Node, SecretPathSet};

pub use check::{check_solution, Violation};
pub use sexpr::dump_problem;

/// Idle cycles each ordinary block may use beyond its operations.
pub const DEFAULT_NOP_BUDGET: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Mode {
    /// Base backend only.
    None,
    /// Timing: balanced secret-dependent paths.
    Tsc,
    /// Power: no secret-revealing register or bus transitions.
    Psc,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Tsc => "tsc",
            Mode::Psc => "psc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpVars {
    pub block: BlockId,
    pub optional: bool,
    /// Implementation alternatives; the first is the default.
    pub impls: Vec<Impl>,
    pub swappable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionVars {
    pub ops: Vec<OpVars>,
    /// Location domain per temp.
    pub locs: Vec<Vec<Loc>>,
    /// Latest completion cycle per block.
    pub horizon: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Family {
    Dependency,
    Interference,
    CopySemantics,
    SingleIssue,
    Balance,
    RotConflict,
    MreConflict,
    OptimalityGap,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Dependency => "dependency",
            Family::Interference => "register-interference",
            Family::CopySemantics => "copy-semantics",
            Family::SingleIssue => "single-issue",
            Family::Balance => "balance",
            Family::RotConflict => "rot-conflict",
            Family::MreConflict => "mre-conflict",
            Family::OptimalityGap => "optimality-gap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// `after` issues no earlier than `before` completes, when both are active.
    /// An inactive copy passes the requirement on to its own source.
    Dependency { before: OpId, after: OpId },
    /// Overlapping live values of different origin get different locations.
    Interference,
    CopySemantics { copy: OpId },
    SingleIssue { block: BlockId },
    Balance { set: usize },
    RotConflict { a: Node, b: Node },
    MreConflict { a: MemNode, b: MemNode },
    OptimalityGap { bound: Ratio<u64> },
}

impl Constraint {
    pub fn family(&self) -> Family {
        match self {
            Constraint::Dependency { .. } => Family::Dependency,
            Constraint::Interference => Family::Interference,
            Constraint::CopySemantics { .. } => Family::CopySemantics,
            Constraint::SingleIssue { .. } => Family::SingleIssue,
            Constraint::Balance { .. } => Family::Balance,
            Constraint::RotConflict { .. } => Family::RotConflict,
            Constraint::MreConflict { .. } => Family::MreConflict,
            Constraint::OptimalityGap { .. } => Family::OptimalityGap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopProblem {
    pub function: FunctionIR,
    pub profile: MachineProfile,
    pub mode: Mode,
    pub pairs: LeakPairSets,
    pub psets: Vec<SecretPathSet>,
    pub gap: Ratio<u64>,
    pub best_cost: Option<Ratio<u64>>,
    pub vars: DecisionVars,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("{inputs} inputs do not fit in {registers} registers")]
    TooManyInputs { inputs: usize, registers: u8 },
    #[error("{live} values live into block {block} exceed {locations} locations")]
    TooManyLive { block: BlockId, live: usize, locations: usize },
    #[error("function does not fit the machine: {0}")]
    Unsupported(String),
}

/// A full assignment with its objective.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    pub alloc: Allocation,
    pub objective: Ratio<u64>,
    pub seed: u64,
}

fn needs_register(f: &FunctionIR, t: TempId) -> bool {
    let copy_def = f.def_op(t).is_some_and(|o| o.opcode == Opcode::Copy);
    !copy_def || f.users(t).iter().any(|o| o.opcode != Opcode::Copy)
}

fn is_nop_block(f: &FunctionIR, b: BlockId) -> bool {
    let ops = &f.blocks[b].ops;
    ops.iter().any(|o| o.opcode == Opcode::Nop) && ops.iter().all(|o| o.opcode == Opcode::Nop || o.opcode.is_terminator())
}

/// Whether `b` holds only balancing NOPs and possibly a terminator; such
/// blocks are scheduled back to back with the active NOPs first.
pub fn nop_only_block(f: &FunctionIR, b: BlockId) -> bool {
    is_nop_block(f, b)
}

/// Implementation alternatives for an operation.
pub fn impl_domain(f: &FunctionIR, op: OpId) -> Vec<Impl> {
    let o = f.op(op);
    match o.opcode {
        Opcode::Mov => vec![Impl::Default, Impl::AddZero, Impl::OrZero],
        Opcode::Copy => {
            let src = o.uses[0].temp().unwrap();
            let mut v = vec![Impl::Default, Impl::AddZero, Impl::OrZero];
            if !needs_register(f, src) {
                v.push(Impl::Load);
            }
            if !needs_register(f, o.def.unwrap()) {
                v.push(Impl::Store);
            }
            if f.def_op(src).is_some_and(|d| d.opcode == Opcode::Li) {
                v.push(Impl::Remat);
            }
            v
        }
        _ => vec![Impl::Default],
    }
}

fn swappable(o: &crate::mir::Operation) -> bool {
    o.commutative() && matches!((o.uses[0], o.uses[1]), (Operand::Temp(a), Operand::Temp(b)) if a != b)
}

/// Worst-case latency of an operation over its alternatives.
pub fn max_latency(f: &FunctionIR, op: OpId, p: &MachineProfile) -> u32 {
    impl_domain(f, op)
        .into_iter()
        .map(|i| op_latency(f.op(op).opcode, i, p))
        .max()
        .unwrap()
}

/// Static ordering requirements within blocks: value flow and same-slot memory order.
fn dependencies(f: &FunctionIR) -> Vec<(OpId, OpId)> {
    let mut deps = BTreeSet::new();
    for b in &f.blocks {
        for (i, o) in b.ops.iter().enumerate() {
            for t in o.used_temps() {
                if let Some(d) = f.def_op(t) {
                    if f.block_of(d.id) == b.id {
                        deps.insert((d.id, o.id));
                    }
                }
            }
            if matches!(o.opcode, Opcode::Ld | Opcode::St) {
                for p in &b.ops[..i] {
                    let mem = matches!(p.opcode, Opcode::Ld | Opcode::St);
                    if mem && p.slot == o.slot && (p.opcode == Opcode::St || o.opcode == Opcode::St) {
                        deps.insert((p.id, o.id));
                    }
                }
            }
        }
    }
    deps.into_iter().collect()
}

/// Origins live on entry to each block, counting every use.
fn live_in_origins(f: &FunctionIR) -> Vec<BTreeSet<TempId>> {
    let origin = value_origin(f);
    let n = f.blocks.len();
    let mut live: Vec<BTreeSet<TempId>> = vec![BTreeSet::new(); n];
    for b in (0..n).rev() {
        let mut cur: BTreeSet<TempId> = BTreeSet::new();
        for s in f.blocks[b].successors() {
            cur.extend(live[s].iter().copied());
        }
        for o in f.blocks[b].ops.iter().rev() {
            if let Some(d) = o.def {
                cur.remove(&d);
            }
            cur.extend(o.used_temps());
        }
        live[b] = cur;
    }
    live.into_iter()
        .map(|s| s.into_iter().map(|t| origin[t]).collect())
        .collect()
}

/// `max(best, floor((1 + gap) * best))`: the bound never excludes `best` itself.
pub fn gap_bound(best: Ratio<u64>, gap: Ratio<u64>) -> Ratio<u64> {
    let b = ((Ratio::from_integer(1) + gap) * best).floor();
    b.max(best)
}

/// Builds the problem; `best_cost` attaches the optimality-gap bound.
pub fn build_problem(
    f: &FunctionIR,
    pairs: &LeakPairSets,
    psets: &[SecretPathSet],
    p: &MachineProfile,
    mode: Mode,
    gap: Ratio<u64>,
    best_cost: Option<Ratio<u64>>,
) -> Result<CopProblem, ModelError> {
    let inputs = f.inputs().count();
    if inputs > p.num_registers as usize {
        return Err(ModelError::TooManyInputs {
            inputs,
            registers: p.num_registers,
        });
    }
    if f.slots.len() + p.mem_slots as usize > crate::machine::MEM_CELLS {
        return Err(ModelError::Unsupported("too many memory slots".into()));
    }
    for (b, live) in live_in_origins(f).iter().enumerate() {
        if live.len() > p.locations() {
            return Err(ModelError::TooManyLive {
                block: b,
                live: live.len(),
                locations: p.locations(),
            });
        }
    }

    let mut ops = Vec::with_capacity(f.num_ops());
    for o in f.ops() {
        ops.push(OpVars {
            block: f.block_of(o.id),
            optional: o.optional,
            impls: impl_domain(f, o.id),
            swappable: swappable(o),
        });
    }
    let regs = (0..p.num_registers).map(Loc::Reg);
    let all: Vec<Loc> = regs.clone().chain((0..p.mem_slots).map(Loc::Spill)).collect();
    let locs = (0..f.temps.len())
        .map(|t| {
            if needs_register(f, t) || matches!(f.temps[t].def, Definition::Input(_)) {
                regs.clone().collect()
            } else {
                all.clone()
            }
        })
        .collect();

    let mut slack = vec![DEFAULT_NOP_BUDGET; f.blocks.len()];
    if mode == Mode::Tsc {
        for s in psets {
            let k = padding_bound(f, s, p);
            let end = if s.sink().is_some() { 1 } else { 0 };
            for path in &s.paths {
                for &b in &path[1..path.len() - end] {
                    slack[b] = slack[b].max(k);
                }
            }
        }
    }
    let horizon = f
        .blocks
        .iter()
        .map(|b| {
            let work: u32 = b.ops.iter().map(|o| max_latency(f, o.id, p)).sum();
            if is_nop_block(f, b.id) {
                work
            } else {
                work + slack[b.id]
            }
        })
        .collect();

    let mut constraints: Vec<Constraint> = dependencies(f)
        .into_iter()
        .map(|(before, after)| Constraint::Dependency { before, after })
        .collect();
    constraints.push(Constraint::Interference);
    for o in f.ops().filter(|o| o.opcode == Opcode::Copy) {
        constraints.push(Constraint::CopySemantics { copy: o.id });
    }
    for b in 0..f.blocks.len() {
        constraints.push(Constraint::SingleIssue { block: b });
    }
    match mode {
        Mode::Tsc => {
            constraints.extend((0..psets.len()).map(|set| Constraint::Balance { set }));
        }
        Mode::Psc => {
            constraints.extend(pairs.rpairs.iter().map(|&(a, b)| Constraint::RotConflict { a, b }));
            constraints.extend(pairs.mpairs.iter().map(|&(a, b)| Constraint::MreConflict { a, b }));
        }
        Mode::None => {}
    }
    if let Some(best) = best_cost {
        constraints.push(Constraint::OptimalityGap {
            bound: gap_bound(best, gap),
        });
    }
    Ok(CopProblem {
        function: f.clone(),
        profile: p.clone(),
        mode,
        pairs: pairs.clone(),
        psets: psets.to_vec(),
        gap,
        best_cost,
        vars: DecisionVars { ops, locs, horizon },
        constraints,
    })
}

impl CopProblem {
    pub fn has_family(&self, fam: Family) -> bool {
        self.constraints.iter().any(|c| c.family() == fam)
    }

    /// Objective bound from the optimality-gap constraint.
    pub fn bound(&self) -> Option<Ratio<u64>> {
        self.constraints.iter().find_map(|c| match c {
            Constraint::OptimalityGap { bound } => Some(*bound),
            _ => None,
        })
    }

    /// Same problem with one constraint family removed.
    pub fn without(&self, fam: Family) -> CopProblem {
        let mut p = self.clone();
        p.constraints.retain(|c| c.family() != fam);
        if fam == Family::OptimalityGap {
            p.best_cost = None;
        }
        p
    }

    /// Same problem with the optimality-gap bound for `best`.
    pub fn with_bound(&self, best: Ratio<u64>, gap: Ratio<u64>) -> CopProblem {
        let mut p = self.without(Family::OptimalityGap);
        p.gap = gap;
        p.best_cost = Some(best);
        p.constraints.push(Constraint::OptimalityGap {
            bound: gap_bound(best, gap),
        });
        p
    }

    pub fn weight(&self, b: BlockId) -> Weight {
        self.function.blocks[b].weight
    }

    pub fn latency(&self, op: OpId, choice: Impl) -> u32 {
        op_latency(self.function.op(op).opcode, choice, &self.profile)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error("assignment has {got} placements, problem has {expected} operations")]
    Shape { expected: usize, got: usize },
}

/// Makespan of each block: latest completion among its active operations.
pub fn block_costs(prob: &CopProblem, a: &Allocation) -> Result<Vec<u32>, ObjectiveError> {
    let f = &prob.function;
    if a.ops.len() != f.num_ops() {
        return Err(ObjectiveError::Shape {
            expected: f.num_ops(),
            got: a.ops.len(),
        });
    }
    Ok(f.blocks
        .iter()
        .map(|b| {
            b.ops
                .iter()
                .filter(|o| a.ops[o.id].active)
                .map(|o| a.ops[o.id].cycle + prob.latency(o.id, a.ops[o.id].choice))
                .max()
                .unwrap_or(0)
        })
        .collect())
}

/// `Σ weight(b) · cost(b)`.
pub fn objective_value(prob: &CopProblem, a: &Allocation) -> Result<Ratio<u64>, ObjectiveError> {
    let costs = block_costs(prob, a)?;
    Ok(costs
        .iter()
        .enumerate()
        .map(|(b, &c)| prob.weight(b) * Ratio::from_integer(c as u64))
        .sum())
}

#[cfg(test)]
mod tests;
