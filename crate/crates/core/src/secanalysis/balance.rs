use std::collections::HashMap;

use thiserror::Error;

use super::paths::SecretPathSet;
use crate::machine::MachineProfile;
use crate::mir::{build_cfg, Block, BlockId, EdgeKind, FunctionIR, Opcode, Operand, Operation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BalanceError {
    #[error("arm of the branch in block {0} spans more than one block; use the empty-block transformation")]
    ArmTooLong(BlockId),
}

/// Result of a balancing transformation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Balanced {
    pub function: FunctionIR,
    /// Id of the inserted block in `function`.
    pub inserted: Option<BlockId>,
    pub warning: Option<String>,
}

/// Worst-case cost of a block's operations under any implementation choice.
pub fn worst_case_block_cost(b: &Block, p: &MachineProfile) -> u32 {
    b.ops
        .iter()
        .map(|o| match o.opcode {
            Opcode::Ld | Opcode::St | Opcode::Copy => p.mem_latency,
            Opcode::B => p.jump_latency,
            Opcode::Ret => p.ret_latency,
            Opcode::Beq | Opcode::Bne => p.not_taken_cost,
            _ => p.alu_latency,
        })
        .sum()
}

/// Blocks of a path strictly between the branch block and the common sink.
fn interior<'a>(s: &SecretPathSet, p: &'a [BlockId]) -> &'a [BlockId] {
    let end = if s.sink().is_some() { p.len() - 1 } else { p.len() };
    &p[1..end]
}

/// Worst-case cost of a path's interior plus the taken-branch overheads on its edges.
fn path_bound(f: &FunctionIR, s: &SecretPathSet, p: &[BlockId], prof: &MachineProfile) -> u32 {
    let g = build_cfg(f);
    let blocks: u32 = interior(s, p).iter().map(|&b| worst_case_block_cost(&f.blocks[b], prof)).sum();
    let edges: u32 = p
        .windows(2)
        .filter(|w| g.edge(w[0], w[1]).map(|e| e.kind) == Some(EdgeKind::Taken))
        .count() as u32
        * prof.taken_branch_overhead;
    blocks + edges
}

/// Upper bound on the padding any path of `s` can need.
pub fn padding_bound(f: &FunctionIR, s: &SecretPathSet, prof: &MachineProfile) -> u32 {
    s.paths
        .iter()
        .map(|p| path_bound(f, s, p, prof))
        .max()
        .unwrap_or(0)
        + prof.taken_branch_overhead
}

fn shortest(s: &SecretPathSet) -> &[BlockId] {
    s.paths.iter().min_by_key(|p| p.len()).expect("path sets are non-empty")
}

fn balanced_in_blocks(s: &SecretPathSet) -> bool {
    s.paths.iter().all(|p| p.len() == s.paths[0].len())
}

/// Inserts `body` as a new block on edge `u -> v`. A taken edge becomes the
/// new fall-through (branch sense inverted) and the new block jumps to `v`.
fn insert_on_edge(f: &FunctionIR, u: BlockId, v: BlockId, body: Vec<Operation>) -> (FunctionIR, BlockId) {
    let mut g = f.clone();
    let taken = v != u + 1;
    for b in &mut g.blocks {
        for op in &mut b.ops {
            if let Some(t) = op.target.as_mut() {
                if *t > u {
                    *t += 1;
                }
            }
        }
    }
    let mut e = Block::new(u + 1);
    e.weight = f.blocks[v].weight;
    e.ops = body;
    if taken {
        let br = g.blocks[u].ops.last_mut().expect("branch");
        br.opcode = match br.opcode {
            Opcode::Beq => Opcode::Bne,
            Opcode::Bne => Opcode::Beq,
            other => other,
        };
        br.target = Some(u + 2);
        let mut jump = Operation::new(Opcode::B);
        jump.target = Some(v + 1);
        e.ops.push(jump);
    }
    g.blocks.insert(u + 1, e);
    g.renumber();
    g.validate().expect("edge insertion keeps the function valid");
    (g, u + 1)
}

/// Pads the shortest path of `s` with a block of optional NOPs.
pub fn balance_ebb(f: &FunctionIR, s: &SecretPathSet) -> Balanced {
    if balanced_in_blocks(s) {
        return Balanced {
            function: f.clone(),
            inserted: None,
            warning: Some(format!(
                "branch in block {}: paths already have equal block counts",
                s.branch_block
            )),
        };
    }
    let k = padding_bound(f, s, &MachineProfile::tight8());
    let body = (0..k)
        .map(|_| {
            let mut nop = Operation::new(Opcode::Nop);
            nop.optional = true;
            nop
        })
        .collect();
    let short = shortest(s);
    let (function, e) = insert_on_edge(f, short[0], short[1], body);
    Balanced {
        function,
        inserted: Some(e),
        warning: None,
    }
}

/// Gives the shortest path a copy of the one-block arm whose results go to
/// fresh, never-read temps and fresh scratch slots.
pub fn balance_cbb(f: &FunctionIR, s: &SecretPathSet) -> Result<Balanced, BalanceError> {
    if balanced_in_blocks(s) {
        return Ok(Balanced {
            function: f.clone(),
            inserted: None,
            warning: Some(format!(
                "branch in block {}: paths already have equal block counts",
                s.branch_block
            )),
        });
    }
    let short = shortest(s).to_vec();
    let mut arm = None;
    for p in &s.paths {
        let inner = interior(s, p);
        match inner.len() {
            0 if p.len() == short.len() => {}
            1 if arm.is_none() || arm == Some(inner[0]) => arm = Some(inner[0]),
            _ => return Err(BalanceError::ArmTooLong(s.branch_block)),
        }
    }
    let arm = arm.ok_or(BalanceError::ArmTooLong(s.branch_block))?;

    let mut g = f.clone();
    let mut temps: HashMap<usize, usize> = HashMap::new();
    let mut slots: HashMap<usize, usize> = HashMap::new();
    let mut body = Vec::new();
    for op in &f.blocks[arm].ops {
        if op.opcode.is_terminator() {
            continue;
        }
        let mut c = op.clone();
        for u in &mut c.uses {
            if let Operand::Temp(t) = u {
                if let Some(&n) = temps.get(t) {
                    *t = n;
                }
            }
        }
        if let Some(sl) = c.slot {
            let fresh = *slots
                .entry(sl)
                .or_insert_with(|| g.fresh_slot(&f.slots[sl]));
            c.slot = Some(fresh);
        }
        if let Some(d) = op.def {
            let n = g.fresh_temp(&f.temps[d].name);
            temps.insert(d, n);
            c.def = Some(n);
        }
        body.push(c);
    }
    let (function, e) = insert_on_edge(&g, short[0], short[1], body);
    Ok(Balanced {
        function,
        inserted: Some(e),
        warning: None,
    })
}
