use thiserror::Error;

use super::{BlockId, Definition, FunctionIR, OpId, Opcode, Operand};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("function has no blocks")]
    NoBlocks,
    #[error("unlabeled input `{0}`")]
    UnlabeledInput(String),
    #[error("use of undefined temp `{0}`")]
    UndefinedTemp(String),
    #[error("temp `{0}` defined more than once")]
    Redefinition(String),
    #[error("use of `{temp}` in operation {op} is not dominated by its definition")]
    UseNotDominated { temp: String, op: OpId },
    #[error("back edge from block {from} to block {to}")]
    BackEdge { from: BlockId, to: BlockId },
    #[error("branch in block {block} targets missing block {target}")]
    BadTarget { block: BlockId, target: BlockId },
    #[error("conditional branch in block {block} targets its own fall-through")]
    DegenerateBranch { block: BlockId },
    #[error("terminator in the middle of block {block}")]
    MisplacedTerminator { block: BlockId },
    #[error("control falls off the end of the function in block {block}")]
    FallsOffEnd { block: BlockId },
    #[error("block {block} is unreachable")]
    Unreachable { block: BlockId },
    #[error("no ret in function")]
    NoExit,
    #[error("block {block} has non-positive weight")]
    ZeroWeight { block: BlockId },
    #[error("operation {op}: {message}")]
    BadOperation { op: OpId, message: String },
}

fn shape(f: &FunctionIR, op_id: OpId, opcode: Opcode, def: bool, uses: &[Operand], slot: bool, target: bool) -> Result<(), ValidationError> {
    let bad = |m: &str| ValidationError::BadOperation {
        op: op_id,
        message: format!("`{}` {m}", opcode.mnemonic()),
    };
    if def != opcode.has_def() {
        return Err(bad("has wrong number of definitions"));
    }
    let is_temp = |u: &Operand| matches!(u, Operand::Temp(t) if *t < f.temps.len());
    let ok = match opcode {
        Opcode::Add | Opcode::Sub | Opcode::Xor | Opcode::And | Opcode::Or => {
            uses.len() == 2 && is_temp(&uses[0]) && (is_temp(&uses[1]) || matches!(uses[1], Operand::Imm(_)))
        }
        Opcode::Mov | Opcode::Copy | Opcode::Ret | Opcode::St => uses.len() == 1 && is_temp(&uses[0]),
        Opcode::Li => uses.len() == 1 && matches!(uses[0], Operand::Imm(_)),
        Opcode::Beq | Opcode::Bne => uses.len() == 2 && uses.iter().all(is_temp),
        Opcode::Ld | Opcode::B | Opcode::Nop => uses.is_empty(),
    };
    if !ok {
        return Err(bad("has malformed operands"));
    }
    if slot != matches!(opcode, Opcode::Ld | Opcode::St) {
        return Err(bad("has a misplaced memory slot"));
    }
    if target != matches!(opcode, Opcode::Beq | Opcode::Bne | Opcode::B) {
        return Err(bad("has a misplaced branch target"));
    }
    Ok(())
}

/// Immediate dominators over the forward-only block graph.
pub(crate) fn dominators(f: &FunctionIR) -> Vec<Option<BlockId>> {
    let n = f.blocks.len();
    let mut preds = vec![Vec::new(); n];
    for b in &f.blocks {
        for s in b.successors() {
            if s < n {
                preds[s].push(b.id);
            }
        }
    }
    let mut idom: Vec<Option<BlockId>> = vec![None; n];
    // Blocks are topologically ordered, so one pass suffices.
    for b in 1..n {
        let mut it = preds[b].iter().copied();
        let Some(mut d) = it.next() else { continue };
        for p in it {
            let (mut x, mut y) = (d, p);
            while x != y {
                if x > y {
                    x = idom[x].unwrap_or(0);
                } else {
                    y = idom[y].unwrap_or(0);
                }
            }
            d = x;
        }
        idom[b] = Some(d);
    }
    idom
}

fn dominates(idom: &[Option<BlockId>], a: BlockId, mut b: BlockId) -> bool {
    loop {
        if a == b {
            return true;
        }
        match idom[b] {
            Some(p) => b = p,
            None => return false,
        }
    }
}

pub(crate) fn validate(f: &FunctionIR) -> Result<(), ValidationError> {
    if f.blocks.is_empty() {
        return Err(ValidationError::NoBlocks);
    }
    for t in &f.temps {
        if matches!(t.def, Definition::UnlabeledInput) {
            return Err(ValidationError::UnlabeledInput(t.name.clone()));
        }
    }
    for (i, a) in f.temps.iter().enumerate() {
        if f.temps[..i].iter().any(|b| b.name == a.name) {
            return Err(ValidationError::Redefinition(a.name.clone()));
        }
    }

    let n = f.blocks.len();
    let mut next_id = 0;
    let mut has_ret = false;
    let mut def_count = vec![0usize; f.temps.len()];
    for (bi, b) in f.blocks.iter().enumerate() {
        if b.id != bi {
            return Err(ValidationError::BadOperation {
                op: next_id,
                message: format!("block {bi} carries id {}", b.id),
            });
        }
        if *b.weight.numer() == 0 {
            return Err(ValidationError::ZeroWeight { block: bi });
        }
        for (i, op) in b.ops.iter().enumerate() {
            if op.id != next_id {
                return Err(ValidationError::BadOperation {
                    op: op.id,
                    message: format!("expected id {next_id}"),
                });
            }
            next_id += 1;
            shape(f, op.id, op.opcode, op.def.is_some(), &op.uses, op.slot.is_some(), op.target.is_some())?;
            if op.optional && !matches!(op.opcode, Opcode::Copy | Opcode::Nop) {
                return Err(ValidationError::BadOperation {
                    op: op.id,
                    message: format!("`{}` cannot be optional", op.opcode.mnemonic()),
                });
            }
            if let Some(s) = op.slot {
                if s >= f.slots.len() {
                    return Err(ValidationError::BadOperation {
                        op: op.id,
                        message: "unknown memory slot".into(),
                    });
                }
            }
            if let Some(d) = op.def {
                if d >= f.temps.len() {
                    return Err(ValidationError::BadOperation {
                        op: op.id,
                        message: "unknown temp".into(),
                    });
                }
                def_count[d] += 1;
                if f.temps[d].def != Definition::Op(op.id) {
                    return Err(ValidationError::Redefinition(f.temps[d].name.clone()));
                }
            }
            if op.opcode.is_terminator() && i + 1 != b.ops.len() {
                return Err(ValidationError::MisplacedTerminator { block: bi });
            }
            if op.opcode == Opcode::Ret {
                has_ret = true;
            }
            if let Some(t) = op.target {
                if t <= bi {
                    return Err(ValidationError::BackEdge { from: bi, to: t });
                }
                if t >= n {
                    return Err(ValidationError::BadTarget { block: bi, target: t });
                }
                if op.opcode.is_conditional_branch() && t == bi + 1 {
                    return Err(ValidationError::DegenerateBranch { block: bi });
                }
            }
        }
        let falls = !matches!(b.terminator().map(|o| o.opcode), Some(Opcode::Ret | Opcode::B));
        if falls && bi + 1 == n {
            return Err(ValidationError::FallsOffEnd { block: bi });
        }
    }
    for (t, temp) in f.temps.iter().enumerate() {
        if matches!(temp.def, Definition::Op(_)) && def_count[t] != 1 {
            return Err(ValidationError::Redefinition(temp.name.clone()));
        }
    }
    if !has_ret {
        return Err(ValidationError::NoExit);
    }

    let mut reach = vec![false; n];
    reach[0] = true;
    for b in &f.blocks {
        if reach[b.id] {
            for s in b.successors() {
                reach[s] = true;
            }
        }
    }
    if let Some(b) = reach.iter().position(|r| !r) {
        return Err(ValidationError::Unreachable { block: b });
    }

    // Every use must be dominated by its definition.
    let idom = dominators(f);
    let mut pos = vec![(0usize, 0usize); next_id];
    for b in &f.blocks {
        for (i, op) in b.ops.iter().enumerate() {
            pos[op.id] = (b.id, i);
        }
    }
    for b in &f.blocks {
        for (i, op) in b.ops.iter().enumerate() {
            for t in op.used_temps() {
                let Definition::Op(d) = f.temps[t].def else { continue };
                let (db, di) = pos[d];
                let ok = if db == b.id { di < i } else { dominates(&idom, db, b.id) };
                if !ok {
                    return Err(ValidationError::UseNotDominated {
                        temp: f.temps[t].name.clone(),
                        op: op.id,
                    });
                }
            }
        }
    }
    Ok(())
}
