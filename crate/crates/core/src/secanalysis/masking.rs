use super::types::{infer_types, InferredType, TypeMap};
use crate::mir::{FunctionIR, Opcode, Operand, SecurityLabel, TempId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRestore {
    pub function: FunctionIR,
    /// Temps whose defining XOR was reassociated.
    pub rewritten: Vec<TempId>,
    /// XOR-defined temps still typed secret after the rewrite.
    pub residual: Vec<TempId>,
}

fn operand_type(types: &TypeMap, u: Operand) -> InferredType {
    match u {
        Operand::Temp(t) => types[t].clone(),
        Operand::Imm(_) => InferredType::public(),
    }
}

/// One rewrite `t2 = (a ^ b) ^ c` into `t2 = (x ^ c) ^ y` with a random
/// intermediate, if the pattern occurs.
fn rewrite_once(f: &FunctionIR, types: &TypeMap) -> Option<(FunctionIR, TempId)> {
    for op2 in f.ops() {
        if op2.opcode != Opcode::Xor {
            continue;
        }
        for (i, u) in op2.uses.iter().enumerate() {
            let Operand::Temp(t1) = *u else { continue };
            if types[t1].label != SecurityLabel::Secret {
                continue;
            }
            let Some(op1) = f.def_op(t1) else { continue };
            if op1.opcode != Opcode::Xor || f.users(t1).len() != 1 {
                continue;
            }
            let c = op2.uses[1 - i];
            let (a, b) = (op1.uses[0], op1.uses[1]);
            let mut best: Option<(bool, Operand, Operand)> = None;
            for (x, y) in [(a, b), (b, a)] {
                let ty = InferredType::xor(&operand_type(types, x), &operand_type(types, c));
                if ty.label != SecurityLabel::Random {
                    continue;
                }
                let has_secret = !operand_type(types, x).secret_support.is_empty();
                if best.is_none_or(|(s, _, _)| has_secret && !s) {
                    best = Some((has_secret, x, y));
                }
            }
            let Some((_, x, y)) = best else { continue };
            // Immediates may only be the second ALU operand.
            let first = |p: Operand, q: Operand| match p {
                Operand::Imm(_) => vec![q, p],
                _ => vec![p, q],
            };
            let mut g = f.clone();
            let (id1, id2) = (op1.id, op2.id);
            let mut moved = None;
            for blk in &mut g.blocks {
                if let Some(pos) = blk.ops.iter().position(|o| o.id == id1) {
                    moved = Some(blk.ops.remove(pos));
                }
            }
            let mut new1 = moved.expect("defining op");
            new1.uses = first(x, c);
            for blk in &mut g.blocks {
                if let Some(pos) = blk.ops.iter().position(|o| o.id == id2) {
                    blk.ops[pos].uses = first(Operand::Temp(t1), y);
                    // Place the new intermediate right before its only user.
                    blk.ops.insert(pos, new1);
                    break;
                }
            }
            g.renumber();
            g.validate().expect("reassociation keeps the function valid");
            return Some((g, t1));
        }
    }
    None
}

/// Reassociates XOR chains so masks are applied before public operands.
pub fn restore_mask_order(f: &FunctionIR, types: &TypeMap) -> MaskRestore {
    let mut cur = f.clone();
    let mut types = types.clone();
    let mut rewritten = Vec::new();
    // Each rewrite turns one secret intermediate random; bounded by the op count.
    for _ in 0..=f.num_ops() {
        match rewrite_once(&cur, &types) {
            Some((g, t)) => {
                rewritten.push(t);
                cur = g;
                types = infer_types(&cur);
            }
            None => break,
        }
    }
    let residual = cur
        .ops()
        .filter(|o| o.opcode == Opcode::Xor)
        .filter_map(|o| o.def)
        .filter(|&t| types[t].label == SecurityLabel::Secret)
        .collect();
    MaskRestore {
        function: cur,
        rewritten,
        residual,
    }
}
