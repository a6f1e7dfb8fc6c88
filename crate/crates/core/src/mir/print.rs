use std::fmt::Write;

use super::{FunctionIR, Opcode, Operand, Operation};

fn operand(f: &FunctionIR, u: &Operand) -> String {
    match u {
        Operand::Temp(t) => f.temps[*t].name.clone(),
        Operand::Imm(v) => v.to_string(),
    }
}

fn op_text(f: &FunctionIR, op: &Operation) -> String {
    let mut s = String::new();
    if op.optional {
        s.push_str("opt ");
    }
    if let Some(d) = op.def {
        let _ = write!(s, "{} = ", f.temps[d].name);
    }
    s.push_str(op.opcode.mnemonic());
    let mut args: Vec<String> = Vec::new();
    if let Some(slot) = op.slot {
        args.push(format!("@{}", f.slots[slot]));
    }
    args.extend(op.uses.iter().map(|u| operand(f, u)));
    if let Some(t) = op.target {
        args.push(t.to_string());
    }
    if !args.is_empty() {
        s.push(' ');
        s.push_str(&args.join(", "));
    }
    debug_assert!(op.opcode != Opcode::St || op.slot.is_some());
    s
}

/// Canonical text form: two-space indentation, no comments, weights only
/// when different from 1.
pub fn serialize_function(f: &FunctionIR) -> String {
    let mut out = String::new();
    let params: Vec<String> = f
        .inputs()
        .map(|(_, t)| match t.label() {
            Some(l) => format!("{}:{}", t.name, l),
            None => t.name.clone(),
        })
        .collect();
    let _ = writeln!(out, "func {}({})", f.name, params.join(", "));
    for b in &f.blocks {
        if *b.weight.numer() == 1 && *b.weight.denom() == 1 {
            let _ = writeln!(out, "block {}", b.id);
        } else if *b.weight.denom() == 1 {
            let _ = writeln!(out, "block {} weight {}", b.id, b.weight.numer());
        } else {
            let _ = writeln!(
                out,
                "block {} weight {}/{}",
                b.id,
                b.weight.numer(),
                b.weight.denom()
            );
        }
        for op in &b.ops {
            let _ = writeln!(out, "  {}", op_text(f, op));
        }
    }
    out
}

pub(crate) fn describe_op(f: &FunctionIR, op: &Operation) -> String {
    op_text(f, op)
}
