use std::fmt::Write as _;

use super::{Constraint, CopProblem};
use crate::machine::{Impl, Loc};
use crate::secanalysis::{MemNode, Node};

fn impl_name(i: Impl) -> &'static str {
    match i {
        Impl::Default => "default",
        Impl::AddZero => "add-zero",
        Impl::OrZero => "or-zero",
        Impl::Store => "store",
        Impl::Load => "load",
        Impl::Remat => "remat",
    }
}

fn loc_name(l: Loc) -> String {
    match l {
        Loc::Reg(r) => format!("r{r}"),
        Loc::Spill(s) => format!("m{s}"),
    }
}

fn node(n: Node, prob: &CopProblem) -> String {
    match n {
        Node::Bottom => "bot".into(),
        Node::Temp(t) => prob.function.temps[t].name.clone(),
    }
}

fn mem_node(n: MemNode) -> String {
    match n {
        MemNode::Bottom => "bot".into(),
        MemNode::Op(o) => format!("o{o}"),
    }
}

/// Deterministic s-expression rendering of a problem.
pub fn dump_problem(prob: &CopProblem) -> String {
    let f = &prob.function;
    let mut s = String::new();
    let _ = writeln!(s, "(problem {}", f.name);
    let _ = writeln!(s, "  (mode {})", prob.mode);
    let _ = writeln!(s, "  (profile {})", prob.profile.name);
    let _ = writeln!(s, "  (gap {})", prob.gap);
    if let Some(b) = prob.best_cost {
        let _ = writeln!(s, "  (best {b})");
    }
    let _ = writeln!(s, "  (objective (sum");
    for b in &f.blocks {
        let _ = writeln!(s, "    (* {} (cost b{}))", b.weight, b.id);
    }
    s.push_str("  ))\n  (horizon");
    for h in &prob.vars.horizon {
        let _ = write!(s, " {h}");
    }
    s.push_str(")\n  (ops\n");
    for (id, v) in prob.vars.ops.iter().enumerate() {
        let impls: Vec<&str> = v.impls.iter().map(|&i| impl_name(i)).collect();
        let _ = writeln!(
            s,
            "    (o{id} {} (block {}){}{} (impl {}))",
            f.op(id).opcode.mnemonic(),
            v.block,
            if v.optional { " optional" } else { "" },
            if v.swappable { " swappable" } else { "" },
            impls.join(" ")
        );
    }
    s.push_str("  )\n  (temps\n");
    for (t, dom) in prob.vars.locs.iter().enumerate() {
        let locs: Vec<String> = dom.iter().map(|&l| loc_name(l)).collect();
        let _ = writeln!(s, "    ({} (loc {}))", f.temps[t].name, locs.join(" "));
    }
    s.push_str("  )\n  (constraints\n");
    for c in &prob.constraints {
        let line = match c {
            Constraint::Dependency { before, after } => format!("(dependency o{before} o{after})"),
            Constraint::Interference => "(register-interference)".into(),
            Constraint::CopySemantics { copy } => format!("(copy-semantics o{copy})"),
            Constraint::SingleIssue { block } => format!("(single-issue b{block})"),
            Constraint::Balance { set } => {
                let ps = &prob.psets[*set];
                let paths: Vec<String> = ps
                    .paths
                    .iter()
                    .map(|p| {
                        let bs: Vec<String> = p.iter().map(|b| format!("b{b}")).collect();
                        format!("({})", bs.join(" "))
                    })
                    .collect();
                format!("(balance b{} {})", ps.branch_block, paths.join(" "))
            }
            Constraint::RotConflict { a, b } => format!("(rot-conflict {} {})", node(*a, prob), node(*b, prob)),
            Constraint::MreConflict { a, b } => format!("(mre-conflict {} {})", mem_node(*a), mem_node(*b)),
            Constraint::OptimalityGap { bound } => format!("(optimality-gap {bound})"),
        };
        let _ = writeln!(s, "    {line}");
    }
    s.push_str("  ))\n");
    s
}
