use std::fmt::Write as _;

use super::pairs::{LeakPairSets, MemNode, Node};
use super::paths::SecretPathSet;
use super::types::TypeMap;
use crate::mir::{describe_op, FunctionIR, TempId};

fn names(f: &FunctionIR, s: &std::collections::BTreeSet<TempId>) -> String {
    let v: Vec<&str> = s.iter().map(|&t| f.temps[t].name.as_str()).collect();
    format!("{{{}}}", v.join(","))
}

fn node(f: &FunctionIR, n: Node) -> String {
    match n {
        Node::Bottom => "_|_".into(),
        Node::Temp(t) => f.temps[t].name.clone(),
    }
}

fn mem_node(f: &FunctionIR, n: MemNode) -> String {
    match n {
        MemNode::Bottom => "_|_".into(),
        MemNode::Op(o) => format!("o{o}[{}]", describe_op(f, f.op(o))),
    }
}

/// Deterministic text dump of the analysis, ordered by temp and op id.
pub fn analysis_report(f: &FunctionIR, types: &TypeMap, psets: &[SecretPathSet], pairs: &LeakPairSets) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "function {}", f.name);
    let _ = writeln!(s, "types");
    for (t, ty) in types.iter().enumerate() {
        let _ = writeln!(
            s,
            "  {} {} dom={} sec={} rand={}",
            f.temps[t].name,
            ty.label.as_str(),
            names(f, &ty.dominant),
            names(f, &ty.secret_support),
            names(f, &ty.random_support)
        );
    }
    let _ = writeln!(s, "secret path sets {}", psets.len());
    for p in psets {
        let paths: Vec<String> = p
            .paths
            .iter()
            .map(|q| format!("[{}]", q.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")))
            .collect();
        let _ = writeln!(s, "  branch {}: {}", p.branch_block, paths.join(" "));
    }
    let _ = writeln!(s, "rpairs {}", pairs.rpairs.len());
    for &(a, b) in &pairs.rpairs {
        let _ = writeln!(s, "  ({}, {})", node(f, a), node(f, b));
    }
    let _ = writeln!(s, "mpairs {}", pairs.mpairs.len());
    for &(a, b) in &pairs.mpairs {
        let _ = writeln!(s, "  ({}, {})", mem_node(f, a), mem_node(f, b));
    }
    s
}
