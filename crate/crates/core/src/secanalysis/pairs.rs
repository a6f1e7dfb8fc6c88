use std::collections::BTreeSet;
use std::fmt;

use super::types::{value_origin, InferredType, TypeMap};
use crate::mir::{FunctionIR, OpId, Opcode, SecurityLabel, TempId};

/// A value that can sit in a register: a temp, or the initial zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Bottom,
    Temp(TempId),
}

/// A value that can sit on the memory bus: the initial zero, or the data
/// of a memory operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemNode {
    Bottom,
    Op(OpId),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Bottom => write!(f, "⊥"),
            Node::Temp(t) => write!(f, "t{t}"),
        }
    }
}

/// Unordered pairs that must not be adjacent in a register or on the bus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeakPairSets {
    /// Stored with the smaller node first.
    pub rpairs: BTreeSet<(Node, Node)>,
    pub mpairs: BTreeSet<(MemNode, MemNode)>,
}

fn ordered<T: Ord>(a: T, b: T) -> (T, T) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl LeakPairSets {
    pub fn is_rpair(&self, a: Node, b: Node) -> bool {
        self.rpairs.contains(&ordered(a, b))
    }

    pub fn is_mpair(&self, a: MemNode, b: MemNode) -> bool {
        self.mpairs.contains(&ordered(a, b))
    }

    pub fn is_empty(&self) -> bool {
        self.rpairs.is_empty() && self.mpairs.is_empty()
    }
}

/// Value a memory operation puts on the bus.
pub fn bus_value(f: &FunctionIR, op: OpId) -> Option<TempId> {
    let o = f.op(op);
    match o.opcode {
        Opcode::St => o.uses[0].temp(),
        Opcode::Ld | Opcode::Copy => o.def,
        _ => None,
    }
}

/// Whether a transition between the two values is secret-dependent.
fn leaks(types: &TypeMap, origin: &[TempId], a: Option<TempId>, b: Option<TempId>) -> bool {
    if let (Some(x), Some(y)) = (a, b) {
        if origin[x] == origin[y] {
            return false;
        }
    }
    let ty = |t: Option<TempId>| t.map_or_else(InferredType::public, |t| types[t].clone());
    InferredType::xor(&ty(a), &ty(b)).label == SecurityLabel::Secret
}

/// All register pairs and memory-operation pairs whose transition would
/// expose a secret. Copies of one value never form a pair.
pub fn gen_leak_pairs(f: &FunctionIR, types: &TypeMap) -> LeakPairSets {
    let origin = value_origin(f);
    let nodes: Vec<(Node, Option<TempId>)> = std::iter::once((Node::Bottom, None))
        .chain((0..f.temps.len()).map(|t| (Node::Temp(t), Some(t))))
        .collect();
    let mut rpairs = BTreeSet::new();
    for (i, &(a, ta)) in nodes.iter().enumerate() {
        for &(b, tb) in &nodes[i + 1..] {
            if leaks(types, &origin, ta, tb) {
                rpairs.insert(ordered(a, b));
            }
        }
    }
    let mem: Vec<(MemNode, Option<TempId>)> = std::iter::once((MemNode::Bottom, None))
        .chain(
            f.ops()
                .filter(|o| matches!(o.opcode, Opcode::Ld | Opcode::St | Opcode::Copy))
                .map(|o| (MemNode::Op(o.id), bus_value(f, o.id))),
        )
        .collect();
    let mut mpairs = BTreeSet::new();
    for (i, &(a, ta)) in mem.iter().enumerate() {
        for &(b, tb) in &mem[i + 1..] {
            if leaks(types, &origin, ta, tb) {
                mpairs.insert(ordered(a, b));
            }
        }
    }
    LeakPairSets { rpairs, mpairs }
}
