use serde::Serialize;

use super::{BlockId, FunctionIR, Opcode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum EdgeKind {
    /// Not-taken conditional branch or a block without terminator.
    FallThrough,
    /// Taken conditional branch; pays the taken-branch overhead.
    Taken,
    /// Unconditional `b`; its cost is the instruction latency.
    Jump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Edge {
    pub from: BlockId,
    pub to: BlockId,
    pub kind: EdgeKind,
}

/// Adjacency over block ids. Entry is block 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGraph {
    pub num_blocks: usize,
    pub edges: Vec<Edge>,
    pub exits: Vec<BlockId>,
}

impl BlockGraph {
    /// Graph from raw edges; exits are the nodes without successors.
    pub fn from_edges(num_blocks: usize, edges: &[(BlockId, BlockId)]) -> Self {
        let edges: Vec<Edge> = edges
            .iter()
            .map(|&(from, to)| Edge {
                from,
                to,
                kind: EdgeKind::FallThrough,
            })
            .collect();
        let exits = (0..num_blocks)
            .filter(|&b| edges.iter().all(|e| e.from != b))
            .collect();
        BlockGraph {
            num_blocks,
            edges,
            exits,
        }
    }

    pub fn successors(&self, b: BlockId) -> Vec<BlockId> {
        self.edges
            .iter()
            .filter(|e| e.from == b)
            .map(|e| e.to)
            .collect()
    }

    pub fn predecessors(&self, b: BlockId) -> Vec<BlockId> {
        self.edges
            .iter()
            .filter(|e| e.to == b)
            .map(|e| e.from)
            .collect()
    }

    pub fn edge(&self, from: BlockId, to: BlockId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    /// Kahn's algorithm; `None` when the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<BlockId>> {
        let mut indeg = vec![0usize; self.num_blocks];
        for e in &self.edges {
            indeg[e.to] += 1;
        }
        let mut ready: Vec<BlockId> = (0..self.num_blocks).filter(|&b| indeg[b] == 0).collect();
        ready.reverse();
        let mut order = Vec::with_capacity(self.num_blocks);
        while let Some(b) = ready.pop() {
            order.push(b);
            for s in self.successors(b).into_iter().rev() {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(s);
                }
            }
        }
        (order.len() == self.num_blocks).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topo_order().is_some()
    }
}

pub fn build_cfg(f: &FunctionIR) -> BlockGraph {
    let mut edges = Vec::new();
    let mut exits = Vec::new();
    for b in &f.blocks {
        match b.terminator() {
            Some(op) if op.opcode.is_conditional_branch() => {
                edges.push(Edge {
                    from: b.id,
                    to: b.id + 1,
                    kind: EdgeKind::FallThrough,
                });
                edges.push(Edge {
                    from: b.id,
                    to: op.target.unwrap(),
                    kind: EdgeKind::Taken,
                });
            }
            Some(op) if op.opcode == Opcode::B => edges.push(Edge {
                from: b.id,
                to: op.target.unwrap(),
                kind: EdgeKind::Jump,
            }),
            Some(_) => exits.push(b.id),
            None => edges.push(Edge {
                from: b.id,
                to: b.id + 1,
                kind: EdgeKind::FallThrough,
            }),
        }
    }
    BlockGraph {
        num_blocks: f.blocks.len(),
        edges,
        exits,
    }
}
