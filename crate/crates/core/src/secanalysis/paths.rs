use serde::Serialize;
use thiserror::Error;

use super::types::{condition_type, TypeMap};
use crate::mir::{build_cfg, BlockGraph, BlockId, FunctionIR};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("cycle through block {0}")]
    Cycle(BlockId),
    #[error("block {0} is not a two-way branch")]
    NotABranch(BlockId),
}

/// Paths leaving a secret-dependent branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SecretPathSet {
    pub branch_block: BlockId,
    pub paths: Vec<Vec<BlockId>>,
}

impl SecretPathSet {
    /// Common final block, if every path ends at the same one.
    pub fn sink(&self) -> Option<BlockId> {
        let last = *self.paths.first()?.last()?;
        self.paths.iter().all(|p| p.last() == Some(&last)).then_some(last)
    }
}

fn has_sink(paths: &[Vec<BlockId>]) -> bool {
    let mut ends = paths.iter().map(|p| p.last());
    match ends.next() {
        Some(first) => ends.all(|e| e == first),
        None => false,
    }
}

fn has_cycle(p: &[BlockId]) -> Option<BlockId> {
    let last = *p.last()?;
    p[..p.len() - 1].contains(&last).then_some(last)
}

/// Maximal paths from `n` until they meet at a common node or reach exits.
///
/// Partial paths sit in a queue ordered by the ordinal of their last block;
/// the smallest is advanced first. Paths reaching an exit are set aside.
/// After a single-successor step the search stops as soon as all paths,
/// finished or not, end in the same block.
pub fn get_paths(n: BlockId, g: &BlockGraph) -> Result<Vec<Vec<BlockId>>, PathError> {
    if g.successors(n).len() != 2 {
        return Err(PathError::NotABranch(n));
    }
    let mut queue: Vec<Vec<BlockId>> = vec![vec![n]];
    let mut done: Vec<Vec<BlockId>> = Vec::new();
    while !queue.is_empty() {
        if let Some(c) = queue.iter().find_map(|p| has_cycle(p)) {
            return Err(PathError::Cycle(c));
        }
        // Smallest last ordinal; earliest inserted on ties.
        let top = (0..queue.len())
            .min_by_key(|&i| (*queue[i].last().unwrap(), i))
            .unwrap();
        let h = *queue[top].last().unwrap();
        let succ = g.successors(h);
        match succ.as_slice() {
            [] => done.push(queue.remove(top)),
            [s] => {
                queue[top].push(*s);
                let all: Vec<Vec<BlockId>> = done.iter().chain(queue.iter()).cloned().collect();
                if has_sink(&all) {
                    if let Some(c) = queue.iter().find_map(|p| has_cycle(p)) {
                        return Err(PathError::Cycle(c));
                    }
                    return Ok(all);
                }
            }
            [s1, s2] => {
                let p = queue.remove(top);
                let mut p1 = p.clone();
                let mut p2 = p;
                p1.push(*s1);
                p2.push(*s2);
                queue.push(p1);
                queue.push(p2);
            }
            _ => unreachable!("blocks have at most two successors"),
        }
    }
    Ok(done)
}

/// One set per branch whose condition depends on a secret.
pub fn extract_secret_path_sets(f: &FunctionIR, types: &TypeMap) -> Vec<SecretPathSet> {
    let g = build_cfg(f);
    let mut out = Vec::new();
    for b in &f.blocks {
        let Some(ct) = condition_type(f, types, b.id) else { continue };
        if ct.secret_support.is_empty() {
            continue;
        }
        let mut paths = get_paths(b.id, &g).expect("validated functions are acyclic");
        paths.sort();
        out.push(SecretPathSet {
            branch_block: b.id,
            paths,
        });
    }
    out
}
