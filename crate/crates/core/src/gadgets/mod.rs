//! Code-reuse gadgets in encoded programs and the pairwise overlap rate
//! between variants.

use std::collections::BTreeSet;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::machine::{encode, DecodeError, EncodeError, Instr, MOp, MachineProfile, MachineProgram};
use crate::par;
use crate::solver::VariantPool;

/// Default maximum gadget length, in non-NOP instructions.
pub const DEFAULT_K: usize = 5;

/// A word sequence ending in a return.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Gadget {
    /// Byte offset of the first instruction.
    pub addr: u32,
    pub words: Vec<u32>,
    /// `words` without NOPs.
    pub normalized: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GadgetError {
    #[error("word {index}: {source}")]
    Decode { index: usize, source: DecodeError },
    #[error("a histogram needs at least two variants, got {0}")]
    PoolTooSmall(usize),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

fn ends_flow(op: MOp) -> bool {
    matches!(op, MOp::Ret | MOp::B | MOp::Beq | MOp::Bne)
}

/// Every gadget of at most `k` non-NOP instructions. A gadget starts at a
/// non-NOP instruction and never runs through an earlier control transfer.
pub fn extract_gadgets(m: &MachineProgram, k: usize) -> Result<BTreeSet<Gadget>, GadgetError> {
    let instrs: Vec<Instr> = m
        .words
        .iter()
        .enumerate()
        .map(|(index, &w)| Instr::decode(w).map_err(|source| GadgetError::Decode { index, source }))
        .collect::<Result<_, _>>()?;
    let mut out = BTreeSet::new();
    for (end, ins) in instrs.iter().enumerate() {
        if ins.op != MOp::Ret {
            continue;
        }
        let mut len = 0;
        let mut start = end + 1;
        while start > 0 && len < k {
            let i = start - 1;
            if i != end && ends_flow(instrs[i].op) {
                break;
            }
            start = i;
            if instrs[i].op == MOp::Nop {
                continue;
            }
            len += 1;
            let words = m.words[start..=end].to_vec();
            let normalized = words
                .iter()
                .zip(&instrs[start..=end])
                .filter(|(_, x)| x.op != MOp::Nop)
                .map(|(&w, _)| w)
                .collect();
            out.insert(Gadget {
                addr: (start * 4) as u32,
                words,
                normalized,
            });
        }
    }
    Ok(out)
}

/// Fraction of `a`'s gadgets found with the same normalized form at the
/// same address among `b`'s. Zero when `a` has no gadgets.
pub fn srate_of(a: &BTreeSet<Gadget>, b: &BTreeSet<Gadget>) -> Ratio<u64> {
    if a.is_empty() {
        return Ratio::from_integer(0);
    }
    let keys: BTreeSet<(u32, &[u32])> = b.iter().map(|g| (g.addr, g.normalized.as_slice())).collect();
    let hit = a.iter().filter(|g| keys.contains(&(g.addr, g.normalized.as_slice()))).count();
    Ratio::new(hit as u64, a.len() as u64)
}

pub fn srate(a: &MachineProgram, b: &MachineProgram, k: usize) -> Result<Ratio<u64>, GadgetError> {
    Ok(srate_of(&extract_gadgets(a, k)?, &extract_gadgets(b, k)?))
}

/// Ordered variant pairs by srate bucket: `{0}`, `(0, 0.2]`, `(0.2, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SrateHistogram {
    pub zero: u64,
    pub low: u64,
    pub high: u64,
}

impl SrateHistogram {
    pub fn add(&mut self, r: Ratio<u64>) {
        if r == Ratio::from_integer(0) {
            self.zero += 1;
        } else if r <= Ratio::new(1, 5) {
            self.low += 1;
        } else {
            self.high += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.zero + self.low + self.high
    }

    /// Bucket shares in percent.
    pub fn percentages(&self) -> [f64; 3] {
        let t = self.total().max(1) as f64;
        [self.zero, self.low, self.high].map(|c| 100.0 * c as f64 / t)
    }
}

/// Per-pair rates over `i != j`, row-major, and their histogram.
pub fn histogram(programs: &[MachineProgram], k: usize) -> Result<(Vec<Ratio<u64>>, SrateHistogram), GadgetError> {
    let n = programs.len();
    if n < 2 {
        return Err(GadgetError::PoolTooSmall(n));
    }
    let gads = par::map(programs, |m| extract_gadgets(m, k))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let rates = par::map(&pairs, |&(i, j)| srate_of(&gads[i], &gads[j]));
    let mut h = SrateHistogram::default();
    for &r in &rates {
        h.add(r);
    }
    Ok((rates, h))
}

/// Encodes every pool member for `p` and buckets all ordered pairs.
pub fn pool_histogram(pool: &VariantPool, p: &MachineProfile, k: usize) -> Result<SrateHistogram, GadgetError> {
    let programs = pool
        .solutions
        .iter()
        .map(|s| encode(&pool.function, &s.alloc, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(histogram(&programs, k)?.1)
}

/// Mean of the pairwise rates, as a float for reporting.
pub fn mean(rates: &[Ratio<u64>]) -> f64 {
    if rates.is_empty() {
        return 0.0;
    }
    rates.iter().map(|r| *r.numer() as f64 / *r.denom() as f64).sum::<f64>() / rates.len() as f64
}
