//! Exhaustive oracles over 8-bit inputs: functional equivalence, constant
//! resource (timing) and first-order Hamming-distance power leakage.

mod cr;
mod equiv;
mod psc;

use thiserror::Error;

use crate::machine::{ExecError, MachineProgram};
use crate::mir::SecurityLabel;

pub use cr::{check_cr, CrReport, PathSetCosts, PublicTiming};
pub use equiv::{check_equivalence, check_equivalence_on, EquivalenceReport, Mismatch, EQUIVALENCE_SAMPLES};
pub use psc::{check_psc, PscPoint, PscReport, PscVerdict};

/// Public values probed when publics are not enumerated.
pub const PUBLIC_PROBES: [u8; 3] = [0x00, 0xFF, 0x5A];

/// Secret and random inputs enumerated jointly, at most.
pub const MAX_ENUMERATED: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("programs take different inputs")]
    Signature,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Input positions by label.
pub(crate) fn positions(m: &MachineProgram, pred: impl Fn(SecurityLabel) -> bool) -> Vec<usize> {
    m.inputs
        .iter()
        .enumerate()
        .filter(|(_, b)| pred(b.label))
        .map(|(i, _)| i)
        .collect()
}

/// Every assignment of `values` to `k` slots, first slot varying slowest.
pub(crate) fn tuples(values: &[u8], k: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| {
                values.iter().map(move |&v| {
                    let mut t = t.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Decodes a mixed-radix counter of 8-bit digits into `k` values.
pub(crate) fn digits(mut n: u64, k: usize) -> Vec<u8> {
    let mut v = vec![0u8; k];
    for slot in v.iter_mut().rev() {
        *slot = (n & 0xFF) as u8;
        n >>= 8;
    }
    v
}
