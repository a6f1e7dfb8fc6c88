use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{digits, VerifyError};
use crate::machine::{run_batch, run_observed, MachineProfile, MachineProgram, LANES};

/// Seeded samples drawn when exhaustive enumeration is too large.
pub const EQUIVALENCE_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub inputs: Vec<u8>,
    pub left: u8,
    pub right: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub tested: usize,
    pub mismatch: Option<Mismatch>,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.mismatch.is_none()
    }
}

fn same_signature(a: &MachineProgram, b: &MachineProgram) -> bool {
    a.inputs.len() == b.inputs.len() && a.inputs.iter().zip(&b.inputs).all(|(x, y)| x.label == y.label)
}

fn results(m: &MachineProgram, p: &MachineProfile, inputs: &[Vec<u8>]) -> Result<Vec<u8>, VerifyError> {
    if m.has_branches() {
        return inputs
            .iter()
            .map(|v| Ok(run_observed(m, v, p, &mut ())?.ret))
            .collect();
    }
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(LANES) {
        let mut lanes = vec![[0u8; LANES]; m.inputs.len()];
        for (l, v) in chunk.iter().enumerate() {
            for (i, &x) in v.iter().enumerate() {
                lanes[i][l] = x;
            }
        }
        let r = run_batch(m, &lanes, p, |_, _, _| {})?;
        out.extend_from_slice(&r[..chunk.len()]);
    }
    Ok(out)
}

/// Compares return values on the given input vectors.
pub fn check_equivalence_on(
    a: &MachineProgram,
    b: &MachineProgram,
    p: &MachineProfile,
    inputs: &[Vec<u8>],
) -> Result<EquivalenceReport, VerifyError> {
    if !same_signature(a, b) {
        return Err(VerifyError::Signature);
    }
    let ra = results(a, p, inputs)?;
    let rb = results(b, p, inputs)?;
    let mismatch = inputs
        .iter()
        .zip(ra.iter().zip(&rb))
        .find(|(_, (x, y))| x != y)
        .map(|(v, (&left, &right))| Mismatch {
            inputs: v.clone(),
            left,
            right,
        });
    Ok(EquivalenceReport {
        tested: inputs.len(),
        mismatch,
    })
}

/// Exhaustive over all 8-bit inputs for up to two inputs, otherwise
/// [`EQUIVALENCE_SAMPLES`] seeded samples.
pub fn check_equivalence(
    a: &MachineProgram,
    b: &MachineProgram,
    p: &MachineProfile,
    seed: u64,
) -> Result<EquivalenceReport, VerifyError> {
    let k = a.inputs.len();
    let inputs: Vec<Vec<u8>> = if k <= 2 {
        (0..1u64 << (8 * k)).map(|n| digits(n, k)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..EQUIVALENCE_SAMPLES).map(|_| (0..k).map(|_| rng.gen()).collect()).collect()
    };
    check_equivalence_on(a, b, p, &inputs)
}
