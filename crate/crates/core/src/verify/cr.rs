use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{digits, positions, tuples, VerifyError};
use crate::machine::{run_observed, MachineProfile, MachineProgram, Outcome};
use crate::mir::{BlockId, SecurityLabel};
use crate::secanalysis::SecretPathSet;

/// Non-public inputs enumerated exhaustively for timing, at most.
const CR_EXHAUSTIVE: usize = 2;
/// Seeded samples per public assignment beyond that.
const CR_SAMPLES: usize = 1 << 16;

/// Observed cycle counts per path through one secret branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathSetCosts {
    pub branch_block: BlockId,
    /// Blocks visited from the branch to the join, with every cost seen.
    pub costs: BTreeMap<Vec<BlockId>, BTreeSet<u64>>,
}

impl PathSetCosts {
    pub fn balanced(&self) -> bool {
        let all: BTreeSet<u64> = self.costs.values().flatten().copied().collect();
        all.len() <= 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicTiming {
    pub publics: Vec<u8>,
    pub bcet: u64,
    pub wcet: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrReport {
    pub sets: Vec<PathSetCosts>,
    pub timings: Vec<PublicTiming>,
    /// False when non-public inputs were sampled rather than enumerated.
    pub complete: bool,
}

impl CrReport {
    pub fn secure(&self) -> bool {
        self.sets.iter().all(PathSetCosts::balanced) && self.timings.iter().all(|t| t.bcet == t.wcet)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for set in &self.sets {
            for (path, costs) in &set.costs {
                s.push_str(&format!("path\t{}\t{:?}\t{:?}\n", set.branch_block, path, costs));
            }
        }
        for t in &self.timings {
            s.push_str(&format!("timing\t{:02x?}\t{}\t{}\n", t.publics, t.bcet, t.wcet));
        }
        s.push_str(if self.secure() { "SECURE\n" } else { "INSECURE\n" });
        s
    }
}

/// Blocks of one path set and its join, computed once per check.
struct Shape<'a> {
    set: &'a SecretPathSet,
    members: BTreeSet<BlockId>,
    sink: Option<BlockId>,
}

impl<'a> Shape<'a> {
    fn new(set: &'a SecretPathSet) -> Self {
        Shape {
            set,
            members: set.paths.iter().flatten().copied().collect(),
            sink: set.sink(),
        }
    }

    fn record(&self, out: &Outcome, costs: &mut BTreeMap<Vec<BlockId>, BTreeSet<u64>>) {
        let Some(i) = out.path.iter().position(|&(b, _)| b == self.set.branch_block) else { return };
        let start = out.path[i].1;
        let mut key = vec![self.set.branch_block];
        let mut end = out.cycles;
        for &(b, c) in &out.path[i + 1..] {
            if self.sink.is_some_and(|s| b >= s) {
                end = c;
                break;
            }
            if self.members.contains(&b) {
                key.push(b);
            }
        }
        if let Some(s) = self.sink {
            key.push(s);
        }
        costs.entry(key).or_default().insert(end - start);
    }
}

/// Exact timing under every secret for each public assignment drawn from `public_probes`.
pub fn check_cr(
    m: &MachineProgram,
    p: &MachineProfile,
    psets: &[SecretPathSet],
    public_probes: &[u8],
) -> Result<CrReport, VerifyError> {
    let pubs = positions(m, |l| l == SecurityLabel::Public);
    let others = positions(m, |l| l != SecurityLabel::Public);
    let k = others.len();
    let mut sets: Vec<PathSetCosts> = psets
        .iter()
        .map(|s| PathSetCosts {
            branch_block: s.branch_block,
            costs: BTreeMap::new(),
        })
        .collect();
    let shapes: Vec<Shape> = psets.iter().map(Shape::new).collect();
    let mut timings = Vec::new();
    let straight = !m.has_branches();
    let complete = straight || k <= CR_EXHAUSTIVE;
    for pv in tuples(public_probes, pubs.len()) {
        let mut input = vec![0u8; m.inputs.len()];
        for (&i, &v) in pubs.iter().zip(&pv) {
            input[i] = v;
        }
        let mut t = PublicTiming {
            publics: pv,
            bcet: u64::MAX,
            wcet: 0,
        };
        let mut sample = |vals: &[u8]| -> Result<(), VerifyError> {
            for (&i, &v) in others.iter().zip(vals) {
                input[i] = v;
            }
            let out = run_observed(m, &input, p, &mut ())?;
            t.bcet = t.bcet.min(out.cycles);
            t.wcet = t.wcet.max(out.cycles);
            for (shape, acc) in shapes.iter().zip(sets.iter_mut()) {
                shape.record(&out, &mut acc.costs);
            }
            Ok(())
        };
        if straight {
            // One path: timing cannot depend on data.
            sample(&vec![0; k])?;
        } else if k <= CR_EXHAUSTIVE {
            for n in 0..1u64 << (8 * k) {
                sample(&digits(n, k))?;
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..CR_SAMPLES {
                let v: Vec<u8> = (0..k).map(|_| rng.gen()).collect();
                sample(&v)?;
            }
        }
        timings.push(t);
    }
    Ok(CrReport {
        sets,
        timings,
        complete,
    })
}
