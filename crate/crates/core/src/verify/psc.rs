use std::collections::BTreeMap;
use std::fmt;

use super::{digits, positions, tuples, VerifyError, MAX_ENUMERATED, PUBLIC_PROBES};
use crate::machine::{run_batch, run_observed, MachineProfile, MachineProgram, Observer, Site, SiteKind, LANES};
use crate::mir::SecurityLabel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PscVerdict {
    Independent,
    /// Two secret assignments whose transition distributions differ under these publics.
    Leak {
        publics: Vec<u8>,
        secret_a: Vec<u8>,
        secret_b: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PscPoint {
    pub site: Site,
    pub verdict: PscVerdict,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PscReport {
    pub points: Vec<PscPoint>,
    /// False when secrets and randoms together were too many to enumerate.
    pub complete: bool,
}

impl PscReport {
    pub fn leaks(&self) -> impl Iterator<Item = &PscPoint> {
        self.points.iter().filter(|p| p.verdict != PscVerdict::Independent)
    }

    pub fn secure(&self) -> bool {
        self.complete && self.leaks().next().is_none()
    }

    /// One `verdict<TAB>site<TAB>witness` line per site.
    pub fn records(&self) -> String {
        if !self.complete {
            return "INCOMPLETE\t-\t-\n".into();
        }
        self.points.iter().map(|p| format!("{p}\n")).collect()
    }
}

fn hex(v: &[u8]) -> String {
    v.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(",")
}

impl fmt::Display for PscPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.verdict {
            PscVerdict::Independent => write!(f, "INDEPENDENT\t{}\t-", self.site),
            PscVerdict::Leak {
                publics,
                secret_a,
                secret_b,
            } => write!(
                f,
                "LEAK\t{}\tpublic=[{}] secret=[{}]/[{}]",
                self.site,
                hex(publics),
                hex(secret_a),
                hex(secret_b)
            ),
        }
    }
}

/// Transition counts per site over the runs of one secret assignment.
/// Sites are slots indexed by word and kind (register write, bus update).
/// A site's distribution is its bins plus the number of runs that never
/// reached it, so two tallies over the same number of runs agree on a site
/// iff their sorted bins and hit counts agree.
struct Tally {
    bins: Vec<Vec<(u8, u64)>>,
    /// Register written at each register slot.
    reg: Vec<u8>,
    /// Last run that touched each slot, plus one.
    stamp: Vec<u64>,
    hits: Vec<u64>,
    touched: Vec<usize>,
    run: u64,
}

impl Tally {
    fn new(words: usize) -> Self {
        Tally {
            bins: vec![Vec::new(); 2 * words],
            reg: vec![0; 2 * words],
            stamp: vec![0; 2 * words],
            hits: vec![0; 2 * words],
            touched: Vec::new(),
            run: 0,
        }
    }

    fn slot(addr: u32, kind: SiteKind) -> usize {
        addr as usize / 4 * 2 + usize::from(kind == SiteKind::Bus)
    }

    fn site(&self, slot: usize) -> Site {
        let kind = if slot % 2 == 1 {
            SiteKind::Bus
        } else {
            SiteKind::Register(self.reg[slot])
        };
        Site {
            addr: (slot / 2) as u32 * 4,
            kind,
        }
    }

    fn clear(&mut self) {
        for &s in &self.touched {
            self.bins[s].clear();
            self.hits[s] = 0;
            self.stamp[s] = 0;
        }
        self.touched.clear();
        self.run = 0;
    }

    fn add(&mut self, slot: usize, v: u8, n: u64) {
        if self.hits[slot] == 0 && self.bins[slot].is_empty() {
            self.touched.push(slot);
        }
        let bins = &mut self.bins[slot];
        match bins.iter_mut().find(|(x, _)| *x == v) {
            Some((_, c)) => *c += n,
            None => bins.push((v, n)),
        }
        if self.stamp[slot] != self.run + 1 {
            self.stamp[slot] = self.run + 1;
            self.hits[slot] += 1;
        }
    }

    fn finish(&mut self) {
        for &s in &self.touched {
            self.bins[s].sort_unstable();
        }
    }

    fn same(&self, other: &Tally, slot: usize) -> bool {
        self.hits[slot] == other.hits[slot] && self.bins[slot] == other.bins[slot]
    }
}

impl Observer for Tally {
    fn reg_write(&mut self, addr: u32, reg: u8, old: u8, new: u8) {
        let slot = Tally::slot(addr, SiteKind::Register(reg));
        self.reg[slot] = reg;
        self.add(slot, old ^ new, 1);
    }

    fn bus(&mut self, addr: u32, old: u8, new: u8) {
        self.add(Tally::slot(addr, SiteKind::Bus), old ^ new, 1);
    }
}

struct Layout {
    secrets: Vec<usize>,
    randoms: Vec<usize>,
}

/// Fills `tally` with the transitions of every random assignment.
fn histograms(
    m: &MachineProgram,
    p: &MachineProfile,
    lay: &Layout,
    base: &[u8],
    secret: &[u8],
    tally: &mut Tally,
) -> Result<(), VerifyError> {
    tally.clear();
    let mut input = base.to_vec();
    for (&i, &v) in lay.secrets.iter().zip(secret) {
        input[i] = v;
    }
    let k = lay.randoms.len();
    if !m.has_branches() {
        // The last random varies across lanes, the rest are looped over.
        // Every site runs exactly once per lane, so hit counts are equal
        // across assignments and need not be per run.
        let mut lanes: Vec<[u8; LANES]> = input.iter().map(|&v| [v; LANES]).collect();
        if let Some(&last) = lay.randoms.last() {
            lanes[last] = std::array::from_fn(|l| l as u8);
        }
        let mut dense: BTreeMap<usize, [u64; 256]> = BTreeMap::new();
        let outer = if k == 0 { 1 } else { 1u64 << (8 * (k - 1)) };
        for n in 0..outer {
            for (&i, v) in lay.randoms.iter().zip(digits(n, k.saturating_sub(1))) {
                lanes[i] = [v; LANES];
            }
            run_batch(m, &lanes, p, |addr, kind, vals| {
                let slot = Tally::slot(addr, kind);
                if let SiteKind::Register(r) = kind {
                    tally.reg[slot] = r;
                }
                let h = dense.entry(slot).or_insert([0; 256]);
                for &v in vals {
                    h[usize::from(v)] += 1;
                }
            })?;
        }
        for (slot, h) in dense {
            for (v, &c) in h.iter().enumerate() {
                if c > 0 {
                    tally.add(slot, v as u8, c);
                }
            }
        }
    } else {
        for n in 0..1u64 << (8 * k) {
            for (&i, v) in lay.randoms.iter().zip(digits(n, k)) {
                input[i] = v;
            }
            tally.run = n;
            run_observed(m, &input, p, tally)?;
        }
    }
    tally.finish();
    Ok(())
}

/// Checks, for every leakage site, that the distribution of Hamming-distance
/// transitions over the random inputs is the same for every secret assignment.
/// Publics are drawn from [`PUBLIC_PROBES`].
pub fn check_psc(m: &MachineProgram, p: &MachineProfile) -> Result<PscReport, VerifyError> {
    let pubs = positions(m, |l| l == SecurityLabel::Public);
    let lay = Layout {
        secrets: positions(m, |l| l == SecurityLabel::Secret),
        randoms: positions(m, |l| l == SecurityLabel::Random),
    };
    if lay.secrets.len() + lay.randoms.len() > MAX_ENUMERATED {
        return Ok(PscReport {
            points: Vec::new(),
            complete: false,
        });
    }
    let mut verdicts: BTreeMap<Site, PscVerdict> = BTreeMap::new();
    let nsec = lay.secrets.len();
    let mut reference = Tally::new(m.words.len());
    let mut other = Tally::new(m.words.len());
    for pv in tuples(&PUBLIC_PROBES, pubs.len()) {
        let mut base = vec![0u8; m.inputs.len()];
        for (&i, &v) in pubs.iter().zip(&pv) {
            base[i] = v;
        }
        let zero = vec![0u8; nsec];
        histograms(m, p, &lay, &base, &zero, &mut reference)?;
        for &s in &reference.touched {
            verdicts.entry(reference.site(s)).or_insert(PscVerdict::Independent);
        }
        for n in 1..1u64 << (8 * nsec) {
            let secret = digits(n, nsec);
            histograms(m, p, &lay, &base, &secret, &mut other)?;
            for (t, &s) in [(&other, &other.touched), (&reference, &reference.touched)]
                .into_iter()
                .flat_map(|(t, ss)| ss.iter().map(move |s| (t, s)))
            {
                if reference.same(&other, s) {
                    continue;
                }
                let v = verdicts.entry(t.site(s)).or_insert(PscVerdict::Independent);
                if *v == PscVerdict::Independent {
                    *v = PscVerdict::Leak {
                        publics: pv.clone(),
                        secret_a: zero.clone(),
                        secret_b: secret.clone(),
                    };
                }
            }
        }
    }
    Ok(PscReport {
        points: verdicts
            .into_iter()
            .map(|(site, verdict)| PscPoint { site, verdict })
            .collect(),
        complete: true,
    })
}
