use std::fmt;

use serde::Serialize;

use super::ExecTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SiteKind {
    /// Register overwrite.
    Register(u8),
    /// Memory-bus update by a load or store.
    Bus,
}

/// A leak point: instruction address plus the storage element it updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Site {
    pub addr: u32,
    pub kind: SiteKind,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SiteKind::Register(r) => write!(f, "{:04x}:r{}", self.addr, r),
            SiteKind::Bus => write!(f, "{:04x}:bus", self.addr),
        }
    }
}

/// Hamming-distance leakage sample: `old ^ new` at a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LeakPoint {
    pub site: Site,
    pub value: u8,
}

/// One entry per register write and per memory-bus update, in execution order.
pub fn hd_leak_points(t: &ExecTrace) -> Vec<LeakPoint> {
    let mut out = Vec::new();
    for s in &t.steps {
        if let Some((old, new)) = s.bus {
            out.push(LeakPoint {
                site: Site {
                    addr: s.addr,
                    kind: SiteKind::Bus,
                },
                value: old ^ new,
            });
        }
        if let Some((r, old, new)) = s.write {
            out.push(LeakPoint {
                site: Site {
                    addr: s.addr,
                    kind: SiteKind::Register(r),
                },
                value: old ^ new,
            });
        }
    }
    out
}
