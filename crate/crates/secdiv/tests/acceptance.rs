//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use secdiv_core::copmodel::{check_solution, CopProblem, Mode, Solution};
use secdiv_core::corpus;
use secdiv_core::gadgets::{histogram, mean, SrateHistogram, DEFAULT_K};
use secdiv_core::machine::{encode, Allocation, Impl, Loc, MachineProfile, MachineProgram, OpPlacement, SiteKind};
use secdiv_core::mir::FunctionIR;
use secdiv_core::pipeline::{prepare, secure_mode, Strategy};
use secdiv_core::secanalysis::{extract_secret_path_sets, infer_types};
use secdiv_core::solver::{diversify, distance, naive_diversify, solve_optimal, SolveError, StopReason, VariantPool};
use secdiv_core::verify::{check_cr, check_equivalence, check_psc, PUBLIC_PROBES};

use common::oracle::brute_force_optimum;

const BUDGET: Duration = Duration::from_secs(600);
const POOL_SIZE: usize = 20;
const NAIVE_SIZE: usize = 50;
const SEED: u64 = 0;
/// Largest function, in operations, handed to the exhaustive oracle.
const ORACLE_MAX_OPS: usize = 10;
const CR_BREAKAGE_MIN: f64 = 0.5;
const ROT_BREAKAGE_MIN: f64 = 0.3;
/// Allowed difference between protected and unprotected mean srate.
const SRATE_TOLERANCE: f64 = 0.15;

fn gap() -> Ratio<u64> {
    Ratio::new(1, 10)
}

fn zero() -> Ratio<u64> {
    Ratio::from_integer(0)
}

struct Verdict {
    ok: bool,
    detail: String,
}

impl Verdict {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Verdict {
            ok,
            detail: detail.into(),
        }
    }
}

/// A pool together with the problem it was drawn from.
struct Pool {
    name: &'static str,
    prob: CopProblem,
    best: Solution,
    pool: VariantPool,
    programs: Vec<MachineProgram>,
}

fn problem(f: &FunctionIR, mode: Mode, p: &MachineProfile) -> CopProblem {
    prepare(f, mode, Strategy::Ebb).problem(p, mode, zero(), None).unwrap()
}

fn programs(pool: &VariantPool, p: &MachineProfile) -> Vec<MachineProgram> {
    pool.solutions
        .iter()
        .map(|s| encode(&pool.function, &s.alloc, p).unwrap())
        .collect()
}

fn build_pool(name: &'static str, mode: Mode, p: &MachineProfile) -> Pool {
    let prob = problem(&corpus::load(name), mode, p);
    let best = solve_optimal(&prob, BUDGET, SEED).unwrap().solution;
    let pool = diversify(&prob, &best, POOL_SIZE, gap(), 1, BUDGET, SEED);
    let programs = programs(&pool, p);
    Pool {
        name,
        prob,
        best,
        pool,
        programs,
    }
}

struct Pools {
    tight: Vec<Pool>,
    wide: Vec<Pool>,
    unprotected: Vec<Pool>,
    naive_check_bit: Vec<MachineProgram>,
    naive_masked_xor: Vec<MachineProgram>,
}

impl Pools {
    fn build() -> Self {
        let tight8 = MachineProfile::tight8();
        let wide32 = MachineProfile::wide32();
        let names: Vec<&'static str> = corpus::BENCHMARKS.iter().map(|(n, _)| *n).collect();
        let secure = |n: &str| secure_mode(&corpus::load(n));
        let naive = |n: &str| {
            let pool = naive_diversify(&corpus::load(n), &tight8, NAIVE_SIZE, SEED).unwrap();
            programs(&pool, &tight8)
        };
        Pools {
            tight: names.iter().map(|&n| build_pool(n, secure(n), &tight8)).collect(),
            wide: names.iter().map(|&n| build_pool(n, secure(n), &wide32)).collect(),
            unprotected: names.iter().map(|&n| build_pool(n, Mode::None, &tight8)).collect(),
            naive_check_bit: naive("check_bit"),
            naive_masked_xor: naive("masked_xor"),
        }
    }

    fn tight(&self, name: &str) -> &Pool {
        self.tight.iter().find(|p| p.name == name).unwrap()
    }
}

fn c1_optimality() -> Verdict {
    let p = MachineProfile::tight8();
    let mut checked = 0;
    let mut bad = Vec::new();
    for (name, _) in corpus::BENCHMARKS.iter().chain(corpus::FIXTURES) {
        let f = corpus::load(name);
        if f.num_ops() > ORACLE_MAX_OPS {
            continue;
        }
        for mode in [Mode::None, Mode::Tsc, Mode::Psc] {
            let prob = problem(&f, mode, &p);
            let oracle = brute_force_optimum(&prob).map(|s| s.objective);
            let solver = match solve_optimal(&prob, BUDGET, SEED) {
                Ok(s) if s.optimal => Some(s.solution.objective),
                Ok(_) | Err(SolveError::Timeout) => {
                    bad.push(format!("{name}/{mode}: solver timed out"));
                    continue;
                }
                Err(_) => None,
            };
            checked += 1;
            if oracle != solver {
                bad.push(format!("{name}/{mode}: oracle {oracle:?} solver {solver:?}"));
            }
        }
    }
    Verdict::new(bad.is_empty() && checked > 0, format!("{checked} function/mode pairs; {}", bad.join("; ")))
}

fn c2_cr(pools: &Pools) -> Verdict {
    let p = MachineProfile::tight8();
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["check_bit", "share_compare", "modexp"] {
        let pool = pools.tight(name);
        let f = &pool.pool.function;
        let psets = extract_secret_path_sets(f, &infer_types(f));
        let mut insecure = 0;
        let mut incomplete = 0;
        for m in &pool.programs {
            let r = check_cr(m, &p, &psets, &PUBLIC_PROBES).unwrap();
            insecure += usize::from(!r.secure());
            incomplete += usize::from(!r.complete);
        }
        ok &= insecure == 0 && incomplete == 0 && !psets.is_empty();
        notes.push(format!("{name}: {} variants, {insecure} insecure, {incomplete} sampled", pool.programs.len()));
    }
    Verdict::new(ok, notes.join("; "))
}

fn c3_overhead() -> Verdict {
    let p = MachineProfile::tight8();
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["check_bit", "share_compare", "modexp"] {
        let f = corpus::load(name);
        let none = solve_optimal(&problem(&f, Mode::None, &p), BUDGET, SEED).unwrap().solution.objective;
        let tsc = solve_optimal(&problem(&f, Mode::Tsc, &p), BUDGET, SEED).unwrap().solution.objective;
        ok &= tsc >= none;
        if name == "check_bit" {
            ok &= tsc > none;
        }
        let pct = (tsc - none) * Ratio::from_integer(100) / none;
        notes.push(format!("{name}: {none} -> {tsc} (+{:.1}%)", ratio_f64(pct)));
    }
    Verdict::new(ok, notes.join("; "))
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// masked_xor with every op back to back and `mk` in register `mk`.
fn masked_xor_by_hand(mk: u8) -> MachineProgram {
    let f = corpus::load("masked_xor");
    let ops = f
        .ops()
        .map(|o| OpPlacement {
            active: true,
            cycle: o.id as u32,
            choice: Impl::Default,
            swap: false,
        })
        .collect();
    let a = Allocation {
        loc: [0, 1, 2, mk, 3, 3].iter().map(|&r| Some(Loc::Reg(r))).collect(),
        ops,
    };
    encode(&f, &a, &MachineProfile::tight8()).unwrap()
}

fn c4_psc(pools: &Pools) -> Verdict {
    let p = MachineProfile::tight8();
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["masked_xor", "sec_mult"] {
        let pool = pools.tight(name);
        let mut leaky = 0;
        for m in &pool.programs {
            let r = check_psc(m, &p).unwrap();
            leaky += usize::from(!r.secure());
        }
        ok &= leaky == 0;
        notes.push(format!("{name}: {} variants, {leaky} leaking", pool.programs.len()));
    }
    // `t = mk ^ pub` written over `mk` itself.
    let r = check_psc(&masked_xor_by_hand(2), &p).unwrap();
    let leaks: Vec<_> = r.leaks().collect();
    let flagged = leaks.len() == 1 && leaks[0].site.kind == SiteKind::Register(2);
    ok &= flagged;
    notes.push(format!(
        "overwritten mask: {}",
        leaks.iter().map(|l| l.site.to_string()).collect::<Vec<_>>().join(",")
    ));
    Verdict::new(ok, notes.join("; "))
}

fn c5_naive(pools: &Pools) -> Verdict {
    let p = MachineProfile::tight8();
    let f = corpus::load("check_bit");
    let prep = prepare(&f, Mode::Tsc, Strategy::Ebb);
    let cr_bad = pools
        .naive_check_bit
        .iter()
        .filter(|m| !check_cr(m, &p, &prep.psets, &PUBLIC_PROBES).unwrap().secure())
        .count();
    let rot_bad = pools
        .naive_masked_xor
        .iter()
        .filter(|m| {
            check_psc(m, &p)
                .unwrap()
                .leaks()
                .any(|l| matches!(l.site.kind, SiteKind::Register(_)))
        })
        .count();
    let cr = cr_bad as f64 / pools.naive_check_bit.len() as f64;
    let rot = rot_bad as f64 / pools.naive_masked_xor.len() as f64;
    Verdict::new(
        cr > CR_BREAKAGE_MIN && rot > ROT_BREAKAGE_MIN,
        format!("check_bit CR-violating {:.0}%, masked_xor ROT-leaking {:.0}%", cr * 100.0, rot * 100.0),
    )
}

fn c6_diversity(pools: &Pools) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for pool in pools.tight.iter().chain(&pools.wide) {
        let bounded = pool.prob.with_bound(pool.best.objective, gap());
        let limit = (pool.best.objective * Ratio::new(11, 10)).floor();
        let sols = &pool.pool.solutions;
        let stop_ok = match pool.pool.reason {
            StopReason::Complete => sols.len() == POOL_SIZE,
            StopReason::Exhausted => true,
            StopReason::Timeout => false,
        };
        let feasible = sols.iter().all(|s| check_solution(s, &bounded).is_empty() && s.objective <= limit);
        let spread = sols
            .iter()
            .enumerate()
            .all(|(i, a)| sols[i + 1..].iter().all(|b| distance(a, b).unwrap() >= 1));
        ok &= stop_ok && feasible && spread;
        notes.push(format!(
            "{}/{}: {} {}",
            pool.name,
            pool.prob.profile.name,
            sols.len(),
            pool.pool.reason
        ));
    }
    Verdict::new(ok, notes.join("; "))
}

fn mean_srate(programs: &[MachineProgram]) -> f64 {
    mean(&histogram(programs, DEFAULT_K).unwrap().0)
}

/// masked_xor issued after `n` idle cycles.
fn masked_xor_shifted(n: u32) -> MachineProgram {
    let f = corpus::load("masked_xor");
    let ops = f
        .ops()
        .map(|o| OpPlacement {
            active: true,
            cycle: o.id as u32 + n,
            choice: Impl::Default,
            swap: false,
        })
        .collect();
    let a = Allocation {
        loc: [0, 1, 2, 3, 4, 4].iter().map(|&r| Some(Loc::Reg(r))).collect(),
        ops,
    };
    encode(&f, &a, &MachineProfile::tight8()).unwrap()
}

fn c7_gadgets(pools: &Pools) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (t, w) in pools.tight.iter().zip(&pools.wide) {
        let (mt, mw) = (mean_srate(&t.programs), mean_srate(&w.programs));
        ok &= mw <= mt && mt < 1.0 && mw < 1.0;
        notes.push(format!("{}: tight8 {mt:.3} wide32 {mw:.3}", t.name));
    }
    let same = vec![masked_xor_shifted(0); 5];
    let apart: Vec<MachineProgram> = (0..5).map(masked_xor_shifted).collect();
    let hs = histogram(&same, DEFAULT_K).unwrap().1;
    let ha = histogram(&apart, DEFAULT_K).unwrap().1;
    let hand = hs == SrateHistogram { zero: 0, low: 0, high: 20 } && ha == SrateHistogram { zero: 20, low: 0, high: 0 };
    ok &= hand;
    notes.push(format!("identical pool high {:.0}%, disjoint pool zero {:.0}%", hs.percentages()[2], ha.percentages()[0]));
    Verdict::new(ok, notes.join("; "))
}

fn c8_compatibility(pools: &Pools) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (s, u) in pools.tight.iter().zip(&pools.unprotected) {
        let n = s.programs.len().min(u.programs.len());
        let (ms, mu) = (mean_srate(&s.programs[..n]), mean_srate(&u.programs[..n]));
        ok &= (ms - mu).abs() <= SRATE_TOLERANCE;
        notes.push(format!("{}: protected {ms:.3} unprotected {mu:.3} (n={n})", s.name));
    }
    Verdict::new(ok, notes.join("; "))
}

fn c9_equivalence(pools: &Pools) -> Verdict {
    let p = MachineProfile::tight8();
    let wide = MachineProfile::wide32();
    let mut checked = 0;
    let mut bad = Vec::new();
    let groups = pools
        .tight
        .iter()
        .chain(&pools.unprotected)
        .map(|x| (x.name, &x.programs, &p))
        .chain(pools.wide.iter().map(|x| (x.name, &x.programs, &wide)))
        .chain([
            ("check_bit naive", &pools.naive_check_bit, &p),
            ("masked_xor naive", &pools.naive_masked_xor, &p),
        ]);
    for (name, programs, prof) in groups {
        for (i, m) in programs.iter().enumerate() {
            checked += 1;
            if !check_equivalence(&programs[0], m, prof, SEED).unwrap().equivalent() {
                bad.push(format!("{name} v{i}"));
            }
        }
    }
    Verdict::new(bad.is_empty(), format!("{checked} variants; mismatches: [{}]", bad.join(", ")))
}

fn cli(out: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_secdiv"))
        .args(args)
        .args(["--out", out.to_str().unwrap()])
        .env("RAYON_NUM_THREADS", "1")
        .stdout(Stdio::null())
        .status()
        .unwrap()
        .success()
}

fn c10_determinism() -> Verdict {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus/check_bit.mir");
    let src = src.to_str().unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let ok = cli(dir.path(), &["diversify", src, "--gap", "10", "--variants", "10", "--seed", "7"])
            && cli(dir.path(), &["gadgets", src, "--gap", "10"])
            && cli(dir.path(), &["report"]);
        let manifest = fs::read(dir.path().join("tight8/check_bit/tsc-gap10/manifest.json")).unwrap_or_default();
        let report = fs::read(dir.path().join("report.txt")).unwrap_or_default();
        runs.push((ok, manifest, report));
    }
    let same = runs[0] == runs[1];
    let ok = runs.iter().all(|r| r.0 && !r.1.is_empty() && !r.2.is_empty()) && same;
    Verdict::new(ok, format!("manifest and report byte-identical across runs: {same}"))
}

fn main() {
    let names = [
        "solver optimality against exhaustive search",
        "TSC pools are constant-resource",
        "security overhead direction",
        "PSC pools are leak-free, overwritten mask is flagged",
        "naive diversification breaks the mitigations",
        "pools satisfy gap, distance and constraints",
        "gadget survival trend",
        "protection keeps gadget survival",
        "every variant is functionally equivalent",
        "same seed, same artifacts",
    ];
    let start = Instant::now();
    let pools = Pools::build();
    eprintln!("pools built in {:.1}s", start.elapsed().as_secs_f64());
    let checks: Vec<Box<dyn Fn() -> Verdict + '_>> = vec![
        Box::new(c1_optimality),
        Box::new(|| c2_cr(&pools)),
        Box::new(c3_overhead),
        Box::new(|| c4_psc(&pools)),
        Box::new(|| c5_naive(&pools)),
        Box::new(|| c6_diversity(&pools)),
        Box::new(|| c7_gadgets(&pools)),
        Box::new(|| c8_compatibility(&pools)),
        Box::new(|| c9_equivalence(&pools)),
        Box::new(c10_determinism),
    ];
    let mut failed = 0;
    for (i, (check, name)) in checks.iter().zip(names).enumerate() {
        let t = Instant::now();
        let v = check();
        failed += usize::from(!v.ok);
        println!(
            "criterion {:>2}: {} {name} ({:.1}s): {}",
            i + 1,
            if v.ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
