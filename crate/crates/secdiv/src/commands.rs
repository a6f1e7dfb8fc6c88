use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use secdiv_core::copmodel::{dump_problem, gap_bound, Mode};
use secdiv_core::corpus;
use secdiv_core::gadgets::{self, GadgetError};
use secdiv_core::machine::{encode, MachineProfile, MachineProgram, SiteKind};
use secdiv_core::mir::{parse_function, serialize_function, FunctionIR};
use secdiv_core::pipeline::{prepare, secure_mode, Strategy};
use secdiv_core::secanalysis::{extract_secret_path_sets, infer_types};
use secdiv_core::solver::{diversify, DEFAULT_BUDGET, distance, naive_diversify, solve_optimal, SolveError, StopReason, VariantPool};
use secdiv_core::verify::{check_cr, check_equivalence, check_psc, PUBLIC_PROBES};

use crate::args::{Common, ModeArg};
use crate::store::{self, CompileRecord, Manifest, Timing, VariantEntry, VariantVerdict, VerifyRecord};
use crate::table::{percent, Table};
use crate::Failure;

pub struct Input {
    pub function: FunctionIR,
    pub source: String,
}

pub fn load_inputs(c: &Common) -> Result<Vec<Input>, Failure> {
    let mut out = Vec::new();
    for path in &c.inputs {
        let source = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let function = parse_function(&source).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        out.push(Input { function, source });
    }
    if c.corpus {
        for (_, src) in corpus::BENCHMARKS {
            out.push(Input {
                function: parse_function(src).expect("shipped corpus parses"),
                source: src.to_string(),
            });
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("no input files (pass paths or --corpus)".into()));
    }
    Ok(out)
}

fn mode_of(c: &Common, f: &FunctionIR) -> (String, Option<Mode>) {
    match c.mode {
        Some(ModeArg::Naive) => ("naive".into(), None),
        Some(m) => {
            let m = m.mode().expect("not naive");
            (m.as_str().into(), Some(m))
        }
        None => {
            let m = secure_mode(f);
            (m.as_str().into(), Some(m))
        }
    }
}

fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn overhead(obj: Ratio<u64>, base: Ratio<u64>) -> f64 {
    if base == Ratio::from_integer(0) {
        return 0.0;
    }
    100.0 * (to_f64(obj) - to_f64(base)) / to_f64(base)
}

fn solve_failure(name: &str, e: SolveError) -> Failure {
    match e {
        SolveError::Unsat(_) => Failure::Unsat(format!("{name}: {e}")),
        SolveError::Timeout => Failure::Timeout(format!("{name}: {e}")),
        SolveError::Model(e) => Failure::Input(format!("{name}: {e}")),
    }
}

fn encode_pool(pool: &VariantPool, p: &MachineProfile) -> Result<Vec<MachineProgram>, Failure> {
    pool.solutions
        .iter()
        .map(|s| encode(&pool.function, &s.alloc, p))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Input(format!("{}: {e}", pool.function.name)))
}

/// Best unprotected cost and program of a function.
fn baseline(f: &FunctionIR, budget: Duration, seed: u64, p: &MachineProfile) -> Result<(Ratio<u64>, MachineProgram), Failure> {
    let prob = prepare(f, Mode::None, Strategy::Ebb)
        .problem(p, Mode::None, Ratio::from_integer(0), None)
        .map_err(|e| Failure::Input(format!("{}: {e}", f.name)))?;
    let s = solve_optimal(&prob, budget, seed).map_err(|e| solve_failure(&f.name, e))?;
    let m = encode(&prob.function, &s.solution.alloc, p).map_err(|e| Failure::Input(e.to_string()))?;
    Ok((s.solution.objective, m))
}

pub fn compile(c: &Common) -> Result<String, Failure> {
    let p = c.profile.profile();
    let mut t = Table::new(
        "compile",
        &["function", "profile", "mode", "objective", "baseline", "overhead%", "status"],
    );
    let mut timed_out = Vec::new();
    for input in load_inputs(c)? {
        let f = &input.function;
        let (label, mode) = mode_of(c, f);
        let Some(mode) = mode else {
            return Err(Failure::Usage("--mode naive only applies to diversify".into()));
        };
        let prep = prepare(f, mode, Strategy::Ebb);
        for w in &prep.warnings {
            eprintln!("warning: {}: {w}", f.name);
        }
        let prob = prep
            .problem(&p, mode, Ratio::from_integer(0), None)
            .map_err(|e| Failure::Input(format!("{}: {e}", f.name)))?;
        let dir = store::compile_dir(&c.out, &p.name, &f.name, &label);
        if c.emit_analysis {
            store::write(&dir.join("analysis.txt"), prep.report())?;
        }
        if c.emit_model {
            store::write(&dir.join("model.sexpr"), dump_problem(&prob))?;
        }
        let solved = solve_optimal(&prob, c.budget(), c.seed).map_err(|e| solve_failure(&f.name, e))?;
        let base = if mode == Mode::None {
            solved.solution.objective
        } else {
            baseline(f, c.budget(), c.seed, &p)?.0
        };
        let m = encode(&prob.function, &solved.solution.alloc, &p).map_err(|e| Failure::Input(e.to_string()))?;
        let obj = solved.solution.objective;
        let rec = CompileRecord {
            function: f.name.clone(),
            profile: p.name.clone(),
            mode: label.clone(),
            objective: obj.to_string(),
            baseline: base.to_string(),
            overhead_percent: percent(overhead(obj, base)),
            optimal: solved.optimal,
            warnings: prep.warnings.clone(),
        };
        store::write(&dir.join("best.mrsc"), m.to_bytes())?;
        store::write(&dir.join("best.s"), m.disassemble())?;
        store::write(&dir.join("function.mir"), serialize_function(&prob.function))?;
        store::write_json(&dir.join("compile.json"), &rec)?;
        if !solved.optimal {
            timed_out.push(f.name.clone());
        }
        t.push(vec![
            rec.function,
            rec.profile,
            rec.mode,
            rec.objective,
            rec.baseline,
            rec.overhead_percent,
            if solved.optimal { "optimal" } else { "TIMEOUT" }.into(),
        ]);
    }
    let out = t.render(c.format);
    if !timed_out.is_empty() {
        print!("{out}");
        return Err(Failure::Timeout(format!(
            "best solution not proven optimal within the budget: {}",
            timed_out.join(", ")
        )));
    }
    Ok(out)
}

pub fn diversify_cmd(c: &Common) -> Result<String, Failure> {
    let p = c.profile.profile();
    let mut t = Table::new(
        "diversify",
        &["function", "profile", "mode", "gap%", "requested", "produced", "reason"],
    );
    let mut timed_out = Vec::new();
    for input in load_inputs(c)? {
        let f = &input.function;
        let (label, mode) = mode_of(c, f);
        let start = Instant::now();
        let n = c.variants as usize;
        let pool = match mode {
            None => naive_diversify(f, &p, n, c.seed).map_err(|e| solve_failure(&f.name, e))?,
            Some(mode) => {
                let prep = prepare(f, mode, Strategy::Ebb);
                let prob = prep
                    .problem(&p, mode, Ratio::from_integer(0), None)
                    .map_err(|e| Failure::Input(format!("{}: {e}", f.name)))?;
                let best = solve_optimal(&prob, c.budget(), c.seed).map_err(|e| solve_failure(&f.name, e))?;
                let left = c.budget().saturating_sub(start.elapsed());
                diversify(&prob, &best.solution, n, c.gap(), c.dthresh, left, c.seed)
            }
        };
        let wall_ms = start.elapsed().as_millis();
        let programs = encode_pool(&pool, &p)?;
        let dir = store::pool_dir(&c.out, &p.name, &f.name, &label, c.gap);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
        }
        let best = pool.solutions[0].objective;
        let mut variants = Vec::new();
        for (i, (s, m)) in pool.solutions.iter().zip(&programs).enumerate() {
            store::write(&dir.join(store::variant_file(i)), m.to_bytes())?;
            variants.push(VariantEntry {
                file: store::variant_file(i),
                objective: s.objective.to_string(),
                seed: s.seed,
            });
        }
        let distances = pool
            .solutions
            .iter()
            .map(|a| pool.solutions.iter().map(|b| distance(a, b).expect("same problem")).collect())
            .collect();
        let manifest = Manifest {
            function: f.name.clone(),
            profile: p.name.clone(),
            mode: label.clone(),
            gap_percent: pool.gap.map(|_| c.gap),
            best: best.to_string(),
            bound: pool.gap.map(|g| gap_bound(best, g).to_string()),
            dthresh: pool.dthresh,
            seed: c.seed,
            budget_secs: c.budget_secs,
            requested: c.variants,
            produced: pool.len(),
            reason: pool.reason.as_str().into(),
            variants,
            distances,
        };
        store::write(&dir.join("function.mir"), serialize_function(&pool.function))?;
        store::write(&dir.join("source.mir"), &input.source)?;
        store::write_json(&dir.join("manifest.json"), &manifest)?;
        store::write_json(&dir.join("timing.json"), &Timing { wall_ms })?;
        if pool.reason == StopReason::Timeout {
            timed_out.push(f.name.clone());
        }
        t.push(vec![
            f.name.clone(),
            p.name.clone(),
            label,
            manifest.gap_percent.map_or("-".into(), |g| g.to_string()),
            c.variants.to_string(),
            pool.len().to_string(),
            pool.reason.as_str().into(),
        ]);
    }
    let out = t.render(c.format);
    if !timed_out.is_empty() {
        print!("{out}");
        return Err(Failure::Timeout(format!("budget ran out while diversifying: {}", timed_out.join(", "))));
    }
    Ok(out)
}

pub struct LoadedPool {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub function: FunctionIR,
    pub source: FunctionIR,
    pub programs: Vec<MachineProgram>,
}

fn parse_file(path: &Path) -> Result<FunctionIR, Failure> {
    let text = String::from_utf8(store::read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_function(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn load_pool(dir: &Path) -> Result<LoadedPool, Failure> {
    let manifest: Manifest = store::read_json(&dir.join("manifest.json"))?;
    let function = parse_file(&dir.join("function.mir"))?;
    let source = parse_file(&dir.join("source.mir"))?;
    let programs = manifest
        .variants
        .iter()
        .map(|v| {
            let path = dir.join(&v.file);
            MachineProgram::from_bytes(&store::read(&path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
        })
        .collect::<Result<_, _>>()?;
    Ok(LoadedPool {
        dir: dir.to_path_buf(),
        manifest,
        function,
        source,
        programs,
    })
}

fn pool_of(c: &Common, f: &FunctionIR) -> Result<LoadedPool, Failure> {
    let (label, _) = mode_of(c, f);
    let p = c.profile.profile();
    load_pool(&store::pool_dir(&c.out, &p.name, &f.name, &label, c.gap))
}

fn verr(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

/// Runs the oracles over one pool and writes `verify.json`.
pub fn verify_pool(pool: &LoadedPool, p: &MachineProfile, seed: u64, strict: bool) -> Result<VerifyRecord, Failure> {
    let mode = pool.manifest.mode.as_str();
    // The oracle a variant must pass; naive pools are held to the secure mode of their source.
    let target = match mode {
        "naive" => secure_mode(&pool.source).as_str(),
        m => m,
    };
    let run_cr = target == "tsc" || mode == "naive";
    let run_psc = target == "psc" || mode == "naive";
    let psets = extract_secret_path_sets(&pool.function, &infer_types(&pool.function));
    let (_, reference) = baseline(&pool.source, DEFAULT_BUDGET, seed, p)?;
    let base = &pool.programs[0];
    let reference_equivalent = check_equivalence(&reference, base, p, seed).map_err(verr)?.equivalent();
    let mut variants = Vec::new();
    for (entry, m) in pool.manifest.variants.iter().zip(&pool.programs) {
        let equivalent = check_equivalence(base, m, p, seed).map_err(verr)?.equivalent();
        let mut passed = equivalent;
        let cr = if run_cr {
            let r = check_cr(m, p, &psets, &PUBLIC_PROBES).map_err(verr)?;
            if !r.complete {
                eprintln!("warning: {} {}: timing oracle sampled non-public inputs", pool.manifest.function, entry.file);
                passed &= !strict;
            }
            if target == "tsc" {
                passed &= r.secure();
            }
            Some(if r.secure() { "SECURE" } else { "INSECURE" }.to_string())
        } else {
            None
        };
        let mut rot_leak = false;
        let psc = if run_psc {
            let r = check_psc(m, p).map_err(verr)?;
            store::write(&pool.dir.join(format!("{}.psc.tsv", entry.file.trim_end_matches(".mrsc"))), r.records())?;
            rot_leak = r.leaks().any(|x| matches!(x.site.kind, SiteKind::Register(_)));
            let verdict = if !r.complete {
                eprintln!("warning: {} {}: power oracle enumeration INCOMPLETE", pool.manifest.function, entry.file);
                passed &= !strict;
                "INCOMPLETE"
            } else if r.secure() {
                "SECURE"
            } else {
                if target == "psc" {
                    passed = false;
                }
                "LEAK"
            };
            Some(verdict.to_string())
        } else {
            None
        };
        variants.push(VariantVerdict {
            file: entry.file.clone(),
            equivalent,
            cr,
            psc,
            rot_leak,
            passed,
        });
    }
    let rec = VerifyRecord {
        function: pool.manifest.function.clone(),
        profile: pool.manifest.profile.clone(),
        mode: mode.to_string(),
        reference_equivalent,
        variants,
    };
    store::write_json(&pool.dir.join("verify.json"), &rec)?;
    Ok(rec)
}

fn count(v: &[VariantVerdict], pred: impl Fn(&VariantVerdict) -> bool) -> String {
    v.iter().filter(|x| pred(x)).count().to_string()
}

pub fn verify_cmd(c: &Common) -> Result<String, Failure> {
    let p = c.profile.profile();
    let mut t = Table::new(
        "verify",
        &["function", "profile", "mode", "variants", "equivalent", "cr_insecure", "psc_leak", "verdict"],
    );
    let mut failed = Vec::new();
    for input in load_inputs(c)? {
        let pool = pool_of(c, &input.function)?;
        let rec = verify_pool(&pool, &p, c.seed, c.strict)?;
        let ok = rec.reference_equivalent && rec.variants.iter().all(|v| v.passed);
        if !ok {
            failed.push(rec.function.clone());
        }
        let v = &rec.variants;
        t.push(vec![
            rec.function.clone(),
            rec.profile.clone(),
            rec.mode.clone(),
            v.len().to_string(),
            count(v, |x| x.equivalent),
            count(v, |x| x.cr.as_deref() == Some("INSECURE")),
            count(v, |x| x.psc.as_deref() == Some("LEAK")),
            if ok { "PASS" } else { "FAIL" }.into(),
        ]);
    }
    let out = t.render(c.format);
    if !failed.is_empty() {
        print!("{out}");
        return Err(Failure::Oracle(format!("variants failed their oracle: {}", failed.join(", "))));
    }
    Ok(out)
}

pub const GADGET_HEADERS: [&str; 9] = ["function", "profile", "mode", "gap%", "N", "mean_srate", "0", "(0,20]", "(20,100]"];

/// One gadget-table row for a pool; `None` for pools of fewer than two variants.
pub fn gadget_row(pool: &LoadedPool, k: usize) -> Result<Option<Vec<String>>, Failure> {
    let m = &pool.manifest;
    let (rates, h) = match gadgets::histogram(&pool.programs, k) {
        Ok(x) => x,
        Err(GadgetError::PoolTooSmall(_)) => return Ok(None),
        Err(e) => return Err(Failure::Input(format!("{}: {e}", pool.dir.display()))),
    };
    let [z, l, hi] = h.percentages();
    Ok(Some(vec![
        m.function.clone(),
        m.profile.clone(),
        m.mode.clone(),
        m.gap_percent.map_or("-".into(), |g| g.to_string()),
        m.produced.to_string(),
        format!("{:.3}", gadgets::mean(&rates)),
        percent(z),
        percent(l),
        percent(hi),
    ]))
}

pub fn gadgets_cmd(c: &Common) -> Result<String, Failure> {
    let mut t = Table::new("gadgets", &GADGET_HEADERS);
    for input in load_inputs(c)? {
        let pool = pool_of(c, &input.function)?;
        match gadget_row(&pool, c.max_len)? {
            Some(row) => t.push(row),
            None => eprintln!("warning: {}: fewer than two variants, no pairs", pool.manifest.function),
        }
    }
    Ok(t.render(c.format))
}
