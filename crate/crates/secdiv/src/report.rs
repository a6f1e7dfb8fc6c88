use std::path::Path;

use crate::args::ReportArgs;
use crate::commands::{gadget_row, load_pool, GADGET_HEADERS};
use crate::store::{self, CompileRecord, Timing, VerifyRecord};
use crate::table::{percent, Table};
use crate::Failure;

fn share(n: usize, of: usize) -> String {
    percent(if of == 0 { 0.0 } else { 100.0 * n as f64 / of as f64 })
}

/// Every table derivable from the artifacts under `--out`, keyed by
/// profile, function and mode directory in sorted order.
pub fn report(a: &ReportArgs) -> Result<String, Failure> {
    let mut overhead = Table::new(
        "overhead",
        &["function", "profile", "mode", "objective", "baseline", "overhead%", "optimal"],
    );
    let mut pools = Table::new(
        "pools",
        &if a.timings {
            vec!["function", "profile", "mode", "gap%", "requested", "N", "reason", "t(s)"]
        } else {
            vec!["function", "profile", "mode", "gap%", "requested", "N", "reason"]
        },
    );
    let mut gadget = Table::new("gadgets", &GADGET_HEADERS);
    let mut verify = Table::new(
        "verify",
        &["function", "profile", "mode", "N", "equivalent", "cr_insecure", "psc_leak"],
    );
    let mut breakage = Table::new("breakage", &["function", "profile", "N", "cr_violating%", "rot_leaking%"]);
    for profile in store::subdirs(&a.out) {
        for function in store::subdirs(&a.out.join(&profile)) {
            for leaf in store::subdirs(&a.out.join(&profile).join(&function)) {
                let dir = a.out.join(&profile).join(&function).join(&leaf);
                if dir.join("compile.json").exists() {
                    let r: CompileRecord = store::read_json(&dir.join("compile.json"))?;
                    overhead.push(vec![
                        r.function,
                        r.profile,
                        r.mode,
                        r.objective,
                        r.baseline,
                        r.overhead_percent,
                        r.optimal.to_string(),
                    ]);
                }
                if dir.join("manifest.json").exists() {
                    pool_rows(&dir, a, &mut pools, &mut gadget)?;
                }
                if dir.join("verify.json").exists() {
                    let r: VerifyRecord = store::read_json(&dir.join("verify.json"))?;
                    let v = &r.variants;
                    let cr = v.iter().filter(|x| x.cr.as_deref() == Some("INSECURE")).count();
                    let leak = v.iter().filter(|x| x.psc.as_deref() == Some("LEAK")).count();
                    verify.push(vec![
                        r.function.clone(),
                        r.profile.clone(),
                        r.mode.clone(),
                        v.len().to_string(),
                        v.iter().filter(|x| x.equivalent).count().to_string(),
                        cr.to_string(),
                        leak.to_string(),
                    ]);
                    if r.mode == "naive" {
                        let rot = v.iter().filter(|x| x.rot_leak).count();
                        breakage.push(vec![
                            r.function,
                            r.profile,
                            v.len().to_string(),
                            share(cr, v.len()),
                            share(rot, v.len()),
                        ]);
                    }
                }
            }
        }
    }
    let tables = [overhead, pools, gadget, verify, breakage];
    if tables.iter().all(|t| t.rows.is_empty()) {
        return Err(Failure::Input(format!(
            "no artifacts under {}; expected <profile>/<function>/<mode>/compile.json or \
             <profile>/<function>/<mode>-gap<g>/manifest.json (run compile or diversify first)",
            a.out.display()
        )));
    }
    let body: Vec<String> = tables
        .iter()
        .filter(|t| !t.rows.is_empty())
        .map(|t| t.render(a.format))
        .collect();
    let out = body.join("\n");
    let name = match a.format {
        crate::args::Format::Text => "report.txt",
        crate::args::Format::Csv => "report.csv",
    };
    store::write(&a.out.join(name), &out)?;
    Ok(out)
}

fn pool_rows(dir: &Path, a: &ReportArgs, pools: &mut Table, gadget: &mut Table) -> Result<(), Failure> {
    let pool = load_pool(dir)?;
    let m = &pool.manifest;
    let mut row = vec![
        m.function.clone(),
        m.profile.clone(),
        m.mode.clone(),
        m.gap_percent.map_or("-".into(), |g| g.to_string()),
        m.requested.to_string(),
        m.produced.to_string(),
        m.reason.clone(),
    ];
    if a.timings {
        let t: Timing = store::read_json(&dir.join("timing.json"))?;
        row.push(format!("{:.3}", t.wall_ms as f64 / 1000.0));
    }
    pools.push(row);
    if let Some(r) = gadget_row(&pool, a.max_len)? {
        gadget.push(r);
    }
    Ok(())
}
