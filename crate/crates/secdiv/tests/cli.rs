use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(format!("{name}.mir"))
}

fn secdiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secdiv")).args(args).output().unwrap()
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", out.to_str().unwrap()]);
    secdiv(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn compile_reports_security_overhead() {
    let dir = tempfile::tempdir().unwrap();
    let cb = corpus("check_bit");
    let o = run_in(dir.path(), &["compile", "--mode", "tsc", cb.to_str().unwrap(), "--profile", "tight8"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("50.0"));
    let rec = json(&dir.path().join("tight8/check_bit/tsc/compile.json"));
    assert_eq!(rec["objective"], "15");
    assert_eq!(rec["baseline"], "10");
    assert!(dir.path().join("tight8/check_bit/tsc/best.mrsc").exists());
}

#[test]
fn unprotected_compile_has_no_security_constraints() {
    let dir = tempfile::tempdir().unwrap();
    let cb = corpus("check_bit");
    let o = run_in(dir.path(), &["compile", "--mode", "none", cb.to_str().unwrap(), "--emit-model"]);
    assert_eq!(o.status.code(), Some(0));
    let rec = json(&dir.path().join("tight8/check_bit/none/compile.json"));
    assert_eq!(rec["objective"], rec["baseline"]);
    assert_eq!(rec["overhead_percent"], "0.0");
    let model = fs::read_to_string(dir.path().join("tight8/check_bit/none/model.sexpr")).unwrap();
    for fam in ["(balance", "(rot-conflict", "(mre-conflict"] {
        assert!(!model.contains(fam), "{fam}");
    }
}

#[test]
fn analysis_lists_the_mask_pair() {
    let dir = tempfile::tempdir().unwrap();
    let mx = corpus("masked_xor");
    let o = run_in(dir.path(), &["compile", "--mode", "psc", mx.to_str().unwrap(), "--emit-analysis"]);
    assert_eq!(o.status.code(), Some(0));
    let a = fs::read_to_string(dir.path().join("tight8/masked_xor/psc/analysis.txt")).unwrap();
    assert!(a.contains("(mask, mk)"), "{a}");
}

#[test]
fn pool_stops_when_variants_run_out() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("id.mir");
    fs::write(&src, "func id(a:public)\nblock 0\n  ret a\n").unwrap();
    let out = dir.path().join("out");
    let o = run_in(&out, &["diversify", "--mode", "none", src.to_str().unwrap(), "--variants", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let m = json(&out.join("tight8/id/none-gap0/manifest.json"));
    // `a` can live in any of the eight registers and nothing else varies.
    assert_eq!(m["produced"], 8);
    assert_eq!(m["reason"], "EXHAUSTED");
}

#[test]
fn gap_sets_the_manifest_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cb = corpus("check_bit");
    for gap in ["0", "10"] {
        let o = run_in(dir.path(), &["diversify", "--mode", "tsc", cb.to_str().unwrap(), "--gap", gap, "--variants", "5"]);
        assert_eq!(o.status.code(), Some(0));
    }
    let m0 = json(&dir.path().join("tight8/check_bit/tsc-gap0/manifest.json"));
    let m10 = json(&dir.path().join("tight8/check_bit/tsc-gap10/manifest.json"));
    assert_eq!(m0["bound"], "15");
    assert_eq!(m10["bound"], "16");
    assert_eq!(m10["gap_percent"], 10);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sm = corpus("sec_mult");
    for d in [a.path(), b.path()] {
        let o = run_in(d, &["diversify", sm.to_str().unwrap(), "--gap", "10", "--variants", "8", "--seed", "7"]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(run_in(d, &["report"]).status.code(), Some(0));
    }
    for f in ["tight8/sec_mult/psc-gap10/manifest.json", "tight8/sec_mult/psc-gap10/v007.mrsc", "report.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn secure_pool_verifies_and_naive_pool_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cb = corpus("check_bit");
    let cb = cb.to_str().unwrap();
    assert_eq!(run_in(dir.path(), &["diversify", "--mode", "tsc", cb, "--variants", "6"]).status.code(), Some(0));
    let o = run_in(dir.path(), &["verify", "--mode", "tsc", cb]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v = json(&dir.path().join("tight8/check_bit/tsc-gap0/verify.json"));
    assert!(v["variants"].as_array().unwrap().iter().all(|x| x["cr"] == "SECURE"));

    assert_eq!(run_in(dir.path(), &["diversify", "--mode", "naive", cb, "--variants", "20"]).status.code(), Some(0));
    let o = run_in(dir.path(), &["verify", "--mode", "naive", cb]);
    assert_eq!(o.status.code(), Some(5));
    let v = json(&dir.path().join("tight8/check_bit/naive/verify.json"));
    assert!(v["variants"].as_array().unwrap().iter().any(|x| x["cr"] == "INSECURE"));
    assert_eq!(v["reference_equivalent"], true);
}

#[test]
fn single_variant_pool_is_equivalent_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mx = corpus("masked_xor");
    let mx = mx.to_str().unwrap();
    assert_eq!(run_in(dir.path(), &["diversify", mx, "--variants", "1"]).status.code(), Some(0));
    assert_eq!(run_in(dir.path(), &["verify", mx]).status.code(), Some(0));
    let o = run_in(dir.path(), &["gadgets", mx]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn gadgets_and_report_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mx = corpus("masked_xor");
    let mx = mx.to_str().unwrap();
    assert_eq!(run_in(dir.path(), &["diversify", mx, "--variants", "4"]).status.code(), Some(0));
    let o = run_in(dir.path(), &["gadgets", mx, "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.starts_with("# gadgets\nfunction,profile,mode,gap%,N,mean_srate,0,(0,20],(20,100]\n"), "{s}");
    assert!(s.contains("masked_xor,tight8,psc,0,4,"));
    let o = run_in(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("pools"));
    assert!(!stdout(&o).contains("t(s)"));
    assert!(stdout(&run_in(dir.path(), &["report", "--timings"])).contains("t(s)"));
}

#[test]
fn report_on_empty_directory_names_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest.json"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(secdiv(&["compile", "--bogus"]).status.code(), Some(2));
    assert_eq!(secdiv(&["compile", "--mode", "fast"]).status.code(), Some(2));
    assert_eq!(run_in(dir.path(), &["compile"]).status.code(), Some(2));
    let bad = dir.path().join("bad.mir");
    fs::write(&bad, "func f(a:public)\nblock 0\n  x = frobnicate a\n").unwrap();
    assert_eq!(run_in(dir.path(), &["compile", bad.to_str().unwrap()]).status.code(), Some(1));
    let sc = corpus("share_compare");
    let o = run_in(dir.path(), &["compile", "--mode", "psc", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rot"));
    let me = corpus("modexp");
    let o = run_in(dir.path(), &["compile", "--mode", "tsc", me.to_str().unwrap(), "--budget-secs", "0"]);
    assert_eq!(o.status.code(), Some(4));
}
