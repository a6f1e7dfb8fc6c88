//! Output directory layout and the files written into it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Failure;

pub fn compile_dir(out: &Path, profile: &str, function: &str, mode: &str) -> PathBuf {
    out.join(profile).join(function).join(mode)
}

/// `naive` pools carry no gap; the others are keyed by it.
pub fn pool_dir(out: &Path, profile: &str, function: &str, mode: &str, gap: u64) -> PathBuf {
    let leaf = if mode == "naive" { mode.to_string() } else { format!("{mode}-gap{gap}") };
    out.join(profile).join(function).join(leaf)
}

pub fn variant_file(i: usize) -> String {
    format!("v{i:03}.mrsc")
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct CompileRecord {
    pub function: String,
    pub profile: String,
    pub mode: String,
    pub objective: String,
    pub baseline: String,
    pub overhead_percent: String,
    pub optimal: bool,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct VariantEntry {
    pub file: String,
    pub objective: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Manifest {
    pub function: String,
    pub profile: String,
    pub mode: String,
    pub gap_percent: Option<u64>,
    pub best: String,
    /// Objective bound every member satisfies.
    pub bound: Option<String>,
    pub dthresh: usize,
    pub seed: u64,
    pub budget_secs: u64,
    pub requested: u64,
    pub produced: usize,
    pub reason: String,
    pub variants: Vec<VariantEntry>,
    pub distances: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Timing {
    pub wall_ms: u128,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct VariantVerdict {
    pub file: String,
    pub equivalent: bool,
    /// `SECURE` or `INSECURE`, when the timing oracle ran.
    pub cr: Option<String>,
    /// `SECURE`, `LEAK` or `INCOMPLETE`, when the power oracle ran.
    pub psc: Option<String>,
    /// A leak at a register site.
    pub rot_leak: bool,
    pub passed: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct VerifyRecord {
    pub function: String,
    pub profile: String,
    pub mode: String,
    /// Member 0 matches the unprotected compilation of the source.
    pub reference_equivalent: bool,
    pub variants: Vec<VariantVerdict>,
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    write(path, s)
}

pub fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Sorted subdirectory names.
pub fn subdirs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    v.sort();
    v
}
