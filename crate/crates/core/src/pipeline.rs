//! Analysis and transformations ahead of model construction.

use num_rational::Ratio;

use crate::copmodel::{build_problem, CopProblem, ModelError, Mode};
use crate::machine::MachineProfile;
use crate::mir::FunctionIR;
use crate::secanalysis::{
    analysis_report, balance_cbb, balance_ebb, extract_secret_path_sets, gen_leak_pairs, infer_types, restore_mask_order,
    BalanceError, LeakPairSets, SecretPathSet, TypeMap,
};

/// Balancing transformation for secret-dependent branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strategy {
    /// Empty block of optional NOPs.
    #[default]
    Ebb,
    /// Dead copy of the other arm; falls back to `Ebb` on multi-block arms.
    Cbb,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    /// Function after the mode's transformations.
    pub function: FunctionIR,
    pub types: TypeMap,
    pub psets: Vec<SecretPathSet>,
    pub pairs: LeakPairSets,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn report(&self) -> String {
        analysis_report(&self.function, &self.types, &self.psets, &self.pairs)
    }

    pub fn problem(
        &self,
        p: &MachineProfile,
        mode: Mode,
        gap: Ratio<u64>,
        best: Option<Ratio<u64>>,
    ) -> Result<CopProblem, ModelError> {
        build_problem(&self.function, &self.pairs, &self.psets, p, mode, gap, best)
    }
}

/// The secure mode a function calls for: timing if it branches on secrets, power otherwise.
pub fn secure_mode(f: &FunctionIR) -> Mode {
    if extract_secret_path_sets(f, &infer_types(f)).is_empty() {
        Mode::Psc
    } else {
        Mode::Tsc
    }
}

/// Runs the analysis, applying balancing (TSC) or mask-order restoration (PSC).
pub fn prepare(f: &FunctionIR, mode: Mode, strategy: Strategy) -> Prepared {
    let mut cur = f.clone();
    let mut warnings = Vec::new();
    match mode {
        Mode::Tsc => {
            let mut sets = extract_secret_path_sets(&cur, &infer_types(&cur));
            // Highest branch first: insertions only renumber blocks after the branch.
            sets.sort_by_key(|s| std::cmp::Reverse(s.branch_block));
            for branch in sets.into_iter().map(|s| s.branch_block) {
                let fresh = extract_secret_path_sets(&cur, &infer_types(&cur));
                let Some(s) = fresh.iter().find(|s| s.branch_block == branch) else { continue };
                let done = match strategy {
                    Strategy::Ebb => balance_ebb(&cur, s),
                    Strategy::Cbb => match balance_cbb(&cur, s) {
                        Ok(b) => b,
                        Err(e @ BalanceError::ArmTooLong(_)) => {
                            warnings.push(format!("{e}; applied it"));
                            balance_ebb(&cur, s)
                        }
                    },
                };
                warnings.extend(done.warning);
                cur = done.function;
            }
        }
        Mode::Psc => {
            let r = restore_mask_order(&cur, &infer_types(&cur));
            for t in &r.residual {
                warnings.push(format!("`{}` remains secret after mask reordering", r.function.temps[*t].name));
            }
            cur = r.function;
        }
        Mode::None => {}
    }
    let types = infer_types(&cur);
    let psets = extract_secret_path_sets(&cur, &types);
    let pairs = gen_leak_pairs(&cur, &types);
    Prepared {
        function: cur,
        types,
        psets,
        pairs,
        warnings,
    }
}
