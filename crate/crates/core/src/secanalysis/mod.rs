//! Security analysis: type inference with mask tracking, secret-dependent
//! path extraction, balancing and masking-order transformations, and the
//! leak pairs that feed the side-channel constraints.

mod balance;
mod masking;
mod pairs;
mod paths;
mod report;
mod types;

pub use balance::{balance_cbb, balance_ebb, padding_bound, worst_case_block_cost, BalanceError, Balanced};
pub use masking::{restore_mask_order, MaskRestore};
pub use pairs::{bus_value, gen_leak_pairs, LeakPairSets, MemNode, Node};
pub use paths::{extract_secret_path_sets, get_paths, PathError, SecretPathSet};
pub use report::analysis_report;
pub use types::{condition_type, infer_types, value_origin, Atom, InferredType, Poly, TypeMap, XorForm};
