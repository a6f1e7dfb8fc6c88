//! Secure diversifying backend for the MiniRISC machine.

pub mod corpus;
pub mod machine;
pub mod mir;
pub mod secanalysis;
pub mod copmodel;
pub mod pipeline;
pub mod solver;
pub mod verify;
pub mod gadgets;

mod par;
