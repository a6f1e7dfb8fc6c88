use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;
use secdiv_core::copmodel::Mode;
use secdiv_core::machine::MachineProfile;

#[derive(Parser, Debug)]
#[command(name = "secdiv", version, about = "Side-channel-aware diversifying backend for MiniRISC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve for the best secure program of each input.
    Compile(Common),
    /// Generate a pool of distinct variants of each input.
    Diversify(Common),
    /// Check the pools of each input with the equivalence and leakage oracles.
    Verify(Common),
    /// Gadget-overlap histograms of the pools of each input.
    Gadgets(Common),
    /// Tables over everything found under the output directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Tsc,
    Psc,
    None,
    /// Random re-allocation of a secure base, unaware of side channels.
    Naive,
}

impl ModeArg {
    pub fn mode(self) -> Option<Mode> {
        match self {
            ModeArg::Tsc => Some(Mode::Tsc),
            ModeArg::Psc => Some(Mode::Psc),
            ModeArg::None => Some(Mode::None),
            ModeArg::Naive => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    #[default]
    Tight8,
    Wide32,
}

impl ProfileArg {
    pub fn profile(self) -> MachineProfile {
        match self {
            ProfileArg::Tight8 => MachineProfile::tight8(),
            ProfileArg::Wide32 => MachineProfile::wide32(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// IR files.
    pub inputs: Vec<PathBuf>,
    /// Also process every shipped benchmark.
    #[arg(long)]
    pub corpus: bool,
    /// Defaults to tsc for functions that branch on secrets, psc otherwise.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Allowed cost overhead over the best solution, in percent.
    #[arg(long, default_value_t = 0)]
    pub gap: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub variants: u64,
    /// Minimum Hamming distance between pool members.
    #[arg(long, default_value_t = 1)]
    pub dthresh: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600)]
    pub budget_secs: u64,
    #[arg(long, value_enum, default_value_t)]
    pub profile: ProfileArg,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Write the security analysis next to the compiled program.
    #[arg(long)]
    pub emit_analysis: bool,
    /// Write the constraint problem as an s-expression.
    #[arg(long)]
    pub emit_model: bool,
    /// Treat incomplete oracle enumeration as a failure.
    #[arg(long)]
    pub strict: bool,
    /// Maximum gadget length.
    #[arg(long, default_value_t = secdiv_core::gadgets::DEFAULT_K)]
    pub max_len: usize,
}

impl Common {
    pub fn gap(&self) -> Ratio<u64> {
        Ratio::new(self.gap, 100)
    }

    pub fn budget(&self) -> Duration {
        Duration::from_secs(self.budget_secs)
    }
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Include wall-clock diversification times (not reproducible).
    #[arg(long)]
    pub timings: bool,
    #[arg(long, default_value_t = secdiv_core::gadgets::DEFAULT_K)]
    pub max_len: usize,
}
