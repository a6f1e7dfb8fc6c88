//! Branch-and-bound search for optimal solutions and the seeded
//! diversification loop that grows pools of distinct secure variants.

mod model;
mod naive;
mod search;

use std::fmt;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::copmodel::{CopProblem, Family, Solution};
use crate::machine::Allocation;
use crate::mir::FunctionIR;
use crate::par;
use model::Model;
use search::{Flow, Search};

pub use naive::naive_diversify;

/// Searches launched per diversification round.
pub const ROUND_WIDTH: usize = 4;

/// Default search budget.
pub const DEFAULT_BUDGET: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("no solution; removing the {} constraints makes the problem feasible", .0.map_or("(no single family)", |f| f.as_str()))]
    Unsat(Option<Family>),
    #[error("time budget exhausted before any solution was found")]
    Timeout,
    #[error(transparent)]
    Model(#[from] crate::copmodel::ModelError),
}

/// Best solution found, and whether the search proved it optimal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solved {
    pub solution: Solution,
    pub optimal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// The requested number of variants was produced.
    Complete,
    /// No further solution satisfies the distance and bound constraints.
    Exhausted,
    Timeout,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Complete => "complete",
            StopReason::Exhausted => "EXHAUSTED",
            StopReason::Timeout => "TIMEOUT",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Variants of one function. Member 0 is the base solution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariantPool {
    pub function: FunctionIR,
    pub solutions: Vec<Solution>,
    /// Bound applied to every member, if any.
    pub gap: Option<Ratio<u64>>,
    pub dthresh: usize,
    pub reason: StopReason,
}

impl VariantPool {
    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }
}

pub(crate) fn distance_alloc(a: &Allocation, b: &Allocation) -> usize {
    let ops: usize = a
        .ops
        .iter()
        .zip(&b.ops)
        .map(|(x, y)| {
            usize::from(x.active != y.active)
                + usize::from(x.cycle != y.cycle)
                + usize::from(x.choice != y.choice)
                + usize::from(x.swap != y.swap)
        })
        .sum();
    let locs = a.loc.iter().zip(&b.loc).filter(|(x, y)| x != y).count();
    ops + locs
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("solutions belong to different problems")]
pub struct MismatchedProblems;

/// Hamming distance over activity, cycle, implementation, swap and location variables.
pub fn distance(a: &Solution, b: &Solution) -> Result<usize, MismatchedProblems> {
    if a.alloc.ops.len() != b.alloc.ops.len() || a.alloc.loc.len() != b.alloc.loc.len() {
        return Err(MismatchedProblems);
    }
    Ok(distance_alloc(&a.alloc, &b.alloc))
}

fn deadline(budget: Duration) -> Option<Instant> {
    Instant::now().checked_add(budget)
}

fn branch_and_bound(prob: &CopProblem, until: Option<Instant>) -> (Option<Solution>, bool) {
    let m = Model::new(prob);
    let mut s = Search::new(&m, true, None, until, &[], 0);
    s.run();
    let sol = s.best.take().map(|(obj, alloc)| Solution {
        alloc,
        objective: Ratio::new(obj, m.denom),
        seed: 0,
    });
    (sol, !s.timed_out)
}

/// Minimum-objective solution. On timeout, returns the incumbent marked non-optimal.
pub fn solve_optimal(prob: &CopProblem, budget: Duration, seed: u64) -> Result<Solved, SolveError> {
    let until = deadline(budget);
    let (sol, complete) = branch_and_bound(prob, until);
    match sol {
        Some(mut s) => {
            s.seed = seed;
            Ok(Solved {
                solution: s,
                optimal: complete,
            })
        }
        None if !complete => Err(SolveError::Timeout),
        None => {
            // Name the first family whose removal restores feasibility.
            let fams = [
                Family::OptimalityGap,
                Family::Balance,
                Family::RotConflict,
                Family::MreConflict,
                Family::Interference,
                Family::CopySemantics,
            ];
            let culprit = fams
                .into_iter()
                .filter(|&f| prob.has_family(f))
                .find(|&f| branch_and_bound(&prob.without(f), until).0.is_some());
            Err(SolveError::Unsat(culprit))
        }
    }
}

enum Outcome {
    Found(Solution),
    Exhausted,
    Timeout,
}

fn seeded_search(m: &Model, pool: &[Allocation], dthresh: usize, seed: u64, until: Option<Instant>) -> Outcome {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Search::new(m, false, Some(rng), until, pool, dthresh);
    match s.run() {
        Flow::Found => Outcome::Found(Solution {
            objective: crate::copmodel::objective_value(m.prob, s.found.as_ref().unwrap()).expect("full assignment"),
            alloc: s.found.take().unwrap(),
            seed,
        }),
        _ if s.timed_out => Outcome::Timeout,
        _ => Outcome::Exhausted,
    }
}

/// Grows a pool around `best`: every member satisfies the optimality-gap
/// bound for `gap` and lies at distance at least `dthresh` from every other.
pub fn diversify(
    prob: &CopProblem,
    best: &Solution,
    n: usize,
    gap: Ratio<u64>,
    dthresh: usize,
    budget: Duration,
    seed: u64,
) -> VariantPool {
    let until = deadline(budget);
    let bounded = prob.with_bound(best.objective, gap);
    let m = Model::new(&bounded);
    let dthresh = dthresh.max(1);
    let mut pool = vec![best.clone()];
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut reason = StopReason::Complete;
    while pool.len() < n {
        let round: Vec<u64> = (0..ROUND_WIDTH).map(|_| seeds.next_u64()).collect();
        let snapshot: Vec<Allocation> = pool.iter().map(|s| s.alloc.clone()).collect();
        let outcomes = par::map(&round, |&s| seeded_search(&m, &snapshot, dthresh, s, until));
        let mut found = Vec::new();
        let mut exhausted = false;
        let mut timeout = false;
        for (i, o) in outcomes.into_iter().enumerate() {
            match o {
                Outcome::Found(s) => found.push((i, s)),
                Outcome::Exhausted => exhausted = true,
                Outcome::Timeout => timeout = true,
            }
        }
        found.sort_by(|(i, a), (j, b)| (a.objective, a.seed, i).cmp(&(b.objective, b.seed, j)));
        for (_, s) in found {
            if pool.len() < n && pool.iter().all(|p| distance_alloc(&p.alloc, &s.alloc) >= dthresh) {
                pool.push(s);
            }
        }
        if exhausted {
            reason = StopReason::Exhausted;
            break;
        }
        if timeout {
            reason = StopReason::Timeout;
            break;
        }
    }
    if pool.len() >= n {
        reason = StopReason::Complete;
    }
    VariantPool {
        function: prob.function.clone(),
        solutions: pool,
        gap: Some(gap),
        dthresh,
        reason,
    }
}

#[cfg(test)]
mod tests;
