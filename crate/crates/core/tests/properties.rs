use std::collections::BTreeSet;

use num_rational::Ratio;
use proptest::prelude::*;

use secdiv_core::copmodel::{check_solution, Mode, Solution};
use secdiv_core::corpus;
use secdiv_core::gadgets::{histogram, srate, DEFAULT_K};
use secdiv_core::machine::{encode, Allocation, Impl, Instr, Loc, MachineProfile, MachineProgram, OpPlacement};
use secdiv_core::mir::{parse_function, serialize_function, BlockGraph, BlockId};
use secdiv_core::secanalysis::get_paths;
use secdiv_core::pipeline::{prepare, Strategy as Balancing};
use secdiv_core::solver::{distance, diversify, solve_optimal};

/// Forward-edge DAG where block 0 branches two ways and every other block
/// has up to two distinct successors.
fn dag() -> impl Strategy<Value = (usize, Vec<(BlockId, BlockId)>)> {
    (3usize..9).prop_flat_map(|n| {
        let succs: Vec<_> = (0..n)
            .map(|b| {
                let later: Vec<BlockId> = (b + 1..n).collect();
                let min = if b == 0 { 2 } else { 0 };
                let max = later.len().min(2);
                proptest::sample::subsequence(later, min.min(max)..=max)
            })
            .collect();
        (Just(n), succs).prop_map(|(n, succs)| {
            let edges = succs
                .into_iter()
                .enumerate()
                .flat_map(|(b, ss)| ss.into_iter().map(move |s| (b, s)))
                .collect();
            (n, edges)
        })
    })
}

fn all_paths(g: &BlockGraph, b: BlockId, prefix: &mut Vec<BlockId>, out: &mut Vec<Vec<BlockId>>) {
    prefix.push(b);
    let succ = g.successors(b);
    if succ.is_empty() {
        out.push(prefix.clone());
    }
    for s in succ {
        all_paths(g, s, prefix, out);
    }
    prefix.pop();
}

/// Every path from 0 cut at the first block all of them share, or left
/// whole when they share none.
fn expected_paths(g: &BlockGraph) -> BTreeSet<Vec<BlockId>> {
    let mut full = Vec::new();
    all_paths(g, 0, &mut Vec::new(), &mut full);
    let common = (1..g.num_blocks).find(|b| full.iter().all(|p| p.contains(b)));
    full.into_iter()
        .map(|p| match common {
            Some(c) => p[..=p.iter().position(|&x| x == c).unwrap()].to_vec(),
            None => p,
        })
        .collect()
}

fn random_function() -> impl Strategy<Value = String> {
    let op = (0usize..6, any::<u8>(), any::<u8>(), any::<u8>());
    proptest::collection::vec(op, 1..12).prop_map(|ops| {
        let mut temps = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mut body = String::new();
        for (i, (kind, x, y, imm)) in ops.into_iter().enumerate() {
            let name = format!("t{i}");
            let l = &temps[x as usize % temps.len()];
            let r = &temps[y as usize % temps.len()];
            let line = match kind {
                0 => format!("{name} = xor {l}, {r}"),
                1 => format!("{name} = and {l}, {r}"),
                2 => format!("{name} = add {l}, {r}"),
                3 => format!("{name} = or {l}, {imm}"),
                4 => format!("{name} = li {imm}"),
                _ => format!("{name} = mov {l}"),
            };
            body.push_str(&format!("  {line}\n"));
            temps.push(name);
        }
        format!(
            "func f(a:public, b:secret, c:random)\nblock 0\n{body}  ret {}\n",
            temps.last().unwrap()
        )
    })
}

/// Random schedule and register file for masked_xor, all ops active.
fn masked_xor_program() -> impl Strategy<Value = MachineProgram> {
    (proptest::collection::vec(0u32..3, 4), proptest::collection::vec(0u8..8, 6)).prop_map(|(gaps, regs)| {
        let f = corpus::load("masked_xor");
        let mut t = 0;
        let ops = gaps
            .iter()
            .map(|g| {
                t += g;
                let p = OpPlacement {
                    active: true,
                    cycle: t,
                    choice: Impl::Default,
                    swap: false,
                };
                t += 1;
                p
            })
            .collect();
        let a = Allocation {
            loc: regs.into_iter().map(|r| Some(Loc::Reg(r))).collect(),
            ops,
        };
        encode(&f, &a, &MachineProfile::tight8()).unwrap()
    })
}

fn placement() -> impl Strategy<Value = OpPlacement> {
    (any::<bool>(), 0u32..4, 0usize..3, any::<bool>()).prop_map(|(active, cycle, c, swap)| OpPlacement {
        active,
        cycle,
        choice: [Impl::Default, Impl::AddZero, Impl::OrZero][c],
        swap,
    })
}

fn solution() -> impl Strategy<Value = Solution> {
    (
        proptest::collection::vec(placement(), 5),
        proptest::collection::vec(prop_oneof![(0u8..4).prop_map(Loc::Reg), (0u8..2).prop_map(Loc::Spill)], 4),
    )
        .prop_map(|(ops, loc)| Solution {
            alloc: Allocation {
                loc: loc.into_iter().map(Some).collect(),
                ops,
            },
            objective: Ratio::from_integer(0),
            seed: 0,
        })
}

proptest! {
    #[test]
    fn get_paths_matches_exhaustive_walk((n, edges) in dag()) {
        let g = BlockGraph::from_edges(n, &edges);
        let got: BTreeSet<Vec<BlockId>> = get_paths(0, &g).unwrap().into_iter().collect();
        prop_assert_eq!(got, expected_paths(&g));
    }

    #[test]
    fn mir_text_round_trips(src in random_function()) {
        let f = parse_function(&src).unwrap();
        let text = serialize_function(&f);
        let g = parse_function(&text).unwrap();
        prop_assert_eq!(&f, &g);
        prop_assert_eq!(serialize_function(&g), text);
    }

    #[test]
    fn distance_is_a_metric(a in solution(), b in solution(), c in solution()) {
        let d = |x: &Solution, y: &Solution| distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &b) == 0, a.alloc == b.alloc);
    }

    #[test]
    fn srate_is_a_fraction(pool in proptest::collection::vec(masked_xor_program(), 2..6)) {
        let (rates, h) = histogram(&pool, DEFAULT_K).unwrap();
        let n = pool.len() as u64;
        prop_assert_eq!(h.total(), n * (n - 1));
        prop_assert_eq!(rates.len() as u64, n * (n - 1));
        for r in rates {
            prop_assert!(r >= Ratio::from_integer(0) && r <= Ratio::from_integer(1));
        }
        prop_assert_eq!(srate(&pool[0], &pool[0], DEFAULT_K).unwrap(), Ratio::from_integer(1));
    }

    #[test]
    fn instruction_words_round_trip(w in any::<u32>()) {
        if let Ok(i) = Instr::decode(w) {
            prop_assert_eq!(i.encode(), w);
            prop_assert_eq!(Instr::decode(i.encode()), Ok(i));
        }
    }
}

#[test]
fn corpus_round_trips() {
    for (name, src) in corpus::BENCHMARKS.iter().chain(corpus::FIXTURES) {
        let f = parse_function(src).unwrap();
        assert_eq!(parse_function(&serialize_function(&f)).unwrap(), f, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_seed_gives_a_valid_pool(seed in any::<u64>()) {
        let p = MachineProfile::tight8();
        let prob = prepare(&corpus::load("check_bit"), Mode::Tsc, Balancing::Ebb)
            .problem(&p, Mode::Tsc, Ratio::from_integer(0), None)
            .unwrap();
        let budget = std::time::Duration::from_secs(60);
        let best = solve_optimal(&prob, budget, seed).unwrap().solution;
        let gap = Ratio::new(1, 10);
        let pool = diversify(&prob, &best, 6, gap, 2, budget, seed);
        let bounded = prob.with_bound(best.objective, gap);
        for (i, s) in pool.solutions.iter().enumerate() {
            prop_assert_eq!(check_solution(s, &bounded), vec![]);
            for t in &pool.solutions[i + 1..] {
                prop_assert!(distance(s, t).unwrap() >= 2);
            }
        }
    }
}
