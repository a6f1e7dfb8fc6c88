use num_rational::Ratio;

use super::*;
use crate::corpus;
use crate::machine::{encode, run, OpPlacement};
use crate::mir::parse_function;
use crate::pipeline::{prepare, Strategy};

fn problem(f: &FunctionIR, mode: Mode) -> CopProblem {
    let prep = prepare(f, mode, Strategy::Ebb);
    prep.problem(&MachineProfile::tight8(), mode, Ratio::from_integer(0), None).unwrap()
}

/// Mandatory ops active at the given cycles, optional ops off.
fn alloc(prob: &CopProblem, cycles: &[u32], locs: &[Loc]) -> Allocation {
    let f = &prob.function;
    let ops = f
        .ops()
        .map(|o| OpPlacement {
            active: !o.optional,
            cycle: if o.optional { 0 } else { cycles[o.id] },
            choice: Impl::Default,
            swap: false,
        })
        .collect();
    Allocation {
        loc: locs.iter().map(|&l| Some(l)).collect(),
        ops,
    }
}

fn solution(prob: &CopProblem, a: Allocation) -> Solution {
    let objective = objective_value(prob, &a).unwrap();
    Solution { alloc: a, objective, seed: 0 }
}

const R: fn(u8) -> Loc = Loc::Reg;

#[test]
fn objective_counts_terminal_latency() {
    let f = parse_function("func f(a:public)\nblock 0\n  x = add a, a\n  y = add x, x\n  z = add y, y\n  ret z\n").unwrap();
    let prob = problem(&f, Mode::None);
    let a = alloc(&prob, &[0, 1, 2, 3], &[R(0), R(1), R(1), R(1)]);
    assert_eq!(objective_value(&prob, &a).unwrap(), Ratio::from_integer(4));
    // Independent recomputation on the simulator.
    let m = encode(&prob.function, &a, &prob.profile).unwrap();
    assert_eq!(run(&m, &[7], &prob.profile).unwrap().total_cycles, 4);
    assert!(check_solution(&solution(&prob, a), &prob).is_empty());
}

#[test]
fn objective_is_weighted_sum() {
    let f = parse_function(
        "func f(a:public)\nblock 0 weight 1\n  x = add a, a\n  y = add x, x\n  z = add y, y\n  w = add z, z\nblock 1 weight 2\n  p = add w, w\n  q = add p, p\n  s = add q, q\n  u = add s, s\n  ret u\n",
    )
    .unwrap();
    let prob = problem(&f, Mode::None);
    let a = alloc(&prob, &[0, 1, 2, 3, 0, 1, 2, 3, 4], &[R(0); 9]);
    assert_eq!(block_costs(&prob, &a).unwrap(), vec![4, 5]);
    assert_eq!(objective_value(&prob, &a).unwrap(), Ratio::from_integer(14));
}

#[test]
fn partial_assignment_is_an_error() {
    let prob = problem(&corpus::load("masked_xor"), Mode::None);
    let mut a = alloc(&prob, &[0, 1, 2, 3], &[R(0); 6]);
    a.ops.pop();
    assert!(objective_value(&prob, &a).is_err());
}

// masked_xor temps: pub key mask mk t res; ops: mk, t, res, ret.
fn masked_xor_locs(mk: u8) -> Vec<Loc> {
    vec![R(0), R(1), R(2), R(mk), R(3), R(3)]
}

#[test]
fn dependency_violation_names_the_edge() {
    let prob = problem(&corpus::load("masked_xor"), Mode::None);
    let a = alloc(&prob, &[1, 0, 2, 3], &masked_xor_locs(3));
    let v = check_solution(&solution(&prob, a), &prob);
    assert!(v.contains(&Violation::Dependency { before: 0, after: 1 }), "{v:?}");
}

#[test]
fn masked_assignment_is_feasible_under_psc() {
    let prob = problem(&corpus::load("masked_xor"), Mode::Psc);
    let a = alloc(&prob, &[0, 1, 2, 3], &masked_xor_locs(3));
    assert_eq!(check_solution(&solution(&prob, a), &prob), vec![]);
}

#[test]
fn key_transition_in_shared_register_is_flagged() {
    // mk = key ^ mask overwrites mask in r2: the transition is key itself.
    let f = corpus::load("masked_xor");
    let a_locs = masked_xor_locs(2);
    let none = problem(&f, Mode::None);
    let a = alloc(&none, &[0, 1, 2, 3], &a_locs);
    assert!(check_solution(&solution(&none, a.clone()), &none).is_empty());

    let psc = problem(&f, Mode::Psc);
    let v = check_solution(&solution(&psc, a), &psc);
    let mask = f.temp_by_name("mask").unwrap();
    let mk = f.temp_by_name("mk").unwrap();
    assert!(
        v.contains(&Violation::Rot {
            op: 0,
            reg: 2,
            prev: Node::Temp(mask),
            next: mk
        }),
        "{v:?}"
    );
    assert!(v[0].to_string().starts_with("conflict_rassign"));
}

#[test]
fn interference_is_detected() {
    let prob = problem(&corpus::load("masked_xor"), Mode::None);
    // mk lands in pub's register while o1 still reads pub.
    let mut locs = masked_xor_locs(3);
    locs[3] = R(0);
    let a = alloc(&prob, &[0, 1, 2, 3], &locs);
    let v = check_solution(&solution(&prob, a), &prob);
    assert!(v.contains(&Violation::Interference(0, 3)), "{v:?}");
}

#[test]
fn mode_selects_security_families() {
    let f = corpus::load("check_bit");
    let none = problem(&f, Mode::None);
    for fam in [Family::Balance, Family::RotConflict, Family::MreConflict, Family::OptimalityGap] {
        assert!(!none.has_family(fam));
    }
    for fam in [Family::Dependency, Family::Interference, Family::SingleIssue] {
        assert!(none.has_family(fam));
    }
    let tsc = problem(&f, Mode::Tsc);
    assert!(tsc.has_family(Family::Balance));
    assert!(!tsc.has_family(Family::RotConflict));
    let psc = problem(&corpus::load("masked_xor"), Mode::Psc);
    assert!(psc.has_family(Family::RotConflict));
    assert!(!psc.has_family(Family::Balance));
}

#[test]
fn nop_block_horizon_is_its_work() {
    let prob = problem(&corpus::load("check_bit"), Mode::Tsc);
    // Block 1 holds the five balancing NOPs and the jump.
    assert_eq!(prob.vars.horizon[1], 5 + 3);
    assert!(prob.vars.horizon[2] >= 3 + 5);
}

#[test]
fn gap_bound_floor() {
    let best = Ratio::from_integer(15);
    assert_eq!(gap_bound(best, Ratio::new(1, 10)), Ratio::from_integer(16));
    assert_eq!(gap_bound(best, Ratio::from_integer(0)), best);
    assert_eq!(gap_bound(Ratio::new(7, 2), Ratio::from_integer(0)), Ratio::new(7, 2));
}

#[test]
fn optimality_gap_is_checked() {
    let prob = problem(&corpus::load("masked_xor"), Mode::None).with_bound(Ratio::from_integer(4), Ratio::from_integer(0));
    let good = alloc(&prob, &[0, 1, 2, 3], &masked_xor_locs(3));
    assert!(check_solution(&solution(&prob, good), &prob).is_empty());
    let slow = alloc(&prob, &[0, 1, 2, 4], &masked_xor_locs(3));
    let v = check_solution(&solution(&prob, slow), &prob);
    assert!(matches!(v[..], [Violation::OptimalityGap { .. }]), "{v:?}");
}

#[test]
fn too_many_inputs_is_rejected() {
    let args: Vec<String> = (0..9).map(|i| format!("a{i}:public")).collect();
    let f = parse_function(&format!("func f({})\nblock 0\n  ret a0\n", args.join(", "))).unwrap();
    let prep = prepare(&f, Mode::None, Strategy::Ebb);
    let e = prep.problem(&MachineProfile::tight8(), Mode::None, Ratio::from_integer(0), None);
    assert!(matches!(e, Err(ModelError::TooManyInputs { inputs: 9, .. })));
}

#[test]
fn dump_is_deterministic_and_names_pairs() {
    let prob = problem(&corpus::load("masked_xor"), Mode::Psc);
    let d = dump_problem(&prob);
    assert_eq!(d, dump_problem(&prob.clone()));
    assert!(d.starts_with("(problem masked_xor"));
    assert!(d.contains("(rot-conflict mask mk)") || d.contains("(rot-conflict mk mask)"), "{d}");
}
