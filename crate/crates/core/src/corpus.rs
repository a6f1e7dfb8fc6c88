//! Benchmark functions and test fixtures shipped with the crate.

/// Benchmarks: `(name, source)`.
pub const BENCHMARKS: &[(&str, &str)] = &[
    ("masked_xor", include_str!("../corpus/masked_xor.mir")),
    ("sec_mult", include_str!("../corpus/sec_mult.mir")),
    ("check_bit", include_str!("../corpus/check_bit.mir")),
    ("share_compare", include_str!("../corpus/share_compare.mir")),
    ("modexp", include_str!("../corpus/modexp.mir")),
];

/// Small functions exercising particular shapes.
pub const FIXTURES: &[(&str, &str)] = &[
    ("masked_xor_broken", include_str!("../corpus/fixtures/masked_xor_broken.mir")),
    ("two_branches", include_str!("../corpus/fixtures/two_branches.mir")),
    ("long_arm", include_str!("../corpus/fixtures/long_arm.mir")),
    ("diamond", include_str!("../corpus/fixtures/diamond.mir")),
    ("two_exits", include_str!("../corpus/fixtures/two_exits.mir")),
    ("all_public", include_str!("../corpus/fixtures/all_public.mir")),
    ("empty", include_str!("../corpus/fixtures/empty.mir")),
];

pub fn source(name: &str) -> Option<&'static str> {
    BENCHMARKS
        .iter()
        .chain(FIXTURES)
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
}

/// Parses a shipped function; panics on unknown names.
pub fn load(name: &str) -> crate::mir::FunctionIR {
    let src = source(name).unwrap_or_else(|| panic!("no corpus function `{name}`"));
    crate::mir::parse_function(src).expect("corpus functions are valid")
}
