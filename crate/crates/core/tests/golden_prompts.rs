//! Prompt renderings compared byte-for-byte against checked-in files.

use semfuzz_core::extraction::{build_extraction_prompt, BugArtifact};
use semfuzz_core::feature::GroupSource;
use semfuzz_core::instantiation::build_instantiation_prompt;
use semfuzz_core::{Feature, FeatureGroup, Origin};

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn group(order: &[usize]) -> FeatureGroup {
    let items = [
        ("The code should declare a struct with a flexible array member.", "struct s { int n; int a[]; };"),
        ("The code should pass that struct by value to a variadic function.", "void f(int n, ...);\nf(1, s);\n"),
        ("The code should use computed goto inside a loop.", ""),
    ];
    FeatureGroup::new(
        order.iter().map(|&i| Feature::new(items[i].0, items[i].1, Origin::Manual).unwrap()),
        GroupSource::Synthesized,
        None,
    )
    .unwrap()
}

#[test]
fn instantiation_prompt_matches_golden() {
    let expected = golden("instantiation.txt");
    for order in [[0, 1, 2], [2, 1, 0], [1, 2, 0]] {
        assert_eq!(build_instantiation_prompt(&group(&order)), expected);
    }
}

fn artifact(fix: &str) -> BugArtifact {
    BugArtifact::new(
        "PR90001",
        "ICE in expand_expr_real_1 at -O2 when a struct with a flexible array member is passed to a variadic function.\n",
        "struct s { int n; int a[]; };\nvoid f(int, ...);\nvoid g(struct s *p) { f(1, *p); }\n",
        fix,
        "https://gcc.gnu.org/bugzilla/show_bug.cgi?id=90001",
    )
    .unwrap()
}

#[test]
fn extraction_prompt_matches_golden() {
    let a = artifact("The va_arg lowering did not account for the trailing array when computing the argument size.\n");
    assert_eq!(build_extraction_prompt(&a), golden("extraction.txt"));
    assert_eq!(build_extraction_prompt(&artifact("")), golden("extraction_partial.txt"));
}
