mod common;

use std::collections::BTreeMap;

use protofeed::taskforge::{check_syntax, OutcomeClass};

#[test]
fn classifier_agrees_with_reference_grammar() {
    let suite = common::syntax_suite();
    assert_eq!(suite.len(), 500);
    let mut seen: BTreeMap<OutcomeClass, usize> = BTreeMap::new();
    for seq in &suite {
        let marked = seq.to_marked_string();
        let want = common::oracle_class(&marked);
        assert_eq!(check_syntax(seq), want, "{marked}");
        *seen.entry(want).or_default() += 1;
    }
    for c in OutcomeClass::ALL {
        assert!(
            seen.get(&c).copied().unwrap_or(0) > 0,
            "class {c} missing from suite: {seen:?}"
        );
    }
}

#[test]
fn oracle_spot_checks() {
    assert_eq!(common::oracle_class("def f ( :"), OutcomeClass::SyntaxParen);
    assert_eq!(common::oracle_class("x = 1 <newline>"), OutcomeClass::Ok);
    assert_eq!(common::oracle_class("x = = 1"), OutcomeClass::SyntaxExpr);
    assert_eq!(
        common::oracle_class("if x : <newline> y = 1"),
        OutcomeClass::Indentation
    );
    assert_eq!(
        common::oracle_class("def f ( a , a ) : <newline> <scope> return a <newline> </scope>"),
        OutcomeClass::NameArity
    );
}
