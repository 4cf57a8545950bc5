mod common;

use proptest::prelude::*;

use genonet_core::intent::{merge_and_default, restate, rule_fallback_extract, KeywordTable};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn restatement_reads_back_to_the_same_spec(spec in common::valid_spec()) {
        let text = restate(&spec);
        let partial = rule_fallback_extract(&text, &KeywordTable::default());
        let merged = merge_and_default(&partial).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(merged.spec.canonical_json(), spec.canonical_json(), "{}", text);
        // Idempotent: a second restate/extract round changes nothing.
        let again = merge_and_default(&rule_fallback_extract(&restate(&merged.spec), &KeywordTable::default())).unwrap();
        prop_assert_eq!(again.spec, merged.spec);
    }

    #[test]
    fn rule_pass_is_deterministic(text in "\\PC{0,200}") {
        let kw = KeywordTable::default();
        prop_assert_eq!(rule_fallback_extract(&text, &kw), rule_fallback_extract(&text, &kw));
    }

    #[test]
    fn recognized_quantities_populate_a_field(n in 1u32..1000, unit in prop::sample::select(&["GHz", "MHz", "UEs", "gNBs"][..]), noise in "[a-z ]{0,40}") {
        let text = format!("{noise} {n} {unit} {noise}");
        prop_assert!(!rule_fallback_extract(&text, &KeywordTable::default()).is_empty(), "{}", text);
    }
}
