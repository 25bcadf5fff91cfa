//! Golden preprocessing cases and properties of the preprocessing chain.

mod common;

use common::checks::textprep;
use hvd_core::textprep::{normalize_case, preprocess, remove_punct, remove_stopwords, strip_emoji, tokenize, StopWordList};
use proptest::prelude::*;

#[test]
fn golden_file_matches_bit_exactly() {
    textprep::golden_file_matches_bit_exactly();
}

#[test]
fn worked_examples_of_each_step() {
    textprep::worked_examples_of_each_step();
}

/// Text built from pieces that exercise every step: mixed case, stop
/// words, edge and interior punctuation, emoji and odd whitespace.
fn review_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        3 => "[a-zA-Z]{1,8}",
        2 => prop::sample::select(vec!["The", "is", "AM", "don't", "it's", "NOT", "no"]).prop_map(String::from),
        2 => prop::sample::select(vec!["!!", "...", "??", ":(", "(", ")", "\"", "…", "-", "%", "'", "¡", "«", "»"]).prop_map(String::from),
        1 => prop::sample::select(vec!["\u{1F600}", "\u{2764}\u{FE0F}", "\u{1F468}\u{200D}\u{1F469}", "\u{1F1FA}\u{1F1F8}", "\u{1F44D}\u{1F3FD}"]).prop_map(String::from),
        2 => prop::sample::select(vec![" ", "  ", "\t", "\n", "\u{00A0}", "\u{2003}"]).prop_map(String::from),
        1 => "\\PC{1,3}",
    ];
    prop::collection::vec(piece, 0..24).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn composition_of_the_five_steps(text in review_text()) {
        let stop = StopWordList::bundled();
        let chained = remove_punct(remove_stopwords(tokenize(&strip_emoji(&normalize_case(&text))), &stop));
        prop_assert_eq!(preprocess(&text, &stop), chained);
    }

    #[test]
    fn idempotent_on_rendered_output(text in review_text()) {
        let stop = StopWordList::bundled();
        let once = preprocess(&text, &stop);
        prop_assert_eq!(preprocess(&once.join(" "), &stop), once);
    }

    #[test]
    fn output_tokens_are_clean(text in review_text()) {
        let stop = StopWordList::bundled();
        for t in preprocess(&text, &stop) {
            prop_assert!(!t.is_empty());
            prop_assert_eq!(normalize_case(&t), t.clone());
            prop_assert!(!t.chars().any(char::is_whitespace), "{:?}", t);
            prop_assert!(!stop.contains(&t), "{:?}", t);
            prop_assert!(!t.chars().all(hvd_core::textprep::is_punct), "{:?}", t);
            prop_assert!(!t.chars().any(hvd_core::textprep::is_emoji), "{:?}", t);
        }
    }
}
