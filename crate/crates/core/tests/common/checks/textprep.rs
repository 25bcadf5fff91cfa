//! Golden preprocessing cases and the worked example of each step.

use hvd_core::textprep::{normalize_case, preprocess, remove_punct, remove_stopwords, strip_emoji, tokenize, StopWordList};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    input: String,
    tokens: Vec<String>,
}

fn golden() -> Vec<Case> {
    let text = std::fs::read_to_string(crate::common::data_path("preprocess_golden.jsonl")).unwrap();
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

pub fn golden_file_matches_bit_exactly() {
    let stop = StopWordList::bundled();
    let cases = golden();
    assert!(cases.len() >= 50);
    let failures: Vec<String> = cases
        .iter()
        .filter_map(|c| {
            let got = preprocess(&c.input, &stop);
            (got != c.tokens).then(|| format!("{:?}: expected {:?}, got {:?}", c.input, c.tokens, got))
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

pub fn worked_examples_of_each_step() {
    let stop = StopWordList::bundled();
    assert_eq!(normalize_case("Honesty"), "honesty");
    assert_eq!(normalize_case("SCAM!! 100%"), "scam!! 100%");
    assert_eq!(tokenize("the bank account"), ["the", "bank", "account"]);
    assert_eq!(tokenize("a\tb\nc"), ["a", "b", "c"]);
    assert_eq!(remove_stopwords(tokenize("the bank account"), &stop), ["bank", "account"]);
    assert!(remove_stopwords(tokenize("is am are"), &stop).is_empty());
    let punct: Vec<String> = ["scam!!", "??", "great...", ":(", "…", "100%"].map(String::from).into();
    assert_eq!(remove_punct(punct), ["scam", "great", "100"]);
    assert_eq!(strip_emoji("hi\u{1F468}\u{200D}\u{1F469}\u{200D}\u{1F467}there"), "hithere");
    assert_eq!(strip_emoji("great \u{1F600} app"), "great  app");
}
