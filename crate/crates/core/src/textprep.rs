//! Review text normalization.
//!
//! The chain runs in a fixed order: case normalization, emoji removal,
//! whitespace tokenization, stop-word removal, punctuation removal.
//! Every step is a pure function so the steps can be tested and composed
//! independently; [`preprocess`] is exactly their composition.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::corpus::DataFileError;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Normalized tokens of one review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub source_id: String,
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWordList {
    words: HashSet<String>,
    origin: String,
}

impl StopWordList {
    /// The bundled English list (the NLTK list, 179 words).
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS, "bundled: NLTK english stop words")
    }

    /// Parses a one-word-per-line list. Blank lines and `#` comments are
    /// skipped, entries are lowercased and deduplicated.
    pub fn parse(text: &str, origin: impl Into<String>) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(normalize_case)
            .collect();
        StopWordList {
            words,
            origin: origin.into(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, DataFileError> {
        let text = fs::read_to_string(path).map_err(|source| DataFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::parse(&text, format!("file: {}", path.display())))
    }

    pub fn from_words<I, S>(words: I, origin: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopWordList {
            words: words.into_iter().map(|w| normalize_case(w.as_ref())).collect(),
            origin: origin.into(),
        }
    }

    pub fn empty() -> Self {
        Self::from_words(Vec::<String>::new(), "empty")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Per-codepoint lowercase mapping. Codepoints without a lowercase mapping
/// pass through unchanged.
pub fn normalize_case(text: &str) -> String {
    text.chars().flat_map(char::to_lowercase).collect()
}

/// Emoji and pictograph codepoints removed by [`strip_emoji`].
///
/// ZWJ (U+200D) is not listed here: it is only removed when it joins an
/// emoji sequence.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1F0FF // mahjong, domino, playing cards
        | 0x1F170..=0x1F1FF // enclosed alphanumerics incl. regional indicators (flags)
        | 0x1F200..=0x1F2FF // enclosed ideographic supplement
        | 0x1F300..=0x1F5FF // misc symbols and pictographs, skin tones
        | 0x1F600..=0x1F64F // emoticons
        | 0x1F680..=0x1F6FF // transport and map
        | 0x1F780..=0x1F7FF // geometric shapes extended
        | 0x1F900..=0x1F9FF // supplemental symbols and pictographs
        | 0x1FA00..=0x1FAFF // chess symbols, symbols and pictographs extended-a
        | 0x2600..=0x26FF   // misc symbols
        | 0x2700..=0x27BF   // dingbats
        | 0x2B05..=0x2B07 | 0x2B1B | 0x2B1C | 0x2B50 | 0x2B55
        | 0xFE00..=0xFE0F   // variation selectors
        | 0x20E3            // combining enclosing keycap
        | 0xE0020..=0xE007F // tag sequences (subdivision flags)
    )
}

const ZWJ: char = '\u{200D}';

/// Removes emoji codepoints. A zero-width joiner is dropped when either
/// neighbour is an emoji codepoint or another joiner in the same sequence.
pub fn strip_emoji(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        if is_emoji(c) {
            continue;
        }
        if c == ZWJ && joins_emoji(&chars, i) {
            continue;
        }
        out.push(c);
    }
    out
}

fn joins_emoji(chars: &[char], at: usize) -> bool {
    let prev = chars[..at].iter().rev().find(|&&c| c != ZWJ);
    let next = chars[at + 1..].iter().find(|&&c| c != ZWJ);
    prev.is_some_and(|&c| is_emoji(c)) || next.is_some_and(|&c| is_emoji(c))
}

/// Splits on Unicode whitespace, dropping empty fragments.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Drops tokens that are stop words.
///
/// A token is compared after trimming its edge punctuation, so `"the!!"`
/// is removed here rather than surviving as `"the"` after
/// [`remove_punct`].
pub fn remove_stopwords(tokens: Vec<String>, stoplist: &StopWordList) -> Vec<String> {
    tokens
        .into_iter()
        .filter(|t| !stoplist.contains(t) && !stoplist.contains(trim_punct(t)))
        .collect()
}

pub fn is_punct(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn trim_punct(token: &str) -> &str {
    token.trim_matches(is_punct)
}

/// Strips leading and trailing punctuation; interior punctuation stays
/// (`"don't"`, `"e-mail"`). Tokens left empty are dropped.
pub fn remove_punct(tokens: Vec<String>) -> Vec<String> {
    tokens
        .into_iter()
        .filter_map(|t| {
            let trimmed = trim_punct(&t);
            if trimmed.is_empty() {
                None
            } else if trimmed.len() == t.len() {
                Some(t)
            } else {
                Some(trimmed.to_owned())
            }
        })
        .collect()
}

/// Runs the full chain over `text`.
pub fn preprocess(text: &str, stoplist: &StopWordList) -> Vec<String> {
    let lowered = normalize_case(text);
    let plain = strip_emoji(&lowered);
    let tokens = tokenize(&plain);
    let tokens = remove_stopwords(tokens, stoplist);
    remove_punct(tokens)
}

pub fn preprocess_review(id: &str, text: &str, stoplist: &StopWordList) -> TokenSequence {
    TokenSequence {
        source_id: id.to_owned(),
        tokens: preprocess(text, stoplist),
    }
}
