//! Review corpora: JSONL ingestion with a rejection report, the honesty
//! keyword candidate filter, corpus statistics and balanced dataset
//! construction.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::taxonomy::ViolationCategory;
use crate::textprep::{self, StopWordList};

const BUNDLED_KEYWORDS: &str = include_str!("../data/honesty_keywords.txt");

#[derive(Debug, Error)]
pub enum DataFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Invalid {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("keyword dictionary is empty")]
    EmptyDictionary,
    #[error("non-violation pool has {available} examples but {required} are required")]
    PoolTooSmall { required: usize, available: usize },
    #[error("example {id} is labeled {found} but was passed as {expected}")]
    Mislabeled {
        id: String,
        expected: &'static str,
        found: &'static str,
    },
}

/// One app review, stored verbatim. Keys outside the known schema are kept
/// in `extra` and written back on serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub app_id: String,
    pub app_category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Review {
    pub fn new(id: impl Into<String>, app_id: impl Into<String>, text: impl Into<String>) -> Self {
        Review {
            id: id.into(),
            app_id: app_id.into(),
            app_category: String::new(),
            rating: None,
            text: text.into(),
            date: None,
            extra: Map::new(),
        }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.app_category = category.into();
        self
    }

    /// Schema checks applied on ingest: nonempty id and text, rating in
    /// 1..=5, ISO-8601 date.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if textprep::normalize_case(&self.text).trim().is_empty() {
            return Err("empty text".into());
        }
        if let Some(r) = self.rating {
            if !(1..=5).contains(&r) {
                return Err(format!("rating {r} outside 1..5"));
            }
        }
        if let Some(d) = &self.date {
            if !is_iso_date(d) {
                return Err(format!("date {d:?} is not ISO-8601"));
            }
        }
        Ok(())
    }
}

/// Accepts `YYYY-MM-DD` optionally followed by a `T...` time part.
fn is_iso_date(s: &str) -> bool {
    let date = s.split_once('T').map_or(s, |(d, _)| d);
    let parts: Vec<&str> = date.split('-').collect();
    if parts.len() != 3 || parts[0].len() != 4 || parts[1].len() != 2 || parts[2].len() != 2 {
        return false;
    }
    let nums: Option<Vec<u32>> = parts.iter().map(|p| p.parse().ok()).collect();
    match nums.as_deref() {
        Some([_, m, d]) => (1..=12).contains(m) && (1..=31).contains(d),
        _ => false,
    }
}

/// A labeled review. The label follows the classifier convention:
/// 1 = honesty violation, 0 = non-violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(flatten)]
    pub review: Review,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<ViolationCategory>,
}

impl LabeledExample {
    pub fn is_violation(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    reviews: Vec<Review>,
}

impl Corpus {
    /// Builds a corpus, keeping the first occurrence of every id.
    pub fn from_reviews(reviews: impl IntoIterator<Item = Review>) -> Self {
        let mut seen = HashSet::new();
        Corpus {
            reviews: reviews
                .into_iter()
                .filter(|r| seen.insert(r.id.clone()))
                .collect(),
        }
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Review> {
        self.reviews.iter().find(|r| r.id == id)
    }

    pub fn into_reviews(self) -> Vec<Review> {
        self.reviews
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.reviews {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub corpus: Corpus,
    pub rejections: Vec<Rejection>,
}

/// Reads review JSONL. Malformed or invalid lines go to the rejection
/// report with their 1-based line number; blank lines are skipped.
pub fn ingest<R: BufRead>(source: R) -> Result<Ingested, CorpusError> {
    let mut reviews = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let review: Review = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                rejections.push(Rejection {
                    line: lineno,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        if let Err(reason) = review.validate() {
            rejections.push(Rejection { line: lineno, reason });
            continue;
        }
        if !seen.insert(review.id.clone()) {
            rejections.push(Rejection {
                line: lineno,
                reason: "duplicate id".into(),
            });
            continue;
        }
        reviews.push(review);
    }
    Ok(Ingested {
        corpus: Corpus { reviews },
        rejections,
    })
}

pub fn ingest_path(path: &Path) -> Result<Ingested, CorpusError> {
    ingest(BufReader::new(File::open(path)?))
}

/// Reads labeled JSONL (review fields plus `label` and optional
/// `categories`). Unlike [`ingest`] any bad line is an error.
pub fn read_labeled<R: BufRead>(source: R, path: &Path) -> Result<Vec<LabeledExample>, DataFileError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|source| DataFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |reason: String| DataFileError::Invalid {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let ex: LabeledExample = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        if ex.label > 1 {
            return Err(invalid(format!("label {} is not 0 or 1", ex.label)));
        }
        ex.review.validate().map_err(invalid)?;
        out.push(ex);
    }
    Ok(out)
}

pub fn read_labeled_path(path: &Path) -> Result<Vec<LabeledExample>, DataFileError> {
    let file = File::open(path).map_err(|source| DataFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_labeled(BufReader::new(file), path)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordDictionary {
    terms: BTreeSet<String>,
    pub name: String,
    pub version: String,
}

impl KeywordDictionary {
    /// Builds a dictionary; terms are lowercased and deduplicated. Terms
    /// containing whitespace are rejected.
    pub fn new<I, S>(terms: I, name: impl Into<String>, version: impl Into<String>) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for t in terms {
            let t = t.as_ref().trim();
            if t.is_empty() {
                continue;
            }
            if t.chars().any(char::is_whitespace) {
                return Err(format!("term {t:?} contains whitespace"));
            }
            set.insert(textprep::normalize_case(t));
        }
        Ok(KeywordDictionary {
            terms: set,
            name: name.into(),
            version: version.into(),
        })
    }

    /// Parses the plain-text format: one term per line, `#` comments.
    /// `# name: ...` and `# version: ...` comment lines set the metadata.
    pub fn parse(text: &str, default_name: &str) -> Result<Self, (usize, String)> {
        let mut name = default_name.to_owned();
        let mut version = "unversioned".to_owned();
        let mut terms = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("name:") {
                    name = v.trim().to_owned();
                } else if let Some(v) = comment.strip_prefix("version:") {
                    version = v.trim().to_owned();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if line.chars().any(char::is_whitespace) {
                return Err((i + 1, format!("term {line:?} contains whitespace")));
            }
            terms.push(line.to_owned());
        }
        Self::new(terms, name, version).map_err(|e| (0, e))
    }

    pub fn from_path(path: &Path) -> Result<Self, DataFileError> {
        let text = fs::read_to_string(path).map_err(|source| DataFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&text, &stem).map_err(|(line, reason)| DataFileError::Invalid {
            path: path.to_path_buf(),
            line,
            reason,
        })
    }

    /// The stand-in honesty dictionary shipped with the crate.
    pub fn bundled() -> Self {
        let mut d = Self::parse(BUNDLED_KEYWORDS, "honesty-default").expect("bundled dictionary parses");
        d.version = "1".into();
        d
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains(token)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Dictionary terms present in `text` after preprocessing, in order of
    /// first appearance.
    pub fn matches(&self, text: &str, stoplist: &StopWordList) -> Vec<String> {
        let mut seen = HashSet::new();
        textprep::preprocess(text, stoplist)
            .into_iter()
            .filter(|t| self.contains(t) && seen.insert(t.clone()))
            .collect()
    }
}

/// Keeps reviews whose preprocessed tokens contain at least one dictionary
/// term (whole-token match). Order is preserved.
pub fn keyword_filter(
    corpus: &Corpus,
    dict: &KeywordDictionary,
    stoplist: &StopWordList,
) -> Result<Corpus, CorpusError> {
    if dict.is_empty() {
        return Err(CorpusError::EmptyDictionary);
    }
    let reviews = corpus
        .reviews
        .iter()
        .filter(|r| {
            textprep::preprocess(&r.text, stoplist)
                .iter()
                .any(|t| dict.contains(t))
        })
        .cloned()
        .collect();
    Ok(Corpus { reviews })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_reviews: usize,
    pub n_apps: usize,
    pub n_categories: usize,
    pub n_keyword_matched: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_violations: Option<usize>,
}

/// Counts reviews, distinct apps and categories. Keyword matches are counted
/// when a dictionary is given; violations when labels are given (only
/// labels whose id is in the corpus count).
pub fn stats(
    corpus: &Corpus,
    filter: Option<(&KeywordDictionary, &StopWordList)>,
    labels: Option<&[LabeledExample]>,
) -> CorpusStats {
    let apps: HashSet<&str> = corpus.reviews.iter().map(|r| r.app_id.as_str()).collect();
    let categories: HashSet<&str> = corpus
        .reviews
        .iter()
        .map(|r| r.app_category.as_str())
        .filter(|c| !c.is_empty())
        .collect();
    let n_keyword_matched = match filter {
        Some((dict, stoplist)) if !dict.is_empty() => corpus
            .reviews
            .iter()
            .filter(|r| {
                textprep::preprocess(&r.text, stoplist)
                    .iter()
                    .any(|t| dict.contains(t))
            })
            .count(),
        _ => 0,
    };
    let n_violations = labels.map(|ls| {
        let ids: HashSet<&str> = corpus.reviews.iter().map(|r| r.id.as_str()).collect();
        ls.iter()
            .filter(|l| l.is_violation() && ids.contains(l.review.id.as_str()))
            .map(|l| l.review.id.as_str())
            .collect::<HashSet<_>>()
            .len()
    });
    CorpusStats {
        n_reviews: corpus.len(),
        n_apps: apps.len(),
        n_categories: categories.len(),
        n_keyword_matched,
        n_violations,
    }
}

/// All violations plus an equal-size seeded sample (without replacement)
/// of the non-violation pool. Violations come first, then the sampled
/// non-violations in pool order.
pub fn build_balanced_dataset(
    violations: &[LabeledExample],
    non_violation_pool: &[LabeledExample],
    seed: u64,
) -> Result<Vec<LabeledExample>, CorpusError> {
    if let Some(bad) = violations.iter().find(|e| !e.is_violation()) {
        return Err(CorpusError::Mislabeled {
            id: bad.review.id.clone(),
            expected: "violation",
            found: "non-violation",
        });
    }
    if let Some(bad) = non_violation_pool.iter().find(|e| e.is_violation()) {
        return Err(CorpusError::Mislabeled {
            id: bad.review.id.clone(),
            expected: "non-violation",
            found: "violation",
        });
    }
    if non_violation_pool.len() < violations.len() {
        return Err(CorpusError::PoolTooSmall {
            required: violations.len(),
            available: non_violation_pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, non_violation_pool.len(), violations.len()).into_vec();
    picked.sort_unstable();
    let mut out = violations.to_vec();
    out.extend(picked.into_iter().map(|i| non_violation_pool[i].clone()));
    Ok(out)
}

/// Splits labeled examples by id into a lookup table.
pub fn label_index(examples: &[LabeledExample]) -> HashMap<&str, &LabeledExample> {
    examples.iter().map(|e| (e.review.id.as_str(), e)).collect()
}
