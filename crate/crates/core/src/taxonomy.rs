//! The ten honesty-violation categories used for manual multi-label coding,
//! assignment validation and frequency reporting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const CATALOG_JSON: &str = include_str!("../data/categories.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCategory {
    UnfairCancellationRefund,
    FalseAdvertisement,
    DelusiveSubscription,
    CheatingSystem,
    InaccurateInformation,
    UnfairFees,
    NoService,
    ReviewDeletion,
    Impersonation,
    FraudulentLooking,
}

impl ViolationCategory {
    pub const ALL: [ViolationCategory; 10] = [
        ViolationCategory::UnfairCancellationRefund,
        ViolationCategory::FalseAdvertisement,
        ViolationCategory::DelusiveSubscription,
        ViolationCategory::CheatingSystem,
        ViolationCategory::InaccurateInformation,
        ViolationCategory::UnfairFees,
        ViolationCategory::NoService,
        ViolationCategory::ReviewDeletion,
        ViolationCategory::Impersonation,
        ViolationCategory::FraudulentLooking,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ViolationCategory::UnfairCancellationRefund => "UNFAIR_CANCELLATION_REFUND",
            ViolationCategory::FalseAdvertisement => "FALSE_ADVERTISEMENT",
            ViolationCategory::DelusiveSubscription => "DELUSIVE_SUBSCRIPTION",
            ViolationCategory::CheatingSystem => "CHEATING_SYSTEM",
            ViolationCategory::InaccurateInformation => "INACCURATE_INFORMATION",
            ViolationCategory::UnfairFees => "UNFAIR_FEES",
            ViolationCategory::NoService => "NO_SERVICE",
            ViolationCategory::ReviewDeletion => "REVIEW_DELETION",
            ViolationCategory::Impersonation => "IMPERSONATION",
            ViolationCategory::FraudulentLooking => "FRAUDULENT_LOOKING",
        }
    }

    pub fn info(self) -> &'static CategoryInfo {
        catalog()
            .iter()
            .find(|c| c.code == self)
            .expect("catalog covers every category")
    }

    pub fn display_name(self) -> &'static str {
        &self.info().display_name
    }
}

impl fmt::Display for ViolationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ViolationCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViolationCategory::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub code: ViolationCategory,
    pub display_name: String,
    pub definition: String,
}

/// Category metadata (display names, tooltip definitions) in table order.
pub fn catalog() -> &'static [CategoryInfo] {
    static CATALOG: OnceLock<Vec<CategoryInfo>> = OnceLock::new();
    CATALOG.get_or_init(|| serde_json::from_str(CATALOG_JSON).expect("bundled categories.json is valid"))
}

/// One annotator's category coding of one review, as stored in the
/// assignment JSONL. Codes are kept as strings so unknown codes can be
/// reported instead of failing the parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub review_id: String,
    pub categories: Vec<String>,
    pub annotator: String,
    #[serde(default)]
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl CategoryAssignment {
    pub fn new(review_id: &str, categories: &[ViolationCategory], annotator: &str, round: u32) -> Self {
        CategoryAssignment {
            review_id: review_id.to_owned(),
            categories: categories.iter().map(|c| c.code().to_owned()).collect(),
            annotator: annotator.to_owned(),
            round,
            timestamp: None,
        }
    }

    /// Known categories in this assignment; unknown codes are skipped.
    pub fn known_categories(&self) -> BTreeSet<ViolationCategory> {
        self.categories.iter().filter_map(|c| c.parse().ok()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    UnknownReview,
    NotAViolation,
    UnknownCategory { code: String },
    EmptyCategories,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnknownReview => f.write_str("unknown review"),
            Finding::NotAViolation => f.write_str("not a violation"),
            Finding::UnknownCategory { code } => write!(f, "unknown category {code:?}"),
            Finding::EmptyCategories => f.write_str("empty category set"),
        }
    }
}

/// Checks an assignment against the violation flags of labeled reviews
/// (`review id -> is violation`). An empty result means the assignment is
/// well formed.
pub fn validate_assignment(assignment: &CategoryAssignment, labels: &HashMap<String, bool>) -> Vec<Finding> {
    let mut findings = Vec::new();
    match labels.get(&assignment.review_id) {
        None => findings.push(Finding::UnknownReview),
        Some(false) => findings.push(Finding::NotAViolation),
        Some(true) => {}
    }
    if assignment.categories.is_empty() {
        findings.push(Finding::EmptyCategories);
    }
    for code in &assignment.categories {
        if code.parse::<ViolationCategory>().is_err() {
            findings.push(Finding::UnknownCategory { code: code.clone() });
        }
    }
    findings
}

/// How percentages are rendered. Counts are always exact; rounding only
/// affects the display string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PercentRounding {
    Integer,
    Decimals { places: u32 },
    /// Whole percent, except values below `decimal_below` get one decimal.
    Mixed { decimal_below: f64 },
}

impl Default for PercentRounding {
    fn default() -> Self {
        PercentRounding::Mixed { decimal_below: 2.0 }
    }
}

impl PercentRounding {
    pub fn format(self, percent: f64) -> String {
        match self {
            PercentRounding::Integer => format!("{percent:.0}%"),
            PercentRounding::Decimals { places } => format!("{percent:.*}%", places as usize),
            PercentRounding::Mixed { decimal_below } if percent < decimal_below && percent > 0.0 => {
                format!("{percent:.1}%")
            }
            PercentRounding::Mixed { .. } => format!("{percent:.0}%"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFrequency {
    pub category: ViolationCategory,
    pub display_name: String,
    pub count: usize,
    pub percent: f64,
    pub percent_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    /// Denominator: distinct violation reviews.
    pub total_reviews: usize,
    pub rows: Vec<CategoryFrequency>,
}

impl FrequencyReport {
    pub fn row(&self, category: ViolationCategory) -> &CategoryFrequency {
        self.rows
            .iter()
            .find(|r| r.category == category)
            .expect("report has a row per category")
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("{:<42} f (of {})\n", "Honesty violation", self.total_reviews);
        for r in &self.rows {
            out.push_str(&format!("{:<42} {} ({})\n", r.display_name, r.count, r.percent_display));
        }
        out
    }
}

/// Per-category count of distinct reviews and its percentage.
///
/// Assignments are deduplicated last-write-wins per (review, annotator); a
/// review carries a category if any annotator's current assignment has it.
/// The denominator is `total_violations` when given, otherwise the number
/// of distinct reviews among the assignments.
pub fn frequency_report(
    assignments: &[CategoryAssignment],
    total_violations: Option<usize>,
    rounding: PercentRounding,
) -> FrequencyReport {
    let mut latest: HashMap<(&str, &str), &CategoryAssignment> = HashMap::new();
    for a in assignments {
        latest.insert((a.review_id.as_str(), a.annotator.as_str()), a);
    }
    let mut carriers: HashMap<ViolationCategory, HashSet<&str>> = HashMap::new();
    let mut reviews: HashSet<&str> = HashSet::new();
    for a in latest.values() {
        reviews.insert(a.review_id.as_str());
        for c in a.known_categories() {
            carriers.entry(c).or_default().insert(a.review_id.as_str());
        }
    }
    let total = total_violations.unwrap_or(reviews.len());
    let rows = ViolationCategory::ALL
        .into_iter()
        .map(|c| {
            let count = carriers.get(&c).map_or(0, HashSet::len);
            let percent = if total == 0 {
                0.0
            } else {
                100.0 * count as f64 / total as f64
            };
            CategoryFrequency {
                category: c,
                display_name: c.display_name().to_owned(),
                count,
                percent,
                percent_display: rounding.format(percent),
            }
        })
        .collect();
    FrequencyReport {
        total_reviews: total,
        rows,
    }
}

pub fn read_assignments<R: BufRead>(source: R) -> Result<Vec<CategoryAssignment>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_assignments<W: Write>(assignments: &[CategoryAssignment], mut out: W) -> io::Result<()> {
    for a in assignments {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
