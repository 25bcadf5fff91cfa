//! Evaluation reports and their text, CSV and JSON renderings.
//!
//! CSV columns, in order: `model, accuracy, precision, recall, f1, mcc,
//! tn, tp, fp, fn, improvement_precision, improvement_recall,
//! improvement_f1`. Confusion entries are fractions of the held-out total;
//! improvement cells are empty without a baseline and `inf` when the
//! baseline component is zero.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{improvement, Baseline, ConfusionMatrix, CvResult, EvalError, FoldResult, Improvement, Metrics};
use crate::models::ModelSpec;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    /// Column label, e.g. `SVM` or `RF`.
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    pub metrics: Metrics,
    /// Pooled held-out counts.
    pub confusion: ConfusionMatrix,
    pub normalized: ConfusionMatrix,
    #[serde(default)]
    pub folds: Vec<FoldResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement: Option<Improvement>,
}

impl ModelEvaluation {
    pub fn from_cv(model: impl Into<String>, spec: Option<ModelSpec>, cv: &CvResult) -> Self {
        ModelEvaluation {
            model: model.into(),
            spec,
            metrics: cv.metrics.clone(),
            confusion: cv.confusion,
            normalized: cv.confusion.normalized(),
            folds: cv.folds.clone(),
            improvement: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub n_examples: usize,
    pub n_violations: usize,
    pub models: Vec<ModelEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
}

impl EvalReport {
    pub fn new(k: usize, seed: u64, stratified: bool, n_examples: usize, n_violations: usize) -> Self {
        EvalReport {
            format_version: REPORT_FORMAT_VERSION,
            k,
            seed,
            stratified,
            n_examples,
            n_violations,
            models: Vec::new(),
            baseline: None,
        }
    }

    pub fn push(&mut self, mut eval: ModelEvaluation) {
        if let Some(b) = &self.baseline {
            eval.improvement = Some(improvement(eval.metrics.precision, eval.metrics.recall, eval.metrics.f1, b));
        }
        self.models.push(eval);
    }

    /// Sets the baseline and recomputes every model's improvement ratios.
    pub fn set_baseline(&mut self, baseline: Baseline) {
        for m in &mut self.models {
            m.improvement = Some(improvement(m.metrics.precision, m.metrics.recall, m.metrics.f1, &baseline));
        }
        self.baseline = Some(baseline);
    }

    /// Highest F1, then highest MCC, then first listed.
    pub fn best(&self) -> Option<&ModelEvaluation> {
        self.models.iter().reduce(|best, m| {
            let better = m.metrics.f1 > best.metrics.f1 || (m.metrics.f1 == best.metrics.f1 && m.metrics.mcc > best.metrics.mcc);
            if better {
                m
            } else {
                best
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(EvalError::UnsupportedFormat(s.to_string())),
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

const LABEL: usize = 16;
const CELL: usize = 10;

fn row(out: &mut String, label: &str, cells: impl IntoIterator<Item = String>) {
    let mut line = format!("{label:<LABEL$}");
    for c in cells {
        let _ = write!(line, "{c:>CELL$}");
    }
    out.push_str(line.trim_end());
    out.push('\n');
}

fn ratio_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}x")
    } else {
        "inf".to_string()
    }
}

fn render_text(r: &EvalReport) -> String {
    let mut out = String::new();
    let names = || r.models.iter().map(|m| m.model.clone());
    let col = |f: &dyn Fn(&ModelEvaluation) -> f64| -> Vec<String> { r.models.iter().map(|m| format!("{:.3}", f(m))).collect() };

    out.push_str("Confusion matrix (fraction of held-out reviews) and MCC\n");
    row(&mut out, "", names());
    row(&mut out, "True negative", col(&|m| m.normalized.tn));
    row(&mut out, "True positive", col(&|m| m.normalized.tp));
    row(&mut out, "False positive", col(&|m| m.normalized.fp));
    row(&mut out, "False negative", col(&|m| m.normalized.fn_));
    row(&mut out, "MCC", col(&|m| m.metrics.mcc));

    out.push_str("\nClassification metrics\n");
    row(&mut out, "", names());
    row(&mut out, "Accuracy", col(&|m| m.metrics.accuracy));
    row(&mut out, "Precision", col(&|m| m.metrics.precision));
    row(&mut out, "Recall", col(&|m| m.metrics.recall));
    row(&mut out, "F1 score", col(&|m| m.metrics.f1));

    if let (Some(b), Some(best)) = (&r.baseline, r.best()) {
        let _ = writeln!(out, "\nBaseline comparison (best model: {})", best.model);
        row(&mut out, "", ["Precision", "Recall", "F1"].map(String::from));
        let m = &best.metrics;
        row(&mut out, &best.model, [m.precision, m.recall, m.f1].map(|v| format!("{v:.3}")));
        row(&mut out, "Random", [b.precision, b.recall, b.f1].map(|v| format!("{v:.4}")));
        if let Some(imp) = &best.improvement {
            row(&mut out, "Improvement", [imp.precision, imp.recall, imp.f1].map(ratio_cell));
        }
    }
    out
}

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "inf".to_string()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "model",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "mcc",
    "tn",
    "tp",
    "fp",
    "fn",
    "improvement_precision",
    "improvement_recall",
    "improvement_f1",
];

fn render_csv(r: &EvalReport) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for m in &r.models {
        let mut cells = vec![csv_field(&m.model)];
        let x = &m.metrics;
        let n = &m.normalized;
        cells.extend([x.accuracy, x.precision, x.recall, x.f1, x.mcc, n.tn, n.tp, n.fp, n.fn_].map(csv_num));
        match &m.improvement {
            Some(i) => cells.extend([i.precision, i.recall, i.f1].map(csv_num)),
            None => cells.extend(std::iter::repeat_n(String::new(), 3)),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let mut r = EvalReport::new(10, 1, true, 100, 50);
        for (name, cm) in [
            ("A", ConfusionMatrix::new(40.0, 45.0, 5.0, 10.0)),
            ("B, quoted", ConfusionMatrix::new(45.0, 40.0, 10.0, 5.0)),
        ] {
            r.push(ModelEvaluation {
                model: name.into(),
                spec: None,
                metrics: super::super::metrics_from_confusion(&cm).unwrap(),
                confusion: cm,
                normalized: cm.normalized(),
                folds: vec![],
                improvement: None,
            });
        }
        r.set_baseline(super::super::baseline_random(0, 10).unwrap());
        r
    }

    #[test]
    fn json_round_trips() {
        let r = sample();
        let json = render_report(&r, ReportFormat::Json);
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_has_one_row_per_model() {
        let csv = render_report(&sample(), ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[1].starts_with("A,0.85,"));
        assert!(lines[2].starts_with("\"B, quoted\","));
        assert!(lines[1].ends_with(",inf,1.6,inf"));
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!(matches!("xml".parse::<ReportFormat>(), Err(EvalError::UnsupportedFormat(_))));
        assert_eq!("JSON".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
    }
}
