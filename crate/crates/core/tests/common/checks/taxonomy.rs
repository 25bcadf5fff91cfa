//! Frequency reporting over a labeled file shaped like the published
//! category table.

use std::fs::File;
use std::io::BufReader;

use crate::common::{data_path, PUBLISHED_TAXONOMY};
use hvd_core::taxonomy::{frequency_report, read_assignments, CategoryAssignment, PercentRounding};

pub fn category_table() -> Vec<CategoryAssignment> {
    read_assignments(BufReader::new(File::open(data_path("category_table_assignments.jsonl")).unwrap())).unwrap()
}

pub fn category_table_file_reproduces_published_counts_and_percentages() {
    let report = frequency_report(&category_table(), None, PercentRounding::default());
    assert_eq!(report.total_reviews, 401);
    for (code, count, shown) in PUBLISHED_TAXONOMY {
        let row = report.row(code.parse().unwrap());
        assert_eq!((row.count, row.percent_display.as_str()), (count, shown), "{code}");
    }
}
