//! Recognition and enumeration tables in the two-row-header layout.

use std::fmt::Write as _;
use std::path::Path;

use super::evaluate::EvaluationResult;
use crate::error::Result;
use crate::fsio;
use crate::species::Species;

pub const RECOGNITION_COLUMNS: [&str; 3] = ["Precision", "Recall", "F1"];
pub const ENUMERATION_COLUMNS: [&str; 3] = ["Exact", "Within-1", "MAE"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportTables {
    pub table2: String,
    pub table3: String,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn header(sub: [&str; 3]) -> String {
    let mut top = String::from("Model,Prompt");
    let mut bottom = String::from(",");
    for sp in Species::ALL {
        let _ = write!(top, ",{},,", sp.capitalized());
        for c in sub {
            let _ = write!(bottom, ",{c}");
        }
    }
    format!("{top}\n{bottom}\n")
}

/// Two CSV tables with one row per (model, prompt). Undefined MAE (every
/// answer for that species unparseable) prints as `n/a`; species absent from
/// the test set print zeros.
pub fn format_report(results: &[EvaluationResult]) -> ReportTables {
    let mut table2 = header(RECOGNITION_COLUMNS);
    let mut table3 = header(ENUMERATION_COLUMNS);
    for r in results {
        let _ = write!(table2, "{},{}", r.model, r.mode.short());
        let _ = write!(table3, "{},{}", r.model, r.mode.short());
        for sp in Species::ALL {
            let m = r.recognition.per_species.get(&sp).copied().unwrap_or_default();
            let _ = write!(table2, ",{},{},{}", fmt3(m.precision), fmt3(m.recall), fmt3(m.f1));
            let c = r.enumeration.per_species.get(&sp).copied().unwrap_or_default();
            let mae = match (c.n, c.mae) {
                (0, _) => fmt3(0.0),
                (_, Some(v)) => fmt3(v),
                (_, None) => "n/a".to_string(),
            };
            let _ = write!(table3, ",{},{},{mae}", fmt3(c.exact_accuracy), fmt3(c.within1_accuracy));
        }
        table2.push('\n');
        table3.push('\n');
    }
    ReportTables { table2, table3 }
}

/// `metrics.json`, `table2.csv` and `table3.csv` under `dir`.
pub fn write_report(dir: &Path, results: &[EvaluationResult]) -> Result<ReportTables> {
    let tables = format_report(results);
    fsio::write_atomic(&dir.join("table2.csv"), tables.table2.as_bytes())?;
    fsio::write_atomic(&dir.join("table3.csv"), tables.table3.as_bytes())?;
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "model": r.model,
                "mode": r.mode,
                "n_items": r.n_items,
                "backend_failures": r.backend_failures,
                "macro_f1": r.macro_f1(),
                "macro_within1": r.macro_within1(),
                "recognition": r.recognition,
                "enumeration": r.enumeration,
            })
        })
        .collect();
    fsio::write_json_atomic(&dir.join("metrics.json"), &summary)?;
    Ok(tables)
}
