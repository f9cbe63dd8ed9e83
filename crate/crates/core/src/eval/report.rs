//! Result tables: datasets as rows, models as columns, macro-F1 cells with
//! confidence intervals, plus a long-format per-class breakdown.
//!
//! Emission is a pure function of the report value with fixed number
//! formatting, so regenerating a report from identical inputs produces
//! identical bytes.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BootstrapReport, Ci};

/// One model's scores on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellScore {
    pub macro_f1: f64,
    pub macro_ci: Option<Ci>,
    /// label name -> (f1, ci)
    pub per_class: IndexMap<String, (f64, Option<Ci>)>,
}

impl CellScore {
    pub fn from_bootstrap(report: &BootstrapReport) -> Self {
        let per_class = report
            .point
            .per_class
            .iter()
            .map(|(name, f1)| (name.clone(), (*f1, report.ci.get(name).copied())))
            .collect();
        CellScore {
            macro_f1: report.point.macro_f1,
            macro_ci: report.ci.get("macro_f1").copied(),
            per_class,
        }
    }
}

/// A dataset-by-model grid of evaluation results.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalGrid {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    /// (dataset, model) -> score; missing cells render as "-".
    pub cells: IndexMap<String, CellScore>,
}

fn cell_key(dataset: &str, model: &str) -> String {
    format!("{dataset}\u{1f}{model}")
}

impl EvalGrid {
    pub fn insert(&mut self, dataset: &str, model: &str, score: CellScore) {
        if !self.datasets.iter().any(|d| d == dataset) {
            self.datasets.push(dataset.to_string());
        }
        if !self.models.iter().any(|m| m == model) {
            self.models.push(model.to_string());
        }
        self.cells.insert(cell_key(dataset, model), score);
    }

    pub fn get(&self, dataset: &str, model: &str) -> Option<&CellScore> {
        self.cells.get(&cell_key(dataset, model))
    }

    fn format_cell(score: &CellScore) -> String {
        match score.macro_ci {
            Some(ci) => format!("{:.2} [{:.2}, {:.2}]", score.macro_f1, ci.lo, ci.hi),
            None => format!("{:.2}", score.macro_f1),
        }
    }

    /// Macro-F1 table as CSV (datasets as rows).
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["dataset".to_string()];
        header.extend(self.models.iter().cloned());
        writer
            .write_record(&header)
            .map_err(|e| Error::Eval(format!("csv write: {e}")))?;
        for dataset in &self.datasets {
            let mut row = vec![dataset.clone()];
            for model in &self.models {
                row.push(self.get(dataset, model).map(Self::format_cell).unwrap_or_else(|| "-".into()));
            }
            writer
                .write_record(&row)
                .map_err(|e| Error::Eval(format!("csv write: {e}")))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Eval(format!("csv finish: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Eval(format!("csv utf8: {e}")))
    }

    /// Macro-F1 table as a Markdown pipe table.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| dataset |");
        for m in &self.models {
            out.push_str(&format!(" {m} |"));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &self.models {
            out.push_str("---|");
        }
        out.push('\n');
        for dataset in &self.datasets {
            out.push_str(&format!("| {dataset} |"));
            for model in &self.models {
                let cell = self
                    .get(dataset, model)
                    .map(Self::format_cell)
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!(" {cell} |"));
            }
            out.push('\n');
        }
        out
    }

    /// Long-format per-class CSV: dataset, model, label, f1, ci_lo, ci_hi.
    pub fn per_class_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["dataset", "model", "label", "f1", "ci_lo", "ci_hi"])
            .map_err(|e| Error::Eval(format!("csv write: {e}")))?;
        for dataset in &self.datasets {
            for model in &self.models {
                let Some(score) = self.get(dataset, model) else { continue };
                for (label, (f1, ci)) in &score.per_class {
                    let (lo, hi) = match ci {
                        Some(ci) => (format!("{:.2}", ci.lo), format!("{:.2}", ci.hi)),
                        None => ("-".into(), "-".into()),
                    };
                    writer
                        .write_record([
                            dataset.as_str(),
                            model.as_str(),
                            label.as_str(),
                            &format!("{f1:.2}"),
                            &lo,
                            &hi,
                        ])
                        .map_err(|e| Error::Eval(format!("csv write: {e}")))?;
                }
            }
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Eval(format!("csv finish: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Eval(format!("csv utf8: {e}")))
    }
}

/// Render average ranks (sorted best first) as CSV.
pub fn ranks_to_csv(ranks: &IndexMap<String, f64>) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["model", "average_rank"])
        .map_err(|e| Error::Eval(format!("csv write: {e}")))?;
    let mut rows: Vec<(&String, &f64)> = ranks.iter().collect();
    rows.sort_by(|a, b| a.1.partial_cmp(b.1).expect("finite ranks").then(a.0.cmp(b.0)));
    for (model, rank) in rows {
        writer
            .write_record([model.as_str(), &format!("{rank:.2}")])
            .map_err(|e| Error::Eval(format!("csv write: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Eval(format!("csv finish: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Eval(format!("csv utf8: {e}")))
}
