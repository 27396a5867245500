//! Component accuracy on every degraded dataset, threshold labeling, and
//! the two-factor accuracy heatmap.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::component::{evaluate_accuracy, InferenceProvider};
use crate::degrade::{Assignment, DegradationPlan, DegradedDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub dataset_id: String,
    pub assignment: Assignment,
    pub correct: usize,
    pub count: usize,
    pub accuracy: f64,
}

impl PerformanceRecord {
    pub fn new(dataset_id: String, assignment: Assignment, correct: usize, count: usize) -> Self {
        let accuracy = if count == 0 { 0.0 } else { correct as f64 / count as f64 };
        Self { dataset_id, assignment, correct, count, accuracy }
    }
}

/// Strictly decreasing accuracy thresholds (fractions) and the names of
/// the resulting levels, safest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub thresholds: Vec<f64>,
    pub level_names: Vec<String>,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self {
            thresholds: vec![0.70, 0.40],
            level_names: vec!["normal".into(), "limited".into(), "stop".into()],
        }
    }
}

impl ThresholdSpec {
    pub fn new(thresholds: Vec<f64>, level_names: Vec<String>) -> Result<Self> {
        let spec = Self { thresholds, level_names };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("threshold {t} must lie strictly between 0 and 1")));
        }
        if self.thresholds.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config("thresholds must be strictly decreasing".into()));
        }
        if self.level_names.len() != self.thresholds.len() + 1 {
            return Err(Error::Config(format!(
                "{} thresholds need {} level names, got {}",
                self.thresholds.len(),
                self.thresholds.len() + 1,
                self.level_names.len()
            )));
        }
        Ok(())
    }

    /// Number of levels, `m`.
    pub fn levels(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Level for an accuracy: `m` minus the number of thresholds it falls
    /// strictly below. An accuracy equal to a threshold keeps the safer level.
    pub fn label(&self, accuracy: f64) -> SafetyLabel {
        let crossed = self.thresholds.iter().filter(|&&t| accuracy < t).count();
        SafetyLabel(self.levels() - crossed)
    }

    /// Display name of a level (level `m` is the first name).
    pub fn level_name(&self, level: SafetyLabel) -> &str {
        &self.level_names[self.levels() - level.0]
    }
}

/// Ordinal safety level in `[1, m]`; 1 is the most hazardous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SafetyLabel(pub usize);

impl SafetyLabel {
    pub fn level(self) -> usize {
        self.0
    }

    /// Zero-based class index used by the monitor classifier.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        SafetyLabel(index + 1)
    }
}

pub fn label_record(record: &PerformanceRecord, spec: &ThresholdSpec) -> SafetyLabel {
    spec.label(record.accuracy)
}

/// Accuracy of the provider on each dataset, in input order.
pub fn assess_all(provider: &mut dyn InferenceProvider, degraded: &[DegradedDataset]) -> Result<Vec<PerformanceRecord>> {
    degraded
        .iter()
        .map(|d| {
            let acc = evaluate_accuracy(provider, &d.dataset).map_err(|e| e.in_dataset(d.id()))?;
            Ok(PerformanceRecord::new(d.id().to_string(), d.assignment.clone(), acc.correct, acc.count))
        })
        .collect()
}

/// Per-level dataset counts, index 0 = level 1.
pub fn census(labels: &[SafetyLabel], levels: usize) -> Vec<usize> {
    let mut counts = vec![0; levels];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub row_factor: String,
    pub col_factor: String,
    pub row_levels: Vec<f64>,
    pub col_levels: Vec<f64>,
    /// `accuracy[i][j]` for row level `i`, column level `j`.
    pub accuracy: Vec<Vec<f64>>,
    pub labels: Vec<Vec<SafetyLabel>>,
}

/// Arranges records from a two-factor plan into a grid.
pub fn heatmap_grid(plan: &DegradationPlan, records: &[PerformanceRecord], spec: &ThresholdSpec) -> Result<Heatmap> {
    if plan.grids.len() != 2 {
        return Err(Error::Config(format!(
            "a heatmap needs exactly two factors, plan has {}; use the records CSV instead",
            plan.grids.len()
        )));
    }
    if records.len() != plan.combinations.len() {
        return Err(Error::Config(format!(
            "{} records for {} combinations",
            records.len(),
            plan.combinations.len()
        )));
    }
    let (rows, cols) = (&plan.grids[0], &plan.grids[1]);
    let (nr, nc) = (rows.levels.len(), cols.levels.len());
    let mut accuracy = vec![vec![0.0; nc]; nr];
    let mut labels = vec![vec![SafetyLabel(0); nc]; nr];
    // Plan order is row-major over (factor 1, factor 2).
    for (index, record) in records.iter().enumerate() {
        if record.dataset_id != crate::degrade::dataset_id(&plan.assignment(index)) {
            return Err(Error::Config(format!("record {} out of plan order", record.dataset_id)));
        }
        let (i, j) = (index / nc, index % nc);
        accuracy[i][j] = record.accuracy;
        labels[i][j] = spec.label(record.accuracy);
    }
    Ok(Heatmap {
        row_factor: rows.factor_name.clone(),
        col_factor: cols.factor_name.clone(),
        row_levels: rows.levels.clone(),
        col_levels: cols.levels.clone(),
        accuracy,
        labels,
    })
}

// ---------------------------------------------------------------------------
// Reports

/// `dataset_id,<factor>=eps...,correct,count,accuracy,level,level_name`
pub fn records_csv(records: &[PerformanceRecord], spec: Option<&ThresholdSpec>) -> String {
    let mut out = String::new();
    let factors: Vec<&str> = records.first().map_or(Vec::new(), |r| r.assignment.iter().map(|(f, _)| f.as_str()).collect());
    out.push_str("dataset_id");
    for f in &factors {
        let _ = write!(out, ",{f}");
    }
    out.push_str(",correct,count,accuracy");
    if spec.is_some() {
        out.push_str(",level,level_name");
    }
    out.push('\n');
    for r in records {
        out.push_str(&r.dataset_id);
        for (_, e) in &r.assignment {
            let _ = write!(out, ",{e:.4}");
        }
        let _ = write!(out, ",{},{},{:.6}", r.correct, r.count, r.accuracy);
        if let Some(spec) = spec {
            let level = spec.label(r.accuracy);
            let _ = write!(out, ",{},{}", level.0, spec.level_name(level));
        }
        out.push('\n');
    }
    out
}

impl Heatmap {
    pub fn cell_count(&self) -> usize {
        self.accuracy.iter().map(Vec::len).sum()
    }

    /// Rows are the first factor, columns the second.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\\{}", self.row_factor, self.col_factor);
        for c in &self.col_levels {
            let _ = write!(out, ",{c:.4}");
        }
        out.push('\n');
        for (r, row) in self.row_levels.iter().zip(&self.accuracy) {
            let _ = write!(out, "{r:.4}");
            for a in row {
                let _ = write!(out, ",{a:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Cells shaded by accuracy; borders green, amber or red by level when
    /// there are three levels, otherwise interpolated.
    pub fn to_svg(&self, spec: &ThresholdSpec) -> String {
        const CELL: usize = 64;
        const MARGIN: usize = 80;
        let nr = self.row_levels.len();
        let nc = self.col_levels.len();
        let width = MARGIN + nc * CELL + 20;
        let height = MARGIN + nr * CELL + 20;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (i, row) in self.accuracy.iter().enumerate() {
            for (j, &acc) in row.iter().enumerate() {
                let x = MARGIN + j * CELL;
                let y = MARGIN + i * CELL;
                let shade = (255.0 * (1.0 - acc)).round() as u8;
                let stroke = level_color(self.labels[i][j], spec.levels());
                let text = if acc < 0.5 { "black" } else { "white" };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="{stroke}" stroke-width="4"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{text}">{:.1}%</text>"#,
                    x + CELL / 2,
                    y + CELL / 2 + 4,
                    acc * 100.0
                );
            }
        }
        for (j, c) in self.col_levels.iter().enumerate() {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{c:.2}</text>"#, MARGIN + j * CELL + CELL / 2, MARGIN - 8);
        }
        for (i, r) in self.row_levels.iter().enumerate() {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{r:.2}</text>"#, MARGIN - 8, MARGIN + i * CELL + CELL / 2 + 4);
        }
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{} epsilon</text>"#, MARGIN + nc * CELL / 2, self.col_factor);
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{} epsilon</text>"#,
            MARGIN + nr * CELL / 2,
            MARGIN + nr * CELL / 2,
            self.row_factor
        );
        s.push_str("</svg>\n");
        s
    }
}

fn level_color(level: SafetyLabel, levels: usize) -> String {
    if levels == 3 {
        return match level.0 {
            3 => "#2e9e44".into(),
            2 => "#f0a202".into(),
            _ => "#d62828".into(),
        };
    }
    let t = if levels <= 1 { 1.0 } else { (level.0 - 1) as f64 / (levels - 1) as f64 };
    let r = (214.0 * (1.0 - t) + 46.0 * t).round() as u8;
    let g = (40.0 * (1.0 - t) + 158.0 * t).round() as u8;
    format!("rgb({r},{g},60)")
}
