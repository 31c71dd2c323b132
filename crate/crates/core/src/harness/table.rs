//! Result tables: one row per (study, condition, seed), written as CSV and
//! as a versioned JSON document with per-condition summaries.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::pipeline::Outcome;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 14] = [
    "study",
    "condition",
    "seed",
    "conformal_rmse",
    "classical_rmse",
    "improvement",
    "mean_set_size",
    "coverage",
    "fallback_rate",
    "multimodal_rate",
    "argmax_rmse",
    "mean_interval_width",
    "conformal_orientation_error",
    "classical_orientation_error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub study: String,
    pub condition: String,
    pub seed: u64,
    pub conformal_rmse: f64,
    pub classical_rmse: f64,
    /// `classical_rmse / conformal_rmse`.
    pub improvement: f64,
    pub mean_set_size: f64,
    pub coverage: f64,
    pub fallback_rate: f64,
    pub multimodal_rate: f64,
    pub argmax_rmse: f64,
    pub mean_interval_width: f64,
    pub conformal_orientation_error: f64,
    pub classical_orientation_error: f64,
}

pub fn improvement(classical: f64, conformal: f64) -> f64 {
    classical / conformal
}

impl ResultRow {
    pub fn new(study: &str, condition: &str, seed: u64, o: &Outcome) -> Self {
        ResultRow {
            study: study.to_string(),
            condition: condition.to_string(),
            seed,
            conformal_rmse: o.conformal_rmse,
            classical_rmse: o.classical_rmse,
            improvement: improvement(o.classical_rmse, o.conformal_rmse),
            mean_set_size: o.mean_set_size,
            coverage: o.coverage,
            fallback_rate: o.fallback_rate,
            multimodal_rate: o.multimodal_rate,
            argmax_rmse: o.argmax_rmse,
            mean_interval_width: o.mean_interval_width,
            conformal_orientation_error: o.conformal_orientation_error,
            classical_orientation_error: o.classical_orientation_error,
        }
    }

    fn ratio_is_consistent(&self) -> bool {
        let r = improvement(self.classical_rmse, self.conformal_rmse);
        r.to_bits() == self.improvement.to_bits() || (r - self.improvement).abs() <= 1e-12 * r.abs()
    }
}

/// Aggregate of one condition over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub study: String,
    pub condition: String,
    pub seeds: usize,
    /// Seeds where the conformal arm has the lower RMSE.
    pub wins: usize,
    pub median_conformal_rmse: f64,
    pub median_classical_rmse: f64,
    pub median_improvement: f64,
    pub mean_set_size: f64,
    pub mean_coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    schema_version: u32,
    rows: Vec<ResultRow>,
    summary: Vec<ConditionSummary>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl ResultTable {
    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    /// Sort by study, condition label, then seed.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| (&a.study, &a.condition, a.seed).cmp(&(&b.study, &b.condition, b.seed)));
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }

    pub fn study(&self, study: &str) -> ResultTable {
        ResultTable { rows: self.rows.iter().filter(|r| r.study == study).cloned().collect() }
    }

    pub fn row(&self, study: &str, condition: &str, seed: u64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.study == study && r.condition == condition && r.seed == seed)
    }

    /// Distinct (study, condition) pairs in row order.
    pub fn conditions(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(s, c)| *s == r.study && *c == r.condition) {
                out.push((r.study.clone(), r.condition.clone()));
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn summary(&self) -> Vec<ConditionSummary> {
        self.conditions()
            .into_iter()
            .map(|(study, condition)| {
                let rows: Vec<&ResultRow> = self.rows.iter().filter(|r| r.study == study && r.condition == condition).collect();
                let col = |f: fn(&ResultRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let n = rows.len() as f64;
                ConditionSummary {
                    seeds: rows.len(),
                    wins: rows.iter().filter(|r| r.conformal_rmse < r.classical_rmse).count(),
                    median_conformal_rmse: median(&mut col(|r| r.conformal_rmse)),
                    median_classical_rmse: median(&mut col(|r| r.classical_rmse)),
                    median_improvement: median(&mut col(|r| r.improvement)),
                    mean_set_size: col(|r| r.mean_set_size).iter().sum::<f64>() / n,
                    mean_coverage: col(|r| r.coverage).iter().sum::<f64>() / n,
                    study,
                    condition,
                }
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        match self.rows.iter().find(|r| !r.ratio_is_consistent()) {
            Some(r) => Err(Error::invalid(format!("improvement of {}/{} seed {} does not match its RMSE columns", r.study, r.condition, r.seed))),
            None => Ok(()),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.check()?;
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_COLUMNS)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        if rd.headers()?.iter().ne(CSV_COLUMNS) {
            return Err(Error::invalid("unexpected CSV header"));
        }
        let rows = rd.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        let table = ResultTable { rows };
        table.check()?;
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String> {
        self.check()?;
        let doc = Document { schema_version: SCHEMA_VERSION, rows: self.rows.clone(), summary: self.summary() };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(s)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported schema version {}", doc.schema_version)));
        }
        let table = ResultTable { rows: doc.rows };
        table.check()?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(conformal: f64, classical: f64) -> Outcome {
        Outcome {
            conformal_rmse: conformal,
            classical_rmse: classical,
            argmax_rmse: 1.0,
            conformal_orientation_error: 0.1,
            classical_orientation_error: 0.2,
            mean_set_size: 3.5,
            coverage: 0.9,
            fallback_rate: 0.0,
            multimodal_rate: 0.25,
            mean_position_width: 0.4,
            mean_interval_width: 0.3,
        }
    }

    fn table() -> ResultTable {
        let mut t = ResultTable::default();
        t.push(ResultRow::new("noise", "sigma=0.10", 1, &outcome(0.5, 1.5)));
        t.push(ResultRow::new("noise", "sigma=0.00", 1, &outcome(0.25, 1.0)));
        t.push(ResultRow::new("noise", "sigma=0.00", 0, &outcome(2.0, 1.0)));
        t.sort();
        t
    }

    #[test]
    fn improvement_is_computed_from_the_rmse_columns() {
        let r = ResultRow::new("s", "c", 0, &outcome(0.5, 1.5));
        assert_eq!(r.improvement, 3.0);
    }

    #[test]
    fn csv_round_trip_keeps_header_and_rows() {
        let t = table();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(ResultTable::read_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn hand_edited_ratios_are_rejected() {
        let mut t = table();
        t.rows[0].improvement = 9.0;
        assert!(t.write_csv(Vec::new()).is_err());
        assert!(t.to_json().is_err());
    }

    #[test]
    fn rows_sort_by_condition_then_seed() {
        let t = table();
        let keys: Vec<(&str, u64)> = t.rows.iter().map(|r| (r.condition.as_str(), r.seed)).collect();
        assert_eq!(keys, vec![("sigma=0.00", 0), ("sigma=0.00", 1), ("sigma=0.10", 1)]);
    }

    #[test]
    fn summary_counts_wins_and_medians() {
        let s = table().summary();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].seeds, s[0].wins), (2, 1));
        assert_eq!(s[0].median_improvement, 0.5 * (0.5 + 4.0));
    }

    #[test]
    fn json_round_trip() {
        let t = table();
        let s = t.to_json().unwrap();
        assert!(s.contains("\"schema_version\": 1"));
        assert_eq!(ResultTable::from_json(&s).unwrap(), t);
    }

    #[test]
    fn median_of_even_and_odd_lengths() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
