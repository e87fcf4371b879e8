//! Experiment reports: rows of estimates, derived quantities and pass flags,
//! persisted as one JSON document and one flat CSV file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One estimate at one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub eps: f64,
    pub quantity: String,
    pub estimate: f64,
    pub se: f64,
    pub reference: Option<f64>,
    pub n_paths: usize,
    /// Simulated path steps spent on this row.
    pub work_units: u64,
    pub pass: Option<bool>,
}

/// Result of one experiment on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario_id: String,
    pub experiment: String,
    pub seed: u64,
    /// Fully resolved configuration the experiment ran with.
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
    pub derived: BTreeMap<String, f64>,
    /// Pass flags keyed by acceptance criterion.
    pub flags: BTreeMap<String, bool>,
    pub notes: Vec<String>,
    pub work_units: u64,
}

impl ExperimentReport {
    pub fn new(scenario_id: &str, experiment: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            experiment: experiment.to_string(),
            seed,
            config,
            rows: Vec::new(),
            derived: BTreeMap::new(),
            flags: BTreeMap::new(),
            notes: Vec::new(),
            work_units: 0,
        }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.work_units += row.work_units;
        self.rows.push(row);
    }

    /// Sorts rows by `ε` descending, keeping insertion order within an `ε`.
    pub fn sort_rows(&mut self) {
        self.rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    }

    pub fn all_pass(&self) -> bool {
        self.flags.values().all(|&v| v)
    }

    /// Checks finiteness, non-negative standard errors and row order.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if !(r.se >= 0.0)
                || !r.estimate.is_finite()
                || r.reference.is_some_and(|v| !v.is_finite())
            {
                return Err(Error::InvalidReport(format!(
                    "row {} at eps {} is not finite",
                    r.quantity, r.eps
                )));
            }
        }
        if self.rows.windows(2).any(|w| w[0].eps < w[1].eps) {
            return Err(Error::InvalidReport(
                "rows are not sorted by eps descending".into(),
            ));
        }
        if let Some((k, _)) = self.derived.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidReport(format!(
                "derived quantity {k} is not finite"
            )));
        }
        Ok(())
    }

    /// `<scenario_id>_<experiment>_<seed>`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.scenario_id, self.experiment, self.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario_id,eps,quantity,estimate,se,reference,pass\n");
        for r in &self.rows {
            let reference = r.reference.map(|v| v.to_string()).unwrap_or_default();
            let pass = r.pass.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.scenario_id, r.eps, r.quantity, r.estimate, r.se, reference, pass
            );
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        self.validate()?;
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{}.json", self.file_stem()));
        let csv = dir.join(format!("{}.csv", self.file_stem()));
        std::fs::write(&json, self.to_json()?)?;
        std::fs::write(&csv, self.to_csv())?;
        Ok((json, csv))
    }
}
