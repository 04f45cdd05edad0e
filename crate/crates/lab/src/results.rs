//! Per-episode metrics and their `results.csv` form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::LabError;

pub const RESULTS_HEADER: [&str; 10] = [
    "run_id",
    "episode",
    "controller",
    "seed",
    "att_secs",
    "throughput",
    "mean_reward",
    "l_recon",
    "l_clip",
    "wall_secs",
];

/// One evaluated episode. Baselines have no losses, so those cells are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub episode: usize,
    pub controller: String,
    pub seed: u64,
    pub att_secs: f64,
    pub throughput: usize,
    pub mean_reward: f64,
    pub l_recon: Option<f64>,
    pub l_clip: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row. Within a run, episodes must strictly increase.
    pub fn push(&mut self, row: ResultRow) -> Result<(), LabError> {
        if !(row.att_secs.is_finite() && row.att_secs > 0.0) {
            return Err(LabError::Config(format!("run `{}`: ATT must be positive, got {}", row.run_id, row.att_secs)));
        }
        if row.run_id.is_empty() || row.run_id.contains(['\n', '\r']) {
            return Err(LabError::Config(format!("invalid run id {:?}", row.run_id)));
        }
        let last = self.rows.iter().rev().find(|r| r.run_id == row.run_id);
        if let Some(prev) = last {
            if row.episode <= prev.episode {
                return Err(LabError::Config(format!(
                    "run `{}`: episode {} after episode {}",
                    row.run_id, row.episode, prev.episode
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: ResultsTable) -> Result<(), LabError> {
        other.rows.into_iter().try_for_each(|r| self.push(r))
    }

    /// Distinct run ids in first-seen order.
    pub fn run_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.run_id.as_str()) {
                ids.push(&r.run_id);
            }
        }
        ids
    }

    pub fn run<'a>(&'a self, run_id: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.run_id == run_id)
    }

    /// Mean ATT over the last `k` rows of a run (all rows when it has fewer).
    pub fn tail_mean_att(&self, run_id: &str, k: usize) -> Option<f64> {
        let rows: Vec<&ResultRow> = self.run(run_id).collect();
        let tail = &rows[rows.len().saturating_sub(k.max(1))..];
        (!tail.is_empty()).then(|| tail.iter().map(|r| r.att_secs).sum::<f64>() / tail.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(RESULTS_HEADER).expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| e.to_string())?;
        if header.iter().ne(RESULTS_HEADER) {
            return Err(format!(
                "expected header {}, got {}",
                RESULTS_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ));
        }
        let mut table = Self::new();
        for rec in rd.deserialize::<ResultRow>() {
            let row = rec.map_err(|e| e.to_string())?;
            table.push(row).map_err(|e| e.to_string())?;
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        std::fs::write(path, self.to_csv()).map_err(|e| LabError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_csv(&text).map_err(|message| LabError::Results { path: path.into(), message })
    }
}
