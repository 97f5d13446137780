use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use fedtherm_core::federation::RoundLog;
use fedtherm_core::model::Metrics;
use fedtherm_core::transfer::TlMethod;
use serde::{Deserialize, Serialize};

use super::experiments::{histogram, ForgettingOutcome, LoadShiftOutcome};
use crate::config::Topology;
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client: String,
    pub mse: f64,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub clients: BTreeMap<String, ForgettingOutcome>,
    pub mean_improvement_pct: f64,
}

/// Results of one (scenario, seed) cell. Contains no wall-clock values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario: String,
    pub topology: Topology,
    pub tl_method: TlMethod,
    pub seed: u64,
    /// Set when the cell failed; the metric fields are then empty.
    pub error: Option<String>,
    /// Personalized test metrics per client, in kelvin².
    pub clients: Vec<ClientMetrics>,
    /// Mean of the per-client test MSEs; the scenario's headline number.
    pub mean_mse: Option<f64>,
    /// All clients' test predictions pooled into one set.
    pub pooled: Option<Metrics>,
    /// The federation's global model on the pooled test set.
    pub global_model: Option<Metrics>,
    pub rounds_completed: Option<usize>,
    pub exclusion_counts: BTreeMap<String, usize>,
    pub relevance: BTreeMap<String, f64>,
    pub forgetting: Option<ForgettingReport>,
    pub load_shift: Option<LoadShiftOutcome>,
    /// Round log with durations zeroed.
    pub round_log: Option<RoundLog>,
}

impl CellReport {
    pub fn failed(scenario: &str, topology: Topology, tl_method: TlMethod, seed: u64, error: String) -> Self {
        Self {
            scenario: scenario.into(),
            topology,
            tl_method,
            seed,
            error: Some(error),
            clients: Vec::new(),
            mean_mse: None,
            pooled: None,
            global_model: None,
            rounds_completed: None,
            exclusion_counts: BTreeMap::new(),
            relevance: BTreeMap::new(),
            forgetting: None,
            load_shift: None,
            round_log: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: String,
    pub cells: Vec<CellReport>,
}

impl BenchReport {
    pub fn cells_for<'a>(&'a self, scenario: &'a str) -> impl Iterator<Item = &'a CellReport> + 'a {
        self.cells.iter().filter(move |c| c.scenario == scenario)
    }

    /// Median over seeds of the scenario's mean client MSE; failed cells are skipped.
    pub fn median_mse(&self, scenario: &str) -> Option<f64> {
        let values: Vec<f64> = self.cells_for(scenario).filter_map(|c| c.mean_mse).collect();
        (!values.is_empty()).then(|| super::experiments::median(&values))
    }

    pub fn median_forgetting_pct(&self, scenario: &str) -> Option<f64> {
        let values: Vec<f64> =
            self.cells_for(scenario).filter_map(|c| c.forgetting.as_ref().map(|f| f.mean_improvement_pct)).collect();
        (!values.is_empty()).then(|| super::experiments::median(&values))
    }

    pub fn scenario_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for c in &self.cells {
            if !names.contains(&c.scenario) {
                names.push(c.scenario.clone());
            }
        }
        names
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    /// Canonical JSON: field order is fixed and maps are sorted.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub scenario: String,
    pub seed: u64,
    /// Base training, transfer learning and the scenario's own training.
    pub training_seconds: f64,
    /// Sum of round durations including simulated network time (FL only).
    pub federation_ms: Option<f64>,
}

/// Wall-clock numbers, kept apart from the reproducible report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub cells: Vec<CellTiming>,
}

impl TimingReport {
    pub fn median_federation_ms(&self, scenario: &str) -> Option<f64> {
        let v: Vec<f64> = self.cells.iter().filter(|c| c.scenario == scenario).filter_map(|c| c.federation_ms).collect();
        (!v.is_empty()).then(|| super::experiments::median(&v))
    }
}

/// Measured against predicted over one client's full series.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSeries {
    pub scenario: String,
    pub seed: u64,
    pub client: String,
    pub sample_interval: f64,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub is_test: Vec<bool>,
    /// Rows inside a load-shift window, if any.
    pub shifted: Option<(usize, usize)>,
}

impl ClientSeries {
    fn stem(&self) -> String {
        format!("{}__seed{}__{}", self.scenario, self.seed, self.client)
    }

    pub fn test_errors(&self) -> Vec<f64> {
        (0..self.measured.len()).filter(|&r| self.is_test[r]).map(|r| self.predicted[r] - self.measured[r]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected json or csv)")),
        }
    }
}

pub const HISTOGRAM_BINS: usize = 40;
pub const REPORT_JSON: &str = "report.json";
pub const TIMING_JSON: &str = "timing.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SERIES_DIR: &str = "timeseries";
pub const HISTOGRAM_DIR: &str = "histograms";

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the report files into `dir` and returns their paths.
pub fn emit_report(
    report: &BenchReport,
    timing: Option<&TimingReport>,
    series: &[ClientSeries],
    formats: &[Format],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    io::create_dir(dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let path = dir.join(REPORT_JSON);
        std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        if let Some(t) = timing {
            let path = dir.join(TIMING_JSON);
            io::write_json(&path, t)?;
            written.push(path);
        }
    }
    if formats.contains(&Format::Csv) {
        let path = dir.join(REPORT_CSV);
        write_rows(&path, &["scenario", "topology", "tl_method", "seed", "client", "mse", "r2", "error"], report_rows(report))?;
        written.push(path);
        let path = dir.join(SUMMARY_CSV);
        let rows = report.scenario_names().into_iter().map(|name| {
            vec![
                name.clone(),
                opt(report.median_mse(&name)),
                opt(report.median_forgetting_pct(&name)),
                opt(timing.and_then(|t| t.median_federation_ms(&name))),
            ]
        });
        write_rows(&path, &["scenario", "median_mse", "median_forgetting_pct", "median_federation_ms"], rows)?;
        written.push(path);
    }
    if !series.is_empty() {
        let series_dir = dir.join(SERIES_DIR);
        let hist_dir = dir.join(HISTOGRAM_DIR);
        io::create_dir(&series_dir)?;
        io::create_dir(&hist_dir)?;
        for s in series {
            let path = series_dir.join(format!("{}.csv", s.stem()));
            let rows = (0..s.measured.len()).map(|r| {
                let shifted = s.shifted.is_some_and(|(a, b)| r >= a && r < b);
                vec![
                    r.to_string(),
                    (r as f64 * s.sample_interval).to_string(),
                    s.measured[r].to_string(),
                    s.predicted[r].to_string(),
                    (s.predicted[r] - s.measured[r]).to_string(),
                    if s.is_test[r] { "test" } else { "train" }.to_string(),
                    u8::from(shifted).to_string(),
                ]
            });
            write_rows(&path, &["index", "time_s", "measured_k", "predicted_k", "error_k", "split", "shifted"], rows)?;
            written.push(path);

            let path = hist_dir.join(format!("{}.csv", s.stem()));
            let rows = histogram(&s.test_errors(), HISTOGRAM_BINS)
                .into_iter()
                .map(|(lo, hi, count)| vec![lo.to_string(), hi.to_string(), count.to_string()]);
            write_rows(&path, &["bin_lo_k", "bin_hi_k", "count"], rows)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One row per scenario, seed and client; failed cells get one row with
/// the error and no client.
fn report_rows(report: &BenchReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for c in &report.cells {
        let prefix = || {
            vec![
                c.scenario.clone(),
                serde_json::to_value(c.topology).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                serde_json::to_value(c.tl_method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                c.seed.to_string(),
            ]
        };
        if let Some(err) = &c.error {
            let mut row = prefix();
            row.extend([String::new(), String::new(), String::new(), err.clone()]);
            rows.push(row);
            continue;
        }
        for m in &c.clients {
            let mut row = prefix();
            row.extend([m.client.clone(), m.mse.to_string(), opt(m.r2), String::new()]);
            rows.push(row);
        }
    }
    rows
}
