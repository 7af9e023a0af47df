//! Report and checkpoint files.
//!
//! JSON holds a whole report in one document. CSV splits it into a records
//! file with one row per (period, prosumer) and a sibling `*_aggregates.csv`
//! with per-period sums and a final `total` row. Both CSV files start with
//! `#` comment lines carrying the seed and the config echo.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::error::{MarketError, Result};
use crate::sim::{PricingCheckpoint, SimulationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(MarketError::invalid(format!("unknown format `{other}` (json or csv)"))),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| MarketError::io(path, e))?;
    f.write_all(bytes).map_err(|e| MarketError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), to_json(value).as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MarketError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MarketError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn read_report(path: impl AsRef<Path>) -> Result<SimulationReport> {
    read_json(path)
}

pub fn write_checkpoint(checkpoint: &PricingCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    write_json(checkpoint, path)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<PricingCheckpoint> {
    read_json(path)
}

/// Sibling file holding the aggregates of a CSV report.
pub fn aggregates_path(records: &Path) -> PathBuf {
    let stem = records.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    records.with_file_name(format!("{stem}_aggregates.csv"))
}

/// Writes `report` to `path`. CSV also writes [`aggregates_path`].
pub fn write_report(report: &SimulationReport, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        OutputFormat::Json => write_json(report, path),
        OutputFormat::Csv => {
            let (records, aggregates) = report_csv(report);
            write_file(path, records.as_bytes())?;
            write_file(&aggregates_path(path), aggregates.as_bytes())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub period: usize,
    pub prosumer: usize,
    pub id: String,
    pub role: String,
    /// Demand for buyers, surplus for sellers.
    pub energy_kwh: f64,
    /// Energy bought locally or sold locally.
    pub local_kwh: f64,
    pub grid_kwh: f64,
    pub line_loss_kwh: f64,
    pub price: f64,
    pub cost: f64,
    pub value: f64,
    pub revenue: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// Period index, or `total`.
    pub period: String,
    pub buyers: usize,
    pub sellers: usize,
    pub buyer_value: f64,
    pub seller_reward: f64,
    pub seller_revenue: f64,
    pub local_kwh: f64,
    pub line_loss_kwh: f64,
    pub grid_import_kwh: f64,
    pub grid_export_kwh: f64,
}

pub fn record_rows(report: &SimulationReport) -> Vec<RecordRow> {
    let id = |p: usize| report.prosumers.get(p).cloned().unwrap_or_default();
    let mut rows = Vec::new();
    for period in &report.periods {
        let mut these = Vec::with_capacity(period.buyers.len() + period.sellers.len());
        for b in &period.buyers {
            these.push(RecordRow {
                period: period.period_index,
                prosumer: b.prosumer,
                id: id(b.prosumer),
                role: "buyer".into(),
                energy_kwh: b.demand_kwh,
                local_kwh: b.local_kwh,
                grid_kwh: b.grid_kwh,
                line_loss_kwh: 0.0,
                price: b.cost / b.demand_kwh,
                cost: b.cost,
                value: b.value,
                revenue: 0.0,
                reward: 0.0,
            });
        }
        for s in &period.sellers {
            these.push(RecordRow {
                period: period.period_index,
                prosumer: s.prosumer,
                id: id(s.prosumer),
                role: "seller".into(),
                energy_kwh: s.surplus_kwh,
                local_kwh: s.sold_kwh,
                grid_kwh: s.unsold_kwh,
                line_loss_kwh: s.line_loss_kwh,
                price: s.price,
                cost: 0.0,
                value: 0.0,
                revenue: s.revenue,
                reward: s.reward,
            });
        }
        these.sort_by_key(|r| r.prosumer);
        rows.extend(these);
    }
    rows
}

/// Per-period sums of the record rows plus a `total` row.
pub fn aggregate_rows(report: &SimulationReport) -> Vec<AggregateRow> {
    let mut rows: Vec<AggregateRow> = report
        .periods
        .iter()
        .map(|p| AggregateRow {
            period: p.period_index.to_string(),
            buyers: p.buyers.len(),
            sellers: p.sellers.len(),
            buyer_value: p.buyers.iter().map(|b| b.value).sum(),
            seller_reward: p.sellers.iter().map(|s| s.reward).sum(),
            seller_revenue: p.sellers.iter().map(|s| s.revenue).sum(),
            local_kwh: p.buyers.iter().map(|b| b.local_kwh).sum(),
            line_loss_kwh: p.sellers.iter().map(|s| s.line_loss_kwh).sum(),
            grid_import_kwh: p.buyers.iter().map(|b| b.grid_kwh).sum(),
            grid_export_kwh: p.sellers.iter().map(|s| s.unsold_kwh).sum(),
        })
        .collect();
    let mut total = AggregateRow {
        period: "total".into(),
        buyers: 0,
        sellers: 0,
        buyer_value: 0.0,
        seller_reward: 0.0,
        seller_revenue: 0.0,
        local_kwh: 0.0,
        line_loss_kwh: 0.0,
        grid_import_kwh: 0.0,
        grid_export_kwh: 0.0,
    };
    for r in &rows {
        total.buyers += r.buyers;
        total.sellers += r.sellers;
        total.buyer_value += r.buyer_value;
        total.seller_reward += r.seller_reward;
        total.seller_revenue += r.seller_revenue;
        total.local_kwh += r.local_kwh;
        total.line_loss_kwh += r.line_loss_kwh;
        total.grid_import_kwh += r.grid_import_kwh;
        total.grid_export_kwh += r.grid_export_kwh;
    }
    rows.push(total);
    rows
}

fn header_comments(report: &SimulationReport) -> String {
    let mut out = format!(
        "# version = {}\n# seed = {}\n# strategy = {}\n",
        report.version, report.seed, report.strategy
    );
    if let Some(w) = report.wall_time_s {
        out.push_str(&format!("# wall_time_s = {w}\n"));
    }
    out.push_str("# [config]\n");
    for line in report.config.to_toml_string().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn rows_to_csv<T: Serialize>(prefix: String, rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(prefix.into_bytes());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

/// Records and aggregates CSV text.
pub fn report_csv(report: &SimulationReport) -> (String, String) {
    let comments = header_comments(report);
    (
        rows_to_csv(comments.clone(), &record_rows(report)),
        rows_to_csv(comments, &aggregate_rows(report)),
    )
}

/// Header comments and data rows of one CSV report file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvReport<T> {
    pub seed: u64,
    pub config: SimulationConfig,
    pub rows: Vec<T>,
}

pub fn read_csv_report<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<CsvReport<T>> {
    let path = path.as_ref();
    let format_err = |msg: String| MarketError::Format {
        path: path.to_path_buf(),
        msg,
    };
    let file = fs::File::open(path).map_err(|e| MarketError::io(path, e))?;
    let mut comments = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| MarketError::io(path, e))?;
        match line.strip_prefix('#') {
            Some(c) if body.is_empty() => comments.push(c.strip_prefix(' ').unwrap_or(c).to_string()),
            _ => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let seed = comments
        .iter()
        .find_map(|c| c.strip_prefix("seed = "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err("missing `# seed` comment".into()))?;
    let start = comments
        .iter()
        .position(|c| c == "[config]")
        .ok_or_else(|| format_err("missing `# [config]` comment".into()))?;
    let config = SimulationConfig::from_toml_str(&comments[start + 1..].join("\n"))
        .map_err(|e| format_err(e.to_string()))?;
    let mut rows = Vec::new();
    for (n, rec) in csv::Reader::from_reader(body.as_bytes()).deserialize().enumerate() {
        rows.push(rec.map_err(|e| format_err(format!("row {}: {e}", n + 1)))?);
    }
    Ok(CsvReport { seed, config, rows })
}
