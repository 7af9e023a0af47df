//! Consumption/production traces: CSV ingestion and a synthetic generator.
//!
//! The CSV schema is fixed:
//!
//! ```text
//! prosumer_id,period,consumption_kwh,production_kwh
//! p1,0,3.5,0.0
//! ```
//!
//! Prosumers are registered in order of first appearance.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::SynthParams;
use crate::error::{MarketError, Result};

pub const TRACE_HEADER: [&str; 4] = ["prosumer_id", "period", "consumption_kwh", "production_kwh"];

/// Rectangular per-prosumer, per-period energy table.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    ids: Vec<String>,
    horizon: usize,
    consumption: Vec<Vec<f64>>,
    production: Vec<Vec<f64>>,
}

impl TraceSet {
    /// `consumption[p][t]` and `production[p][t]` for prosumer `ids[p]`.
    pub fn new(ids: Vec<String>, consumption: Vec<Vec<f64>>, production: Vec<Vec<f64>>) -> Result<Self> {
        if ids.is_empty() {
            return Err(MarketError::invalid("no records"));
        }
        if consumption.len() != ids.len() || production.len() != ids.len() {
            return Err(MarketError::invalid("trace table does not match prosumer list"));
        }
        let horizon = consumption[0].len();
        let mut seen = HashMap::new();
        for (p, id) in ids.iter().enumerate() {
            if seen.insert(id.as_str(), p).is_some() {
                return Err(MarketError::invalid(format!("duplicate prosumer id `{id}`")));
            }
            if consumption[p].len() != horizon || production[p].len() != horizon {
                return Err(MarketError::invalid(format!("ragged traces for `{id}`")));
            }
            let bad = consumption[p]
                .iter()
                .chain(&production[p])
                .find(|v| !(v.is_finite() && **v >= 0.0));
            if let Some(v) = bad {
                return Err(MarketError::invalid(format!("`{id}`: negative or non-finite value {v}")));
            }
        }
        Ok(TraceSet {
            ids,
            horizon,
            consumption,
            production,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_prosumers(&self) -> usize {
        self.ids.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn entry(&self, p: usize, t: usize, table: &[Vec<f64>]) -> Result<f64> {
        table
            .get(p)
            .and_then(|row| row.get(t))
            .copied()
            .ok_or_else(|| MarketError::MissingTrace {
                prosumer: self.ids.get(p).cloned().unwrap_or_else(|| format!("#{p}")),
                period: t,
            })
    }

    pub fn consumption(&self, p: usize, t: usize) -> Result<f64> {
        self.entry(p, t, &self.consumption)
    }

    pub fn production(&self, p: usize, t: usize) -> Result<f64> {
        self.entry(p, t, &self.production)
    }

    /// True when the prosumer never produces anything.
    pub fn is_pure_consumer(&self, p: usize) -> bool {
        self.production[p].iter().all(|v| *v == 0.0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for (p, id) in self.ids.iter().enumerate() {
            for t in 0..self.horizon {
                w.write_record([
                    id.clone(),
                    t.to_string(),
                    self.consumption[p][t].to_string(),
                    self.production[p][t].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_traces(traces: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| MarketError::io(path, e))?;
    traces
        .write_csv(std::io::BufWriter::new(file))
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> MarketError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MarketError::io(path, io),
        other => MarketError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<TraceSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| MarketError::io(path, e))?;
    parse_traces(file, path)
}

/// Parses trace CSV from any reader; `path` is used in error messages.
pub fn parse_traces<R: std::io::Read>(input: R, path: &Path) -> Result<TraceSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let parse_err = |line: usize, msg: String| MarketError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(parse_err(1, format!("expected header `{}`", TRACE_HEADER.join(","))));
    }

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
    let mut horizon = 0;

    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(parse_err(line, "empty prosumer_id".into()));
        }
        let period: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad period `{}`", &rec[1])))?;
        let number = |field: &str, name: &str| -> Result<f64> {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad {name} `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite {name}")));
            }
            if v < 0.0 {
                return Err(MarketError::invalid(format!(
                    "{}:{line}: negative {name} {v}",
                    path.display()
                )));
            }
            Ok(v)
        };
        let cons = number(&rec[2], "consumption_kwh")?;
        let prod = number(&rec[3], "production_kwh")?;

        let p = *index.entry(id.to_string()).or_insert_with(|| {
            ids.push(id.to_string());
            ids.len() - 1
        });
        if cells.insert((p, period), (cons, prod)).is_some() {
            return Err(parse_err(line, format!("duplicate entry for `{id}` at period {period}")));
        }
        horizon = horizon.max(period + 1);
    }

    if ids.is_empty() {
        return Err(MarketError::invalid(format!("{}: no records", path.display())));
    }

    let mut missing = Vec::new();
    let mut consumption = vec![vec![0.0; horizon]; ids.len()];
    let mut production = vec![vec![0.0; horizon]; ids.len()];
    for (p, id) in ids.iter().enumerate() {
        for t in 0..horizon {
            match cells.get(&(p, t)) {
                Some(&(c, g)) => {
                    consumption[p][t] = c;
                    production[p][t] = g;
                }
                None => missing.push(format!("({id}, {t})")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(MarketError::invalid(format!(
            "{}: ragged coverage, missing {}",
            path.display(),
            missing.join(", ")
        )));
    }
    TraceSet::new(ids, consumption, production)
}

/// Share of a day's energy falling in each of `periods_per_day` slots for an
/// hourly shape sampled on a fine grid.
fn diurnal_shares(periods_per_day: usize, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    const STEPS_PER_DAY: usize = 2400;
    let mut bins = vec![0.0; periods_per_day];
    for s in 0..STEPS_PER_DAY {
        let hour = (s as f64 + 0.5) * 24.0 / STEPS_PER_DAY as f64;
        let bin = s * periods_per_day / STEPS_PER_DAY;
        bins[bin] += shape(hour);
    }
    let total: f64 = bins.iter().sum();
    bins.iter().map(|b| b / total).collect()
}

fn solar_shape(hour: f64) -> f64 {
    if (6.0..18.0).contains(&hour) {
        (PI * (hour - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

fn load_shape(hour: f64) -> f64 {
    let bump = |c: f64, w: f64| (-(hour - c).powi(2) / (2.0 * w * w)).exp();
    0.5 + 0.6 * bump(8.0, 1.5) + 1.0 * bump(19.0, 2.0)
}

/// Daily solar output multiplier for `day`: `1 + a sin(2 pi (day - phase) / 365)`.
pub fn solar_season(day: f64, params: &SynthParams) -> f64 {
    1.0 + params.solar_amplitude * (2.0 * PI * (day - params.solar_phase_day) / 365.0).sin()
}

/// Consumption multiplier with winter and summer peaks.
fn consumption_season(day: f64, params: &SynthParams) -> f64 {
    1.0 + params.consumption_amplitude * (4.0 * PI * (day - 15.0) / 365.0).cos()
}

/// Generates `n_buyers` consumers without generation (`b000`, ...) followed by
/// `n_sellers` solar households (`s000`, ...).
pub fn synth_traces<R: Rng + ?Sized>(
    n_buyers: usize,
    n_sellers: usize,
    horizon: usize,
    periods_per_day: usize,
    params: &SynthParams,
    rng: &mut R,
) -> Result<TraceSet> {
    params.validate()?;
    if n_buyers + n_sellers == 0 || horizon == 0 || periods_per_day == 0 {
        return Err(MarketError::invalid("synthetic traces need prosumers, periods and periods_per_day >= 1"));
    }
    let solar_share = diurnal_shares(periods_per_day, solar_shape);
    let load_share = diurnal_shares(periods_per_day, load_shape);
    let n = n_buyers + n_sellers;
    let ids: Vec<String> = (0..n_buyers)
        .map(|b| format!("b{b:03}"))
        .chain((0..n_sellers).map(|s| format!("s{s:03}")))
        .collect();

    let scale: Vec<f64> = (0..n)
        .map(|_| rng.random_range(params.household_scale.lo..=params.household_scale.hi))
        .collect();
    let weather = Normal::new(1.0, params.solar_noise).expect("validated std-dev");
    let usage = Normal::new(1.0, params.consumption_noise).expect("validated std-dev");

    let mut consumption = vec![Vec::with_capacity(horizon); n];
    let mut production = vec![Vec::with_capacity(horizon); n];
    let days = horizon.div_ceil(periods_per_day);
    for day in 0..days {
        let d = day as f64;
        let sky = weather.sample(rng).max(0.0);
        let solar_day = params.solar_daily_kwh * solar_season(d, params) * sky;
        let season = consumption_season(d, params);
        for p in 0..n {
            let base = if p < n_buyers {
                params.buyer_daily_kwh
            } else {
                params.seller_daily_kwh
            };
            let used = base * scale[p] * season * usage.sample(rng).max(0.0);
            for slot in 0..periods_per_day {
                if consumption[p].len() == horizon {
                    break;
                }
                consumption[p].push(used * load_share[slot]);
                production[p].push(if p < n_buyers {
                    0.0
                } else {
                    solar_day * solar_share[slot]
                });
            }
        }
    }
    TraceSet::new(ids, consumption, production)
}
