//! Simulation configuration, read from TOML.
//!
//! Every key has a default, so an empty file is the reference setup:
//! 20 buyers and 20 sellers over 365 daily periods, grid prices $0.06/$0.12,
//! line losses drawn from {1, 2, 3, 4}% with a 2.5% cut-off.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::debate::DebateParams;
use crate::error::{MarketError, Result};
use crate::pqr::{PqrParams, PriceGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    DebatePqr,
    Rule,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::DebatePqr => "debate_pqr",
            Strategy::Rule => "rule",
        })
    }
}

impl FromStr for Strategy {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "debate_pqr" | "debate-pqr" => Ok(Strategy::DebatePqr),
            "rule" => Ok(Strategy::Rule),
            other => Err(MarketError::invalid(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Closed interval `[lo, hi]` written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(MarketError::invalid(format!(
                "{name}: invalid range [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Range {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Range { lo, hi }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

/// Sampling ranges for the per-prosumer value-function parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtRanges {
    pub k_plus: Range,
    pub k_minus: Range,
    pub zeta_plus: Range,
    pub zeta_minus: Range,
}

impl Default for PtRanges {
    fn default() -> Self {
        PtRanges {
            k_plus: Range::new(2.10, 2.61),
            k_minus: Range::new(2.10, 2.61),
            zeta_plus: Range::new(0.60, 0.88),
            zeta_minus: Range::new(0.52, 1.0),
        }
    }
}

impl PtRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("pt.k_plus", self.k_plus), ("pt.k_minus", self.k_minus)] {
            r.check(name)?;
            if r.lo < 0.0 {
                return Err(MarketError::invalid(format!("{name} must be >= 0")));
            }
        }
        for (name, r) in [("pt.zeta_plus", self.zeta_plus), ("pt.zeta_minus", self.zeta_minus)] {
            r.check(name)?;
            if r.lo <= 0.0 || r.hi > 1.0 {
                return Err(MarketError::invalid(format!("{name} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Synthetic trace generator settings. Daily energies are in kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// Mean daily output of one rooftop array.
    pub solar_daily_kwh: f64,
    /// Relative seasonal swing of solar output.
    pub solar_amplitude: f64,
    /// Day of year where the seasonal sine crosses zero upwards.
    pub solar_phase_day: f64,
    /// Std-dev of the shared daily weather factor.
    pub solar_noise: f64,
    pub buyer_daily_kwh: f64,
    /// Own consumption of a solar household.
    pub seller_daily_kwh: f64,
    /// Relative winter/summer swing of consumption.
    pub consumption_amplitude: f64,
    pub consumption_noise: f64,
    /// Per-household consumption scale is drawn from this range.
    pub household_scale: Range,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            solar_daily_kwh: 14.0,
            solar_amplitude: 0.4,
            solar_phase_day: 81.0,
            solar_noise: 0.25,
            buyer_daily_kwh: 20.0,
            seller_daily_kwh: 4.0,
            consumption_amplitude: 0.2,
            consumption_noise: 0.15,
            household_scale: Range::new(0.6, 1.4),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("synth.solar_daily_kwh", self.solar_daily_kwh),
            ("synth.solar_noise", self.solar_noise),
            ("synth.buyer_daily_kwh", self.buyer_daily_kwh),
            ("synth.seller_daily_kwh", self.seller_daily_kwh),
            ("synth.consumption_noise", self.consumption_noise),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MarketError::invalid(format!("{name} must be >= 0")));
            }
        }
        for (name, v) in [
            ("synth.solar_amplitude", self.solar_amplitude),
            ("synth.consumption_amplitude", self.consumption_amplitude),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MarketError::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        self.household_scale.check("synth.household_scale")?;
        if self.household_scale.lo < 0.0 {
            return Err(MarketError::invalid("synth.household_scale must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub strategy: Strategy,
    /// Number of trading periods.
    pub horizon: usize,
    pub periods_per_day: usize,
    /// Consumers without generation (synthetic traces only).
    pub n_buyers: usize,
    /// Households with rooftop solar (synthetic traces only).
    pub n_sellers: usize,
    /// Trace CSV; when absent, traces are synthesized from `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traces: Option<String>,
    pub rho_gb: f64,
    pub rho_gs: f64,
    pub loss_values: Vec<f64>,
    pub l_max: f64,
    pub buyer_ref_price: Range,
    pub seller_init_price: Range,
    pub pt: PtRanges,
    pub debate: DebateSection,
    pub pqr: PqrParams,
    pub synth: SynthParams,
}

/// Solver settings; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebateSection {
    pub np: usize,
    pub g_max: usize,
    pub cr: f64,
    pub f: f64,
}

impl Default for DebateSection {
    fn default() -> Self {
        let d = DebateParams::default();
        DebateSection {
            np: d.np,
            g_max: d.g_max,
            cr: d.cr,
            f: d.f,
        }
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 42,
            strategy: Strategy::DebatePqr,
            horizon: 365,
            periods_per_day: 1,
            n_buyers: 20,
            n_sellers: 20,
            traces: None,
            rho_gb: 0.06,
            rho_gs: 0.12,
            loss_values: vec![0.01, 0.02, 0.03, 0.04],
            l_max: 0.025,
            buyer_ref_price: Range::new(0.06, 0.10),
            seller_init_price: Range::new(0.09, 0.12),
            pt: PtRanges::default(),
            debate: DebateSection::default(),
            pqr: PqrParams::default(),
            synth: SynthParams::default(),
        }
    }
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimulationConfig =
            toml::from_str(text).map_err(|e| MarketError::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MarketError::io(path, e))?;
        let cfg: SimulationConfig = toml::from_str(&text).map_err(|e| MarketError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn debate_params(&self, seed: u64) -> DebateParams {
        DebateParams {
            np: self.debate.np,
            g_max: self.debate.g_max,
            cr: self.debate.cr,
            f: self.debate.f,
            seed,
        }
    }

    pub fn price_grid(&self) -> Result<PriceGrid> {
        PriceGrid::new(self.rho_gb, self.rho_gs, self.pqr.delta)
    }

    /// Trailing moving-average window: ten days of periods.
    pub fn moving_average_window(&self) -> usize {
        10 * self.periods_per_day
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(MarketError::invalid("horizon must be >= 1"));
        }
        if self.periods_per_day < 1 {
            return Err(MarketError::invalid("periods_per_day must be >= 1"));
        }
        if !(self.rho_gb > 0.0 && self.rho_gb < self.rho_gs && self.rho_gs.is_finite()) {
            return Err(MarketError::invalid("need 0 < rho_gb < rho_gs"));
        }
        if self.loss_values.is_empty() {
            return Err(MarketError::invalid("loss_values must not be empty"));
        }
        if let Some(l) = self.loss_values.iter().find(|l| !(0.0..1.0).contains(*l)) {
            return Err(MarketError::invalid(format!("loss value {l} outside [0, 1)")));
        }
        if !(0.0..=1.0).contains(&self.l_max) {
            return Err(MarketError::invalid("l_max outside [0, 1]"));
        }
        for (name, r) in [
            ("buyer_ref_price", self.buyer_ref_price),
            ("seller_init_price", self.seller_init_price),
        ] {
            r.check(name)?;
            if r.lo < self.rho_gb || r.hi > self.rho_gs {
                return Err(MarketError::invalid(format!(
                    "{name} [{}, {}] must lie within [rho_gb, rho_gs]",
                    r.lo, r.hi
                )));
            }
        }
        self.pt.validate()?;
        self.debate_params(self.seed).validate()?;
        self.pqr.validate()?;
        self.price_grid()?;
        self.synth.validate()?;
        Ok(())
    }
}
