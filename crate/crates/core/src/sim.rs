//! Period-by-period market simulation.
//!
//! Each period the prosumers are split into buyers and sellers by net load,
//! the market is cleared by the configured strategy, and (for `debate_pqr`)
//! every seller's price agent learns from the cleared allocation before the
//! next period starts.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Range, SimulationConfig, Strategy};
use crate::debate::debate_run;
use crate::error::{MarketError, Result};
use crate::market::{
    buyer_total_cost_at, buyer_value, AllocationMatrix, Buyer, LossMatrix, MarketPeriod, PriceMatrix,
    ProsumerProfile, Seller,
};
use crate::pqr::{energy_sold, pqr_step, PriceAgent, PriceGrid};
use crate::rng::{stream, Domain};
use crate::rule::rule_allocate;
use crate::traces::{load_traces, synth_traces, TraceSet};

pub const CHECKPOINT_FORMAT: &str = "p2p-market/pricing-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Buyers `(prosumer, demand)` and sellers `(prosumer, surplus)` for one
/// period, both in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Participants {
    pub buyers: Vec<(usize, f64)>,
    pub sellers: Vec<(usize, f64)>,
}

pub fn classify_prosumers(traces: &TraceSet, t: usize) -> Result<Participants> {
    let mut buyers = Vec::new();
    let mut sellers = Vec::new();
    for p in 0..traces.n_prosumers() {
        let net = traces.consumption(p, t)? - traces.production(p, t)?;
        if net > 0.0 {
            buyers.push((p, net));
        } else if net < 0.0 {
            sellers.push((p, -net));
        }
    }
    Ok(Participants { buyers, sellers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerRecord {
    pub prosumer: usize,
    pub demand_kwh: f64,
    pub local_kwh: f64,
    pub grid_kwh: f64,
    /// Total cost `y_j`.
    pub cost: f64,
    /// Perceived value `v(y_j)`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerRecord {
    pub prosumer: usize,
    pub surplus_kwh: f64,
    /// Posted price during the period.
    pub price: f64,
    pub sold_kwh: f64,
    pub line_loss_kwh: f64,
    pub unsold_kwh: f64,
    /// Money received at the cleared transaction prices.
    pub revenue: f64,
    /// Learning reward; equals `revenue` under the baseline.
    pub reward: f64,
    pub next_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub seller: usize,
    pub buyer: usize,
    pub fraction: f64,
    pub energy_kwh: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub period_index: usize,
    pub buyers: Vec<BuyerRecord>,
    pub sellers: Vec<SellerRecord>,
    pub transactions: Vec<Transaction>,
    /// Sum of buyer perceived values.
    pub fitness: f64,
    pub grid_import_kwh: f64,
    pub grid_export_kwh: f64,
}

impl PeriodResult {
    pub fn seller_reward(&self) -> f64 {
        self.sellers.iter().map(|s| s.reward).sum()
    }

    /// Rebuilds the dense allocation in buyer/seller record order.
    pub fn allocation(&self) -> AllocationMatrix {
        let mut x = AllocationMatrix::zeros(self.sellers.len(), self.buyers.len());
        for tx in &self.transactions {
            let i = self.sellers.iter().position(|s| s.prosumer == tx.seller);
            let j = self.buyers.iter().position(|b| b.prosumer == tx.buyer);
            if let (Some(i), Some(j)) = (i, j) {
                x.set(i, j, tx.fraction);
            }
        }
        x
    }
}

/// Per-prosumer parameters fixed at simulation start.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSetup {
    pub profiles: Vec<ProsumerProfile>,
    /// Symmetric line-loss fraction between every pair of prosumers.
    pub loss: Vec<Vec<f64>>,
    /// Starting price state of each prosumer's seller agent.
    pub initial_state: Vec<usize>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: Range) -> f64 {
    if r.lo == r.hi {
        r.lo
    } else {
        rng.random_range(r.lo..=r.hi)
    }
}

impl MarketSetup {
    pub fn sample<R: Rng + ?Sized>(config: &SimulationConfig, n: usize, rng: &mut R) -> Result<Self> {
        let grid = config.price_grid()?;
        let lo = grid.snap(config.seller_init_price.lo);
        let hi = grid.snap(config.seller_init_price.hi);
        let mut profiles = Vec::with_capacity(n);
        let mut initial_state = Vec::with_capacity(n);
        for id in 0..n {
            profiles.push(ProsumerProfile {
                id,
                k_plus: uniform(rng, config.pt.k_plus),
                k_minus: uniform(rng, config.pt.k_minus),
                zeta_plus: uniform(rng, config.pt.zeta_plus),
                zeta_minus: uniform(rng, config.pt.zeta_minus),
                ref_price: uniform(rng, config.buyer_ref_price),
            });
            initial_state.push(rng.random_range(lo..=hi));
        }
        let mut loss = vec![vec![0.0; n]; n];
        for p in 0..n {
            for q in p + 1..n {
                let l = config.loss_values[rng.random_range(0..config.loss_values.len())];
                loss[p][q] = l;
                loss[q][p] = l;
            }
        }
        Ok(MarketSetup {
            profiles,
            loss,
            initial_state,
        })
    }
}

/// Mutable simulation state; cloning it forks an independent run.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    config: SimulationConfig,
    traces: &'a TraceSet,
    grid: PriceGrid,
    setup: MarketSetup,
    agents: Vec<PriceAgent>,
    next_period: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &SimulationConfig, traces: &'a TraceSet) -> Result<Self> {
        config.validate()?;
        let n = traces.n_prosumers();
        let setup = MarketSetup::sample(config, n, &mut stream(config.seed, Domain::Setup, 0))?;
        let grid = config.price_grid()?;
        let agents = (0..n)
            .map(|p| {
                PriceAgent::new(
                    setup.profiles[p],
                    grid,
                    setup.initial_state[p],
                    &config.pqr,
                    stream(config.seed, Domain::Pricing, p as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Simulation {
            config: config.clone(),
            traces,
            grid,
            setup,
            agents,
            next_period: 0,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn setup(&self) -> &MarketSetup {
        &self.setup
    }

    pub fn agents(&self) -> &[PriceAgent] {
        &self.agents
    }

    pub fn next_period(&self) -> usize {
        self.next_period
    }

    pub fn is_finished(&self) -> bool {
        self.next_period >= self.config.horizon
    }

    /// Price prosumer `p` posts when it sells in the coming period.
    pub fn posted_price(&self, p: usize) -> f64 {
        match self.config.strategy {
            Strategy::DebatePqr => self.agents[p].price(),
            Strategy::Rule => self.grid.price(self.setup.initial_state[p]),
        }
    }

    /// The market the next period will clear.
    pub fn market_period(&self, t: usize, parts: &Participants) -> Result<MarketPeriod> {
        let buyers = parts
            .buyers
            .iter()
            .map(|&(p, w)| Buyer {
                profile: self.setup.profiles[p],
                demand: w,
            })
            .collect();
        let sellers = parts
            .sellers
            .iter()
            .map(|&(p, r)| Seller {
                profile: self.setup.profiles[p],
                surplus: r,
                price: self.posted_price(p),
            })
            .collect();
        let mut loss = LossMatrix::zeros(parts.sellers.len(), parts.buyers.len());
        for (i, &(s, _)) in parts.sellers.iter().enumerate() {
            for (j, &(b, _)) in parts.buyers.iter().enumerate() {
                loss.set(i, j, self.setup.loss[s][b]);
            }
        }
        MarketPeriod::new(
            t,
            buyers,
            sellers,
            loss,
            self.config.l_max,
            self.config.rho_gb,
            self.config.rho_gs,
        )
    }

    /// Clears the next period and, under `debate_pqr`, updates prices.
    pub fn run_period(&mut self) -> Result<PeriodResult> {
        let t = self.next_period;
        if t >= self.config.horizon {
            return Err(MarketError::invalid(format!("horizon {} already reached", self.config.horizon)));
        }
        let parts = classify_prosumers(self.traces, t)?;
        let period = self.market_period(t, &parts)?;

        let (x, prices, rewards, next_prices) = match self.config.strategy {
            Strategy::DebatePqr => {
                let params = self.config.debate_params(self.config.seed);
                let mut rng = stream(self.config.seed, Domain::Allocation, t as u64);
                let x = debate_run(&period, &params, &mut rng)?.allocation;

                let mut selling = vec![false; self.agents.len()];
                for &(p, _) in &parts.sellers {
                    selling[p] = true;
                }
                let steps = pqr_step(
                    self.agents.iter_mut().filter(|a| selling[a.seller_id]),
                    &x,
                    &period,
                )?;
                for agent in self.agents.iter_mut().filter(|a| !selling[a.seller_id]) {
                    agent.decay_epsilon();
                }
                let rewards = steps.iter().map(|s| s.reward).collect::<Vec<_>>();
                let next = steps.iter().map(|s| s.new_price).collect::<Vec<_>>();
                (x, period.ask_prices(), Some(rewards), next)
            }
            Strategy::Rule => {
                let out = rule_allocate(&period);
                let next = period.sellers.iter().map(|s| s.price).collect();
                (out.allocation, out.prices, None, next)
            }
        };

        let result = record_period(&period, &x, &prices, rewards.as_deref(), &next_prices)?;
        self.next_period += 1;
        Ok(result)
    }

    pub fn checkpoint(&self) -> PricingCheckpoint {
        PricingCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: self.config.seed,
            strategy: self.config.strategy,
            next_period: self.next_period,
            grid: self.grid,
            agents: self.agents.clone(),
        }
    }

    /// Rebuilds a simulation from `checkpoint`; the remaining periods then
    /// replay exactly as in an uninterrupted run.
    pub fn resume(config: &SimulationConfig, traces: &'a TraceSet, checkpoint: PricingCheckpoint) -> Result<Self> {
        checkpoint.check_header()?;
        let mut sim = Simulation::new(config, traces)?;
        if checkpoint.seed != config.seed || checkpoint.strategy != config.strategy {
            return Err(MarketError::invalid("checkpoint was written for a different seed or strategy"));
        }
        if checkpoint.grid != sim.grid {
            return Err(MarketError::invalid("checkpoint price grid differs from config"));
        }
        if checkpoint.agents.len() != sim.agents.len() {
            return Err(MarketError::invalid(format!(
                "checkpoint has {} agents, traces have {} prosumers",
                checkpoint.agents.len(),
                sim.agents.len()
            )));
        }
        if checkpoint.next_period > config.horizon {
            return Err(MarketError::invalid("checkpoint lies beyond the horizon"));
        }
        sim.agents = checkpoint.agents;
        sim.next_period = checkpoint.next_period;
        Ok(sim)
    }
}

fn record_period(
    period: &MarketPeriod,
    x: &AllocationMatrix,
    prices: &PriceMatrix,
    rewards: Option<&[f64]>,
    next_prices: &[f64],
) -> Result<PeriodResult> {
    let mut buyers = Vec::with_capacity(period.n_buyers());
    let mut fitness = 0.0;
    let mut grid_import = 0.0;
    for (j, b) in period.buyers.iter().enumerate() {
        let cost = buyer_total_cost_at(j, x, prices, period)?;
        let value = buyer_value(cost, b.demand, &b.profile);
        let local = x.column_sum(j) * b.demand;
        let grid = b.demand - local;
        fitness += value;
        grid_import += grid;
        buyers.push(BuyerRecord {
            prosumer: b.profile.id,
            demand_kwh: b.demand,
            local_kwh: local,
            grid_kwh: grid,
            cost,
            value,
        });
    }

    let mut sellers = Vec::with_capacity(period.n_sellers());
    let mut transactions = Vec::new();
    let mut grid_export = 0.0;
    for (i, s) in period.sellers.iter().enumerate() {
        let mut revenue = 0.0;
        let mut line_loss = 0.0;
        for (j, b) in period.buyers.iter().enumerate() {
            let frac = x.get(i, j);
            if frac > 0.0 {
                let energy = frac * b.demand;
                revenue += prices.get(i, j) * energy;
                line_loss += period.loss.get(i, j) * energy;
                transactions.push(Transaction {
                    seller: s.profile.id,
                    buyer: b.profile.id,
                    fraction: frac,
                    energy_kwh: energy,
                    price: prices.get(i, j),
                });
            }
        }
        let sold = energy_sold(i, x, period);
        let unsold = (s.surplus - sold - line_loss).max(0.0);
        grid_export += unsold;
        sellers.push(SellerRecord {
            prosumer: s.profile.id,
            surplus_kwh: s.surplus,
            price: s.price,
            sold_kwh: sold,
            line_loss_kwh: line_loss,
            unsold_kwh: unsold,
            revenue,
            reward: rewards.map_or(revenue, |r| r[i]),
            next_price: next_prices[i],
        });
    }

    Ok(PeriodResult {
        period_index: period.period_index,
        buyers,
        sellers,
        transactions,
        fitness,
        grid_import_kwh: grid_import,
        grid_export_kwh: grid_export,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingCheckpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub strategy: Strategy,
    pub next_period: usize,
    pub grid: PriceGrid,
    pub agents: Vec<PriceAgent>,
}

impl PricingCheckpoint {
    fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(MarketError::invalid(format!("not a pricing checkpoint: `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(MarketError::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub periods: usize,
    pub total_buyer_value: f64,
    pub mean_buyer_value: f64,
    pub cumulative_seller_reward: f64,
    pub total_seller_revenue: f64,
    pub total_local_kwh: f64,
    pub total_line_loss_kwh: f64,
    pub total_grid_import_kwh: f64,
    pub total_grid_export_kwh: f64,
    pub mean_active_buyers: f64,
    pub mean_active_sellers: f64,
    pub moving_average_window: usize,
    /// Buyer value per period.
    pub buyer_value_series: Vec<f64>,
    pub seller_reward_series: Vec<f64>,
    pub cumulative_reward_series: Vec<f64>,
    pub buyer_value_moving_avg: Vec<f64>,
    pub seller_reward_moving_avg: Vec<f64>,
}

/// Trailing mean over at most `window` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (t, v) in values.iter().enumerate() {
        sum += v;
        if t >= window {
            sum -= values[t - window];
        }
        out.push(sum / (t + 1).min(window) as f64);
    }
    out
}

impl Aggregates {
    pub fn from_periods(periods: &[PeriodResult], window: usize) -> Self {
        let n = periods.len();
        let buyer_value_series: Vec<f64> = periods.iter().map(|p| p.fitness).collect();
        let seller_reward_series: Vec<f64> = periods.iter().map(PeriodResult::seller_reward).collect();
        let cumulative_reward_series = seller_reward_series
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect::<Vec<_>>();
        let sum = |f: &dyn Fn(&PeriodResult) -> f64| periods.iter().map(f).sum::<f64>();
        let total_buyer_value = buyer_value_series.iter().sum::<f64>();
        let mean = |v: f64| if n == 0 { 0.0 } else { v / n as f64 };
        Aggregates {
            periods: n,
            total_buyer_value,
            mean_buyer_value: mean(total_buyer_value),
            cumulative_seller_reward: cumulative_reward_series.last().copied().unwrap_or(0.0),
            total_seller_revenue: sum(&|p| p.sellers.iter().map(|s| s.revenue).sum()),
            total_local_kwh: sum(&|p| p.buyers.iter().map(|b| b.local_kwh).sum()),
            total_line_loss_kwh: sum(&|p| p.sellers.iter().map(|s| s.line_loss_kwh).sum()),
            total_grid_import_kwh: sum(&|p| p.grid_import_kwh),
            total_grid_export_kwh: sum(&|p| p.grid_export_kwh),
            mean_active_buyers: mean(sum(&|p| p.buyers.len() as f64)),
            mean_active_sellers: mean(sum(&|p| p.sellers.len() as f64)),
            moving_average_window: window,
            buyer_value_moving_avg: moving_average(&buyer_value_series, window),
            seller_reward_moving_avg: moving_average(&seller_reward_series, window),
            buyer_value_series,
            seller_reward_series,
            cumulative_reward_series,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTrajectory {
    pub prosumer: usize,
    pub id: String,
    /// Posted price at the start of every period.
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub version: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub config: SimulationConfig,
    pub prosumers: Vec<String>,
    pub periods: Vec<PeriodResult>,
    pub aggregates: Aggregates,
    pub price_trajectories: Vec<PriceTrajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// Loads the configured trace file, or synthesizes traces from the seed.
pub fn traces_for(config: &SimulationConfig) -> Result<TraceSet> {
    match &config.traces {
        Some(path) => load_traces(path),
        None => synth_traces(
            config.n_buyers,
            config.n_sellers,
            config.horizon,
            config.periods_per_day,
            &config.synth,
            &mut stream(config.seed, Domain::Traces, 0),
        ),
    }
}

fn check_coverage(config: &SimulationConfig, traces: &TraceSet) -> Result<()> {
    if traces.horizon() < config.horizon {
        return Err(MarketError::MissingTrace {
            prosumer: traces.ids()[0].clone(),
            period: traces.horizon(),
        });
    }
    Ok(())
}

/// Runs `config.horizon` periods and assembles the report.
pub fn run_simulation(config: &SimulationConfig, traces: &TraceSet) -> Result<SimulationReport> {
    check_coverage(config, traces)?;
    run_from(&mut Simulation::new(config, traces)?)
}

/// Runs a (possibly resumed) simulation to the end of its horizon.
pub fn run_from(sim: &mut Simulation<'_>) -> Result<SimulationReport> {
    check_coverage(&sim.config, sim.traces)?;
    let tracked: Vec<usize> = (0..sim.traces.n_prosumers())
        .filter(|&p| !sim.traces.is_pure_consumer(p))
        .collect();
    let mut trajectories: Vec<Vec<f64>> = vec![Vec::new(); tracked.len()];
    let mut periods = Vec::with_capacity(sim.config.horizon - sim.next_period);
    while !sim.is_finished() {
        for (k, &p) in tracked.iter().enumerate() {
            trajectories[k].push(sim.posted_price(p));
        }
        periods.push(sim.run_period()?);
    }
    let config = sim.config.clone();
    Ok(SimulationReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        strategy: config.strategy,
        aggregates: Aggregates::from_periods(&periods, config.moving_average_window()),
        prosumers: sim.traces.ids().to_vec(),
        price_trajectories: tracked
            .iter()
            .zip(trajectories)
            .map(|(&p, prices)| PriceTrajectory {
                prosumer: p,
                id: sim.traces.ids()[p].clone(),
                prices,
            })
            .collect(),
        periods,
        config,
        wall_time_s: None,
    })
}

/// Same as [`run_simulation`], recording elapsed wall time in the report.
pub fn run_simulation_timed(config: &SimulationConfig, traces: &TraceSet) -> Result<SimulationReport> {
    let start = Instant::now();
    let mut report = run_simulation(config, traces)?;
    report.wall_time_s = Some(start.elapsed().as_secs_f64());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub total_buyer_value: f64,
    pub cumulative_seller_reward: f64,
    pub total_seller_revenue: f64,
    pub total_local_kwh: f64,
    pub total_grid_import_kwh: f64,
}

impl StrategySummary {
    fn of(report: &SimulationReport) -> Self {
        let a = &report.aggregates;
        StrategySummary {
            strategy: report.strategy,
            total_buyer_value: a.total_buyer_value,
            cumulative_seller_reward: a.cumulative_seller_reward,
            total_seller_revenue: a.total_seller_revenue,
            total_local_kwh: a.total_local_kwh,
            total_grid_import_kwh: a.total_grid_import_kwh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub version: String,
    pub seed: u64,
    pub config: SimulationConfig,
    pub n_prosumers: usize,
    pub debate_pqr: StrategySummary,
    pub rule: StrategySummary,
    /// `(debate_pqr - rule) / |rule|`, in percent.
    pub buyer_value_gain_pct: f64,
    pub seller_reward_gain_pct: f64,
}

/// Relative improvement of `ours` over `baseline`, in percent; positive means
/// `ours` is larger.
pub fn percent_gain(ours: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if ours == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(ours)
        }
    } else {
        100.0 * (ours - baseline) / baseline.abs()
    }
}

/// Runs both strategies on the same config and traces.
pub fn compare(
    config: &SimulationConfig,
    traces: &TraceSet,
) -> Result<(Comparison, SimulationReport, SimulationReport)> {
    let with = |strategy| SimulationConfig {
        strategy,
        ..config.clone()
    };
    let ours = run_simulation(&with(Strategy::DebatePqr), traces)?;
    let base = run_simulation(&with(Strategy::Rule), traces)?;
    let (d, r) = (StrategySummary::of(&ours), StrategySummary::of(&base));
    let cmp = Comparison {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.clone(),
        n_prosumers: traces.n_prosumers(),
        buyer_value_gain_pct: percent_gain(d.total_buyer_value, r.total_buyer_value),
        seller_reward_gain_pct: percent_gain(d.cumulative_seller_reward, r.cumulative_seller_reward),
        debate_pqr: d,
        rule: r,
    };
    Ok((cmp, ours, base))
}
