//! Per-seller price learning with risk-sensitive tabular Q-learning.
//!
//! Each seller is an independent agent whose state is its posted price on a
//! uniform grid between the grid buying and selling prices. After every
//! trading period the agent moves its price one step up, one step down, or
//! keeps it, and learns from the revenue it would have earned. The TD error
//! is passed through the seller's prospect-theory value function before it
//! is applied to the Q-table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::market::{seller_value, AllocationMatrix, MarketPeriod, ProsumerProfile};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PqrParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Price step in money per kWh.
    pub delta: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
}

impl Default for PqrParams {
    fn default() -> Self {
        PqrParams {
            alpha: 1e-4,
            gamma: 0.9,
            delta: 0.001,
            epsilon0: 1.0,
            epsilon_decay: 0.965,
        }
    }
}

impl PqrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(MarketError::invalid(format!("alpha = {} must be >= 0", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(MarketError::invalid(format!("gamma = {} outside [0, 1)", self.gamma)));
        }
        if !(self.delta > 0.0) {
            return Err(MarketError::invalid("delta must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return Err(MarketError::invalid("epsilon0 outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return Err(MarketError::invalid("epsilon_decay outside [0, 1]"));
        }
        Ok(())
    }
}

/// Discrete price states `rho_gb, rho_gb + delta, ..., rho_gs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    rho_gb: f64,
    rho_gs: f64,
    delta: f64,
    n_states: usize,
}

impl PriceGrid {
    pub fn new(rho_gb: f64, rho_gs: f64, delta: f64) -> Result<Self> {
        if !(rho_gb < rho_gs && delta > 0.0) {
            return Err(MarketError::invalid("price grid needs rho_gb < rho_gs and delta > 0"));
        }
        let steps = (rho_gs - rho_gb) / delta;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 || rounded < 1.0 {
            return Err(MarketError::invalid(format!(
                "price span {} is not a whole number of steps of {delta}",
                rho_gs - rho_gb
            )));
        }
        Ok(PriceGrid {
            rho_gb,
            rho_gs,
            delta,
            n_states: rounded as usize + 1,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rho_gb(&self) -> f64 {
        self.rho_gb
    }

    pub fn rho_gs(&self) -> f64 {
        self.rho_gs
    }

    /// Price of state `m`; the top state is exactly `rho_gs`.
    pub fn price(&self, m: usize) -> f64 {
        assert!(m < self.n_states, "price state {m} out of range");
        if m + 1 == self.n_states {
            self.rho_gs
        } else {
            self.rho_gb + m as f64 * self.delta
        }
    }

    pub fn states(&self) -> Vec<f64> {
        (0..self.n_states).map(|m| self.price(m)).collect()
    }

    /// State index of a price that lies on the grid.
    pub fn index_of(&self, price: f64) -> Option<usize> {
        let m = ((price - self.rho_gb) / self.delta).round();
        if m < 0.0 || m as usize >= self.n_states {
            return None;
        }
        let m = m as usize;
        ((self.price(m) - price).abs() < 1e-9).then_some(m)
    }

    /// Nearest state to `price`, clamped into range.
    pub fn snap(&self, price: f64) -> usize {
        let m = ((price - self.rho_gb) / self.delta).round().max(0.0) as usize;
        m.min(self.n_states - 1)
    }

    pub fn is_admissible(&self, state: usize, action: Action) -> bool {
        let next = state as i64 + action.offset();
        next >= 0 && (next as usize) < self.n_states
    }

    pub fn admissible(&self, state: usize) -> impl Iterator<Item = Action> + '_ {
        Action::ALL
            .into_iter()
            .filter(move |&a| self.is_admissible(state, a))
    }

    pub fn apply(&self, state: usize, action: Action) -> usize {
        debug_assert!(self.is_admissible(state, action));
        (state as i64 + action.offset()) as usize
    }
}

/// Price moves; declaration order is the argmax tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Hold,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Up, Action::Down, Action::Hold];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn offset(self) -> i64 {
        match self {
            Action::Up => 1,
            Action::Down => -1,
            Action::Hold => 0,
        }
    }

    /// Price change in money per kWh.
    pub fn amount(self, delta: f64) -> f64 {
        self.offset() as f64 * delta
    }
}

/// One seller's learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceAgent {
    pub seller_id: usize,
    pub profile: ProsumerProfile,
    pub grid: PriceGrid,
    /// Q-values per state, indexed by [`Action::index`].
    pub q: Vec<[f64; 3]>,
    /// Current price state.
    pub state: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_decay: f64,
    rng: SimRng,
}

/// What one agent did in one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub action: Action,
    pub reward: f64,
    pub td_error: f64,
    pub new_price: f64,
}

impl PriceAgent {
    pub fn new(
        profile: ProsumerProfile,
        grid: PriceGrid,
        initial_state: usize,
        params: &PqrParams,
        rng: SimRng,
    ) -> Result<Self> {
        params.validate()?;
        if initial_state >= grid.n_states() {
            return Err(MarketError::IndexOutOfRange {
                what: "price state",
                index: initial_state,
                len: grid.n_states(),
            });
        }
        Ok(PriceAgent {
            seller_id: profile.id,
            profile,
            grid,
            q: vec![[0.0; 3]; grid.n_states()],
            state: initial_state,
            epsilon: params.epsilon0,
            alpha: params.alpha,
            gamma: params.gamma,
            epsilon_decay: params.epsilon_decay,
            rng,
        })
    }

    pub fn price(&self) -> f64 {
        self.grid.price(self.state)
    }

    #[inline]
    pub fn q_value(&self, state: usize, action: Action) -> f64 {
        self.q[state][action.index()]
    }

    /// Highest-valued admissible action at `state`; earlier actions win ties.
    pub fn greedy_action(&self, state: usize) -> Action {
        let mut best: Option<(Action, f64)> = None;
        for a in self.grid.admissible(state) {
            let v = self.q_value(state, a);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((a, v));
            }
        }
        best.expect("every state has an admissible action").0
    }

    fn max_q(&self, state: usize) -> f64 {
        self.q_value(state, self.greedy_action(state))
    }

    /// Epsilon-greedy choice among actions that keep the price on the grid.
    pub fn select_action<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Action {
        if rng.random::<f64>() < self.epsilon {
            let choices: Vec<Action> = self.grid.admissible(state).collect();
            choices[rng.random_range(0..choices.len())]
        } else {
            self.greedy_action(state)
        }
    }

    /// `reward + gamma * max_a Q(next, a) - Q(state, action)`.
    pub fn td_error(&self, state: usize, action: Action, next: usize, reward: f64) -> f64 {
        reward + self.gamma * self.max_q(next) - self.q_value(state, action)
    }

    /// Adds `alpha * v(td)` to `Q(state, action)`.
    pub fn q_update(&mut self, state: usize, action: Action, td: f64) {
        let dv = self.alpha * seller_value(td, &self.profile);
        self.q[state][action.index()] += dv;
    }

    /// One learning step from the current state, drawing from the agent's own
    /// stream. `reward_at` maps the post-action price to the reward.
    pub fn learn_step(&mut self, reward_at: impl FnOnce(Action, f64) -> f64) -> StepOutcome {
        let mut rng = self.rng.clone();
        let s = self.state;
        let action = self.select_action(s, &mut rng);
        self.rng = rng;
        let next = self.grid.apply(s, action);
        let reward = reward_at(action, self.grid.price(next));
        let td = self.td_error(s, action, next, reward);
        self.q_update(s, action, td);
        self.state = next;
        StepOutcome {
            action,
            reward,
            td_error: td,
            new_price: self.grid.price(next),
        }
    }

    pub fn decay_epsilon(&mut self) {
        self.epsilon *= self.epsilon_decay;
    }
}

/// Energy seller `i` delivered to buyers under `x`, in kWh.
pub fn energy_sold(i: usize, x: &AllocationMatrix, period: &MarketPeriod) -> f64 {
    x.row(i)
        .iter()
        .zip(&period.buyers)
        .map(|(v, b)| v * b.demand)
        .sum()
}

/// Revenue of seller `i` at its post-action price `rho_i + a`.
pub fn seller_reward(
    i: usize,
    action: Action,
    delta: f64,
    x: &AllocationMatrix,
    period: &MarketPeriod,
) -> f64 {
    (period.sellers[i].price + action.amount(delta)) * energy_sold(i, x, period)
}

/// Updates every seller's agent after a period has cleared and returns the
/// new posted prices in seller order. `agents` must yield the agents of
/// `period.sellers` in the same order. Each agent sees only its own row.
pub fn pqr_step<'a>(
    agents: impl IntoIterator<Item = &'a mut PriceAgent>,
    x: &AllocationMatrix,
    period: &MarketPeriod,
) -> Result<Vec<StepOutcome>> {
    let mut out = Vec::with_capacity(period.n_sellers());
    for (i, agent) in agents.into_iter().enumerate() {
        let seller = period.sellers.get(i).ok_or(MarketError::IndexOutOfRange {
            what: "seller",
            index: i,
            len: period.n_sellers(),
        })?;
        if agent.seller_id != seller.profile.id {
            return Err(MarketError::invalid(format!(
                "agent {} paired with seller {}",
                agent.seller_id, seller.profile.id
            )));
        }
        if agent.grid.index_of(seller.price) != Some(agent.state) {
            return Err(MarketError::invalid(format!(
                "seller {} posted {} but agent is at {}",
                seller.profile.id,
                seller.price,
                agent.price()
            )));
        }
        let delta = agent.grid.delta();
        let outcome = agent.learn_step(|a, _| seller_reward(i, a, delta, x, period));
        agent.decay_epsilon();
        out.push(outcome);
    }
    if out.len() != period.n_sellers() {
        return Err(MarketError::invalid(format!(
            "{} agents for {} sellers",
            out.len(),
            period.n_sellers()
        )));
    }
    Ok(out)
}
