//! Market domain types and the prospect-theory value functions.
//!
//! Matrices are indexed `(seller i, buyer j)` and stored row-major, so a
//! row is everything one seller ships and a column is everything one buyer
//! receives.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// Slack applied to the capacity and demand constraints after repair.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A market participant with personal prospect-theory parameters.
///
/// `k_plus`/`k_minus` scale gains and losses, `zeta_plus`/`zeta_minus` bend
/// them. `ref_price` is the buyer's anchor price per kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsumerProfile {
    pub id: usize,
    pub k_plus: f64,
    pub k_minus: f64,
    pub zeta_plus: f64,
    pub zeta_minus: f64,
    pub ref_price: f64,
}

impl ProsumerProfile {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.k_plus,
            self.k_minus,
            self.zeta_plus,
            self.zeta_minus,
            self.ref_price,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(MarketError::invalid(format!(
                "prosumer {}: non-finite parameter",
                self.id
            )));
        }
        if self.k_plus < 0.0 || self.k_minus < 0.0 {
            return Err(MarketError::invalid(format!(
                "prosumer {}: k_plus/k_minus must be >= 0",
                self.id
            )));
        }
        for (name, z) in [("zeta_plus", self.zeta_plus), ("zeta_minus", self.zeta_minus)] {
            if !(z > 0.0 && z <= 1.0) {
                return Err(MarketError::invalid(format!(
                    "prosumer {}: {name} = {z} outside (0, 1]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Dense `|S| x |B|` matrix of per-pair values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerBuyerMatrix {
    n_sellers: usize,
    n_buyers: usize,
    data: Vec<f64>,
}

/// Decision variables: fraction of buyer `j`'s demand bought from seller `i`.
pub type AllocationMatrix = SellerBuyerMatrix;
/// Line-loss fraction per pair.
pub type LossMatrix = SellerBuyerMatrix;
/// Per-transaction price in money per kWh.
pub type PriceMatrix = SellerBuyerMatrix;

impl SellerBuyerMatrix {
    pub fn zeros(n_sellers: usize, n_buyers: usize) -> Self {
        Self::filled(n_sellers, n_buyers, 0.0)
    }

    pub fn filled(n_sellers: usize, n_buyers: usize, value: f64) -> Self {
        SellerBuyerMatrix {
            n_sellers,
            n_buyers,
            data: vec![value; n_sellers * n_buyers],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_buyers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_buyers) {
            return Err(MarketError::invalid("ragged matrix rows"));
        }
        Ok(SellerBuyerMatrix {
            n_sellers: rows.len(),
            n_buyers,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_flat(n_sellers: usize, n_buyers: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_sellers * n_buyers {
            return Err(MarketError::invalid(format!(
                "expected {} entries, got {}",
                n_sellers * n_buyers,
                data.len()
            )));
        }
        Ok(SellerBuyerMatrix {
            n_sellers,
            n_buyers,
            data,
        })
    }

    pub fn n_sellers(&self) -> usize {
        self.n_sellers
    }

    pub fn n_buyers(&self) -> usize {
        self.n_buyers
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_buyers + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_buyers + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_buyers..(i + 1) * self.n_buyers]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n_sellers).map(|i| self.get(i, j)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_sellers).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buyer {
    pub profile: ProsumerProfile,
    /// Net demand `w_j` in kWh.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seller {
    pub profile: ProsumerProfile,
    /// Net surplus `r_i` in kWh.
    pub surplus: f64,
    /// Posted price `rho_i` per kWh.
    pub price: f64,
}

/// Everything one trading period's clearing needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPeriod {
    pub period_index: usize,
    pub buyers: Vec<Buyer>,
    pub sellers: Vec<Seller>,
    pub loss: LossMatrix,
    pub l_max: f64,
    /// Grid buying price (what the grid pays for exports).
    pub rho_gb: f64,
    /// Grid selling price (what buyers pay for imports).
    pub rho_gs: f64,
}

impl MarketPeriod {
    /// Builds a period and checks every structural invariant.
    pub fn new(
        period_index: usize,
        buyers: Vec<Buyer>,
        sellers: Vec<Seller>,
        loss: LossMatrix,
        l_max: f64,
        rho_gb: f64,
        rho_gs: f64,
    ) -> Result<Self> {
        let period = MarketPeriod {
            period_index,
            buyers,
            sellers,
            loss,
            l_max,
            rho_gb,
            rho_gs,
        };
        period.validate()?;
        Ok(period)
    }

    pub fn n_buyers(&self) -> usize {
        self.buyers.len()
    }

    pub fn n_sellers(&self) -> usize {
        self.sellers.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.buyers.is_empty() || self.sellers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_gb > 0.0 && self.rho_gb < self.rho_gs && self.rho_gs.is_finite()) {
            return Err(MarketError::invalid(format!(
                "grid prices must satisfy 0 < rho_gb < rho_gs (got {} / {})",
                self.rho_gb, self.rho_gs
            )));
        }
        if !(0.0..1.0).contains(&self.l_max) && self.l_max != 1.0 {
            return Err(MarketError::invalid(format!("l_max = {} outside [0, 1]", self.l_max)));
        }
        if self.loss.n_sellers() != self.sellers.len() || self.loss.n_buyers() != self.buyers.len() {
            return Err(MarketError::invalid(format!(
                "loss matrix is {}x{}, expected {}x{}",
                self.loss.n_sellers(),
                self.loss.n_buyers(),
                self.sellers.len(),
                self.buyers.len()
            )));
        }
        if let Some(l) = self.loss.as_slice().iter().find(|l| !(0.0..1.0).contains(*l)) {
            return Err(MarketError::invalid(format!("loss fraction {l} outside [0, 1)")));
        }
        let in_band = |p: f64| p >= self.rho_gb - 1e-12 && p <= self.rho_gs + 1e-12;
        for b in &self.buyers {
            b.profile.validate()?;
            if !(b.demand > 0.0 && b.demand.is_finite()) {
                return Err(MarketError::invalid(format!(
                    "buyer {}: demand must be > 0",
                    b.profile.id
                )));
            }
            if !in_band(b.profile.ref_price) {
                return Err(MarketError::invalid(format!(
                    "buyer {}: reference price {} outside [rho_gb, rho_gs]",
                    b.profile.id, b.profile.ref_price
                )));
            }
        }
        for s in &self.sellers {
            s.profile.validate()?;
            if !(s.surplus > 0.0 && s.surplus.is_finite()) {
                return Err(MarketError::invalid(format!(
                    "seller {}: surplus must be > 0",
                    s.profile.id
                )));
            }
            if !in_band(s.price) {
                return Err(MarketError::invalid(format!(
                    "seller {}: price {} outside [rho_gb, rho_gs]",
                    s.profile.id, s.price
                )));
            }
            if self.buyers.iter().any(|b| b.profile.id == s.profile.id) {
                return Err(MarketError::invalid(format!(
                    "prosumer {} is both buyer and seller",
                    s.profile.id
                )));
            }
        }
        Ok(())
    }

    /// Price matrix where every transaction clears at the seller's ask.
    pub fn ask_prices(&self) -> PriceMatrix {
        let mut p = PriceMatrix::zeros(self.n_sellers(), self.n_buyers());
        for (i, s) in self.sellers.iter().enumerate() {
            for j in 0..self.n_buyers() {
                p.set(i, j, s.price);
            }
        }
        p
    }

    fn check_shape(&self, x: &AllocationMatrix) -> Result<()> {
        if x.n_sellers() != self.n_sellers() || x.n_buyers() != self.n_buyers() {
            return Err(MarketError::invalid(format!(
                "allocation is {}x{}, period is {}x{}",
                x.n_sellers(),
                x.n_buyers(),
                self.n_sellers(),
                self.n_buyers()
            )));
        }
        Ok(())
    }
}

/// Total cost `y_j` for buyer `j` when every purchase clears at the seller's
/// ask; unmet demand is bought from the grid at `rho_gs`.
pub fn buyer_total_cost(j: usize, x: &AllocationMatrix, period: &MarketPeriod) -> Result<f64> {
    checked_cost(j, x, period, |i| period.sellers[i].price)
}

/// As [`buyer_total_cost`], with an explicit per-transaction price.
pub fn buyer_total_cost_at(
    j: usize,
    x: &AllocationMatrix,
    prices: &PriceMatrix,
    period: &MarketPeriod,
) -> Result<f64> {
    if prices.n_sellers() != period.n_sellers() || prices.n_buyers() != period.n_buyers() {
        return Err(MarketError::invalid("price matrix shape mismatch"));
    }
    checked_cost(j, x, period, |i| prices.get(i, j))
}

fn checked_cost(
    j: usize,
    x: &AllocationMatrix,
    period: &MarketPeriod,
    price: impl Fn(usize) -> f64,
) -> Result<f64> {
    period.check_shape(x)?;
    if j >= period.n_buyers() {
        return Err(MarketError::IndexOutOfRange {
            what: "buyer",
            index: j,
            len: period.n_buyers(),
        });
    }
    let sum = x.column_sum(j);
    if sum > 1.0 + FEASIBILITY_TOL {
        return Err(MarketError::ColumnOverflow { buyer: j, sum });
    }
    if let Some(v) = (0..period.n_sellers())
        .map(|i| x.get(i, j))
        .find(|v| !(0.0..=1.0).contains(v))
    {
        return Err(MarketError::invalid(format!("allocation fraction {v} outside [0, 1]")));
    }
    Ok(cost_unchecked(j, x.as_slice(), period, price))
}

#[inline]
pub(crate) fn cost_unchecked(
    j: usize,
    x: &[f64],
    period: &MarketPeriod,
    price: impl Fn(usize) -> f64,
) -> f64 {
    let nb = period.n_buyers();
    let w = period.buyers[j].demand;
    let mut local = 0.0;
    let mut bought = 0.0;
    for i in 0..period.n_sellers() {
        let xij = x[i * nb + j];
        local += price(i) * xij * w;
        bought += xij;
    }
    local + period.rho_gs * (1.0 - bought) * w
}

/// Buyer's perceived value of paying `cost` for `demand` kWh, relative to the
/// reference cost `ref_price * demand`. The boundary case takes the loss
/// branch (both branches are 0 there).
pub fn buyer_value(cost: f64, demand: f64, profile: &ProsumerProfile) -> f64 {
    let reference = profile.ref_price * demand;
    if cost < reference {
        profile.k_plus * (reference - cost).powf(profile.zeta_plus)
    } else {
        -profile.k_minus * (cost - reference).powf(profile.zeta_minus)
    }
}

/// Seller's perceived value of a TD error. Zero takes the loss branch.
pub fn seller_value(td: f64, profile: &ProsumerProfile) -> f64 {
    if td > 0.0 {
        profile.k_plus * td.powf(profile.zeta_plus)
    } else {
        -profile.k_minus * (-td).powf(profile.zeta_minus)
    }
}

/// Sum of buyer perceived values at seller ask prices.
pub fn market_fitness(x: &AllocationMatrix, period: &MarketPeriod) -> Result<f64> {
    let mut total = 0.0;
    for (j, b) in period.buyers.iter().enumerate() {
        total += buyer_value(buyer_total_cost(j, x, period)?, b.demand, &b.profile);
    }
    Ok(total)
}

/// Fitness without shape or range checks; `x` must be a feasible flat matrix.
#[inline]
pub(crate) fn fitness_unchecked(x: &[f64], period: &MarketPeriod) -> f64 {
    period
        .buyers
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let y = cost_unchecked(j, x, period, |i| period.sellers[i].price);
            buyer_value(y, b.demand, &b.profile)
        })
        .sum()
}

/// Checks constraints on capacity (with line losses), demand, loss
/// exclusion and the unit box, each with `tol` slack.
pub fn is_feasible(x: &AllocationMatrix, period: &MarketPeriod, tol: f64) -> bool {
    feasibility_violation(x, period, tol).is_none()
}

/// Describes the first violated constraint, if any.
pub fn feasibility_violation(x: &AllocationMatrix, period: &MarketPeriod, tol: f64) -> Option<String> {
    if period.check_shape(x).is_err() {
        return Some("shape mismatch".into());
    }
    let (ns, nb) = (period.n_sellers(), period.n_buyers());
    for i in 0..ns {
        for j in 0..nb {
            let v = x.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Some(format!("x[{i}][{j}] = {v} outside [0, 1]"));
            }
            if period.loss.get(i, j) >= period.l_max && v != 0.0 {
                return Some(format!("x[{i}][{j}] = {v} on an excluded line"));
            }
        }
        let shipped: f64 = (0..nb)
            .map(|j| (1.0 + period.loss.get(i, j)) * x.get(i, j) * period.buyers[j].demand)
            .sum();
        if shipped > period.sellers[i].surplus + tol {
            return Some(format!(
                "seller {i} ships {shipped} > surplus {}",
                period.sellers[i].surplus
            ));
        }
    }
    for j in 0..nb {
        let s = x.column_sum(j);
        if s > 1.0 + tol {
            return Some(format!("buyer {j} receives fraction {s} > 1"));
        }
    }
    None
}
