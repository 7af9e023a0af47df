//! Steady-state differential evolution over allocation matrices.
//!
//! Every candidate is kept feasible: trial vectors are built by rand/1/bin
//! mutation and crossover, clipped to the unit box, then projected back onto
//! the constraint set by [`repair`] before their fitness is compared with the
//! parent's.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::market::{buyer_value, fitness_unchecked, AllocationMatrix, MarketPeriod};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebateParams {
    /// Population size.
    pub np: usize,
    /// Number of generations.
    pub g_max: usize,
    /// Crossover probability.
    pub cr: f64,
    /// Differential weight.
    pub f: f64,
    pub seed: u64,
}

impl Default for DebateParams {
    fn default() -> Self {
        DebateParams {
            np: 20,
            g_max: 10_000,
            cr: 0.9,
            f: 0.5,
            seed: 0,
        }
    }
}

impl DebateParams {
    pub fn validate(&self) -> Result<()> {
        if self.np < 4 {
            return Err(MarketError::invalid(format!("np = {} (need >= 4)", self.np)));
        }
        if self.g_max < 1 {
            return Err(MarketError::invalid("g_max must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(MarketError::invalid(format!("cr = {} outside [0, 1]", self.cr)));
        }
        if !(0.0..=2.0).contains(&self.f) {
            return Err(MarketError::invalid(format!("f = {} outside [0, 2]", self.f)));
        }
        Ok(())
    }
}

/// A set of feasible candidate allocations.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub candidates: Vec<AllocationMatrix>,
}

/// Result of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct DebateOutcome {
    pub allocation: AllocationMatrix,
    pub fitness: f64,
    /// Best fitness in the population after each generation.
    pub trace: Vec<f64>,
}

/// Uniform samples in the unit box, each repaired into the feasible set.
pub fn init_population<R: Rng + ?Sized>(
    period: &MarketPeriod,
    params: &DebateParams,
    rng: &mut R,
) -> Population {
    let (ns, nb) = (period.n_sellers(), period.n_buyers());
    let candidates = (0..params.np)
        .map(|_| {
            let mut x = AllocationMatrix::zeros(ns, nb);
            if !period.is_degenerate() {
                for v in x.as_mut_slice() {
                    *v = rng.random::<f64>();
                }
                repair_in_place(x.as_mut_slice(), period);
            }
            x
        })
        .collect();
    Population { candidates }
}

/// Builds a trial vector from target `x_k` and donors `x_a`, `x_b`, `x_c`.
pub fn mutate_crossover<R: Rng + ?Sized>(
    x_k: &AllocationMatrix,
    x_a: &AllocationMatrix,
    x_b: &AllocationMatrix,
    x_c: &AllocationMatrix,
    params: &DebateParams,
    rng: &mut R,
) -> AllocationMatrix {
    let mut out = x_k.clone();
    crossover_into(
        out.as_mut_slice(),
        x_a.as_slice(),
        x_b.as_slice(),
        x_c.as_slice(),
        params,
        &mut Vec::new(),
        rng,
    );
    out
}

/// `out` holds the target on entry. The forced position is drawn first, then
/// one 32-bit uniform per component in row-major order; a component is
/// recombined when its draw falls below `cr * 2^32`.
#[inline]
fn crossover_into<R: Rng + ?Sized>(
    out: &mut [f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    params: &DebateParams,
    draws: &mut Vec<u32>,
    rng: &mut R,
) {
    let n = out.len();
    if n == 0 {
        return;
    }
    let forced = rng.random_range(0..n);
    draws.resize(n, 0);
    rng.fill(&mut draws[..]);
    let threshold = crossover_threshold(params.cr);
    let f = params.f;
    for (((o, &u), (&a, &b)), &c) in out.iter_mut().zip(draws.iter()).zip(a.iter().zip(b)).zip(c) {
        if u64::from(u) < threshold {
            *o = (a + f * (b - c)).clamp(0.0, 1.0);
        }
    }
    out[forced] = (a[forced] + f * (b[forced] - c[forced])).clamp(0.0, 1.0);
}

fn crossover_threshold(cr: f64) -> u64 {
    (cr * 4_294_967_296.0).ceil() as u64
}

/// Projects `x` onto the feasible set: excluded lines are zeroed, sellers
/// over capacity are scaled down, then buyers over-served are scaled down.
pub fn repair(x: &AllocationMatrix, period: &MarketPeriod) -> AllocationMatrix {
    let mut out = x.clone();
    repair_in_place(out.as_mut_slice(), period);
    out
}

/// Per-period constants and scratch buffers for the inner loop.
///
/// Candidates are held compactly: one value per allowed line, in row-major
/// order. Excluded lines are always zero after repair, and skipping them
/// leaves every sum unchanged.
struct Kernel<'p> {
    period: &'p MarketPeriod,
    nb: usize,
    /// Full row-major index of each allowed line.
    allowed: Vec<usize>,
    /// Compact index of each full position, `usize::MAX` when excluded.
    slot: Vec<usize>,
    /// Compact range of each seller row.
    row_start: Vec<usize>,
    col: Vec<usize>,
    /// `(1 + l_ij) * w_j` per allowed line.
    ship: Vec<f64>,
    /// `w_j` per allowed line.
    demand: Vec<f64>,
    price: Vec<f64>,
    draws: Vec<u32>,
    local: Vec<f64>,
    bought: Vec<f64>,
}

impl<'p> Kernel<'p> {
    fn new(period: &'p MarketPeriod) -> Self {
        let (ns, nb) = (period.n_sellers(), period.n_buyers());
        let loss = period.loss.as_slice();
        let allowed: Vec<usize> = (0..ns * nb).filter(|&k| loss[k] < period.l_max).collect();
        let mut slot = vec![usize::MAX; ns * nb];
        for (i, &k) in allowed.iter().enumerate() {
            slot[k] = i;
        }
        let mut row_start = vec![0; ns + 1];
        for &k in &allowed {
            row_start[k / nb + 1] += 1;
        }
        for i in 0..ns {
            row_start[i + 1] += row_start[i];
        }
        Kernel {
            period,
            nb,
            slot,
            row_start,
            col: allowed.iter().map(|&k| k % nb).collect(),
            ship: allowed.iter().map(|&k| (1.0 + loss[k]) * period.buyers[k % nb].demand).collect(),
            demand: allowed.iter().map(|&k| period.buyers[k % nb].demand).collect(),
            price: period.sellers.iter().map(|s| s.price).collect(),
            allowed,
            draws: Vec::new(),
            local: vec![0.0; nb],
            bought: vec![0.0; nb],
        }
    }

    fn compress(&self, x: &[f64]) -> Vec<f64> {
        self.allowed.iter().map(|&k| x[k]).collect()
    }

    fn expand(&self, v: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        for (&k, &v) in self.allowed.iter().zip(v) {
            x[k] = v;
        }
    }

    /// Crossover as in [`mutate_crossover`], except that excluded lines get
    /// no draw: repair zeroes them either way, so the repaired trial has the
    /// same distribution.
    fn crossover<R: Rng + ?Sized>(
        &mut self,
        out: &mut [f64],
        a: &[f64],
        b: &[f64],
        c: &[f64],
        params: &DebateParams,
        rng: &mut R,
    ) {
        let n = self.slot.len();
        if n == 0 {
            return;
        }
        let forced = self.slot[rng.random_range(0..n)];
        let m = out.len();
        self.draws.resize(m, 0);
        rng.fill(&mut self.draws[..]);
        let threshold = crossover_threshold(params.cr);
        let f = params.f;
        let (a, b, c, draws) = (&a[..m], &b[..m], &c[..m], &self.draws[..m]);
        for i in 0..m {
            let mutant = (a[i] + f * (b[i] - c[i])).clamp(0.0, 1.0);
            out[i] = if u64::from(draws[i]) < threshold { mutant } else { out[i] };
        }
        if forced != usize::MAX {
            out[forced] = (a[forced] + f * (b[forced] - c[forced])).clamp(0.0, 1.0);
        }
    }

    fn repair(&mut self, v: &mut [f64]) {
        for (i, seller) in self.period.sellers.iter().enumerate() {
            let seg = self.row_start[i]..self.row_start[i + 1];
            let row = &mut v[seg.clone()];
            let shipped: f64 = row.iter().zip(&self.ship[seg]).map(|(v, s)| s * v).sum();
            if shipped > seller.surplus {
                let scale = seller.surplus / shipped;
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
        }

        // column sums accumulate in seller order
        let total = &mut self.bought;
        total.fill(0.0);
        for (&j, &v) in self.col.iter().zip(v.iter()) {
            total[j] += v;
        }
        if total.iter().any(|&t| t > 1.0) {
            // dividing by 1 leaves a value unchanged
            for t in total.iter_mut() {
                *t = t.max(1.0);
            }
            for (&j, v) in self.col.iter().zip(v.iter_mut()) {
                *v /= total[j];
            }
        }
    }

    /// Same value as the market's fitness, with identical summation order.
    fn fitness(&mut self, v: &[f64]) -> f64 {
        if self.nb == 0 {
            return 0.0;
        }
        self.local.fill(0.0);
        self.bought.fill(0.0);
        for (i, &p) in self.price.iter().enumerate() {
            let seg = self.row_start[i]..self.row_start[i + 1];
            for ((&j, &v), &w) in self.col[seg.clone()].iter().zip(&v[seg.clone()]).zip(&self.demand[seg]) {
                self.local[j] += p * v * w;
                self.bought[j] += v;
            }
        }
        let rho_gs = self.period.rho_gs;
        let mut sum = 0.0;
        for (j, b) in self.period.buyers.iter().enumerate() {
            let w = b.demand;
            let y = self.local[j] + rho_gs * (1.0 - self.bought[j]) * w;
            sum += buyer_value(y, w, &b.profile);
        }
        sum
    }
}

pub(crate) fn repair_in_place(x: &mut [f64], period: &MarketPeriod) {
    let mut kernel = Kernel::new(period);
    let mut v = kernel.compress(x);
    kernel.repair(&mut v);
    kernel.expand(&v, x);
}

/// Three distinct indices in `0..np`, all different from `k`.
fn pick_donors<R: Rng + ?Sized>(k: usize, np: usize, rng: &mut R) -> (usize, usize, usize) {
    let mut draw = |taken: &[usize]| loop {
        let v = rng.random_range(0..np);
        if v != k && !taken.contains(&v) {
            break v;
        }
    };
    let a = draw(&[]);
    let b = draw(&[a]);
    let c = draw(&[a, b]);
    (a, b, c)
}

/// Runs the solver for `params.g_max` generations and returns the fittest
/// member of the final population.
pub fn debate_run<R: Rng + ?Sized>(
    period: &MarketPeriod,
    params: &DebateParams,
    rng: &mut R,
) -> Result<DebateOutcome> {
    params.validate()?;
    let (ns, nb) = (period.n_sellers(), period.n_buyers());

    if period.is_degenerate() {
        let allocation = AllocationMatrix::zeros(ns, nb);
        let fitness = fitness_unchecked(allocation.as_slice(), period);
        return Ok(DebateOutcome {
            allocation,
            fitness,
            trace: vec![fitness; params.g_max],
        });
    }

    let mut kernel = Kernel::new(period);
    let mut pop: Vec<Vec<f64>> = init_population(period, params, rng)
        .candidates
        .iter()
        .map(|x| kernel.compress(x.as_slice()))
        .collect();
    let mut fit: Vec<f64> = pop.iter().map(|v| kernel.fitness(v)).collect();
    let mut best = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut trial = vec![0.0; kernel.allowed.len()];
    let mut trace = Vec::with_capacity(params.g_max);

    for _ in 0..params.g_max {
        for k in 0..params.np {
            let (a, b, c) = pick_donors(k, params.np, rng);
            trial.copy_from_slice(&pop[k]);
            kernel.crossover(&mut trial, &pop[a], &pop[b], &pop[c], params, rng);
            kernel.repair(&mut trial);
            let f = kernel.fitness(&trial);
            if f > fit[k] {
                std::mem::swap(&mut pop[k], &mut trial);
                fit[k] = f;
                if f > best {
                    best = f;
                }
            }
        }
        trace.push(best);
    }

    // first index wins ties
    let mut arg = 0;
    for (k, &f) in fit.iter().enumerate() {
        if f > fit[arg] {
            arg = k;
        }
    }
    let mut allocation = AllocationMatrix::zeros(ns, nb);
    kernel.expand(&pop[arg], allocation.as_mut_slice());
    Ok(DebateOutcome {
        allocation,
        fitness: fit[arg],
        trace,
    })
}
