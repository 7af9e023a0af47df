//! Random single-period markets for solver experiments.

use rand::Rng;

use crate::config::{Range, SimulationConfig};
use crate::market::{Buyer, LossMatrix, MarketPeriod, ProsumerProfile, Seller};

/// Per-period energy range used for both demand and surplus, in kWh.
pub const ENERGY_KWH: Range = Range::new(1.0, 10.0);

fn draw<R: Rng + ?Sized>(rng: &mut R, r: Range) -> f64 {
    if r.lo == r.hi {
        r.lo
    } else {
        rng.random_range(r.lo..=r.hi)
    }
}

fn profile<R: Rng + ?Sized>(id: usize, config: &SimulationConfig, rng: &mut R) -> ProsumerProfile {
    ProsumerProfile {
        id,
        k_plus: draw(rng, config.pt.k_plus),
        k_minus: draw(rng, config.pt.k_minus),
        zeta_plus: draw(rng, config.pt.zeta_plus),
        zeta_minus: draw(rng, config.pt.zeta_minus),
        ref_price: draw(rng, config.buyer_ref_price),
    }
}

/// Draws a market with the config's parameter ranges. Seller asks are
/// continuous in `seller_init_price`; losses come from `loss_values`.
pub fn random_period<R: Rng + ?Sized>(
    n_sellers: usize,
    n_buyers: usize,
    config: &SimulationConfig,
    rng: &mut R,
) -> MarketPeriod {
    let sellers = (0..n_sellers)
        .map(|i| Seller {
            profile: profile(i, config, rng),
            surplus: draw(rng, ENERGY_KWH),
            price: draw(rng, config.seller_init_price),
        })
        .collect();
    let buyers = (0..n_buyers)
        .map(|j| Buyer {
            profile: profile(n_sellers + j, config, rng),
            demand: draw(rng, ENERGY_KWH),
        })
        .collect();
    let mut loss = LossMatrix::zeros(n_sellers, n_buyers);
    for i in 0..n_sellers {
        for j in 0..n_buyers {
            loss.set(i, j, config.loss_values[rng.random_range(0..config.loss_values.len())]);
        }
    }
    MarketPeriod::new(0, buyers, sellers, loss, config.l_max, config.rho_gb, config.rho_gs)
        .expect("sampled market is valid")
}
