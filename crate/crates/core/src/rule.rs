//! Greedy baseline: buyers in registration order take energy from the
//! cheapest seller that still has capacity, and each transaction clears at
//! the midpoint of the seller's ask and the buyer's reference price.

use crate::market::{AllocationMatrix, MarketPeriod, PriceMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RuleOutcome {
    pub allocation: AllocationMatrix,
    /// Midpoint price for every pair; only pairs with `x > 0` trade.
    pub prices: PriceMatrix,
}

pub fn rule_allocate(period: &MarketPeriod) -> RuleOutcome {
    let (ns, nb) = (period.n_sellers(), period.n_buyers());
    let mut x = AllocationMatrix::zeros(ns, nb);
    let mut prices = PriceMatrix::zeros(ns, nb);
    for (i, s) in period.sellers.iter().enumerate() {
        for (j, b) in period.buyers.iter().enumerate() {
            prices.set(i, j, 0.5 * (s.price + b.profile.ref_price));
        }
    }

    let mut capacity: Vec<f64> = period.sellers.iter().map(|s| s.surplus).collect();

    // cheapest first, lower id on ties
    let mut seller_order: Vec<usize> = (0..ns).collect();
    seller_order.sort_by(|&a, &b| {
        let (sa, sb) = (&period.sellers[a], &period.sellers[b]);
        sa.price
            .total_cmp(&sb.price)
            .then(sa.profile.id.cmp(&sb.profile.id))
    });
    let mut buyer_order: Vec<usize> = (0..nb).collect();
    buyer_order.sort_by_key(|&j| period.buyers[j].profile.id);

    for j in buyer_order {
        let w = period.buyers[j].demand;
        let mut open = 1.0;
        for &i in &seller_order {
            if open <= 0.0 {
                break;
            }
            let l = period.loss.get(i, j);
            if l >= period.l_max || capacity[i] <= 0.0 {
                continue;
            }
            let deliverable = capacity[i] / ((1.0 + l) * w);
            if open <= deliverable {
                x.set(i, j, open);
                capacity[i] = (capacity[i] - (1.0 + l) * open * w).max(0.0);
                open = 0.0;
            } else {
                x.set(i, j, deliverable);
                capacity[i] = 0.0;
                open -= deliverable;
            }
        }
    }

    RuleOutcome {
        allocation: x,
        prices,
    }
}
