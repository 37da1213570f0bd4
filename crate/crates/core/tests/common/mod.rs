//! Random instances shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superhedge::bsde::monotonicity_report;
use superhedge::drivers::{borrow_lend_driver, large_trader_driver, perfect_driver, LargeTraderImpact};
use superhedge::{build_tree, Driver, MarketParams, Obstacle, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Perfect,
    BorrowLend,
    LargeTrader,
}

pub const KINDS: [Kind; 3] = [Kind::Perfect, Kind::BorrowLend, Kind::LargeTrader];

pub struct Instance {
    pub label: String,
    pub params: MarketParams,
    pub tree: Tree,
    pub driver: Arc<dyn Driver>,
    pub obstacle: Obstacle,
}

/// Market with `theta2` in `[-0.5, 0.5]` so the jump-monotonicity
/// assumption holds for the linear part of every shipped driver.
pub fn random_market(rng: &mut ChaCha8Rng, lambda: f64) -> MarketParams {
    let r = rng.random_range(0.0..0.06);
    let sigma1 = rng.random_range(0.15..0.4);
    let sigma2 = rng.random_range(0.1..0.35);
    let mu1 = r + rng.random_range(-0.05..0.08);
    let theta1 = (mu1 - r) / sigma1;
    let theta2 = rng.random_range(-0.5..0.5);
    let mu2 = sigma2 * theta1 + r - theta2 * lambda;
    MarketParams::constant(r, mu1, mu2, sigma1, sigma2, lambda, 1.0, 1.0, 1.0)
}

pub fn random_lambda(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.3) {
        0.0
    } else {
        rng.random_range(0.1..0.6)
    }
}

pub fn make_driver(kind: Kind, params: &MarketParams, rng: &mut ChaCha8Rng) -> Arc<dyn Driver> {
    match kind {
        Kind::Perfect => Arc::new(perfect_driver(params).unwrap()),
        Kind::BorrowLend => {
            let r = params.at(0.0).r;
            Arc::new(borrow_lend_driver(params, r + 0.02).unwrap())
        }
        Kind::LargeTrader => {
            let impact = LargeTraderImpact {
                alpha: rng.random_range(-0.01..0.01),
                gamma: rng.random_range(-0.3..0.3),
                domain_bound: 3.0,
            };
            Arc::new(large_trader_driver(params, impact).unwrap())
        }
    }
}

/// Random payoff of unit scale: a put or call on `S1` or `S2`, a payment on
/// default, and in half the cases independent node-by-node noise.
pub fn random_obstacle(tree: &Tree, rng: &mut ChaCha8Rng) -> Obstacle {
    let k1 = rng.random_range(0.85..1.2);
    let k2 = rng.random_range(0.85..1.2);
    let w_put = rng.random_range(0.0..1.0);
    let w_call = rng.random_range(0.0..1.0);
    let w_s2 = rng.random_range(0.0..0.5);
    let recovery = rng.random_range(0.0..0.3);
    let base = Obstacle::from_payoff(tree, |_, s1, s2, defaulted| {
        w_put * (k1 - s1).max(0.0)
            + w_call * (s1 - k2).max(0.0)
            + w_s2 * (k2 - s2).max(0.0)
            + if defaulted { recovery } else { 0.0 }
    });
    if rng.random_bool(0.5) {
        let noisy = base.values().iter().map(|v| v + rng.random_range(0.0..0.1)).collect();
        Obstacle::from_values(tree, noisy).unwrap()
    } else {
        base
    }
}

/// Draws instances of the given driver until one passes the monotonicity
/// report, so comparison-based claims apply.
pub fn random_instance(rng: &mut ChaCha8Rng, kind: Kind, n_steps: usize, lambda: Option<f64>) -> Instance {
    loop {
        let lambda = lambda.unwrap_or_else(|| random_lambda(rng));
        let params = random_market(rng, lambda);
        let tree = build_tree(&params, n_steps).unwrap();
        let driver = make_driver(kind, &params, rng);
        let report = monotonicity_report(&tree, driver.as_ref(), 200, 2.0, rng.random()).unwrap();
        if !report.pass {
            continue;
        }
        let obstacle = random_obstacle(&tree, rng);
        return Instance {
            label: format!("{kind:?} n={n_steps} lambda={lambda:.3}"),
            params,
            tree,
            driver,
            obstacle,
        };
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
