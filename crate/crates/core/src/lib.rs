//! Superhedging prices of American options in a market with default,
//! computed from reflected backward equations on a discrete tree.
//!
//! The tree carries one binomial Brownian move and one default event per
//! step. [`rbsde::solve_rbsde_lower`] gives the seller's price,
//! [`rbsde::solve_rbsde_upper`] the buyer's; [`hedging`] replays the
//! resulting strategies forward and [`oracle`] holds brute-force references.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod cli;
pub mod drivers;
pub mod error;
pub mod exec;
pub mod hedging;
pub mod market;
pub mod oracle;
pub mod pricing;
pub mod rbsde;
pub mod stopping;

pub use bsde::{g_evaluation, martingale_check, solve_bsde, BackwardScheme, Solution};
pub use drivers::{borrow_lend_driver, large_trader_driver, perfect_driver, Driver};
pub use error::{Error, Result};
pub use exec::Execution;
pub use market::{build_tree, MarketParams, NodeId, Tree};
pub use pricing::{buyer_price, price, seller_price, PricingReport, Strategy};
pub use rbsde::{solve_rbsde_lower, solve_rbsde_upper, Obstacle};
pub use stopping::StoppingRule;
