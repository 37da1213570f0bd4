//! Job configuration read by `superhedge price`.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Deserialize;

use super::expr::Expr;
use super::Failure;
use crate::drivers::{borrow_lend_driver, large_trader_driver, perfect_driver, Driver, LargeTraderImpact};
use crate::market::{MarketParams, Tree};
use crate::rbsde::Obstacle;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub market: MarketParams,
    pub grid: Grid,
    pub driver: DriverConfig,
    pub payoff: PayoffConfig,
    #[serde(default = "default_jobs")]
    pub jobs: Vec<Job>,
    #[serde(default)]
    pub verify: Vec<Check>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_jobs() -> Vec<Job> {
    vec![Job::Price]
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n_steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayoffKind {
    Put,
    Call,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
pub enum Underlying {
    #[default]
    S1,
    S2,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffConfig {
    pub kind: PayoffKind,
    #[serde(default)]
    pub strike: Option<f64>,
    #[serde(default)]
    pub expression: Option<String>,
    #[serde(default)]
    pub underlying: Underlying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Job {
    Price,
    Hedge,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Superhedge,
    Duality,
    Apriori,
    Rational,
    Epsilon,
    Skorokhod,
    Interval,
    Monotonicity,
    Lipschitz,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Superhedge => "superhedge",
            Check::Duality => "duality",
            Check::Apriori => "apriori",
            Check::Rational => "rational",
            Check::Epsilon => "epsilon",
            Check::Skorokhod => "skorokhod",
            Check::Interval => "interval",
            Check::Monotonicity => "monotonicity",
            Check::Lipschitz => "lipschitz",
        }
    }
}

/// Parses a job document, naming the offending field on failure.
pub fn parse_config(text: &str) -> Result<JobConfig, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "config".to_string() } else { path };
        Failure::Validation(format!("`{field}`: {}", e.inner()))
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BorrowLendParams {
    borrow_rate: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

fn driver_params<T: for<'de> Deserialize<'de>>(value: &serde_json::Value) -> Result<T, Failure> {
    let value = if value.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." {
            "driver.params".to_string()
        } else {
            format!("driver.params.{path}")
        };
        Failure::Validation(format!("`{field}`: {}", e.inner()))
    })
}

/// Builds the driver named in the configuration.
pub fn make_driver(config: &DriverConfig, market: &MarketParams) -> Result<Arc<dyn Driver>, Failure> {
    let driver: Arc<dyn Driver> = match config.name.as_str() {
        "perfect" => {
            driver_params::<NoParams>(&config.params)?;
            Arc::new(perfect_driver(market)?)
        }
        "borrow_lend" => {
            let p: BorrowLendParams = driver_params(&config.params)?;
            Arc::new(borrow_lend_driver(market, p.borrow_rate)?)
        }
        "large_trader" => {
            let p: LargeTraderImpact = driver_params(&config.params)?;
            Arc::new(large_trader_driver(market, p)?)
        }
        other => {
            return Err(Failure::Validation(format!(
                "`driver.name`: unknown driver `{other}`, expected one of perfect, borrow_lend, large_trader"
            )))
        }
    };
    Ok(driver)
}

/// Evaluates the configured payoff at every node.
pub fn make_obstacle(config: &PayoffConfig, tree: &Tree) -> Result<Obstacle, Failure> {
    let strike = || {
        config
            .strike
            .filter(|k| k.is_finite())
            .ok_or_else(|| Failure::Validation("`payoff.strike`: required for put and call payoffs".into()))
    };
    let pick = move |s1: f64, s2: f64| match config.underlying {
        Underlying::S1 => s1,
        Underlying::S2 => s2,
    };
    let obstacle = match config.kind {
        PayoffKind::Put => {
            let k = strike()?;
            Obstacle::from_payoff(tree, |_, s1, s2, _| (k - pick(s1, s2)).max(0.0))
        }
        PayoffKind::Call => {
            let k = strike()?;
            Obstacle::from_payoff(tree, |_, s1, s2, _| (pick(s1, s2) - k).max(0.0))
        }
        PayoffKind::Custom => {
            let src = config
                .expression
                .as_deref()
                .ok_or_else(|| Failure::Validation("`payoff.expression`: required for custom payoffs".into()))?;
            let expr = Expr::parse(src).map_err(|e| Failure::Validation(format!("`payoff.expression`: {e}")))?;
            Obstacle::from_payoff(tree, |t, s1, s2, d| expr.eval(t, s1, s2, d))
        }
    };
    if let Some(id) = obstacle.values().iter().position(|v| !v.is_finite()) {
        return Err(Failure::Validation(format!(
            "`payoff`: payoff is not finite at node {id}"
        )));
    }
    Ok(obstacle)
}
