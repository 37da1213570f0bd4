//! Batch front end: read a job document, price, hedge, verify, and write
//! the artifacts.

pub mod config;
pub mod expr;
pub mod json;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::bsde::{monotonicity_report, BackwardScheme};
use crate::drivers::{check_gamma_assumption, check_lambda_admissible, Driver, SampleGrid, Shifted};
use crate::error::Error;
use crate::hedging::{
    simulate_wealth, verify_superhedge_buyer, verify_superhedge_seller, write_violations_csv, write_wealth_csv,
    WealthField, WealthOptions,
};
use crate::market::{build_tree, Tree};
use crate::oracle::{apriori_estimate_check, brute_force_buyer_value, brute_force_seller_value, MAX_ENUMERATION_STEPS};
use crate::pricing::{check_sign_dominance, epsilon_rational, is_rational, Pricing, PricingReport, INTERVAL_TOL};
use crate::rbsde::{skorokhod_residual, Obstacle, Side};

use config::{make_driver, make_obstacle, parse_config, Check, Job, JobConfig};

/// Why a run stopped; each kind has its own exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or parameters (exit 2).
    Validation(String),
    /// A numerical solver failed (exit 3).
    Solver(String),
    /// A requested verification failed under `--strict` (exit 4).
    Verification(String),
    /// Artifacts could not be written (exit 1).
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Verification(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid configuration: {m}"),
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. } => Failure::Solver(e.to_string()),
            Error::InvalidParameter { ref field, ref reason } => Failure::Validation(format!("`{field}`: {reason}")),
            Error::DefaultProbability { .. } | Error::EnumerationGuard { .. } => {
                Failure::Validation(format!("`grid.n_steps`: {e}"))
            }
            other => Failure::Validation(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Command-line switches of `superhedge price`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub strict: bool,
    pub dump_tree: bool,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_OUTPUT_DIR: &str = "superhedge-out";

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    #[serde(flatten)]
    pub pricing: PricingReport,
    pub verification: Option<Verification>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub u0: f64,
    pub v0: f64,
    pub verification_passed: Option<bool>,
}

const DEFAULT_CHECKS: [Check; 4] = [Check::Superhedge, Check::Skorokhod, Check::Rational, Check::Interval];

/// Reads the configuration at `options.config`, then runs it.
pub fn run(options: &RunOptions) -> Result<RunSummary, Failure> {
    let text = fs::read_to_string(&options.config)
        .map_err(|e| Failure::Validation(format!("`config`: cannot read {}: {e}", options.config.display())))?;
    let config = parse_config(&text)?;
    run_config(&config, options)
}

struct Context<'a> {
    config: &'a JobConfig,
    tree: Tree,
    driver: std::sync::Arc<dyn Driver>,
    obstacle: Obstacle,
    pricing: Pricing,
    wealth: WealthOptions,
    out_dir: PathBuf,
}

pub fn run_config(config: &JobConfig, options: &RunOptions) -> Result<RunSummary, Failure> {
    let strict = options.strict || config.strict;
    let out_dir = options
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

    let tree = build_tree(&config.market, config.grid.n_steps)?;
    let driver = make_driver(&config.driver, &config.market)?;
    let obstacle = make_obstacle(&config.payoff, &tree)?;
    let checks: Vec<Check> = if !config.verify.is_empty() {
        config.verify.clone()
    } else if config.jobs.contains(&Job::Verify) {
        DEFAULT_CHECKS.to_vec()
    } else {
        Vec::new()
    };
    if checks.contains(&Check::Duality) && tree.n_steps() > MAX_ENUMERATION_STEPS {
        return Err(Failure::Validation(format!(
            "`grid.n_steps`: duality check enumerates stopping rules and supports at most {MAX_ENUMERATION_STEPS} steps, got {}",
            tree.n_steps()
        )));
    }

    let pricing = BackwardScheme::default().price(&tree, driver.as_ref(), &obstacle)?;
    fs::create_dir_all(&out_dir).map_err(|e| io_failure(&out_dir, e))?;
    let cx = Context {
        config,
        tree,
        driver,
        obstacle,
        pricing,
        wealth: WealthOptions {
            seed: config.seed,
            ..Default::default()
        },
        out_dir,
    };

    let mut seller_wealth = None;
    let mut buyer_wealth = None;
    if config.jobs.contains(&Job::Hedge) {
        let (s, b) = cx.simulate()?;
        write_csv(&cx.out_dir.join("wealth.csv"), |f| write_wealth_csv(f, &s))?;
        write_csv(&cx.out_dir.join("buyer_wealth.csv"), |f| write_wealth_csv(f, &b))?;
        seller_wealth = Some(s);
        buyer_wealth = Some(b);
    }

    let verification = if checks.is_empty() {
        None
    } else {
        let mut outcomes = Vec::with_capacity(checks.len());
        for check in &checks {
            outcomes.push(cx.run_check(*check, &mut seller_wealth, &mut buyer_wealth)?);
        }
        let all_passed = outcomes.iter().all(|c| c.pass);
        Some(Verification {
            checks: outcomes,
            all_passed,
        })
    };

    let report = ReportDocument {
        pricing: cx.pricing.report(),
        verification,
    };
    write_json(&cx.out_dir.join("report.json"), &report)?;
    if options.dump_tree {
        write_json(&cx.out_dir.join("tree.json"), &cx.tree.to_document())?;
    }

    let verification_passed = report.verification.as_ref().map(|v| v.all_passed);
    if strict && verification_passed == Some(false) {
        let failed: Vec<&str> = report
            .verification
            .iter()
            .flat_map(|v| v.checks.iter().filter(|c| !c.pass).map(|c| c.name))
            .collect();
        return Err(Failure::Verification(failed.join(", ")));
    }
    Ok(RunSummary {
        out_dir: cx.out_dir,
        u0: report.pricing.u0,
        v0: report.pricing.v0,
        verification_passed,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = json::to_canonical_string(value).map_err(|e| io_failure(path, e))?;
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn write_csv(path: &Path, write: impl FnOnce(fs::File) -> csv::Result<()>) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| io_failure(path, e))?;
    write(file).map_err(|e| io_failure(path, e))
}

impl Context<'_> {
    fn simulate(&self) -> Result<(WealthField, WealthField), Failure> {
        let d = self.driver.as_ref();
        let p = &self.pricing;
        let seller = simulate_wealth(&self.tree, p.seller.u0, &p.seller.strategy, d, &self.wealth)?;
        let buyer = simulate_wealth(&self.tree, -p.buyer.v0, &p.buyer.strategy, d, &self.wealth)?;
        Ok((seller, buyer))
    }

    fn run_check(
        &self,
        check: Check,
        seller_wealth: &mut Option<WealthField>,
        buyer_wealth: &mut Option<WealthField>,
    ) -> Result<CheckOutcome, Failure> {
        let tree = &self.tree;
        let d = self.driver.as_ref();
        let xi = &self.obstacle;
        let p = &self.pricing;
        let (u0, v0) = (p.seller.u0, p.buyer.v0);
        let (pass, details) = match check {
            Check::Superhedge => {
                if seller_wealth.is_none() || buyer_wealth.is_none() {
                    let (s, b) = self.simulate()?;
                    *seller_wealth = Some(s);
                    *buyer_wealth = Some(b);
                }
                let (sw, bw) = (seller_wealth.as_ref().unwrap(), buyer_wealth.as_ref().unwrap());
                let seller = verify_superhedge_seller(sw, xi);
                let buyer = verify_superhedge_buyer(bw, xi, &p.buyer.exercise);
                write_csv(&self.out_dir.join("violations.csv"), |f| {
                    write_violations_csv(f, &seller.violations)
                })?;
                write_csv(&self.out_dir.join("buyer_violations.csv"), |f| {
                    write_violations_csv(f, &buyer.violations)
                })?;
                (
                    seller.pass && buyer.pass,
                    json!({
                        "coverage": sw.coverage,
                        "seller_min_slack": seller.min_slack,
                        "seller_states": seller.states_checked,
                        "seller_violations": seller.violations.len(),
                        "buyer_min_slack": buyer.min_slack,
                        "buyer_max_abs_slack": buyer.max_abs_slack,
                        "buyer_stopped_states": buyer.states_checked,
                        "buyer_violations": buyer.violations.len(),
                    }),
                )
            }
            Check::Duality => {
                let seller = brute_force_seller_value(tree, d, xi)?;
                let buyer = brute_force_buyer_value(tree, d, xi)?;
                let (es, eb) = ((seller.value - u0).abs(), (buyer.value - v0).abs());
                (
                    es <= 1e-12 && eb <= 1e-12,
                    json!({
                        "rules": seller.rules,
                        "brute_force_seller": seller.value,
                        "brute_force_buyer": buyer.value,
                        "seller_error": es,
                        "buyer_error": eb,
                    }),
                )
            }
            Check::Apriori => {
                let c = d.lipschitz_c();
                let delta = 0.1;
                let eta = if c > 0.0 { 1.0 / (c * c) } else { 1.0 };
                let beta = 3.0 / eta + 2.0 * c;
                let shifted = Shifted::new(self.driver.clone(), delta);
                let rep = apriori_estimate_check(tree, d, &shifted, xi, eta, beta)?;
                (rep.pass, json!({ "delta": delta, "report": rep }))
            }
            Check::Rational => {
                let sol = &p.seller.solution;
                let scheme = BackwardScheme::default();
                let mut pass = true;
                let mut details = serde_json::Map::new();
                for (name, rule) in [("nu_star", &p.nu_star), ("nu_bar", &p.nu_bar)] {
                    let r = is_rational(tree, sol, xi, rule);
                    let value = scheme.g_evaluation(tree, d, rule, xi.values())?;
                    let err = (value - u0).abs();
                    pass &= r.rational && err <= 1e-10;
                    details.insert(name.into(), json!({ "rational": r, "value": value, "error": err }));
                }
                (pass, serde_json::Value::Object(details))
            }
            Check::Epsilon => {
                let mut pass = true;
                let mut prev = f64::INFINITY;
                let mut rows = Vec::new();
                for eps in [0.1, 0.01, 0.001] {
                    let e = epsilon_rational(tree, d, &p.seller.solution, xi, eps)?;
                    pass &= e.within_bound && e.gap <= prev + 1e-12;
                    prev = e.gap;
                    rows.push(json!({ "eps": eps, "gap": e.gap, "bound": e.bound }));
                }
                (pass, json!(rows))
            }
            Check::Skorokhod => {
                let low = &p.seller.solution;
                let up = &p.buyer.solution;
                let neg = xi.negated();
                let rl = skorokhod_residual(low, xi, Side::Lower);
                let ru = skorokhod_residual(up, &neg, Side::Upper);
                let ordered = (0..tree.len()).all(|id| {
                    low.y[id] >= xi.at(id) && up.y[id] <= neg.at(id) && low.delta_a[id] >= 0.0 && up.delta_a[id] >= 0.0
                });
                (
                    rl == 0.0 && ru == 0.0 && ordered,
                    json!({ "lower_residual": rl, "upper_residual": ru, "barriers_respected": ordered }),
                )
            }
            Check::Interval => {
                let grid = SampleGrid::from_tree(tree, 1000, 1.0, self.config.seed);
                let dominance = check_sign_dominance(d, &grid.lipschitz);
                let ordered = v0 <= u0 + INTERVAL_TOL;
                (
                    ordered,
                    json!({ "u0": u0, "v0": v0, "width": u0 - v0, "sign_dominance": dominance }),
                )
            }
            Check::Monotonicity => {
                let rep = monotonicity_report(tree, d, 1000, 1.0, self.config.seed)?;
                (rep.pass, json!(rep))
            }
            Check::Lipschitz => {
                let grid = SampleGrid::from_tree(tree, 1000, 1.0, self.config.seed);
                let lip = check_lambda_admissible(d, &grid.lipschitz);
                let gamma = check_gamma_assumption(d, &grid.gamma);
                (lip.pass && gamma.pass, json!({ "lipschitz": lip, "gamma": gamma }))
            }
        };
        Ok(CheckOutcome {
            name: check.name(),
            pass,
            details,
        })
    }
}
