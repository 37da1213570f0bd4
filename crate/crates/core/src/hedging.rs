//! Forward wealth simulation under a strategy, and superhedging checks.
//!
//! Wealth is path dependent on the recombining lattice, so it is recorded
//! per path state: every path prefix when the tree is small enough to
//! expand, otherwise along a fixed number of sampled paths.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bsde::{BackwardScheme, MartingaleResidual};
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::market::{NodeId, Tree};
use crate::pricing::{phi_inverse_unchecked, Strategy, A_ZERO_TOL};
use crate::rbsde::Obstacle;
use crate::stopping::StoppingRule;

/// Slack below which a superhedging check fails.
pub const SLACK_TOL: f64 = 1e-10;
/// Smallest wealth excess counted as a strict gain.
pub const STRICT_GAIN_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WealthOptions {
    /// Trees up to this many steps are expanded path by path.
    pub full_max_steps: usize,
    pub sample_paths: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for WealthOptions {
    fn default() -> Self {
        WealthOptions {
            full_max_steps: 12,
            sample_paths: 10_000,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    /// Every path prefix; `path_id` indexes the prefix.
    Full,
    /// Independent sampled paths; `path_id` is the sample index.
    Sampled,
}

/// Wealth at one path state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WealthState {
    pub path_id: usize,
    /// Index of the previous state on the same path.
    pub parent: Option<usize>,
    pub step: usize,
    pub node: NodeId,
    pub v: f64,
}

/// Simulated wealth, states listed parents first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WealthField {
    pub coverage: Coverage,
    pub states: Vec<WealthState>,
}

fn step_wealth(tree: &Tree, driver: &dyn Driver, strategy: &Strategy, id: NodeId, v: f64, branch: usize) -> f64 {
    let node = tree.node(id);
    let c = tree.coefficients(id);
    let (phi1, phi2) = strategy.at(id);
    let (z, k) = phi_inverse_unchecked(phi1, phi2, c.sigma1, c.sigma2);
    let b = &tree.branches(id)[branch];
    v - driver.eval(node.t, v, z, k, &node.state()) * tree.dt() + z * b.dw + k * b.dm
}

/// Replays `V_child = V - g(t, V, z, k) dt + z dW + k dM` from `V(root) = x0`
/// with `(z, k)` the coefficients financed by `strategy`.
pub fn simulate_wealth(
    tree: &Tree,
    x0: f64,
    strategy: &Strategy,
    driver: &dyn Driver,
    options: &WealthOptions,
) -> Result<WealthField> {
    if strategy.len() != tree.len() {
        return Err(Error::SizeMismatch {
            what: "strategy",
            expected: tree.len(),
            got: strategy.len(),
        });
    }
    if tree.n_steps() <= options.full_max_steps {
        Ok(simulate_full(tree, x0, strategy, driver))
    } else {
        Ok(simulate_sampled(tree, x0, strategy, driver, options))
    }
}

fn simulate_full(tree: &Tree, x0: f64, strategy: &Strategy, driver: &dyn Driver) -> WealthField {
    let mut states = vec![WealthState {
        path_id: 0,
        parent: None,
        step: 0,
        node: tree.root(),
        v: x0,
    }];
    let mut frontier = 0..1;
    for step in 0..tree.n_steps() {
        let start = states.len();
        for s in frontier {
            let WealthState { node, v, .. } = states[s];
            for (bi, b) in tree.branches(node).iter().enumerate() {
                states.push(WealthState {
                    path_id: states.len(),
                    parent: Some(s),
                    step: step + 1,
                    node: b.child,
                    v: step_wealth(tree, driver, strategy, node, v, bi),
                });
            }
        }
        frontier = start..states.len();
    }
    WealthField {
        coverage: Coverage::Full,
        states,
    }
}

fn simulate_sampled(
    tree: &Tree,
    x0: f64,
    strategy: &Strategy,
    driver: &dyn Driver,
    options: &WealthOptions,
) -> WealthField {
    let n = tree.n_steps();
    let paths = options.execution.map(options.sample_paths, |path| {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(path as u64);
        let mut out = Vec::with_capacity(n + 1);
        let (mut node, mut v) = (tree.root(), x0);
        out.push((0, node, v));
        for step in 0..n {
            let u: f64 = rng.random();
            let branches = tree.branches(node);
            let mut acc = 0.0;
            let mut pick = branches.len() - 1;
            for (bi, b) in branches.iter().enumerate() {
                acc += b.prob;
                if u < acc {
                    pick = bi;
                    break;
                }
            }
            v = step_wealth(tree, driver, strategy, node, v, pick);
            node = branches[pick].child;
            out.push((step + 1, node, v));
        }
        out
    });
    let mut states = Vec::with_capacity(options.sample_paths * (n + 1));
    for (path_id, path) in paths.into_iter().enumerate() {
        let base = states.len();
        for (i, (step, node, v)) in path.into_iter().enumerate() {
            states.push(WealthState {
                path_id,
                parent: (i > 0).then(|| base + i - 1),
                step,
                node,
                v,
            });
        }
    }
    WealthField {
        coverage: Coverage::Sampled,
        states,
    }
}

/// A state whose wealth falls short of the claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub path_id: usize,
    pub step: usize,
    pub node: usize,
    #[serde(rename = "V")]
    pub v: f64,
    pub xi: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperhedgeReport {
    pub min_slack: f64,
    /// Largest `|slack|` over the checked states.
    pub max_abs_slack: f64,
    pub states_checked: usize,
    pub pass: bool,
    pub violations: Vec<Violation>,
}

fn slack_report(checked: impl Iterator<Item = (WealthState, f64, f64)>) -> SuperhedgeReport {
    let mut report = SuperhedgeReport {
        min_slack: f64::INFINITY,
        max_abs_slack: 0.0,
        states_checked: 0,
        pass: true,
        violations: Vec::new(),
    };
    for (s, xi, slack) in checked {
        report.states_checked += 1;
        report.min_slack = report.min_slack.min(slack);
        report.max_abs_slack = report.max_abs_slack.max(slack.abs());
        if slack < -SLACK_TOL {
            report.pass = false;
            report.violations.push(Violation {
                path_id: s.path_id,
                step: s.step,
                node: s.node.0,
                v: s.v,
                xi,
                slack,
            });
        }
    }
    report
}

/// `V - xi` over every simulated state.
pub fn verify_superhedge_seller(wealth: &WealthField, obstacle: &Obstacle) -> SuperhedgeReport {
    slack_report(wealth.states.iter().map(|s| {
        let xi = obstacle.at(s.node.0);
        (*s, xi, s.v - xi)
    }))
}

/// States at which `rule` stops for the first time on their path.
pub fn stopped_states(wealth: &WealthField, rule: &StoppingRule) -> Vec<usize> {
    let mut running = vec![false; wealth.states.len()];
    let mut stopped = Vec::new();
    for (i, s) in wealth.states.iter().enumerate() {
        let alive = s.parent.is_none_or(|p| running[p]);
        if !alive {
            continue;
        }
        if rule.stops_at(s.node) {
            stopped.push(i);
        } else {
            running[i] = true;
        }
    }
    stopped
}

/// `V + xi` at the states where the buyer exercises.
pub fn verify_superhedge_buyer(wealth: &WealthField, obstacle: &Obstacle, rule: &StoppingRule) -> SuperhedgeReport {
    slack_report(stopped_states(wealth, rule).into_iter().map(|i| {
        let s = wealth.states[i];
        let xi = obstacle.at(s.node.0);
        (s, xi, s.v + xi)
    }))
}

/// Largest one-step g-evaluation residual of a fully expanded wealth field.
pub fn wealth_martingale_residual(
    tree: &Tree,
    driver: &dyn Driver,
    wealth: &WealthField,
) -> Result<MartingaleResidual> {
    if wealth.coverage != Coverage::Full {
        return Err(Error::param(
            "wealth",
            "martingale residual needs the full path expansion",
        ));
    }
    let unrolled = tree.unroll();
    let v: Vec<f64> = wealth.states.iter().map(|s| s.v).collect();
    BackwardScheme::default().martingale_check(&unrolled.tree, driver, &v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrictGainReport {
    /// States whose path has already been charged by `A`.
    pub states_after: usize,
    /// Smallest `V - Y` over those states, `None` when there are none.
    pub min_gain: Option<f64>,
    pub pass: bool,
}

/// Wealth of the seller's hedge from `Y(root)` against `Y`, after `A` has
/// charged the path.
pub fn strict_gain_after_nubar(
    tree: &Tree,
    driver: &dyn Driver,
    obstacle: &Obstacle,
    options: &WealthOptions,
) -> Result<StrictGainReport> {
    let scheme = BackwardScheme::with_execution(options.execution);
    let seller = scheme.seller_price(tree, driver, obstacle)?;
    let wealth = simulate_wealth(tree, seller.u0, &seller.strategy, driver, options)?;
    Ok(strict_gain(&wealth, &seller.solution.y, &seller.solution.delta_a))
}

pub(crate) fn strict_gain(wealth: &WealthField, y: &[f64], delta_a: &[f64]) -> StrictGainReport {
    let mut charged = vec![0.0; wealth.states.len()];
    let mut min_gain: Option<f64> = None;
    let mut states_after = 0;
    for (i, s) in wealth.states.iter().enumerate() {
        if let Some(p) = s.parent {
            charged[i] = charged[p] + delta_a[wealth.states[p].node.0];
        }
        if charged[i] > A_ZERO_TOL {
            states_after += 1;
            let gain = s.v - y[s.node.0];
            min_gain = Some(min_gain.map_or(gain, |m| m.min(gain)));
        }
    }
    StrictGainReport {
        states_after,
        min_gain,
        pass: min_gain.is_none_or(|g| g >= STRICT_GAIN_TOL),
    }
}

#[derive(Serialize)]
struct WealthRow {
    path_id: usize,
    parent: Option<usize>,
    step: usize,
    node: usize,
    #[serde(rename = "V")]
    v: f64,
}

/// Columns `path_id, parent, step, node, V`.
pub fn write_wealth_csv<W: Write>(out: W, wealth: &WealthField) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in &wealth.states {
        w.serialize(WealthRow {
            path_id: s.path_id,
            parent: s.parent,
            step: s.step,
            node: s.node.0,
            v: s.v,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `path_id, step, node, V, xi, slack`.
pub fn write_violations_csv<W: Write>(out: W, violations: &[Violation]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["path_id", "step", "node", "V", "xi", "slack"])?;
    for v in violations {
        w.serialize(v)?;
    }
    w.flush()?;
    Ok(())
}
