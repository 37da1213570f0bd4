//! Brute-force and classical references for the solvers.

use serde::Serialize;

use crate::bsde::{BackwardScheme, Solution};
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::market::{MarketParams, NodeId, Tree};
use crate::rbsde::Obstacle;
use crate::stopping::StoppingRule;

/// Largest tree accepted by [`enumerate_stopping_rules`].
pub const MAX_ENUMERATION_STEPS: usize = 4;

/// Every stopping rule of the tree, each once in canonical form (no flags
/// at nodes the rule never reaches).
pub fn enumerate_stopping_rules(tree: &Tree) -> Result<Vec<StoppingRule>> {
    if tree.n_steps() > MAX_ENUMERATION_STEPS {
        return Err(Error::EnumerationGuard {
            n_steps: tree.n_steps(),
            max: MAX_ENUMERATION_STEPS,
        });
    }
    let decisions = tree.step_range(tree.n_steps()).start;
    let mut flags = vec![false; tree.len()];
    let mut reach = vec![0u32; tree.len()];
    reach[0] = 1;
    let mut out = Vec::new();
    enumerate_from(tree, 0, decisions, &mut flags, &mut reach, &mut out)?;
    Ok(out)
}

fn enumerate_from(
    tree: &Tree,
    id: usize,
    decisions: usize,
    flags: &mut Vec<bool>,
    reach: &mut Vec<u32>,
    out: &mut Vec<StoppingRule>,
) -> Result<()> {
    if id == decisions {
        out.push(StoppingRule::from_flags(tree, flags.clone())?);
        return Ok(());
    }
    if reach[id] == 0 {
        return enumerate_from(tree, id + 1, decisions, flags, reach, out);
    }
    flags[id] = true;
    enumerate_from(tree, id + 1, decisions, flags, reach, out)?;
    flags[id] = false;
    let children: Vec<usize> = tree
        .branches(NodeId(id))
        .iter()
        .filter(|b| b.prob > 0.0)
        .map(|b| b.child.0)
        .collect();
    for &c in &children {
        reach[c] += 1;
    }
    enumerate_from(tree, id + 1, decisions, flags, reach, out)?;
    for &c in &children {
        reach[c] -= 1;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForce {
    pub value: f64,
    pub best: StoppingRule,
    pub rules: usize,
}

fn evaluate_all(
    tree: &Tree,
    driver: &dyn Driver,
    payoff: &[f64],
    execution: Execution,
) -> Result<(Vec<StoppingRule>, Vec<f64>)> {
    let rules = enumerate_stopping_rules(tree)?;
    let scheme = BackwardScheme::sequential();
    let values = execution.try_map(rules.len(), |i| scheme.g_evaluation(tree, driver, &rules[i], payoff))?;
    Ok((rules, values))
}

fn pick(rules: Vec<StoppingRule>, values: &[f64], better: impl Fn(f64, f64) -> bool) -> BruteForce {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if better(v, values[best]) {
            best = i;
        }
    }
    BruteForce {
        value: values[best],
        rules: rules.len(),
        best: rules.into_iter().nth(best).expect("at least one rule"),
    }
}

/// `max` over all stopping rules of the g-evaluation of `xi`.
pub fn brute_force_seller_value(tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<BruteForce> {
    let (rules, values) = evaluate_all(tree, driver, obstacle.values(), Execution::default())?;
    Ok(pick(rules, &values, |a, b| a > b))
}

/// `-min` over all stopping rules of the g-evaluation of `-xi`.
pub fn brute_force_buyer_value(tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<BruteForce> {
    let neg = obstacle.negated();
    let (rules, values) = evaluate_all(tree, driver, neg.values(), Execution::default())?;
    let mut bf = pick(rules, &values, |a, b| a < b);
    bf.value = -bf.value;
    Ok(bf)
}

/// American option on `S1` on the binomial Cox-Ross-Rubinstein lattice with
/// Euler factors `1 + mu dt +- sigma sqrt(dt)` and risk-neutral weights.
pub fn crr_american_oracle(params: &MarketParams, payoff: impl Fn(f64, f64) -> f64, n_steps: usize) -> Result<f64> {
    params.validate()?;
    if params.snapshots().iter().any(|c| c.lambda != 0.0) {
        return Err(Error::param("market.lambda", "the binomial reference has no default"));
    }
    for (field, pc) in [
        ("market.r", &params.r),
        ("market.mu1", &params.mu1),
        ("market.sigma1", &params.sigma1),
    ] {
        if !pc.is_constant() {
            return Err(Error::param(
                field,
                "the binomial reference needs a constant coefficient",
            ));
        }
    }
    if n_steps == 0 {
        return Err(Error::param("grid.n_steps", "must be at least 1"));
    }
    let c = params.at(0.0);
    let dt = params.horizon / n_steps as f64;
    let sq = dt.sqrt();
    let up = 1.0 + c.mu1 * dt + c.sigma1 * sq;
    let down = 1.0 + c.mu1 * dt + c.sigma1 * -sq;
    let growth = 1.0 + c.r * dt;
    let q = (growth - down) / (up - down);
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param(
            "grid.n_steps",
            format!("risk-neutral weight {q} outside [0, 1]"),
        ));
    }

    // prices by number of up moves, built step by step
    let mut prices = vec![vec![params.s1_0]];
    for i in 0..n_steps {
        let prev = &prices[i];
        let mut next = Vec::with_capacity(i + 2);
        next.push(prev[0] * down);
        next.extend(prev.iter().map(|s| s * up));
        prices.push(next);
    }
    let t_of = |i: usize| i as f64 * dt;
    let mut values: Vec<f64> = prices[n_steps].iter().map(|&s| payoff(t_of(n_steps), s)).collect();
    for i in (0..n_steps).rev() {
        values = (0..=i)
            .map(|j| {
                let cont = (q * values[j + 1] + (1.0 - q) * values[j]) / growth;
                payoff(t_of(i), prices[i][j]).max(cont)
            })
            .collect();
    }
    Ok(values[0])
}

/// Violations of the a priori estimate between two reflected solutions;
/// nonpositive entries mean the corresponding inequality holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriReport {
    pub eta: f64,
    pub beta: f64,
    /// Largest `e^{beta t} (Y1 - Y2)^2 - eta E_t[sum e^{beta s} fbar^2 dt]`.
    pub pointwise_violation: f64,
    /// `||Ybar||^2 - T eta ||fbar||^2`.
    pub y_norm_violation: f64,
    /// `||Zbar||^2 + ||Kbar||_lambda^2 - eta / (1 - eta C^2) ||fbar||^2`,
    /// only when `eta C^2 < 1`.
    pub zk_norm_violation: Option<f64>,
    /// Largest of the above.
    pub max_violation: f64,
    pub f_norm: f64,
    pub y_norm: f64,
    pub pass: bool,
}

/// Tolerance on the a priori violations.
pub const APRIORI_TOL: f64 = 1e-10;

/// Solves the seller equation under both drivers with the same obstacle and
/// evaluates both sides of the a priori estimate exactly on the tree.
pub fn apriori_estimate_check(
    tree: &Tree,
    driver1: &dyn Driver,
    driver2: &dyn Driver,
    obstacle: &Obstacle,
    eta: f64,
    beta: f64,
) -> Result<AprioriReport> {
    let c = driver1.lipschitz_c();
    if !(eta > 0.0) || eta * c * c > 1.0 {
        return Err(Error::param(
            "eta",
            format!("need 0 < eta <= 1/C^2 with C = {c}, got {eta}"),
        ));
    }
    let beta_min = 3.0 / eta + 2.0 * c;
    if !(beta >= beta_min) {
        return Err(Error::param(
            "beta",
            format!("need beta >= 3/eta + 2C = {beta_min}, got {beta}"),
        ));
    }
    let scheme = BackwardScheme::default();
    let s1 = scheme.solve_rbsde_lower(tree, driver1, obstacle)?;
    let s2 = scheme.solve_rbsde_lower(tree, driver2, obstacle)?;
    Ok(apriori_from_solutions(tree, driver1, driver2, &s1, &s2, eta, beta))
}

fn apriori_from_solutions(
    tree: &Tree,
    driver1: &dyn Driver,
    driver2: &dyn Driver,
    s1: &Solution,
    s2: &Solution,
    eta: f64,
    beta: f64,
) -> AprioriReport {
    let dt = tree.dt();
    let c = driver1.lipschitz_c();
    let last = tree.step_range(tree.n_steps()).start;
    let weight = |id: usize| (beta * tree.nodes()[id].t).exp();

    let fbar2: Vec<f64> = (0..last)
        .map(|id| {
            let n = &tree.nodes()[id];
            let state = n.state();
            let (y, z, k) = (s2.y[id], s2.z[id], s2.k[id]);
            let f = driver1.eval(n.t, y, z, k, &state) - driver2.eval(n.t, y, z, k, &state);
            f * f
        })
        .collect();

    // conditional sums from each node to maturity, current step included
    let mut tail = vec![0.0; tree.len()];
    for id in (0..last).rev() {
        let ahead: f64 = tree.branches(NodeId(id)).iter().map(|b| b.prob * tail[b.child.0]).sum();
        tail[id] = weight(id) * fbar2[id] * dt + ahead;
    }
    let mut pointwise = f64::NEG_INFINITY;
    for (id, t) in tail.iter().enumerate() {
        let d = s1.y[id] - s2.y[id];
        pointwise = pointwise.max(weight(id) * d * d - eta * t);
    }

    let reach = tree.reach_probabilities();
    let (mut f_norm, mut y_norm, mut zk_norm) = (0.0, 0.0, 0.0);
    for id in 0..last {
        let w = reach[id] * weight(id) * dt;
        let lambda = tree.nodes()[id].lambda;
        let (dy, dz, dk) = (s1.y[id] - s2.y[id], s1.z[id] - s2.z[id], s1.k[id] - s2.k[id]);
        f_norm += w * fbar2[id];
        y_norm += w * dy * dy;
        zk_norm += w * (dz * dz + lambda * dk * dk);
    }
    let y_norm_violation = y_norm - tree.horizon() * eta * f_norm;
    let zk_norm_violation = (eta * c * c < 1.0).then(|| zk_norm - eta / (1.0 - eta * c * c) * f_norm);
    let max_violation = [
        pointwise,
        y_norm_violation,
        zk_norm_violation.unwrap_or(f64::NEG_INFINITY),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    AprioriReport {
        eta,
        beta,
        pointwise_violation: pointwise,
        y_norm_violation,
        zk_norm_violation,
        max_violation,
        f_norm,
        y_norm,
        pass: max_violation <= APRIORI_TOL,
    }
}
