//! Backward equations with a default jump on the tree, and the g-evaluation.
//!
//! One backward step at a node projects the children's values onto
//! `E + Z dW + K dM` (exact: as many unknowns as branches), then solves the
//! implicit equation `Y = E + g(t, Y, Z, K) dt` by Picard iteration with the
//! time argument at the left end of the step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::drivers::{check_gamma_assumption, Driver, GammaReport, SampleGrid};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::market::{BranchKind, NodeId, Tree};
use crate::stopping::StoppingRule;

/// Picard tolerance, relative to `1 + |y|`.
pub const PICARD_TOL: f64 = 1e-12;
pub const PICARD_MAX_ITER: usize = 50;

/// Per-node fields of a (reflected) backward equation.
///
/// `delta_a[n]` is the increment of the nondecreasing process charged on
/// the step leaving node `n`; the cumulative process is path dependent on a
/// recombining lattice, see [`Solution::cumulative_a_max`].
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub k: Vec<f64>,
    pub delta_a: Vec<f64>,
}

impl Solution {
    pub fn root_value(&self) -> f64 {
        self.y[0]
    }

    /// Largest cumulative `A` over the paths reaching each node, counting the
    /// increments of strict ancestors only.
    pub fn cumulative_a_max(&self, tree: &Tree) -> Vec<f64> {
        let mut acc = vec![f64::NEG_INFINITY; tree.len()];
        acc[0] = 0.0;
        for i in 0..tree.n_steps() {
            for id in tree.step_range(i) {
                let next = acc[id] + self.delta_a[id];
                for b in tree.branches(NodeId(id)) {
                    if b.prob > 0.0 && next > acc[b.child.0] {
                        acc[b.child.0] = next;
                    }
                }
            }
        }
        acc
    }
}

/// Result of the martingale representation at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Representation {
    /// Conditional expectation of the children's values.
    pub e: f64,
    pub z: f64,
    pub k: f64,
}

/// Solves `e + z dW_b + k dM_b = y_b` over the branches of `id`.
pub fn represent(tree: &Tree, id: NodeId, child_value: impl Fn(NodeId) -> f64) -> Representation {
    let sqrt_dt = tree.dt().sqrt();
    let (mut up, mut down, mut dflt) = (0.0, 0.0, None);
    let mut e = 0.0;
    for b in tree.branches(id) {
        let v = child_value(b.child);
        e += b.prob * v;
        match b.kind {
            BranchKind::Up => up = v,
            BranchKind::Down => down = v,
            BranchKind::Default => dflt = Some(v),
        }
    }
    let z = (up - down) / (2.0 * sqrt_dt);
    let k = dflt.map_or(0.0, |v| v - 0.5 * (up + down));
    Representation { e, z, k }
}

/// Backward solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardScheme {
    pub tol: f64,
    pub max_iter: usize,
    pub execution: Execution,
}

impl Default for BackwardScheme {
    fn default() -> Self {
        BackwardScheme {
            tol: PICARD_TOL,
            max_iter: PICARD_MAX_ITER,
            execution: Execution::default(),
        }
    }
}

/// How a swept node turns its continuation value into `(Y, dA)`.
pub(crate) trait NodeRule: Sync {
    /// Value at a terminal node.
    fn terminal(&self, id: usize) -> f64;
    /// `Some(y)` if the node does not need its continuation value.
    fn fixed(&self, _id: usize) -> Option<f64> {
        None
    }
    fn apply(&self, id: usize, cont: f64) -> (f64, f64);
}

impl BackwardScheme {
    pub fn sequential() -> Self {
        BackwardScheme {
            execution: Execution::Sequential,
            ..Default::default()
        }
    }

    pub fn with_execution(execution: Execution) -> Self {
        BackwardScheme {
            execution,
            ..Default::default()
        }
    }

    /// Solves `y = e + g(t, y, z, k) dt` at node `id`.
    pub fn implicit_step(&self, tree: &Tree, driver: &dyn Driver, id: NodeId, rep: Representation) -> Result<f64> {
        let node = tree.node(id);
        let state = node.state();
        let dt = tree.dt();
        let mut y = rep.e;
        for _ in 0..self.max_iter {
            let next = rep.e + driver.eval(node.t, y, rep.z, rep.k, &state) * dt;
            let done = (next - y).abs() <= self.tol * (1.0 + next.abs());
            y = next;
            if done {
                return Ok(y);
            }
        }
        Err(Error::NoConvergence {
            node: id.0,
            step: node.step,
            iterations: self.max_iter,
        })
    }

    /// Continuation value and `(Z, K)` at a non-terminal node from the
    /// children's values.
    pub fn one_step(
        &self,
        tree: &Tree,
        driver: &dyn Driver,
        id: NodeId,
        child_value: impl Fn(NodeId) -> f64,
    ) -> Result<(f64, Representation)> {
        let rep = represent(tree, id, child_value);
        Ok((self.implicit_step(tree, driver, id, rep)?, rep))
    }

    pub(crate) fn sweep(&self, tree: &Tree, driver: &dyn Driver, rule: &dyn NodeRule) -> Result<Solution> {
        let len = tree.len();
        let mut sol = Solution {
            y: vec![0.0; len],
            z: vec![0.0; len],
            k: vec![0.0; len],
            delta_a: vec![0.0; len],
        };
        for id in tree.step_range(tree.n_steps()) {
            sol.y[id] = rule.terminal(id);
        }
        for i in (0..tree.n_steps()).rev() {
            let range = tree.step_range(i);
            let y = &sol.y;
            let slice = self.execution.try_map(range.len(), |off| {
                let id = range.start + off;
                let rep = represent(tree, NodeId(id), |c| y[c.0]);
                if let Some(v) = rule.fixed(id) {
                    return Ok((v, 0.0, rep));
                }
                let cont = self.implicit_step(tree, driver, NodeId(id), rep)?;
                let (v, da) = rule.apply(id, cont);
                Ok((v, da, rep))
            })?;
            for (off, (v, da, rep)) in slice.into_iter().enumerate() {
                let id = range.start + off;
                sol.y[id] = v;
                sol.delta_a[id] = da;
                sol.z[id] = rep.z;
                sol.k[id] = rep.k;
            }
        }
        Ok(sol)
    }

    pub fn solve_bsde(&self, tree: &Tree, driver: &dyn Driver, terminal: &[f64]) -> Result<Solution> {
        let terminal = TerminalValues::new(tree, terminal)?;
        self.sweep(tree, driver, &Plain(terminal))
    }

    /// Backward equation stopped by `rule`: `Y = payoff` where the rule stops.
    pub fn g_evaluation_solution(
        &self,
        tree: &Tree,
        driver: &dyn Driver,
        rule: &StoppingRule,
        payoff: &[f64],
    ) -> Result<Solution> {
        rule.check_tree(tree)?;
        check_len(tree, payoff, "payoff")?;
        self.sweep(tree, driver, &Stopped { rule, payoff })
    }

    pub fn g_evaluation(&self, tree: &Tree, driver: &dyn Driver, rule: &StoppingRule, payoff: &[f64]) -> Result<f64> {
        Ok(self.g_evaluation_solution(tree, driver, rule, payoff)?.root_value())
    }

    /// Largest `|X(n) - one-step g-evaluation of X at the children of n|`.
    pub fn martingale_check(&self, tree: &Tree, driver: &dyn Driver, process: &[f64]) -> Result<MartingaleResidual> {
        check_len(tree, process, "process")?;
        let non_terminal = tree.step_range(tree.n_steps()).start;
        let residuals = self.execution.try_map(non_terminal, |id| {
            let (cont, _) = self.one_step(tree, driver, NodeId(id), |c| process[c.0])?;
            Ok((process[id] - cont).abs())
        })?;
        let (node, max_residual) =
            residuals.into_iter().enumerate().fold(
                (None, 0.0),
                |(bn, bv), (id, r)| if r > bv { (Some(NodeId(id)), r) } else { (bn, bv) },
            );
        Ok(MartingaleResidual { max_residual, node })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleResidual {
    pub max_residual: f64,
    /// Node attaining the maximum, if any residual is positive.
    pub node: Option<NodeId>,
}

pub(crate) fn check_len(tree: &Tree, values: &[f64], what: &'static str) -> Result<()> {
    if values.len() != tree.len() {
        return Err(Error::SizeMismatch {
            what,
            expected: tree.len(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Terminal condition given either per node or per terminal node.
struct TerminalValues<'a> {
    values: &'a [f64],
    offset: usize,
}

impl<'a> TerminalValues<'a> {
    fn new(tree: &Tree, values: &'a [f64]) -> Result<Self> {
        let last = tree.step_range(tree.n_steps());
        let offset = if values.len() == tree.len() {
            0
        } else if values.len() == last.len() {
            last.start
        } else {
            return Err(Error::SizeMismatch {
                what: "terminal condition",
                expected: last.len(),
                got: values.len(),
            });
        };
        Ok(TerminalValues { values, offset })
    }

    fn at(&self, id: usize) -> f64 {
        self.values[id - self.offset]
    }
}

struct Plain<'a>(TerminalValues<'a>);

impl NodeRule for Plain<'_> {
    fn terminal(&self, id: usize) -> f64 {
        self.0.at(id)
    }
    fn apply(&self, _id: usize, cont: f64) -> (f64, f64) {
        (cont, 0.0)
    }
}

struct Stopped<'a> {
    rule: &'a StoppingRule,
    payoff: &'a [f64],
}

impl NodeRule for Stopped<'_> {
    fn terminal(&self, id: usize) -> f64 {
        self.payoff[id]
    }
    fn fixed(&self, id: usize) -> Option<f64> {
        self.rule.stops_at(NodeId(id)).then(|| self.payoff[id])
    }
    fn apply(&self, _id: usize, cont: f64) -> (f64, f64) {
        (cont, 0.0)
    }
}

/// [`BackwardScheme::solve_bsde`] with default settings.
pub fn solve_bsde(tree: &Tree, driver: &dyn Driver, terminal: &[f64]) -> Result<Solution> {
    BackwardScheme::default().solve_bsde(tree, driver, terminal)
}

/// Value at the root of the g-evaluation of `payoff` stopped by `rule`.
pub fn g_evaluation(tree: &Tree, driver: &dyn Driver, rule: &StoppingRule, payoff: &[f64]) -> Result<f64> {
    BackwardScheme::default().g_evaluation(tree, driver, rule, payoff)
}

pub fn martingale_check(tree: &Tree, driver: &dyn Driver, process: &[f64]) -> Result<MartingaleResidual> {
    BackwardScheme::default().martingale_check(tree, driver, process)
}

/// Whether comparison arguments apply to the backward step of a driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub gamma: GammaReport,
    /// `C dt`; the implicit step is a contraction when below one.
    pub c_dt: f64,
    /// Largest decrease of the one-step value after raising child values,
    /// over random probes; nonpositive when the step is monotone.
    pub worst_decrease: f64,
    pub probes: usize,
    pub pass: bool,
}

/// Checks the jump-monotonicity assumption, the step-size bound and
/// monotonicity of the one-step map on random child values in
/// `[-scale, scale]`.
pub fn monotonicity_report(
    tree: &Tree,
    driver: &dyn Driver,
    probes: usize,
    scale: f64,
    seed: u64,
) -> Result<MonotonicityReport> {
    let grid = SampleGrid::from_tree(tree, probes, scale, seed);
    let gamma = check_gamma_assumption(driver, &grid.gamma);
    let c_dt = driver.lipschitz_c() * tree.dt();
    let scheme = BackwardScheme::sequential();
    let non_terminal = tree.step_range(tree.n_steps()).start;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = f64::NEG_INFINITY;
    let mut values = vec![0.0; tree.len()];
    for _ in 0..probes {
        let id = NodeId(rng.random_range(0..non_terminal));
        let children: Vec<usize> = tree.branches(id).iter().map(|b| b.child.0).collect();
        for &c in &children {
            values[c] = rng.random_range(-scale..=scale);
        }
        let (low, _) = scheme.one_step(tree, driver, id, |c| values[c.0])?;
        for &c in &children {
            values[c] += rng.random_range(0.0..=scale);
        }
        let (high, _) = scheme.one_step(tree, driver, id, |c| values[c.0])?;
        worst = worst.max(low - high);
    }
    let monotone = worst <= 1e-12 * (1.0 + scale);
    Ok(MonotonicityReport {
        gamma,
        c_dt,
        worst_decrease: worst,
        probes,
        pass: gamma.pass && c_dt < 1.0 && monotone,
    })
}
