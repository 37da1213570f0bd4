//! Reflected backward equations: lower barrier for the seller, upper barrier
//! for the buyer.
//!
//! Each node first takes the implicit driver step, then clips at the
//! barrier. The clipped amount is the increment of the reflecting process.

use serde::Serialize;

use crate::bsde::{check_len, BackwardScheme, NodeRule, Solution};
use crate::drivers::Driver;
use crate::error::Result;
use crate::market::Tree;

/// Per-node payoff or barrier values.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Obstacle {
    values: Vec<f64>,
}

impl Obstacle {
    /// Evaluates `payoff(t, s1, s2, defaulted)` at every node.
    pub fn from_payoff(tree: &Tree, payoff: impl Fn(f64, f64, f64, bool) -> f64) -> Self {
        let values = tree
            .nodes()
            .iter()
            .map(|n| payoff(n.t, n.s1, n.s2, n.defaulted))
            .collect();
        Obstacle { values }
    }

    pub fn from_values(tree: &Tree, values: Vec<f64>) -> Result<Self> {
        check_len(tree, &values, "obstacle")?;
        Ok(Obstacle { values })
    }

    pub fn constant(tree: &Tree, c: f64) -> Self {
        Obstacle {
            values: vec![c; tree.len()],
        }
    }

    /// Put on `S1`.
    pub fn put(tree: &Tree, strike: f64) -> Self {
        Obstacle::from_payoff(tree, |_, s1, _, _| (strike - s1).max(0.0))
    }

    /// Call on `S1`.
    pub fn call(tree: &Tree, strike: f64) -> Self {
        Obstacle::from_payoff(tree, |_, s1, _, _| (s1 - strike).max(0.0))
    }

    pub fn negated(&self) -> Self {
        Obstacle {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, id: usize) -> f64 {
        self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

struct Reflect<'a> {
    barrier: &'a [f64],
    side: Side,
}

impl NodeRule for Reflect<'_> {
    fn terminal(&self, id: usize) -> f64 {
        self.barrier[id]
    }
    fn apply(&self, id: usize, cont: f64) -> (f64, f64) {
        let b = self.barrier[id];
        match self.side {
            Side::Lower if b > cont => (b, b - cont),
            Side::Upper if b < cont => (b, cont - b),
            _ => (cont, 0.0),
        }
    }
}

impl BackwardScheme {
    pub fn solve_reflected(
        &self,
        tree: &Tree,
        driver: &dyn Driver,
        barrier: &Obstacle,
        side: Side,
    ) -> Result<Solution> {
        check_len(tree, barrier.values(), "obstacle")?;
        self.sweep(
            tree,
            driver,
            &Reflect {
                barrier: barrier.values(),
                side,
            },
        )
    }

    pub fn solve_rbsde_lower(&self, tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<Solution> {
        self.solve_reflected(tree, driver, obstacle, Side::Lower)
    }

    pub fn solve_rbsde_upper(&self, tree: &Tree, driver: &dyn Driver, obstacle_upper: &Obstacle) -> Result<Solution> {
        self.solve_reflected(tree, driver, obstacle_upper, Side::Upper)
    }
}

/// Seller equation: `Y >= xi`, minimal push up.
pub fn solve_rbsde_lower(tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<Solution> {
    BackwardScheme::default().solve_rbsde_lower(tree, driver, obstacle)
}

/// Buyer equation: `Y <= obstacle_upper`, minimal push down.
pub fn solve_rbsde_upper(tree: &Tree, driver: &dyn Driver, obstacle_upper: &Obstacle) -> Result<Solution> {
    BackwardScheme::default().solve_rbsde_upper(tree, driver, obstacle_upper)
}

/// Largest `|Y - barrier| * dA` over the nodes.
pub fn skorokhod_residual(solution: &Solution, obstacle: &Obstacle, side: Side) -> f64 {
    let _ = side;
    solution
        .y
        .iter()
        .zip(obstacle.values())
        .zip(&solution.delta_a)
        .map(|((y, b), da)| (y - b).abs() * da)
        .fold(0.0, f64::max)
}
