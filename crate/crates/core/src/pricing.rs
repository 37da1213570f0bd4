//! Seller and buyer superhedging prices, their strategies and exercise times.

use serde::Serialize;

use crate::bsde::{BackwardScheme, Solution};
use crate::drivers::{Driver, LipschitzSample};
use crate::error::{Error, Result};
use crate::market::{NodeId, Tree};
use crate::rbsde::Obstacle;
use crate::stopping::StoppingRule;

/// `Y = xi` is tested as `Y - xi <= Y_EQ_TOL (1 + |xi|)`.
pub const Y_EQ_TOL: f64 = 1e-10;
/// `A = 0` is tested as `a <= A_ZERO_TOL`.
pub const A_ZERO_TOL: f64 = 1e-12;
/// Slack allowed in `v0 <= u0`.
pub const INTERVAL_TOL: f64 = 1e-12;

fn check_sigma1(sigma1: f64) -> Result<()> {
    if !(sigma1 > 0.0) || !sigma1.is_finite() {
        return Err(Error::param("sigma1", format!("must be positive, got {sigma1}")));
    }
    Ok(())
}

pub(crate) fn phi_unchecked(z: f64, k: f64, sigma1: f64, sigma2: f64) -> (f64, f64) {
    ((z + sigma2 * k) / sigma1, 0.0 - k)
}

pub(crate) fn phi_inverse_unchecked(phi1: f64, phi2: f64, sigma1: f64, sigma2: f64) -> (f64, f64) {
    (phi1 * sigma1 + phi2 * sigma2, 0.0 - phi2)
}

/// Risky-asset amounts `(phi1, phi2)` financing the coefficients `(z, k)`.
pub fn phi_map(z: f64, k: f64, sigma1: f64, sigma2: f64) -> Result<(f64, f64)> {
    check_sigma1(sigma1)?;
    Ok(phi_unchecked(z, k, sigma1, sigma2))
}

/// Coefficients `(z, k)` of the wealth generated by `(phi1, phi2)`.
pub fn phi_inverse(phi1: f64, phi2: f64, sigma1: f64, sigma2: f64) -> Result<(f64, f64)> {
    check_sigma1(sigma1)?;
    Ok(phi_inverse_unchecked(phi1, phi2, sigma1, sigma2))
}

/// Amounts held in the two risky assets on the step leaving each node.
/// Terminal entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strategy {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl Strategy {
    pub fn zero(tree: &Tree) -> Self {
        Strategy {
            phi1: vec![0.0; tree.len()],
            phi2: vec![0.0; tree.len()],
        }
    }

    /// `Phi(Z, K)` node by node.
    pub fn from_solution(tree: &Tree, solution: &Solution) -> Self {
        let mut s = Strategy::zero(tree);
        for id in 0..tree.step_range(tree.n_steps()).start {
            let c = tree.coefficients(NodeId(id));
            let (p1, p2) = phi_unchecked(solution.z[id], solution.k[id], c.sigma1, c.sigma2);
            s.phi1[id] = p1;
            s.phi2[id] = p2;
        }
        s
    }

    pub fn at(&self, id: NodeId) -> (f64, f64) {
        (self.phi1[id.0], self.phi2[id.0])
    }

    pub fn len(&self) -> usize {
        self.phi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi1.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SellerPrice {
    pub u0: f64,
    pub solution: Solution,
    pub strategy: Strategy,
}

#[derive(Debug, Clone)]
pub struct BuyerPrice {
    pub v0: f64,
    /// Solution of the upper-barrier equation with barrier `-xi`.
    pub solution: Solution,
    pub strategy: Strategy,
    pub exercise: StoppingRule,
}

impl BackwardScheme {
    pub fn seller_price(&self, tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<SellerPrice> {
        let solution = self.solve_rbsde_lower(tree, driver, obstacle)?;
        Ok(SellerPrice {
            u0: solution.root_value(),
            strategy: Strategy::from_solution(tree, &solution),
            solution,
        })
    }

    pub fn buyer_price(&self, tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<BuyerPrice> {
        let upper = obstacle.negated();
        let solution = self.solve_rbsde_upper(tree, driver, &upper)?;
        let exercise = StoppingRule::from_predicate(tree, |id| {
            let xi = obstacle.at(id.0);
            (solution.y[id.0] + xi).abs() <= Y_EQ_TOL * (1.0 + xi.abs())
        });
        Ok(BuyerPrice {
            v0: 0.0 - solution.root_value(),
            strategy: Strategy::from_solution(tree, &solution),
            exercise,
            solution,
        })
    }
}

/// Seller's superhedging price `u0 = Y(root)` and `Phi(Z, K)`.
pub fn seller_price(tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<SellerPrice> {
    BackwardScheme::default().seller_price(tree, driver, obstacle)
}

/// Buyer's superhedging price `v0 = -Y(root)` of the equation below `-xi`,
/// with strategy and exercise at the first contact with the barrier.
pub fn buyer_price(tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<BuyerPrice> {
    BackwardScheme::default().buyer_price(tree, driver, obstacle)
}

/// Minimal (`Y = xi`) and maximal (first charge of `A`) rational exercise times.
pub fn rational_exercise_times(tree: &Tree, solution: &Solution, obstacle: &Obstacle) -> (StoppingRule, StoppingRule) {
    let nu_star = StoppingRule::from_predicate(tree, |id| {
        let xi = obstacle.at(id.0);
        solution.y[id.0] - xi <= Y_EQ_TOL * (1.0 + xi.abs())
    });
    let nu_bar = StoppingRule::from_predicate(tree, |id| solution.delta_a[id.0] > 0.0);
    (nu_star, nu_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Irrationality {
    /// `Y > xi` where the rule stops.
    AboveObstacle,
    /// `A` has already been charged on a path reaching the stop.
    ChargedBefore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub node: NodeId,
    pub reason: Irrationality,
    /// `Y - xi` or the cumulative `a`, depending on `reason`.
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rationality {
    pub rational: bool,
    pub witness: Option<Witness>,
}

/// Checks `Y = xi` and `A = 0` at every node where `rule` stops with
/// positive probability.
pub fn is_rational(tree: &Tree, solution: &Solution, obstacle: &Obstacle, rule: &StoppingRule) -> Rationality {
    let reached = rule.reached(tree);
    // largest cumulative a over the paths still running under the rule
    let mut acc = vec![f64::NEG_INFINITY; tree.len()];
    acc[0] = 0.0;
    for id in 0..tree.len() {
        if !reached[id] {
            continue;
        }
        let node = NodeId(id);
        if rule.stops_at(node) {
            let xi = obstacle.at(id);
            let above = solution.y[id] - xi;
            let witness = if above > Y_EQ_TOL * (1.0 + xi.abs()) {
                Some(Witness {
                    node,
                    reason: Irrationality::AboveObstacle,
                    amount: above,
                })
            } else if acc[id] > A_ZERO_TOL {
                Some(Witness {
                    node,
                    reason: Irrationality::ChargedBefore,
                    amount: acc[id],
                })
            } else {
                None
            };
            if witness.is_some() {
                return Rationality {
                    rational: false,
                    witness,
                };
            }
            continue;
        }
        let next = acc[id] + solution.delta_a[id];
        for b in tree.branches(node) {
            if b.prob > 0.0 && next > acc[b.child.0] {
                acc[b.child.0] = next;
            }
        }
    }
    Rationality {
        rational: true,
        witness: None,
    }
}

/// Constant of the epsilon-rationality bound, `exp(C (1 + C) T)`.
pub fn epsilon_constant(c: f64, horizon: f64) -> f64 {
    (c * (1.0 + c) * horizon).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonRational {
    pub eps: f64,
    pub rule: StoppingRule,
    /// g-evaluation of the payoff stopped by `rule`.
    pub value: f64,
    /// `u0 - value`.
    pub gap: f64,
    /// `K eps`.
    pub bound: f64,
    pub within_bound: bool,
}

/// Stops at the first node with `Y <= xi + eps` and measures the loss
/// against `u0`.
pub fn epsilon_rational(
    tree: &Tree,
    driver: &dyn Driver,
    solution: &Solution,
    obstacle: &Obstacle,
    eps: f64,
) -> Result<EpsilonRational> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", format!("must be positive, got {eps}")));
    }
    let rule = StoppingRule::from_predicate(tree, |id| solution.y[id.0] <= obstacle.at(id.0) + eps);
    let value = BackwardScheme::default().g_evaluation(tree, driver, &rule, obstacle.values())?;
    let gap = solution.root_value() - value;
    let bound = epsilon_constant(driver.lipschitz_c(), tree.horizon()) * eps;
    Ok(EpsilonRational {
        eps,
        rule,
        value,
        gap,
        bound,
        within_bound: gap <= bound,
    })
}

/// Sampled check of `-g(t, -y, -z, -k) <= g(t, y, z, k)`, under which the
/// buyer's price does not exceed the seller's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport {
    /// Largest `-g(-x) - g(x)`; nonpositive when the hypothesis holds.
    pub max_excess: f64,
    pub samples: usize,
    pub pass: bool,
}

pub fn check_sign_dominance(driver: &dyn Driver, samples: &[LipschitzSample]) -> DominanceReport {
    let mut max_excess = f64::NEG_INFINITY;
    for s in samples {
        let [y, z, k] = s.a;
        let t = s.state.t;
        let excess = -driver.eval(t, -y, -z, -k, &s.state) - driver.eval(t, y, z, k, &s.state);
        max_excess = max_excess.max(excess);
    }
    DominanceReport {
        max_excess,
        samples: samples.len(),
        pass: max_excess <= 1e-12 * (1.0 + max_excess.abs()),
    }
}

/// Summary of a pricing run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricingReport {
    pub u0: f64,
    pub v0: f64,
    pub seller_strategy: Strategy,
    pub buyer_strategy: Strategy,
    pub buyer_exercise: StoppingRule,
    pub nu_star: StoppingRule,
    pub nu_bar: StoppingRule,
    pub interval_ok: bool,
}

/// Everything computed by [`price`], kept for verification.
#[derive(Debug, Clone)]
pub struct Pricing {
    pub seller: SellerPrice,
    pub buyer: BuyerPrice,
    pub nu_star: StoppingRule,
    pub nu_bar: StoppingRule,
}

impl Pricing {
    pub fn report(&self) -> PricingReport {
        PricingReport {
            u0: self.seller.u0,
            v0: self.buyer.v0,
            seller_strategy: self.seller.strategy.clone(),
            buyer_strategy: self.buyer.strategy.clone(),
            buyer_exercise: self.buyer.exercise.clone(),
            nu_star: self.nu_star.clone(),
            nu_bar: self.nu_bar.clone(),
            interval_ok: self.buyer.v0 <= self.seller.u0 + INTERVAL_TOL,
        }
    }
}

impl BackwardScheme {
    pub fn price(&self, tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<Pricing> {
        let seller = self.seller_price(tree, driver, obstacle)?;
        let buyer = self.buyer_price(tree, driver, obstacle)?;
        let (nu_star, nu_bar) = rational_exercise_times(tree, &seller.solution, obstacle);
        Ok(Pricing {
            seller,
            buyer,
            nu_star,
            nu_bar,
        })
    }
}

/// Seller and buyer prices with strategies and exercise times.
pub fn price(tree: &Tree, driver: &dyn Driver, obstacle: &Obstacle) -> Result<Pricing> {
    BackwardScheme::default().price(tree, driver, obstacle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::g_evaluation;
    use crate::drivers::{borrow_lend_driver, perfect_driver, FnDriver, SampleGrid};
    use crate::market::{build_tree, MarketParams};

    fn market(lambda: f64) -> MarketParams {
        MarketParams::constant(0.05, 0.08, 0.03, 0.2, 0.25, lambda, 1.0, 1.0, 1.0)
    }

    #[test]
    fn phi_by_hand() {
        assert_eq!(phi_map(0.0, 0.0, 0.2, 0.3).unwrap(), (0.0, 0.0));
        let (p1, p2) = phi_map(0.5, -0.2, 0.2, 0.3).unwrap();
        assert!((p1 - 2.2).abs() < 1e-15);
        assert_eq!(p2, 0.2);
        assert!(phi_map(1.0, 1.0, 0.0, 0.3).is_err());
        assert!(phi_inverse(1.0, 1.0, -0.1, 0.3).is_err());
    }

    #[test]
    fn phi_zero_jump_gives_positive_zero() {
        let (_, p2) = phi_map(0.3, 0.0, 0.2, 0.3).unwrap();
        assert!(p2 == 0.0 && p2.is_sign_positive());
    }

    #[test]
    fn zero_payoff_zero_price() {
        let p = market(0.2);
        let tree = build_tree(&p, 4).unwrap();
        let g = perfect_driver(&p).unwrap();
        let s = seller_price(&tree, &g, &Obstacle::constant(&tree, 0.0)).unwrap();
        assert_eq!(s.u0, 0.0);
        assert!(s.strategy.phi1.iter().chain(&s.strategy.phi2).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_driver_buyer_equals_seller() {
        let p = market(0.3);
        let tree = build_tree(&p, 8).unwrap();
        let g = perfect_driver(&p).unwrap();
        let put = Obstacle::put(&tree, 1.05);
        let pr = price(&tree, &g, &put).unwrap();
        assert!((pr.seller.u0 - pr.buyer.v0).abs() < 1e-12);
        assert!(pr.report().interval_ok);
    }

    #[test]
    fn constant_payoff_buyer_stops_at_root() {
        let p = market(0.0);
        let tree = build_tree(&p, 3).unwrap();
        let b = buyer_price(&tree, &FnDriver::zero(), &Obstacle::constant(&tree, 2.5)).unwrap();
        assert_eq!(b.v0, 2.5);
        assert!(b.exercise.stops_at(tree.root()));
    }

    #[test]
    fn strategy_has_no_default_exposure_after_default() {
        let p = market(0.4);
        let tree = build_tree(&p, 5).unwrap();
        let g = borrow_lend_driver(&p, 0.09).unwrap();
        let s = seller_price(&tree, &g, &Obstacle::put(&tree, 1.0)).unwrap();
        for (id, n) in tree.nodes().iter().enumerate() {
            if n.defaulted {
                assert_eq!(s.strategy.phi2[id], 0.0);
            }
        }
    }

    #[test]
    fn borrow_lend_interval_is_ordered() {
        let p = market(0.2);
        let tree = build_tree(&p, 6).unwrap();
        let g = borrow_lend_driver(&p, 0.07).unwrap();
        let grid = SampleGrid::from_tree(&tree, 200, 3.0, 7);
        assert!(check_sign_dominance(&g, &grid.lipschitz).pass);
        let pr = price(&tree, &g, &Obstacle::put(&tree, 1.05)).unwrap();
        assert!(pr.buyer.v0 <= pr.seller.u0 + INTERVAL_TOL);
        assert!(pr.seller.u0 - pr.buyer.v0 > 0.0);
    }

    #[test]
    fn exercise_times_are_rational_and_optimal() {
        let p = market(0.3);
        let tree = build_tree(&p, 6).unwrap();
        let g = borrow_lend_driver(&p, 0.08).unwrap();
        let put = Obstacle::put(&tree, 1.1);
        let s = seller_price(&tree, &g, &put).unwrap();
        let (nu_star, nu_bar) = rational_exercise_times(&tree, &s.solution, &put);
        for rule in [&nu_star, &nu_bar] {
            assert!(is_rational(&tree, &s.solution, &put, rule).rational);
            let v = g_evaluation(&tree, &g, rule, put.values()).unwrap();
            assert!((v - s.u0).abs() < 1e-10);
        }
        // nu_star never stops after nu_bar: wherever nu_star still runs, so does nu_bar
        let (rs, rb) = (nu_star.reached(&tree), nu_bar.reached(&tree));
        for id in 0..tree.len() {
            if rs[id] && !nu_star.stops_at(NodeId(id)) {
                assert!(rb[id] && !nu_bar.stops_at(NodeId(id)));
            }
        }
    }

    #[test]
    fn maturity_rule_with_early_exercise_is_not_rational() {
        let p = market(0.0);
        let tree = build_tree(&p, 6).unwrap();
        let g = perfect_driver(&p).unwrap();
        let put = Obstacle::put(&tree, 1.2);
        let s = seller_price(&tree, &g, &put).unwrap();
        assert!(s.solution.delta_a.iter().any(|&a| a > 0.0));
        let r = is_rational(&tree, &s.solution, &put, &StoppingRule::at_maturity(&tree));
        assert!(!r.rational);
        let w = r.witness.unwrap();
        assert_eq!(w.reason, Irrationality::ChargedBefore);
        assert_eq!(tree.node(w.node).step, 6);
    }

    #[test]
    fn huge_eps_stops_at_root() {
        let p = market(0.2);
        let tree = build_tree(&p, 4).unwrap();
        let g = perfect_driver(&p).unwrap();
        let put = Obstacle::put(&tree, 1.0);
        let s = seller_price(&tree, &g, &put).unwrap();
        let e = epsilon_rational(&tree, &g, &s.solution, &put, 1e3).unwrap();
        assert!(e.rule.stops_at(tree.root()));
        assert_eq!(e.gap, s.u0 - put.at(0));
        assert!(e.within_bound);
        assert!(epsilon_rational(&tree, &g, &s.solution, &put, 0.0).is_err());
    }
}
