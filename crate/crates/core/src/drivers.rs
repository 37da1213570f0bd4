//! Nonlinear drivers `g(t, y, z, k)` and sampling checks for their standing
//! assumptions.
//!
//! All shipped drivers read the model coefficients at `t` from their
//! [`MarketParams`] and the effective default intensity from the
//! [`NodeState`]. When that intensity is zero (after default, or in a market
//! without default) the jump coefficient `k` is ignored, which is what
//! Lipschitz continuity with weight `sqrt(lambda)` forces.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{Coefficients, MarketParams, NodeState, Tree};
use crate::pricing::phi_unchecked;

/// Tolerance on difference-quotient ratios in the sampling checks.
pub const RATIO_TOL: f64 = 1e-10;

/// A generator of the wealth dynamics.
pub trait Driver: Send + Sync {
    fn name(&self) -> &str;

    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64;

    /// Declared constant `C` of the lambda-Lipschitz bound.
    fn lipschitz_c(&self) -> f64;
}

impl<D: Driver + ?Sized> Driver for Arc<D> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64 {
        (**self).eval(t, y, z, k, state)
    }
    fn lipschitz_c(&self) -> f64 {
        (**self).lipschitz_c()
    }
}

impl<D: Driver + ?Sized> Driver for &D {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64 {
        (**self).eval(t, y, z, k, state)
    }
    fn lipschitz_c(&self) -> f64 {
        (**self).lipschitz_c()
    }
}

type DriverFn = dyn Fn(f64, f64, f64, f64, &NodeState) -> f64 + Send + Sync;

/// Driver backed by a closure, for ad-hoc generators.
#[derive(Clone)]
pub struct FnDriver {
    name: String,
    c: f64,
    f: Arc<DriverFn>,
}

impl FnDriver {
    pub fn new(
        name: impl Into<String>,
        lipschitz_c: f64,
        f: impl Fn(f64, f64, f64, f64, &NodeState) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnDriver {
            name: name.into(),
            c: lipschitz_c,
            f: Arc::new(f),
        }
    }

    /// `g = 0`.
    pub fn zero() -> Self {
        FnDriver::new("zero", 0.0, |_, _, _, _, _| 0.0)
    }

    /// `g = -r y`: pure discounting.
    pub fn discount(r: f64) -> Self {
        FnDriver::new("discount", r.abs(), move |_, y, _, _, _| -r * y)
    }
}

impl fmt::Debug for FnDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDriver")
            .field("name", &self.name)
            .field("c", &self.c)
            .finish()
    }
}

impl Driver for FnDriver {
    fn name(&self) -> &str {
        &self.name
    }
    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64 {
        (self.f)(t, y, z, k, state)
    }
    fn lipschitz_c(&self) -> f64 {
        self.c
    }
}

/// `g + delta`, used to perturb a driver by a constant.
#[derive(Debug, Clone)]
pub struct Shifted<D> {
    pub inner: D,
    pub delta: f64,
    name: String,
}

impl<D: Driver> Shifted<D> {
    pub fn new(inner: D, delta: f64) -> Self {
        let name = format!("{}+{delta}", inner.name());
        Shifted { inner, delta, name }
    }
}

impl<D: Driver> Driver for Shifted<D> {
    fn name(&self) -> &str {
        &self.name
    }
    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64 {
        self.inner.eval(t, y, z, k, state) + self.delta
    }
    fn lipschitz_c(&self) -> f64 {
        self.inner.lipschitz_c()
    }
}

/// Smallest positive intensity over the pieces, if any.
fn min_positive_lambda(snaps: &[Coefficients]) -> Option<f64> {
    snaps
        .iter()
        .map(|c| c.lambda)
        .filter(|&l| l > 0.0)
        .min_by(f64::total_cmp)
}

fn max_over(snaps: &[Coefficients], f: impl Fn(&Coefficients) -> f64) -> f64 {
    snaps.iter().map(f).fold(0.0, f64::max)
}

/// Linear driver of the perfect market,
/// `g = -r y - theta1 z - theta2 lambda k`.
#[derive(Debug, Clone)]
pub struct PerfectDriver {
    params: MarketParams,
    c: f64,
}

pub fn perfect_driver(params: &MarketParams) -> Result<PerfectDriver> {
    params.validate()?;
    let snaps = params.snapshots();
    let c = max_over(&snaps, |c| c.r.abs())
        + max_over(&snaps, |c| c.theta1().abs())
        + max_over(&snaps, |c| {
            if c.lambda > 0.0 {
                c.theta2_lambda().abs() / c.lambda.sqrt()
            } else {
                0.0
            }
        });
    Ok(PerfectDriver {
        params: params.clone(),
        c,
    })
}

impl PerfectDriver {
    fn linear(c: &Coefficients, y: f64, z: f64, k: f64, lambda: f64) -> f64 {
        let jump = if lambda > 0.0 { c.theta2_lambda() * k } else { 0.0 };
        -c.r * y - c.theta1() * z - jump
    }
}

impl Driver for PerfectDriver {
    fn name(&self) -> &str {
        "perfect"
    }
    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64 {
        PerfectDriver::linear(&self.params.at(t), y, z, k, state.lambda)
    }
    fn lipschitz_c(&self) -> f64 {
        self.c
    }
}

/// Perfect driver plus a spread `R - r` charged on borrowed wealth:
/// `g = perfect + (R - r) (phi1 + phi2 - y)^+` with `(phi1, phi2) = Phi(z, k)`.
#[derive(Debug, Clone)]
pub struct BorrowLendDriver {
    perfect: PerfectDriver,
    borrow_rate: f64,
    c: f64,
}

/// Driver for a borrowing rate `R` above the lending rate `r`.
pub fn borrow_lend_driver(params: &MarketParams, borrow_rate: f64) -> Result<BorrowLendDriver> {
    let perfect = perfect_driver(params)?;
    let snaps = params.snapshots();
    let max_r = snaps.iter().map(|c| c.r).fold(f64::NEG_INFINITY, f64::max);
    if !borrow_rate.is_finite() || borrow_rate < max_r {
        return Err(Error::param(
            "driver.params.borrow_rate",
            format!("borrowing rate {borrow_rate} is below the lending rate {max_r}"),
        ));
    }
    let spread = borrow_rate - snaps.iter().map(|c| c.r).fold(f64::INFINITY, f64::min);
    let lam_min = min_positive_lambda(&snaps);
    let k_weight = match lam_min {
        Some(l) => max_over(&snaps, |c| (c.sigma2 / c.sigma1 - 1.0).abs()) / l.sqrt(),
        None => 0.0,
    };
    let c = perfect.c + spread * (1.0 + max_over(&snaps, |c| 1.0 / c.sigma1) + k_weight);
    Ok(BorrowLendDriver {
        perfect,
        borrow_rate,
        c,
    })
}

impl BorrowLendDriver {
    pub fn borrow_rate(&self) -> f64 {
        self.borrow_rate
    }
}

impl Driver for BorrowLendDriver {
    fn name(&self) -> &str {
        "borrow_lend"
    }
    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64 {
        let c = self.perfect.params.at(t);
        let k = if state.lambda > 0.0 { k } else { 0.0 };
        let (phi1, phi2) = phi_unchecked(z, k, c.sigma1, c.sigma2);
        let borrowed = (phi1 + phi2 - y).max(0.0);
        PerfectDriver::linear(&c, y, z, k, state.lambda) + (self.borrow_rate - c.r) * borrowed
    }
    fn lipschitz_c(&self) -> f64 {
        self.c
    }
}

/// Impact parameters of the large-trader driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeTraderImpact {
    /// Slope `alpha` of the funding rate `r + alpha phi1`.
    pub alpha: f64,
    /// Constant intensity impact `gamma` in `-gamma lambda phi2`.
    pub gamma: f64,
    /// Box `|y|, |phi1|, |phi2| <= bound` on which the declared Lipschitz
    /// constant holds.
    #[serde(default = "default_domain_bound")]
    pub domain_bound: f64,
}

fn default_domain_bound() -> f64 {
    10.0
}

/// Seller whose hedge moves the funding rate and the default intensity:
///
/// `g = -(r + alpha phi1) y - phi1 (mu1 - r - alpha phi1)
///      - phi2 (mu2 - r - alpha phi1) - gamma lambda phi2`
///
/// written in `(z, k)` through `phi2 = -k`, `phi1 = (z + sigma2 k) / sigma1`.
#[derive(Debug, Clone)]
pub struct LargeTraderDriver {
    params: MarketParams,
    impact: LargeTraderImpact,
    c: f64,
}

pub fn large_trader_driver(params: &MarketParams, impact: LargeTraderImpact) -> Result<LargeTraderDriver> {
    params.validate()?;
    if !(impact.gamma > -1.0) || !impact.gamma.is_finite() {
        return Err(Error::param(
            "driver.params.gamma",
            format!("intensity impact must exceed -1, got {}", impact.gamma),
        ));
    }
    if !impact.alpha.is_finite() {
        return Err(Error::param("driver.params.alpha", "must be finite"));
    }
    if !(impact.domain_bound > 0.0) {
        return Err(Error::param("driver.params.domain_bound", "must be positive"));
    }
    let perfect = perfect_driver(params)?;
    let snaps = params.snapshots();
    let b = impact.domain_bound;
    // gradient of phi1 (phi1 + phi2 - y) in (y, phi1, phi2) is bounded by (B, 4B, B) on the box
    let k_weight = match min_positive_lambda(&snaps) {
        Some(l) => max_over(&snaps, |c| 4.0 * b * c.sigma2 / c.sigma1 + b) / l.sqrt(),
        None => 0.0,
    };
    let c = perfect.c
        + impact.alpha.abs() * (b + max_over(&snaps, |c| 4.0 * b / c.sigma1) + k_weight)
        + impact.gamma.abs() * max_over(&snaps, |c| c.lambda.sqrt());
    Ok(LargeTraderDriver {
        params: params.clone(),
        impact,
        c,
    })
}

impl LargeTraderDriver {
    pub fn impact(&self) -> LargeTraderImpact {
        self.impact
    }
}

impl Driver for LargeTraderDriver {
    fn name(&self) -> &str {
        "large_trader"
    }
    fn eval(&self, t: f64, y: f64, z: f64, k: f64, state: &NodeState) -> f64 {
        let c = self.params.at(t);
        let lambda = state.lambda;
        let k = if lambda > 0.0 { k } else { 0.0 };
        let (phi1, phi2) = phi_unchecked(z, k, c.sigma1, c.sigma2);
        let rate = c.r + self.impact.alpha * phi1;
        -rate * y - phi1 * (c.mu1 - rate) - phi2 * (c.mu2 - rate) - self.impact.gamma * lambda * phi2
    }
    fn lipschitz_c(&self) -> f64 {
        self.c
    }
}

/// A pair of points at which the Lipschitz bound is probed.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzSample {
    pub state: NodeState,
    pub a: [f64; 3],
    pub b: [f64; 3],
}

/// A `(y, z, k1, k2)` probe of the jump-monotonicity assumption.
#[derive(Debug, Clone, Copy)]
pub struct GammaSample {
    pub state: NodeState,
    pub y: f64,
    pub z: f64,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    pub declared_c: f64,
    pub samples: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaReport {
    pub min_ratio: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Largest `|g(a) - g(b)| / (|dy| + |dz| + sqrt(lambda) |dk|)` over the pairs.
pub fn check_lambda_admissible(driver: &dyn Driver, grid: &[LipschitzSample]) -> LipschitzReport {
    let mut max_ratio: f64 = 0.0;
    let mut used = 0;
    for s in grid {
        let t = s.state.t;
        let [y1, z1, k1] = s.a;
        let [y2, z2, k2] = s.b;
        let denom = (y1 - y2).abs() + (z1 - z2).abs() + s.state.lambda.sqrt() * (k1 - k2).abs();
        let num = (driver.eval(t, y1, z1, k1, &s.state) - driver.eval(t, y2, z2, k2, &s.state)).abs();
        if denom > 0.0 {
            used += 1;
            max_ratio = max_ratio.max(num / denom);
        } else if num > 0.0 {
            // g moved while the weighted distance is zero: k-dependence at lambda = 0
            used += 1;
            max_ratio = f64::INFINITY;
        }
    }
    let declared_c = driver.lipschitz_c();
    LipschitzReport {
        max_ratio,
        declared_c,
        samples: used,
        pass: max_ratio <= declared_c + RATIO_TOL,
    }
}

/// Smallest `(g(k1) - g(k2)) / ((k1 - k2) lambda)`; passes when it stays
/// above `-1`.
pub fn check_gamma_assumption(driver: &dyn Driver, grid: &[GammaSample]) -> GammaReport {
    let mut min_ratio = f64::INFINITY;
    let mut used = 0;
    for s in grid {
        let lambda = s.state.lambda;
        if lambda <= 0.0 || s.k1 == s.k2 {
            continue;
        }
        let t = s.state.t;
        let num = driver.eval(t, s.y, s.z, s.k1, &s.state) - driver.eval(t, s.y, s.z, s.k2, &s.state);
        min_ratio = min_ratio.min(num / ((s.k1 - s.k2) * lambda));
        used += 1;
    }
    GammaReport {
        min_ratio,
        samples: used,
        pass: used == 0 || min_ratio >= -1.0 + RATIO_TOL,
    }
}

/// Random probes at the node states of a tree, coordinates uniform in
/// `[-scale, scale]`.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    pub lipschitz: Vec<LipschitzSample>,
    pub gamma: Vec<GammaSample>,
}

impl SampleGrid {
    pub fn from_tree(tree: &Tree, count: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let non_terminal: Vec<NodeState> = (0..tree.n_steps())
            .flat_map(|i| tree.step_range(i))
            .map(|id| tree.nodes()[id].state())
            .collect();
        let point = |rng: &mut ChaCha8Rng| -> [f64; 3] {
            [
                rng.random_range(-scale..=scale),
                rng.random_range(-scale..=scale),
                rng.random_range(-scale..=scale),
            ]
        };
        let mut lipschitz = Vec::with_capacity(count);
        let mut gamma = Vec::with_capacity(count);
        for _ in 0..count {
            let state = non_terminal[rng.random_range(0..non_terminal.len())];
            let a = point(&mut rng);
            // half of the pairs differ in one coordinate only
            let b = if rng.random_bool(0.5) {
                let mut b = a;
                let axis = rng.random_range(0..3);
                b[axis] = rng.random_range(-scale..=scale);
                b
            } else {
                point(&mut rng)
            };
            lipschitz.push(LipschitzSample { state, a, b });
            let g = point(&mut rng);
            gamma.push(GammaSample {
                state,
                y: g[0],
                z: g[1],
                k1: g[2],
                k2: rng.random_range(-scale..=scale),
            });
        }
        SampleGrid { lipschitz, gamma }
    }
}
