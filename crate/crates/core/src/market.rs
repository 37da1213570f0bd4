//! Discrete market with one defaultable asset.
//!
//! Each step carries one binomial Brownian move and one Bernoulli default
//! move. Alive nodes branch three ways (up, down, default) whenever
//! `lambda(t) * dt > 0`, defaulted nodes branch two ways. The increments
//! `(dW, dM)` are chosen so that every child-valued function is exactly
//! `E + Z dW + K dM` at its parent.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant function of time, right-continuous.
///
/// Deserializes either from a plain number or from
/// `{"knots": [t1, ..], "values": [v0, v1, ..]}`, where `values[k]` holds on
/// `[knots[k-1], knots[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PiecewiseConstant {
    Constant(f64),
    Steps { knots: Vec<f64>, values: Vec<f64> },
}

impl PiecewiseConstant {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            PiecewiseConstant::Constant(v) => *v,
            PiecewiseConstant::Steps { knots, values } => {
                let idx = knots.partition_point(|&k| k <= t);
                values[idx]
            }
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self {
            PiecewiseConstant::Constant(v) if !v.is_finite() => Err(Error::param(field, "must be finite")),
            PiecewiseConstant::Constant(_) => Ok(()),
            PiecewiseConstant::Steps { knots, values } => {
                if values.len() != knots.len() + 1 {
                    return Err(Error::param(
                        field,
                        "`values` must have exactly one more entry than `knots`",
                    ));
                }
                if knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::param(field, "`knots` must be strictly increasing"));
                }
                if knots.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::param(field, "must be finite"));
                }
                Ok(())
            }
        }
    }

    fn knots(&self) -> &[f64] {
        match self {
            PiecewiseConstant::Constant(_) => &[],
            PiecewiseConstant::Steps { knots, .. } => knots,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            PiecewiseConstant::Constant(_) => true,
            PiecewiseConstant::Steps { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

impl From<f64> for PiecewiseConstant {
    fn from(v: f64) -> Self {
        PiecewiseConstant::Constant(v)
    }
}

/// Model coefficients at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub r: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub lambda: f64,
}

impl Coefficients {
    /// Market price of diffusion risk `(mu1 - r) / sigma1`.
    pub fn theta1(&self) -> f64 {
        (self.mu1 - self.r) / self.sigma1
    }

    /// `theta2 * lambda = sigma2 theta1 - mu2 + r`; finite even when
    /// `lambda = 0`.
    pub fn theta2_lambda(&self) -> f64 {
        self.sigma2 * self.theta1() - self.mu2 + self.r
    }

    /// Market price of default risk; `None` when `lambda = 0`.
    pub fn theta2(&self) -> Option<f64> {
        (self.lambda > 0.0).then(|| self.theta2_lambda() / self.lambda)
    }
}

/// Coefficients of the three-asset market, each piecewise constant on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub r: PiecewiseConstant,
    pub mu1: PiecewiseConstant,
    pub mu2: PiecewiseConstant,
    pub sigma1: PiecewiseConstant,
    pub sigma2: PiecewiseConstant,
    pub lambda: PiecewiseConstant,
    pub s1_0: f64,
    pub s2_0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl MarketParams {
    /// Constant-coefficient market.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        r: f64,
        mu1: f64,
        mu2: f64,
        sigma1: f64,
        sigma2: f64,
        lambda: f64,
        s1_0: f64,
        s2_0: f64,
        horizon: f64,
    ) -> Self {
        MarketParams {
            r: r.into(),
            mu1: mu1.into(),
            mu2: mu2.into(),
            sigma1: sigma1.into(),
            sigma2: sigma2.into(),
            lambda: lambda.into(),
            s1_0,
            s2_0,
            horizon,
        }
    }

    pub fn at(&self, t: f64) -> Coefficients {
        Coefficients {
            r: self.r.at(t),
            mu1: self.mu1.at(t),
            mu2: self.mu2.at(t),
            sigma1: self.sigma1.at(t),
            sigma2: self.sigma2.at(t),
            lambda: self.lambda.at(t),
        }
    }

    fn fields(&self) -> [(&'static str, &PiecewiseConstant); 6] {
        [
            ("r", &self.r),
            ("mu1", &self.mu1),
            ("mu2", &self.mu2),
            ("sigma1", &self.sigma1),
            ("sigma2", &self.sigma2),
            ("lambda", &self.lambda),
        ]
    }

    /// Left endpoints of the common pieces of all coefficients inside `[0, T)`.
    pub fn piece_starts(&self) -> Vec<f64> {
        let mut starts = vec![0.0];
        for (_, f) in self.fields() {
            starts.extend(f.knots().iter().copied().filter(|&k| k > 0.0 && k < self.horizon));
        }
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        starts
    }

    /// Coefficient snapshots, one per common piece.
    pub fn snapshots(&self) -> Vec<Coefficients> {
        self.piece_starts().into_iter().map(|t| self.at(t)).collect()
    }

    /// True if every coefficient is constant in time.
    pub fn is_constant(&self) -> bool {
        self.fields().iter().all(|(_, f)| f.is_constant())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("market.T", "horizon must be positive"));
        }
        for (name, f) in self.fields() {
            f.validate(&format!("market.{name}"))?;
        }
        if !self.s1_0.is_finite() || !self.s2_0.is_finite() {
            return Err(Error::param("market.s1_0", "initial prices must be finite"));
        }
        for c in self.snapshots() {
            if c.sigma1 <= 0.0 {
                return Err(Error::param("market.sigma1", "volatility must be positive"));
            }
            if c.sigma2 <= 0.0 {
                return Err(Error::param("market.sigma2", "volatility must be positive"));
            }
            if c.lambda < 0.0 {
                return Err(Error::param("market.lambda", "intensity must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Up,
    Down,
    Default,
}

/// One outgoing edge of a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub child: NodeId,
    pub kind: BranchKind,
    pub prob: f64,
    pub dw: f64,
    pub dm: f64,
}

/// Market data a driver may look at when evaluated at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub t: f64,
    /// Default intensity seen by the node; zero once default has occurred.
    pub lambda: f64,
    pub defaulted: bool,
    pub s1: f64,
    pub s2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub step: usize,
    /// Number of up moves of the Brownian component so far.
    pub ups: usize,
    pub defaulted: bool,
    pub t: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    /// Effective intensity on the outgoing step.
    pub lambda: f64,
    #[serde(skip)]
    branches: Range<usize>,
}

impl Node {
    pub fn state(&self) -> NodeState {
        NodeState {
            t: self.t,
            lambda: self.lambda,
            defaulted: self.defaulted,
            s1: self.s1,
            s2: self.s2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    /// Recombining in `(step, ups, defaulted)`.
    Lattice,
    /// Every node has exactly one parent.
    Unrolled,
}

/// Discrete filtration as an immutable node graph, stored step by step.
#[derive(Debug, Clone)]
pub struct Tree {
    n_steps: usize,
    dt: f64,
    nodes: Vec<Node>,
    branches: Vec<Branch>,
    steps: Vec<Range<usize>>,
    layout: Layout,
    params: MarketParams,
}

impl Tree {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Market the tree was built from.
    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    /// Coefficients in force on the step leaving `id`.
    pub fn coefficients(&self, id: NodeId) -> Coefficients {
        self.params.at(self.nodes[id.0].t)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn branches(&self, id: NodeId) -> &[Branch] {
        &self.branches[self.nodes[id.0].branches.clone()]
    }

    /// Node ids of time step `i`, a contiguous range.
    pub fn step_range(&self, i: usize) -> Range<usize> {
        self.steps[i].clone()
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.nodes[id.0].step == self.n_steps
    }

    pub fn is_lattice(&self) -> bool {
        self.layout == Layout::Lattice
    }

    /// Lattice lookup by `(step, ups, defaulted)`; `None` on unrolled trees or
    /// for unreachable states.
    pub fn lattice_id(&self, step: usize, ups: usize, defaulted: bool) -> Option<NodeId> {
        if self.layout != Layout::Lattice || step > self.n_steps {
            return None;
        }
        let range = self.step_range(step);
        let idx = if defaulted {
            if ups >= step {
                return None;
            }
            range.start + step + 1 + ups
        } else {
            if ups > step {
                return None;
            }
            range.start + ups
        };
        (idx < range.end).then_some(NodeId(idx))
    }

    /// `(S0, S1, S2)` at a node.
    pub fn node_prices(&self, id: NodeId) -> Result<(f64, f64, f64)> {
        let n = self.get(id)?;
        Ok((n.s0, n.s1, n.s2))
    }

    /// Unconditional probability of reaching each node.
    pub fn reach_probabilities(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        p[0] = 1.0;
        for i in 0..self.n_steps {
            for id in self.step_range(i) {
                let pn = p[id];
                for b in self.branches(NodeId(id)) {
                    p[b.child.0] += pn * b.prob;
                }
            }
        }
        p
    }

    /// Parents of every node (one for unrolled trees, up to three on a lattice).
    pub fn parents(&self) -> Vec<Vec<(NodeId, usize)>> {
        let mut parents = vec![Vec::new(); self.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for (bi, b) in self.branches[node.branches.clone()].iter().enumerate() {
                parents[b.child.0].push((NodeId(id), bi));
            }
        }
        parents
    }

    /// Expands the lattice into a tree with one node per path prefix.
    ///
    /// Prices, intensities and increments are copied from the lattice node
    /// each path node originates from.
    pub fn unroll(&self) -> UnrolledTree {
        let mut nodes = Vec::new();
        let mut branches = Vec::new();
        let mut origin = Vec::new();
        let mut steps = Vec::with_capacity(self.n_steps + 1);
        let node_of = |o: NodeId, nodes: &mut Vec<Node>, origin: &mut Vec<NodeId>| {
            let mut n = self.nodes[o.0].clone();
            n.branches = 0..0;
            nodes.push(n);
            origin.push(o);
        };
        node_of(self.root(), &mut nodes, &mut origin);
        steps.push(0..1);
        for i in 0..self.n_steps {
            let current = steps[i].clone();
            let start = nodes.len();
            for id in current {
                let o = origin[id];
                let first = branches.len();
                for b in self.branches(o) {
                    let child = NodeId(nodes.len());
                    node_of(b.child, &mut nodes, &mut origin);
                    branches.push(Branch { child, ..*b });
                }
                nodes[id].branches = first..branches.len();
            }
            steps.push(start..nodes.len());
        }
        let last = nodes.len();
        for n in &mut nodes[steps[self.n_steps].clone()] {
            n.branches = branches.len()..branches.len();
        }
        debug_assert_eq!(last, nodes.len());
        UnrolledTree {
            tree: Tree {
                n_steps: self.n_steps,
                dt: self.dt,
                nodes,
                branches,
                steps,
                layout: Layout::Unrolled,
                params: self.params.clone(),
            },
            origin,
        }
    }

    /// Serializable snapshot used by `--dump-tree`.
    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            n_steps: self.n_steps,
            dt: self.dt,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeRecord {
                    id,
                    step: n.step,
                    ups: n.ups,
                    defaulted: n.defaulted,
                    s0: n.s0,
                    s1: n.s1,
                    s2: n.s2,
                    lambda: n.lambda,
                    branches: self.branches(NodeId(id)).to_vec(),
                })
                .collect(),
        }
    }
}

/// A lattice expanded along paths, with the lattice node behind each path node.
#[derive(Debug, Clone)]
pub struct UnrolledTree {
    pub tree: Tree,
    pub origin: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub n_steps: usize,
    pub dt: f64,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub step: usize,
    pub ups: usize,
    pub defaulted: bool,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub lambda: f64,
    pub branches: Vec<Branch>,
}

/// Builds the recombining market lattice.
///
/// Prices follow multiplicative Euler steps. With time-varying coefficients
/// the Euler product is path dependent, so a node takes its prices from its
/// first parent in the order (up from below, down from above, default).
pub fn build_tree(params: &MarketParams, n_steps: usize) -> Result<Tree> {
    params.validate()?;
    if n_steps == 0 {
        return Err(Error::param("grid.n_steps", "must be at least 1"));
    }
    let dt = params.horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();

    let coefs: Vec<Coefficients> = (0..n_steps).map(|i| params.at(i as f64 * dt)).collect();
    for (i, c) in coefs.iter().enumerate() {
        let q = c.lambda * dt;
        if q >= 1.0 {
            return Err(Error::DefaultProbability { step: i, value: q });
        }
    }
    // defaulted states exist at step i iff default was possible at some earlier step
    let mut default_possible = vec![false; n_steps + 1];
    for i in 1..=n_steps {
        default_possible[i] = default_possible[i - 1] || coefs[i - 1].lambda > 0.0;
    }

    let mut steps = Vec::with_capacity(n_steps + 1);
    let mut start = 0;
    for (i, &dflt) in default_possible.iter().enumerate() {
        let count = i + 1 + if dflt { i } else { 0 };
        steps.push(start..start + count);
        start += count;
    }
    let total = start;
    let id_of = |step: usize, ups: usize, defaulted: bool| -> usize {
        let s = steps[step].start;
        if defaulted {
            s + step + 1 + ups
        } else {
            s + ups
        }
    };

    let mut nodes: Vec<Option<Node>> = vec![None; total];
    nodes[0] = Some(Node {
        step: 0,
        ups: 0,
        defaulted: false,
        t: 0.0,
        s0: 1.0,
        s1: params.s1_0,
        s2: params.s2_0,
        lambda: coefs[0].lambda,
        branches: 0..0,
    });
    let mut branches = Vec::new();

    for i in 0..n_steps {
        let c = coefs[i];
        let t_next = (i + 1) as f64 * dt;
        let lambda_next = coefs.get(i + 1).map_or(0.0, |c| c.lambda);
        for id in steps[i].clone() {
            let node = nodes[id].clone().expect("node built before its children");
            let first = branches.len();
            let s0 = node.s0 * (1.0 + c.r * dt);
            let lam = node.lambda;
            let q = lam * dt;
            let mut moves = vec![
                (BranchKind::Up, sqrt_dt, node.ups + 1),
                (BranchKind::Down, -sqrt_dt, node.ups),
            ];
            if !node.defaulted && q > 0.0 {
                moves.push((BranchKind::Default, 0.0, node.ups));
            }
            for (kind, dw, ups) in moves {
                let to_default = kind == BranchKind::Default;
                let defaulted = node.defaulted || to_default;
                let (prob, dm) = match kind {
                    BranchKind::Default => (q, 1.0 - q),
                    _ => ((1.0 - q) / 2.0, -q),
                };
                let child = id_of(i + 1, ups, defaulted);
                if nodes[child].is_none() {
                    let s1 = node.s1 * (1.0 + c.mu1 * dt + c.sigma1 * dw);
                    let s2 = if defaulted {
                        0.0
                    } else {
                        node.s2 * (1.0 + (c.mu2 + c.lambda) * dt + c.sigma2 * dw)
                    };
                    nodes[child] = Some(Node {
                        step: i + 1,
                        ups,
                        defaulted,
                        t: t_next,
                        s0,
                        s1,
                        s2,
                        lambda: if defaulted { 0.0 } else { lambda_next },
                        branches: 0..0,
                    });
                }
                branches.push(Branch {
                    child: NodeId(child),
                    kind,
                    prob,
                    dw,
                    dm,
                });
            }
            nodes[id].as_mut().unwrap().branches = first..branches.len();
        }
    }
    let end = branches.len();
    let nodes: Vec<Node> = nodes
        .into_iter()
        .map(|n| {
            let mut n = n.expect("every lattice slot is reachable");
            if n.step == n_steps {
                n.branches = end..end;
                n.lambda = 0.0;
            }
            n
        })
        .collect();

    Ok(Tree {
        n_steps,
        dt,
        nodes,
        branches,
        steps,
        layout: Layout::Lattice,
        params: params.clone(),
    })
}
