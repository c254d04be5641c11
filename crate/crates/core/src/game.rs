//! Two-subnetwork zero-sum games with bilinear coupling and the augmented
//! Lagrangian used by every algorithm in the crate.
//!
//! Stacked vectors follow agent order: `x = (x_1, ..., x_{n1})` with each
//! `x_i ∈ R^{p1}`, and likewise for `y`, `λ` and `μ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graph::{kron_laplacian, CrossEdgeSet, NetworkTopology, SubnetworkGraph};
use crate::mirror::{GeneratingFunction, MirrorStack};

/// Local cost of one agent. Families are closed so that game descriptions can
/// be serialized into experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostOracle {
    Zero { dim: usize },
    /// `Σ_c ½ w_c (x_c - center_c)²`
    Quadratic { center: Vec<f64>, weight: Vec<f64> },
    /// `log Σ_c exp(x_c - shift_c)`
    LogSumExp { shifts: Vec<f64> },
    /// `exp(x_1 - exp_shift) - x_1 + (x_2 - quad_center)²`, two-dimensional.
    ExpQuadratic { exp_shift: f64, quad_center: f64 },
}

impl CostOracle {
    pub fn dim(&self) -> usize {
        match self {
            CostOracle::Zero { dim } => *dim,
            CostOracle::Quadratic { center, .. } => center.len(),
            CostOracle::LogSumExp { shifts } => shifts.len(),
            CostOracle::ExpQuadratic { .. } => 2,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            CostOracle::Zero { .. } => 0.0,
            CostOracle::Quadratic { center, weight } => x
                .iter()
                .zip(center.iter().zip(weight))
                .map(|(v, (c, w))| 0.5 * w * (v - c) * (v - c))
                .sum(),
            CostOracle::LogSumExp { shifts } => {
                let z: Vec<f64> = x.iter().zip(shifts).map(|(v, s)| v - s).collect();
                crate::mirror::log_sum_exp(&z)
            }
            CostOracle::ExpQuadratic {
                exp_shift,
                quad_center,
            } => (x[0] - exp_shift).exp() - x[0] + (x[1] - quad_center).powi(2),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CostOracle::Zero { .. } => out.fill(0.0),
            CostOracle::Quadratic { center, weight } => {
                for (o, (v, (c, w))) in out.iter_mut().zip(x.iter().zip(center.iter().zip(weight))) {
                    *o = w * (v - c);
                }
            }
            CostOracle::LogSumExp { shifts } => {
                let z: Vec<f64> = x.iter().zip(shifts).map(|(v, s)| v - s).collect();
                crate::mirror::softmax(&z, out);
            }
            CostOracle::ExpQuadratic {
                exp_shift,
                quad_center,
            } => {
                out[0] = (x[0] - exp_shift).exp() - 1.0;
                out[1] = 2.0 * (x[1] - quad_center);
            }
        }
    }
}

/// Coupling block `H_ij`, a `p1 × p2` matrix between agent `i` of the first
/// subnetwork and agent `j` of the second.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub i: usize,
    pub j: usize,
    pub matrix: DMatrix<f64>,
}

/// The four partial gradients of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleGradient {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub y: DVector<f64>,
    pub mu: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct GameSpec {
    topology: NetworkTopology,
    p1: usize,
    p2: usize,
    f: Vec<CostOracle>,
    g: Vec<CostOracle>,
    coupling: Vec<CouplingBlock>,
    b: DMatrix<f64>,
    l1: DMatrix<f64>,
    l2: DMatrix<f64>,
    x_mirror: MirrorStack,
    y_mirror: MirrorStack,
}

impl GameSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        topology: NetworkTopology,
        p1: usize,
        p2: usize,
        f: Vec<CostOracle>,
        g: Vec<CostOracle>,
        coupling: Vec<CouplingBlock>,
        x_sets: Vec<GeneratingFunction>,
        y_sets: Vec<GeneratingFunction>,
    ) -> Result<Self> {
        let n1 = topology.g1.n();
        let n2 = topology.g2.n();
        if p1 == 0 || p2 == 0 {
            return Err(Error::InvalidGame("strategy dimensions must be positive".into()));
        }
        check_len("first-network cost list", n1, f.len())?;
        check_len("second-network cost list", n2, g.len())?;
        check_len("first-network constraint list", n1, x_sets.len())?;
        check_len("second-network constraint list", n2, y_sets.len())?;
        for c in &f {
            check_len("first-network cost dimension", p1, c.dim())?;
        }
        for c in &g {
            check_len("second-network cost dimension", p2, c.dim())?;
        }
        for s in &x_sets {
            check_len("first-network constraint dimension", p1, s.dim())?;
        }
        for s in &y_sets {
            check_len("second-network constraint dimension", p2, s.dim())?;
        }

        let mut b = DMatrix::zeros(n1 * p1, n2 * p2);
        for block in &coupling {
            if block.matrix.nrows() != p1 || block.matrix.ncols() != p2 {
                return Err(Error::InvalidGame(format!(
                    "coupling block ({}, {}) is {}x{}, expected {p1}x{p2}",
                    block.i,
                    block.j,
                    block.matrix.nrows(),
                    block.matrix.ncols()
                )));
            }
            if block.matrix.iter().any(|&v| v != 0.0) && !topology.cross.contains(block.i, block.j) {
                return Err(Error::InvalidGame(format!(
                    "nonzero coupling block ({}, {}) without a cross edge",
                    block.i, block.j
                )));
            }
            b.view_mut((block.i * p1, block.j * p2), (p1, p2))
                .copy_from(&block.matrix);
        }

        let l1 = kron_laplacian(&topology.g1.laplacian(), p1);
        let l2 = kron_laplacian(&topology.g2.laplacian(), p2);
        Ok(Self {
            topology,
            p1,
            p2,
            f,
            g,
            coupling,
            b,
            l1,
            l2,
            x_mirror: MirrorStack::new(x_sets),
            y_mirror: MirrorStack::new(y_sets),
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }
    pub fn n1(&self) -> usize {
        self.topology.g1.n()
    }
    pub fn n2(&self) -> usize {
        self.topology.g2.n()
    }
    pub fn p1(&self) -> usize {
        self.p1
    }
    pub fn p2(&self) -> usize {
        self.p2
    }
    pub fn dim_x(&self) -> usize {
        self.n1() * self.p1
    }
    pub fn dim_y(&self) -> usize {
        self.n2() * self.p2
    }
    pub fn f(&self) -> &[CostOracle] {
        &self.f
    }
    pub fn g(&self) -> &[CostOracle] {
        &self.g
    }
    pub fn coupling(&self) -> &[CouplingBlock] {
        &self.coupling
    }
    /// Stacked coupling matrix `B`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    /// `L1 ⊗ I_{p1}`.
    pub fn l1(&self) -> &DMatrix<f64> {
        &self.l1
    }
    /// `L2 ⊗ I_{p2}`.
    pub fn l2(&self) -> &DMatrix<f64> {
        &self.l2
    }
    pub fn x_mirror(&self) -> &MirrorStack {
        &self.x_mirror
    }
    pub fn y_mirror(&self) -> &MirrorStack {
        &self.y_mirror
    }

    /// `Σ_i f_i(x_i)`
    pub fn f_total(&self, x: &DVector<f64>) -> f64 {
        sum_blocks(&self.f, self.p1, x)
    }

    /// `Σ_j g_j(y_j)`
    pub fn g_total(&self, y: &DVector<f64>) -> f64 {
        sum_blocks(&self.g, self.p2, y)
    }

    pub fn grad_f(&self, x: &DVector<f64>) -> DVector<f64> {
        grad_blocks(&self.f, self.p1, x)
    }

    pub fn grad_g(&self, y: &DVector<f64>) -> DVector<f64> {
        grad_blocks(&self.g, self.p2, y)
    }

    fn check_xy(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        check_len("x", self.dim_x(), x.len())?;
        check_len("y", self.dim_y(), y.len())
    }

    fn check_all(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        y: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Result<()> {
        self.check_xy(x, y)?;
        check_len("lambda", self.dim_x(), lambda.len())?;
        check_len("mu", self.dim_y(), mu.len())
    }

    /// `U(x, y) = f̃(x) + xᵀBy - g̃(y)`.
    pub fn payoff(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_xy(x, y)?;
        Ok(self.payoff_unchecked(x, y))
    }

    pub(crate) fn payoff_unchecked(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.f_total(x) + x.dot(&(&self.b * y)) - self.g_total(y)
    }

    /// Augmented Lagrangian
    /// `S = U(x, y) + λᵀL1x - μᵀL2y + ½xᵀL1x - ½yᵀL2y`.
    pub fn saddle_value(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        y: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Result<f64> {
        self.check_all(x, lambda, y, mu)?;
        Ok(self.saddle_value_unchecked(x, lambda, y, mu))
    }

    pub(crate) fn saddle_value_unchecked(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        y: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> f64 {
        let l1x = &self.l1 * x;
        let l2y = &self.l2 * y;
        self.payoff_unchecked(x, y) + lambda.dot(&l1x) - mu.dot(&l2y) + 0.5 * x.dot(&l1x)
            - 0.5 * y.dot(&l2y)
    }

    pub fn saddle_gradient(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        y: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Result<SaddleGradient> {
        self.check_all(x, lambda, y, mu)?;
        Ok(SaddleGradient {
            x: self.grad_x(x, lambda, y),
            lambda: self.grad_lambda(x),
            y: self.grad_y(x, y, mu),
            mu: self.grad_mu(y),
        })
    }

    /// `∇_x S = ∇f̃(x) + By + L1λ + L1x`
    pub fn grad_x(&self, x: &DVector<f64>, lambda: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = self.grad_f(x);
        out.gemv(1.0, &self.b, y, 1.0);
        out.gemv(1.0, &self.l1, &(lambda + x), 1.0);
        out
    }

    /// `∇_λ S = L1x`
    pub fn grad_lambda(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.l1 * x
    }

    /// `∇_y S = Bᵀx - ∇g̃(y) - L2μ - L2y`
    pub fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let mut out = -self.grad_g(y);
        out.gemv_tr(1.0, &self.b, x, 1.0);
        out.gemv(-1.0, &self.l2, &(mu + y), 1.0);
        out
    }

    /// `∇_μ S = -L2y`
    pub fn grad_mu(&self, y: &DVector<f64>) -> DVector<f64> {
        -(&self.l2 * y)
    }

    /// `S(x, λ*, y*, μ) - S(x*, λ, y, μ*)`.
    pub fn duality_gap(
        &self,
        reference: &SaddleReference,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        y: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> f64 {
        self.saddle_value_unchecked(x, &reference.lambda, &reference.y, mu)
            - self.saddle_value_unchecked(&reference.x, lambda, y, &reference.mu)
    }

    /// Smallest distance from `(x*, y*)` to a face of `X × Y`.
    pub fn interiority_margin(&self, reference: &SaddleReference) -> f64 {
        self.x_mirror
            .distance_to_boundary(&reference.x)
            .min(self.y_mirror.distance_to_boundary(&reference.y))
    }

    /// Logs a warning when the reference equilibrium touches the boundary of
    /// `X × Y` (within `1e-6`); returns whether it is interior.
    pub fn check_interiority(&self, reference: &SaddleReference) -> bool {
        let margin = self.interiority_margin(reference);
        if margin <= 1e-6 {
            log::warn!(
                "equilibrium lies on the boundary of the constraint set (margin {margin:.3e}); \
                 boundary constraints are active"
            );
            false
        } else {
            true
        }
    }
}

fn sum_blocks(costs: &[CostOracle], p: usize, z: &DVector<f64>) -> f64 {
    costs
        .iter()
        .enumerate()
        .map(|(k, c)| c.value(&z.as_slice()[k * p..(k + 1) * p]))
        .sum()
}

fn grad_blocks(costs: &[CostOracle], p: usize, z: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(z.len());
    for (k, c) in costs.iter().enumerate() {
        c.gradient(
            &z.as_slice()[k * p..(k + 1) * p],
            &mut out.as_mut_slice()[k * p..(k + 1) * p],
        );
    }
    out
}

/// A saddle point `(x*, λ*, y*, μ*)` of the augmented Lagrangian together
/// with its KKT residual.
///
/// Multipliers are stored with their consensus component removed; any
/// multiple of `1 ⊗ w` may be added without changing the KKT conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReference {
    #[serde(with = "dvec")]
    pub x: DVector<f64>,
    #[serde(with = "dvec")]
    pub lambda: DVector<f64>,
    #[serde(with = "dvec")]
    pub y: DVector<f64>,
    #[serde(with = "dvec")]
    pub mu: DVector<f64>,
    pub kkt_residual: f64,
}

pub(crate) mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Removes the per-coordinate mean across agents, i.e. projects onto the
/// orthogonal complement of the consensus subspace `1_n ⊗ R^p`.
pub fn remove_consensus(z: &DVector<f64>, p: usize) -> DVector<f64> {
    let mean = consensus_mean(z, p);
    DVector::from_fn(z.len(), |i, _| z[i] - mean[i % p])
}

/// Average of the agent blocks of a stacked vector.
pub fn consensus_mean(z: &DVector<f64>, p: usize) -> Vec<f64> {
    let n = z.len() / p;
    let mut mean = vec![0.0; p];
    for (i, v) in z.iter().enumerate() {
        mean[i % p] += v;
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Broadcasts the consensus component of `z` (its agent average) back to
/// every block.
pub fn consensus_part(z: &DVector<f64>, p: usize) -> DVector<f64> {
    let mean = consensus_mean(z, p);
    DVector::from_fn(z.len(), |i, _| mean[i % p])
}

/// The four-agent-per-side benchmark game: ring subnetworks, diagonal cross
/// edges with identity coupling (`B = I₈`), log-sum-exp and exponential
/// quadratic costs, and random boxes drawn from `seed`.
pub fn build_example1(seed: u64) -> GameSpec {
    let topology = NetworkTopology::new(
        SubnetworkGraph::ring(4).expect("ring"),
        SubnetworkGraph::ring(4).expect("ring"),
        CrossEdgeSet::diagonal(4),
    )
    .expect("diagonal cross edges fit");
    build_example1_on(topology, seed).expect("valid example game")
}

/// [`build_example1`] with caller-chosen subnetwork graphs. The cross edge
/// set must contain the diagonal pairs `(i, i)`.
pub fn build_example1_on(topology: NetworkTopology, seed: u64) -> Result<GameSpec> {
    let n = 4;
    if topology.g1.n() != n || topology.g2.n() != n {
        return Err(Error::InvalidGame("the benchmark game has four agents per side".into()));
    }
    let f = (1..=n)
        .map(|i| CostOracle::LogSumExp {
            shifts: vec![0.1 * i as f64, 0.2 * i as f64],
        })
        .collect();
    let g = (1..=n)
        .map(|j| CostOracle::ExpQuadratic {
            exp_shift: j as f64,
            quad_center: 0.3 * j as f64,
        })
        .collect();
    let coupling = (0..n)
        .map(|i| CouplingBlock {
            i,
            j: i,
            matrix: DMatrix::identity(2, 2),
        })
        .collect();
    let boxes = example1_boxes(seed);
    GameSpec::new(topology, 2, 2, f, g, coupling, boxes.clone(), boxes)
}

/// The random boxes of the benchmark game: lower corners uniform in
/// `[-2, 0]²`, upper corners uniform in `[1, 3]²`.
pub fn example1_boxes(seed: u64) -> Vec<GeneratingFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..4)
        .map(|_| {
            let lower = vec![rng.gen_range(-2.0..=0.0), rng.gen_range(-2.0..=0.0)];
            let upper = vec![rng.gen_range(1.0..=3.0), rng.gen_range(1.0..=3.0)];
            GeneratingFunction::quadratic_box(lower, upper)
        })
        .collect()
}

/// Quadratic game with scalar strategies on rings of `centers_x.len()` and
/// `centers_y.len()` agents: `f_i = ½(x - a_i)²`, `g_j = ½(y - b_j)²`, a common
/// coupling weight on the diagonal cross edges and unconstrained strategies.
/// Its saddle point is available in closed form, which makes it a convenient
/// test problem.
pub fn build_quadratic_game(centers_x: &[f64], centers_y: &[f64], coupling: f64) -> Result<GameSpec> {
    let n1 = centers_x.len();
    let n2 = centers_y.len();
    let topology = NetworkTopology::new(
        SubnetworkGraph::ring(n1)?,
        SubnetworkGraph::ring(n2)?,
        CrossEdgeSet::diagonal(n1.min(n2)),
    )?;
    let f = centers_x
        .iter()
        .map(|&a| CostOracle::Quadratic {
            center: vec![a],
            weight: vec![1.0],
        })
        .collect();
    let g = centers_y
        .iter()
        .map(|&b| CostOracle::Quadratic {
            center: vec![b],
            weight: vec![1.0],
        })
        .collect();
    let blocks = (0..n1.min(n2))
        .map(|i| CouplingBlock {
            i,
            j: i,
            matrix: DMatrix::from_element(1, 1, coupling),
        })
        .collect();
    GameSpec::new(
        topology,
        1,
        1,
        f,
        g,
        blocks,
        vec![GeneratingFunction::QuadraticFree { dim: 1 }; n1],
        vec![GeneratingFunction::QuadraticFree { dim: 1 }; n2],
    )
}
