//! Subnetwork graphs, cross-network edges and Laplacian operators.
//!
//! Agents are indexed from zero inside each subnetwork. Graphs are dense and
//! validated once at construction; everything downstream assumes a symmetric,
//! nonnegative, zero-diagonal and connected weight matrix.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which of the two subnetworks an agent belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subnetwork {
    /// The minimizing network (strategies `x`).
    First,
    /// The maximizing network (strategies `y`).
    Second,
}

impl Subnetwork {
    pub fn other(self) -> Self {
        match self {
            Subnetwork::First => Subnetwork::Second,
            Subnetwork::Second => Subnetwork::First,
        }
    }

    /// 1 or 2, as written in reports.
    pub fn number(self) -> u8 {
        match self {
            Subnetwork::First => 1,
            Subnetwork::Second => 2,
        }
    }
}

/// Weighted undirected connected graph on `n` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetworkGraph {
    weights: DMatrix<f64>,
}

impl SubnetworkGraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(Error::InvalidGraph(format!(
                "weight matrix must be square and non-empty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("nonzero self-loop at node {i}")));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weight ({i}, {j}) = {w} is not a finite nonnegative number"
                    )));
                }
                if w != weights[(j, i)] {
                    return Err(Error::InvalidGraph(format!(
                        "weights ({i}, {j}) and ({j}, {i}) differ"
                    )));
                }
            }
        }
        if !is_connected(&weights) {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(Self { weights })
    }

    /// Builds a graph from an undirected weighted edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut weights = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "edge ({i}, {j}) in a graph with {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
        Self::new(weights)
    }

    /// Cycle `0 - 1 - ... - (n-1) - 0` with unit weights. For `n = 2` this is
    /// the single edge, for `n = 1` the isolated node.
    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<_> = match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1, 1.0)],
            _ => (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect(),
        };
        Self::from_edges(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j, 1.0));
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// `D - A` with `D` the diagonal of row sums.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = -self.weights.clone();
        for i in 0..n {
            // Summing the off-diagonal entries of the row in the same order the
            // matrix-vector product will visit them keeps `L * 1` at zero.
            let degree: f64 = self.weights.row(i).iter().sum();
            l[(i, i)] = degree;
        }
        l
    }

    pub fn neighbors(&self, k: usize) -> Result<Vec<usize>> {
        if k >= self.n() {
            return Err(Error::IndexOutOfRange(format!(
                "agent {k} in a subnetwork of {} agents",
                self.n()
            )));
        }
        Ok((0..self.n()).filter(|&h| self.weights[(k, h)] > 0.0).collect())
    }
}

/// Breadth-first search over strictly positive weights.
pub fn is_connected(weights: &DMatrix<f64>) -> bool {
    let n = weights.nrows();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && weights[(i, j)] > 0.0 {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// `L ⊗ I_p`.
pub fn kron_laplacian(laplacian: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    laplacian.kronecker(&DMatrix::<f64>::identity(p, p))
}

/// Pairs `(i, j)` meaning agent `i` of the first subnetwork and agent `j` of
/// the second observe each other.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrossEdgeSet {
    edges: BTreeSet<(usize, usize)>,
}

impl CrossEdgeSet {
    pub fn new<I: IntoIterator<Item = (usize, usize)>>(edges: I) -> Self {
        Self {
            edges: edges.into_iter().collect(),
        }
    }

    /// `(i, i)` for `i < n`.
    pub fn diagonal(n: usize) -> Self {
        Self::new((0..n).map(|i| (i, i)))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub g1: SubnetworkGraph,
    pub g2: SubnetworkGraph,
    pub cross: CrossEdgeSet,
}

impl NetworkTopology {
    pub fn new(g1: SubnetworkGraph, g2: SubnetworkGraph, cross: CrossEdgeSet) -> Result<Self> {
        for (i, j) in cross.iter() {
            if i >= g1.n() || j >= g2.n() {
                return Err(Error::IndexOutOfRange(format!(
                    "cross edge ({i}, {j}) with subnetwork sizes {} and {}",
                    g1.n(),
                    g2.n()
                )));
            }
        }
        Ok(Self { g1, g2, cross })
    }

    pub fn graph(&self, l: Subnetwork) -> &SubnetworkGraph {
        match l {
            Subnetwork::First => &self.g1,
            Subnetwork::Second => &self.g2,
        }
    }

    pub fn size(&self, l: Subnetwork) -> usize {
        self.graph(l).n()
    }

    pub fn total_agents(&self) -> usize {
        self.g1.n() + self.g2.n()
    }

    /// Same-subnetwork neighbors of agent `k` in subnetwork `l`.
    pub fn neighbors(&self, l: Subnetwork, k: usize) -> Result<Vec<usize>> {
        self.graph(l).neighbors(k)
    }

    /// Agents of the other subnetwork linked to agent `k` of `l` by a cross edge.
    pub fn cross_neighbors(&self, l: Subnetwork, k: usize) -> Result<Vec<usize>> {
        if k >= self.size(l) {
            return Err(Error::IndexOutOfRange(format!(
                "agent {k} in subnetwork {} of {} agents",
                l.number(),
                self.size(l)
            )));
        }
        Ok(match l {
            Subnetwork::First => self.cross.iter().filter(|e| e.0 == k).map(|e| e.1).collect(),
            Subnetwork::Second => self.cross.iter().filter(|e| e.1 == k).map(|e| e.0).collect(),
        })
    }
}
