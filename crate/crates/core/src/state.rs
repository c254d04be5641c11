//! The stacked primal-dual state `(x, λ, u, γ, y, μ, v, ν)` shared by the
//! time-varying flow and the hybrid system. Derivatives and disturbances use
//! the same type.

use nalgebra::DVector;

/// Block names in storage order; used for CSV column labels.
pub const BLOCK_NAMES: [&str; 8] = ["x", "lambda", "u", "gamma", "y", "mu", "v", "nu"];

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub u: DVector<f64>,
    pub gamma: DVector<f64>,
    pub y: DVector<f64>,
    pub mu: DVector<f64>,
    pub v: DVector<f64>,
    pub nu: DVector<f64>,
}

impl SaddleState {
    pub fn zeros(dim_x: usize, dim_y: usize) -> Self {
        Self {
            x: DVector::zeros(dim_x),
            lambda: DVector::zeros(dim_x),
            u: DVector::zeros(dim_x),
            gamma: DVector::zeros(dim_x),
            y: DVector::zeros(dim_y),
            mu: DVector::zeros(dim_y),
            v: DVector::zeros(dim_y),
            nu: DVector::zeros(dim_y),
        }
    }

    /// Every component set to `value`.
    pub fn constant(dim_x: usize, dim_y: usize, value: f64) -> Self {
        let mut s = Self::zeros(dim_x, dim_y);
        s.map_in_place(|_| value);
        s
    }

    pub fn dim_x(&self) -> usize {
        self.x.len()
    }

    pub fn dim_y(&self) -> usize {
        self.y.len()
    }

    pub fn blocks(&self) -> [&DVector<f64>; 8] {
        [
            &self.x,
            &self.lambda,
            &self.u,
            &self.gamma,
            &self.y,
            &self.mu,
            &self.v,
            &self.nu,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut DVector<f64>; 8] {
        [
            &mut self.x,
            &mut self.lambda,
            &mut self.u,
            &mut self.gamma,
            &mut self.y,
            &mut self.mu,
            &mut self.v,
            &mut self.nu,
        ]
    }

    /// `self += h * other`
    pub fn axpy(&mut self, h: f64, other: &SaddleState) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.axpy(h, b, 1.0);
        }
    }

    /// `self + h * other`
    pub fn added(&self, h: f64, other: &SaddleState) -> SaddleState {
        let mut out = self.clone();
        out.axpy(h, other);
        out
    }

    pub fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for b in self.blocks_mut() {
            b.apply(|v| *v = f(*v));
        }
    }

    pub fn block_norms(&self) -> [f64; 8] {
        self.blocks().map(|b| b.norm())
    }

    pub fn norm_inf(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// All components in block order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }
}
