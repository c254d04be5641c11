//! Generating functions and their conjugate (mirror) maps.
//!
//! Each agent's constraint set is encoded by a strongly convex generating
//! function `ψ`. The dynamics only ever need `∇ψ*`, which maps an unconstrained
//! dual point back into the set, and the conjugate Bregman divergence used by
//! the Lyapunov functions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratingFunction {
    /// `½‖x‖²` on the box `[lower, upper]`; `∇ψ*` is the Euclidean projection.
    QuadraticBox { lower: Vec<f64>, upper: Vec<f64> },
    /// `½‖x‖²` on all of `R^dim`; `∇ψ*` is the identity.
    QuadraticFree { dim: usize },
    /// Negative entropy on the probability simplex; `∇ψ*` is softmax.
    EntropicSimplex { dim: usize },
}

impl GeneratingFunction {
    pub fn quadratic_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "box bounds of different length");
        assert!(
            lower.iter().zip(&upper).all(|(l, u)| l <= u),
            "box lower bound above upper bound"
        );
        GeneratingFunction::QuadraticBox { lower, upper }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratingFunction::QuadraticBox { lower, .. } => lower.len(),
            GeneratingFunction::QuadraticFree { dim } | GeneratingFunction::EntropicSimplex { dim } => {
                *dim
            }
        }
    }

    pub fn strong_convexity_modulus(&self) -> f64 {
        1.0
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            GeneratingFunction::QuadraticBox { .. } | GeneratingFunction::QuadraticFree { .. } => {
                0.5 * x.iter().map(|v| v * v).sum::<f64>()
            }
            GeneratingFunction::EntropicSimplex { .. } => x
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| v * v.ln())
                .sum(),
        }
    }

    /// `∇ψ(x)`. For the entropic family the result is defined up to a
    /// multiple of the ones vector, which `∇ψ*` ignores.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            GeneratingFunction::QuadraticBox { .. } | GeneratingFunction::QuadraticFree { .. } => {
                out.copy_from_slice(x)
            }
            GeneratingFunction::EntropicSimplex { .. } => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = 1.0 + v.max(f64::MIN_POSITIVE).ln();
                }
            }
        }
    }

    /// `ψ*(u) = sup_{x ∈ domain} ⟨x, u⟩ - ψ(x)`, in closed form.
    pub fn conjugate_value(&self, u: &[f64]) -> f64 {
        match self {
            GeneratingFunction::QuadraticBox { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&ui, (&l, &h))| {
                    let p = ui.clamp(l, h);
                    p * ui - 0.5 * p * p
                })
                .sum(),
            GeneratingFunction::QuadraticFree { .. } => 0.5 * u.iter().map(|v| v * v).sum::<f64>(),
            GeneratingFunction::EntropicSimplex { .. } => log_sum_exp(u),
        }
    }

    /// `∇ψ*(u) = argmin_{x ∈ domain} -⟨x, u⟩ + ψ(x)`.
    pub fn conjugate_gradient(&self, u: &[f64], out: &mut [f64]) {
        match self {
            GeneratingFunction::QuadraticBox { lower, upper } => {
                for (o, (&ui, (&l, &h))) in out.iter_mut().zip(u.iter().zip(lower.iter().zip(upper))) {
                    *o = ui.clamp(l, h);
                }
            }
            GeneratingFunction::QuadraticFree { .. } => out.copy_from_slice(u),
            GeneratingFunction::EntropicSimplex { .. } => softmax(u, out),
        }
    }

    pub fn conjugate_gradient_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.conjugate_gradient(u, &mut out);
        out
    }

    /// `D_{ψ*}(u, u_ref)`.
    pub fn bregman_conjugate(&self, u: &[f64], u_ref: &[f64]) -> f64 {
        match self {
            GeneratingFunction::QuadraticBox { lower, upper } => {
                // ⟨p - p_ref, u - p⟩ + ½‖p - p_ref‖², algebraically equal to the
                // defining expression but free of cancellation when |u| is large.
                let mut total = 0.0;
                for i in 0..u.len() {
                    let p = u[i].clamp(lower[i], upper[i]);
                    let p_ref = u_ref[i].clamp(lower[i], upper[i]);
                    let dp = p - p_ref;
                    total += dp * (u[i] - p) + 0.5 * dp * dp;
                }
                total
            }
            GeneratingFunction::QuadraticFree { .. } => {
                0.5 * u.iter().zip(u_ref).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            GeneratingFunction::EntropicSimplex { .. } => {
                let mut s = vec![0.0; u.len()];
                softmax(u_ref, &mut s);
                let inner: f64 = u.iter().zip(u_ref).zip(&s).map(|((a, b), w)| (a - b) * w).sum();
                (log_sum_exp(u) - log_sum_exp(u_ref) - inner).max(0.0)
            }
        }
    }

    /// Euclidean distance from `x` to the domain.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            GeneratingFunction::QuadraticBox { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&v, (&l, &h))| {
                    let d = v - v.clamp(l, h);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            GeneratingFunction::QuadraticFree { .. } => 0.0,
            GeneratingFunction::EntropicSimplex { .. } => {
                let proj = project_simplex(x);
                x.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
        }
    }

    /// Smallest distance from `x` to a face of the domain; infinite when the
    /// domain has no boundary.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        match self {
            GeneratingFunction::QuadraticBox { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&v, (&l, &h))| (v - l).min(h - v))
                .fold(f64::INFINITY, f64::min),
            GeneratingFunction::QuadraticFree { .. } => f64::INFINITY,
            GeneratingFunction::EntropicSimplex { .. } => {
                x.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }
}

pub fn log_sum_exp(u: &[f64]) -> f64 {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + u.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax with the usual max shift.
pub fn softmax(u: &[f64], out: &mut [f64]) {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(u) {
        *o = (v - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - 1.0) / (k as f64 + 1.0);
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Per-agent generating functions laid out as one stacked vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorStack {
    blocks: Vec<GeneratingFunction>,
    offsets: Vec<usize>,
    total: usize,
}

impl MirrorStack {
    pub fn new(blocks: Vec<GeneratingFunction>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut total = 0;
        for b in &blocks {
            offsets.push(total);
            total += b.dim();
        }
        Self {
            blocks,
            offsets,
            total,
        }
    }

    pub fn blocks(&self) -> &[GeneratingFunction] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.total
    }

    fn ranges(&self) -> impl Iterator<Item = (&GeneratingFunction, std::ops::Range<usize>)> + '_ {
        self.blocks
            .iter()
            .zip(&self.offsets)
            .map(|(b, &o)| (b, o..o + b.dim()))
    }

    pub fn conjugate_gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(u.len(), self.total);
        let mut out = DVector::zeros(self.total);
        for (b, r) in self.ranges() {
            b.conjugate_gradient(&u.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    }

    /// Checked variant of [`MirrorStack::conjugate_gradient`].
    pub fn stacked_conjugate_gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("stacked conjugate gradient", self.total, u.len())?;
        Ok(self.conjugate_gradient(u))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.total);
        for (b, r) in self.ranges() {
            b.gradient(&x.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    }

    pub fn bregman_conjugate(&self, u: &DVector<f64>, u_ref: &DVector<f64>) -> f64 {
        self.ranges()
            .map(|(b, r)| b.bregman_conjugate(&u.as_slice()[r.clone()], &u_ref.as_slice()[r]))
            .sum()
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.ranges()
            .map(|(b, r)| b.distance(&x.as_slice()[r]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Appends, per coordinate, which side of the box faces `u` lies on
    /// (`-1` below, `0` inside, `1` above). The conjugate gradient is smooth
    /// wherever this pattern is locally constant. Coordinates of smooth
    /// families always report `0`.
    pub fn face_pattern(&self, u: &DVector<f64>, out: &mut Vec<i8>) {
        for (b, r) in self.ranges() {
            match b {
                GeneratingFunction::QuadraticBox { lower, upper } => {
                    for (k, i) in r.enumerate() {
                        out.push(if u[i] < lower[k] {
                            -1
                        } else if u[i] > upper[k] {
                            1
                        } else {
                            0
                        });
                    }
                }
                _ => out.extend(std::iter::repeat(0).take(r.len())),
            }
        }
    }

    pub fn distance_to_boundary(&self, x: &DVector<f64>) -> f64 {
        self.ranges()
            .map(|(b, r)| b.distance_to_boundary(&x.as_slice()[r]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_box() -> GeneratingFunction {
        GeneratingFunction::quadratic_box(vec![-1.0, -1.0], vec![1.0, 1.0])
    }

    #[test]
    fn box_interior_point_is_fixed() {
        assert_eq!(unit_box().conjugate_gradient_vec(&[0.5, 0.3]), vec![0.5, 0.3]);
    }

    #[test]
    fn box_clamps() {
        assert_eq!(unit_box().conjugate_gradient_vec(&[2.0, -3.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn entropic_uniform() {
        let gf = GeneratingFunction::EntropicSimplex { dim: 3 };
        for v in gf.conjugate_gradient_vec(&[0.0, 0.0, 0.0]) {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn entropic_survives_huge_logits() {
        let gf = GeneratingFunction::EntropicSimplex { dim: 2 };
        let p = gf.conjugate_gradient_vec(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_relative_eq!(p[0], 1.0);
    }

    #[test]
    fn box_matches_grid_argmin() {
        let gf = GeneratingFunction::quadratic_box(vec![0.0], vec![2.0]);
        let u = 1.7;
        let n = 1_000_000;
        let h = 2.0 / n as f64;
        let best = (0..=n)
            .map(|k| k as f64 * h)
            .min_by(|a, b| (-a * u + 0.5 * a * a).total_cmp(&(-b * u + 0.5 * b * b)))
            .unwrap();
        assert!((gf.conjugate_gradient_vec(&[u])[0] - best).abs() <= h);
    }

    #[test]
    fn bregman_examples() {
        let free = GeneratingFunction::QuadraticFree { dim: 2 };
        assert_eq!(free.bregman_conjugate(&[1.0, 0.0], &[0.0, 0.0]), 0.5);
        assert_eq!(unit_box().bregman_conjugate(&[0.2, 4.0], &[0.2, 4.0]), 0.0);
    }

    #[test]
    fn stacked_mixed_blocks() {
        let stack = MirrorStack::new(vec![
            unit_box(),
            GeneratingFunction::QuadraticFree { dim: 1 },
            GeneratingFunction::EntropicSimplex { dim: 2 },
        ]);
        let u = DVector::from_vec(vec![3.0, 0.5, -7.0, 0.0, 0.0]);
        let out = stack.stacked_conjugate_gradient(&u).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.5, -7.0, 0.5, 0.5]);
        assert!(stack.stacked_conjugate_gradient(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn all_free_stack_is_identity() {
        let stack = MirrorStack::new(vec![GeneratingFunction::QuadraticFree { dim: 3 }; 2]);
        let u = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        assert_eq!(stack.conjugate_gradient(&u), u);
    }

    #[test]
    fn simplex_projection_lands_on_simplex() {
        let p = project_simplex(&[0.9, 0.8, -0.3]);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_relative_eq!(p[0], 0.55, epsilon = 1e-14);
    }

    fn box_strategy() -> impl Strategy<Value = GeneratingFunction> {
        prop::collection::vec((-3.0..0.0f64, 0.0..3.0f64), 1..4).prop_map(|b| {
            let (lower, upper) = b.into_iter().unzip();
            GeneratingFunction::quadratic_box(lower, upper)
        })
    }

    fn families() -> impl Strategy<Value = GeneratingFunction> {
        prop_oneof![
            box_strategy(),
            (1usize..4).prop_map(|dim| GeneratingFunction::QuadraticFree { dim }),
            (1usize..4).prop_map(|dim| GeneratingFunction::EntropicSimplex { dim }),
        ]
    }

    fn with_points(n: usize) -> impl Strategy<Value = (GeneratingFunction, Vec<Vec<f64>>)> {
        families().prop_flat_map(move |gf| {
            let d = gf.dim();
            (Just(gf), prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), n))
        })
    }

    proptest! {
        #[test]
        fn mirror_image_stays_in_domain((gf, pts) in with_points(1)) {
            let x = gf.conjugate_gradient_vec(&pts[0]);
            prop_assert!(gf.distance(&x) <= 1e-12);
        }

        #[test]
        fn mirror_map_is_monotone_and_lipschitz((gf, pts) in with_points(2)) {
            let (u, v) = (&pts[0], &pts[1]);
            let a = gf.conjugate_gradient_vec(u);
            let b = gf.conjugate_gradient_vec(v);
            let inner: f64 = a.iter().zip(&b).zip(u.iter().zip(v)).map(|((a, b), (u, v))| (a - b) * (u - v)).sum();
            prop_assert!(inner >= -1e-12);
            let dx: f64 = a.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let du: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dx <= du / gf.strong_convexity_modulus() + 1e-12);
        }

        #[test]
        fn bregman_is_nonnegative_and_zero_on_diagonal((gf, pts) in with_points(2)) {
            prop_assert!(gf.bregman_conjugate(&pts[0], &pts[1]) >= -1e-12);
            prop_assert!(gf.bregman_conjugate(&pts[0], &pts[0]).abs() <= 1e-12);
        }

        #[test]
        fn box_bregman_matches_defining_formula((gf, pts) in box_strategy().prop_flat_map(|gf| {
            let d = gf.dim();
            (Just(gf), prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), 2))
        })) {
            let (u, v) = (&pts[0], &pts[1]);
            let grad_ref = gf.conjugate_gradient_vec(v);
            let direct = gf.conjugate_value(u) - gf.conjugate_value(v)
                - u.iter().zip(v).zip(&grad_ref).map(|((a, b), g)| (a - b) * g).sum::<f64>();
            prop_assert!((gf.bregman_conjugate(u, v) - direct).abs() <= 1e-10);
        }

        #[test]
        fn conjugate_inverts_gradient_in_interior(lower in -3.0..-0.1f64, upper in 0.1..3.0f64, t in 0.05..0.95f64) {
            let gf = GeneratingFunction::quadratic_box(vec![lower], vec![upper]);
            let x = lower + t * (upper - lower);
            let mut g = [0.0];
            gf.gradient(&[x], &mut g);
            prop_assert!((gf.conjugate_gradient_vec(&g)[0] - x).abs() <= 1e-15);
        }

        #[test]
        fn strong_convexity_holds_on_domain((gf, pts) in with_points(2)) {
            let a = gf.conjugate_gradient_vec(&pts[0]);
            let b = gf.conjugate_gradient_vec(&pts[1]);
            let mut ga = vec![0.0; a.len()];
            gf.gradient(&a, &mut ga);
            if a.iter().chain(&b).all(|v| v.is_finite()) && !matches!(gf, GeneratingFunction::EntropicSimplex { .. } if a.iter().any(|&v| v < 1e-12)) {
                let lin: f64 = b.iter().zip(&a).zip(&ga).map(|((b, a), g)| (b - a) * g).sum();
                let sq: f64 = b.iter().zip(&a).map(|(b, a)| (b - a).powi(2)).sum();
                let lhs = gf.value(&b);
                let rhs = gf.value(&a) + lin + 0.5 * gf.strong_convexity_modulus() * sq;
                prop_assert!(lhs >= rhs - 1e-9);
            }
        }
    }
}
