//! Bounded additive disturbances `e` with `‖e‖∞ ≤ ε`, entering the dynamics as
//! `ż = F(z + e) + e`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::SaddleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    #[default]
    None,
    /// `e = ε·1`.
    Constant,
    /// Independent uniform draws in `[-ε, ε]`, held constant over each step.
    UniformRandom,
    /// `e_c(t) = ε·sin(ω t + φ_c)` with random phases.
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub epsilon: f64,
    pub kind: DisturbanceKind,
    pub seed: u64,
    /// Angular frequency of the sinusoidal kind.
    pub frequency: f64,
    /// Hybrid runs only: also perturb the jump map as `G(z + e) + e`.
    pub perturb_jumps: bool,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            kind: DisturbanceKind::None,
            seed: 0,
            frequency: 1.0,
            perturb_jumps: false,
        }
    }
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn constant(epsilon: f64) -> Self {
        Self {
            epsilon,
            kind: DisturbanceKind::Constant,
            ..Self::default()
        }
    }

    pub fn is_active(&self) -> bool {
        self.kind != DisturbanceKind::None && self.epsilon > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "disturbance bound must be finite and nonnegative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Realization of a [`DisturbanceSpec`] for one run.
#[derive(Debug, Clone)]
pub struct Disturbance {
    spec: DisturbanceSpec,
    rng: ChaCha8Rng,
    phases: Vec<f64>,
    held: SaddleState,
    dim_x: usize,
    dim_y: usize,
}

impl Disturbance {
    pub fn new(spec: &DisturbanceSpec, dim_x: usize, dim_y: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = 4 * (dim_x + dim_y);
        let phases = match spec.kind {
            DisturbanceKind::Sinusoidal => (0..n)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect(),
            _ => Vec::new(),
        };
        let held = match spec.kind {
            DisturbanceKind::Constant => SaddleState::constant(dim_x, dim_y, spec.epsilon),
            _ => SaddleState::zeros(dim_x, dim_y),
        };
        Self {
            spec: spec.clone(),
            rng,
            phases,
            held,
            dim_x,
            dim_y,
        }
    }

    pub fn spec(&self) -> &DisturbanceSpec {
        &self.spec
    }

    pub fn is_active(&self) -> bool {
        self.spec.is_active()
    }

    /// Called once before each integration step.
    pub fn begin_step(&mut self) {
        if self.spec.kind == DisturbanceKind::UniformRandom && self.is_active() {
            let eps = self.spec.epsilon;
            let rng = &mut self.rng;
            for b in self.held.blocks_mut() {
                b.apply(|v| *v = rng.gen_range(-eps..=eps));
            }
        }
    }

    /// `e(t)` for the current step.
    pub fn value(&self, t: f64) -> SaddleState {
        if !self.is_active() {
            return SaddleState::zeros(self.dim_x, self.dim_y);
        }
        let e = match self.spec.kind {
            DisturbanceKind::Sinusoidal => {
                let mut e = SaddleState::zeros(self.dim_x, self.dim_y);
                let mut c = 0;
                for b in e.blocks_mut() {
                    for v in b.iter_mut() {
                        *v = self.spec.epsilon * (self.spec.frequency * t + self.phases[c]).sin();
                        c += 1;
                    }
                }
                e
            }
            _ => self.held.clone(),
        };
        debug_assert!(e.norm_inf() <= self.spec.epsilon);
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_respects_the_bound() {
        for kind in [
            DisturbanceKind::Constant,
            DisturbanceKind::UniformRandom,
            DisturbanceKind::Sinusoidal,
        ] {
            let spec = DisturbanceSpec {
                epsilon: 1e-3,
                kind,
                seed: 3,
                ..Default::default()
            };
            let mut d = Disturbance::new(&spec, 8, 8);
            for k in 0..500 {
                d.begin_step();
                let e = d.value(0.37 * k as f64);
                assert!(e.norm_inf() <= 1e-3, "{kind:?}");
            }
        }
    }

    #[test]
    fn constant_is_epsilon_everywhere() {
        let d = Disturbance::new(&DisturbanceSpec::constant(0.001), 2, 2);
        assert!(d.value(5.0).to_flat().iter().all(|&v| v == 0.001));
    }

    #[test]
    fn none_or_zero_bound_is_inactive() {
        assert!(!DisturbanceSpec::none().is_active());
        assert!(!DisturbanceSpec::constant(0.0).is_active());
        let d = Disturbance::new(&DisturbanceSpec::constant(0.0), 2, 2);
        assert_eq!(d.value(1.0).norm_inf(), 0.0);
        assert!(DisturbanceSpec::constant(-1.0).validate().is_err());
    }

    #[test]
    fn random_draws_are_reproducible() {
        let spec = DisturbanceSpec {
            epsilon: 0.1,
            kind: DisturbanceKind::UniformRandom,
            seed: 11,
            ..Default::default()
        };
        let mut a = Disturbance::new(&spec, 3, 3);
        let mut b = Disturbance::new(&spec, 3, 3);
        a.begin_step();
        b.begin_step();
        assert_eq!(a.value(0.0), b.value(0.0));
    }
}
