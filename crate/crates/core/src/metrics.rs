//! Duality gap, Lyapunov functions, the reference saddle solver and rate fits.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_field, baseline_init};
use crate::error::{Error, Result};
use crate::game::{consensus_part, remove_consensus, GameSpec, SaddleReference};
use crate::integrator::{self, Scheme};
use crate::record::{timers_synchronized, TrajectoryRecord};
use crate::state::SaddleState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub gap: f64,
    /// `D_ψ*(u, u*)`, `½‖γ - γ*‖²`, `D_φ*(v, v*)`, `½‖ν - ν*‖²`.
    pub bregman: [f64; 4],
    pub value: f64,
    /// False when evaluated off timer consensus (hybrid only).
    pub valid: bool,
}

/// `V = (α²/r)·gap + r·(D_ψ*(u, u*) + ½‖γ-γ*‖² + D_φ*(v, v*) + ½‖ν-ν*‖²)`.
///
/// `u* = ∇ψ(x*)`; for a box generator the Bregman term only depends on the
/// projection of `u*`, so boundary equilibria are handled consistently.
/// `γ*` and `ν*` carry the same consensus component as `γ` and `ν`, which the
/// dynamics leave unchanged.
pub fn lyapunov_v(
    spec: &GameSpec,
    r: f64,
    reference: &SaddleReference,
    z: &SaddleState,
    alpha: f64,
) -> LyapunovSample {
    let gap = spec.duality_gap(reference, &z.x, &z.lambda, &z.y, &z.mu);
    let u_star = spec.x_mirror().gradient(&reference.x);
    let v_star = spec.y_mirror().gradient(&reference.y);
    let gamma_star = &reference.lambda + consensus_part(&z.gamma, spec.p1());
    let nu_star = &reference.mu + consensus_part(&z.nu, spec.p2());
    let bregman = [
        spec.x_mirror().bregman_conjugate(&z.u, &u_star),
        0.5 * (&z.gamma - gamma_star).norm_squared(),
        spec.y_mirror().bregman_conjugate(&z.v, &v_star),
        0.5 * (&z.nu - nu_star).norm_squared(),
    ];
    let value = alpha * alpha / r * gap + r * bregman.iter().sum::<f64>();
    LyapunovSample {
        gap,
        bregman,
        value,
        valid: true,
    }
}

/// `Ṽ`: [`lyapunov_v`] with `α` set to the common timer value. Off consensus
/// the mean timer is used and the sample is flagged invalid.
pub fn lyapunov_vtilde(
    spec: &GameSpec,
    r: f64,
    reference: &SaddleReference,
    z: &SaddleState,
    timers: &[f64],
) -> LyapunovSample {
    let min = timers.iter().copied().fold(f64::INFINITY, f64::min);
    let max = timers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let valid = max - min <= CONSENSUS_TOL;
    let alpha = if valid {
        max
    } else {
        timers.iter().sum::<f64>() / timers.len() as f64
    };
    let mut s = lyapunov_v(spec, r, reference, z, alpha);
    s.valid = valid;
    s
}

/// Timers within this distance count as equal.
pub const CONSENSUS_TOL: f64 = 1e-9;

/// KKT residual of a candidate saddle point, using the projected-gradient
/// map with unit step.
pub fn kkt_residual(
    spec: &GameSpec,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    y: &DVector<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let mut z = SaddleState::zeros(spec.dim_x(), spec.dim_y());
    z.x = x.clone();
    z.lambda = lambda.clone();
    z.y = y.clone();
    z.mu = mu.clone();
    let f = baseline_field(spec, &z);
    (f.x.norm_squared() + f.lambda.norm_squared() + f.y.norm_squared() + f.mu.norm_squared())
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceOptions {
    pub tol: f64,
    pub dt: f64,
    pub max_time: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            dt: 0.05,
            max_time: 1e5,
        }
    }
}

/// Computes the saddle point by integrating the projected primal-dual flow
/// until the KKT residual drops below `opts.tol`.
pub fn solve_saddle_reference(spec: &GameSpec, opts: &ReferenceOptions) -> Result<SaddleReference> {
    let mut z = baseline_init(spec);
    let mut t = 0.0;
    let check_every = 50;
    let mut best = f64::INFINITY;
    let mut steps = 0u64;
    while t < opts.max_time {
        z = integrator::step(Scheme::Rk4, &z, opts.dt, |_, zz| baseline_field(spec, zz));
        t += opts.dt;
        steps += 1;
        if !z.is_finite() {
            break;
        }
        if steps % check_every == 0 {
            let res = kkt_residual(spec, &z.x, &z.lambda, &z.y, &z.mu);
            best = best.min(res);
            if res < opts.tol {
                break;
            }
        }
    }
    let lambda = remove_consensus(&z.lambda, spec.p1());
    let mu = remove_consensus(&z.mu, spec.p2());
    let res = kkt_residual(spec, &z.x, &lambda, &z.y, &mu);
    if !(res < opts.tol) {
        return Err(Error::ReferenceNotConverged {
            tol: opts.tol,
            residual: best.min(res),
        });
    }
    log::debug!("reference solved at t = {t:.1}, residual {res:.3e}");
    let reference = SaddleReference {
        x: z.x,
        lambda,
        y: z.y,
        mu,
        kkt_residual: res,
    };
    spec.check_interiority(&reference);
    Ok(reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub window: (f64, f64),
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub samples: usize,
    pub excluded: usize,
}

/// Points per decade used by [`fit_rate`].
pub const FIT_POINTS_PER_DECADE: usize = 20;

/// Log-log slope of the recorded gap over `window`.
pub fn fit_rate(record: &TrajectoryRecord, window: (f64, f64)) -> Result<RateFit> {
    fit_power_law(&record.gap_series(), window.0, window.1, FIT_POINTS_PER_DECADE)
}

pub const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares slope of `log gap` against `log t` over `[t_lo, t_hi]`.
///
/// Samples are thinned to a geometric grid in `t` (`per_decade` points per
/// decade) so late times do not dominate. Nonpositive gaps are excluded and
/// counted.
pub fn fit_power_law(
    series: &[(f64, f64)],
    t_lo: f64,
    t_hi: f64,
    per_decade: usize,
) -> Result<RateFit> {
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= t_lo && t <= t_hi)
        .collect();
    let mut picked: Vec<(f64, f64)> = Vec::new();
    if t_lo > 0.0 && t_hi > t_lo && !window.is_empty() {
        let decades = (t_hi / t_lo).log10();
        let m = ((decades * per_decade as f64).ceil() as usize).max(1);
        let mut last_idx = usize::MAX;
        for q in 0..=m {
            let target = t_lo * (t_hi / t_lo).powf(q as f64 / m as f64);
            let idx = window
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 .0 - target)
                        .abs()
                        .partial_cmp(&(b.1 .0 - target).abs())
                        .unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            if idx != last_idx {
                picked.push(window[idx]);
                last_idx = idx;
            }
        }
    }
    let excluded = picked.iter().filter(|p| !(p.1 > 0.0)).count();
    if excluded > 0 {
        log::warn!("{excluded} nonpositive gap samples excluded from the rate fit");
    }
    let pts: Vec<(f64, f64)> = picked
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(t, g)| (t.ln(), g.ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            found: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        window: (t_lo, t_hi),
        slope,
        intercept: my - slope * mx,
        r_squared,
        samples: pts.len(),
        excluded,
    })
}

/// Epoch constants `c_j` recorded at each synchronized restart.
pub fn epoch_constants(record: &TrajectoryRecord) -> Vec<f64> {
    record.epochs.iter().map(|e| e.c).collect()
}

/// Whether every sample at or after hybrid time `t_star` has its timers in
/// the consensus set.
pub fn timers_in_consensus_after(
    record: &TrajectoryRecord,
    t_star: f64,
    lower: f64,
    upper: f64,
) -> bool {
    record
        .samples
        .iter()
        .filter(|s| s.t + s.j as f64 >= t_star)
        .all(|s| timers_synchronized(&s.timers, lower, upper, CONSENSUS_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_example1, build_quadratic_game};

    #[test]
    fn rate_fit_recovers_power_law() {
        let series: Vec<(f64, f64)> = (1..=10_000)
            .map(|k| {
                let t = k as f64 * 0.01;
                (t, 3.0 / (t * t))
            })
            .collect();
        let fit = fit_power_law(&series, 10.0, 100.0, 20).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-9);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-8);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let inv: Vec<(f64, f64)> = series.iter().map(|&(t, _)| (t, 1.0 / t)).collect();
        let fit = fit_power_law(&inv, 10.0, 100.0, 20).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9);
    }

    #[test]
    fn rate_fit_needs_samples() {
        let series = vec![(10.0, 1.0), (20.0, 0.5), (40.0, -1.0)];
        assert!(matches!(
            fit_power_law(&series, 10.0, 100.0, 20),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn quadratic_reference_is_closed_form() {
        let spec = build_quadratic_game(&[1.0, 2.0, 3.0], &[0.0, 2.0], 0.5).unwrap();
        let r = solve_saddle_reference(&spec, &ReferenceOptions::default()).unwrap();
        // Consensus x, y: min over x of 3/2 x^2 - 6x + ... coupling 0.5·x·y on two
        // diagonal edges: ∂x: 3x - 6 + 2·0.5·y = 0, ∂y: 2·0.5·x - (2y - 2) = 0.
        // -> x = 2 - y/3, y = 1 + x/2 -> x = 2 - 1/3 - x/6 -> x = 10/7, y = 12/7.
        for &x in r.x.iter() {
            assert!((x - 10.0 / 7.0).abs() < 1e-8);
        }
        for &y in r.y.iter() {
            assert!((y - 12.0 / 7.0).abs() < 1e-8);
        }
        assert!(r.kkt_residual < 1e-10);
    }

    #[test]
    fn gap_and_lyapunov_vanish_at_reference() {
        let spec = build_example1(42);
        let r = solve_saddle_reference(&spec, &ReferenceOptions::default()).unwrap();
        let mut z = SaddleState::zeros(8, 8);
        z.x = r.x.clone();
        z.y = r.y.clone();
        z.lambda = r.lambda.clone();
        z.mu = r.mu.clone();
        z.u = spec.x_mirror().gradient(&r.x);
        z.v = spec.y_mirror().gradient(&r.y);
        z.gamma = r.lambda.clone();
        z.nu = r.mu.clone();
        let l = lyapunov_v(&spec, 2.0, &r, &z, 7.0);
        assert!(l.gap.abs() < 1e-12);
        assert!(l.value.abs() < 1e-12);
        let lt = lyapunov_vtilde(&spec, 2.0, &r, &z, &[1.0, 2.0]);
        assert!(!lt.valid);
    }
}
