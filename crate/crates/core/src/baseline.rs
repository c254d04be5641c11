//! Non-accelerated projected primal-dual saddle flow.
//!
//! `ẋ = ∇ψ*(∇ψ(x) - ∇_x S) - x`, `λ̇ = L1x`, `ẏ = ∇φ*(∇φ(y) + ∇_y S) - y`,
//! `μ̇ = L2y`. Its equilibria are exactly the saddle points of the augmented
//! Lagrangian, so it doubles as the reference solver and as a comparison
//! algorithm. Only the `x`, `λ`, `y`, `μ` blocks of the state are used.

use nalgebra::DVector;

use crate::disturbance::Disturbance;
use crate::error::{check_len, Error, Result};
use crate::flow::{flow_sample, FlowParams, RecordOptions, DIVERGENCE_NORM};
use crate::game::{GameSpec, SaddleReference};
use crate::integrator;
use crate::record::TrajectoryRecord;
use crate::state::SaddleState;

/// Vector field of the projected primal-dual flow.
pub fn baseline_field(spec: &GameSpec, z: &SaddleState) -> SaddleState {
    let gx = spec.grad_x(&z.x, &z.lambda, &z.y);
    let gy = spec.grad_y(&z.x, &z.y, &z.mu);
    let xm = spec.x_mirror();
    let ym = spec.y_mirror();
    let x_dot = xm.conjugate_gradient(&(xm.gradient(&z.x) - gx)) - &z.x;
    let y_dot = ym.conjugate_gradient(&(ym.gradient(&z.y) + gy)) - &z.y;
    let zx = DVector::zeros(z.dim_x());
    let zy = DVector::zeros(z.dim_y());
    SaddleState {
        lambda: spec.grad_lambda(&z.x),
        mu: -spec.grad_mu(&z.y),
        x: x_dot,
        u: zx.clone(),
        gamma: zx,
        y: y_dot,
        v: zy.clone(),
        nu: zy,
    }
}

/// Starting point `x = P(0)`, `y = Q(0)`, zero multipliers.
pub fn baseline_init(spec: &GameSpec) -> SaddleState {
    let mut z = SaddleState::zeros(spec.dim_x(), spec.dim_y());
    z.x = spec.x_mirror().conjugate_gradient(&DVector::zeros(spec.dim_x()));
    z.y = spec.y_mirror().conjugate_gradient(&DVector::zeros(spec.dim_y()));
    z
}

/// Integrates the baseline flow from `t_start` to `t_end`. `params.r` is only
/// used for the recorded Lyapunov-style diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn integrate_baseline(
    spec: &GameSpec,
    params: &FlowParams,
    z0: &SaddleState,
    t_start: f64,
    t_end: f64,
    disturbance: &mut Disturbance,
    reference: Option<&SaddleReference>,
    opts: &RecordOptions,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    check_len("state.x", spec.dim_x(), z0.dim_x())?;
    check_len("state.y", spec.dim_y(), z0.dim_y())?;
    if !(t_end >= t_start) {
        return Err(Error::InvalidConfig(format!(
            "end time {t_end} precedes start time {t_start}"
        )));
    }
    let n_steps = ((t_end - t_start) / params.dt - 1e-9).ceil().max(0.0) as u64;
    let mut rec = TrajectoryRecord::default();
    let mut z = z0.clone();
    let mut t = t_start;
    let every = opts.sample_every.max(1);
    rec.samples.push(flow_sample(spec, params.r, t.max(f64::MIN_POSITIVE), &z, reference, opts));
    for k in 0..n_steps {
        let t_next = if k + 1 == n_steps {
            t_end
        } else {
            t_start + (k + 1) as f64 * params.dt
        };
        let h = t_next - t;
        disturbance.begin_step();
        z = integrator::step(params.scheme, &z, h, |off, zz| {
            if disturbance.is_active() {
                let e = disturbance.value(t + off);
                let mut f = baseline_field(spec, &zz.added(1.0, &e));
                f.axpy(1.0, &e);
                f
            } else {
                baseline_field(spec, zz)
            }
        });
        t = t_next;
        rec.steps += 1;
        if !z.is_finite() || z.norm_inf() > DIVERGENCE_NORM {
            rec.diverged = true;
            rec.divergence = Some((t, 0));
            break;
        }
        if (k + 1) % every == 0 || k + 1 == n_steps {
            rec.samples.push(flow_sample(spec, params.r, t, &z, reference, opts));
        }
    }
    rec.final_state = Some(z);
    Ok(rec)
}
