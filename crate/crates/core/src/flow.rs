//! Time-varying accelerated mirror-descent saddle flow.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::disturbance::Disturbance;
use crate::error::{check_len, Error, Result};
use crate::game::{GameSpec, SaddleReference};
use crate::integrator::{self, Scheme};
use crate::metrics;
use crate::record::{Sample, TrajectoryRecord};
use crate::state::SaddleState;

/// Norm beyond which a trajectory is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub r: f64,
    pub t0: f64,
    pub dt: f64,
    pub scheme: Scheme,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            r: 2.0,
            t0: 1.0,
            dt: 1e-3,
            scheme: Scheme::Rk4,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 2.0) {
            return Err(Error::InvalidConfig(format!("r must be at least 2, got {}", self.r)));
        }
        if !(self.t0 > 0.0) {
            return Err(Error::NonPositiveTime(self.t0));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub z: SaddleState,
    pub t: f64,
}

/// What to keep while integrating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordOptions {
    /// Record every this many flow steps (and always the endpoints).
    pub sample_every: u64,
    /// Keep the full state vector in each sample.
    pub full_state: bool,
    /// Evaluate the Lyapunov function after every step (not just at samples)
    /// and keep the worst relative increase.
    pub monitor_every_step: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            sample_every: 10,
            full_state: false,
            monitor_every_step: false,
        }
    }
}

/// Initial point with `x0 = ∇ψ*(u0)`, `λ0 = γ0`, `y0 = ∇φ*(v0)`, `μ0 = ν0`.
///
/// `u0` and `v0` are dual points; the check rejects a supplied `u0` or `v0`
/// that is itself far outside the primal set, which almost always means a
/// primal point was passed where a dual one was expected.
pub fn init_from(
    spec: &GameSpec,
    u0: &DVector<f64>,
    gamma0: &DVector<f64>,
    v0: &DVector<f64>,
    nu0: &DVector<f64>,
    t0: f64,
) -> Result<FlowState> {
    check_len("u0", spec.dim_x(), u0.len())?;
    check_len("gamma0", spec.dim_x(), gamma0.len())?;
    check_len("v0", spec.dim_y(), v0.len())?;
    check_len("nu0", spec.dim_y(), nu0.len())?;
    if !(t0 > 0.0) {
        return Err(Error::NonPositiveTime(t0));
    }
    let z = initial_state(spec, u0, gamma0, v0, nu0)?;
    Ok(FlowState { z, t: t0 })
}

pub(crate) fn initial_state(
    spec: &GameSpec,
    u0: &DVector<f64>,
    gamma0: &DVector<f64>,
    v0: &DVector<f64>,
    nu0: &DVector<f64>,
) -> Result<SaddleState> {
    let x = spec.x_mirror().conjugate_gradient(u0);
    let y = spec.y_mirror().conjugate_gradient(v0);
    let dist = spec.x_mirror().distance(&x).max(spec.y_mirror().distance(&y));
    if !(dist <= 1e-12) {
        return Err(Error::InitialPointOutsideDomain { distance: dist });
    }
    if ![u0, gamma0, v0, nu0].iter().all(|b| b.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidConfig("initial point must be finite".into()));
    }
    Ok(SaddleState {
        x,
        lambda: gamma0.clone(),
        u: u0.clone(),
        gamma: gamma0.clone(),
        y,
        mu: nu0.clone(),
        v: v0.clone(),
        nu: nu0.clone(),
    })
}

/// Default initial point `u0 = γ0 = 0`, `v0 = ν0 = 0`, so `x0 = P(0)` and
/// `y0 = Q(0)`.
pub fn default_init(spec: &GameSpec, t0: f64) -> Result<FlowState> {
    let zx = DVector::zeros(spec.dim_x());
    let zy = DVector::zeros(spec.dim_y());
    init_from(spec, &zx, &zx, &zy, &zy, t0)
}

/// Right-hand side of the flow at `(z, t)`.
pub fn flow_rhs(spec: &GameSpec, r: f64, state: &FlowState) -> Result<SaddleState> {
    if !(state.t > 0.0) {
        return Err(Error::NonPositiveTime(state.t));
    }
    check_len("state.x", spec.dim_x(), state.z.dim_x())?;
    check_len("state.y", spec.dim_y(), state.z.dim_y())?;
    Ok(uniform_field(spec, r, state.t, &state.z))
}

pub(crate) fn uniform_field(spec: &GameSpec, r: f64, t: f64, z: &SaddleState) -> SaddleState {
    let s1 = vec![t / r; spec.n1()];
    let s2 = vec![t / r; spec.n2()];
    scaled_field(spec, &s1, &s2, z)
}

/// The flow vector field where agent `k` of each subnetwork uses its own
/// `s_k = τ_k / r` in place of `t / r`. With all `s_k` equal to `t / r` this
/// is exactly the time-varying flow.
pub(crate) fn scaled_field(
    spec: &GameSpec,
    s1: &[f64],
    s2: &[f64],
    z: &SaddleState,
) -> SaddleState {
    let (p1, p2) = (spec.p1(), spec.p2());
    let xm = spec.x_mirror();
    let ym = spec.y_mirror();
    let b = spec.b();
    let l1 = spec.l1();
    let l2 = spec.l2();

    let mut x_dot = xm.conjugate_gradient(&z.u) - &z.x;
    let mut lambda_dot = &z.gamma - &z.lambda;
    for (i, (xd, ld)) in x_dot.iter_mut().zip(lambda_dot.iter_mut()).enumerate() {
        let s = s1[i / p1];
        *xd /= s;
        *ld /= s;
    }
    let mut y_dot = ym.conjugate_gradient(&z.v) - &z.y;
    let mut mu_dot = &z.nu - &z.mu;
    for (i, (yd, md)) in y_dot.iter_mut().zip(mu_dot.iter_mut()).enumerate() {
        let s = s2[i / p2];
        *yd /= s;
        *md /= s;
    }

    // Linear pieces, split into the part at z and the part along ż so each
    // agent can extrapolate with its own s_k.
    let grad_f = spec.grad_f(&z.x);
    let by = b * &z.y;
    let by_dot = b * &y_dot;
    let l1_lx = l1 * (&z.lambda + &z.x);
    let l1_lambda_dot = l1 * &lambda_dot;
    let l1x = l1 * &z.x;
    let l1_x_dot = l1 * &x_dot;

    let mut u_dot = DVector::zeros(z.u.len());
    let mut gamma_dot = DVector::zeros(z.gamma.len());
    for i in 0..u_dot.len() {
        let s = s1[i / p1];
        let gx = grad_f[i] + by[i] + s * by_dot[i] + l1_lx[i] + s * l1_lambda_dot[i];
        u_dot[i] = -s * gx;
        gamma_dot[i] = s * (l1x[i] + s * l1_x_dot[i]);
    }

    let grad_g = spec.grad_g(&z.y);
    let btx = b.tr_mul(&z.x);
    let btx_dot = b.tr_mul(&x_dot);
    let l2_my = l2 * (&z.mu + &z.y);
    let l2_mu_dot = l2 * &mu_dot;
    let l2y = l2 * &z.y;
    let l2_y_dot = l2 * &y_dot;

    let mut v_dot = DVector::zeros(z.v.len());
    let mut nu_dot = DVector::zeros(z.nu.len());
    for i in 0..v_dot.len() {
        let s = s2[i / p2];
        let gy = btx[i] + s * btx_dot[i] - grad_g[i] - l2_my[i] - s * l2_mu_dot[i];
        v_dot[i] = s * gy;
        nu_dot[i] = s * (l2y[i] + s * l2_y_dot[i]);
    }

    SaddleState {
        x: x_dot,
        lambda: lambda_dot,
        u: u_dot,
        gamma: gamma_dot,
        y: y_dot,
        mu: mu_dot,
        v: v_dot,
        nu: nu_dot,
    }
}

/// Integrates the (possibly disturbed) flow `ż = F(z + e, t) + e` from
/// `state` up to `t_end`.
pub fn integrate(
    spec: &GameSpec,
    params: &FlowParams,
    state: &FlowState,
    t_end: f64,
    disturbance: &mut Disturbance,
    reference: Option<&SaddleReference>,
    opts: &RecordOptions,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    if !(state.t > 0.0) {
        return Err(Error::NonPositiveTime(state.t));
    }
    if !(t_end >= state.t) {
        return Err(Error::InvalidConfig(format!(
            "end time {t_end} precedes start time {}",
            state.t
        )));
    }
    check_len("state.x", spec.dim_x(), state.z.dim_x())?;
    check_len("state.y", spec.dim_y(), state.z.dim_y())?;

    let r = params.r;
    let start = state.t;
    let n_steps = ((t_end - start) / params.dt - 1e-9).ceil().max(0.0) as u64;
    let mut rec = TrajectoryRecord::default();
    let mut z = state.z.clone();
    let mut t = start;
    rec.samples.push(flow_sample(spec, r, t, &z, reference, opts));
    let every = opts.sample_every.max(1);
    let monitor = reference.filter(|_| opts.monitor_every_step);
    let mut v_prev = monitor.map(|rf| metrics::lyapunov_v(spec, r, rf, &z, t).value);

    for k in 0..n_steps {
        let t_next = if k + 1 == n_steps {
            t_end
        } else {
            start + (k + 1) as f64 * params.dt
        };
        disturbance.begin_step();
        while t < t_next {
            let h = t_next - t;
            let (zn, taken) = integrator::step_piecewise(
                params.scheme,
                &z,
                h,
                |off, zz| {
                    let tt = t + off;
                    if disturbance.is_active() {
                        let e = disturbance.value(tt);
                        let mut f = uniform_field(spec, r, tt, &zz.added(1.0, &e));
                        f.axpy(1.0, &e);
                        f
                    } else {
                        uniform_field(spec, r, tt, zz)
                    }
                },
                |zz| face_mode(spec, zz),
            );
            z = zn;
            t = if taken >= h { t_next } else { t + taken };
        }
        rec.steps += 1;
        if !z.is_finite() || z.norm_inf() > DIVERGENCE_NORM {
            log::warn!("flow diverged at t = {t}");
            rec.diverged = true;
            rec.divergence = Some((t, 0));
            break;
        }
        if let (Some(rf), Some(prev)) = (monitor, v_prev) {
            let v = metrics::lyapunov_v(spec, r, rf, &z, t).value;
            rec.note_lyapunov_step(t, prev, v);
            v_prev = Some(v);
        }
        if (k + 1) % every == 0 || k + 1 == n_steps {
            rec.samples.push(flow_sample(spec, r, t, &z, reference, opts));
        }
    }
    rec.final_state = Some(z);
    Ok(rec)
}

/// Which box faces the dual variables `u` and `v` are beyond; the flow is
/// smooth while this stays constant.
pub(crate) fn face_mode(spec: &GameSpec, z: &SaddleState) -> Vec<i8> {
    let mut out = Vec::with_capacity(z.u.len() + z.v.len());
    spec.x_mirror().face_pattern(&z.u, &mut out);
    spec.y_mirror().face_pattern(&z.v, &mut out);
    out
}

pub(crate) fn flow_sample(
    spec: &GameSpec,
    r: f64,
    t: f64,
    z: &SaddleState,
    reference: Option<&SaddleReference>,
    opts: &RecordOptions,
) -> Sample {
    let (gap, lyapunov) = match reference {
        Some(reference) => {
            let l = metrics::lyapunov_v(spec, r, reference, z, t);
            (Some(l.gap), Some(l.value))
        }
        None => (None, None),
    };
    Sample {
        t,
        j: 0,
        payoff: spec.payoff_unchecked(&z.x, &z.y),
        gap,
        lyapunov,
        lyapunov_valid: true,
        block_norms: z.block_norms(),
        dist_x: spec.x_mirror().distance(&z.x),
        dist_y: spec.y_mirror().distance(&z.y),
        timers: Vec::new(),
        state: opts.full_state.then(|| z.to_flat()),
    }
}
