//! Restarted hybrid saddle dynamics with per-agent timers and coordinated
//! resets.

use serde::{Deserialize, Serialize};

use crate::disturbance::Disturbance;
use crate::error::{check_len, Error, Result};
use crate::flow::{face_mode, scaled_field, FlowParams, RecordOptions, DIVERGENCE_NORM};
use crate::game::{GameSpec, SaddleReference};
use crate::graph::{NetworkTopology, Subnetwork};
use crate::integrator;
use crate::metrics::{self, CONSENSUS_TOL};
use crate::record::{EpochStart, JumpEvent, Restart, Sample, TimerReset, TrajectoryRecord};
use crate::state::SaddleState;

/// Timers within this distance of `T` are due to jump.
pub const EVENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySelection {
    /// Pick `T0` at `τ = T0 + r`.
    #[default]
    Lower,
    /// Pick `T` at `τ = T0 + r`.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerParams {
    pub t0: f64,
    pub t_max: f64,
    pub eta: f64,
    pub offsets1: Vec<f64>,
    pub offsets2: Vec<f64>,
    pub boundary: BoundarySelection,
}

impl TimerParams {
    /// Every offset set to `0.9·(T - T0)/(n1 + n2)`.
    pub fn new(t0: f64, t_max: f64, eta: f64, n1: usize, n2: usize) -> Result<Self> {
        let r = 0.9 * (t_max - t0) / (n1 + n2) as f64;
        let p = Self {
            t0,
            t_max,
            eta,
            offsets1: vec![r; n1],
            offsets2: vec![r; n2],
            boundary: BoundarySelection::Lower,
        };
        p.validate(n1, n2)?;
        Ok(p)
    }

    /// `T0 = 1`, `T = 5`, `η = 1`.
    pub fn default_for(n1: usize, n2: usize) -> Self {
        Self::new(1.0, 5.0, 1.0, n1, n2).expect("default timer parameters are valid")
    }

    pub fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        if !(self.t0 > 0.0 && self.t_max > self.t0 && self.t_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "timer bounds need 0 < T0 < T, got T0 = {}, T = {}",
                self.t0, self.t_max
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        check_len("offsets1", n1, self.offsets1.len())?;
        check_len("offsets2", n2, self.offsets2.len())?;
        let hi = (self.t_max - self.t0) / (n1 + n2) as f64;
        for &r in self.offsets1.iter().chain(&self.offsets2) {
            if !(r > 0.0 && r < hi) {
                return Err(Error::InvalidConfig(format!(
                    "reset offset {r} outside (0, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn offset(&self, l: Subnetwork, k: usize) -> f64 {
        match l {
            Subnetwork::First => self.offsets1[k],
            Subnetwork::Second => self.offsets2[k],
        }
    }

    fn check_timer(&self, tau: f64) -> Result<()> {
        if tau >= self.t0 - EVENT_TOL && tau <= self.t_max + EVENT_TOL {
            Ok(())
        } else {
            Err(Error::TimerOutOfRange {
                tau,
                lower: self.t0,
                upper: self.t_max,
            })
        }
    }
}

/// `(T - T0)/η + n_total`: after this much hybrid time all timers agree.
pub fn timer_consensus_time(params: &TimerParams, n_total: usize) -> f64 {
    (params.t_max - params.t0) / params.eta + n_total as f64
}

/// Values of the set-valued reset map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetValue {
    Lower,
    Both,
    Upper,
}

impl ResetValue {
    pub fn values(self, params: &TimerParams) -> Vec<f64> {
        match self {
            ResetValue::Lower => vec![params.t0],
            ResetValue::Upper => vec![params.t_max],
            ResetValue::Both => vec![params.t0, params.t_max],
        }
    }

    pub fn select(self, params: &TimerParams) -> f64 {
        match (self, params.boundary) {
            (ResetValue::Lower, _) | (ResetValue::Both, BoundarySelection::Lower) => params.t0,
            (ResetValue::Upper, _) | (ResetValue::Both, BoundarySelection::Upper) => params.t_max,
        }
    }
}

/// `{T0}` below `T0 + r_k`, `{T0, T}` at it, `{T}` above.
pub fn reset_mapping(params: &TimerParams, l: Subnetwork, k: usize, tau: f64) -> Result<ResetValue> {
    params.check_timer(tau)?;
    let threshold = params.t0 + params.offset(l, k);
    Ok(if tau < threshold {
        ResetValue::Lower
    } else if tau == threshold {
        ResetValue::Both
    } else {
        ResetValue::Upper
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub z: SaddleState,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub t: f64,
    pub j: u64,
}

impl HybridState {
    pub fn timer(&self, l: Subnetwork, k: usize) -> f64 {
        match l {
            Subnetwork::First => self.tau1[k],
            Subnetwork::Second => self.tau2[k],
        }
    }

    fn timer_mut(&mut self, l: Subnetwork, k: usize) -> &mut f64 {
        match l {
            Subnetwork::First => &mut self.tau1[k],
            Subnetwork::Second => &mut self.tau2[k],
        }
    }

    pub fn timers(&self) -> Vec<f64> {
        self.tau1.iter().chain(&self.tau2).copied().collect()
    }

    pub fn max_timer(&self) -> f64 {
        self.tau1
            .iter()
            .chain(&self.tau2)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn timers_equal(&self) -> bool {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &t in self.tau1.iter().chain(&self.tau2) {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        hi - lo <= CONSENSUS_TOL
    }

    /// First agent (in `(l, k)` order) whose timer is due.
    fn due_agent(&self, params: &TimerParams) -> Option<(Subnetwork, usize)> {
        let due = |t: f64| t >= params.t_max - EVENT_TOL;
        if let Some(k) = self.tau1.iter().position(|&t| due(t)) {
            return Some((Subnetwork::First, k));
        }
        self.tau2
            .iter()
            .position(|&t| due(t))
            .map(|k| (Subnetwork::Second, k))
    }
}

/// Builds a hybrid state from a flow state and timer values; `t = 0`, `j = 0`.
pub fn hybrid_init(
    spec: &GameSpec,
    params: &TimerParams,
    z: SaddleState,
    tau1: Vec<f64>,
    tau2: Vec<f64>,
) -> Result<HybridState> {
    params.validate(spec.n1(), spec.n2())?;
    check_len("tau1", spec.n1(), tau1.len())?;
    check_len("tau2", spec.n2(), tau2.len())?;
    for &t in tau1.iter().chain(&tau2) {
        params.check_timer(t)?;
    }
    check_len("state.x", spec.dim_x(), z.dim_x())?;
    check_len("state.y", spec.dim_y(), z.dim_y())?;
    Ok(HybridState {
        z,
        tau1,
        tau2,
        t: 0.0,
        j: 0,
    })
}

/// Timer values drawn uniformly from `[T0, T)`.
pub fn random_timers(params: &TimerParams, n1: usize, n2: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(params.t0..params.t_max)).collect()
    };
    let a = draw(n1);
    let b = draw(n2);
    (a, b)
}

fn scales(params_r: f64, tau: &[f64], eta_off: f64) -> Vec<f64> {
    tau.iter().map(|&t| (t + eta_off) / params_r).collect()
}

/// Flow map: the saddle field with each agent's own `τ_k/r`; every timer
/// advances at rate `η`.
pub fn hybrid_flow_rhs(
    spec: &GameSpec,
    r: f64,
    params: &TimerParams,
    state: &HybridState,
) -> Result<(SaddleState, f64)> {
    check_len("tau1", spec.n1(), state.tau1.len())?;
    check_len("tau2", spec.n2(), state.tau2.len())?;
    for &t in state.tau1.iter().chain(&state.tau2) {
        params.check_timer(t)?;
    }
    let s1 = scales(r, &state.tau1, 0.0);
    let s2 = scales(r, &state.tau2, 0.0);
    Ok((scaled_field(spec, &s1, &s2, &state.z), params.eta))
}

/// Some timer is at `T` and the strategies lie in their constraint sets
/// (within `1e-9`).
pub fn in_jump_set(spec: &GameSpec, params: &TimerParams, state: &HybridState) -> bool {
    state.due_agent(params).is_some()
        && spec.x_mirror().distance(&state.z.x) <= 1e-9
        && spec.y_mirror().distance(&state.z.y) <= 1e-9
}

/// One jump: the lowest due agent resets to `T0`; its neighbors in both
/// subnetworks snap through the reset map. Only timers change.
pub fn coordinated_jump(
    topology: &NetworkTopology,
    params: &TimerParams,
    state: &HybridState,
) -> Result<(HybridState, JumpEvent)> {
    let (l, k) = state.due_agent(params).ok_or(Error::NotInJumpSet)?;
    let mut next = state.clone();
    let mut resets = Vec::new();
    let mut set = |next: &mut HybridState, ll: Subnetwork, kk: usize, new: f64| {
        let old = next.timer(ll, kk);
        *next.timer_mut(ll, kk) = new;
        resets.push(TimerReset {
            subnetwork: ll.number(),
            agent: kk,
            old,
            new,
        });
    };
    set(&mut next, l, k, params.t0);
    for h in topology.neighbors(l, k)? {
        let v = reset_mapping(params, l, h, state.timer(l, h))?.select(params);
        set(&mut next, l, h, v);
    }
    let other = l.other();
    for h in topology.cross_neighbors(l, k)? {
        let v = reset_mapping(params, other, h, state.timer(other, h))?.select(params);
        set(&mut next, other, h, v);
    }
    next.j += 1;
    let event = JumpEvent {
        t: state.t,
        j: state.j,
        trigger: (l, k),
        resets,
    };
    Ok((next, event))
}

/// Runs the hybrid system from `state0` until flow time `t_end`.
///
/// Flow steps are clipped so the leading timer lands exactly on `T`; due
/// timers then trigger a cascade of sequential jumps at the same flow
/// instant. With a reference, samples carry the gap and `Ṽ`, and every
/// cascade that starts and ends synchronized is logged as a [`Restart`].
#[allow(clippy::too_many_arguments)]
pub fn hybrid_execute(
    spec: &GameSpec,
    flow: &FlowParams,
    params: &TimerParams,
    state0: &HybridState,
    t_end: f64,
    disturbance: &mut Disturbance,
    reference: Option<&SaddleReference>,
    opts: &RecordOptions,
) -> Result<TrajectoryRecord> {
    flow.validate()?;
    params.validate(spec.n1(), spec.n2())?;
    let mut hs = hybrid_init(
        spec,
        params,
        state0.z.clone(),
        state0.tau1.clone(),
        state0.tau2.clone(),
    )?;
    hs.t = state0.t;
    hs.j = state0.j;
    if !(t_end >= hs.t) {
        return Err(Error::InvalidConfig(format!(
            "end time {t_end} precedes start time {}",
            hs.t
        )));
    }
    let r = flow.r;
    let n_total = spec.n1() + spec.n2();
    let cascade_cap = 4 * n_total * n_total + 16;
    let every = opts.sample_every.max(1);
    let perturb_jumps = disturbance.is_active() && disturbance.spec().perturb_jumps;

    let mut rec = TrajectoryRecord::default();
    rec.samples.push(hybrid_sample(spec, r, &hs, reference, opts));
    if let (Some(reference), true) = (reference, hs.timers_equal()) {
        let l = metrics::lyapunov_vtilde(spec, r, reference, &hs.z, &hs.timers());
        rec.epochs.push(EpochStart {
            t: hs.t,
            j: hs.j,
            c: r * l.value,
        });
    }
    let mut steps_since_sample = 0u64;

    loop {
        if hs.due_agent(params).is_some() {
            let before = reference.map(|rf| metrics::lyapunov_vtilde(spec, r, rf, &hs.z, &hs.timers()));
            let j_before = hs.j;
            let mut count = 0;
            if steps_since_sample > 0 {
                rec.samples.push(hybrid_sample(spec, r, &hs, reference, opts));
                steps_since_sample = 0;
            }
            while hs.due_agent(params).is_some() {
                let (mut next, event) = coordinated_jump(spec.topology(), params, &hs)?;
                if perturb_jumps {
                    disturbance.begin_step();
                    next.z.axpy(1.0, &disturbance.value(next.t));
                }
                rec.events.push(event);
                hs = next;
                rec.samples.push(hybrid_sample(spec, r, &hs, reference, opts));
                count += 1;
                if count > cascade_cap {
                    return Err(Error::InvalidConfig(format!(
                        "jump cascade exceeded {cascade_cap} jumps at t = {}",
                        hs.t
                    )));
                }
            }
            if let (Some(reference), Some(before)) = (reference, before) {
                let after = metrics::lyapunov_vtilde(spec, r, reference, &hs.z, &hs.timers());
                if after.valid {
                    if before.valid {
                        rec.restarts.push(Restart {
                            t: hs.t,
                            j_before,
                            j_after: hs.j,
                            gap: after.gap,
                            lyapunov_before: before.value,
                            lyapunov_after: after.value,
                        });
                    }
                    rec.epochs.push(EpochStart {
                        t: hs.t,
                        j: hs.j,
                        c: r * after.value,
                    });
                }
            }
        }
        if hs.t >= t_end {
            break;
        }

        let tau_max = hs.max_timer();
        let h_event = (params.t_max - tau_max) / params.eta;
        let h_end = t_end - hs.t;
        let h = flow.dt.min(h_event).min(h_end);
        let hits_end = h == h_end;
        let (tau1, tau2, eta, t) = (hs.tau1.clone(), hs.tau2.clone(), params.eta, hs.t);
        disturbance.begin_step();
        let active = disturbance.is_active();
        let (zn, taken) = integrator::step_piecewise(
            flow.scheme,
            &hs.z,
            h,
            |off, zz| {
                let s1 = scales(r, &tau1, eta * off);
                let s2 = scales(r, &tau2, eta * off);
                if active {
                    let e = disturbance.value(t + off);
                    let mut f = scaled_field(spec, &s1, &s2, &zz.added(1.0, &e));
                    f.axpy(1.0, &e);
                    f
                } else {
                    scaled_field(spec, &s1, &s2, zz)
                }
            },
            |zz| face_mode(spec, zz),
        );
        hs.z = zn;
        let hits_end = hits_end && taken >= h;
        let h = taken;
        for tau in hs.tau1.iter_mut().chain(hs.tau2.iter_mut()) {
            *tau = (*tau + eta * h).min(params.t_max);
            // Due timers land exactly on T.
            if *tau >= params.t_max - EVENT_TOL {
                *tau = params.t_max;
            }
        }
        hs.t = if hits_end { t_end } else { hs.t + h };
        rec.steps += 1;
        steps_since_sample += 1;
        if !hs.z.is_finite() || hs.z.norm_inf() > DIVERGENCE_NORM {
            log::warn!("hybrid run diverged at t = {}, j = {}", hs.t, hs.j);
            rec.diverged = true;
            rec.divergence = Some((hs.t, hs.j));
            break;
        }
        if steps_since_sample >= every || hs.t >= t_end {
            rec.samples.push(hybrid_sample(spec, r, &hs, reference, opts));
            steps_since_sample = 0;
        }
    }
    rec.final_timers = hs.timers();
    rec.final_state = Some(hs.z);
    Ok(rec)
}

fn hybrid_sample(
    spec: &GameSpec,
    r: f64,
    hs: &HybridState,
    reference: Option<&SaddleReference>,
    opts: &RecordOptions,
) -> Sample {
    let timers = hs.timers();
    let (gap, lyapunov, valid) = match reference {
        Some(rf) => {
            let l = metrics::lyapunov_vtilde(spec, r, rf, &hs.z, &timers);
            (Some(l.gap), Some(l.value), l.valid)
        }
        None => (None, None, hs.timers_equal()),
    };
    Sample {
        t: hs.t,
        j: hs.j,
        payoff: spec.payoff_unchecked(&hs.z.x, &hs.z.y),
        gap,
        lyapunov,
        lyapunov_valid: valid,
        block_norms: hs.z.block_norms(),
        dist_x: spec.x_mirror().distance(&hs.z.x),
        dist_y: spec.y_mirror().distance(&hs.z.y),
        timers,
        state: opts.full_state.then(|| hs.z.to_flat()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disturbance::DisturbanceSpec;
    use crate::flow::{default_init, flow_rhs, FlowState};
    use crate::game::build_example1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> TimerParams {
        TimerParams::default_for(4, 4)
    }

    fn state_with(tau1: Vec<f64>, tau2: Vec<f64>) -> HybridState {
        let spec = build_example1(42);
        let z = default_init(&spec, 1.0).unwrap().z;
        hybrid_init(&spec, &params(), z, tau1, tau2).unwrap()
    }

    #[test]
    fn consensus_time_formula() {
        assert_eq!(timer_consensus_time(&params(), 8), 12.0);
        let p = TimerParams::new(1.0, 2.0, 1.0, 1, 0).unwrap();
        assert_eq!(timer_consensus_time(&p, 1), 2.0);
        let p = TimerParams::new(1.0, 5.0, 2.0, 4, 4).unwrap();
        assert_eq!(timer_consensus_time(&p, 8), 10.0);
    }

    #[test]
    fn reset_map_branches() {
        let p = params();
        let th = p.t0 + p.offsets1[0];
        let l = Subnetwork::First;
        assert_eq!(reset_mapping(&p, l, 0, p.t0).unwrap(), ResetValue::Lower);
        assert_eq!(reset_mapping(&p, l, 0, p.t_max).unwrap(), ResetValue::Upper);
        assert_eq!(reset_mapping(&p, l, 0, th).unwrap(), ResetValue::Both);
        assert_eq!(ResetValue::Both.values(&p), vec![1.0, 5.0]);
        assert_eq!(ResetValue::Both.select(&p), 1.0);
        let up = TimerParams {
            boundary: BoundarySelection::Upper,
            ..p.clone()
        };
        assert_eq!(ResetValue::Both.select(&up), 5.0);
        assert!(reset_mapping(&p, l, 0, 0.5).is_err());
        assert!(reset_mapping(&p, l, 0, 5.5).is_err());
    }

    #[test]
    fn offsets_are_validated() {
        assert!(TimerParams::new(0.0, 5.0, 1.0, 4, 4).is_err());
        assert!(TimerParams::new(2.0, 1.0, 1.0, 4, 4).is_err());
        let mut p = params();
        p.offsets2[1] = 0.5; // (T - T0)/8 = 0.5 is excluded
        assert!(p.validate(4, 4).is_err());
    }

    #[test]
    fn ring_reset_table() {
        // Trigger agent 0 of the first ring; its ring neighbors are 1 and 3 and
        // its cross neighbor is agent 0 of the second ring.
        let p = params();
        let th = p.t0 + p.offsets1[3];
        let s = state_with(vec![5.0, 1.2, 3.0, th], vec![4.0, 2.0, 1.1, 2.0]);
        let spec = build_example1(42);
        assert!(in_jump_set(&spec, &p, &s));
        let (n, ev) = coordinated_jump(spec.topology(), &p, &s).unwrap();
        assert_eq!(ev.trigger, (Subnetwork::First, 0));
        assert_eq!(n.tau1, vec![1.0, 1.0, 3.0, 1.0]);
        assert_eq!(n.tau2, vec![5.0, 2.0, 1.1, 2.0]);
        assert_eq!(n.j, 1);
        assert_eq!(n.z, s.z);
        assert_eq!(ev.resets.len(), 4);
        // The cross neighbor is now due and triggers next; its ring neighbors 1
        // and 3 are past threshold and snap up, its cross neighbor is at T0.
        let (n2, ev2) = coordinated_jump(spec.topology(), &p, &n).unwrap();
        assert_eq!(ev2.trigger, (Subnetwork::Second, 0));
        assert_eq!(n2.tau2, vec![1.0, 5.0, 1.1, 5.0]);
        assert_eq!(n2.tau1, vec![1.0, 1.0, 3.0, 1.0]);
    }

    #[test]
    fn jump_outside_jump_set_is_an_error() {
        let s = state_with(vec![2.0; 4], vec![2.0; 4]);
        let spec = build_example1(42);
        assert!(!in_jump_set(&spec, &params(), &s));
        assert!(matches!(
            coordinated_jump(spec.topology(), &params(), &s),
            Err(Error::NotInJumpSet)
        ));
    }

    #[test]
    fn all_due_cascade_terminates_quickly() {
        let spec = build_example1(42);
        let p = params();
        let mut s = state_with(vec![5.0; 4], vec![5.0; 4]);
        let mut jumps = 0;
        while s.due_agent(&p).is_some() {
            s = coordinated_jump(spec.topology(), &p, &s).unwrap().0;
            jumps += 1;
        }
        assert!(jumps <= 8, "{jumps} jumps");
        assert!(s.timers().iter().all(|&t| t == p.t0));
    }

    #[test]
    fn equal_timers_reduce_to_flow() {
        let spec = build_example1(42);
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let alpha = rng.gen_range(1.0..5.0);
            let mut z = SaddleState::zeros(8, 8);
            for b in z.blocks_mut() {
                b.apply(|v| *v = rng.gen_range(-1.0..1.0));
            }
            let hs = HybridState {
                z: z.clone(),
                tau1: vec![alpha; 4],
                tau2: vec![alpha; 4],
                t: 0.0,
                j: 0,
            };
            let (h, rate) = hybrid_flow_rhs(&spec, 2.0, &p, &hs).unwrap();
            let f = flow_rhs(&spec, 2.0, &FlowState { z, t: alpha }).unwrap();
            assert_eq!(h, f);
            assert_eq!(rate, 1.0);
        }
    }

    #[test]
    fn timers_out_of_range_are_rejected() {
        let spec = build_example1(42);
        let mut s = state_with(vec![2.0; 4], vec![2.0; 4]);
        s.tau2[3] = 6.0;
        assert!(matches!(
            hybrid_flow_rhs(&spec, 2.0, &params(), &s),
            Err(Error::TimerOutOfRange { .. })
        ));
    }

    #[test]
    fn synchronized_timers_jump_every_period() {
        let spec = build_example1(42);
        let p = params();
        let s = state_with(vec![1.0; 4], vec![1.0; 4]);
        let mut d = Disturbance::new(&DisturbanceSpec::none(), 8, 8);
        let flow = FlowParams {
            dt: 0.01,
            ..Default::default()
        };
        let rec = hybrid_execute(&spec, &flow, &p, &s, 20.5, &mut d, None, &RecordOptions::default())
            .unwrap();
        let mut times: Vec<f64> = rec.events.iter().map(|e| e.t).collect();
        times.dedup();
        assert_eq!(times.len(), 5);
        for (i, t) in times.iter().enumerate() {
            assert!((t - 4.0 * (i + 1) as f64).abs() < 1e-9, "{t}");
        }
        assert!(rec.samples.iter().all(|s| s.lyapunov_valid || s.timers.iter().all(|&t| t == 1.0 || t == 5.0)));
    }
}
