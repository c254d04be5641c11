//! Shared setup for the benchmarks.

use nashflow::flow::{self, FlowState};
use nashflow::game::build_example1;
use nashflow::hybrid::{self, HybridState, TimerParams};
use nashflow::GameSpec;

pub const SEED: u64 = 42;

pub fn example_game() -> GameSpec {
    build_example1(SEED)
}

/// Flow state a little way into the run, so box faces are active.
pub fn example_flow_state(spec: &GameSpec) -> FlowState {
    let mut st = flow::default_init(spec, 1.0).expect("initial state");
    for (i, v) in st.z.u.iter_mut().enumerate() {
        *v = 0.7 * (i as f64).sin() - 0.2;
    }
    for (i, v) in st.z.v.iter_mut().enumerate() {
        *v = 1.3 * (i as f64).cos();
    }
    st.z.x = spec.x_mirror().conjugate_gradient(&st.z.u);
    st.z.y = spec.y_mirror().conjugate_gradient(&st.z.v);
    st.t = 10.0;
    st
}

pub fn example_hybrid_state(spec: &GameSpec, params: &TimerParams) -> HybridState {
    let z = example_flow_state(spec).z;
    let (tau1, tau2) = hybrid::random_timers(params, spec.n1(), spec.n2(), SEED);
    hybrid::hybrid_init(spec, params, z, tau1, tau2).expect("hybrid state")
}
