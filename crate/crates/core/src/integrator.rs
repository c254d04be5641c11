//! Fixed-step one-step methods over [`SaddleState`].

use serde::{Deserialize, Serialize};

use crate::state::SaddleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Rk4,
    Euler,
}

/// Advances `z` by `h`. The vector field receives the stage offset within the
/// step (`0`, `h/2` or `h`) so callers can evaluate time-varying coefficients.
pub fn step<F>(scheme: Scheme, z: &SaddleState, h: f64, mut field: F) -> SaddleState
where
    F: FnMut(f64, &SaddleState) -> SaddleState,
{
    match scheme {
        Scheme::Euler => z.added(h, &field(0.0, z)),
        Scheme::Rk4 => {
            let k1 = field(0.0, z);
            let k2 = field(0.5 * h, &z.added(0.5 * h, &k1));
            let k3 = field(0.5 * h, &z.added(0.5 * h, &k2));
            let k4 = field(h, &z.added(h, &k3));
            let mut out = z.clone();
            out.axpy(h / 6.0, &k1);
            out.axpy(h / 3.0, &k2);
            out.axpy(h / 3.0, &k3);
            out.axpy(h / 6.0, &k4);
            out
        }
    }
}

/// Step lengths closer than this to a kink are not refined further.
pub const KINK_TOL: f64 = 1e-13;

/// Like [`step`], but for vector fields that are only piecewise smooth.
///
/// `mode` labels the smooth piece containing a state. A trial step is clean
/// when every stage state and the end state lie in the starting piece. If
/// the full step is not clean it is shortened by bisection to the longest
/// clean step found, and a step no longer than `2·KINK_TOL·max(1, h)` is used
/// to cross the switch itself. Returns the new state and the step length
/// actually taken.
pub fn step_piecewise<F, M, K>(
    scheme: Scheme,
    z: &SaddleState,
    h: f64,
    mut field: F,
    mode: M,
) -> (SaddleState, f64)
where
    F: FnMut(f64, &SaddleState) -> SaddleState,
    M: Fn(&SaddleState) -> K,
    K: PartialEq,
{
    let start = mode(z);
    let mut trial = |len: f64| {
        let mut clean = true;
        let out = step(scheme, z, len, |off, zz| {
            if clean && mode(zz) != start {
                clean = false;
            }
            field(off, zz)
        });
        let clean = clean && mode(&out) == start;
        (out, clean)
    };
    let (full, clean) = trial(h);
    if clean {
        return (full, h);
    }
    let tol = KINK_TOL * h.max(1.0);
    let tiny = (2.0 * tol).min(h);
    let (first, clean) = trial(tiny);
    if tiny >= h || !clean {
        return (first, tiny);
    }
    let (mut lo, mut hi) = (tiny, h);
    let mut at_lo = first;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (next, clean) = trial(mid);
        if clean {
            lo = mid;
            at_lo = next;
        } else {
            hi = mid;
        }
    }
    (at_lo, lo)
}
