use super::{HybridError, HybridSystem, ProductState};
use nalgebra::DVector;

/// Width of the bracket left by event bisection, in seconds.
pub const EVENT_TIME_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum FlowExit {
    /// The last sample is the first located state in `D` (or outside `C`).
    EnteredJumpSet,
    MaxT,
    /// The stopping distance to the attractor was reached.
    Stopped,
    Failure(String),
}

#[derive(Clone, Debug)]
pub struct FlowSegment {
    /// `(t, x)` with `t` relative to the start of the segment; the first entry is `x0`.
    pub samples: Vec<(f64, ProductState)>,
    pub exit: FlowExit,
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn shifted(x: &ProductState, k: &DVector<f64>, h: f64) -> ProductState {
    ProductState {
        q: x.q,
        z: &x.z + k * h,
    }
}

/// One classical RK4 step of size `h` followed by renormalization of the
/// sphere blocks.
pub fn rk4_step<S: HybridSystem + ?Sized>(
    sys: &S,
    x: &ProductState,
    h: f64,
) -> Result<ProductState, String> {
    let k1 = sys.flow_map(x);
    if !finite(&k1) {
        return Err("non-finite flow map".into());
    }
    let k2 = sys.flow_map(&shifted(x, &k1, 0.5 * h));
    let k3 = sys.flow_map(&shifted(x, &k2, 0.5 * h));
    let k4 = sys.flow_map(&shifted(x, &k3, h));
    let mut z = &x.z + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    if !finite(&z) {
        return Err("non-finite state after step".into());
    }
    sys.manifold()
        .renormalize(&mut z)
        .map_err(|e| e.to_string())?;
    Ok(ProductState { q: x.q, z })
}

fn must_stop_flowing<S: HybridSystem + ?Sized>(sys: &S, x: &ProductState) -> bool {
    sys.in_jump_set(x) || !sys.in_flow_set(x)
}

/// Integrates the flow from `x0` for at most `max_t` seconds, stopping at the
/// first state in the jump set. See [`flow_segment_until`].
pub fn flow_segment<S: HybridSystem + ?Sized>(
    sys: &S,
    x0: &ProductState,
    max_t: f64,
    step: f64,
) -> Result<FlowSegment, HybridError> {
    flow_segment_until(sys, x0, max_t, step, None)
}

/// Like [`flow_segment`], additionally stopping once the attractor distance
/// reported by `sys` drops to `stop_dist`.
///
/// When a step ends in `D` (or outside `C`), the step is bisected by
/// re-integrating a single RK4 step of shrinking size from its start until the
/// bracket is narrower than [`EVENT_TIME_TOL`]; the recorded event state is the
/// upper end of the bracket and therefore lies in `D`.
pub fn flow_segment_until<S: HybridSystem + ?Sized>(
    sys: &S,
    x0: &ProductState,
    max_t: f64,
    step: f64,
    stop_dist: Option<f64>,
) -> Result<FlowSegment, HybridError> {
    if !(step > 0.0) || !(max_t >= 0.0) {
        return Err(HybridError::Precondition(format!(
            "step must be positive and max_t non-negative (step = {step}, max_t = {max_t})"
        )));
    }
    if !sys.in_flow_set(x0) {
        return Err(HybridError::Precondition(
            "x0 is not in the flow set".into(),
        ));
    }
    let stopped = |x: &ProductState| match (stop_dist, sys.attractor_distance(x)) {
        (Some(s), Some(d)) => d <= s,
        _ => false,
    };

    let mut samples = vec![(0.0, x0.clone())];
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut k: u64 = 0;
    loop {
        if stopped(&x) {
            return Ok(FlowSegment {
                samples,
                exit: FlowExit::Stopped,
            });
        }
        let remaining = max_t - t;
        if remaining <= 1e-12 * max_t.max(1.0) {
            return Ok(FlowSegment {
                samples,
                exit: FlowExit::MaxT,
            });
        }
        // Grid times are k * step so long runs do not accumulate round-off.
        let t_next = if remaining <= step * (1.0 + 1e-9) {
            max_t
        } else {
            (k + 1) as f64 * step
        };
        let h = t_next - t;

        let y = match rk4_step(sys, &x, h) {
            Ok(y) => y,
            Err(msg) => {
                return Ok(FlowSegment {
                    samples,
                    exit: FlowExit::Failure(format!("{msg} at t = {t}")),
                })
            }
        };
        if must_stop_flowing(sys, &y) {
            let (mut lo, mut hi) = (0.0, h);
            let mut event = y;
            while hi - lo > EVENT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                match rk4_step(sys, &x, mid) {
                    Ok(ym) if must_stop_flowing(sys, &ym) => {
                        hi = mid;
                        event = ym;
                    }
                    Ok(_) => lo = mid,
                    Err(msg) => {
                        return Ok(FlowSegment {
                            samples,
                            exit: FlowExit::Failure(format!("{msg} during event location")),
                        })
                    }
                }
            }
            samples.push((t + hi, event));
            return Ok(FlowSegment {
                samples,
                exit: FlowExit::EnteredJumpSet,
            });
        }
        t = t_next;
        k += 1;
        samples.push((t, y.clone()));
        x = y;
    }
}
