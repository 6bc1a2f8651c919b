use super::integrate::{flow_segment_until, FlowExit};
use super::{
    ArcSample, HybridArc, HybridError, HybridSystem, HybridTime, ProductState, Termination,
};
use serde::{Deserialize, Serialize};

/// Attractor distance below which back-to-back jumps are not treated as Zeno.
const ZENO_ATTRACTOR_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon_t: f64,
    pub horizon_j: usize,
    pub step: f64,
    /// Stop once the system's attractor distance is at most this value.
    pub stop_dist: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon_t: 30.0,
            horizon_j: 1000,
            step: 1e-3,
            stop_dist: None,
        }
    }
}

/// Applies the jump map and returns its first candidate.
pub fn jump_once<S: HybridSystem + ?Sized>(
    sys: &S,
    x: &ProductState,
) -> Result<ProductState, HybridError> {
    if !sys.in_jump_set(x) {
        return Err(HybridError::Precondition(
            "state is not in the jump set".into(),
        ));
    }
    let next = sys
        .jump_map(x)
        .into_iter()
        .next()
        .ok_or(HybridError::EmptyJumpMap)?;
    if !sys.in_domain(&next) {
        return Err(HybridError::Precondition("jump map left the domain".into()));
    }
    Ok(next)
}

/// Generates one solution from `x0`, jumping whenever the state is in `D`
/// (jump priority on `C ∩ D`) and flowing otherwise.
///
/// Integration problems end the arc with [`Termination::IntegrationFailure`];
/// `Err` is reserved for an invalid `x0` or a state in neither `C` nor `D`.
pub fn simulate<S: HybridSystem + ?Sized>(
    sys: &S,
    x0: &ProductState,
    opts: &SimOptions,
) -> Result<HybridArc, HybridError> {
    if !sys.in_domain(x0) {
        return Err(HybridError::Precondition("x0 is outside the domain".into()));
    }
    let mut samples = vec![ArcSample {
        time: HybridTime { t: 0.0, j: 0 },
        state: x0.clone(),
    }];
    let mut jump_indices = Vec::new();
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut j = 0usize;
    let mut just_jumped = false;
    let dist = |x: &ProductState| sys.attractor_distance(x);

    let termination = loop {
        if let (Some(s), Some(d)) = (opts.stop_dist, dist(&x)) {
            if d <= s {
                break Termination::InAttractor;
            }
        }
        if sys.in_jump_set(&x) {
            if j >= opts.horizon_j {
                break Termination::JumpBudget;
            }
            if just_jumped && dist(&x).is_none_or(|d| d > ZENO_ATTRACTOR_TOL) {
                break Termination::ZenoGuard;
            }
            x = jump_once(sys, &x)?;
            j += 1;
            jump_indices.push(samples.len());
            samples.push(ArcSample {
                time: HybridTime { t, j },
                state: x.clone(),
            });
            just_jumped = true;
            continue;
        }
        if !sys.in_flow_set(&x) {
            return Err(HybridError::OutsideDomain { t, j });
        }
        if t >= opts.horizon_t {
            break Termination::HorizonReached;
        }
        let seg = flow_segment_until(sys, &x, opts.horizon_t - t, opts.step, opts.stop_dist)?;
        let t0 = t;
        for (dt, y) in seg.samples.into_iter().skip(1) {
            t = t0 + dt;
            samples.push(ArcSample {
                time: HybridTime { t, j },
                state: y.clone(),
            });
            x = y;
            just_jumped = false;
        }
        match seg.exit {
            FlowExit::Failure(msg) => break Termination::IntegrationFailure(msg),
            FlowExit::MaxT => {
                t = opts.horizon_t;
                if let Some(last) = samples.last_mut() {
                    last.time.t = t;
                }
            }
            FlowExit::Stopped | FlowExit::EnteredJumpSet => {}
        }
    };
    Ok(HybridArc {
        samples,
        jump_indices,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{FnSystem, Manifold};
    use nalgebra::DVector;

    fn bouncing() -> FnSystem {
        // z' = 1 on [0, 1]; at z >= 1 reset to 0 and flip the mode.
        FnSystem::flow_only(Manifold::euclidean(1), |_| DVector::from_element(1, 1.0))
            .with_flow_set(|x| x.z[0] <= 1.0)
            .with_jump_set(|x| x.z[0] >= 1.0)
            .with_jump_map(|x| vec![ProductState::from_slice(3 - x.q, &[0.0])])
    }

    #[test]
    fn pure_flow_without_jump_budget() {
        let sys = bouncing();
        let opts = SimOptions {
            horizon_t: 0.5,
            horizon_j: 0,
            step: 0.01,
            stop_dist: None,
        };
        let arc = simulate(&sys, &ProductState::from_slice(1, &[0.0]), &opts).unwrap();
        assert_eq!(arc.termination, Termination::HorizonReached);
        assert!(arc.samples.iter().all(|s| s.time.j == 0));
        assert_eq!(arc.last().time.t, 0.5);
    }

    #[test]
    fn initial_jump_has_priority() {
        let sys = bouncing();
        let arc = simulate(
            &sys,
            &ProductState::from_slice(1, &[1.0]),
            &SimOptions {
                horizon_t: 0.1,
                step: 0.01,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(arc.jump_indices[0], 1);
        assert_eq!(arc.samples[1].time, HybridTime { t: 0.0, j: 1 });
        assert_eq!(arc.samples[1].state.q, 2);
        arc.check_time_domain().unwrap();
    }

    #[test]
    fn jump_budget_and_time_domain() {
        let sys = bouncing();
        let opts = SimOptions {
            horizon_t: 10.0,
            horizon_j: 3,
            step: 0.01,
            stop_dist: None,
        };
        let arc = simulate(&sys, &ProductState::from_slice(1, &[0.0]), &opts).unwrap();
        assert_eq!(arc.termination, Termination::JumpBudget);
        assert_eq!(arc.jumps(), 3);
        arc.check_time_domain().unwrap();
        for (pre, post) in arc.jump_pairs() {
            assert!((pre.time.t - post.time.t).abs() == 0.0);
        }
    }

    #[test]
    fn repeated_jumps_trip_the_zeno_guard() {
        let sys = FnSystem::flow_only(Manifold::euclidean(1), |_| DVector::zeros(1))
            .with_flow_set(|_| false)
            .with_jump_set(|_| true);
        let arc = simulate(
            &sys,
            &ProductState::from_slice(1, &[0.0]),
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(arc.termination, Termination::ZenoGuard);
        assert_eq!(arc.jumps(), 1);
    }

    #[test]
    fn state_in_neither_set_is_an_error() {
        let sys = FnSystem::flow_only(Manifold::euclidean(1), |_| DVector::zeros(1))
            .with_flow_set(|x| x.z[0] < 0.0);
        let r = simulate(
            &sys,
            &ProductState::from_slice(1, &[1.0]),
            &SimOptions::default(),
        );
        assert!(matches!(r, Err(HybridError::OutsideDomain { .. })));
    }
}
