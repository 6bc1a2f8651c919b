use super::control::{BacksteppedPendulum, SmoothedPendulum};
use crate::hybrid::{simulate, HybridArc, HybridSystem, ProductState, SimOptions, Termination};
use crate::linalg::{random_in_ball, random_unit};
use crate::slff::{gap_value, SlffPair};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A pendulum closed loop as seen by the campaign checks.
pub trait ClosedLoop: HybridSystem {
    fn label(&self) -> &'static str;
    fn lyapunov(&self, x: &ProductState) -> f64;
    fn gap(&self, x: &ProductState) -> f64;
    fn threshold(&self, x: &ProductState) -> f64;
    /// Plant input applied during flow.
    fn input(&self, x: &ProductState) -> DVector<f64>;
    /// A random initial state. For the pendulum loops: `z` uniform on the
    /// sphere, `ω` uniform in the ball of `radius`, `q` uniform, and any
    /// controller state at its rest value for `q`.
    fn sample_initial(&self, rng: &mut ChaCha8Rng, radius: f64) -> ProductState;
}

fn base_initial(modes: &[i32], rng: &mut ChaCha8Rng, radius: f64, extra: usize) -> ProductState {
    let q = modes[rng.random_range(0..modes.len())];
    let z = random_unit(rng, 3);
    let w = random_in_ball(rng, 3, radius);
    let mut x = DVector::zeros(6 + extra);
    x.rows_mut(0, 3).copy_from(&z);
    x.rows_mut(3, 3).copy_from(&w);
    ProductState::new(q, x)
}

impl ClosedLoop for BacksteppedPendulum {
    fn label(&self) -> &'static str {
        "pendulum_backstep"
    }
    fn lyapunov(&self, x: &ProductState) -> f64 {
        self.pair.value(x.q, &x.z)
    }
    fn gap(&self, x: &ProductState) -> f64 {
        gap_value(&self.pair, x.q, &x.z)
    }
    fn threshold(&self, x: &ProductState) -> f64 {
        self.controller.threshold_at(x)
    }
    fn input(&self, x: &ProductState) -> DVector<f64> {
        DVector::from_column_slice(self.torque(x).as_slice())
    }
    fn sample_initial(&self, rng: &mut ChaCha8Rng, radius: f64) -> ProductState {
        base_initial(self.family.modes.as_slice(), rng, radius, 0)
    }
}

impl ClosedLoop for SmoothedPendulum {
    fn label(&self) -> &'static str {
        "pendulum_smoothed"
    }
    fn lyapunov(&self, x: &ProductState) -> f64 {
        self.logic.pair.value(x.q, &x.z)
    }
    fn gap(&self, x: &ProductState) -> f64 {
        gap_value(self.logic.pair.as_ref(), x.q, &x.z)
    }
    fn threshold(&self, x: &ProductState) -> f64 {
        self.controller.threshold_at(x)
    }
    fn input(&self, x: &ProductState) -> DVector<f64> {
        DVector::from_column_slice(self.torque(x).as_slice())
    }
    fn sample_initial(&self, rng: &mut ChaCha8Rng, radius: f64) -> ProductState {
        let n = self.logic_dim();
        let mut x = base_initial(self.family.modes.as_slice(), rng, radius, n);
        let e = self.logic_value(x.q);
        x.z.rows_mut(6, n).copy_from(&e);
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignOptions {
    pub runs: usize,
    pub seed: u64,
    /// Bound on the unconstrained part of the initial state (`|ω|` for the
    /// pendulum).
    pub init_radius: f64,
    pub sim: SimOptions,
    /// Final attractor distance required of every run.
    pub target_distance: f64,
    pub max_jumps: usize,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            runs: 100,
            seed: 2024,
            init_radius: 5.0,
            sim: SimOptions {
                horizon_t: 30.0,
                horizon_j: 1000,
                step: 1e-3,
                stop_dist: Some(1e-3),
            },
            target_distance: 1e-2,
            max_jumps: 5,
        }
    }
}

/// Per-run measurements. Margins are positive when the check holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub initial: ProductState,
    pub termination: Termination,
    pub jumps: usize,
    pub duration: f64,
    pub final_distance: f64,
    pub min_lyapunov: f64,
    pub max_lyapunov: f64,
    /// Flow steps along which `V` grew by more than `1e-9 · max(1, V)`.
    pub flow_violations: usize,
    /// Sum of the increases of `V` over flow steps, divided by the flow time.
    pub flow_violation_rate: f64,
    /// `min (V(q, z) - V(q⁺, z) - δ - ε)` over jumps; `None` without jumps.
    pub worst_jump_margin: Option<f64>,
    /// `μ_V(q⁺, z) = 0` after every jump.
    pub argmin_exact: bool,
    pub max_sphere_drift: f64,
    /// `max |u(q⁺) - u(q)|` over jumps.
    pub max_input_jump: f64,
    /// `min |u(q⁺) - u(q)|` over jumps that change `q`.
    pub min_input_jump: Option<f64>,
}

impl RunRecord {
    pub fn converged(&self, opts: &CampaignOptions) -> bool {
        self.final_distance <= opts.target_distance
            && self.jumps <= opts.max_jumps
            && !matches!(
                self.termination,
                Termination::ZenoGuard | Termination::IntegrationFailure(_)
            )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub scenario: String,
    pub options: CampaignOptions,
    pub runs: Vec<RunRecord>,
}

impl CampaignReport {
    pub fn worst_flow_violation_rate(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.flow_violation_rate)
            .fold(0.0, f64::max)
    }

    pub fn worst_jump_margin(&self) -> Option<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.worst_jump_margin)
            .reduce(f64::min)
    }

    pub fn argmin_exact(&self) -> bool {
        self.runs.iter().all(|r| r.argmin_exact)
    }

    pub fn converged_count(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.converged(&self.options))
            .count()
    }

    pub fn max_jumps(&self) -> usize {
        self.runs.iter().map(|r| r.jumps).max().unwrap_or(0)
    }

    pub fn zeno_trips(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.termination == Termination::ZenoGuard)
            .count()
    }

    pub fn max_sphere_drift(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.max_sphere_drift)
            .fold(0.0, f64::max)
    }

    pub fn max_input_jump(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.max_input_jump)
            .fold(0.0, f64::max)
    }

    pub fn min_input_jump(&self) -> Option<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.min_input_jump)
            .reduce(f64::min)
    }

    pub fn flow_violations(&self) -> usize {
        self.runs.iter().map(|r| r.flow_violations).sum()
    }

    pub fn total_jumps(&self) -> usize {
        self.runs.iter().map(|r| r.jumps).sum()
    }
}

fn measure<L: ClosedLoop + ?Sized>(
    sys: &L,
    index: usize,
    initial: ProductState,
    arc: &HybridArc,
) -> RunRecord {
    let mut increase = 0.0;
    let mut flow_time = 0.0;
    let mut violations = 0;
    for (a, b) in arc.flow_pairs() {
        let (va, vb) = (sys.lyapunov(&a.state), sys.lyapunov(&b.state));
        increase += (vb - va).max(0.0);
        if vb - va > 1e-9 * va.max(1.0) {
            violations += 1;
        }
        flow_time += b.time.t - a.time.t;
    }
    let values = arc.samples.iter().map(|s| sys.lyapunov(&s.state));
    let min_v = values.clone().fold(f64::INFINITY, f64::min);
    let max_v = values.fold(f64::NEG_INFINITY, f64::max);
    let mut worst_jump = None::<f64>;
    let mut argmin_exact = true;
    let mut input_jump = 0.0f64;
    let mut min_input_jump = None::<f64>;
    for (a, b) in arc.jump_pairs() {
        let margin = sys.lyapunov(&a.state) - sys.lyapunov(&b.state) - sys.threshold(&a.state);
        worst_jump = Some(worst_jump.map_or(margin, |w| w.min(margin)));
        argmin_exact &= sys.gap(&b.state) == 0.0;
        let du = (sys.input(&b.state) - sys.input(&a.state)).norm();
        input_jump = input_jump.max(du);
        if a.state.q != b.state.q {
            min_input_jump = Some(min_input_jump.map_or(du, |m| m.min(du)));
        }
    }
    let m = sys.manifold();
    let last = &arc.last().state;
    RunRecord {
        index,
        initial,
        termination: arc.termination.clone(),
        jumps: arc.jumps(),
        duration: arc.last().time.t,
        final_distance: sys.attractor_distance(last).unwrap_or(f64::INFINITY),
        min_lyapunov: min_v,
        max_lyapunov: max_v,
        flow_violations: violations,
        flow_violation_rate: if flow_time > 0.0 {
            increase / flow_time
        } else {
            0.0
        },
        worst_jump_margin: worst_jump,
        argmin_exact,
        max_sphere_drift: arc
            .samples
            .iter()
            .map(|s| m.sphere_drift(&s.state.z))
            .fold(0.0, f64::max),
        max_input_jump: input_jump,
        min_input_jump,
    }
}

/// Runs `opts.runs` seeded simulations in parallel. Run `i` draws its initial
/// state from stream `i` of a ChaCha8 generator seeded with `opts.seed`, so
/// results do not depend on scheduling.
pub fn run_campaign<L: ClosedLoop + Sync + ?Sized>(
    sys: &L,
    opts: &CampaignOptions,
) -> CampaignReport {
    let runs = (0..opts.runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let x0 = sys.sample_initial(&mut rng, opts.init_radius);
            match simulate(sys, &x0, &opts.sim) {
                Ok(arc) => measure(sys, i, x0, &arc),
                Err(e) => RunRecord {
                    index: i,
                    initial: x0,
                    termination: Termination::IntegrationFailure(e.to_string()),
                    jumps: 0,
                    duration: 0.0,
                    final_distance: f64::INFINITY,
                    min_lyapunov: f64::NAN,
                    max_lyapunov: f64::NAN,
                    flow_violations: 0,
                    flow_violation_rate: f64::INFINITY,
                    worst_jump_margin: None,
                    argmin_exact: false,
                    max_sphere_drift: f64::INFINITY,
                    max_input_jump: 0.0,
                    min_input_jump: None,
                },
            }
        })
        .collect();
    CampaignReport {
        scenario: sys.label().into(),
        options: opts.clone(),
        runs,
    }
}

/// Keeps the full arc of one run, for export.
pub fn simulate_run<L: ClosedLoop + ?Sized>(
    sys: &L,
    opts: &CampaignOptions,
    index: usize,
) -> Result<(ProductState, HybridArc), crate::hybrid::HybridError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let x0 = sys.sample_initial(&mut rng, opts.init_radius);
    let arc = simulate(sys, &x0, &opts.sim)?;
    Ok((x0, arc))
}
