//! Building certified closed loops from a configuration.

use crate::config::{CustomConfig, ScenarioConfig, ScenarioId};
use crate::CliError;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use slff_core::hybrid::{HybridSystem, Manifold, ModeSet, ProductState, SimOptions};
use slff_core::pendulum::{
    build_hybrid_pendulum_controller, build_smoothed_pendulum_controller, certify_synergy_constant,
    potential_family_build, BacksteppedPendulum, CampaignOptions, Certification, ClosedLoop,
    PendulumError, PendulumParams, PotentialFamily, SmoothedPendulum,
};
use slff_core::slff::{
    b_set_samples, gap_value, sample_critical_set, synthesize_controller, CriticalKind,
    CriticalSearch, CriticalSet, FnAffine, FnPair, GapFunction, SlffPair, SynergisticController,
    ATTRACTOR_TOL,
};
use std::sync::Arc;

/// The certification constants written to reports; the sampled stall set
/// itself is left out.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub c: f64,
    pub beta: f64,
    pub min_gap: f64,
    pub seeds_per_mode: usize,
    pub sample_count: usize,
    pub worst_witness: Option<ProductState>,
}

impl From<&Certification> for CertificateSummary {
    fn from(c: &Certification) -> Self {
        Self {
            c: c.c,
            beta: c.beta,
            min_gap: c.min_gap,
            seeds_per_mode: c.seeds_per_mode,
            sample_count: c.sample_count,
            worst_witness: c.worst_witness.clone(),
        }
    }
}

/// `δ`, `ε` and `k_p` actually used by the controller.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Constants {
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub logic_gain: Option<f64>,
}

pub fn pendulum_params(cfg: &ScenarioConfig) -> PendulumParams {
    let p = &cfg.pendulum;
    PendulumParams {
        inertia: Matrix3::from_diagonal(&Vector3::from(p.inertia)),
        mass: p.mass,
        gravity: p.gravity,
        nu: Vector3::from(p.nu),
    }
}

pub fn xi(cfg: &ScenarioConfig) -> Matrix3<f64> {
    Matrix3::identity() * cfg.pendulum.xi_gain
}

pub fn campaign_options(cfg: &ScenarioConfig) -> CampaignOptions {
    let s = &cfg.simulation;
    CampaignOptions {
        runs: cfg.campaign.samples,
        seed: cfg.seed,
        init_radius: cfg.campaign.init_radius,
        sim: SimOptions {
            horizon_t: s.horizon_t,
            horizon_j: s.horizon_j,
            step: s.step,
            stop_dist: (s.stop_distance > 0.0).then_some(s.stop_distance),
        },
        target_distance: cfg.campaign.target_distance,
        max_jumps: cfg.campaign.max_jumps,
    }
}

fn witness_text(w: &Option<ProductState>) -> String {
    match w {
        Some(x) => format!(
            "q = {}, z = [{}]",
            x.q,
            x.z.iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        None => "no witness".into(),
    }
}

pub(crate) fn pendulum_error(e: PendulumError) -> CliError {
    match e {
        PendulumError::InvalidParams(_) | PendulumError::InvalidWarp { .. } => {
            CliError::Config(e.to_string())
        }
        PendulumError::NotSynergistic { min_gap, witness } => CliError::Check(format!(
            "certification failed: minimum gap {min_gap:e} at {}",
            witness_text(&witness)
        )),
        PendulumError::Recertification { threshold, witness } => CliError::Check(format!(
            "gap does not exceed {threshold} at {}; choose a smaller epsilon",
            witness_text(&witness)
        )),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Builds the warped family and certifies its synergy constant.
pub fn certify_pendulum(
    cfg: &ScenarioConfig,
) -> Result<(PendulumParams, Arc<PotentialFamily>), CliError> {
    let params = pendulum_params(cfg);
    let p = &cfg.pendulum;
    let mut family =
        potential_family_build(&params, p.modes, p.warp_gain).map_err(pendulum_error)?;
    let cert =
        certify_synergy_constant(&family, p.certify_seeds, p.beta).map_err(pendulum_error)?;
    family.certificate = Some(cert);
    Ok((params, Arc::new(family)))
}

/// Wells on `ℝᵈ`, see [`CustomConfig`].
pub struct WellsLoop {
    pub controller: SynergisticController<FnPair, FnAffine>,
    pub criticals: CriticalSet,
    pub certificate: CertificateSummary,
}

pub fn wells_pair(c: &CustomConfig) -> (FnPair, FnAffine) {
    let d = c.dim();
    let centres: Arc<Vec<DVector<f64>>> = Arc::new(
        c.centres
            .iter()
            .map(|v| DVector::from_column_slice(v))
            .collect(),
    );
    let t = c.target();
    let base = c.offsets[t];
    let offsets: Arc<Vec<f64>> = Arc::new(c.offsets.iter().map(|b| b - base).collect());
    let gain = c.gain;
    let idx = |q: i32| (q - 1) as usize;
    let (cv, ov, cg, ck, ca) = (
        centres.clone(),
        offsets.clone(),
        centres.clone(),
        centres.clone(),
        centres.clone(),
    );
    let target = t as i32 + 1;
    let pair = FnPair::new(
        ModeSet::range(c.centres.len()),
        Manifold::euclidean(d),
        move |q, z| (z - &cv[idx(q)]).norm_squared() + ov[idx(q)],
        move |q, z| (z - &cg[idx(q)]) * 2.0,
        move |q, z| {
            let off = if q == target { 0.0 } else { 1.0 };
            ((z - &ca[t]).norm_squared() + off).sqrt()
        },
    )
    .with_feedback(move |q, z| (z - &ck[idx(q)]) * -gain)
    .with_attractor_points(vec![ProductState::new(target, centres[t].clone())]);
    let plant = FnAffine::new(
        d,
        d,
        move |_, _| DVector::zeros(d),
        move |_, _| DMatrix::identity(d, d),
    );
    (pair, plant)
}

/// Samples the stall set of each well from a seeded grid, adds the states
/// over the attractor, and sets `c = β · min μ` over those outside `A`.
pub fn build_custom(cfg: &ScenarioConfig) -> Result<WellsLoop, CliError> {
    let c = cfg
        .custom
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [custom] table".into()))?;
    let (pair, plant) = wells_pair(c);
    let reach = c
        .centres
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut search = CriticalSearch::new(CriticalKind::PsiCandidate, c.certify_seeds);
    search.box_radius = reach + 2.0;
    search.seed = cfg.seed;
    let criticals = sample_critical_set(&pair, &plant, &search).merge(b_set_samples(&pair));
    let mut min_gap = f64::INFINITY;
    let mut witness = None;
    let mut count = 0;
    for s in &criticals.samples {
        let x = &s.point;
        if pair.attractor_distance(x.q, &x.z) <= ATTRACTOR_TOL {
            continue;
        }
        count += 1;
        let g = gap_value(&pair, x.q, &x.z);
        if g < min_gap {
            min_gap = g;
            witness = Some(x.clone());
        }
    }
    if !(min_gap > 0.0) || count == 0 {
        return Err(CliError::Check(format!(
            "certification failed: minimum gap {min_gap:e} at {}",
            witness_text(&witness)
        )));
    }
    let certificate = CertificateSummary {
        c: c.beta * min_gap,
        beta: c.beta,
        min_gap,
        seeds_per_mode: c.certify_seeds,
        sample_count: count,
        worst_witness: witness,
    };
    let controller = synthesize_controller(pair, GapFunction::constant(certificate.c), plant)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(WellsLoop {
        controller,
        criticals,
        certificate,
    })
}

impl HybridSystem for WellsLoop {
    fn manifold(&self) -> &Manifold {
        self.controller.manifold()
    }
    fn in_domain(&self, x: &ProductState) -> bool {
        self.controller.in_domain(x)
    }
    fn in_flow_set(&self, x: &ProductState) -> bool {
        self.controller.in_flow_set(x)
    }
    fn in_jump_set(&self, x: &ProductState) -> bool {
        self.controller.in_jump_set(x)
    }
    fn flow_map(&self, x: &ProductState) -> DVector<f64> {
        self.controller.flow_map(x)
    }
    fn jump_map(&self, x: &ProductState) -> Vec<ProductState> {
        self.controller.jump_map(x)
    }
    fn attractor_distance(&self, x: &ProductState) -> Option<f64> {
        self.controller.attractor_distance(x)
    }
}

impl ClosedLoop for WellsLoop {
    fn label(&self) -> &'static str {
        "custom"
    }
    fn lyapunov(&self, x: &ProductState) -> f64 {
        self.controller.value(x)
    }
    fn gap(&self, x: &ProductState) -> f64 {
        self.controller.gap_at(x)
    }
    fn threshold(&self, x: &ProductState) -> f64 {
        self.controller.threshold_at(x)
    }
    fn input(&self, x: &ProductState) -> DVector<f64> {
        self.controller.input(x)
    }
    /// `q` uniform, `z` uniform in the cube of half-width `radius`.
    fn sample_initial(&self, rng: &mut ChaCha8Rng, radius: f64) -> ProductState {
        let modes = self.controller.pair.modes().as_slice();
        let q = modes[rng.random_range(0..modes.len())];
        let d = self.manifold().dim();
        let z = DVector::from_fn(d, |_, _| rng.random_range(-radius..=radius));
        ProductState::new(q, z)
    }
}

pub enum Scenario {
    Backstep {
        family: Arc<PotentialFamily>,
        closed: BacksteppedPendulum,
    },
    Smoothed {
        family: Arc<PotentialFamily>,
        closed: Box<SmoothedPendulum>,
        delta: f64,
        epsilon: f64,
    },
    Custom(WellsLoop),
}

impl Scenario {
    /// Certifies first, then builds the controller.
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, CliError> {
        match cfg.scenario {
            ScenarioId::PendulumBackstep => {
                let (params, family) = certify_pendulum(cfg)?;
                let c = family.c().expect("certified");
                let closed = build_hybrid_pendulum_controller(family.clone(), &params, &xi(cfg), c)
                    .map_err(pendulum_error)?;
                Ok(Scenario::Backstep { family, closed })
            }
            ScenarioId::PendulumSmoothed => {
                let (params, family) = certify_pendulum(cfg)?;
                let p = &cfg.pendulum;
                let delta = p.smoothing_scale * family.c().expect("certified");
                let epsilon = p.epsilon.unwrap_or(0.5 * delta);
                let closed = build_smoothed_pendulum_controller(
                    family.clone(),
                    &params,
                    &xi(cfg),
                    delta,
                    epsilon,
                    p.logic_gain,
                )
                .map_err(pendulum_error)?;
                Ok(Scenario::Smoothed {
                    family,
                    closed: Box::new(closed),
                    delta,
                    epsilon,
                })
            }
            ScenarioId::Custom => Ok(Scenario::Custom(build_custom(cfg)?)),
        }
    }

    pub fn closed_loop(&self) -> &(dyn ClosedLoop + Sync) {
        match self {
            Scenario::Backstep { closed, .. } => closed,
            Scenario::Smoothed { closed, .. } => closed.as_ref(),
            Scenario::Custom(w) => w,
        }
    }

    pub fn certificate(&self) -> CertificateSummary {
        match self {
            Scenario::Backstep { family, .. } | Scenario::Smoothed { family, .. } => {
                family.certificate.as_ref().expect("certified").into()
            }
            Scenario::Custom(w) => w.certificate.clone(),
        }
    }

    pub fn constants(&self) -> Constants {
        match self {
            Scenario::Backstep { closed, .. } => Constants {
                delta: Some(closed.c),
                ..Default::default()
            },
            Scenario::Smoothed {
                closed,
                delta,
                epsilon,
                ..
            } => Constants {
                delta: Some(*delta),
                epsilon: Some(*epsilon),
                logic_gain: Some(closed.kp),
            },
            Scenario::Custom(w) => Constants {
                delta: Some(w.certificate.c),
                ..Default::default()
            },
        }
    }

    pub fn is_smoothed(&self) -> bool {
        matches!(self, Scenario::Smoothed { .. })
    }
}
