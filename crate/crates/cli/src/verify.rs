//! The audit suite behind `slff verify`.

use crate::config::{ScenarioConfig, ScenarioId};
use crate::report::Check;
use crate::scenario::{
    build_custom, pendulum_error, pendulum_params, wells_pair, xi, CertificateSummary, Constants,
};
use crate::CliError;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slff_core::linalg::random_in_ball;
use slff_core::pendulum::{
    build_hybrid_pendulum_controller, build_smoothed_pendulum_controller, certify_synergy_constant,
    pendulum_damping_unchecked, potential_family_build, KinematicPair, PendulumError,
    PendulumPlant,
};
use slff_core::slff::{
    candidate_check, gradient_audit, ready_made_check, sample_domain, verify_gap, CandidateOptions,
    GapFunction, GapMode, ReadyMadeOptions, ReadyMadeType, SlffPair,
};
use std::sync::Arc;

const IDENTITY_TOL: f64 = 1e-9;

pub struct SuiteResult {
    pub certification: Option<CertificateSummary>,
    pub constants: Constants,
    pub checks: Vec<Check>,
}

fn identity_check<P: SlffPair + ?Sized>(
    name: &str,
    pair: &P,
    defect: impl Fn(i32, &DVector<f64>) -> f64 + Sync,
    n: usize,
    seed: u64,
) -> Check {
    let states = sample_domain(pair.manifold(), pair.modes(), n, seed, 5.0);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for x in states {
        let d = defect(x.q, &x.z);
        if d > worst {
            worst = d;
            witness = Some(x);
        }
    }
    Check {
        witness,
        ..Check::at_most(
            name,
            worst,
            IDENTITY_TOL,
            format!("max of V̇ minus its prescribed value at {n} states"),
        )
    }
}

pub fn run_suite(cfg: &ScenarioConfig) -> Result<SuiteResult, CliError> {
    match cfg.scenario {
        ScenarioId::Custom => custom_suite(cfg),
        _ => pendulum_suite(cfg),
    }
}

fn custom_suite(cfg: &ScenarioConfig) -> Result<SuiteResult, CliError> {
    let custom = cfg.custom.as_ref().expect("validated");
    let (pair, plant) = wells_pair(custom);
    let mut checks = Vec::new();
    let states = sample_domain(pair.manifold(), pair.modes(), 1000, cfg.seed, 5.0);
    checks.push(Check::from_audit("", &gradient_audit(&pair, &states, 1e-6)));
    let cand = candidate_check(
        &pair,
        &plant,
        &CandidateOptions {
            seed: cfg.seed,
            ..Default::default()
        },
    );
    checks.extend(
        cand.items
            .iter()
            .map(|a| Check::from_audit("candidate.", a)),
    );
    let (certification, constants) = match build_custom(cfg) {
        Ok(w) => {
            let gap = GapFunction::constant(w.certificate.c);
            let report = verify_gap(&pair, &gap, &w.criticals, GapMode::TotallyExceeds)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            checks.push(Check {
                witness: report.worst_point.clone(),
                ..Check::at_most(
                    "gap",
                    -report.worst_margin,
                    0.0,
                    format!("μ_V - c over {} stall samples", report.sample_count),
                )
            });
            let constants = Constants {
                delta: Some(w.certificate.c),
                ..Default::default()
            };
            (Some(w.certificate), constants)
        }
        Err(CliError::Check(msg)) => {
            checks.push(Check::flag("certification", false, msg));
            (None, Constants::default())
        }
        Err(e) => return Err(e),
    };
    Ok(SuiteResult {
        certification,
        constants,
        checks,
    })
}

fn pendulum_suite(cfg: &ScenarioConfig) -> Result<SuiteResult, CliError> {
    let p = &cfg.pendulum;
    let params = pendulum_params(cfg);
    let xi = xi(cfg);
    let mut family =
        potential_family_build(&params, p.modes, p.warp_gain).map_err(pendulum_error)?;
    let kin = KinematicPair::new(Arc::new(family.clone()));
    let mut checks = Vec::new();

    let sphere = sample_domain(kin.manifold(), kin.modes(), 1000, cfg.seed, 1.0);
    checks.push(Check::from_audit("", &gradient_audit(&kin, &sphere, 1e-5)));

    let damping = pendulum_damping_unchecked(&params, &xi).map_err(pendulum_error)?;
    let damping_audit = damping.audit(10_000, cfg.seed, 10.0);
    checks.push(Check::from_audit("", &damping_audit));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xi_d = DMatrix::from_fn(3, 3, |i, j| xi[(i, j)]);
    let identity = (0..10_000)
        .map(|_| {
            let v = random_in_ball(&mut rng, 3, 10.0);
            (damping.cross_term(&v) + v.dot(&(&xi_d * &v))).abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "damping_identity",
        identity,
        1e-10,
        "|vᵀΓΘ(v) + Θ(v)ᵀΓv + vᵀΞv| at 10000 random v".into(),
    ));

    let cert = match certify_synergy_constant(&family, p.certify_seeds, p.beta) {
        Ok(c) => c,
        Err(PendulumError::NotSynergistic { min_gap, witness }) => {
            checks.push(Check {
                witness,
                ..Check::at_most(
                    "certification",
                    -min_gap,
                    0.0,
                    "smallest gap over the sampled stall set".into(),
                )
            });
            return Ok(SuiteResult {
                certification: None,
                constants: Constants::default(),
                checks,
            });
        }
        Err(e) => return Err(pendulum_error(e)),
    };
    let c = cert.c;
    let summary = CertificateSummary::from(&cert);
    let criticals = cert.criticals.clone();
    family.certificate = Some(cert);
    let family = Arc::new(family);
    let kin = KinematicPair::new(family.clone());

    let gap = GapFunction::constant(c);
    let report = verify_gap(&kin, &gap, &criticals, GapMode::WeaklyTotallyExceeds)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    checks.push(Check {
        witness: report.worst_point.clone(),
        ..Check::at_most(
            "gap",
            -report.worst_margin,
            0.0,
            format!("μ_V - c over {} stall samples", report.sample_count),
        )
    });

    // κ₀ ≡ 0, so type I holds with ϱ ≡ 0 and the gap must cover c alone.
    let half_j = DMatrix::from_fn(3, 3, |i, j| 0.5 * params.inertia[(i, j)]);
    let sigma = move |v: &DVector<f64>| v.dot(&(&half_j * v));
    let ready = ready_made_check(
        &kin,
        &sigma,
        &|_, _| 0.0,
        &gap,
        &criticals,
        &ReadyMadeOptions {
            ty: ReadyMadeType::I,
            states: sample_domain(kin.manifold(), kin.modes(), 200, cfg.seed, 1.0),
            omega_probe_count: 0,
            omega_radius: 0.0,
            seed: cfg.seed,
        },
    );
    checks.extend(
        ready
            .items
            .iter()
            .map(|a| Check::from_audit("ready_made.", a)),
    );

    let mut constants = Constants {
        delta: Some(c),
        ..Default::default()
    };
    if !damping_audit.pass {
        return Ok(SuiteResult {
            certification: Some(summary),
            constants,
            checks,
        });
    }
    let bs = build_hybrid_pendulum_controller(family.clone(), &params, &xi, c)
        .map_err(pendulum_error)?;
    let plant = PendulumPlant::new(params.clone()).map_err(pendulum_error)?;
    let cand = candidate_check(
        bs.pair.as_ref(),
        &plant,
        &CandidateOptions {
            n_samples: 2000,
            seed: cfg.seed,
            ..Default::default()
        },
    );
    checks.extend(
        cand.items
            .iter()
            .map(|a| Check::from_audit("candidate.", a)),
    );
    let inner = &bs.pair.inner;
    checks.push(identity_check(
        "backstepping_identity",
        inner,
        |q, z| inner.derivative_defect(q, z),
        10_000,
        cfg.seed,
    ));

    if cfg.scenario == ScenarioId::PendulumSmoothed {
        let delta = p.smoothing_scale * c;
        let epsilon = p.epsilon.unwrap_or(0.5 * delta);
        constants = Constants {
            delta: Some(delta),
            epsilon: Some(epsilon),
            logic_gain: Some(p.logic_gain),
        };
        match build_smoothed_pendulum_controller(family, &params, &xi, delta, epsilon, p.logic_gain)
        {
            Ok(sm) => {
                checks.push(Check::flag(
                    "recertification",
                    true,
                    format!(
                        "gap exceeds δ + ε = {:.6} at every stall sample",
                        delta + epsilon
                    ),
                ));
                let logic = &sm.logic.pair;
                checks.push(Check::from_audit(
                    "logic.",
                    &logic.damping.audit(10_000, cfg.seed, 10.0),
                ));
                checks.push(identity_check(
                    "logic_identity",
                    logic.as_ref(),
                    |q, z| logic.derivative_defect(q, z),
                    10_000,
                    cfg.seed,
                ));
            }
            Err(e @ PendulumError::Recertification { .. }) => {
                checks.push(Check::flag("recertification", false, e.to_string()));
            }
            Err(e) => return Err(pendulum_error(e)),
        }
    }
    Ok(SuiteResult {
        certification: Some(summary),
        constants,
        checks,
    })
}
