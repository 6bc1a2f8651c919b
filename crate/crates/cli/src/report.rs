//! JSON reports. They hold no timestamps or timings, so a fixed config and
//! seed give byte-identical reports.

use crate::config::ScenarioId;
use crate::scenario::{CertificateSummary, Constants};
use serde::Serialize;
use slff_core::hybrid::{ProductState, Termination};
use slff_core::pendulum::{CampaignOptions, CampaignReport, RunRecord};
use slff_core::slff::AuditItem;

/// One named check; it passes iff `margin >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<ProductState>,
}

impl Check {
    /// `value <= limit`.
    pub fn at_most(name: &str, value: f64, limit: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            pass: value <= limit,
            margin: limit - value,
            detail,
            witness: None,
        }
    }

    pub fn flag(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            margin: if pass { 0.0 } else { -1.0 },
            detail,
            witness: None,
        }
    }

    pub fn from_audit(prefix: &str, a: &AuditItem) -> Self {
        Self {
            name: format!("{prefix}{}", a.name),
            pass: a.pass,
            margin: a.margin,
            detail: a.detail.clone(),
            witness: a.witness.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub index: usize,
    pub termination: String,
    pub jumps: usize,
    pub duration: f64,
    pub final_distance: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub flow_violations: usize,
    pub converged: bool,
}

impl RunSummary {
    pub fn new(r: &RunRecord, opts: &CampaignOptions) -> Self {
        Self {
            index: r.index,
            termination: match &r.termination {
                Termination::IntegrationFailure(msg) => format!("integration failure: {msg}"),
                t => format!("{t:?}"),
            },
            jumps: r.jumps,
            duration: r.duration,
            final_distance: r.final_distance,
            min_v: r.min_lyapunov,
            max_v: r.max_lyapunov,
            flow_violations: r.flow_violations,
            converged: r.converged(opts),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub scenario: ScenarioId,
    pub seed: u64,
    pub config_sha256: String,
    pub certification: Option<CertificateSummary>,
    pub constants: Constants,
    pub runs: Vec<RunSummary>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Campaign-level checks: flow decrease, jump decrease with exact argmin,
/// convergence, Zeno trips and sphere drift, plus input continuity across
/// jumps for smoothed loops.
pub fn campaign_checks(r: &CampaignReport, smoothed: bool) -> Vec<Check> {
    let n = r.runs.len();
    let mut checks = vec![
        Check::at_most(
            "flow_decrease",
            r.worst_flow_violation_rate(),
            1e-6,
            format!(
                "worst increase rate of V per simulated second; {} flow steps above tolerance",
                r.flow_violations()
            ),
        ),
        match r.worst_jump_margin() {
            Some(m) => Check {
                pass: m >= -1e-8 && r.argmin_exact(),
                ..Check::at_most(
                    "jump_decrease",
                    -m,
                    1e-8,
                    format!(
                        "{} jumps; worst drop minus threshold {m:.3e}; post-jump gap zero: {}",
                        r.total_jumps(),
                        r.argmin_exact()
                    ),
                )
            },
            None => Check::flag("jump_decrease", true, "no jumps".into()),
        },
        Check::flag(
            "convergence",
            r.converged_count() == n,
            format!(
                "{}/{n} runs within {} of the attractor with at most {} jumps",
                r.converged_count(),
                r.options.target_distance,
                r.options.max_jumps
            ),
        ),
        Check::at_most(
            "zeno_guard",
            r.zeno_trips() as f64,
            0.0,
            format!("{} trips", r.zeno_trips()),
        ),
        Check::at_most(
            "sphere_drift",
            r.max_sphere_drift(),
            1e-9,
            "max | |z| - 1 |".into(),
        ),
    ];
    if smoothed {
        checks.push(Check::at_most(
            "input_continuity",
            r.max_input_jump(),
            1e-12,
            format!("max |Δτ| over {} jumps", r.total_jumps()),
        ));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_most_passes_on_the_limit() {
        let c = Check::at_most("x", 1e-6, 1e-6, String::new());
        assert!(c.pass);
        assert_eq!(c.margin, 0.0);
        let c = Check::at_most("x", 2.0, 1.0, String::new());
        assert!(!c.pass);
        assert_eq!(c.margin, -1.0);
    }

    #[test]
    fn nan_values_fail() {
        assert!(!Check::at_most("x", f64::NAN, 1.0, String::new()).pass);
    }

    #[test]
    fn witness_is_omitted_when_absent() {
        let text = serde_json::to_string(&Check::flag("f", true, "ok".into())).unwrap();
        assert!(!text.contains("witness"));
    }
}
