use crate::linalg::max_eigenvalue;
use crate::slff::Rho;
use nalgebra::DMatrix;
use serde::Serialize;

// Quintic on t = s - 1 in [0, 1] matching (value, slope, curvature) of s at
// s = 1 and of √2·√s at s = 2, i.e. (1, 1, 0) and (2, 1/2, -1/8).
const BRIDGE: [f64; 6] = [1.0, 1.0, 0.0, 1.9375, -3.375, 1.4375];

fn base(s: f64) -> f64 {
    if s <= 1.0 {
        s
    } else if s >= 2.0 {
        (2.0 * s).sqrt()
    } else {
        let t = s - 1.0;
        BRIDGE.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

fn base_prime(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        (0.5 / s).sqrt()
    } else {
        let t = s - 1.0;
        (1..6)
            .rev()
            .fold(0.0, |acc, k| acc * t + k as f64 * BRIDGE[k])
    }
}

/// `ρ = c·ρ̃` where `ρ̃(s) = s` on `[0, 1]`, `√2·√s` on `[2, ∞)` and a quintic
/// bridge in between. `c` makes `v ↦ ρ(vᵀΓv)` globally Lipschitz with
/// constant at most `lipschitz`.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzRho {
    pub c: f64,
    pub lipschitz: f64,
    /// Probed `sup_s 2 ρ̃'(s) √s`.
    pub sup_slope: f64,
    pub lambda_max: f64,
}

impl LipschitzRho {
    pub fn base(s: f64) -> f64 {
        base(s)
    }

    pub fn base_prime(s: f64) -> f64 {
        base_prime(s)
    }
}

impl Rho for LipschitzRho {
    fn value(&self, s: f64) -> f64 {
        self.c * base(s)
    }
    fn derivative(&self, s: f64) -> f64 {
        self.c * base_prime(s)
    }
    fn describe(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| "lipschitz".into())
    }
}

/// `|∇_v ρ̃(vᵀΓv)| = 2ρ̃'(σ)|Γv| ≤ 2ρ̃'(σ)√σ·√λ_max(Γ)`, so `c` is `L` over the
/// probed supremum of the right side (shrunk by `1e-3` to cover the probe gaps).
pub fn build_lipschitz_rho(gamma: &DMatrix<f64>, lipschitz: f64) -> LipschitzRho {
    let lambda_max = max_eigenvalue(gamma);
    let sup_slope = (0..=40_000)
        .map(|i| {
            let s = 3.0 * i as f64 / 40_000.0;
            2.0 * base_prime(s) * s.sqrt()
        })
        .fold(0.0, f64::max);
    let c = lipschitz / (sup_slope * lambda_max.sqrt()) * (1.0 - 1e-3);
    LipschitzRho {
        c,
        lipschitz,
        sup_slope,
        lambda_max,
    }
}
