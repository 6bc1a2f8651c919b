use super::critical::{CriticalKind, CriticalSet};
use super::{
    gap_value, sample_domain, AffineControlSystem, GapFunction, SlffError, SlffPair, ATTRACTOR_TOL,
};
use crate::hybrid::{BlockKind, Mode, ProductState};
use crate::linalg::{random_in_ball, random_unit};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    Exceeds,
    TotallyExceeds,
    WeaklyExceeds,
    WeaklyTotallyExceeds,
}

impl GapMode {
    fn required(self, pure: bool) -> Vec<CriticalKind> {
        let mut k = vec![match self {
            GapMode::Exceeds | GapMode::TotallyExceeds => CriticalKind::PsiCandidate,
            GapMode::WeaklyExceeds | GapMode::WeaklyTotallyExceeds => CriticalKind::OmegaCandidate,
        }];
        if matches!(
            self,
            GapMode::TotallyExceeds | GapMode::WeaklyTotallyExceeds
        ) {
            k.push(CriticalKind::BSet);
        }
        if !pure {
            k.push(CriticalKind::BoundaryXy);
        }
        k
    }
}

/// `+inf` is written as the string `"inf"` since JSON has no infinities.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad extended real {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mode: GapMode,
    pub pass: bool,
    /// `min (μ_V - δ - ε)` over the required samples outside `A`; `+inf` if there are none.
    #[serde(with = "extended_real")]
    pub worst_margin: f64,
    pub worst_point: Option<ProductState>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Checks `μ_V > δ + ε` on every sample of the kinds `mode` quantifies over,
/// skipping samples within [`ATTRACTOR_TOL`] of `A`.
pub fn verify_gap<P: SlffPair + ?Sized>(
    pair: &P,
    gap: &GapFunction,
    criticals: &CriticalSet,
    mode: GapMode,
) -> Result<GapReport, SlffError> {
    let required = mode.required(pair.is_pure());
    let missing: Vec<CriticalKind> = required
        .iter()
        .copied()
        .filter(|k| !criticals.kinds_searched.contains(k))
        .collect();
    if !missing.is_empty() {
        return Err(SlffError::MissingKinds { missing });
    }
    let checked: Vec<&ProductState> = criticals
        .samples
        .iter()
        .filter(|s| required.contains(&s.kind))
        .map(|s| &s.point)
        .filter(|x| pair.attractor_distance(x.q, &x.z) > ATTRACTOR_TOL)
        .collect();
    let margins: Vec<f64> = checked
        .par_iter()
        .map(|x| gap_value(pair, x.q, &x.z) - gap.threshold(x.q, &x.z))
        .collect();
    let worst = margins
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &m)| match acc {
            Some((_, w)) if !(m < w) => acc,
            _ => Some((i, m)),
        });
    let (worst_margin, worst_point) = match worst {
        Some((i, m)) => (m, Some(checked[i].clone())),
        None => (f64::INFINITY, None),
    };
    Ok(GapReport {
        mode,
        pass: worst_margin > 0.0,
        worst_margin,
        worst_point,
        sample_count: checked.len(),
        seed: criticals.seed,
    })
}

/// One named check. `margin` is signed so that the check passes iff `margin >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub name: String,
    pub pass: bool,
    #[serde(with = "extended_real")]
    pub margin: f64,
    pub witness: Option<ProductState>,
    pub detail: String,
}

impl AuditItem {
    pub fn from_margin(
        name: &str,
        margin: f64,
        witness: Option<ProductState>,
        detail: String,
    ) -> Self {
        Self {
            name: name.to_string(),
            pass: margin >= 0.0,
            margin,
            witness,
            detail,
        }
    }

    fn from_worst(
        name: &str,
        tol: f64,
        worst: Option<(f64, ProductState)>,
        detail: String,
    ) -> Self {
        match worst {
            Some((v, x)) => Self::from_margin(name, tol - v, Some(x), detail),
            None => Self::from_margin(name, f64::INFINITY, None, detail),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub items: Vec<AuditItem>,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn item(&self, name: &str) -> Option<&AuditItem> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditItem> + '_ {
        self.items.iter().filter(|i| !i.pass)
    }
}

/// Largest `value(x)` over `xs` with its argument; ties keep the first.
fn worst_of<T: Sync>(xs: &[T], value: impl Fn(&T) -> f64 + Sync) -> Option<(f64, &T)> {
    let vals: Vec<f64> = xs.par_iter().map(&value).collect();
    vals.iter()
        .zip(xs)
        .fold(None, |acc: Option<(f64, &T)>, (&v, x)| match acc {
            Some((w, _)) if !(v > w) && !v.is_nan() => acc,
            _ => Some((v, x)),
        })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub box_radius: f64,
    pub rate_tol: f64,
    pub attractor_tol: f64,
    pub ray_count: usize,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            seed: 42,
            box_radius: 5.0,
            rate_tol: 1e-10,
            attractor_tol: 1e-9,
            ray_count: 32,
        }
    }
}

/// Sampled candidate conditions: `V ≥ 0`, `V = 0` exactly on `A`,
/// `⟨∇V, f(κ)⟩ ≤ tol` on `Y`, and growth of `V` along rays in the unbounded
/// coordinates (a heuristic for compact sublevel sets, not a proof).
pub fn candidate_check<P, F>(pair: &P, plant: &F, opts: &CandidateOptions) -> AuditReport
where
    P: SlffPair + ?Sized,
    F: AffineControlSystem + ?Sized,
{
    let m = pair.manifold();
    let mut xs = sample_domain(m, pair.modes(), opts.n_samples, opts.seed, opts.box_radius);
    xs.extend(pair.attractor_points());
    let mut items = Vec::new();

    let neg = worst_of(&xs, |x| -pair.value(x.q, &x.z));
    items.push(AuditItem::from_worst(
        "nonnegative",
        1e-12,
        neg.map(|(v, x)| (v, x.clone())),
        format!("{} samples", xs.len()),
    ));

    // Inside A, V must vanish; outside, V must be positive.
    let defect = |x: &ProductState| {
        let v = pair.value(x.q, &x.z);
        if pair.attractor_distance(x.q, &x.z) <= opts.attractor_tol {
            v.abs() - 1e-12
        } else if v > 0.0 {
            -v
        } else {
            1.0
        }
    };
    let pd = worst_of(&xs, defect);
    items.push(AuditItem::from_worst(
        "positive_definite",
        0.0,
        pd.map(|(v, x)| (v, x.clone())),
        format!("attractor tolerance {:e}", opts.attractor_tol),
    ));

    let in_y: Vec<ProductState> = xs
        .iter()
        .filter(|x| pair.in_flow_effective(x.q, &x.z))
        .cloned()
        .collect();
    let rate = worst_of(&in_y, |x| super::lyapunov_rate(pair, plant, x.q, &x.z));
    items.push(AuditItem::from_worst(
        "lyapunov_rate",
        opts.rate_tol,
        rate.map(|(v, x)| (v, x.clone())),
        format!("{} samples in Y", in_y.len()),
    ));

    let free: Vec<(usize, usize)> = m
        .layout()
        .filter(|(_, b)| b.kind == BlockKind::Unconstrained)
        .map(|(o, b)| (o, b.dim))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let mut growth_fail: Option<ProductState> = None;
    let mut rays = 0;
    if !free.is_empty() {
        for x in xs.iter().take(opts.ray_count) {
            for &(off, dim) in &free {
                let dir = random_unit(&mut rng, dim);
                let at = |t: f64| {
                    let mut z = x.z.clone();
                    z.rows_mut(off, dim).axpy(t, &dir, 1.0);
                    pair.value(x.q, &z)
                };
                let vals = [at(0.0), at(10.0), at(100.0), at(1000.0)];
                rays += 1;
                if !(vals.windows(2).skip(1).all(|w| w[1] > w[0]) && vals[3] > vals[0])
                    && growth_fail.is_none()
                {
                    growth_fail = Some(x.clone());
                }
            }
        }
    }
    items.push(AuditItem::from_margin(
        "radial_growth",
        if growth_fail.is_some() { -1.0 } else { 0.0 },
        growth_fail,
        format!("{rays} rays through unbounded blocks"),
    ));
    AuditReport { items }
}

/// Compares `∇V` with central differences (step `1e-6`) at the given states.
/// The error is relative to `max(|∇V|, 1e-2)`.
pub fn gradient_audit<P: SlffPair + ?Sized>(
    pair: &P,
    states: &[ProductState],
    rel_tol: f64,
) -> AuditItem {
    let err = |x: &ProductState| {
        let g = pair.gradient(x.q, &x.z);
        let mut fd = DVector::zeros(x.z.len());
        for i in 0..x.z.len() {
            let h = 1e-6 * x.z[i].abs().max(1.0);
            let mut zp = x.z.clone();
            let mut zm = x.z.clone();
            zp[i] += h;
            zm[i] -= h;
            fd[i] = (pair.value(x.q, &zp) - pair.value(x.q, &zm)) / (2.0 * h);
        }
        (g - &fd).norm() / fd.norm().max(1e-2)
    };
    let worst = worst_of(states, err);
    AuditItem::from_worst(
        "gradient",
        rel_tol,
        worst.map(|(v, x)| (v, x.clone())),
        format!("{} states, relative tolerance {rel_tol:e}", states.len()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadyMadeType {
    I,
    II,
}

#[derive(Clone, Debug)]
pub struct ReadyMadeOptions {
    pub ty: ReadyMadeType,
    /// States `(q, z)` at which the feedback-jump inequality is probed.
    pub states: Vec<ProductState>,
    pub omega_probe_count: usize,
    /// Radius of the ball the type II `ω` probes are drawn from.
    pub omega_radius: f64,
    pub seed: u64,
}

/// Ready-made audit:
/// - `feedback_jump`: `σ(ω - κ(s, z)) - σ(ω - κ(q, z)) ≤ ϱ(q, z)` for every
///   state, mode `s`, and `ω = κ(q, z)` (type I) or `ω` in a ball (type II, with
///   random probes refined by projected gradient ascent);
/// - `gap_with_jump_cost`: `μ_V > δ + ε + ϱ` on `(Ω \ A) ∪ cl(X \ Y)` samples;
/// - `boundary_avoids_attractor`: no `cl(X \ Y)` sample lies in `A`.
pub fn ready_made_check<P: SlffPair + ?Sized>(
    pair: &P,
    sigma: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    varrho: &(dyn Fn(Mode, &DVector<f64>) -> f64 + Sync),
    gap: &GapFunction,
    criticals: &CriticalSet,
    opts: &ReadyMadeOptions,
) -> AuditReport {
    let modes: Vec<Mode> = pair.modes().iter().collect();
    let excess = |x: &ProductState, s: Mode, w: &DVector<f64>| {
        sigma(&(w - pair.feedback(s, &x.z)))
            - sigma(&(w - pair.feedback(x.q, &x.z)))
            - varrho(x.q, &x.z)
    };

    let per_state: Vec<(usize, f64)> = opts
        .states
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let k = pair.feedback(x.q, &x.z);
            let worst = match opts.ty {
                ReadyMadeType::I => modes
                    .iter()
                    .map(|&s| excess(x, s, &k))
                    .fold(f64::NEG_INFINITY, f64::max),
                ReadyMadeType::II => {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
                    modes
                        .iter()
                        .map(|&s| {
                            let f = |w: &DVector<f64>| excess(x, s, w);
                            adversarial_max(
                                &f,
                                k.len(),
                                opts.omega_radius,
                                opts.omega_probe_count,
                                &mut rng,
                            )
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            };
            (i, worst)
        })
        .collect();
    let worst = per_state
        .iter()
        .fold(None::<(usize, f64)>, |acc, &(i, v)| match acc {
            Some((_, w)) if !(v > w) => acc,
            _ => Some((i, v)),
        });
    let mut items = vec![AuditItem::from_worst(
        "feedback_jump",
        0.0,
        worst.map(|(i, v)| (v, opts.states[i].clone())),
        match opts.ty {
            ReadyMadeType::I => format!("type I at {} states", opts.states.len()),
            ReadyMadeType::II => format!(
                "type II at {} states, {} probes per mode in the ball of radius {}",
                opts.states.len(),
                opts.omega_probe_count,
                opts.omega_radius
            ),
        },
    )];

    let stall: Vec<&ProductState> = criticals
        .samples
        .iter()
        .filter(|s| match s.kind {
            CriticalKind::OmegaCandidate | CriticalKind::PsiCandidate => {
                pair.attractor_distance(s.point.q, &s.point.z) > ATTRACTOR_TOL
            }
            CriticalKind::BoundaryXy => true,
            CriticalKind::BSet => false,
        })
        .map(|s| &s.point)
        .collect();
    let gap_worst = stall
        .iter()
        .map(|x| {
            let m = gap_value(pair, x.q, &x.z) - gap.threshold(x.q, &x.z) - varrho(x.q, &x.z);
            (m, (*x).clone())
        })
        .fold(None::<(f64, ProductState)>, |acc, (m, x)| match acc {
            Some((w, _)) if !(m < w) => acc,
            _ => Some((m, x)),
        });
    items.push(match gap_worst {
        // Strict inequality: a zero margin fails.
        Some((m, x)) => AuditItem {
            pass: m > 0.0,
            ..AuditItem::from_margin(
                "gap_with_jump_cost",
                m,
                Some(x),
                format!("{} stall samples", stall.len()),
            )
        },
        None => AuditItem::from_margin(
            "gap_with_jump_cost",
            f64::INFINITY,
            None,
            "no stall samples".into(),
        ),
    });

    let touching = criticals
        .of_kind(CriticalKind::BoundaryXy)
        .find(|s| pair.attractor_distance(s.point.q, &s.point.z) <= ATTRACTOR_TOL);
    items.push(AuditItem::from_margin(
        "boundary_avoids_attractor",
        if touching.is_some() { -1.0 } else { 0.0 },
        touching.map(|s| s.point.clone()),
        String::new(),
    ));
    AuditReport { items }
}

/// Maximum of `f` over the ball of radius `r` in `R^m`: random probes, then
/// projected gradient ascent (central differences) from the best one.
fn adversarial_max(
    f: &dyn Fn(&DVector<f64>) -> f64,
    m: usize,
    r: f64,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let project = |w: DVector<f64>| {
        let n = w.norm();
        if n > r {
            w * (r / n)
        } else {
            w
        }
    };
    let mut best = DVector::zeros(m);
    let mut fbest = f(&best);
    for _ in 0..probes {
        let w = random_in_ball(rng, m, r);
        let fw = f(&w);
        if fw > fbest {
            best = w;
            fbest = fw;
        }
    }
    let mut step = 0.1 * r;
    for _ in 0..60 {
        let h = 1e-6 * r.max(1.0);
        let grad = DVector::from_fn(m, |i, _| {
            let mut a = best.clone();
            let mut b = best.clone();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        });
        if grad.norm() == 0.0 {
            break;
        }
        let cand = project(&best + grad.normalize() * step);
        let fc = f(&cand);
        if fc > fbest {
            best = cand;
            fbest = fc;
            step *= 1.5;
        } else {
            step *= 0.5;
            if step < 1e-9 * r {
                break;
            }
        }
    }
    fbest
}
