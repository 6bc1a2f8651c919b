//! Numerical stand-ins for the stall sets of an SLFF pair.
//!
//! Seeds come from a deterministic grid (a Fibonacci mesh when the state is a
//! single 2-sphere, a Halton sequence otherwise). Seeds that are local minima
//! of the residual among their nearest neighbours are refined by
//! Levenberg–Marquardt in local charts, kept if the residual falls below the
//! tolerance, and deduplicated.
//!
//! The residual of `x` stacks `sqrt|⟨∇V, f(κ)⟩|` at `x` and at a few points of
//! the closed-loop trajectory from `x`, so that states where the rate vanishes
//! only instantaneously are rejected (a cheap weak-invariance filter). The
//! `Omega` kind adds the components of `ψᵀ∇V` at the same points.

use super::{AffineControlSystem, SlffPair};
use crate::hybrid::{BlockKind, Manifold, Mode, ModeSet, ProductState};
use crate::linalg::{fibonacci_sphere, radical_inverse, random_unit, PRIMES};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    PsiCandidate,
    OmegaCandidate,
    BoundaryXy,
    BSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSample {
    pub point: ProductState,
    pub residual: f64,
    pub kind: CriticalKind,
}

/// Samples together with the kinds that were searched for, so that a search
/// that found nothing still counts as performed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    pub samples: Vec<CriticalSample>,
    pub kinds_searched: BTreeSet<CriticalKind>,
    pub seed: u64,
}

impl CriticalSet {
    /// Union of the samples and searched kinds; keeps the seed of `self`.
    pub fn merge(mut self, other: CriticalSet) -> Self {
        self.samples.extend(other.samples);
        self.kinds_searched.extend(other.kinds_searched);
        self
    }

    pub fn of_kind(&self, kind: CriticalKind) -> impl Iterator<Item = &CriticalSample> + '_ {
        self.samples.iter().filter(move |s| s.kind == kind)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalSearch {
    pub kind: CriticalKind,
    pub seeds_per_mode: usize,
    /// Half-width of the seeding box for unconstrained blocks.
    pub box_radius: f64,
    pub refine_tol: f64,
    pub dedup_tol: f64,
    pub max_iter: usize,
    /// Number of trajectory points after the initial one in the invariance probe.
    pub probe_steps: usize,
    pub probe_dt: f64,
    pub probe_substep: f64,
    pub neighbors: usize,
    pub max_refine: Option<usize>,
    /// Seeds the fallback draws for spheres other than the 2-sphere.
    pub seed: u64,
}

impl CriticalSearch {
    pub fn new(kind: CriticalKind, seeds_per_mode: usize) -> Self {
        Self {
            kind,
            seeds_per_mode,
            box_radius: 2.0,
            refine_tol: 1e-8,
            dedup_tol: 1e-4,
            max_iter: 80,
            probe_steps: 4,
            probe_dt: 0.05,
            probe_substep: 0.01,
            neighbors: 8,
            max_refine: None,
            seed: 42,
        }
    }

    pub fn without_probe(mut self) -> Self {
        self.probe_steps = 0;
        self
    }
}

/// `f(q, z, κ(q, z))`.
pub fn closed_loop_rhs<P, F>(pair: &P, plant: &F, q: Mode, z: &DVector<f64>) -> DVector<f64>
where
    P: SlffPair + ?Sized,
    F: AffineControlSystem + ?Sized,
{
    plant.flow(q, z, &pair.feedback(q, z))
}

fn probe_rk4<P, F>(
    pair: &P,
    plant: &F,
    m: &Manifold,
    q: Mode,
    z: &DVector<f64>,
    h: f64,
) -> Option<DVector<f64>>
where
    P: SlffPair + ?Sized,
    F: AffineControlSystem + ?Sized,
{
    let f = |y: &DVector<f64>| closed_loop_rhs(pair, plant, q, y);
    let k1 = f(z);
    let k2 = f(&(z + &k1 * (0.5 * h)));
    let k3 = f(&(z + &k2 * (0.5 * h)));
    let k4 = f(&(z + &k3 * h));
    let mut y = z + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    m.renormalize(&mut y).ok()?;
    Some(y)
}

fn residual<P, F>(
    pair: &P,
    plant: &F,
    search: &CriticalSearch,
    q: Mode,
    z: &DVector<f64>,
) -> DVector<f64>
where
    P: SlffPair + ?Sized,
    F: AffineControlSystem + ?Sized,
{
    let m = pair.manifold();
    let omega = search.kind == CriticalKind::OmegaCandidate;
    let per_point = 1 + if omega { plant.input_dim() } else { 0 };
    let mut r = DVector::from_element(per_point * (search.probe_steps + 1), f64::INFINITY);
    let mut y = z.clone();
    let substeps = ((search.probe_dt / search.probe_substep).ceil() as usize).max(1);
    let h = search.probe_dt / substeps as f64;
    for k in 0..=search.probe_steps {
        let g = pair.gradient(q, &y);
        r[k * per_point] = g.dot(&closed_loop_rhs(pair, plant, q, &y)).abs().sqrt();
        if omega {
            let w = plant.input_matrix(q, &y).transpose() * &g;
            r.rows_mut(k * per_point + 1, w.len()).copy_from(&w);
        }
        if k == search.probe_steps {
            break;
        }
        for _ in 0..substeps {
            match probe_rk4(pair, plant, m, q, &y, h) {
                Some(next) => y = next,
                None => return r,
            }
        }
    }
    r.iter_mut().for_each(|v| {
        if !v.is_finite() {
            *v = f64::INFINITY;
        }
    });
    r
}

/// Orthonormal basis (columns) of the tangent space of the unit sphere at `u`.
fn sphere_tangent(u: &DVector<f64>) -> DMatrix<f64> {
    let k = u.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k - 1);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()));
    for &i in order.iter().take(k - 1) {
        let mut v = DVector::zeros(k);
        v[i] = 1.0;
        v -= u * u.dot(&v);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        basis.push(v.normalize());
    }
    DMatrix::from_columns(&basis)
}

/// Local chart: `d` in intrinsic coordinates mapped to a state near `x`.
struct Chart {
    x: DVector<f64>,
    blocks: Vec<(usize, usize, Option<DMatrix<f64>>)>,
    dim: usize,
}

impl Chart {
    fn at(m: &Manifold, x: &DVector<f64>) -> Self {
        let blocks = m
            .layout()
            .map(|(off, b)| match b.kind {
                BlockKind::Unconstrained => (off, b.dim, None),
                BlockKind::UnitSphere => (
                    off,
                    b.dim,
                    Some(sphere_tangent(&x.rows(off, b.dim).into_owned())),
                ),
            })
            .collect();
        Self {
            x: x.clone(),
            blocks,
            dim: m.intrinsic_dim(),
        }
    }

    fn map(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut y = self.x.clone();
        let mut j = 0;
        for (off, dim, basis) in &self.blocks {
            match basis {
                None => {
                    for i in 0..*dim {
                        y[off + i] += d[j + i];
                    }
                    j += dim;
                }
                Some(b) => {
                    let step = b * d.rows(j, dim - 1);
                    let mut blk = y.rows(*off, *dim) + step;
                    blk.normalize_mut();
                    y.rows_mut(*off, *dim).copy_from(&blk);
                    j += dim - 1;
                }
            }
        }
        y
    }
}

/// Levenberg–Marquardt on `r` over the manifold, with a forward-difference
/// Jacobian whose step shrinks with the residual. Returns the best point found
/// and its residual norm.
pub(crate) fn refine(
    m: &Manifold,
    r: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> (DVector<f64>, f64) {
    let mut x = x0.clone();
    let mut rx = r(&x);
    let mut nr = rx.norm();
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        if !(nr > tol) {
            break;
        }
        let chart = Chart::at(m, &x);
        let n = chart.dim;
        let h = (1e-2 * nr).clamp(1e-11, 1e-6);
        let mut jac = DMatrix::zeros(rx.len(), n);
        for i in 0..n {
            let mut d = DVector::zeros(n);
            d[i] = h;
            let col = (r(&chart.map(&d)) - &rx) / h;
            jac.set_column(i, &col);
        }
        if jac.iter().any(|v| !v.is_finite()) {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &rx;
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 4.0;
                continue;
            };
            let y = chart.map(&step);
            let ry = r(&y);
            let ny = ry.norm();
            if ny < nr {
                x = y;
                rx = ry;
                nr = ny;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (x, nr)
}

/// Deterministic seeds covering the manifold: Fibonacci points for a lone
/// 2-sphere, otherwise a Halton sequence mapped onto each block (sphere blocks
/// of other dimensions fall back to seeded uniform draws).
pub fn grid_seeds(m: &Manifold, n: usize, box_radius: f64, seed: u64) -> Vec<DVector<f64>> {
    let blocks = m.blocks();
    if blocks.len() == 1 && blocks[0].kind == BlockKind::UnitSphere && blocks[0].dim == 3 {
        return fibonacci_sphere(n)
            .into_iter()
            .map(|p| DVector::from_column_slice(p.as_slice()))
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|i| {
            let mut dim = 0;
            let mut halton = || {
                let u = radical_inverse(i, PRIMES[dim % PRIMES.len()]);
                dim += 1;
                u
            };
            let mut x = DVector::zeros(m.dim());
            for (off, b) in m.layout() {
                match b.kind {
                    BlockKind::Unconstrained => {
                        for k in 0..b.dim {
                            x[off + k] = box_radius * (2.0 * halton() - 1.0);
                        }
                    }
                    BlockKind::UnitSphere if b.dim == 3 => {
                        let y = 1.0 - 2.0 * halton();
                        let phi = std::f64::consts::TAU * halton();
                        let s = (1.0 - y * y).max(0.0).sqrt();
                        x[off] = s * phi.cos();
                        x[off + 1] = s * phi.sin();
                        x[off + 2] = y;
                    }
                    BlockKind::UnitSphere => {
                        x.rows_mut(off, b.dim)
                            .copy_from(&random_unit(&mut rng, b.dim));
                    }
                }
            }
            x
        })
        .collect()
}

/// Indices of seeds whose residual is no larger than that of any of their
/// `k` nearest neighbours.
fn local_minima(seeds: &[DVector<f64>], res: &[f64], k: usize) -> Vec<usize> {
    let dim = seeds.first().map_or(0, |s| s.len());
    let flat: Vec<f64> = seeds.iter().flat_map(|s| s.iter().copied()).collect();
    (0..seeds.len())
        .into_par_iter()
        .filter(|&i| {
            let xi = &flat[i * dim..(i + 1) * dim];
            let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for (j, xj) in flat.chunks_exact(dim.max(1)).enumerate() {
                if j == i {
                    continue;
                }
                let d: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                if nearest.len() < k || d < nearest[nearest.len() - 1].0 {
                    let pos = nearest.partition_point(|e| e.0 <= d);
                    nearest.insert(pos, (d, j));
                    nearest.truncate(k);
                }
            }
            nearest.iter().all(|&(_, j)| res[i] <= res[j])
        })
        .collect()
}

/// Samples the stall set of the requested kind (`PsiCandidate` or
/// `OmegaCandidate`).
pub fn sample_critical_set<P, F>(pair: &P, plant: &F, search: &CriticalSearch) -> CriticalSet
where
    P: SlffPair + ?Sized,
    F: AffineControlSystem + ?Sized,
{
    assert!(
        matches!(
            search.kind,
            CriticalKind::PsiCandidate | CriticalKind::OmegaCandidate
        ),
        "sample_critical_set searches stall sets only"
    );
    let m = pair.manifold();
    let seeds = grid_seeds(m, search.seeds_per_mode, search.box_radius, search.seed);
    let mut samples: Vec<CriticalSample> = Vec::new();
    for q in pair.modes().iter() {
        let r = |z: &DVector<f64>| residual(pair, plant, search, q, z);
        let res: Vec<f64> = seeds.par_iter().map(|z| r(z).norm()).collect();
        let mut picked = local_minima(&seeds, &res, search.neighbors);
        picked.sort_by(|&a, &b| res[a].total_cmp(&res[b]).then(a.cmp(&b)));
        if let Some(cap) = search.max_refine {
            picked.truncate(cap);
        }
        let refined: Vec<(DVector<f64>, f64)> = picked
            .par_iter()
            .map(|&i| refine(m, &r, &seeds[i], search.refine_tol, search.max_iter))
            .collect();
        let mut kept: Vec<CriticalSample> = Vec::new();
        for (z, nr) in refined {
            if nr <= search.refine_tol
                && !kept
                    .iter()
                    .any(|s| (&s.point.z - &z).norm() <= search.dedup_tol)
            {
                kept.push(CriticalSample {
                    point: ProductState::new(q, z),
                    residual: nr,
                    kind: search.kind,
                });
            }
        }
        log::debug!(
            "mode {q}: {} seeds, {} local minima refined, {} critical samples",
            seeds.len(),
            picked.len(),
            kept.len()
        );
        samples.extend(kept);
    }
    CriticalSet {
        samples,
        kinds_searched: BTreeSet::from([search.kind]),
        seed: search.seed,
    }
}

/// States `(q, z)` whose continuous part is that of an attractor point, for
/// every mode `q`.
pub fn b_set_samples<P: SlffPair + ?Sized>(pair: &P) -> CriticalSet {
    let samples = pair
        .attractor_points()
        .into_iter()
        .flat_map(|a| {
            pair.modes().iter().map(move |q| CriticalSample {
                point: ProductState::new(q, a.z.clone()),
                residual: 0.0,
                kind: CriticalKind::BSet,
            })
        })
        .collect();
    CriticalSet {
        samples,
        kinds_searched: BTreeSet::from([CriticalKind::BSet]),
        seed: 0,
    }
}

/// The candidate states that lie outside the flow-effective set `Y`.
pub fn boundary_xy_samples<P: SlffPair + ?Sized>(
    pair: &P,
    candidates: &[ProductState],
) -> CriticalSet {
    let samples = candidates
        .iter()
        .filter(|x| !pair.in_flow_effective(x.q, &x.z))
        .map(|x| CriticalSample {
            point: x.clone(),
            residual: 0.0,
            kind: CriticalKind::BoundaryXy,
        })
        .collect();
    CriticalSet {
        samples,
        kinds_searched: BTreeSet::from([CriticalKind::BoundaryXy]),
        seed: 0,
    }
}

/// Seeded uniform samples: mode uniform over `modes`, sphere blocks uniform,
/// unconstrained blocks uniform in `[-box_radius, box_radius]`.
pub fn sample_domain(
    m: &Manifold,
    modes: &ModeSet,
    n: usize,
    seed: u64,
    box_radius: f64,
) -> Vec<ProductState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let q = modes.as_slice()[rng.random_range(0..modes.len())];
            let mut z = DVector::zeros(m.dim());
            for (off, b) in m.layout() {
                match b.kind {
                    BlockKind::Unconstrained => {
                        for k in 0..b.dim {
                            z[off + k] = rng.random_range(-box_radius..=box_radius);
                        }
                    }
                    BlockKind::UnitSphere => {
                        z.rows_mut(off, b.dim)
                            .copy_from(&random_unit(&mut rng, b.dim));
                    }
                }
            }
            ProductState::new(q, z)
        })
        .collect()
}
