//! Hybrid systems on a product of a finite logic-mode set and a continuous
//! state, and their numerical solutions.
//!
//! A [`HybridSystem`] is given by a flow set `C`, a flow map, a jump set `D` and
//! a set-valued jump map `G`. [`simulate`] alternates RK4 flow (restricted to
//! `C`, with bisection onto the boundary of `D`) and jumps, giving jumps
//! priority on `C ∩ D`.

mod export;
mod integrate;
mod sim;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

pub use export::{arc_from_csv, arc_from_json, arc_to_csv, arc_to_json, write_arc, ArcFormat};
pub use integrate::{
    flow_segment, flow_segment_until, rk4_step, FlowExit, FlowSegment, EVENT_TIME_TOL,
};
pub use sim::{jump_once, simulate, SimOptions};

/// Logic mode label.
pub type Mode = i32;

/// Tolerance on `| |block| - 1 |` for unit-sphere blocks.
pub const SPHERE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("mode set must be non-empty with distinct labels")]
    InvalidModeSet,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("state is in neither the flow set nor the jump set (t = {t}, j = {j})")]
    OutsideDomain { t: f64, j: usize },
    #[error("jump map returned no candidates at a point of the jump set")]
    EmptyJumpMap,
    #[error("non-finite state derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("sphere block starting at {offset} collapsed (norm {norm:e})")]
    DegenerateSphere { offset: usize, norm: f64 },
    #[error("arc export: {0}")]
    Export(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The finite set of logic modes, stored sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet(Vec<Mode>);

impl ModeSet {
    pub fn new(mut modes: Vec<Mode>) -> Result<Self, HybridError> {
        if modes.is_empty() {
            return Err(HybridError::InvalidModeSet);
        }
        modes.sort_unstable();
        if modes.windows(2).any(|w| w[0] == w[1]) {
            return Err(HybridError::InvalidModeSet);
        }
        Ok(Self(modes))
    }

    /// Modes `1..=n`.
    pub fn range(n: usize) -> Self {
        Self((1..=n as Mode).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, q: Mode) -> bool {
        self.0.binary_search(&q).is_ok()
    }

    /// Position of `q` in ascending order.
    pub fn index_of(&self, q: Mode) -> Option<usize> {
        self.0.binary_search(&q).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = Mode> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[Mode] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Unconstrained,
    UnitSphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub dim: usize,
    pub name: String,
}

/// Partition of the continuous state into named blocks, each either free or
/// constrained to a unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifold {
    blocks: Vec<Block>,
}

impl Manifold {
    pub fn euclidean(dim: usize) -> Self {
        Self::default().with_block(BlockKind::Unconstrained, dim, "x")
    }

    pub fn with_block(mut self, kind: BlockKind, dim: usize, name: &str) -> Self {
        self.blocks.push(Block {
            kind,
            dim,
            name: name.to_string(),
        });
        self
    }

    /// Appends all blocks of `other`.
    pub fn extend(mut self, other: &Manifold) -> Self {
        self.blocks.extend(other.blocks.iter().cloned());
        self
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    /// Dimension of the manifold itself (a sphere block in R^k contributes k-1).
    pub fn intrinsic_dim(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b.kind {
                BlockKind::Unconstrained => b.dim,
                BlockKind::UnitSphere => b.dim - 1,
            })
            .sum()
    }

    /// `(offset, block)` pairs.
    pub fn layout(&self) -> impl Iterator<Item = (usize, &Block)> + '_ {
        self.blocks.iter().scan(0usize, |off, b| {
            let o = *off;
            *off += b.dim;
            Some((o, b))
        })
    }

    /// Column names `<block><index>`, e.g. `z0,z1,z2,w0,...`.
    pub fn component_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| (0..b.dim).map(move |i| format!("{}{}", b.name, i)))
            .collect()
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        z.len() == self.dim()
            && z.iter().all(|v| v.is_finite())
            && self.layout().all(|(off, b)| match b.kind {
                BlockKind::Unconstrained => true,
                BlockKind::UnitSphere => (z.rows(off, b.dim).norm() - 1.0).abs() <= tol,
            })
    }

    /// Largest `| |block| - 1 |` over the sphere blocks.
    pub fn sphere_drift(&self, z: &DVector<f64>) -> f64 {
        self.layout()
            .filter(|(_, b)| b.kind == BlockKind::UnitSphere)
            .map(|(off, b)| (z.rows(off, b.dim).norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Divides every unit-sphere block by its norm; free blocks are untouched.
    pub fn renormalize(&self, z: &mut DVector<f64>) -> Result<(), HybridError> {
        for (off, b) in self.layout() {
            if b.kind == BlockKind::UnitSphere {
                let n = z.rows(off, b.dim).norm();
                if !(n >= 1e-6) {
                    return Err(HybridError::DegenerateSphere {
                        offset: off,
                        norm: n,
                    });
                }
                z.rows_mut(off, b.dim).unscale_mut(n);
            }
        }
        Ok(())
    }
}

/// Returns a copy of `x` with its sphere blocks renormalized.
pub fn renormalize(x: &ProductState, m: &Manifold) -> Result<ProductState, HybridError> {
    let mut out = x.clone();
    m.renormalize(&mut out.z)?;
    Ok(out)
}

/// `(q, z)`: a logic mode and the continuous state (all blocks concatenated).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    pub q: Mode,
    pub z: DVector<f64>,
}

impl ProductState {
    pub fn new(q: Mode, z: DVector<f64>) -> Self {
        Self { q, z }
    }

    pub fn from_slice(q: Mode, z: &[f64]) -> Self {
        Self {
            q,
            z: DVector::from_column_slice(z),
        }
    }
}

/// Point of a hybrid time domain; ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcSample {
    pub time: HybridTime,
    pub state: ProductState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum Termination {
    HorizonReached,
    JumpBudget,
    InAttractor,
    ZenoGuard,
    IntegrationFailure(String),
}

/// A solution sampled on its hybrid time domain. A jump appears as two
/// consecutive samples at the same `t`: the pre-jump state with `j` and the
/// post-jump state with `j + 1`; `jump_indices` holds the post-jump positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridArc {
    pub samples: Vec<ArcSample>,
    pub jump_indices: Vec<usize>,
    pub termination: Termination,
}

impl HybridArc {
    pub fn jumps(&self) -> usize {
        self.jump_indices.len()
    }

    pub fn last(&self) -> &ArcSample {
        self.samples.last().expect("arcs are never empty")
    }

    /// Consecutive sample pairs that lie on the same flow interval.
    pub fn flow_pairs(&self) -> impl Iterator<Item = (&ArcSample, &ArcSample)> + '_ {
        self.samples
            .windows(2)
            .filter(|w| w[0].time.j == w[1].time.j)
            .map(|w| (&w[0], &w[1]))
    }

    /// `(pre, post)` pairs for every jump.
    pub fn jump_pairs(&self) -> impl Iterator<Item = (&ArcSample, &ArcSample)> + '_ {
        self.jump_indices
            .iter()
            .map(move |&i| (&self.samples[i - 1], &self.samples[i]))
    }

    /// Checks the hybrid-time-domain invariants: `(t, j)` non-decreasing,
    /// `t` constant and `j` up by one exactly at the recorded jumps.
    pub fn check_time_domain(&self) -> Result<(), String> {
        let mut jumps = self.jump_indices.iter().copied().peekable();
        for (i, w) in self.samples.windows(2).enumerate() {
            let (a, b) = (w[0].time, w[1].time);
            if jumps.peek() == Some(&(i + 1)) {
                jumps.next();
                if b.j != a.j + 1 || b.t != a.t {
                    return Err(format!("bad jump record at sample {}", i + 1));
                }
            } else if b.j != a.j || b.t < a.t {
                return Err(format!(
                    "time went backwards or j changed at sample {}",
                    i + 1
                ));
            }
        }
        match jumps.next() {
            Some(i) => Err(format!("dangling jump index {i}")),
            None => Ok(()),
        }
    }
}

/// Data `(C, F, D, G)` of a hybrid system on `Q × manifold`.
pub trait HybridSystem: Send + Sync {
    fn manifold(&self) -> &Manifold;

    fn in_domain(&self, x: &ProductState) -> bool {
        self.manifold().contains(&x.z, SPHERE_TOL)
    }

    fn in_flow_set(&self, x: &ProductState) -> bool;

    fn in_jump_set(&self, x: &ProductState) -> bool;

    /// Time derivative of the continuous state; the mode is constant during flow.
    fn flow_map(&self, x: &ProductState) -> DVector<f64>;

    /// Candidate post-jump states, in selection priority order.
    fn jump_map(&self, x: &ProductState) -> Vec<ProductState>;

    /// Distance to the set being stabilized, if the system knows one.
    fn attractor_distance(&self, _x: &ProductState) -> Option<f64> {
        None
    }
}

impl<T: HybridSystem + ?Sized> HybridSystem for Arc<T> {
    fn manifold(&self) -> &Manifold {
        (**self).manifold()
    }
    fn in_domain(&self, x: &ProductState) -> bool {
        (**self).in_domain(x)
    }
    fn in_flow_set(&self, x: &ProductState) -> bool {
        (**self).in_flow_set(x)
    }
    fn in_jump_set(&self, x: &ProductState) -> bool {
        (**self).in_jump_set(x)
    }
    fn flow_map(&self, x: &ProductState) -> DVector<f64> {
        (**self).flow_map(x)
    }
    fn jump_map(&self, x: &ProductState) -> Vec<ProductState> {
        (**self).jump_map(x)
    }
    fn attractor_distance(&self, x: &ProductState) -> Option<f64> {
        (**self).attractor_distance(x)
    }
}

type Pred = Arc<dyn Fn(&ProductState) -> bool + Send + Sync>;

type FlowFn = Arc<dyn Fn(&ProductState) -> DVector<f64> + Send + Sync>;
type JumpFn = Arc<dyn Fn(&ProductState) -> Vec<ProductState> + Send + Sync>;

/// A hybrid system assembled from closures.
#[derive(Clone)]
pub struct FnSystem {
    manifold: Manifold,
    flow_set: Pred,
    jump_set: Pred,
    flow: FlowFn,
    jump: JumpFn,
}

impl FnSystem {
    /// A pure flow: `C` is everything, `D` is empty.
    pub fn flow_only<F>(manifold: Manifold, flow: F) -> Self
    where
        F: Fn(&ProductState) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            manifold,
            flow_set: Arc::new(|_| true),
            jump_set: Arc::new(|_| false),
            flow: Arc::new(flow),
            jump: Arc::new(|x| vec![x.clone()]),
        }
    }

    pub fn with_flow_set(
        mut self,
        f: impl Fn(&ProductState) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.flow_set = Arc::new(f);
        self
    }

    pub fn with_jump_set(
        mut self,
        f: impl Fn(&ProductState) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.jump_set = Arc::new(f);
        self
    }

    pub fn with_jump_map(
        mut self,
        f: impl Fn(&ProductState) -> Vec<ProductState> + Send + Sync + 'static,
    ) -> Self {
        self.jump = Arc::new(f);
        self
    }
}

impl HybridSystem for FnSystem {
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }
    fn in_flow_set(&self, x: &ProductState) -> bool {
        (self.flow_set)(x)
    }
    fn in_jump_set(&self, x: &ProductState) -> bool {
        (self.jump_set)(x)
    }
    fn flow_map(&self, x: &ProductState) -> DVector<f64> {
        (self.flow)(x)
    }
    fn jump_map(&self, x: &ProductState) -> Vec<ProductState> {
        (self.jump)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_set_rejects_duplicates_and_empty() {
        assert!(ModeSet::new(vec![]).is_err());
        assert!(ModeSet::new(vec![2, 1, 2]).is_err());
        let m = ModeSet::new(vec![3, 1, 2]).unwrap();
        assert_eq!(m.as_slice(), &[1, 2, 3]);
        assert_eq!(m.index_of(3), Some(2));
    }

    #[test]
    fn renormalize_examples() {
        let m = Manifold::default()
            .with_block(BlockKind::UnitSphere, 3, "z")
            .with_block(BlockKind::Unconstrained, 3, "w");
        let unit = ProductState::from_slice(1, &[0.0, 0.6, 0.8, 7.0, -3.0, 100.0]);
        assert_eq!(renormalize(&unit, &m).unwrap(), unit);

        let off = ProductState::from_slice(1, &[0.0, 0.0, 1.0001, 7.0, -3.0, 100.0]);
        let fixed = renormalize(&off, &m).unwrap();
        assert_eq!(fixed.z.as_slice(), &[0.0, 0.0, 1.0, 7.0, -3.0, 100.0]);

        let collapsed = ProductState::from_slice(1, &[0.0, 0.0, 1e-9, 0.0, 0.0, 0.0]);
        assert!(matches!(
            renormalize(&collapsed, &m),
            Err(HybridError::DegenerateSphere { offset: 0, .. })
        ));
    }

    #[test]
    fn manifold_layout_and_names() {
        let m = Manifold::default()
            .with_block(BlockKind::UnitSphere, 3, "z")
            .with_block(BlockKind::Unconstrained, 2, "p");
        assert_eq!(m.dim(), 5);
        assert_eq!(m.intrinsic_dim(), 4);
        assert_eq!(m.component_names(), vec!["z0", "z1", "z2", "p0", "p1"]);
        let offsets: Vec<usize> = m.layout().map(|(o, _)| o).collect();
        assert_eq!(offsets, vec![0, 3]);
    }
}
