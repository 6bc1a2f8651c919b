//! Synergistic Lyapunov function and feedback (SLFF) pairs and the hybrid
//! controllers built from them.
//!
//! The crate is organised bottom-up:
//!
//! - [`hybrid`]: hybrid systems on product state spaces (logic mode × continuous
//!   state), a fixed-step RK4 integrator with event bisection, and hybrid arcs.
//! - [`slff`]: SLFF pairs, the synergy gap, sampling-based verification of the gap
//!   conditions, controller synthesis, and the gap/rescaling constructions.
//! - [`backstepping`]: integrator backstepping of (weak) SLFF pairs, Lipschitz
//!   rescaling, and smoothing of the logic variable.
//! - [`pendulum`]: the reduced 3-D pendulum, a warped synergistic potential
//!   family with numerical certification, and the two closed loops.

pub mod backstepping;
pub mod hybrid;
pub mod linalg;
pub mod pendulum;
pub mod slff;

pub use hybrid::{HybridArc, HybridSystem, Manifold, Mode, ModeSet, ProductState};
pub use slff::{GapFunction, SlffPair};
