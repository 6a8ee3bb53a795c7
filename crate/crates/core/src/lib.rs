//! Model-free linear-quadratic regulator learning for networked LTI systems.
//!
//! The learner sees only trajectories of `ẋ = Ax + Bu` collected under an
//! exploratory input. Off-policy policy iteration turns one such run into a
//! sequence of least-squares problems whose solutions converge to the optimal
//! state feedback `u = −Fx`. Projecting the snapshots onto their dominant
//! left-singular subspace shrinks those problems from `n` to `n̂` states.
//!
//! Modules:
//! - [`lti_sim`]: ground-truth simulation and exploration signals.
//! - [`precondition`]: projection fitting and regressor assembly.
//! - [`policy`]: the data-driven policy iteration.
//! - [`analysis`]: model-based validation (Riccati, costs, system norms).
//! - [`benchmarks`]: consensus and oscillator networks, end-to-end sweeps.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod benchmarks;
pub mod error;
pub mod linalg;
pub mod lti_sim;
pub mod policy;
pub mod precondition;
mod quadrature;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;

/// Monotonic millisecond clock used to time the learning loop.
///
/// The core has no access to a system clock, so callers inject one.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero; timings come out as zeros.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}
