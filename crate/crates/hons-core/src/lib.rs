//! Pseudospectral toolkit for a coupled pair of third-order nonlinear
//! Schrödinger equations on the 2π-periodic torus:
//!
//! ```text
//! 2i u_t + q u_xx + i γ u_xxx = F1(u, w)
//! 2i w_t + q w_xx + i γ w_xxx = F1(w, u)
//! ```
//!
//! with the cubic nonlinearity
//!
//! ```text
//! F1(u, w) = -2iβ(|u|² + σ_β|w|²) u_x - 2α u(|u|² + σ_α|w|²)
//!            - 2iμ u ∂x(|u|² + σ_μ|w|²)
//! ```
//!
//! The crate provides the discrete Fourier representation and dealiased
//! products ([`grid`]), the dispersion symbol and resonance algebra
//! ([`dispersion`]), exponential time integrators and a Duhamel fixed-point
//! solver ([`dynamics`]), conserved-quantity audits ([`invariants`]),
//! space-time restriction norms and estimate experiments ([`bourgain`]),
//! and closed-form / cross-check reference solvers ([`reference`]).

pub mod bourgain;
pub mod dispersion;
pub mod dynamics;
pub mod grid;
pub mod invariants;
pub mod reference;

pub use dispersion::PhysicsParams;
pub use grid::{PairState, PeriodicGrid, SpectralField};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("operands live on different grids ({0} vs {1} modes)")]
    GridMismatch(usize, usize),
    #[error("solution blew up at t = {time:.6e} (coefficient overflow or NaN)")]
    BlowUp { time: f64 },
    #[error("internal consistency check failed: {0}")]
    Inconsistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
