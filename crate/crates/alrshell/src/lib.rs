//! Boundary-element workbench for the two-interface Helmholtz transmission
//! problem with a negative-material shell.
//!
//! The shell `Ω∖D̄` carries coefficient `a_i = a_e·(−1+η)` with a small loss
//! parameter `η` (Im η ≥ 0). The crate solves
//!
//! ```text
//!   −(Δ + k_e²) v₁ = 0      in D
//!   −(Δ + k_i²) v₂ = 0      in Ω∖D̄
//!   −(Δ + k_e²) v₃ = f      in ℝ²∖Ω̄  (+ radiation condition)
//! ```
//!
//! with the transmission conditions `v₁ = v₂`, `τ₁ ∂_ν v₁ = ∂_ν v₂` on `Γ₁`
//! and `v₂ = v₃`, `τ₂ ∂_ν v₃ = ∂_ν v₂` on `Γ₂`, reconstructs the fields in
//! all three regions, and classifies how the shell field blows up as η → 0
//! (bounded, w-ALR, weak-CALR, or ALR).
//!
//! Module map:
//! - [`medium`]: material and frequency parameters, wavenumber branches,
//!   Drude dispersion, Maxwell TE reduction.
//! - [`geometry`]: smooth closed parametric contours with spectral
//!   quadrature, normals, curvature, convexity/flatness diagnostics, and the
//!   flat-slab probe regions.
//! - [`kernels`]: outgoing fundamental solutions of −(Δ+k²) in 2D/3D with
//!   gradients and Hessians.
//! - [`bessel`]: cylinder and spherical Bessel/Hankel functions for complex
//!   arguments (no external special-function dependency).
//! - [`linalg`]: dense complex matrices, LU with partial pivoting, condition
//!   estimation, smallest-singular-value estimation.
//! - [`boundary_ops`]: Nyström discretization of the trace operators
//!   V, K, K*, N, smooth cross-interface blocks, off-surface potential
//!   evaluation.
//! - [`transmission`]: source reduction, block-system assembly and solve,
//!   field reconstruction, H¹ norms, energy-identity residual.
//! - [`oracle`]: independent separation-of-variables solvers (2D annulus,
//!   3D concentric balls, quasi-static and dynamic) plus critical radii;
//!   ground truth for validation and the engine for rate sweeps.
//! - [`resonance_driver`]: η-sweep orchestration, blow-up classification,
//!   cloaking metric, mirror-asymmetry diagnostic.
//! - [`config`]: JSON run configuration and CSV/binary output helpers.

pub mod bessel;
pub mod boundary_ops;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod medium;
pub mod config;
pub mod oracle;
pub mod resonance_driver;
pub mod transmission;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum WorkbenchError {
    /// A parameter violated a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A geometric precondition failed (self-intersection, overlap, ordering).
    #[error("geometry error: {0}")]
    Geometry(String),
    /// Off-surface evaluation was requested too close to a contour.
    /// Near-singular quadrature is refused rather than silently degraded.
    #[error(
        "near-field evaluation refused: point at distance {distance:.3e} from contour, \
         required standoff {required:.3e} (3 local node spacings)"
    )]
    NearFieldRefused { distance: f64, required: f64 },
    /// A dense factorization hit an exactly singular pivot.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    /// A mode expansion hit its truncation cap before meeting the tail
    /// criterion. Expected in resonant regimes; carries the achieved level.
    #[error("truncation cap reached: {0}")]
    Truncation(String),
    /// Special-function evaluation outside the supported order/argument range.
    #[error("special function range: {0}")]
    SpecialFunction(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, WorkbenchError>;
