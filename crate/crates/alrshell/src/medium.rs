//! Material and frequency parameters and the algebra connecting them.
//!
//! The shell carries the sign-changing coefficient a_i = a_e(−1+η) with a
//! complex loss parameter η, Im η ≥ 0. Wavenumbers follow
//!
//! - k_e² = ω²μ₀/a_e (exterior and core),
//! - k_i² = ω²μ₀·b/a_i = k_e²·b·τ (shell),
//!
//! with the transmission coefficient τ = a_e/a_i. Two conventions for τ(η)
//! are supported: the default reciprocal form τ = (−1+η)^{−1} and the direct
//! form τ = −1+η used by the flat-interface growth experiments. Both give
//! τ = −1 exactly at η = 0 and a_i = a_e/τ, so every derived relation below
//! holds for either choice.
//!
//! Square roots are taken on the branch with nonnegative imaginary part; for
//! a real nonnegative square this is the nonnegative real root.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Result, WorkbenchError};

/// How the transmission coefficient depends on the loss parameter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauConvention {
    /// τ = (−1+η)^{−1}: the shell coefficient is a_i = a_e(−1+η).
    #[default]
    Reciprocal,
    /// τ = −1+η: the convention of the flat-interface growth statement.
    Direct,
}

/// Primitive material/frequency parameters. Everything else is derived on
/// demand, so nothing can go stale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumParams {
    /// Angular frequency, ≥ 0 (0 selects the quasi-static regime).
    pub omega: f64,
    /// Permeability constant, > 0 (set 1 for the nondimensional convention).
    pub mu0: f64,
    /// Exterior coefficient, > 0.
    pub a_e: f64,
    /// Complex loss parameter, Im η ≥ 0, η ≠ 1.
    pub eta: Complex64,
    /// Shell sign parameter multiplying k_i² (±1 in all canned runs).
    pub b: Complex64,
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// τ(η) convention.
    #[serde(default)]
    pub tau_convention: TauConvention,
}

impl MediumParams {
    /// Nondimensional defaults: ω = 1, μ₀ = 1, a_e = 1, b = −1, η = 0, 2D.
    pub fn nondimensional() -> MediumParams {
        MediumParams {
            omega: 1.0,
            mu0: 1.0,
            a_e: 1.0,
            eta: Complex64::new(0.0, 0.0),
            b: Complex64::new(-1.0, 0.0),
            dim: 2,
            tau_convention: TauConvention::Reciprocal,
        }
    }

    pub fn with_eta(mut self, eta: Complex64) -> MediumParams {
        self.eta = eta;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.omega < 0.0 || !self.omega.is_finite() {
            return Err(WorkbenchError::InvalidParameter(format!(
                "omega must be finite and nonnegative, got {}",
                self.omega
            )));
        }
        if self.mu0 <= 0.0 || self.a_e <= 0.0 {
            return Err(WorkbenchError::InvalidParameter(
                "mu0 and a_e must be positive".into(),
            ));
        }
        if self.eta.im < 0.0 {
            return Err(WorkbenchError::InvalidParameter(format!(
                "Im eta must be nonnegative (passive medium), got {}",
                self.eta
            )));
        }
        if self.eta == Complex64::new(1.0, 0.0) {
            return Err(WorkbenchError::InvalidParameter(
                "eta = 1 makes the shell coefficient vanish".into(),
            ));
        }
        if self.dim != 2 && self.dim != 3 {
            return Err(WorkbenchError::InvalidParameter(format!(
                "dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Transmission coefficient τ = a_e/a_i under the configured convention.
    pub fn tau(&self) -> Result<Complex64> {
        self.validate()?;
        let base = Complex64::new(-1.0, 0.0) + self.eta;
        Ok(match self.tau_convention {
            TauConvention::Reciprocal => base.inv(),
            TauConvention::Direct => base,
        })
    }

    /// Shell coefficient a_i = a_e/τ.
    pub fn a_i(&self) -> Result<Complex64> {
        Ok(self.a_e / self.tau()?)
    }

    /// k_i² at η = 0, where τ = −1 for either convention.
    pub fn k_i0_squared(&self) -> Result<Complex64> {
        self.validate()?;
        let ke2 = self.omega * self.omega * self.mu0 / self.a_e;
        Ok(-self.b * ke2)
    }
}

/// Square root on the branch Im ≥ 0; nonnegative real root for real
/// nonnegative input.
pub fn sqrt_upper_branch(z: Complex64) -> Complex64 {
    let w = z.sqrt();
    if w.im < 0.0 {
        -w
    } else {
        w
    }
}

/// All derived wavenumbers and the transmission coefficient.
pub fn derive_wavenumbers(params: &MediumParams) -> Result<(Complex64, Complex64, Complex64)> {
    let tau = params.tau()?;
    let ke2 = params.omega * params.omega * params.mu0 / params.a_e;
    let k_e = Complex64::new(ke2.sqrt(), 0.0);
    let ki2 = params.b * tau * ke2;
    let k_i = sqrt_upper_branch(ki2);
    Ok((k_e, k_i, tau))
}

/// Drude dispersion parameters. Lengths share one unit (meters in SI runs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrudeParams {
    pub eps_inf: f64,
    pub lambda_p: f64,
    pub lambda_d: f64,
}

impl Default for DrudeParams {
    /// Silver-like defaults: ε_∞ = 5.5, λ_p = 130 nm, λ_d = 30 μm.
    fn default() -> DrudeParams {
        DrudeParams {
            eps_inf: 5.5,
            lambda_p: 130e-9,
            lambda_d: 30e-6,
        }
    }
}

/// Printed alongside Drude outputs: the damping-wavelength default differs
/// from a commonly quoted value.
pub const DRUDE_LAMBDA_D_NOTE: &str = "note: damping wavelength defaults to 30 um; \
the often-quoted 30 nm does not reproduce the reference value eps_r = -1 + 0.07i \
at lambda = 331 nm, so the micron figure is taken as the intended one";

/// Relative permittivity ε_r(λ) = ε_∞ − (λ/λ_p)² / (1 + iλ/λ_d).
pub fn drude_permittivity(lambda: f64, p: &DrudeParams) -> Result<Complex64> {
    if lambda <= 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "wavelength must be positive".into(),
        ));
    }
    if p.eps_inf <= 0.0 || p.lambda_p <= 0.0 || p.lambda_d <= 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "Drude parameters must be positive".into(),
        ));
    }
    let x = lambda / p.lambda_p;
    let denom = Complex64::new(1.0, lambda / p.lambda_d);
    Ok(Complex64::new(p.eps_inf, 0.0) - Complex64::new(x * x, 0.0) / denom)
}

/// Reduce the Maxwell TE polarization to the scalar divergence form
/// ∇·(a∇u) + c·u = 0 for the out-of-plane magnetic field: a = 1/ε_r and
/// c = μ_r·k₀² with k₀² = ω²ε₀μ₀.
pub fn te_reduce(
    eps_r: Complex64,
    mu_r: Complex64,
    omega: f64,
    eps0: f64,
    mu0: f64,
) -> Result<(Complex64, Complex64)> {
    if eps_r.norm() == 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "te_reduce: permittivity must be nonzero".into(),
        ));
    }
    let k0_sq = omega * omega * eps0 * mu0;
    Ok((eps_r.inv(), mu_r * k0_sq))
}
