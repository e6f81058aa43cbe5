//! Outgoing fundamental solutions of −(Δ + k²) in two and three dimensions.
//!
//! Sign convention: G is the fundamental solution of −(Δ + k²), i.e.
//! −(Δ + k²)G = δ. Concretely
//!
//! - d = 2, k ≠ 0: G = (i/4) H1_0(k|x|)
//! - d = 2, k = 0: G = −(1/2π) ln|x|
//! - d = 3, k ≠ 0: G = e^{ik|x|}/(4π|x|)
//! - d = 3, k = 0: G = 1/(4π|x|)
//!
//! The 2D static kernel carries the minus sign: it is the k → 0 limit of the
//! Hankel form (up to the usual k-dependent additive constant) and it is the
//! sign under which the layer-potential jump relations hold with the ±φ/2
//! placement used throughout the crate. All gradients and Hessians are
//! analytic, never differenced.

use num_complex::Complex64;

use crate::bessel;
use crate::{Result, WorkbenchError};

const FRAC_1_2PI: f64 = 1.0 / (2.0 * std::f64::consts::PI);
const FRAC_1_4PI: f64 = 1.0 / (4.0 * std::f64::consts::PI);

/// Value, gradient and (optionally) Hessian of G at one offset x − y.
pub struct KernelEval {
    pub dim: usize,
    pub value: Complex64,
    /// ∇G with respect to the offset; only the first `dim` entries are used.
    pub gradient: [Complex64; 3],
    /// Hessian of G; present when requested.
    pub hessian: Option<[[Complex64; 3]; 3]>,
}

/// Radial value and first two radial derivatives of G at distance r > 0.
#[derive(Clone, Copy, Debug)]
pub struct RadialParts {
    pub g: Complex64,
    pub dg: Complex64,
    pub d2g: Complex64,
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Radial derivatives of the 2D kernel at distance r.
pub fn radial_parts_2d(k: Complex64, r: f64) -> Result<RadialParts> {
    if r <= 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "kernel evaluated at zero offset".into(),
        ));
    }
    if k.norm() == 0.0 {
        return Ok(RadialParts {
            g: Complex64::new(-FRAC_1_2PI * r.ln(), 0.0),
            dg: Complex64::new(-FRAC_1_2PI / r, 0.0),
            d2g: Complex64::new(FRAC_1_2PI / (r * r), 0.0),
        });
    }
    let z = k * r;
    let s = bessel::cyl_seqs(1, z)?;
    let i4 = Complex64::new(0.0, 0.25);
    let g = i4 * s.h1[0];
    let dg = -i4 * k * s.h1[1];
    // H1_1'(z) = H1_0(z) - H1_1(z)/z
    let d2g = -i4 * k * k * (s.h1[0] - s.h1[1] / z);
    Ok(RadialParts { g, dg, d2g })
}

/// Radial derivatives of the 3D kernel at distance r.
pub fn radial_parts_3d(k: Complex64, r: f64) -> Result<RadialParts> {
    if r <= 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "kernel evaluated at zero offset".into(),
        ));
    }
    if k.norm() == 0.0 {
        return Ok(RadialParts {
            g: Complex64::new(FRAC_1_4PI / r, 0.0),
            dg: Complex64::new(-FRAC_1_4PI / (r * r), 0.0),
            d2g: Complex64::new(2.0 * FRAC_1_4PI / (r * r * r), 0.0),
        });
    }
    let ikr = Complex64::new(0.0, 1.0) * k * r;
    let e = ikr.exp();
    let g = e * FRAC_1_4PI / r;
    let dg = e * (ikr - 1.0) * FRAC_1_4PI / (r * r);
    let d2g = e * (-k * k * r * r - 2.0 * Complex64::new(0.0, 1.0) * k * r + 2.0) * FRAC_1_4PI
        / (r * r * r);
    Ok(RadialParts { g, dg, d2g })
}

/// Fundamental solution G_k and derivatives at offset `r_vec` (length dim).
pub fn green(dim: usize, k: Complex64, r_vec: &[f64], want_hessian: bool) -> Result<KernelEval> {
    if dim != 2 && dim != 3 {
        return Err(WorkbenchError::InvalidParameter(format!(
            "unsupported dimension {dim}"
        )));
    }
    if r_vec.len() != dim {
        return Err(WorkbenchError::InvalidParameter(
            "offset length does not match dimension".into(),
        ));
    }
    if k.im < 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "Im k < 0 is outside the outgoing branch".into(),
        ));
    }
    let r2: f64 = r_vec.iter().map(|v| v * v).sum();
    let r = r2.sqrt();
    let parts = if dim == 2 {
        radial_parts_2d(k, r)?
    } else {
        radial_parts_3d(k, r)?
    };

    let mut rhat = [0.0f64; 3];
    for (a, b) in rhat.iter_mut().zip(r_vec.iter()) {
        *a = b / r;
    }
    let mut gradient = [zero(); 3];
    for d in 0..dim {
        gradient[d] = parts.dg * rhat[d];
    }
    let hessian = if want_hessian {
        // Hess G = G'' r̂ r̂ᵀ + (G'/r)(I − r̂ r̂ᵀ)
        let mut h = [[zero(); 3]; 3];
        let tang = parts.dg / r;
        for a in 0..dim {
            for b in 0..dim {
                let proj = rhat[a] * rhat[b];
                h[a][b] = parts.d2g * proj + tang * ((a == b) as i32 as f64 - proj);
            }
        }
        Some(h)
    } else {
        None
    };
    Ok(KernelEval {
        dim,
        value: parts.g,
        gradient,
        hessian,
    })
}

/// Radiation-condition residuals along a ray.
///
/// For k > 0 returns |(∂_r − ik)G| · r^{(d−1)/2} at each radius; these must
/// decay for the outgoing branch. For k = 0 returns |G| · r^{d−2}, the decay
/// factor appropriate to the static kernel (constant in 3D).
pub fn radiation_check(
    dim: usize,
    k: Complex64,
    direction: &[f64],
    radii: &[f64],
) -> Result<Vec<f64>> {
    if direction.len() != dim {
        return Err(WorkbenchError::InvalidParameter(
            "direction length does not match dimension".into(),
        ));
    }
    let dn: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dn == 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "zero direction vector".into(),
        ));
    }
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        if r <= 0.0 {
            return Err(WorkbenchError::InvalidParameter(
                "radii must be positive".into(),
            ));
        }
        let parts = if dim == 2 {
            radial_parts_2d(k, r)?
        } else {
            radial_parts_3d(k, r)?
        };
        let res = if k.norm() == 0.0 {
            parts.g.norm() * r.powi(dim as i32 - 2)
        } else {
            (parts.dg - Complex64::new(0.0, 1.0) * k * parts.g).norm()
                * r.powf((dim as f64 - 1.0) / 2.0)
        };
        out.push(res);
    }
    Ok(out)
}
