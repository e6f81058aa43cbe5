//! Cylinder and spherical Bessel functions for complex arguments.
//!
//! Everything here is hand-rolled because the workbench needs J_n, Y_n,
//! H1_n at complex arguments (including purely imaginary and negative real
//! part) and no maintained Rust crate covers that range. Strategy:
//!
//! - `J_n`: Miller's downward recurrence normalized with
//!   `J_0 + 2 Σ J_{2m} = 1`, stable for every complex argument.
//! - `Y_0`, `Y_1`: the Neumann expansions in `J_{2k}` with the principal
//!   logarithm for `|z| <= 16` (cancellation-free, unlike the ascending
//!   power series), Hankel large-argument asymptotics beyond. At the
//!   crossover the optimally truncated asymptotic error is ~e^{-2|z|},
//!   below 1e-13.
//! - `Y_n`, `H1_n` for `n >= 2`: upward recurrence (the dominant solution,
//!   so upward is stable).
//! - Arguments with negative real part (upper half plane) go through the
//!   reflection `H1_n(z) = -(-1)^n conj(H1_n(-conj z))` so the asymptotic
//!   branch never runs near its Stokes line.
//!
//! Accuracy is pinned by unit tests against 40-digit reference values.

use num_complex::Complex64;

use crate::{Result, WorkbenchError};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// |z| above which Y_0/Y_1 switch from the Neumann series to asymptotics.
const SERIES_ASYMPTOTIC_CROSSOVER: f64 = 16.0;

/// Hard cap on cylinder order: Y_n overflows f64 not far beyond this for
/// the argument range the workbench uses.
pub const MAX_CYLINDER_ORDER: usize = 180;

/// Magnitude that triggers rescaling inside Miller's downward recurrence.
/// Kept low enough that `norm_sqr` in complex division can never overflow
/// (values may still grow by ~2n/|z| past the check before rescaling).
const RESCALE_THRESHOLD: f64 = 1e130;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// J_0(z) .. J_nmax(z) by Miller's downward recurrence.
///
/// Works for any complex z (the normalization identity holds everywhere).
pub fn bessel_j_seq(nmax: usize, z: Complex64) -> Result<Vec<Complex64>> {
    if nmax > MAX_CYLINDER_ORDER {
        return Err(WorkbenchError::SpecialFunction(format!(
            "cylinder order {nmax} exceeds cap {MAX_CYLINDER_ORDER}"
        )));
    }
    let az = z.norm();
    if az == 0.0 {
        let mut out = vec![c(0.0, 0.0); nmax + 1];
        out[0] = c(1.0, 0.0);
        return Ok(out);
    }
    // Start high enough that the downward pass converges onto the minimal
    // solution before reaching the requested orders.
    let start = (nmax as f64).max(az) + 12.0 * ((nmax as f64) + az + 1.0).sqrt() + 25.0;
    let m_start = start as usize;

    let mut out = vec![c(0.0, 0.0); nmax + 1];
    let mut f_np1 = c(0.0, 0.0);
    let mut f_n = c(1e-30, 0.0);
    let mut lambda = c(0.0, 0.0);
    let two_over_z = c(2.0, 0.0) / z;

    let mut n = m_start;
    loop {
        if n <= nmax {
            out[n] = f_n;
        }
        if n % 2 == 0 {
            lambda += if n == 0 { f_n } else { f_n * 2.0 };
        }
        if n == 0 {
            break;
        }
        let f_nm1 = two_over_z * (n as f64) * f_n - f_np1;
        f_np1 = f_n;
        f_n = f_nm1;
        n -= 1;
        if f_n.norm() > RESCALE_THRESHOLD {
            let s = 1.0 / RESCALE_THRESHOLD;
            f_n *= s;
            f_np1 *= s;
            lambda *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    if lambda.norm() == 0.0 || !lambda.is_finite() {
        return Err(WorkbenchError::SpecialFunction(format!(
            "Miller normalization failed at z = {z}"
        )));
    }
    for v in out.iter_mut() {
        *v /= lambda;
    }
    Ok(out)
}

/// Extra J orders beyond |z| that the Neumann expansions for Y_0/Y_1 need
/// before their tails drop below machine precision.
const NEUMANN_ORDER_MARGIN: usize = 32;

/// Y_0 and Y_1 from the Neumann expansions (principal logarithm):
///
///   Y_0 = (2/π)[(ln(z/2)+γ)·J_0 + 2 Σ_{k≥1} (−1)^{k+1} J_{2k}/k]
///   Y_1 = −Y_0' = −(2/π)[J_0/z − (ln(z/2)+γ)·J_1
///                        + Σ_{k≥1} (−1)^{k+1}(J_{2k−1} − J_{2k+1})/k]
///
/// Every term is O(max_n |J_n|), which matches the size of the result, so
/// unlike the ascending power series there is no cancellation growth with
/// |z|. `j` must reach order ~|z| + NEUMANN_ORDER_MARGIN.
fn y01_from_j(z: Complex64, j: &[Complex64]) -> (Complex64, Complex64) {
    let lg = (z / 2.0).ln() + EULER_GAMMA;
    let mut s0 = c(0.0, 0.0);
    let mut s1 = c(0.0, 0.0);
    let kmax = (j.len() - 2) / 2;
    for k in 1..=kmax {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let inv_k = sign / k as f64;
        s0 += j[2 * k] * inv_k;
        s1 += (j[2 * k - 1] - j[2 * k + 1]) * inv_k;
        if k >= 4 && j[2 * k].norm() + j[2 * k - 1].norm() < 1e-18 * j[0].norm().max(j[1].norm()) {
            break;
        }
    }
    let two_over_pi = 2.0 / std::f64::consts::PI;
    let y0 = (lg * j[0] + s0 * 2.0) * two_over_pi;
    let y1 = -(j[0] / z - lg * j[1] + s1) * two_over_pi;
    (y0, y1)
}

/// Large-argument asymptotic H1_nu for nu in {0,1}, Re z >= 0, |z| >~ 12.
/// Optimal truncation: stop before the first term that fails to shrink.
fn hankel1_asymptotic(nu: usize, z: Complex64) -> Complex64 {
    let fournu2 = (4 * nu * nu) as f64;
    let iz = Complex64::new(0.0, 1.0) / z;
    let mut term = c(1.0, 0.0);
    let mut sum = term;
    for m in 1..=40 {
        let fac = (fournu2 - ((2 * m - 1) as f64).powi(2)) / (8.0 * m as f64);
        let next = term * iz * fac;
        if next.norm() >= term.norm() {
            break;
        }
        sum += next;
        term = next;
    }
    let phase = z - c(std::f64::consts::FRAC_PI_2 * nu as f64 + std::f64::consts::FRAC_PI_4, 0.0);
    let amp = (c(2.0 / std::f64::consts::PI, 0.0) / z).sqrt();
    amp * (Complex64::new(0.0, 1.0) * phase).exp() * sum
}

/// H1_nu for nu in {0,1} on the large-|z| branch, any sign of Re z
/// (Im z >= 0 assumed, which is all the workbench needs).
fn hankel1_large(nu: usize, z: Complex64) -> Complex64 {
    if z.re >= 0.0 {
        hankel1_asymptotic(nu, z)
    } else {
        // H1_n(z) = -(-1)^n conj(H1_n(-conj z)); -conj z has Re > 0, Im = Im z.
        let w = -z.conj();
        let h = hankel1_asymptotic(nu, w).conj();
        if nu % 2 == 0 {
            -h
        } else {
            h
        }
    }
}

/// All three cylinder families J, Y, H1 for orders 0..=nmax at one argument.
pub struct CylSeqs {
    pub j: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub h1: Vec<Complex64>,
}

/// Evaluate J, Y, H1 for orders 0..=nmax at complex z (z != 0).
pub fn cyl_seqs(nmax: usize, z: Complex64) -> Result<CylSeqs> {
    if z.norm() == 0.0 {
        return Err(WorkbenchError::SpecialFunction(
            "Y/H undefined at z = 0".into(),
        ));
    }
    if nmax > MAX_CYLINDER_ORDER {
        return Err(WorkbenchError::SpecialFunction(format!(
            "cylinder order {nmax} exceeds cap {MAX_CYLINDER_ORDER}"
        )));
    }
    let series = z.norm() <= SERIES_ASYMPTOTIC_CROSSOVER;
    let nj = if series {
        // The Neumann expansions for Y_0/Y_1 consume J up to ~|z| + margin.
        nmax.max(1).max(z.norm().ceil() as usize + NEUMANN_ORDER_MARGIN)
    } else {
        nmax.max(1)
    };
    let j = bessel_j_seq(nj, z)?;
    let (y0, y1) = if series {
        y01_from_j(z, &j)
    } else {
        let h0 = hankel1_large(0, z);
        let h1 = hankel1_large(1, z);
        let mi = Complex64::new(0.0, -1.0);
        (mi * (h0 - j[0]), mi * (h1 - j[1]))
    };

    let mut y = vec![c(0.0, 0.0); nmax.max(1) + 1];
    y[0] = y0;
    y[1] = y1;
    let two_over_z = c(2.0, 0.0) / z;
    for n in 1..nmax {
        y[n + 1] = two_over_z * (n as f64) * y[n] - y[n - 1];
        if !y[n + 1].is_finite() {
            return Err(WorkbenchError::SpecialFunction(format!(
                "Y_{} overflowed at z = {z}",
                n + 1
            )));
        }
    }
    let i = Complex64::new(0.0, 1.0);
    let h1: Vec<Complex64> = j.iter().zip(y.iter()).map(|(a, b)| a + i * b).collect();
    let mut j = j;
    let mut y = y;
    j.truncate(nmax + 1);
    y.truncate(nmax + 1);
    let mut h1 = h1;
    h1.truncate(nmax + 1);
    Ok(CylSeqs { j, y, h1 })
}

/// J_n(z).
pub fn bessel_j(n: usize, z: Complex64) -> Result<Complex64> {
    Ok(bessel_j_seq(n, z)?[n])
}

/// Y_n(z).
pub fn bessel_y(n: usize, z: Complex64) -> Result<Complex64> {
    Ok(cyl_seqs(n, z)?.y[n])
}

/// H1_n(z) = J_n(z) + i Y_n(z) (outgoing Hankel function).
pub fn hankel1(n: usize, z: Complex64) -> Result<Complex64> {
    Ok(cyl_seqs(n, z)?.h1[n])
}

/// Derivative of any cylinder family member from its sequence:
/// C_n' = C_{n-1} - (n/z) C_n, and C_0' = -C_1.
pub fn cyl_deriv(seq: &[Complex64], n: usize, z: Complex64) -> Complex64 {
    if n == 0 {
        -seq[1]
    } else {
        seq[n - 1] - seq[n] * (n as f64) / z
    }
}

/// Spherical j_0..j_lmax by downward recurrence, normalized against the
/// closed forms for j_0 (or j_1 when j_0 sits near a zero).
pub fn sph_j_seq(lmax: usize, z: Complex64) -> Result<Vec<Complex64>> {
    let az = z.norm();
    if az == 0.0 {
        let mut out = vec![c(0.0, 0.0); lmax + 1];
        out[0] = c(1.0, 0.0);
        return Ok(out);
    }
    let start = (lmax as f64).max(az) + 12.0 * ((lmax as f64) + az + 1.0).sqrt() + 25.0;
    let l_start = start as usize;

    let mut out = vec![c(0.0, 0.0); lmax + 1];
    let mut f_lp1 = c(0.0, 0.0);
    let mut f_l = c(1e-30, 0.0);
    let mut l = l_start;
    loop {
        if l <= lmax {
            out[l] = f_l;
        }
        if l == 0 {
            break;
        }
        let f_lm1 = f_l * ((2 * l + 1) as f64) / z - f_lp1;
        f_lp1 = f_l;
        f_l = f_lm1;
        l -= 1;
        if f_l.norm() > RESCALE_THRESHOLD {
            let s = 1.0 / RESCALE_THRESHOLD;
            f_l *= s;
            f_lp1 *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    // f_l now holds the unnormalized j_0 candidate; out[0] was set if lmax >= 0.
    let j0_exact = z.sin() / z;
    let j1_exact = z.sin() / (z * z) - z.cos() / z;
    // out[0] holds the raw value aligned with j0_exact. Pick the better
    // normalizer of the two lowest orders.
    let raw0 = out[0];
    let raw1 = if lmax >= 1 { out[1] } else { f_lp1 };
    let scale = if j0_exact.norm() >= j1_exact.norm() && raw0.norm() > 0.0 {
        j0_exact / raw0
    } else if raw1.norm() > 0.0 {
        j1_exact / raw1
    } else {
        return Err(WorkbenchError::SpecialFunction(format!(
            "spherical Miller normalization failed at z = {z}"
        )));
    };
    for v in out.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}

/// Spherical y_0..y_lmax by upward recurrence from closed forms.
pub fn sph_y_seq(lmax: usize, z: Complex64) -> Result<Vec<Complex64>> {
    if z.norm() == 0.0 {
        return Err(WorkbenchError::SpecialFunction(
            "spherical y undefined at z = 0".into(),
        ));
    }
    let mut out = vec![c(0.0, 0.0); lmax.max(1) + 1];
    out[0] = -z.cos() / z;
    out[1] = -z.cos() / (z * z) - z.sin() / z;
    for l in 1..lmax {
        out[l + 1] = out[l] * ((2 * l + 1) as f64) / z - out[l - 1];
        if !out[l + 1].is_finite() {
            return Err(WorkbenchError::SpecialFunction(format!(
                "spherical y_{} overflowed at z = {z}",
                l + 1
            )));
        }
    }
    out.truncate(lmax + 1);
    Ok(out)
}

/// Spherical outgoing h1_l = j_l + i y_l for 0..=lmax.
pub fn sph_h1_seq(lmax: usize, z: Complex64) -> Result<Vec<Complex64>> {
    let j = sph_j_seq(lmax, z)?;
    let y = sph_y_seq(lmax, z)?;
    let i = Complex64::new(0.0, 1.0);
    Ok(j.iter().zip(y.iter()).map(|(a, b)| a + i * b).collect())
}

/// Which spherical family a sequence belongs to; fixes the l = 0 derivative.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum SphKind {
    J,
    Y,
    H1,
}

/// Derivative of a spherical family member from its sequence:
/// f_l' = f_{l-1} - ((l+1)/z) f_l, with the l = 0 case from closed forms.
pub fn sph_deriv(kind: SphKind, seq: &[Complex64], l: usize, z: Complex64) -> Complex64 {
    let fm1 = if l == 0 {
        // j_{-1} = cos z / z, y_{-1} = sin z / z
        match kind {
            SphKind::J => z.cos() / z,
            SphKind::Y => z.sin() / z,
            SphKind::H1 => z.cos() / z + Complex64::new(0.0, 1.0) * (z.sin() / z),
        }
    } else {
        seq[l - 1]
    };
    fm1 - seq[l] * ((l + 1) as f64) / z
}
