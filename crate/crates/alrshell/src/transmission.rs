//! Direct boundary-integral solver for the two-interface transmission
//! problem.
//!
//! The configuration is a core region bounded by an inner contour, a shell
//! between the inner and outer contours with coefficient a_e/tau, and an
//! unbounded exterior. A point or dipole source sits in the exterior. The
//! exterior field is split as v3 = u3 + v, where v solves the source problem
//! outside the outer contour with a vanishing Dirichlet trace there; this
//! source reduction turns the inhomogeneous problem into one with interface
//! jump data supported on the outer contour only.
//!
//! Unknowns are single-layer densities phi (core, wavenumber k_e on the inner
//! contour) and psi (radiating part of the exterior, k_e on the outer
//! contour). The shell field is recovered from its Cauchy data through the
//! Green representation with the shell wavenumber k_i. Throughout the module
//! the inner contour carries the normal pointing into the core and the outer
//! contour its usual outward normal, so both normals point out of the shell;
//! `solve_transmission` reorients the inner contour automatically.
//!
//! Interface data on each contour are the shell-side Cauchy pairs
//! b = trace of the shell field and a = its normal derivative (out of the
//! shell). They are tied to the densities by
//!
//!   b1 = V_e phi,            a1 = tau (K*_e - 1/2) phi,
//!   b2 = V_e psi + f2,       a2 = tau (K*_e - 1/2) psi + g2,
//!
//! with f2 the (numerically zero) Dirichlet residue of the reduced source
//! term and g2 = tau times its normal derivative. Inserting these into the
//! shell representation and taking traces yields the 2x2 block system
//! assembled in [`assemble_system`].

use std::f64::consts::TAU as TWO_PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::boundary_ops::{CrossOps, OpCache, TraceOps, STANDOFF_SPACINGS};
use crate::geometry::{contour_strictly_inside, make_contour, Contour, Rect, ShapeSpec};
use crate::kernels;
use crate::linalg::{
    condest_1norm, dft_coeffs, gauss_legendre, lu_factor, trig_resample, CMat,
};
use crate::medium::{derive_wavenumbers, MediumParams};
use crate::{Result, WorkbenchError};

/// Width of the near-interface collar strips in multiples of the local node
/// spacing on the refined evaluation grid. Strictly larger than the
/// potential-evaluation standoff so the collar quadrature never requests a
/// refused point.
pub const COLLAR_SPACINGS: f64 = 3.2;

/// Upsampling factor for the near-boundary evaluation tier. Densities and
/// interface traces are trigonometric interpolants, so resampling them onto
/// a grid this much finer is exact up to the solver's own spectral accuracy,
/// and it shrinks the near-field standoff by the same factor. That matters
/// for resonant shells, whose fields vary fastest right at the interfaces.
pub const REFINE_FACTOR: usize = 8;

/// Gauss-Legendre order used per radial panel by the chart quadratures.
const GL_ORDER: usize = 16;

/// Floor protecting relative-error denominators.
const TINY: f64 = 1e-300;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

// ---------- sources ----------

/// Shape of the exterior excitation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SourceKind {
    /// Monopole: amplitude times the fundamental solution.
    Point,
    /// Point dipole with the given moment vector.
    Dipole { moment: [f64; 2] },
}

/// An exterior source: where it sits, what it is, and how strong it is.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub location: [f64; 2],
    pub amplitude: Complex64,
}

impl SourceSpec {
    pub fn point(location: [f64; 2], amplitude: Complex64) -> SourceSpec {
        SourceSpec {
            kind: SourceKind::Point,
            location,
            amplitude,
        }
    }

    pub fn dipole(location: [f64; 2], moment: [f64; 2], amplitude: Complex64) -> SourceSpec {
        SourceSpec {
            kind: SourceKind::Dipole { moment },
            location,
            amplitude,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.location[0].is_finite() && self.location[1].is_finite()) {
            return Err(WorkbenchError::InvalidParameter(
                "source location must be finite".into(),
            ));
        }
        if !self.amplitude.is_finite() {
            return Err(WorkbenchError::InvalidParameter(
                "source amplitude must be finite".into(),
            ));
        }
        if let SourceKind::Dipole { moment } = self.kind {
            let m = (moment[0] * moment[0] + moment[1] * moment[1]).sqrt();
            if !m.is_finite() || m == 0.0 {
                return Err(WorkbenchError::InvalidParameter(
                    "dipole moment must be finite and nonzero".into(),
                ));
            }
        }
        Ok(())
    }

    /// Net monopole strength; the coefficient of the logarithmic far field
    /// in the static limit. Zero for a dipole.
    pub fn total_strength(&self) -> Complex64 {
        match self.kind {
            SourceKind::Point => self.amplitude,
            SourceKind::Dipole { .. } => zero(),
        }
    }

    /// Free-space field of the source at x.
    pub fn free_field(&self, k: Complex64, x: [f64; 2]) -> Result<Complex64> {
        Ok(self.free_field_with_gradient(k, x)?.0)
    }

    /// Free-space field and its spatial gradient at x.
    pub fn free_field_with_gradient(
        &self,
        k: Complex64,
        x: [f64; 2],
    ) -> Result<(Complex64, [Complex64; 2])> {
        let dx = [x[0] - self.location[0], x[1] - self.location[1]];
        let r = (dx[0] * dx[0] + dx[1] * dx[1]).sqrt();
        let rp = kernels::radial_parts_2d(k, r)?;
        let rh = [dx[0] / r, dx[1] / r];
        let amp = self.amplitude;
        match self.kind {
            SourceKind::Point => {
                let value = amp * rp.g;
                let grad = [amp * rp.dg * rh[0], amp * rp.dg * rh[1]];
                Ok((value, grad))
            }
            SourceKind::Dipole { moment } => {
                // Field of (p . grad_z) G(x - z): the source-side directional
                // derivative flips the sign of the radial one.
                let pr = moment[0] * rh[0] + moment[1] * rh[1];
                let value = -amp * rp.dg * pr;
                let mut grad = [zero(); 2];
                for d in 0..2 {
                    let tang = moment[d] - pr * rh[d];
                    grad[d] = -amp * (rp.d2g * pr * rh[d] + rp.dg * tang / r);
                }
                Ok((value, grad))
            }
        }
    }
}

// ---------- source reduction ----------

/// Interface data produced by the source reduction on the outer contour.
///
/// The correction w = S_{k_e}[chi] (+ a constant in the static case) makes
/// v = free field + w vanish on the outer contour, so the Dirichlet datum
/// `trace_v` is a residue at roundoff level and the whole excitation enters
/// through the Neumann datum `dnu_v`.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    /// v on the outer contour nodes (the solve keeps it as data rather than
    /// assuming exact zeros).
    pub trace_v: Vec<Complex64>,
    /// Exterior-side normal derivative of v at the nodes.
    pub dnu_v: Vec<Complex64>,
    /// Correction density on the outer contour.
    pub chi: Vec<Complex64>,
    /// Additive constant of the static correction; zero for k != 0.
    pub static_offset: Complex64,
    /// max |v| on the contour relative to the peak free-field magnitude.
    pub dirichlet_residual: f64,
}

/// Build the reduced data for a source outside the outer contour.
///
/// For k != 0 the correction density solves V chi = -(free field). In the
/// static case the single layer is augmented with a constant and the
/// constraint that the total logarithmic moment of v vanishes, which fixes
/// both the capacity ambiguity and the bounded behaviour at infinity.
pub fn reduce_source(
    src: &SourceSpec,
    gamma2: &Contour,
    k_e: Complex64,
    cache: &mut OpCache,
) -> Result<BoundaryData> {
    src.validate()?;
    if gamma2.contains(src.location) {
        return Err(WorkbenchError::Geometry(
            "source must lie outside the outer contour".into(),
        ));
    }
    let (jn, dist) = gamma2.nearest_node(src.location);
    let required = STANDOFF_SPACINGS * gamma2.weights[jn];
    if dist < required {
        return Err(WorkbenchError::Geometry(format!(
            "source at distance {dist:.3e} from the outer contour; the reduction \
             needs at least {required:.3e} (the near-field standoff)"
        )));
    }

    let n = gamma2.n;
    let mut free = Vec::with_capacity(n);
    let mut dn_free = Vec::with_capacity(n);
    for j in 0..n {
        let (v, g) = src.free_field_with_gradient(k_e, gamma2.nodes[j])?;
        free.push(v);
        dn_free.push(g[0] * gamma2.normals[j][0] + g[1] * gamma2.normals[j][1]);
    }

    let t = cache.trace_ops(gamma2, k_e)?;
    let (chi, static_offset) = if k_e.norm() > 0.0 {
        let rhs: Vec<Complex64> = free.iter().map(|v| -v).collect();
        let lu = lu_factor(t.v.matrix.clone())?;
        (lu.solve(&rhs), zero())
    } else {
        // Augmented static system: [V 1; w^T 0][chi; c] = [-free; -q].
        let vmat = &t.v.matrix;
        let aug = CMat::from_fn(n + 1, n + 1, |i, j| {
            if i < n && j < n {
                vmat.at(i, j)
            } else if i < n && j == n {
                Complex64::new(1.0, 0.0)
            } else if i == n && j < n {
                Complex64::new(gamma2.weights[j], 0.0)
            } else {
                zero()
            }
        });
        let mut rhs: Vec<Complex64> = free.iter().map(|v| -v).collect();
        rhs.push(-src.total_strength());
        let lu = lu_factor(aug)?;
        let sol = lu.solve(&rhs);
        (sol[..n].to_vec(), sol[n])
    };

    let v_chi = t.v.matrix.matvec(&chi);
    let kstar_chi = t.kstar.matrix.matvec(&chi);
    let mut trace_v = Vec::with_capacity(n);
    let mut dnu_v = Vec::with_capacity(n);
    let mut peak = 0.0f64;
    let mut resid = 0.0f64;
    for j in 0..n {
        let tv = free[j] + v_chi[j] + static_offset;
        let dv = dn_free[j] + kstar_chi[j] - 0.5 * chi[j];
        peak = peak.max(free[j].norm());
        resid = resid.max(tv.norm());
        trace_v.push(tv);
        dnu_v.push(dv);
    }

    Ok(BoundaryData {
        trace_v,
        dnu_v,
        chi,
        static_offset,
        dirichlet_residual: resid / peak.max(TINY),
    })
}

// ---------- system assembly ----------

struct OpsBundle {
    t1e: Rc<TraceOps>,
    t1i: Rc<TraceOps>,
    t2e: Rc<TraceOps>,
    t2i: Rc<TraceOps>,
    /// Shell-wavenumber potentials from the outer contour traced on the inner.
    c12: Rc<CrossOps>,
    /// Shell-wavenumber potentials from the inner contour traced on the outer.
    c21: Rc<CrossOps>,
}

fn gather_ops(
    cache: &mut OpCache,
    gamma1: &Contour,
    gamma2: &Contour,
    k_e: Complex64,
    k_i: Complex64,
) -> Result<OpsBundle> {
    Ok(OpsBundle {
        t1e: cache.trace_ops(gamma1, k_e)?,
        t1i: cache.trace_ops(gamma1, k_i)?,
        t2e: cache.trace_ops(gamma2, k_e)?,
        t2i: cache.trace_ops(gamma2, k_i)?,
        c12: cache.cross_ops(gamma1, gamma2, k_i)?,
        c21: cache.cross_ops(gamma2, gamma1, k_i)?,
    })
}

fn check_orientations(gamma1: &Contour, gamma2: &Contour) -> Result<()> {
    if !gamma1.flipped {
        return Err(WorkbenchError::Geometry(
            "inner contour must carry the normal pointing into the core \
             (build it, then call flip_normal)"
                .into(),
        ));
    }
    if gamma2.flipped {
        return Err(WorkbenchError::Geometry(
            "outer contour must keep its outward normal".into(),
        ));
    }
    Ok(())
}

fn diagonal_blocks(t_e: &TraceOps, t_i: &TraceOps, tau: Complex64) -> CMat {
    // (1/2)(V_e + tau V_i) + K_i V_e - tau V_i K*_e.
    let mut block = t_i.k.matrix.matmul(&t_e.v.matrix);
    block.add_scaled(&t_e.v.matrix, Complex64::new(0.5, 0.0));
    block.add_scaled(&t_i.v.matrix, 0.5 * tau);
    let corr = t_i.v.matrix.matmul(&t_e.kstar.matrix);
    block.add_scaled(&corr, -tau);
    block
}

fn coupling_block(cross: &CrossOps, t_e_col: &TraceOps, tau: Complex64) -> CMat {
    // (tau/2) A - tau A K*_e + R V_e, all column operators living on the
    // contour that carries the coupled density.
    let mut block = cross.a.matrix.matmul(&t_e_col.kstar.matrix);
    block.scale(-tau);
    block.add_scaled(&cross.a.matrix, 0.5 * tau);
    let tail = cross.r.matrix.matmul(&t_e_col.v.matrix);
    block.add_scaled(&tail, Complex64::new(1.0, 0.0));
    block
}

/// Assemble the full two-contour block system for the densities [phi; psi].
///
/// `gamma1` must carry the into-core normal and `gamma2` the outward one,
/// the orientation every trace formula in this module assumes.
pub fn assemble_system(
    cache: &mut OpCache,
    gamma1: &Contour,
    gamma2: &Contour,
    k_e: Complex64,
    k_i: Complex64,
    tau: Complex64,
) -> Result<CMat> {
    check_orientations(gamma1, gamma2)?;
    let ops = gather_ops(cache, gamma1, gamma2, k_e, k_i)?;
    let n1 = gamma1.n;
    let n2 = gamma2.n;
    let a1 = diagonal_blocks(&ops.t1e, &ops.t1i, tau);
    let a2 = diagonal_blocks(&ops.t2e, &ops.t2i, tau);
    let m1 = coupling_block(&ops.c12, &ops.t2e, tau);
    let m2 = coupling_block(&ops.c21, &ops.t1e, tau);
    let mut full = CMat::zeros(n1 + n2, n1 + n2);
    full.set_block(0, 0, &a1);
    full.set_block(0, n1, &m1);
    full.set_block(n1, 0, &m2);
    full.set_block(n1, n1, &a2);
    Ok(full)
}

fn build_rhs(
    ops: &OpsBundle,
    data: &BoundaryData,
    tau: Complex64,
) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
    let f2: Vec<Complex64> = data.trace_v.clone();
    let g2: Vec<Complex64> = data.dnu_v.iter().map(|d| tau * d).collect();
    // rhs1 = A1 g2 - R1 f2 (the inner-contour data f1, g1 vanish by the
    // source reduction).
    let a_g2 = ops.c12.a.matrix.matvec(&g2);
    let r_f2 = ops.c12.r.matrix.matvec(&f2);
    let rhs1: Vec<Complex64> = a_g2.iter().zip(&r_f2).map(|(a, r)| a - r).collect();
    // rhs2 = -f2/2 - K_i f2 + V_i g2 on the outer contour.
    let k_f2 = ops.t2i.k.matrix.matvec(&f2);
    let v_g2 = ops.t2i.v.matrix.matvec(&g2);
    let rhs2: Vec<Complex64> = (0..f2.len())
        .map(|j| -0.5 * f2[j] - k_f2[j] + v_g2[j])
        .collect();
    (rhs1, rhs2, f2, g2)
}

// ---------- solution ----------

/// Which of the three regions a point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Core,
    Shell,
    Exterior,
}

/// Shell H1 norm with its ingredients, as reported by
/// [`TransmissionSolution::shell_h1`].
#[derive(Clone, Copy, Debug)]
pub struct ShellNorm {
    pub h1: f64,
    /// Squared L2 norm over the full shell, collar strips included.
    pub l2_sq: f64,
    /// Squared H1 seminorm, evaluated exactly from the interface Cauchy data
    /// through the Green identity.
    pub seminorm_sq: f64,
    /// Portion of `l2_sq` contributed by the two collar strips.
    pub collar_l2_sq: f64,
    /// Widths of the inner and outer collar strips.
    pub standoff_inner: f64,
    pub standoff_outer: f64,
}

/// Outcome of the weighted energy balance across the whole configuration.
#[derive(Clone, Copy, Debug)]
pub struct EnergyAudit {
    /// Sum over regions of weight * (grad term - k^2 mass term), volumes by
    /// independent quadrature, with a small ball around the source excised.
    pub weighted_interior: Complex64,
    /// Flux integral of (d_r u3) conj(u3) over the outer audit circle.
    pub outer_flux: Complex64,
    /// Flux integral of (d_n u3) conj(u3) over the excised ball boundary,
    /// with the normal pointing away from the source.
    pub source_flux: Complex64,
    /// Radius of the excised ball.
    pub excision_radius: f64,
    /// Mismatch between interior and (outer - source) flux, relative to the
    /// largest of the three terms.
    pub residual: f64,
}

/// A solved transmission problem with everything needed to reconstruct the
/// fields, take norms, and audit the solve.
#[derive(Clone, Debug)]
pub struct TransmissionSolution {
    pub medium: MediumParams,
    pub k_e: Complex64,
    pub k_i: Complex64,
    pub tau: Complex64,
    /// Inner contour with the into-core normal used by every stored vector.
    pub gamma1: Contour,
    pub gamma2: Contour,
    pub source: SourceSpec,
    pub data: BoundaryData,
    /// Core density (k_e single layer on the inner contour).
    pub phi: Vec<Complex64>,
    /// Radiating exterior density (k_e single layer on the outer contour).
    pub psi: Vec<Complex64>,
    /// Shell Cauchy data: normal derivative and trace on the inner contour.
    pub a1: Vec<Complex64>,
    pub b1: Vec<Complex64>,
    /// Shell Cauchy data on the outer contour.
    pub a2: Vec<Complex64>,
    pub b2: Vec<Complex64>,
    /// Shell trace and normal derivative recomputed from the representation
    /// formula on each contour (diagnostics; should reproduce b and a).
    pub v2_inner: Vec<Complex64>,
    pub dn_inner: Vec<Complex64>,
    pub v2_outer: Vec<Complex64>,
    pub dn_outer: Vec<Complex64>,
    /// Assembled right-hand side pair of the block system.
    pub rhs_tilde: (Vec<Complex64>, Vec<Complex64>),
    /// One-norm condition estimate of the assembled system.
    pub condition_estimate: f64,
    /// Relative 2-norm residual of the linear solve. Large values near the
    /// lossless limit are the expected resonance signal and are surfaced
    /// here rather than treated as failures.
    pub solve_residual: f64,
    /// Relative sup-norm gap between the representation trace and the
    /// Dirichlet data; roundoff-level by construction.
    pub trace_mismatch: f64,
    /// Same gap for the normal derivative; a genuine discretization-error
    /// indicator that shrinks under refinement.
    pub flux_mismatch: f64,
    /// For circular interfaces with an essentially real wavenumber, the
    /// smallest |J_m| over the relevant mode range at the spurious-resonance
    /// arguments (core Dirichlet modes of the shell wavenumber, outer-disk
    /// Dirichlet modes of the exterior wavenumber). Small values flag a
    /// nearby representation resonance; None when not applicable.
    pub spurious_mode_proximity: Option<f64>,
    /// Near-boundary evaluation tier: the same contours and layer densities
    /// resampled onto a grid REFINE_FACTOR times finer.
    refined: RefinedTier,
}

/// Densities and traces resampled onto the fine evaluation grid.
#[derive(Clone, Debug)]
struct RefinedTier {
    gamma1: Contour,
    gamma2: Contour,
    phi: Vec<Complex64>,
    a1: Vec<Complex64>,
    b1: Vec<Complex64>,
    a2: Vec<Complex64>,
    b2: Vec<Complex64>,
    /// psi + chi combined, the single exterior layer.
    combined: Vec<Complex64>,
}

fn rel_inf(got: &[Complex64], want: &[Complex64]) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (g, w) in got.iter().zip(want) {
        diff = diff.max((g - w).norm());
        scale = scale.max(w.norm());
    }
    diff / scale.max(TINY)
}

/// Solve the transmission problem for the given medium, nested contours and
/// exterior source.
///
/// The inner contour may be passed in either orientation; it is reoriented
/// so its normal points into the core. Requires omega > 0: the quasi-static
/// regime is served by the separable reference solvers, not the
/// boundary-element path.
pub fn solve_transmission(
    med: &MediumParams,
    gamma1: &Contour,
    gamma2: &Contour,
    src: &SourceSpec,
    cache: &mut OpCache,
) -> Result<TransmissionSolution> {
    if med.dim != 2 {
        return Err(WorkbenchError::InvalidParameter(
            "the boundary-element solver is two-dimensional; use the ball \
             reference solver for dim = 3"
                .into(),
        ));
    }
    if med.omega == 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "the boundary-element solver needs omega > 0; quasi-static sweeps \
             run through the separable reference engines"
                .into(),
        ));
    }
    let (k_e, k_i, tau) = derive_wavenumbers(med)?;
    if gamma2.flipped {
        return Err(WorkbenchError::Geometry(
            "outer contour must keep its outward normal".into(),
        ));
    }
    let g1f = if gamma1.flipped {
        gamma1.clone()
    } else {
        gamma1.flip_normal()
    };
    if !contour_strictly_inside(&g1f, gamma2) {
        return Err(WorkbenchError::Geometry(
            "inner contour must lie strictly inside the outer contour".into(),
        ));
    }

    let data = reduce_source(src, gamma2, k_e, cache)?;
    let ops = gather_ops(cache, &g1f, gamma2, k_e, k_i)?;
    let n1 = g1f.n;
    let n2 = gamma2.n;

    let matrix = assemble_system(cache, &g1f, gamma2, k_e, k_i, tau)?;
    let (rhs1, rhs2, f2, g2) = build_rhs(&ops, &data, tau);
    let rhs_tilde = (rhs1.clone(), rhs2.clone());
    let mut rhs = rhs1;
    rhs.extend_from_slice(&rhs2);

    let norm1 = matrix.norm1();
    let lu = lu_factor(matrix.clone())?;
    let sol = lu.solve(&rhs);
    let condition_estimate = condest_1norm(&lu, norm1);
    let applied = matrix.matvec(&sol);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for j in 0..rhs.len() {
        num += (applied[j] - rhs[j]).norm_sqr();
        den += rhs[j].norm_sqr();
    }
    let solve_residual = num.sqrt() / den.sqrt().max(TINY);

    let phi = sol[..n1].to_vec();
    let psi = sol[n1..].to_vec();

    // Interface Cauchy data from the jump relations of the two k_e layers.
    let b1 = ops.t1e.v.matrix.matvec(&phi);
    let ks_phi = ops.t1e.kstar.matrix.matvec(&phi);
    let a1: Vec<Complex64> = (0..n1).map(|j| tau * (ks_phi[j] - 0.5 * phi[j])).collect();
    let v_psi = ops.t2e.v.matrix.matvec(&psi);
    let b2: Vec<Complex64> = (0..n2).map(|j| v_psi[j] + f2[j]).collect();
    let ks_psi = ops.t2e.kstar.matrix.matvec(&psi);
    let a2: Vec<Complex64> = (0..n2)
        .map(|j| tau * (ks_psi[j] - 0.5 * psi[j]) + g2[j])
        .collect();

    // Shell traces from the representation formula, on both contours.
    let v1i = &ops.t1i;
    let v2i = &ops.t2i;
    let c12 = &ops.c12;
    let c21 = &ops.c21;

    let va1 = v1i.v.matrix.matvec(&a1);
    let kb1 = v1i.k.matrix.matvec(&b1);
    let aa2 = c12.a.matrix.matvec(&a2);
    let rb2 = c12.r.matrix.matvec(&b2);
    let v2_inner: Vec<Complex64> = (0..n1)
        .map(|j| va1[j] - kb1[j] + 0.5 * b1[j] + aa2[j] - rb2[j])
        .collect();
    let ka1 = v1i.kstar.matrix.matvec(&a1);
    let nb1 = v1i.n.matrix.matvec(&b1);
    let ba2 = c12.b.matrix.matvec(&a2);
    let sb2 = c12.s.matrix.matvec(&b2);
    let dn_inner: Vec<Complex64> = (0..n1)
        .map(|j| ka1[j] + 0.5 * a1[j] - nb1[j] + ba2[j] - sb2[j])
        .collect();

    let va2 = v2i.v.matrix.matvec(&a2);
    let kb2 = v2i.k.matrix.matvec(&b2);
    let aa1 = c21.a.matrix.matvec(&a1);
    let rb1 = c21.r.matrix.matvec(&b1);
    let v2_outer: Vec<Complex64> = (0..n2)
        .map(|j| va2[j] - kb2[j] + 0.5 * b2[j] + aa1[j] - rb1[j])
        .collect();
    let ka2 = v2i.kstar.matrix.matvec(&a2);
    let nb2 = v2i.n.matrix.matvec(&b2);
    let ba1 = c21.b.matrix.matvec(&a1);
    let sb1 = c21.s.matrix.matvec(&b1);
    let dn_outer: Vec<Complex64> = (0..n2)
        .map(|j| ka2[j] + 0.5 * a2[j] - nb2[j] + ba1[j] - sb1[j])
        .collect();

    let trace_mismatch = rel_inf(&v2_inner, &b1).max(rel_inf(&v2_outer, &b2));
    let flux_mismatch = rel_inf(&dn_inner, &a1).max(rel_inf(&dn_outer, &a2));

    let combined: Vec<Complex64> = psi.iter().zip(&data.chi).map(|(p, c)| p + c).collect();
    let g1_fine = make_contour(g1f.shape.clone(), REFINE_FACTOR * n1)?.flip_normal();
    let g2_fine = make_contour(gamma2.shape.clone(), REFINE_FACTOR * n2)?;
    let refined = RefinedTier {
        phi: trig_resample(&phi, REFINE_FACTOR * n1),
        a1: trig_resample(&a1, REFINE_FACTOR * n1),
        b1: trig_resample(&b1, REFINE_FACTOR * n1),
        a2: trig_resample(&a2, REFINE_FACTOR * n2),
        b2: trig_resample(&b2, REFINE_FACTOR * n2),
        combined: trig_resample(&combined, REFINE_FACTOR * n2),
        gamma1: g1_fine,
        gamma2: g2_fine,
    };

    let spurious_mode_proximity = spurious_proximity(&g1f, gamma2, k_e, k_i);

    Ok(TransmissionSolution {
        medium: *med,
        k_e,
        k_i,
        tau,
        gamma1: g1f,
        gamma2: gamma2.clone(),
        source: *src,
        data,
        phi,
        psi,
        a1,
        b1,
        a2,
        b2,
        v2_inner,
        dn_inner,
        v2_outer,
        dn_outer,
        rhs_tilde,
        condition_estimate,
        solve_residual,
        trace_mismatch,
        flux_mismatch,
        spurious_mode_proximity,
        refined,
    })
}

/// Distance proxy to the nearest spurious representation resonance for
/// circular interfaces: the interior single-layer ansatz degenerates when
/// the wavenumber argument hits a Bessel zero. Only meaningful for
/// essentially real wavenumbers; complex loss moves the zeros off the axis.
fn spurious_proximity(
    gamma1: &Contour,
    gamma2: &Contour,
    k_e: Complex64,
    k_i: Complex64,
) -> Option<f64> {
    let r1 = match gamma1.shape {
        ShapeSpec::Circle { radius, .. } => radius,
        _ => return None,
    };
    let r2 = match gamma2.shape {
        ShapeSpec::Circle { radius, .. } => radius,
        _ => return None,
    };
    let min_j = |k: Complex64, radius: f64| -> Option<f64> {
        if k.im.abs() > 1e-12 * k.norm().max(1.0) || k.re <= 0.0 {
            return None;
        }
        let arg = k * radius;
        let nmax = (arg.norm().ceil() as usize) + 12;
        let seqs = crate::bessel::cyl_seqs(nmax, arg).ok()?;
        seqs.j
            .iter()
            .map(|v| v.norm())
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            })
    };
    let candidates = [min_j(k_i, r1), min_j(k_e, r2)];
    candidates
        .iter()
        .flatten()
        .fold(None, |acc: Option<f64>, &v| {
            Some(acc.map_or(v, |a| a.min(v)))
        })
}

/// One evaluated field point.
#[derive(Clone, Copy, Debug)]
pub struct FieldSample {
    pub value: Complex64,
    pub gradient: Option<[Complex64; 2]>,
}

impl TransmissionSolution {
    /// Classify a point. Unreliable within a node spacing of a contour, like
    /// the winding test it is built on.
    pub fn region_of(&self, p: [f64; 2]) -> Region {
        if self.gamma1.contains(p) {
            Region::Core
        } else if self.gamma2.contains(p) {
            Region::Shell
        } else {
            Region::Exterior
        }
    }

    /// Pick the evaluation view of one contour for the given point: the
    /// coarse solve grid when the point clears its standoff, the refined
    /// grid when it only clears the finer one, an error otherwise.
    fn pick_view<'a>(coarse: &'a Contour, fine: &'a Contour, p: [f64; 2]) -> Result<bool> {
        let (j0, d0) = coarse.nearest_node(p);
        if d0 >= STANDOFF_SPACINGS * coarse.weights[j0] {
            return Ok(false);
        }
        let (j1, d1) = fine.nearest_node(p);
        let required = STANDOFF_SPACINGS * fine.weights[j1];
        if d1 >= required {
            Ok(true)
        } else {
            Err(WorkbenchError::NearFieldRefused {
                distance: d1,
                required,
            })
        }
    }

    /// Accumulate S[single] - D[double] from one contour at one point.
    fn layer_contrib(
        c: &Contour,
        single: &[Complex64],
        double: Option<&[Complex64]>,
        k: Complex64,
        p: [f64; 2],
        want_gradient: bool,
        val: &mut Complex64,
        grad: &mut [Complex64; 2],
    ) -> Result<()> {
        for j in 0..c.n {
            let dxv = [p[0] - c.nodes[j][0], p[1] - c.nodes[j][1]];
            let r = (dxv[0] * dxv[0] + dxv[1] * dxv[1]).sqrt();
            let rp = kernels::radial_parts_2d(k, r)?;
            let rh = [dxv[0] / r, dxv[1] / r];
            let sw = single[j] * c.weights[j];
            *val += rp.g * sw;
            if want_gradient {
                grad[0] += rp.dg * rh[0] * sw;
                grad[1] += rp.dg * rh[1] * sw;
            }
            if let Some(dd) = double {
                let nu = c.normals[j];
                let rn = rh[0] * nu[0] + rh[1] * nu[1];
                let dw = dd[j] * c.weights[j];
                *val += rp.dg * rn * dw;
                if want_gradient {
                    for d in 0..2 {
                        grad[d] +=
                            (rp.d2g * rh[d] * rn + rp.dg / r * (nu[d] - rh[d] * rn)) * dw;
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluate the field of one region at a batch of points that all belong
    /// to it. Points on the wrong side of an interface are rejected, as are
    /// points inside the refined near-field standoff. The shell evaluation
    /// fuses the four layer potentials so the kernel factors are computed
    /// once per point-node pair.
    pub fn region_values(
        &self,
        region: Region,
        points: &[[f64; 2]],
        want_gradient: bool,
    ) -> Result<Vec<FieldSample>> {
        let mut out = Vec::with_capacity(points.len());
        for &p in points {
            let actual = self.region_of(p);
            if actual != region {
                return Err(WorkbenchError::InvalidParameter(format!(
                    "point ({}, {}) lies in {actual:?}, not in the requested {region:?}",
                    p[0], p[1]
                )));
            }
            let mut val = zero();
            let mut grad = [zero(); 2];
            match region {
                Region::Core => {
                    let fine = Self::pick_view(&self.gamma1, &self.refined.gamma1, p)?;
                    let (c, dens) = if fine {
                        (&self.refined.gamma1, &self.refined.phi)
                    } else {
                        (&self.gamma1, &self.phi)
                    };
                    Self::layer_contrib(c, dens, None, self.k_e, p, want_gradient, &mut val, &mut grad)?;
                }
                Region::Shell => {
                    let fine1 = Self::pick_view(&self.gamma1, &self.refined.gamma1, p)?;
                    let (c1, a1, b1) = if fine1 {
                        (&self.refined.gamma1, &self.refined.a1, &self.refined.b1)
                    } else {
                        (&self.gamma1, &self.a1, &self.b1)
                    };
                    Self::layer_contrib(c1, a1, Some(b1), self.k_i, p, want_gradient, &mut val, &mut grad)?;
                    let fine2 = Self::pick_view(&self.gamma2, &self.refined.gamma2, p)?;
                    let (c2, a2, b2) = if fine2 {
                        (&self.refined.gamma2, &self.refined.a2, &self.refined.b2)
                    } else {
                        (&self.gamma2, &self.a2, &self.b2)
                    };
                    Self::layer_contrib(c2, a2, Some(b2), self.k_i, p, want_gradient, &mut val, &mut grad)?;
                }
                Region::Exterior => {
                    let fine = Self::pick_view(&self.gamma2, &self.refined.gamma2, p)?;
                    let coarse_combined;
                    let (c, dens) = if fine {
                        (&self.refined.gamma2, &self.refined.combined)
                    } else {
                        coarse_combined = self.exterior_combined();
                        (&self.gamma2, &coarse_combined)
                    };
                    Self::layer_contrib(c, dens, None, self.k_e, p, want_gradient, &mut val, &mut grad)?;
                    let (fv, fg) = self.source.free_field_with_gradient(self.k_e, p)?;
                    val += fv + self.data.static_offset;
                    grad[0] += fg[0];
                    grad[1] += fg[1];
                }
            }
            out.push(FieldSample {
                value: val,
                gradient: want_gradient.then_some(grad),
            });
        }
        Ok(out)
    }

    fn exterior_combined(&self) -> Vec<Complex64> {
        self.psi
            .iter()
            .zip(&self.data.chi)
            .map(|(p, c)| p + c)
            .collect()
    }

    /// Signed clearance of a point past the refined evaluation standoff:
    /// positive means the point can be evaluated, negative means it would be
    /// refused. Useful for building quadrature masks that hug the
    /// interfaces as closely as the evaluator allows.
    pub fn evaluation_clearance(&self, p: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        for c in [&self.refined.gamma1, &self.refined.gamma2] {
            let (j, d) = c.nearest_node(p);
            best = best.min(d - STANDOFF_SPACINGS * c.weights[j]);
        }
        best
    }

    /// Field value at a point, tagged with the region that produced it.
    pub fn eval(&self, p: [f64; 2]) -> Result<(Region, Complex64)> {
        let region = self.region_of(p);
        let s = self.region_values(region, &[p], false)?;
        Ok((region, s[0].value))
    }

    /// Field value and gradient at a point.
    pub fn eval_gradient(&self, p: [f64; 2]) -> Result<(Region, Complex64, [Complex64; 2])> {
        let region = self.region_of(p);
        let s = self.region_values(region, &[p], true)?;
        Ok((region, s[0].value, s[0].gradient.expect("gradient requested")))
    }

    /// Exterior response with the free field removed: u3 + w.
    pub fn eval_scattered(&self, p: [f64; 2]) -> Result<Complex64> {
        if self.region_of(p) != Region::Exterior {
            return Err(WorkbenchError::InvalidParameter(
                "the scattered field is defined in the exterior region".into(),
            ));
        }
        let mut val = zero();
        let mut grad = [zero(); 2];
        let fine = Self::pick_view(&self.gamma2, &self.refined.gamma2, p)?;
        if fine {
            Self::layer_contrib(
                &self.refined.gamma2,
                &self.refined.combined,
                None,
                self.k_e,
                p,
                false,
                &mut val,
                &mut grad,
            )?;
        } else {
            let combined = self.exterior_combined();
            Self::layer_contrib(
                &self.gamma2,
                &combined,
                None,
                self.k_e,
                p,
                false,
                &mut val,
                &mut grad,
            )?;
        }
        Ok(val + self.data.static_offset)
    }

    /// L2 norm of the total field over the circle of the given radius
    /// (trapezoid rule, spectrally accurate for smooth exteriors).
    pub fn far_l2(&self, radius: f64, samples: usize) -> Result<f64> {
        let (center, _, r2) = self.circle_geometry()?;
        if radius <= r2 {
            return Err(WorkbenchError::InvalidParameter(format!(
                "far-field radius {radius} must exceed the outer radius {r2}"
            )));
        }
        let pts = ring_points(center, radius, samples);
        let vals = self.region_values(Region::Exterior, &pts, false)?;
        let mut acc = 0.0f64;
        for v in &vals {
            acc += v.value.norm_sqr();
        }
        Ok((acc * TWO_PI * radius / samples as f64).sqrt())
    }

    /// Flux integral of (d_r u) conj(u) over the circle of the given radius,
    /// with the outward radial direction.
    pub fn ring_flux(&self, radius: f64, samples: usize) -> Result<Complex64> {
        let (center, r1, r2) = self.circle_geometry()?;
        let region = if radius < r1 {
            Region::Core
        } else if radius < r2 {
            Region::Shell
        } else {
            Region::Exterior
        };
        let pts = ring_points(center, radius, samples);
        let vals = self.region_values(region, &pts, true)?;
        let mut acc = zero();
        for (p, v) in pts.iter().zip(&vals) {
            let rh = [(p[0] - center[0]) / radius, (p[1] - center[1]) / radius];
            let g = v.gradient.expect("gradient requested");
            let dn = g[0] * rh[0] + g[1] * rh[1];
            acc += dn * v.value.conj();
        }
        Ok(acc * TWO_PI * radius / samples as f64)
    }

    fn circle_geometry(&self) -> Result<([f64; 2], f64, f64)> {
        let (c1, r1) = match self.gamma1.shape {
            ShapeSpec::Circle { radius, center } => (center, radius),
            _ => {
                return Err(WorkbenchError::InvalidParameter(
                    "this diagnostic needs concentric circular interfaces".into(),
                ))
            }
        };
        let (c2, r2) = match self.gamma2.shape {
            ShapeSpec::Circle { radius, center } => (center, radius),
            _ => {
                return Err(WorkbenchError::InvalidParameter(
                    "this diagnostic needs concentric circular interfaces".into(),
                ))
            }
        };
        let off = ((c1[0] - c2[0]).powi(2) + (c1[1] - c2[1]).powi(2)).sqrt();
        if off > 1e-12 * r2 {
            return Err(WorkbenchError::InvalidParameter(
                "this diagnostic needs concentric circular interfaces".into(),
            ));
        }
        Ok((c1, r1, r2))
    }

    fn collar_width(c: &Contour) -> f64 {
        COLLAR_SPACINGS * c.weights.iter().cloned().fold(0.0, f64::max)
    }

    /// Mass and gradient integrals over an annular chart of one region:
    /// returns (int |u|^2, int |grad u|^2).
    fn annulus_mass_and_grad(
        &self,
        region: Region,
        center: [f64; 2],
        r_lo: f64,
        r_hi: f64,
        panels: usize,
        n_theta: usize,
    ) -> Result<(f64, f64)> {
        let (xg, wg) = gauss_legendre(GL_ORDER);
        let dt = TWO_PI / n_theta as f64;
        let step = (r_hi - r_lo) / panels as f64;
        let mut mass = 0.0f64;
        let mut grad = 0.0f64;
        for p in 0..panels {
            let a = r_lo + step * p as f64;
            for (x, w) in xg.iter().zip(&wg) {
                let r = a + 0.5 * step * (x + 1.0);
                let wr = 0.5 * step * w * r * dt;
                let pts = ring_points(center, r, n_theta);
                let vals = self.region_values(region, &pts, true)?;
                for v in &vals {
                    let g = v.gradient.expect("gradient requested");
                    mass += v.value.norm_sqr() * wr;
                    grad += (g[0].norm_sqr() + g[1].norm_sqr()) * wr;
                }
            }
        }
        Ok((mass, grad))
    }

    /// Collar-strip integrals of |u|^2 and |grad u|^2 along one interface
    /// side, by a derivative-corrected two-point Hermite rule in the
    /// wall-normal coordinate. Wall values and derivatives come from the
    /// exact interface traces; the far edge of the strip is evaluated through
    /// the layer potentials just outside the standoff, with the far-edge
    /// Hessian rebuilt from tangential spectral derivatives and the PDE.
    #[allow(clippy::too_many_arguments)]
    fn collar_side(
        &self,
        contour: &Contour,
        region: Region,
        sign_into: f64,
        wall_value: &[Complex64],
        wall_dn_stored: &[Complex64],
        delta: f64,
        ksq: Complex64,
    ) -> Result<(f64, f64)> {
        let n = contour.n;
        // Effective frame: nu_eff = c_or * stored normal points out of the
        // region, and the signed curvature flips with it, which keeps the
        // frame identities dt/ds = -kappa nu, dnu/ds = kappa t intact.
        let c_or = -sign_into;
        // Wall tangential derivatives (arclength), spectrally.
        let d_param = spectral_param_derivative(wall_value);
        let b_wall: Vec<Complex64> = (0..n).map(|j| d_param[j] / contour.speed[j]).collect();
        let a_wall: Vec<Complex64> = wall_dn_stored.iter().map(|d| c_or * d).collect();
        let da_param = spectral_param_derivative(&a_wall);
        let db_param = spectral_param_derivative(&b_wall);

        // Far-edge samples at x_j - delta * nu_eff, one per node; the rays
        // trace out a parallel curve whose frame matches the wall frame.
        let mut pts = Vec::with_capacity(n);
        let mut met = Vec::with_capacity(n);
        for j in 0..n {
            let kappa = c_or * contour.curvature[j];
            let m = 1.0 - delta * kappa;
            if m <= 0.2 {
                return Err(WorkbenchError::InvalidParameter(
                    "collar strip wider than the local curvature radius; refine \
                     the contour"
                        .into(),
                ));
            }
            met.push(m);
            let nu_eff = [c_or * contour.normals[j][0], c_or * contour.normals[j][1]];
            pts.push([
                contour.nodes[j][0] - delta * nu_eff[0],
                contour.nodes[j][1] - delta * nu_eff[1],
            ]);
        }
        let far = self.region_values(region, &pts, true)?;

        // Far-edge frame components and their tangential derivatives.
        let mut a_far = Vec::with_capacity(n);
        let mut b_far = Vec::with_capacity(n);
        for j in 0..n {
            let nu_eff = [c_or * contour.normals[j][0], c_or * contour.normals[j][1]];
            let th = [
                contour.velocity[j][0] / contour.speed[j],
                contour.velocity[j][1] / contour.speed[j],
            ];
            let g = far[j].gradient.expect("gradient requested");
            a_far.push(g[0] * nu_eff[0] + g[1] * nu_eff[1]);
            b_far.push(g[0] * th[0] + g[1] * th[1]);
        }
        let da_far = spectral_param_derivative(&a_far);
        let db_far = spectral_param_derivative(&b_far);

        let mut int_f = 0.0f64;
        let mut int_g = 0.0f64;
        for j in 0..n {
            let kappa = c_or * contour.curvature[j];
            let u0 = wall_value[j];
            let a0 = a_wall[j];
            let b0 = b_wall[j];
            let ap = da_param[j] / contour.speed[j];
            let bp = db_param[j] / contour.speed[j];
            // Hessian entries in the wall frame via the PDE.
            let htt = bp + kappa * a0;
            let hnn = -ksq * u0 - htt;
            let hnt = ap - kappa * b0;

            let f0 = u0.norm_sqr();
            let fp0 = -2.0 * (u0.conj() * a0).re;
            let g0 = a0.norm_sqr() + b0.norm_sqr();
            let gp0 = -2.0 * (a0.conj() * hnn + b0.conj() * hnt).re;

            // Same construction on the parallel curve at depth delta: its
            // speed is the wall speed times the metric factor and its
            // curvature is kappa / metric.
            let u1 = far[j].value;
            let a1 = a_far[j];
            let b1 = b_far[j];
            let k_off = kappa / met[j];
            let ap1 = da_far[j] / (contour.speed[j] * met[j]);
            let bp1 = db_far[j] / (contour.speed[j] * met[j]);
            let htt1 = bp1 + k_off * a1;
            let hnn1 = -ksq * u1 - htt1;
            let hnt1 = ap1 - k_off * b1;

            let f1 = u1.norm_sqr();
            let fp1 = -2.0 * (u1.conj() * a1).re;
            let g1 = a1.norm_sqr() + b1.norm_sqr();
            let gp1 = -2.0 * (a1.conj() * hnn1 + b1.conj() * hnt1).re;

            // Hermite rule on [0, delta] with the area metric (1 - s kappa)
            // folded into the integrand and its endpoint derivatives.
            let m1 = met[j];
            let hermite = |v0: f64, d0: f64, v1: f64, d1: f64| -> f64 {
                let c0 = v0;
                let c1 = v1 * m1;
                let cd0 = d0 - kappa * v0;
                let cd1 = d1 * m1 - kappa * v1;
                delta * 0.5 * (c0 + c1) + delta * delta / 12.0 * (cd0 - cd1)
            };
            int_f += contour.weights[j] * hermite(f0, fp0, f1, fp1);
            int_g += contour.weights[j] * hermite(g0, gp0, g1, gp1);
        }
        Ok((int_f, int_g))
    }

    /// H1 norm of the shell field over the entire shell.
    ///
    /// The seminorm comes from the Green identity applied to the exact
    /// interface traces, so the resonant gradient growth hugging the
    /// interfaces is captured without quadrature there. Only the mass term
    /// needs volume quadrature: a polar chart over the standoff-safe annulus,
    /// plus derivative-corrected collar strips along both interfaces.
    pub fn shell_h1(&self, radial_panels: usize, n_theta: usize) -> Result<ShellNorm> {
        let (center, r1, r2) = self.circle_geometry()?;
        let d1 = Self::collar_width(&self.refined.gamma1);
        let d2 = Self::collar_width(&self.refined.gamma2);
        if r1 + d1 >= r2 - d2 {
            return Err(WorkbenchError::InvalidParameter(
                "collar strips overlap: the shell is too thin for this node count".into(),
            ));
        }
        let (mass_safe, _) = self.annulus_mass_and_grad(
            Region::Shell,
            center,
            r1 + d1,
            r2 - d2,
            radial_panels,
            n_theta,
        )?;
        let ksq = self.k_i * self.k_i;
        let (f_in, _) = self.collar_side(
            &self.gamma1,
            Region::Shell,
            -1.0,
            &self.v2_inner,
            &self.dn_inner,
            d1,
            ksq,
        )?;
        let (f_out, _) = self.collar_side(
            &self.gamma2,
            Region::Shell,
            -1.0,
            &self.v2_outer,
            &self.dn_outer,
            d2,
            ksq,
        )?;
        let l2_sq = mass_safe + f_in + f_out;

        let mut flux = zero();
        for j in 0..self.gamma1.n {
            flux += self.gamma1.weights[j] * self.dn_inner[j] * self.v2_inner[j].conj();
        }
        for j in 0..self.gamma2.n {
            flux += self.gamma2.weights[j] * self.dn_outer[j] * self.v2_outer[j].conj();
        }
        let seminorm_sq = (flux + ksq * l2_sq).re;

        Ok(ShellNorm {
            h1: (seminorm_sq.max(0.0) + l2_sq).sqrt(),
            l2_sq,
            seminorm_sq,
            collar_l2_sq: f_in + f_out,
            standoff_inner: d1,
            standoff_outer: d2,
        })
    }

    /// Green-identity residual for an annular patch lying inside one region:
    /// compares the volume integral of |grad u|^2 - k^2 |u|^2 with the net
    /// boundary flux. A disk is requested with r_lo = 0. Everything is
    /// independent quadrature, so the residual measures how well the
    /// reconstructed field satisfies the PDE.
    pub fn green_identity_residual(
        &self,
        r_lo: f64,
        r_hi: f64,
        panels: usize,
        n_theta: usize,
    ) -> Result<f64> {
        let (center, r1, r2) = self.circle_geometry()?;
        let r_mid = 0.5 * (r_lo + r_hi);
        let region = if r_mid < r1 {
            Region::Core
        } else if r_mid < r2 {
            Region::Shell
        } else {
            Region::Exterior
        };
        let ksq = match region {
            Region::Shell => self.k_i * self.k_i,
            _ => self.k_e * self.k_e,
        };
        let inner_lo = if r_lo == 0.0 { 1e-6 * r_hi } else { r_lo };
        let (mass, grad) =
            self.annulus_mass_and_grad(region, center, inner_lo, r_hi, panels, n_theta)?;
        let volume = Complex64::new(grad, 0.0) - ksq * mass;
        let flux_hi = self.ring_flux(r_hi, n_theta)?;
        let flux_lo = if r_lo == 0.0 {
            zero()
        } else {
            self.ring_flux(r_lo, n_theta)?
        };
        let net = flux_hi - flux_lo;
        Ok((volume - net).norm() / net.norm().max(volume.norm()).max(TINY))
    }

    /// Weighted energy balance across all three regions.
    ///
    /// Each region contributes weight * (int |grad u|^2 - k^2 int |u|^2) with
    /// weights (1, 1/tau, 1) for exterior, shell and core. The audit circle
    /// encloses both the shell and the source, so a small ball around the
    /// source point is excised from the exterior volume and its boundary
    /// flux appears on the other side of the balance: in the continuum,
    ///
    ///   interior sum = (outer circle flux) - (excised ball flux).
    ///
    /// Every transmission condition participates in the interface
    /// cancellations, so the residual exercises the reconstructed fields,
    /// the interface data and the material weights together.
    pub fn energy_residual(
        &self,
        audit_radius: f64,
        panels: usize,
        n_theta: usize,
    ) -> Result<EnergyAudit> {
        let (center, r1, r2) = self.circle_geometry()?;
        let d1 = Self::collar_width(&self.refined.gamma1);
        let d2 = Self::collar_width(&self.refined.gamma2);
        let zx = self.source.location[0] - center[0];
        let zy = self.source.location[1] - center[1];
        let zd = (zx * zx + zy * zy).sqrt();
        let clearance = (audit_radius - zd).min(zd - r2 - d2);
        if clearance <= 1e-3 * r2 {
            return Err(WorkbenchError::InvalidParameter(format!(
                "audit circle radius {audit_radius} must enclose the source \
                 (distance {zd:.3}) with clearance; the source must also \
                 clear the outer interface"
            )));
        }
        let half_width = 0.6 * clearance;
        let excision = 0.35 * half_width;
        let ke2 = self.k_e * self.k_e;
        let ki2 = self.k_i * self.k_i;

        // Core: safe disk plus the collar against the inner contour. The
        // core-side wall data follow from the interface conditions:
        // value b1, normal derivative a1/tau along the stored (into-core)
        // normal.
        let (m_core, g_core) = self.annulus_mass_and_grad(
            Region::Core,
            center,
            1e-6 * r1,
            r1 - d1,
            panels,
            n_theta,
        )?;
        let inv_tau = Complex64::new(1.0, 0.0) / self.tau;
        let core_dn: Vec<Complex64> = self.a1.iter().map(|a| a * inv_tau).collect();
        let (cf, cg) = self.collar_side(
            &self.gamma1,
            Region::Core,
            1.0,
            &self.b1,
            &core_dn,
            d1,
            ke2,
        )?;
        let vol_core = Complex64::new(g_core + cg, 0.0) - ke2 * (m_core + cf);

        // Shell: safe annulus plus both collars.
        let (m_sh, g_sh) = self.annulus_mass_and_grad(
            Region::Shell,
            center,
            r1 + d1,
            r2 - d2,
            panels,
            n_theta,
        )?;
        let (sf1, sg1) = self.collar_side(
            &self.gamma1,
            Region::Shell,
            -1.0,
            &self.v2_inner,
            &self.dn_inner,
            d1,
            ki2,
        )?;
        let (sf2, sg2) = self.collar_side(
            &self.gamma2,
            Region::Shell,
            -1.0,
            &self.v2_outer,
            &self.dn_outer,
            d2,
            ki2,
        )?;
        let vol_shell = Complex64::new(g_sh + sg1 + sg2, 0.0) - ki2 * (m_sh + sf1 + sf2);

        // Exterior, minus the source ball. Decompose into two full annuli
        // (below and above the source radius), the part of the band
        // |r - zd| < half_width away from the source sector, and the polar
        // rectangle around the source with the ball carved out. The
        // exterior-side wall data on the outer interface are value b2,
        // normal derivative a2/tau along the stored (outward) normal.
        let (m_lo, g_lo) = self.annulus_mass_and_grad(
            Region::Exterior,
            center,
            r2 + d2,
            zd - half_width,
            panels,
            n_theta,
        )?;
        let (m_hi, g_hi) = self.annulus_mass_and_grad(
            Region::Exterior,
            center,
            zd + half_width,
            audit_radius,
            panels,
            n_theta,
        )?;
        let theta_z = zy.atan2(zx);
        let beta = half_width / zd;
        let (m_band, g_band) =
            self.band_mass_and_grad(center, zd, half_width, theta_z, beta)?;
        let (m_sect, g_sect) = self.source_sector_mass_and_grad(
            center, zd, half_width, theta_z, beta, excision,
        )?;
        let ext_dn: Vec<Complex64> = self.a2.iter().map(|a| a * inv_tau).collect();
        let (ef, eg) = self.collar_side(
            &self.gamma2,
            Region::Exterior,
            1.0,
            &self.b2,
            &ext_dn,
            d2,
            ke2,
        )?;
        let m_ext = m_lo + m_hi + m_band + m_sect + ef;
        let g_ext = g_lo + g_hi + g_band + g_sect + eg;
        let vol_ext = Complex64::new(g_ext, 0.0) - ke2 * m_ext;

        let weighted_interior = vol_ext + inv_tau * vol_shell + vol_core;
        let outer_flux = self.ring_flux(audit_radius, n_theta)?;
        let source_flux = self.source_ball_flux(excision, n_theta.max(128))?;
        let net = outer_flux - source_flux;
        let scale = outer_flux
            .norm()
            .max(source_flux.norm())
            .max(weighted_interior.norm())
            .max(TINY);
        Ok(EnergyAudit {
            weighted_interior,
            outer_flux,
            source_flux,
            excision_radius: excision,
            residual: (weighted_interior - net).norm() / scale,
        })
    }

    /// Exterior mass and gradient integrals over the band |r - zd| < a with
    /// the source sector |theta - theta_z| < beta removed. Gauss-Legendre in
    /// both directions, with the angular range split into panels.
    fn band_mass_and_grad(
        &self,
        center: [f64; 2],
        zd: f64,
        a: f64,
        theta_z: f64,
        beta: f64,
    ) -> Result<(f64, f64)> {
        let (xg, wg) = gauss_legendre(GL_ORDER);
        let theta_panels = 16;
        let arc = TWO_PI - 2.0 * beta;
        let dtp = arc / theta_panels as f64;
        let mut mass = 0.0f64;
        let mut grad = 0.0f64;
        for q in 0..theta_panels {
            let t0 = theta_z + beta + dtp * q as f64;
            for (xt, wt) in xg.iter().zip(&wg) {
                let t = t0 + 0.5 * dtp * (xt + 1.0);
                let wth = 0.5 * dtp * wt;
                let mut pts = Vec::with_capacity(GL_ORDER);
                let mut wr = Vec::with_capacity(GL_ORDER);
                for (xr, wrr) in xg.iter().zip(&wg) {
                    let r = zd + a * xr;
                    wr.push(a * wrr * r * wth);
                    pts.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
                }
                let vals = self.region_values(Region::Exterior, &pts, true)?;
                for (v, w) in vals.iter().zip(&wr) {
                    let g = v.gradient.expect("gradient requested");
                    mass += v.value.norm_sqr() * w;
                    grad += (g[0].norm_sqr() + g[1].norm_sqr()) * w;
                }
            }
        }
        Ok((mass, grad))
    }

    /// Exterior mass and gradient integrals over the polar rectangle
    /// |r - zd| < a, |theta - theta_z| < beta with the ball of the excision
    /// radius around the source removed. The remainder is star shaped with
    /// respect to the source point, so it is covered by source-centered
    /// sectors running from the excision circle to the first boundary hit,
    /// split at the angles of the rectangle corners.
    fn source_sector_mass_and_grad(
        &self,
        center: [f64; 2],
        zd: f64,
        a: f64,
        theta_z: f64,
        beta: f64,
        rs: f64,
    ) -> Result<(f64, f64)> {
        let z = [
            center[0] + zd * theta_z.cos(),
            center[1] + zd * theta_z.sin(),
        ];
        // Angles of the four corners as seen from the source.
        let mut cuts = Vec::with_capacity(6);
        for (rr, tt) in [
            (zd - a, theta_z - beta),
            (zd - a, theta_z + beta),
            (zd + a, theta_z - beta),
            (zd + a, theta_z + beta),
        ] {
            let p = [center[0] + rr * tt.cos(), center[1] + rr * tt.sin()];
            cuts.push((p[1] - z[1]).atan2(p[0] - z[0]));
        }
        cuts.sort_by(f64::total_cmp);
        let first = cuts[0];
        cuts.push(first + TWO_PI);

        // First positive boundary hit along the ray z + rho e(psi): the two
        // circles around the shell center and the two radial cut lines.
        let hit = |psi: f64| -> f64 {
            let e = [psi.cos(), psi.sin()];
            let zc = [z[0] - center[0], z[1] - center[1]];
            let ze = zc[0] * e[0] + zc[1] * e[1];
            let mut best = f64::INFINITY;
            // Outer circle r = zd + a: always one positive root.
            let disc_o = ze * ze + (zd + a) * (zd + a) - zd * zd;
            best = best.min(-ze + disc_o.sqrt());
            // Inner circle r = zd - a: first root if the ray enters it.
            let disc_i = ze * ze - (zd * zd - (zd - a) * (zd - a));
            if disc_i > 0.0 && ze < 0.0 {
                let rho = -ze - disc_i.sqrt();
                if rho > 0.0 {
                    best = best.min(rho);
                }
            }
            // Radial cut lines through the shell center.
            for tt in [theta_z - beta, theta_z + beta] {
                let nrm = [-tt.sin(), tt.cos()];
                let den = e[0] * nrm[0] + e[1] * nrm[1];
                if den.abs() > 1e-14 {
                    let rho = -(zc[0] * nrm[0] + zc[1] * nrm[1]) / den;
                    if rho > 0.0 {
                        best = best.min(rho);
                    }
                }
            }
            best
        };

        let (xg, wg) = gauss_legendre(GL_ORDER);
        let mut mass = 0.0f64;
        let mut grad = 0.0f64;
        for w in cuts.windows(2) {
            let span = w[1] - w[0];
            if span < 1e-12 {
                continue;
            }
            let psi_panels = 1 + (span / 0.35) as usize;
            let dpp = span / psi_panels as f64;
            for q in 0..psi_panels {
                let p0 = w[0] + dpp * q as f64;
                for (xp, wp) in xg.iter().zip(&wg) {
                    let psi = p0 + 0.5 * dpp * (xp + 1.0);
                    let wpsi = 0.5 * dpp * wp;
                    let rho_max = hit(psi);
                    if !(rho_max.is_finite() && rho_max > rs) {
                        continue;
                    }
                    let step = 0.5 * (rho_max - rs);
                    let mut pts = Vec::with_capacity(2 * GL_ORDER);
                    let mut wr = Vec::with_capacity(2 * GL_ORDER);
                    for half in 0..2 {
                        let base = rs + step * half as f64;
                        for (xr, wrr) in xg.iter().zip(&wg) {
                            let rho = base + 0.5 * step * (xr + 1.0);
                            wr.push(0.5 * step * wrr * rho * wpsi);
                            pts.push([z[0] + rho * psi.cos(), z[1] + rho * psi.sin()]);
                        }
                    }
                    let vals = self.region_values(Region::Exterior, &pts, true)?;
                    for (v, wq) in vals.iter().zip(&wr) {
                        let g = v.gradient.expect("gradient requested");
                        mass += v.value.norm_sqr() * wq;
                        grad += (g[0].norm_sqr() + g[1].norm_sqr()) * wq;
                    }
                }
            }
        }
        Ok((mass, grad))
    }

    /// Flux integral of (d_n u3) conj(u3) over the circle of the given
    /// radius around the source, normal pointing away from the source.
    fn source_ball_flux(&self, rs: f64, samples: usize) -> Result<Complex64> {
        let z = self.source.location;
        let pts = ring_points(z, rs, samples);
        let vals = self.region_values(Region::Exterior, &pts, true)?;
        let mut acc = zero();
        for (p, v) in pts.iter().zip(&vals) {
            let rh = [(p[0] - z[0]) / rs, (p[1] - z[1]) / rs];
            let g = v.gradient.expect("gradient requested");
            acc += (g[0] * rh[0] + g[1] * rh[1]) * v.value.conj();
        }
        Ok(acc * TWO_PI * rs / samples as f64)
    }
}

fn ring_points(center: [f64; 2], radius: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|j| {
            let t = TWO_PI * j as f64 / n as f64;
            [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
        })
        .collect()
}

/// Derivative with respect to the 2 pi periodic grid parameter of the
/// trigonometric interpolant, evaluated back on the nodes. The Nyquist mode
/// carries no derivative information and is dropped.
fn spectral_param_derivative(values: &[Complex64]) -> Vec<Complex64> {
    let n = values.len();
    let coeffs = dft_coeffs(values);
    let mut out = vec![zero(); n];
    let half = n / 2;
    for (m, c) in coeffs.iter().enumerate() {
        let freq = if m < half {
            m as f64
        } else if m == half {
            0.0
        } else {
            m as f64 - n as f64
        };
        if freq == 0.0 {
            continue;
        }
        let fac = Complex64::new(0.0, freq) * c;
        for (j, o) in out.iter_mut().enumerate() {
            let t = TWO_PI * (j as f64) / (n as f64);
            let ph = freq * t;
            *o += fac * Complex64::new(ph.cos(), ph.sin());
        }
    }
    out
}

// ---------- generic H1 quadratures ----------

/// H1 norm over an annular chart, for any field closure returning value and
/// gradient. Radial Gauss-Legendre panels, angular trapezoid.
pub fn h1_annulus_chart<F>(
    center: [f64; 2],
    r_lo: f64,
    r_hi: f64,
    radial_panels: usize,
    n_theta: usize,
    mut field: F,
) -> Result<f64>
where
    F: FnMut([f64; 2]) -> Result<(Complex64, [Complex64; 2])>,
{
    if !(r_lo >= 0.0 && r_hi > r_lo) || radial_panels == 0 || n_theta < 4 {
        return Err(WorkbenchError::InvalidParameter(
            "annulus chart needs 0 <= r_lo < r_hi, panels >= 1 and n_theta >= 4".into(),
        ));
    }
    let (xg, wg) = gauss_legendre(GL_ORDER);
    let dt = TWO_PI / n_theta as f64;
    let step = (r_hi - r_lo) / radial_panels as f64;
    let mut acc = 0.0f64;
    for p in 0..radial_panels {
        let a = r_lo + step * p as f64;
        for (x, w) in xg.iter().zip(&wg) {
            let r = a + 0.5 * step * (x + 1.0);
            let wr = 0.5 * step * w * r * dt;
            for j in 0..n_theta {
                let t = dt * j as f64;
                let pt = [center[0] + r * t.cos(), center[1] + r * t.sin()];
                let (v, g) = field(pt)?;
                acc += (v.norm_sqr() + g[0].norm_sqr() + g[1].norm_sqr()) * wr;
            }
        }
    }
    Ok(acc.sqrt())
}

/// H1 norm over the masked cells of a Cartesian grid: midpoint rule on every
/// cell whose center passes the mask. First-order accurate at the mask
/// boundary, which is what a jagged mask supports; use the chart quadrature
/// when the domain is an annulus.
pub fn h1_masked_grid<M, F>(
    rect: &Rect,
    nx: usize,
    ny: usize,
    mut mask: M,
    mut field: F,
) -> Result<f64>
where
    M: FnMut([f64; 2]) -> bool,
    F: FnMut([f64; 2]) -> Result<(Complex64, [Complex64; 2])>,
{
    if nx == 0 || ny == 0 || rect.width() <= 0.0 || rect.height() <= 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "masked grid needs a nonempty rectangle and positive cell counts".into(),
        ));
    }
    let hx = rect.width() / nx as f64;
    let hy = rect.height() / ny as f64;
    let cell = hx * hy;
    let mut acc = 0.0f64;
    for i in 0..nx {
        for j in 0..ny {
            let p = [
                rect.x0 + (i as f64 + 0.5) * hx,
                rect.y0 + (j as f64 + 0.5) * hy,
            ];
            if !mask(p) {
                continue;
            }
            let (v, g) = field(p)?;
            acc += (v.norm_sqr() + g[0].norm_sqr() + g[1].norm_sqr()) * cell;
        }
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_ops::{eval_potential, LayerKind};
    use crate::medium::TauConvention;
    use crate::oracle::{annulus_solve_dynamic, AnnulusConfig};
    use std::f64::consts::PI;

    fn c64(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn circle(radius: f64, n: usize) -> Contour {
        make_contour(
            ShapeSpec::Circle {
                radius,
                center: [0.0, 0.0],
            },
            n,
        )
        .unwrap()
    }

    fn medium(eta: Complex64, b: Complex64) -> MediumParams {
        MediumParams {
            omega: 1.0,
            mu0: 1.0,
            a_e: 1.0,
            eta,
            b,
            dim: 2,
            tau_convention: TauConvention::Reciprocal,
        }
    }

    /// Standard test problem: circles of radii 2 and 4, point source at
    /// (6, 0), matching the pinned separable-reference configuration.
    fn solve_standard(
        eta: Complex64,
        b: Complex64,
        n: usize,
    ) -> (TransmissionSolution, OpCache) {
        let med = medium(eta, b);
        let g1 = circle(2.0, n);
        let g2 = circle(4.0, n);
        let src = SourceSpec::point([6.0, 0.0], c64(1.0, 0.0));
        let mut cache = OpCache::new();
        let sol = solve_transmission(&med, &g1, &g2, &src, &mut cache).unwrap();
        (sol, cache)
    }

    #[test]
    fn free_field_gradients_match_finite_differences() {
        const FD_TOL: f64 = 1e-5;
        let h = 1e-4;
        let k = c64(1.3, 0.0);
        let sources = [
            SourceSpec::point([1.0, -2.0], c64(0.7, 0.0)),
            SourceSpec::dipole([1.0, -2.0], [0.6, -1.1], c64(1.3, 0.0)),
        ];
        for src in sources {
            for k in [k, c64(0.0, 0.0)] {
                let x = [2.5, 1.0];
                let (_, grad) = src.free_field_with_gradient(k, x).unwrap();
                for d in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[d] += h;
                    xm[d] -= h;
                    let fd = (src.free_field(k, xp).unwrap() - src.free_field(k, xm).unwrap())
                        / (2.0 * h);
                    assert!(
                        (fd - grad[d]).norm() < FD_TOL,
                        "source {src:?}, k {k}, component {d}: fd {fd}, grad {}",
                        grad[d]
                    );
                }
            }
        }
    }

    #[test]
    fn dipole_field_is_directional_derivative_of_point_field() {
        const FD_TOL: f64 = 1e-5;
        let h = 1e-4;
        let k = c64(0.9, 0.0);
        let z = [0.5, 1.5];
        let m = [0.8, -0.4];
        let x = [3.0, -1.0];
        let dip = SourceSpec::dipole(z, m, c64(1.0, 0.0)).free_field(k, x).unwrap();
        let plus = SourceSpec::point([z[0] + h * m[0], z[1] + h * m[1]], c64(1.0, 0.0))
            .free_field(k, x)
            .unwrap();
        let minus = SourceSpec::point([z[0] - h * m[0], z[1] - h * m[1]], c64(1.0, 0.0))
            .free_field(k, x)
            .unwrap();
        let fd = (plus - minus) / (2.0 * h);
        assert!(
            (fd - dip).norm() < FD_TOL,
            "dipole {dip} vs source-shift fd {fd}"
        );
    }

    #[test]
    fn static_source_reduction_matches_image_formula() {
        // Exterior Laplace problem with zero trace on the circle of radius 4:
        // the classical image-point formula gives the reduced field in
        // closed form.
        const PROBE_TOL: f64 = 1e-10;
        const DATA_TOL: f64 = 1e-8;
        let radius = 4.0;
        let z = [5.0, 0.0];
        let zsq = z[0] * z[0] + z[1] * z[1];
        let zimg = [radius * radius * z[0] / zsq, radius * radius * z[1] / zsq];
        let image = |x: [f64; 2]| -> f64 {
            let dz = ((x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2)).sqrt();
            let di = ((x[0] - zimg[0]).powi(2) + (x[1] - zimg[1]).powi(2)).sqrt();
            -(dz.ln() - (di * zsq.sqrt() / radius).ln()) / (2.0 * PI)
        };

        let g2 = circle(radius, 256);
        let src = SourceSpec::point(z, c64(1.0, 0.0));
        let mut cache = OpCache::new();
        let data = reduce_source(&src, &g2, c64(0.0, 0.0), &mut cache).unwrap();
        assert!(
            data.dirichlet_residual < 1e-12,
            "trace residual {}",
            data.dirichlet_residual
        );
        // The augmented constraint kills the logarithmic moment.
        let moment: Complex64 = (0..g2.n).map(|j| g2.weights[j] * data.chi[j]).sum();
        assert!(
            (moment + c64(1.0, 0.0)).norm() < 1e-12,
            "log moment {moment}"
        );

        for probe in [[7.0, 2.0], [-5.0, 4.0], [4.5, -4.5]] {
            let layer = eval_potential(
                LayerKind::Single,
                &g2,
                &data.chi,
                c64(0.0, 0.0),
                &[probe],
                false,
            )
            .unwrap()[0]
                .value;
            let v = src.free_field(c64(0.0, 0.0), probe).unwrap()
                + layer
                + data.static_offset;
            let want = image(probe);
            assert!(
                (v - c64(want, 0.0)).norm() < PROBE_TOL,
                "probe {probe:?}: got {v}, image {want}"
            );
        }

        // Neumann data against a radial finite difference of the image form.
        let fd_h = 1e-6;
        for j in (0..g2.n).step_by(37) {
            let x = g2.nodes[j];
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let xp = [x[0] * (r + fd_h) / r, x[1] * (r + fd_h) / r];
            let xm = [x[0] * (r - fd_h) / r, x[1] * (r - fd_h) / r];
            let fd = (image(xp) - image(xm)) / (2.0 * fd_h);
            assert!(
                (data.dnu_v[j] - c64(fd, 0.0)).norm() < DATA_TOL,
                "node {j}: dnu {}, image fd {fd}",
                data.dnu_v[j]
            );
        }
    }

    #[test]
    fn dynamic_source_reduction_matches_soft_scattering_series() {
        // v = free field + correction vanishes on the circle, so it equals
        // the classical sound-soft scattering of the point source; compare
        // against the separation-of-variables series.
        const PROBE_TOL: f64 = 1e-9;
        let radius = 4.0;
        let k = c64(1.0, 0.0);
        let r0 = 6.0;
        let g2 = circle(radius, 256);
        let src = SourceSpec::point([r0, 0.0], c64(1.0, 0.0));
        let mut cache = OpCache::new();
        let data = reduce_source(&src, &g2, k, &mut cache).unwrap();
        assert!(
            data.dirichlet_residual < 1e-12,
            "trace residual {}",
            data.dirichlet_residual
        );

        let series = |x: [f64; 2]| -> Complex64 {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let th = x[1].atan2(x[0]);
            let sr = crate::bessel::cyl_seqs(60, k * radius).unwrap();
            let s0 = crate::bessel::cyl_seqs(60, k * r0).unwrap();
            let sx = crate::bessel::cyl_seqs(60, k * r).unwrap();
            let mut acc = zero();
            for m in 0..=60usize {
                let weight = if m == 0 { 1.0 } else { 2.0 * (m as f64 * th).cos() };
                let term = sr.j[m] / sr.h1[m] * s0.h1[m] * sx.h1[m];
                acc -= c64(0.25 * weight, 0.0) * c64(0.0, 1.0) * term;
            }
            acc
        };
        for probe in [[5.0, 0.5], [-4.8, 1.2], [0.0, 7.5]] {
            let layer = eval_potential(LayerKind::Single, &g2, &data.chi, k, &[probe], false)
                .unwrap()[0]
                .value;
            let v = src.free_field(k, probe).unwrap() + layer;
            let want = src.free_field(k, probe).unwrap() + series(probe);
            assert!(
                (v - want).norm() < PROBE_TOL,
                "probe {probe:?}: reduced {v}, series {want}, err {:.2e}",
                (v - want).norm()
            );
        }
    }

    #[test]
    fn matched_transmission_reproduces_the_free_field() {
        // tau = 1 (eta = 2 under the reciprocal convention) with b = 1 makes
        // the shell identical to the background; every region must carry the
        // unperturbed source field.
        const MATCH_TOL: f64 = 1e-8;
        let (sol, _) = solve_standard(c64(2.0, 0.0), c64(1.0, 0.0), 256);
        assert!((sol.tau - c64(1.0, 0.0)).norm() < 1e-14);
        assert!((sol.k_i - sol.k_e).norm() < 1e-14);
        let probes = [
            ([0.5, 0.3], Region::Core),
            ([-1.2, 0.8], Region::Core),
            ([2.7, 1.1], Region::Shell),
            ([-1.5, -2.5], Region::Shell),
            ([4.8, -0.6], Region::Exterior),
            ([-3.2, 4.1], Region::Exterior),
        ];
        for (p, want_region) in probes {
            let (region, value, grad) = sol.eval_gradient(p).unwrap();
            assert_eq!(region, want_region);
            let (fv, fg) = sol.source.free_field_with_gradient(sol.k_e, p).unwrap();
            assert!(
                (value - fv).norm() < MATCH_TOL,
                "value at {p:?}: got {value}, free {fv}, err {:.2e}",
                (value - fv).norm()
            );
            for d in 0..2 {
                assert!(
                    (grad[d] - fg[d]).norm() < 10.0 * MATCH_TOL,
                    "gradient component {d} at {p:?}: err {:.2e}",
                    (grad[d] - fg[d]).norm()
                );
            }
        }
    }

    #[test]
    fn block_actions_match_static_circle_symbols() {
        // At k = 0 on concentric circles every operator diagonalizes on
        // Fourier modes, giving closed-form symbols for all four blocks.
        // The inner contour carries the flipped normal, which turns the
        // constant-mode double-layer symbols positive there.
        const SYMBOL_TOL: f64 = 1e-9;
        let n = 128;
        let r1 = 2.0;
        let r2 = 3.0;
        let tau = c64(-2.0, 0.0);
        let g1 = circle(r1, n).flip_normal();
        let g2 = circle(r2, n);
        let mut cache = OpCache::new();
        let k0 = c64(0.0, 0.0);
        let full = assemble_system(&mut cache, &g1, &g2, k0, k0, tau).unwrap();

        let mode = |m: i64, c: &Contour| -> Vec<Complex64> {
            c.params
                .iter()
                .map(|t| {
                    let ph = m as f64 * t;
                    c64(ph.cos(), ph.sin())
                })
                .collect()
        };
        let one = c64(1.0, 0.0);
        for m in [0i64, 1, -1, 3, -7] {
            let a = m.unsigned_abs() as f64;
            let (sym_a1, sym_m1, sym_m2, sym_a2) = if m == 0 {
                (
                    c64(-r1 * r1.ln(), 0.0),
                    (tau - one) * c64(-r2 * r2.ln(), 0.0),
                    zero(),
                    tau * c64(-r2 * r2.ln(), 0.0),
                )
            } else {
                let ratio = (r1 / r2).powf(a);
                (
                    (one + tau) * r1 / (4.0 * a),
                    (tau - one) * 0.5 * ratio * r2 / (2.0 * a),
                    (tau - one) * 0.5 * ratio * r1 / (2.0 * a),
                    (one + tau) * r2 / (4.0 * a),
                )
            };

            let e1 = mode(m, &g1);
            let e2 = mode(m, &g2);
            let mut x = e1.clone();
            x.extend(std::iter::repeat(zero()).take(n));
            let y = full.matvec(&x);
            let scale = sym_a1.norm().max(sym_m2.norm()).max(1e-2);
            for j in 0..n {
                assert!(
                    (y[j] - sym_a1 * e1[j]).norm() < SYMBOL_TOL * scale.max(1.0),
                    "diagonal inner block, mode {m}, node {j}: got {}, want {}",
                    y[j],
                    sym_a1 * e1[j]
                );
                assert!(
                    (y[n + j] - sym_m2 * e2[j]).norm() < SYMBOL_TOL * scale.max(1.0),
                    "lower coupling block, mode {m}, node {j}: got {}, want {}",
                    y[n + j],
                    sym_m2 * e2[j]
                );
            }
            let mut x2 = vec![zero(); n];
            x2.extend(e2.iter().cloned());
            let y2 = full.matvec(&x2);
            for j in 0..n {
                assert!(
                    (y2[j] - sym_m1 * e1[j]).norm() < SYMBOL_TOL * scale.max(1.0),
                    "upper coupling block, mode {m}, node {j}: got {}, want {}",
                    y2[j],
                    sym_m1 * e1[j]
                );
                assert!(
                    (y2[n + j] - sym_a2 * e2[j]).norm() < SYMBOL_TOL * scale.max(1.0),
                    "diagonal outer block, mode {m}, node {j}: got {}, want {}",
                    y2[n + j],
                    sym_a2 * e2[j]
                );
            }
        }
    }

    #[test]
    fn solution_matches_separable_reference() {
        // Same configuration as the pinned separable-reference test:
        // eta = 0.5, b = 1, circles (2, 4), point source at (6, 0). Field
        // probes in all regions, the windowed shell H1 norm, and the far
        // norm all have to agree with the independent solver.
        const PROBE_TOL: f64 = 1e-6;
        const NORM_REL_TOL: f64 = 1e-6;
        let (sol, _) = solve_standard(c64(0.5, 0.0), c64(1.0, 0.0), 256);
        assert!(sol.solve_residual < 1e-12, "residual {}", sol.solve_residual);

        let med = medium(c64(0.5, 0.0), c64(1.0, 0.0));
        let cfg = AnnulusConfig::point(2.0, 4.0, 6.0);
        let reference = annulus_solve_dynamic(&cfg, &med).unwrap();

        let probes = [
            [0.5, 0.3],
            [-1.2, 0.8],
            [2.7, 1.1],
            [-1.5, -2.5],
            [4.8, -0.6],
            [-3.2, 4.1],
        ];
        for p in probes {
            let (_, got) = sol.eval(p).unwrap();
            let want = reference.eval(p[0], p[1]).unwrap();
            assert!(
                (got - want).norm() < PROBE_TOL,
                "probe {p:?}: bem {got}, reference {want}, err {:.2e}",
                (got - want).norm()
            );
        }

        let window = h1_annulus_chart([0.0, 0.0], 2.2, 3.8, 2, 96, |p| {
            let s = sol.region_values(Region::Shell, &[p], true).unwrap();
            Ok((s[0].value, s[0].gradient.unwrap()))
        })
        .unwrap();
        let window_ref = reference.shell_h1(2.2, 3.8).unwrap();
        assert!(
            (window - window_ref).abs() < NORM_REL_TOL * window_ref,
            "windowed shell H1: bem {window}, reference {window_ref}"
        );

        let far = sol.far_l2(10.0, 512).unwrap();
        let far_ref = reference.exterior_l2_on_circle(10.0).unwrap();
        assert!(
            (far - far_ref).abs() < NORM_REL_TOL * far_ref,
            "far L2: bem {far}, reference {far_ref}"
        );
    }

    #[test]
    fn shell_norms_match_reference_with_collar_correction() {
        // Full-shell H1 norms, collars included, against the separable
        // reference. The seminorm part is Green-exact, so the tolerance is
        // set by the collar mass quadrature.
        const NORM_REL_TOL: f64 = 1e-4;
        for (eta, b) in [
            (c64(2.0, 0.0), c64(1.0, 0.0)),
            (c64(0.5, 0.0), c64(1.0, 0.0)),
        ] {
            let (sol, _) = solve_standard(eta, b, 256);
            let norm = sol.shell_h1(3, 96).unwrap();
            let med = medium(eta, b);
            let cfg = AnnulusConfig::point(2.0, 4.0, 6.0);
            let reference = annulus_solve_dynamic(&cfg, &med).unwrap();
            let want = reference.shell_h1(2.0, 4.0).unwrap();
            assert!(
                (norm.h1 - want).abs() < NORM_REL_TOL * want,
                "eta {eta}: full shell H1 {} vs reference {want}",
                norm.h1
            );
            assert!(norm.collar_l2_sq > 0.0 && norm.collar_l2_sq < norm.l2_sq);
            assert!(norm.standoff_inner > 0.0 && norm.standoff_outer > 0.0);
        }
    }

    #[test]
    fn interface_traces_satisfy_matching_and_converge() {
        // The Dirichlet match is enforced by the system, so it sits at
        // solver accuracy; the Neumann match measures discretization error
        // and must shrink spectrally under refinement.
        let (coarse, _) = solve_standard(c64(0.5, 0.0), c64(1.0, 0.0), 128);
        let (fine, _) = solve_standard(c64(0.5, 0.0), c64(1.0, 0.0), 256);
        assert!(
            coarse.trace_mismatch < 1e-10,
            "coarse trace mismatch {}",
            coarse.trace_mismatch
        );
        assert!(
            fine.trace_mismatch < 1e-10,
            "fine trace mismatch {}",
            fine.trace_mismatch
        );
        assert!(
            fine.flux_mismatch < 1e-6,
            "fine flux mismatch {}",
            fine.flux_mismatch
        );
        assert!(
            fine.flux_mismatch < 0.25 * coarse.flux_mismatch,
            "flux mismatch did not converge: coarse {:.3e}, fine {:.3e}",
            coarse.flux_mismatch,
            fine.flux_mismatch
        );
    }

    #[test]
    fn reconstructed_fields_satisfy_the_pde_pointwise() {
        // Five-point stencil check of (Laplacian + k^2) u = 0 in each region.
        const STENCIL_TOL: f64 = 1e-6;
        let h = 2e-3;
        let (sol, _) = solve_standard(c64(0.5, 0.0), c64(1.0, 0.0), 256);
        let cases = [
            ([0.6, 0.2], sol.k_e),
            ([2.9, 0.7], sol.k_i),
            ([5.1, -1.3], sol.k_e),
        ];
        for (p, k) in cases {
            let c = sol.eval(p).unwrap().1;
            let xp = sol.eval([p[0] + h, p[1]]).unwrap().1;
            let xm = sol.eval([p[0] - h, p[1]]).unwrap().1;
            let yp = sol.eval([p[0], p[1] + h]).unwrap().1;
            let ym = sol.eval([p[0], p[1] - h]).unwrap().1;
            let lap = (xp + xm + yp + ym - 4.0 * c) / (h * h);
            let resid = (lap + k * k * c).norm() / (k * k * c).norm().max(1.0);
            assert!(
                resid < STENCIL_TOL,
                "PDE residual at {p:?}: {resid:.3e} (k = {k})"
            );
        }
    }

    #[test]
    fn densities_decay_spectrally() {
        const TAIL_REL: f64 = 1e-8;
        let (sol, _) = solve_standard(c64(0.5, 0.0), c64(1.0, 0.0), 256);
        for (name, density) in [("phi", &sol.phi), ("psi", &sol.psi)] {
            let coeffs = dft_coeffs(density);
            let n = coeffs.len();
            let peak = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let quarter = n / 4;
            let tail = (0..n)
                .filter(|&m| {
                    let freq = if m <= n / 2 { m } else { n - m };
                    freq >= quarter
                })
                .map(|m| coeffs[m].norm())
                .fold(0.0, f64::max);
            assert!(
                tail < TAIL_REL * peak,
                "{name}: tail {tail:.3e} vs peak {peak:.3e}"
            );
        }
    }

    #[test]
    fn reciprocity_holds_between_exterior_points() {
        // Unit point sources: the total field is symmetric under swapping
        // source and receiver when both sit in the exterior.
        const RECIP_REL_TOL: f64 = 1e-6;
        let med = medium(c64(0.3, 0.2), c64(-1.0, 0.0));
        let g1 = circle(2.0, 128);
        let g2 = circle(4.0, 128);
        let za = [6.0, 0.0];
        let zb = [0.0, 7.0];
        let mut cache = OpCache::new();
        let sol_a =
            solve_transmission(&med, &g1, &g2, &SourceSpec::point(za, c64(1.0, 0.0)), &mut cache).unwrap();
        let sol_b =
            solve_transmission(&med, &g1, &g2, &SourceSpec::point(zb, c64(1.0, 0.0)), &mut cache).unwrap();
        let uab = sol_a.eval(zb).unwrap().1;
        let uba = sol_b.eval(za).unwrap().1;
        assert!(
            (uab - uba).norm() < RECIP_REL_TOL * uab.norm(),
            "reciprocity: u({zb:?}; {za:?}) = {uab}, u({za:?}; {zb:?}) = {uba}"
        );
    }

    #[test]
    fn green_identity_holds_in_each_region() {
        // Independent volume quadrature against ring fluxes, one annular
        // patch per region, at a lossy resonant parameter where the shell
        // field is steep at the interfaces.
        const GREEN_TOL: f64 = 1e-6;
        // The outermost patch edge passes half a unit from the source, so
        // the trapezoid rings there need the finer angular resolution.
        let (sol, _) = solve_standard(c64(0.0, 0.01), c64(-1.0, 0.0), 256);
        let patches = [(0.0, 1.6), (2.2, 3.7), (4.5, 5.5)];
        for (lo, hi) in patches {
            let resid = sol.green_identity_residual(lo, hi, 3, 256).unwrap();
            assert!(
                resid < GREEN_TOL,
                "Green residual on ({lo}, {hi}): {resid:.3e}"
            );
        }
    }

    #[test]
    fn weighted_energy_identity_balances_across_interfaces() {
        // Full-region volumes (charts plus collars) against the audit
        // circle enclosing shell and source, with material weights
        // (1, 1/tau, 1) and the source ball excised. A one-percent
        // perturbation of the shell Cauchy data must break the balance by
        // orders of magnitude more than the quadrature floor.
        const BALANCE_TOL: f64 = 1e-6;
        let (sol, _) = solve_standard(c64(0.0, 0.01), c64(-1.0, 0.0), 256);
        let audit = sol.energy_residual(7.5, 4, 96).unwrap();
        assert!(
            audit.residual < BALANCE_TOL,
            "energy residual {:.3e}, interior {}, outer {}, source {}",
            audit.residual,
            audit.weighted_interior,
            audit.outer_flux,
            audit.source_flux
        );

        let mut broken = sol.clone();
        for arr in [
            &mut broken.a1,
            &mut broken.b1,
            &mut broken.a2,
            &mut broken.b2,
            &mut broken.v2_inner,
            &mut broken.dn_inner,
            &mut broken.v2_outer,
            &mut broken.dn_outer,
        ] {
            for v in arr.iter_mut() {
                *v *= c64(1.01, 0.0);
            }
        }
        for arr in [
            &mut broken.refined.a1,
            &mut broken.refined.b1,
            &mut broken.refined.a2,
            &mut broken.refined.b2,
        ] {
            for v in arr.iter_mut() {
                *v *= c64(1.01, 0.0);
            }
        }
        let bad = broken.energy_residual(7.5, 4, 96).unwrap();
        assert!(
            bad.residual > 1e-3,
            "perturbed residual {:.3e} vs baseline {:.3e}",
            bad.residual,
            audit.residual
        );
    }

    #[test]
    fn sobolev_weighted_system_stays_invertible_under_refinement() {
        // Two-sided weighting by the Fourier multiplier (1 + m^2)^(1/4)
        // renders the block system order-zero; its smallest singular value
        // must stay bounded away from zero as the grids refine.
        let tau = c64(-0.5, 0.0);
        let k_e = c64(1.0, 0.0);
        let k_i = c64(0.0, 0.5f64.sqrt());
        let sigma = |n: usize| -> f64 {
            let g1 = circle(2.0, n).flip_normal();
            let g2 = circle(4.0, n);
            let mut cache = OpCache::new();
            let full = assemble_system(&mut cache, &g1, &g2, k_e, k_i, tau).unwrap();
            let lift = sobolev_lift(n);
            let mut weighted = CMat::zeros(2 * n, 2 * n);
            for (bi, bj) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
                let sub = CMat::from_fn(n, n, |i, j| full.at(bi * n + i, bj * n + j));
                let w = lift.matmul(&sub).matmul(&lift);
                weighted.set_block(bi * n, bj * n, &w);
            }
            let lu = lu_factor(weighted).unwrap();
            crate::linalg::sigma_min_estimate(&lu, 40, 7)
        };
        let s64 = sigma(64);
        let s128 = sigma(128);
        let s256 = sigma(256);
        assert!(s64 > 1e-6, "sigma(64) = {s64:.3e}");
        assert!(
            s128 > 0.5 * s64,
            "sigma dropped under refinement: {s64:.3e} -> {s128:.3e}"
        );
        assert!(
            s256 > 0.5 * s128,
            "sigma dropped under refinement: {s128:.3e} -> {s256:.3e}"
        );
    }

    /// Dense Fourier-multiplier lift (1 + m^2)^(1/4) on the n-point grid.
    fn sobolev_lift(n: usize) -> CMat {
        let mut lift = CMat::zeros(n, n);
        let half = n / 2;
        for m in 0..n {
            let freq = if m <= half { m as f64 } else { m as f64 - n as f64 };
            let d = (1.0 + freq * freq).powf(0.25);
            for j in 0..n {
                for l in 0..n {
                    let ph = freq * TWO_PI * (j as f64 - l as f64) / n as f64;
                    let e = c64(ph.cos(), ph.sin());
                    *lift.at_mut(j, l) += c64(d / n as f64, 0.0) * e;
                }
            }
        }
        lift
    }

    #[test]
    fn chart_and_grid_norms_agree_on_closed_forms() {
        // Constant field over the annulus 1 < r < 2: H1 = sqrt(3 pi).
        let one_field =
            |_p: [f64; 2]| -> Result<(Complex64, [Complex64; 2])> { Ok((c64(1.0, 0.0), [zero(); 2])) };
        let chart_one = h1_annulus_chart([0.0, 0.0], 1.0, 2.0, 2, 32, one_field).unwrap();
        let want_one = (3.0 * PI).sqrt();
        assert!(
            (chart_one - want_one).abs() < 1e-12 * want_one,
            "constant: chart {chart_one}, closed form {want_one}"
        );

        // u = ln r over the same annulus. Mass: the antiderivative of
        // r ln^2 r is (r^2/2)(ln^2 r - ln r) + r^2/4, giving
        // 2 pi (2 ln^2 2 - 2 ln 2 + 3/4); the gradient term adds 2 pi ln 2.
        let log_field = |p: [f64; 2]| -> Result<(Complex64, [Complex64; 2])> {
            let r2 = p[0] * p[0] + p[1] * p[1];
            Ok((
                c64(0.5 * r2.ln(), 0.0),
                [c64(p[0] / r2, 0.0), c64(p[1] / r2, 0.0)],
            ))
        };
        let chart_log = h1_annulus_chart([0.0, 0.0], 1.0, 2.0, 4, 32, log_field).unwrap();
        let l2 = std::f64::consts::LN_2;
        let want_log = (TWO_PI * (2.0 * l2 * l2 - l2 + 0.75)).sqrt();
        assert!(
            (chart_log - want_log).abs() < 1e-10 * want_log,
            "log field: chart {chart_log}, closed form {want_log}"
        );

        // Plane wave over the annulus: grid with an annulus mask against the
        // chart, first-order mask accuracy.
        let k = 1.1;
        let wave = |p: [f64; 2]| -> Result<(Complex64, [Complex64; 2])> {
            let ph = k * p[0];
            let v = c64(ph.cos(), ph.sin());
            Ok((v, [c64(0.0, k) * v, zero()]))
        };
        let chart_wave = h1_annulus_chart([0.0, 0.0], 1.0, 2.0, 2, 64, wave).unwrap();
        let rect = Rect {
            x0: -2.0,
            x1: 2.0,
            y0: -2.0,
            y1: 2.0,
        };
        let grid_wave = h1_masked_grid(
            &rect,
            800,
            800,
            |p| {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                r > 1.0 && r < 2.0
            },
            wave,
        )
        .unwrap();
        assert!(
            (grid_wave - chart_wave).abs() < 0.015 * chart_wave,
            "plane wave: grid {grid_wave}, chart {chart_wave}"
        );
        let want_wave = ((1.0 + k * k) * 3.0 * PI).sqrt();
        assert!(
            (chart_wave - want_wave).abs() < 1e-10 * want_wave,
            "plane wave chart {chart_wave} vs closed form {want_wave}"
        );
    }

    #[test]
    fn solver_rejects_invalid_setups() {
        let g1 = circle(2.0, 64);
        let g2 = circle(4.0, 64);
        let src = SourceSpec::point([6.0, 0.0], c64(1.0, 0.0));
        let mut cache = OpCache::new();

        let mut static_med = medium(c64(0.5, 0.0), c64(1.0, 0.0));
        static_med.omega = 0.0;
        assert!(solve_transmission(&static_med, &g1, &g2, &src, &mut cache).is_err());

        let mut med3 = medium(c64(0.5, 0.0), c64(1.0, 0.0));
        med3.dim = 3;
        assert!(solve_transmission(&med3, &g1, &g2, &src, &mut cache).is_err());

        let med = medium(c64(0.5, 0.0), c64(1.0, 0.0));
        // Source inside the outer contour.
        let inside = SourceSpec::point([3.0, 0.0], c64(1.0, 0.0));
        assert!(solve_transmission(&med, &g1, &g2, &inside, &mut cache).is_err());
        // Source hugging the contour inside the standoff.
        let hugging = SourceSpec::point([4.0 + 1e-4, 0.0], c64(1.0, 0.0));
        assert!(solve_transmission(&med, &g1, &g2, &hugging, &mut cache).is_err());
        // Contours swapped: inner not inside outer.
        assert!(solve_transmission(&med, &g2, &g1, &src, &mut cache).is_err());
        // Assembly demands the documented orientations.
        assert!(assemble_system(
            &mut cache,
            &g1,
            &g2,
            c64(1.0, 0.0),
            c64(1.0, 0.0),
            c64(1.0, 0.0)
        )
        .is_err());
        let g1f = g1.flip_normal();
        assert!(assemble_system(
            &mut cache,
            &g1f,
            &g2.flip_normal(),
            c64(1.0, 0.0),
            c64(1.0, 0.0),
            c64(1.0, 0.0)
        )
        .is_err());
    }

    #[test]
    fn operator_cache_is_reused_across_solves() {
        // Sweep-style usage: the exterior-wavenumber operators depend only
        // on the contours, so a second solve at a different eta must not
        // grow the cache by the k_e entries again.
        let g1 = circle(2.0, 64);
        let g1f = g1.flip_normal();
        let g2 = circle(4.0, 64);
        let src = SourceSpec::point([6.0, 0.0], c64(1.0, 0.0));
        let mut cache = OpCache::new();
        let med_a = medium(c64(0.5, 0.0), c64(1.0, 0.0));
        solve_transmission(&med_a, &g1f, &g2, &src, &mut cache).unwrap();
        let after_first = cache.entries();
        let med_b = medium(c64(0.25, 0.0), c64(1.0, 0.0));
        solve_transmission(&med_b, &g1f, &g2, &src, &mut cache).unwrap();
        let after_second = cache.entries();
        // Second solve adds only the shell-wavenumber blocks: two trace sets
        // and two cross sets.
        assert_eq!(after_second - after_first, 4, "cache growth unexpected");
    }
}
