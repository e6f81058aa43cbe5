//! Nyström discretization of boundary trace operators and layer potentials.
//!
//! On each smooth closed contour the four trace operators are assembled as
//! dense matrices acting on density values at the quadrature nodes:
//!
//! - `V` (single-layer trace) and the double-layer traces `K`, `K*` use the
//!   Kress log-splitting: kernel = M₁(t,s)·ln(4sin²((t−s)/2)) + M₂(t,s) with
//!   both parts analytic, the log factor integrated by its exact spectral
//!   quadrature weights and M₂ by the trapezoid rule. Convergence is
//!   spectral.
//! - `N` (hypersingular trace) comes from the Maue identity
//!   N = (d/ds) V (d/ds) + k² ν·V[ν ·], which needs only `V` and the
//!   spectral differentiation matrix, so no hypersingular kernel is ever
//!   touched.
//!
//! Cross-interface blocks between disjoint contours have analytic kernels
//! and use the plain trapezoid rule. Off-surface evaluation refuses points
//! closer to a contour than three local node spacings instead of silently
//! losing accuracy; near-surface data must come from the trace formulas.

use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bessel;
use crate::geometry::Contour;
use crate::kernels;
use crate::linalg::CMat;
use crate::{Result, WorkbenchError};

const PI: f64 = std::f64::consts::PI;
const FRAC_1_2PI: f64 = 1.0 / (2.0 * PI);
const FRAC_1_4PI: f64 = 1.0 / (4.0 * PI);

/// Minimum node count for trace-operator assembly.
pub const MIN_NODES: usize = 16;

/// Off-surface evaluation keeps at least this many local node spacings away
/// from the contour.
pub const STANDOFF_SPACINGS: f64 = 3.0;

/// Which operator a dense block discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// Single-layer trace V.
    SingleTrace,
    /// Double-layer trace K.
    DoubleTrace,
    /// Adjoint double-layer trace K*.
    AdjDoubleTrace,
    /// Hypersingular trace N = γ₁ of the double layer.
    Hypersingular,
    /// Single layer from another contour (value).
    CrossSingle,
    /// Single layer from another contour (normal derivative at the target).
    CrossSingleDeriv,
    /// Double layer from another contour (value).
    CrossDouble,
    /// Double layer from another contour (normal derivative at the target).
    CrossDoubleDeriv,
}

/// A dense operator block plus the metadata needed to reuse or dump it.
#[derive(Clone, Debug)]
pub struct OperatorBlock {
    pub matrix: CMat,
    pub kind: OpKind,
    pub wavenumber: Complex64,
    /// Identity of the contour carrying the evaluation points (rows).
    pub row_contour: u64,
    /// Identity of the contour carrying the density (columns).
    pub col_contour: u64,
}

impl OperatorBlock {
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.matrix.matvec(x)
    }

    /// Write `<base>.bin` (row-major little-endian (re, im) f64 pairs) and a
    /// `<base>.json` sidecar with shape and provenance.
    pub fn dump(&self, base: &Path) -> Result<()> {
        let meta = BlockMeta {
            version: 1,
            kind: self.kind,
            rows: self.matrix.nr,
            cols: self.matrix.nc,
            wavenumber_re: self.wavenumber.re,
            wavenumber_im: self.wavenumber.im,
            row_contour: self.row_contour,
            col_contour: self.col_contour,
        };
        let mut bytes = Vec::with_capacity(self.matrix.d.len() * 16);
        for z in &self.matrix.d {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
        std::fs::write(base.with_extension("bin"), bytes)?;
        let json = serde_json::to_string_pretty(&meta)?;
        std::fs::write(base.with_extension("json"), json)?;
        Ok(())
    }

    /// Read back a block pair written by [`OperatorBlock::dump`].
    pub fn load(base: &Path) -> Result<OperatorBlock> {
        let meta: BlockMeta =
            serde_json::from_slice(&std::fs::read(base.with_extension("json"))?)?;
        let bytes = std::fs::read(base.with_extension("bin"))?;
        if bytes.len() != meta.rows * meta.cols * 16 {
            return Err(WorkbenchError::InvalidParameter(format!(
                "binary block has {} bytes, expected {}",
                bytes.len(),
                meta.rows * meta.cols * 16
            )));
        }
        let mut d = Vec::with_capacity(meta.rows * meta.cols);
        for ch in bytes.chunks_exact(16) {
            let re = f64::from_le_bytes(ch[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(ch[8..16].try_into().unwrap());
            d.push(Complex64::new(re, im));
        }
        Ok(OperatorBlock {
            matrix: CMat {
                nr: meta.rows,
                nc: meta.cols,
                d,
            },
            kind: meta.kind,
            wavenumber: Complex64::new(meta.wavenumber_re, meta.wavenumber_im),
            row_contour: meta.row_contour,
            col_contour: meta.col_contour,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BlockMeta {
    version: u32,
    kind: OpKind,
    rows: usize,
    cols: usize,
    wavenumber_re: f64,
    wavenumber_im: f64,
    row_contour: u64,
    col_contour: u64,
}

/// The four trace operators of one contour at one wavenumber.
#[derive(Clone, Debug)]
pub struct TraceOps {
    pub v: OperatorBlock,
    pub k: OperatorBlock,
    pub kstar: OperatorBlock,
    pub n: OperatorBlock,
}

/// The four cross-interface blocks: density on `col`, traces on `row`.
#[derive(Clone, Debug)]
pub struct CrossOps {
    /// Single-layer values.
    pub a: OperatorBlock,
    /// Single-layer normal derivatives at the target.
    pub b: OperatorBlock,
    /// Double-layer values.
    pub r: OperatorBlock,
    /// Double-layer normal derivatives at the target.
    pub s: OperatorBlock,
}

/// Exact quadrature weights for ∫₀^{2π} ln(4sin²((t−s)/2)) f(s) ds on the
/// uniform n-point grid: weight R_{|i−j|} with
/// R(d) = −(4π/n)[Σ_{m=1}^{n/2−1} cos(mθ_d)/m + cos((n/2)θ_d)/n], θ_d = 2πd/n.
pub fn kress_log_weights(n: usize) -> Vec<f64> {
    assert!(n % 2 == 0, "log-quadrature grid must be even");
    let half = n / 2;
    (0..n)
        .map(|d| {
            let th = 2.0 * PI * d as f64 / n as f64;
            let mut s = 0.0;
            for m in 1..half {
                s += (m as f64 * th).cos() / m as f64;
            }
            s += (half as f64 * th).cos() / n as f64;
            -(4.0 * PI / n as f64) * s
        })
        .collect()
}

fn validate_wavenumber(k: Complex64) -> Result<()> {
    if !k.re.is_finite() || !k.im.is_finite() {
        return Err(WorkbenchError::InvalidParameter(format!(
            "wavenumber must be finite, got {k}"
        )));
    }
    if k.im < 0.0 {
        return Err(WorkbenchError::InvalidParameter(format!(
            "wavenumber must have Im >= 0 (outgoing branch), got {k}"
        )));
    }
    Ok(())
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Assemble V, K, K*, N on one contour at wavenumber k (k = 0 is the
/// potential-theory case).
pub fn assemble_trace_ops(c: &Contour, k: Complex64) -> Result<TraceOps> {
    validate_wavenumber(k)?;
    let n = c.n;
    if n < MIN_NODES {
        return Err(WorkbenchError::InvalidParameter(format!(
            "trace assembly needs at least {MIN_NODES} nodes, got {n}"
        )));
    }
    let wt = 2.0 * PI / n as f64;
    let rw = kress_log_weights(n);
    let is_static = k.norm() == 0.0;
    let i4 = Complex64::new(0.0, 0.25);

    let mut v = CMat::zeros(n, n);
    let mut km = CMat::zeros(n, n);
    let mut ks = CMat::zeros(n, n);

    for i in 0..n {
        let xi = c.nodes[i];
        let nui = c.normals[i];
        for j in 0..n {
            let sj = c.speed[j];
            if i == j {
                let kk_diag = wt * (-c.curvature[i] * c.speed[i] * FRAC_1_4PI);
                *km.at_mut(i, i) = Complex64::new(kk_diag, 0.0);
                *ks.at_mut(i, i) = Complex64::new(kk_diag, 0.0);
                let m1 = -FRAC_1_4PI * c.speed[i];
                let m2 = if is_static {
                    Complex64::new(-FRAC_1_2PI * c.speed[i].ln() * c.speed[i], 0.0)
                } else {
                    // M₂(t,t) = [i/4 − γ/(2π) − ln(k|γ'|/2)/(2π)]·|γ'|
                    (i4 - Complex64::new(bessel::EULER_GAMMA * FRAC_1_2PI, 0.0)
                        - (k * c.speed[i] / 2.0).ln() * FRAC_1_2PI)
                        * c.speed[i]
                };
                *v.at_mut(i, i) = Complex64::new(rw[0] * m1, 0.0) + m2 * wt;
                continue;
            }
            let dxv = [xi[0] - c.nodes[j][0], xi[1] - c.nodes[j][1]];
            let r = (dxv[0] * dxv[0] + dxv[1] * dxv[1]).sqrt();
            let d = i.abs_diff(j);
            let half = 0.5 * (c.params[i] - c.params[j]);
            let ln4s = (4.0 * half.sin().powi(2)).ln();
            let diry = dot(dxv, c.normals[j]) / r;
            let dirx = dot(dxv, nui) / r;
            if is_static {
                // V: −ln r/(2π) split against the log factor.
                let m1 = -FRAC_1_4PI * sj;
                let m2 = -FRAC_1_2PI * (r / (2.0 * half.sin().abs())).ln() * sj;
                *v.at_mut(i, j) = Complex64::new(rw[d] * m1 + wt * m2, 0.0);
                // K, K* kernels are smooth at k = 0.
                let gp = -FRAC_1_2PI / r;
                *km.at_mut(i, j) = Complex64::new(wt * (-gp) * diry * sj, 0.0);
                *ks.at_mut(i, j) = Complex64::new(wt * gp * dirx * sj, 0.0);
            } else {
                let z = k * r;
                let seq = bessel::cyl_seqs(1, z)?;
                let g = i4 * seq.h1[0];
                let gp = -i4 * k * seq.h1[1];
                let m1v = -FRAC_1_4PI * seq.j[0] * sj;
                *v.at_mut(i, j) = m1v * rw[d] + (g * sj - m1v * ln4s) * wt;
                let m1k = -(k * FRAC_1_4PI) * seq.j[1] * (diry * sj);
                *km.at_mut(i, j) = m1k * rw[d] + (-gp * diry * sj - m1k * ln4s) * wt;
                let m1s = (k * FRAC_1_4PI) * seq.j[1] * (dirx * sj);
                *ks.at_mut(i, j) = m1s * rw[d] + (gp * dirx * sj - m1s * ln4s) * wt;
            }
        }
    }

    let nm = maue_hypersingular(c, k, &v);
    let mk = |matrix: CMat, kind: OpKind| OperatorBlock {
        matrix,
        kind,
        wavenumber: k,
        row_contour: c.id,
        col_contour: c.id,
    };
    Ok(TraceOps {
        v: mk(v, OpKind::SingleTrace),
        k: mk(km, OpKind::DoubleTrace),
        kstar: mk(ks, OpKind::AdjDoubleTrace),
        n: mk(nm, OpKind::Hypersingular),
    })
}

/// N via the Maue identity. The second (k²) term is the entrywise product
/// of V with ν_i·ν_j, since Σ_c diag(ν_c) V diag(ν_c) acts componentwise.
fn maue_hypersingular(c: &Contour, k: Complex64, v: &CMat) -> CMat {
    let n = c.n;
    let mut ds = CMat::zeros(n, n);
    for i in 0..n {
        let inv_speed = 1.0 / c.speed[i];
        for j in 0..n {
            if i == j {
                continue;
            }
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let cot = 1.0 / (0.5 * (c.params[i] - c.params[j])).tan();
            *ds.at_mut(i, j) = Complex64::new(0.5 * sign * cot * inv_speed, 0.0);
        }
    }
    let mut nm = ds.matmul(v).matmul(&ds);
    if k.norm() > 0.0 {
        let k2 = k * k;
        for i in 0..n {
            for j in 0..n {
                *nm.at_mut(i, j) += k2 * v.at(i, j) * dot(c.normals[i], c.normals[j]);
            }
        }
    }
    nm
}

/// Assemble the smooth cross-interface blocks: density on `col`, traces on
/// `row`. Rejects contours that touch or overlap.
pub fn assemble_cross_ops(row: &Contour, col: &Contour, k: Complex64) -> Result<CrossOps> {
    validate_wavenumber(k)?;
    let mut min_dist = f64::INFINITY;
    for p in &row.nodes {
        for q in &col.nodes {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if min_dist < 1e-9 {
        return Err(WorkbenchError::Geometry(format!(
            "cross-operator contours touch (node distance {min_dist:.3e})"
        )));
    }
    let (nr, ncn) = (row.n, col.n);
    let mut a = CMat::zeros(nr, ncn);
    let mut b = CMat::zeros(nr, ncn);
    let mut rm = CMat::zeros(nr, ncn);
    let mut s = CMat::zeros(nr, ncn);
    for i in 0..nr {
        let xi = row.nodes[i];
        let nui = row.normals[i];
        for j in 0..ncn {
            let yj = col.nodes[j];
            let nuj = col.normals[j];
            let wj = col.weights[j];
            let dxv = [xi[0] - yj[0], xi[1] - yj[1]];
            let r = (dxv[0] * dxv[0] + dxv[1] * dxv[1]).sqrt();
            let rp = kernels::radial_parts_2d(k, r)?;
            let rh = [dxv[0] / r, dxv[1] / r];
            let rn_i = dot(rh, nui);
            let rn_j = dot(rh, nuj);
            *a.at_mut(i, j) = rp.g * wj;
            *b.at_mut(i, j) = rp.dg * rn_i * wj;
            *rm.at_mut(i, j) = -rp.dg * rn_j * wj;
            // ∂²G/∂ν(x)∂ν(y) = −ν_xᵀ(Hess G)ν_y with
            // Hess G = G'' r̂r̂ᵀ + (G'/r)(I − r̂r̂ᵀ).
            *s.at_mut(i, j) =
                -(rp.d2g * rn_i * rn_j + rp.dg / r * (dot(nui, nuj) - rn_i * rn_j)) * wj;
        }
    }
    let mk = |matrix: CMat, kind: OpKind| OperatorBlock {
        matrix,
        kind,
        wavenumber: k,
        row_contour: row.id,
        col_contour: col.id,
    };
    Ok(CrossOps {
        a: mk(a, OpKind::CrossSingle),
        b: mk(b, OpKind::CrossSingleDeriv),
        r: mk(rm, OpKind::CrossDouble),
        s: mk(s, OpKind::CrossDoubleDeriv),
    })
}

/// Single or double layer for off-surface evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Single,
    Double,
}

/// One evaluated point: value, and the gradient when requested.
#[derive(Clone, Copy, Debug)]
pub struct PotentialSample {
    pub value: Complex64,
    pub gradient: Option<[Complex64; 2]>,
}

/// Evaluate a layer potential at off-surface points by the trapezoid rule.
///
/// Any point closer to the contour than [`STANDOFF_SPACINGS`] local node
/// spacings is refused with the measured distance in the error; accuracy
/// there would silently collapse, and near-surface values belong to the
/// trace formulas instead.
pub fn eval_potential(
    kind: LayerKind,
    c: &Contour,
    density: &[Complex64],
    k: Complex64,
    points: &[[f64; 2]],
    want_gradient: bool,
) -> Result<Vec<PotentialSample>> {
    validate_wavenumber(k)?;
    if density.len() != c.n {
        return Err(WorkbenchError::InvalidParameter(format!(
            "density has {} values for a contour with {} nodes",
            density.len(),
            c.n
        )));
    }
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let (jn, dist) = c.nearest_node(*p);
        let required = STANDOFF_SPACINGS * c.weights[jn];
        if dist < required {
            return Err(WorkbenchError::NearFieldRefused {
                distance: dist,
                required,
            });
        }
        let mut val = Complex64::new(0.0, 0.0);
        let mut grad = [Complex64::new(0.0, 0.0); 2];
        for j in 0..c.n {
            let dxv = [p[0] - c.nodes[j][0], p[1] - c.nodes[j][1]];
            let r = (dxv[0] * dxv[0] + dxv[1] * dxv[1]).sqrt();
            let rp = kernels::radial_parts_2d(k, r)?;
            let rh = [dxv[0] / r, dxv[1] / r];
            let dw = density[j] * c.weights[j];
            match kind {
                LayerKind::Single => {
                    val += rp.g * dw;
                    if want_gradient {
                        grad[0] += rp.dg * rh[0] * dw;
                        grad[1] += rp.dg * rh[1] * dw;
                    }
                }
                LayerKind::Double => {
                    let nuj = c.normals[j];
                    let rn_j = dot(rh, nuj);
                    val += -rp.dg * rn_j * dw;
                    if want_gradient {
                        // ∇ₓ ∂_{ν(y)}G = −(Hess G)·ν(y)
                        for ax in 0..2 {
                            grad[ax] += -(rp.d2g * rh[ax] * rn_j
                                + rp.dg / r * (nuj[ax] - rh[ax] * rn_j))
                                * dw;
                        }
                    }
                }
            }
        }
        out.push(PotentialSample {
            value: val,
            gradient: want_gradient.then_some(grad),
        });
    }
    Ok(out)
}

/// Cache of assembled operator blocks keyed by contour identity and
/// wavenumber bits. In an η sweep only the shell wavenumber changes, so the
/// exterior-wavenumber blocks assemble once.
#[derive(Default)]
pub struct OpCache {
    trace: HashMap<(u64, u64, u64), Rc<TraceOps>>,
    cross: HashMap<(u64, u64, u64, u64), Rc<CrossOps>>,
}

impl OpCache {
    pub fn new() -> OpCache {
        OpCache::default()
    }

    pub fn trace_ops(&mut self, c: &Contour, k: Complex64) -> Result<Rc<TraceOps>> {
        let key = (c.id, k.re.to_bits(), k.im.to_bits());
        if let Some(hit) = self.trace.get(&key) {
            return Ok(hit.clone());
        }
        let ops = Rc::new(assemble_trace_ops(c, k)?);
        self.trace.insert(key, ops.clone());
        Ok(ops)
    }

    pub fn cross_ops(&mut self, row: &Contour, col: &Contour, k: Complex64) -> Result<Rc<CrossOps>> {
        let key = (row.id, col.id, k.re.to_bits(), k.im.to_bits());
        if let Some(hit) = self.cross.get(&key) {
            return Ok(hit.clone());
        }
        let ops = Rc::new(assemble_cross_ops(row, col, k)?);
        self.cross.insert(key, ops.clone());
        Ok(ops)
    }

    pub fn entries(&self) -> usize {
        self.trace.len() + self.cross.len()
    }

    pub fn clear(&mut self) {
        self.trace.clear();
        self.cross.clear();
    }
}
