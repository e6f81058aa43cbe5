//! Closed boundary curves, trapezoid quadrature data, and planar regions.
//!
//! Every curve is a smooth 2π-periodic parametrization sampled at n equispaced
//! parameters. The trapezoid rule on such samples is spectrally accurate for
//! periodic integrands, which is what the Nyström discretization downstream
//! relies on. Contours carry positions, velocities, speeds, arclength weights,
//! normals, and signed curvature at the nodes.
//!
//! Parametrizations run counterclockwise. A freshly built contour stores the
//! outward normal; `flip_normal` produces the inward-oriented copy used for
//! the inner interface of a shell, where the relevant normal points into the
//! enclosed cavity.

use std::io::Write as IoWrite;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::{Result, WorkbenchError};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Curvature magnitudes below this are treated as flat when classifying
/// convexity.
pub const FLATNESS_TOL: f64 = 1e-8;

static NEXT_CONTOUR_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_CONTOUR_ID.fetch_add(1, Ordering::Relaxed)
}

fn default_rho() -> f64 {
    0.3
}

/// Analytic description of a closed curve.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Circle {
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    Ellipse {
        semi_x: f64,
        semi_y: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// Ellipse whose lower cap is replaced by the exact horizontal line
    /// y = y_cut, joined C^∞ through a bump-function blend of width `rho`
    /// (in units of height above the cut).
    FlatBottomEllipse {
        semi_x: f64,
        semi_y: f64,
        y_cut: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default)]
        center: [f64; 2],
    },
}

/// C^∞ step: 0 for v ≤ 0, e^{−1/v} for v > 0. Returns (ψ, ψ', ψ'').
fn bump(v: f64) -> (f64, f64, f64) {
    if v <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let e = (-1.0 / v).exp();
    let p = e / (v * v);
    let pp = e * (1.0 - 2.0 * v) / (v * v * v * v);
    (e, p, pp)
}

/// Smooth transition χ: 0 for u ≤ 0, 1 for u ≥ rho. Returns (χ, χ', χ'').
fn blend(u: f64, rho: f64) -> (f64, f64, f64) {
    let (a, ap, app) = bump(u);
    let (b, bp_raw, bpp_raw) = bump(rho - u);
    let (bp, bpp) = (-bp_raw, bpp_raw);
    let s = a + b;
    if s == 0.0 {
        // Unreachable for rho > 0 since the two supports overlap, but keep a
        // safe value rather than dividing by zero.
        return (0.0, 0.0, 0.0);
    }
    let chi = a / s;
    let nn = ap * b - a * bp;
    let chi_p = nn / (s * s);
    let nn_p = app * b - a * bpp;
    let sp = ap + bp;
    let chi_pp = (nn_p * s - 2.0 * nn * sp) / (s * s * s);
    (chi, chi_p, chi_pp)
}

/// Flattening map m(u) = u·χ(u): identity above the blend zone, 0 below.
/// Returns (m, m', m'').
fn flatten(u: f64, rho: f64) -> (f64, f64, f64) {
    let (chi, chi_p, chi_pp) = blend(u, rho);
    (
        u * chi,
        chi + u * chi_p,
        2.0 * chi_p + u * chi_pp,
    )
}

/// Position, velocity, and acceleration of the parametrization at t.
fn eval_shape(shape: &ShapeSpec, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
    match shape {
        ShapeSpec::Circle { radius, center } => {
            let (s, c) = t.sin_cos();
            (
                [center[0] + radius * c, center[1] + radius * s],
                [-radius * s, radius * c],
                [-radius * c, -radius * s],
            )
        }
        ShapeSpec::Ellipse { semi_x, semi_y, center } => {
            let (s, c) = t.sin_cos();
            (
                [center[0] + semi_x * c, center[1] + semi_y * s],
                [-semi_x * s, semi_y * c],
                [-semi_x * c, -semi_y * s],
            )
        }
        ShapeSpec::FlatBottomEllipse {
            semi_x,
            semi_y,
            y_cut,
            rho,
            center,
        } => {
            let (s, c) = t.sin_cos();
            let y = center[1] + semi_y * s;
            let yp = semi_y * c;
            let ypp = -semi_y * s;
            let u = y - y_cut;
            let (m, mp, mpp) = flatten(u, *rho);
            (
                [center[0] + semi_x * c, y_cut + m],
                [-semi_x * s, mp * yp],
                [-semi_x * c, mpp * yp * yp + mp * ypp],
            )
        }
    }
}

/// A sampled closed curve with quadrature and differential-geometry data.
#[derive(Clone, Debug)]
pub struct Contour {
    pub shape: ShapeSpec,
    pub n: usize,
    /// Parametrization period (always 2π).
    pub param_period: f64,
    /// Equispaced parameters t_j = 2π j / n.
    pub params: Vec<f64>,
    pub nodes: Vec<[f64; 2]>,
    pub velocity: Vec<[f64; 2]>,
    /// |γ'(t_j)|.
    pub speed: Vec<f64>,
    /// Arclength quadrature weights (2π/n)·|γ'(t_j)|; weights[j] is also the
    /// local node spacing used by near-field standoff checks.
    pub weights: Vec<f64>,
    /// Stored unit normal at each node; outward unless `flipped`.
    pub normals: Vec<[f64; 2]>,
    /// Signed curvature with respect to the stored normal.
    pub curvature: Vec<f64>,
    /// True when the stored normal is the inward one.
    pub flipped: bool,
    /// Unique identity used as an operator-cache key. Changes on flip.
    pub id: u64,
}

fn validate_shape(shape: &ShapeSpec) -> Result<()> {
    let bad = |msg: String| Err(WorkbenchError::Geometry(msg));
    match shape {
        ShapeSpec::Circle { radius, .. } => {
            if !radius.is_finite() || *radius <= 0.0 {
                return bad(format!("circle radius must be positive, got {radius}"));
            }
        }
        ShapeSpec::Ellipse { semi_x, semi_y, .. } => {
            if !(semi_x.is_finite() && semi_y.is_finite()) || *semi_x <= 0.0 || *semi_y <= 0.0 {
                return bad(format!("ellipse semi-axes must be positive, got {semi_x}, {semi_y}"));
            }
        }
        ShapeSpec::FlatBottomEllipse {
            semi_x,
            semi_y,
            y_cut,
            rho,
            center,
        } => {
            if *semi_x <= 0.0 || *semi_y <= 0.0 {
                return bad("flat-bottom ellipse semi-axes must be positive".into());
            }
            if *rho <= 0.0 {
                return bad(format!("blend width rho must be positive, got {rho}"));
            }
            let lo = center[1] - semi_y;
            let hi = center[1] + semi_y;
            if !(*y_cut > lo && *y_cut + rho < hi) {
                return bad(format!(
                    "y_cut must satisfy {lo} < y_cut and y_cut + rho < {hi}, got y_cut = {y_cut}"
                ));
            }
        }
    }
    Ok(())
}

/// Build a contour with n nodes. n must be even and at least 16.
pub fn make_contour(shape: ShapeSpec, n: usize) -> Result<Contour> {
    if n < 16 || n % 2 != 0 {
        return Err(WorkbenchError::Geometry(format!(
            "node count must be even and at least 16, got {n}"
        )));
    }
    validate_shape(&shape)?;
    let mut params = Vec::with_capacity(n);
    let mut nodes = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut curvature = Vec::with_capacity(n);
    let h = TAU / n as f64;
    for j in 0..n {
        let t = h * j as f64;
        let (x, xp, xpp) = eval_shape(&shape, t);
        let sp = (xp[0] * xp[0] + xp[1] * xp[1]).sqrt();
        if sp < 1e-14 {
            return Err(WorkbenchError::Geometry(format!(
                "degenerate parametrization: |gamma'| vanishes near t = {t}"
            )));
        }
        params.push(t);
        nodes.push(x);
        velocity.push(xp);
        speed.push(sp);
        weights.push(h * sp);
        normals.push([xp[1] / sp, -xp[0] / sp]);
        curvature.push((xp[0] * xpp[1] - xp[1] * xpp[0]) / (sp * sp * sp));
    }
    Ok(Contour {
        shape,
        n,
        param_period: TAU,
        params,
        nodes,
        velocity,
        speed,
        weights,
        normals,
        curvature,
        flipped: false,
        id: fresh_id(),
    })
}

impl Contour {
    /// Total arclength by the node quadrature (spectrally accurate).
    pub fn perimeter(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Copy of this contour with the normal (and hence signed curvature)
    /// negated. The copy receives a fresh identity so cached operators built
    /// against one orientation are never reused for the other.
    pub fn flip_normal(&self) -> Contour {
        let mut c = self.clone();
        for v in c.normals.iter_mut() {
            v[0] = -v[0];
            v[1] = -v[1];
        }
        for k in c.curvature.iter_mut() {
            *k = -*k;
        }
        c.flipped = !c.flipped;
        c.id = fresh_id();
        c
    }

    /// Winding number of the curve about p, by the same trapezoid rule as
    /// every other contour integral. Close to ±1 or 0 away from the curve.
    pub fn winding_number(&self, p: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n {
            let dx = self.nodes[j][0] - p[0];
            let dy = self.nodes[j][1] - p[1];
            let r2 = dx * dx + dy * dy;
            if r2 == 0.0 {
                return f64::NAN;
            }
            acc += (dx * self.velocity[j][1] - dy * self.velocity[j][0]) / r2;
        }
        acc / self.n as f64
    }

    /// True when p lies inside the curve. Unreliable within a node spacing of
    /// the curve itself; callers that care use standoff checks first.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.winding_number(p) > 0.5
    }

    /// Index of the nearest node and the distance to it.
    pub fn nearest_node(&self, p: [f64; 2]) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (j, q) in self.nodes.iter().enumerate() {
            let d2 = (q[0] - p[0]) * (q[0] - p[0]) + (q[1] - p[1]) * (q[1] - p[1]);
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Write nodes with normals and curvature as CSV.
    pub fn to_csv<W: IoWrite>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# alrshell contour v1")?;
        writeln!(w, "param,x,y,nx,ny,curvature,weight")?;
        for j in 0..self.n {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.params[j],
                self.nodes[j][0],
                self.nodes[j][1],
                self.normals[j][0],
                self.normals[j][1],
                self.curvature[j],
                self.weights[j]
            )?;
        }
        Ok(())
    }
}

/// Node-level convexity classification of a contour.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexityReport {
    /// All nodes strictly curved with one sign.
    pub strictly_convex: bool,
    /// Minimum outward-oriented signed curvature over the nodes.
    pub min_curvature: f64,
    /// Arclength fraction where |curvature| < FLATNESS_TOL.
    pub flat_fraction: f64,
}

/// Classify a contour as strictly convex or flat-faced from its node data.
pub fn convexity_report(c: &Contour) -> ConvexityReport {
    let sign = if c.flipped { -1.0 } else { 1.0 };
    let mut min_k = f64::INFINITY;
    let mut flat_len = 0.0;
    let mut all_pos = true;
    for j in 0..c.n {
        let k = sign * c.curvature[j];
        min_k = min_k.min(k);
        if k.abs() < FLATNESS_TOL {
            flat_len += c.weights[j];
        }
        if k <= FLATNESS_TOL {
            all_pos = false;
        }
    }
    ConvexityReport {
        strictly_convex: all_pos,
        min_curvature: min_k,
        flat_fraction: flat_len / c.perimeter(),
    }
}

/// Check that `inner` lies strictly inside `outer`: every inner node is
/// enclosed and the node sets keep a positive gap.
pub fn contour_strictly_inside(inner: &Contour, outer: &Contour) -> bool {
    let mut min_gap = f64::INFINITY;
    for p in &inner.nodes {
        if !outer.contains(*p) {
            return false;
        }
        let (_, d) = outer.nearest_node(*p);
        min_gap = min_gap.min(d);
    }
    min_gap > 0.0
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Sampling boxes on either side of a horizontal flat facet at y = y1,
/// together with the mirror that swaps them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatSlabRegion {
    /// Height of the flat facet.
    pub y1: f64,
    /// Half-width of the sampling boxes.
    pub half_width: f64,
    /// Depth of each box away from the facet.
    pub depth: f64,
}

impl FlatSlabRegion {
    /// Box just above the facet (inside the shell for a flat-bottom outer
    /// boundary).
    pub fn box_above(&self) -> Rect {
        Rect {
            x0: -self.half_width,
            x1: self.half_width,
            y0: self.y1,
            y1: self.y1 + self.depth,
        }
    }

    /// Box just below the facet (in the exterior).
    pub fn box_below(&self) -> Rect {
        Rect {
            x0: -self.half_width,
            x1: self.half_width,
            y0: self.y1 - self.depth,
            y1: self.y1,
        }
    }

    /// Reflection across the facet line.
    pub fn mirror(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0], 2.0 * self.y1 - p[1]]
    }
}

/// Verify that the two sampling boxes of a slab region sit where a shell
/// solve expects them: the upper box inside the shell (inside `outer`,
/// outside `inner`), the lower box in the exterior.
pub fn validate_slab_region(
    region: &FlatSlabRegion,
    inner: &Contour,
    outer: &Contour,
    samples_per_side: usize,
) -> Result<()> {
    let m = samples_per_side.max(2);
    let inset = 1e-6;
    let above = region.box_above();
    let below = region.box_below();
    for i in 0..m {
        for j in 0..m {
            let fx = (i as f64 + 0.5) / m as f64;
            let fy = (j as f64 + 0.5) / m as f64;
            let pa = [
                above.x0 + fx * above.width(),
                above.y0 + inset + fy * (above.height() - 2.0 * inset),
            ];
            if !outer.contains(pa) || inner.contains(pa) {
                return Err(WorkbenchError::Geometry(format!(
                    "upper slab box leaves the shell at ({:.4}, {:.4})",
                    pa[0], pa[1]
                )));
            }
            let pb = [
                below.x0 + fx * below.width(),
                below.y0 + inset + fy * (below.height() - 2.0 * inset),
            ];
            if outer.contains(pb) {
                return Err(WorkbenchError::Geometry(format!(
                    "lower slab box intersects the shell at ({:.4}, {:.4})",
                    pb[0], pb[1]
                )));
            }
        }
    }
    Ok(())
}
