//! Loss-parameter sweeps and blow-up classification.
//!
//! The driver runs a family of transmission solves over a list of loss
//! parameters eta, records resolvent-style diagnostics for each point
//! (shell and slab H1 norms, far-field level, conditioning, truncation),
//! fits the growth law N(|eta|), and labels the limit behaviour: bounded,
//! whole-field growth without the resonant rate (w-ALR), borderline growth
//! that survives square-root rescaling (weak-CALR), or fully developed
//! anomalous localized resonance (ALR). Three engines share one record
//! format: the boundary-element solver for general nested contours and the
//! two separable reference solvers for concentric circles and spheres. The
//! module also carries the cloaking figure of merit for a polarizable
//! dipole outside the shell and a mirror-symmetry probe for flat-facet
//! geometries.
//!
//! Points of a sweep are independent solves, so they are striped across a
//! scoped thread pool. Results are deterministic: every point is computed
//! by pure evaluation whose output does not depend on the worker that ran
//! it or on the operator-cache state, and records are merged back by input
//! index before sorting, so permuting the input etas permutes nothing in
//! the output (records always come back ordered by decreasing |eta|).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::thread;

use crate::boundary_ops::OpCache;
use crate::geometry::{
    make_contour, validate_slab_region, Contour, FlatSlabRegion, Rect, ShapeSpec,
};
use crate::linalg::gauss_legendre;
use crate::medium::MediumParams;
use crate::oracle::{
    annulus_solve_dynamic, annulus_solve_qs, ball_solve_dynamic, ball_solve_qs, AnnulusConfig,
    BallConfig, BallSolution,
};
use crate::transmission::{
    h1_masked_grid, solve_transmission, Region, SourceKind, SourceSpec, TransmissionSolution,
};
use crate::{Result, WorkbenchError};
use std::f64::consts::TAU as TWO_PI;

/// Gauss-Legendre order for the polar integral in the sphere far norm.
const SPHERE_GL_ORDER: usize = 48;
/// Contour samples per side when checking a slab region against the
/// interfaces.
const SLAB_CHECK_SAMPLES: usize = 64;
/// Guard floor for relative quantities.
const TINY: f64 = 1e-300;

// ---------------------------------------------------------------------------
// Sweep problem
// ---------------------------------------------------------------------------

/// Which solver produces the records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepEngine {
    /// Boundary-element transmission solve on a pair of nested contours.
    Bem,
    /// Mode-matched series on concentric circles (quasi-static when
    /// omega = 0, Helmholtz otherwise).
    AnnulusSeries,
    /// Mode-matched series on concentric spheres.
    BallSeries,
}

/// Geometry of the shell, matched to the engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepGeometry {
    /// Concentric circles for [`SweepEngine::AnnulusSeries`].
    Annulus { r_core: f64, r_shell: f64 },
    /// Concentric spheres for [`SweepEngine::BallSeries`].
    Ball { r_core: f64, r_shell: f64 },
    /// Discretized nested contours for [`SweepEngine::Bem`].
    Contours {
        inner: ShapeSpec,
        outer: ShapeSpec,
        n_nodes: usize,
    },
}

/// Optional slab-norm request for flat-facet geometries: the recorded norm
/// is the H1 norm over the box above the facet (inside the shell) plus the
/// H1 norm over the mirror box below it (in the exterior), with a ball
/// around the source excluded. Cells inside the evaluation standoff of a
/// contour are trimmed from both boxes, so the value is an interior proxy
/// that is consistent across a sweep rather than the full norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub region: FlatSlabRegion,
    /// Radius of the excluded ball around the source. Default: half the
    /// distance from the source to the facet line.
    pub exclusion_radius: Option<f64>,
}

/// Quadrature resolution for the recorded norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormResolution {
    /// Radial panels of the annulus chart used when both contours are
    /// concentric circles.
    pub radial_panels: usize,
    /// Angular samples of the chart and of the far-field circle.
    pub n_theta: usize,
    /// Cartesian cells across a masked-grid norm, x direction.
    pub grid_nx: usize,
    /// Cartesian cells across a masked-grid norm, y direction.
    pub grid_ny: usize,
}

impl Default for NormResolution {
    fn default() -> NormResolution {
        NormResolution {
            radial_panels: 4,
            n_theta: 96,
            grid_nx: 96,
            grid_ny: 64,
        }
    }
}

/// Everything a sweep needs except the eta list.
#[derive(Clone, Debug)]
pub struct SweepProblem {
    pub engine: SweepEngine,
    pub geometry: SweepGeometry,
    /// Base medium; its eta field is overwritten point by point.
    pub medium: MediumParams,
    pub source: SourceSpec,
    /// Quasi-static series runs only: keep the core coefficient matched to
    /// the exterior instead of reciprocal to the shell.
    pub core_matched: bool,
    /// Slab norm request; boundary-element engine only.
    pub slab: Option<SlabSpec>,
    /// Radius of the far-field circle (sphere in 3D) for the L2 record.
    pub far_radius: f64,
    pub resolution: NormResolution,
}

/// One sweep point. Failed points keep their eta and the error text; every
/// numeric field is NaN so downstream fits skip them.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub eta: Complex64,
    pub shell_h1: f64,
    pub slab_h1: Option<f64>,
    /// 1-norm condition estimate of the boundary-element system; NaN for
    /// the series engines, which have no single system matrix.
    pub condition_estimate: f64,
    pub far_norm: f64,
    /// Modes used by a series engine, nodes per contour for the
    /// boundary-element engine.
    pub truncation_or_nodes: usize,
    pub error: Option<String>,
}

// ---------------------------------------------------------------------------
// Problem validation
// ---------------------------------------------------------------------------

struct PreparedSlab {
    region: FlatSlabRegion,
    exclusion: f64,
}

struct Prepared {
    /// Built contours for the boundary-element engine, inner then outer.
    contours: Option<(Contour, Contour)>,
    /// Both contours are concentric circles, so annulus-chart norms apply.
    concentric_circles: bool,
    /// Bounding rectangle of the outer contour for masked-grid norms.
    shell_rect: Option<Rect>,
    slab: Option<PreparedSlab>,
    /// Center of the far-field circle.
    far_center: [f64; 2],
}

impl SweepProblem {
    /// Validate the cross-field contracts and build the shared pieces.
    fn prepare(&self) -> Result<Prepared> {
        self.check_resolution()?;
        let z = self.source.location;
        let source_radius = (z[0] * z[0] + z[1] * z[1]).sqrt();
        if !(self.far_radius.is_finite() && self.far_radius > 0.0) {
            return Err(WorkbenchError::InvalidParameter(format!(
                "far_radius must be positive and finite, got {}",
                self.far_radius
            )));
        }
        match (self.engine, &self.geometry) {
            (SweepEngine::AnnulusSeries, SweepGeometry::Annulus { r_core, r_shell })
            | (SweepEngine::BallSeries, SweepGeometry::Ball { r_core, r_shell }) => {
                self.check_series_source()?;
                if source_radius <= *r_shell {
                    return Err(WorkbenchError::InvalidParameter(format!(
                        "series sources sit outside the shell: |z| = {source_radius} \
                         vs r_shell = {r_shell}"
                    )));
                }
                if *r_core <= 0.0 || r_shell <= r_core {
                    return Err(WorkbenchError::InvalidParameter(format!(
                        "series geometry needs 0 < r_core < r_shell, got ({r_core}, {r_shell})"
                    )));
                }
                if self.far_radius <= *r_shell {
                    return Err(WorkbenchError::InvalidParameter(format!(
                        "far_radius {} must lie outside the shell radius {}",
                        self.far_radius, r_shell
                    )));
                }
                self.check_far_source_gap((source_radius - self.far_radius).abs())?;
                let want_dim = if self.engine == SweepEngine::BallSeries {
                    3
                } else {
                    2
                };
                if self.medium.dim != want_dim {
                    return Err(WorkbenchError::InvalidParameter(format!(
                        "engine expects medium.dim = {want_dim}, got {}",
                        self.medium.dim
                    )));
                }
                if self.slab.is_some() {
                    return Err(WorkbenchError::InvalidParameter(
                        "slab norms need the boundary-element engine".into(),
                    ));
                }
                Ok(Prepared {
                    contours: None,
                    concentric_circles: true,
                    shell_rect: None,
                    slab: None,
                    far_center: [0.0, 0.0],
                })
            }
            (SweepEngine::Bem, SweepGeometry::Contours {
                inner,
                outer,
                n_nodes,
            }) => {
                if self.medium.omega <= 0.0 {
                    return Err(WorkbenchError::InvalidParameter(
                        "the boundary-element engine needs omega > 0; run \
                         quasi-static sweeps through a series engine"
                            .into(),
                    ));
                }
                if self.medium.dim != 2 {
                    return Err(WorkbenchError::InvalidParameter(
                        "the boundary-element engine is two-dimensional".into(),
                    ));
                }
                let ci = make_contour(inner.clone(), *n_nodes)?;
                let co = make_contour(outer.clone(), *n_nodes)?;
                let center = node_centroid(&co);
                let max_r = co
                    .nodes
                    .iter()
                    .map(|p| dist(*p, center))
                    .fold(0.0f64, f64::max);
                if self.far_radius <= max_r {
                    return Err(WorkbenchError::InvalidParameter(format!(
                        "far_radius {} must enclose the outer contour \
                         (its nodes reach {max_r:.3} from the centroid)",
                        self.far_radius
                    )));
                }
                self.check_far_source_gap((dist(z, center) - self.far_radius).abs())?;
                let slab = match &self.slab {
                    None => None,
                    Some(spec) => {
                        validate_slab_region(&spec.region, &ci, &co, SLAB_CHECK_SAMPLES)?;
                        let gap = spec.region.y1 - z[1];
                        if gap <= 0.0 {
                            return Err(WorkbenchError::InvalidParameter(format!(
                                "slab norms expect the source below the facet: \
                                 source y = {}, facet y = {}",
                                z[1], spec.region.y1
                            )));
                        }
                        let exclusion = spec.exclusion_radius.unwrap_or(0.5 * gap);
                        if !(exclusion > 0.0 && exclusion < gap) {
                            return Err(WorkbenchError::InvalidParameter(format!(
                                "exclusion radius must lie in (0, {gap}) so the excluded \
                                 ball stays below the facet, got {exclusion}"
                            )));
                        }
                        Some(PreparedSlab {
                            region: spec.region,
                            exclusion,
                        })
                    }
                };
                Ok(Prepared {
                    concentric_circles: concentric_circle_pair(inner, outer),
                    shell_rect: Some(node_bounds(&co)),
                    contours: Some((ci, co)),
                    slab,
                    far_center: center,
                })
            }
            (engine, geometry) => Err(WorkbenchError::InvalidParameter(format!(
                "engine {engine:?} does not accept geometry {geometry:?}"
            ))),
        }
    }

    fn check_resolution(&self) -> Result<()> {
        let r = &self.resolution;
        if r.radial_panels == 0 || r.n_theta < 8 || r.grid_nx < 4 || r.grid_ny < 4 {
            return Err(WorkbenchError::InvalidParameter(
                "norm resolution needs radial_panels >= 1, n_theta >= 8 and \
                 grid sizes >= 4"
                    .into(),
            ));
        }
        Ok(())
    }

    fn check_series_source(&self) -> Result<()> {
        if self.source.amplitude.im != 0.0 {
            return Err(WorkbenchError::InvalidParameter(
                "series engines take real source amplitudes".into(),
            ));
        }
        if self.engine == SweepEngine::BallSeries {
            if let SourceKind::Dipole { .. } = self.source.kind {
                return Err(WorkbenchError::InvalidParameter(
                    "the sphere series supports point sources only".into(),
                ));
            }
        }
        Ok(())
    }

    fn check_far_source_gap(&self, gap: f64) -> Result<()> {
        if gap < 0.01 * self.far_radius {
            return Err(WorkbenchError::InvalidParameter(format!(
                "far-field circle of radius {} passes within {gap:.3e} of the \
                 source radius; move it off the source",
                self.far_radius
            )));
        }
        Ok(())
    }
}

fn concentric_circle_pair(inner: &ShapeSpec, outer: &ShapeSpec) -> bool {
    match (inner, outer) {
        (
            ShapeSpec::Circle { center: c1, .. },
            ShapeSpec::Circle { center: c2, .. },
        ) => c1 == c2,
        _ => false,
    }
}

fn node_centroid(c: &Contour) -> [f64; 2] {
    let mut acc = [0.0f64; 2];
    for p in &c.nodes {
        acc[0] += p[0];
        acc[1] += p[1];
    }
    [acc[0] / c.n as f64, acc[1] / c.n as f64]
}

fn node_bounds(c: &Contour) -> Rect {
    let mut r = Rect {
        x0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y0: f64::INFINITY,
        y1: f64::NEG_INFINITY,
    };
    for p in &c.nodes {
        r.x0 = r.x0.min(p[0]);
        r.x1 = r.x1.max(p[0]);
        r.y0 = r.y0.min(p[1]);
        r.y1 = r.y1.max(p[1]);
    }
    r
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

// ---------------------------------------------------------------------------
// Sweep execution
// ---------------------------------------------------------------------------

/// Solve the problem at every eta and return the records sorted by
/// decreasing |eta| (the direction of the loss limit).
///
/// Per-point failures do not abort the sweep: the record keeps the error
/// text and NaN diagnostics. Points are distributed over a scoped thread
/// pool; each worker owns its operator cache, so factorizations for a
/// shared exterior wavenumber are reused across that worker's etas.
pub fn eta_sweep(problem: &SweepProblem, etas: &[Complex64]) -> Result<Vec<SweepRecord>> {
    let prep = problem.prepare()?;
    if etas.is_empty() {
        return Err(WorkbenchError::InvalidParameter(
            "eta sweep needs at least one eta".into(),
        ));
    }
    for (i, eta) in etas.iter().enumerate() {
        if !eta.re.is_finite() || !eta.im.is_finite() || eta.im < 0.0 {
            return Err(WorkbenchError::InvalidParameter(format!(
                "eta[{i}] = {eta} must be finite with Im eta >= 0"
            )));
        }
    }

    let n = etas.len();
    let workers = thread::available_parallelism()
        .map(|c| c.get())
        .unwrap_or(1)
        .clamp(1, n);
    let mut slots: Vec<Option<SweepRecord>> = vec![None; n];
    thread::scope(|scope| {
        let prep = &prep;
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            handles.push(scope.spawn(move || {
                let mut cache = OpCache::new();
                let mut out = Vec::new();
                let mut idx = w;
                while idx < n {
                    out.push((idx, sweep_point(problem, prep, etas[idx], &mut cache)));
                    idx += workers;
                }
                out
            }));
        }
        for h in handles {
            for (i, rec) in h.join().expect("sweep worker panicked") {
                slots[i] = Some(rec);
            }
        }
    });
    let mut records: Vec<SweepRecord> = slots
        .into_iter()
        .map(|s| s.expect("every sweep index is assigned to a worker"))
        .collect();
    records.sort_by(|a, b| {
        b.eta
            .norm()
            .partial_cmp(&a.eta.norm())
            .expect("etas were checked finite")
    });
    Ok(records)
}

fn sweep_point(
    problem: &SweepProblem,
    prep: &Prepared,
    eta: Complex64,
    cache: &mut OpCache,
) -> SweepRecord {
    compute_point(problem, prep, eta, cache).unwrap_or_else(|e| SweepRecord {
        eta,
        shell_h1: f64::NAN,
        slab_h1: None,
        condition_estimate: f64::NAN,
        far_norm: f64::NAN,
        truncation_or_nodes: 0,
        error: Some(e.to_string()),
    })
}

/// Shell coefficient relative to the exterior, a_i/a_e = 1/tau. This is the
/// permittivity the quasi-static series engines take in place of the full
/// medium.
fn qs_shell_coefficient(med: &MediumParams) -> Result<Complex64> {
    Ok(med.tau()?.inv())
}

fn compute_point(
    problem: &SweepProblem,
    prep: &Prepared,
    eta: Complex64,
    cache: &mut OpCache,
) -> Result<SweepRecord> {
    let med = problem.medium.with_eta(eta);
    let src = &problem.source;
    match problem.engine {
        SweepEngine::AnnulusSeries => {
            let (rc, rs) = match problem.geometry {
                SweepGeometry::Annulus { r_core, r_shell } => (r_core, r_shell),
                _ => unreachable!("prepare fixed the engine/geometry pairing"),
            };
            let cfg = annulus_config_from_source(rc, rs, src);
            let sol = if med.omega == 0.0 {
                annulus_solve_qs(&cfg, qs_shell_coefficient(&med)?, problem.core_matched)?
            } else {
                annulus_solve_dynamic(&cfg, &med)?
            };
            Ok(SweepRecord {
                eta,
                shell_h1: sol.shell_h1(rc, rs)?,
                slab_h1: None,
                condition_estimate: f64::NAN,
                far_norm: sol.exterior_l2_on_circle(problem.far_radius)?,
                truncation_or_nodes: sol.modes_used,
                error: None,
            })
        }
        SweepEngine::BallSeries => {
            let (rc, rs) = match problem.geometry {
                SweepGeometry::Ball { r_core, r_shell } => (r_core, r_shell),
                _ => unreachable!("prepare fixed the engine/geometry pairing"),
            };
            let z = src.location;
            let cfg = BallConfig {
                amplitude: src.amplitude.re,
                ..BallConfig::point(rc, rs, (z[0] * z[0] + z[1] * z[1]).sqrt())
            };
            let sol = if med.omega == 0.0 {
                ball_solve_qs(&cfg, qs_shell_coefficient(&med)?)?
            } else {
                ball_solve_dynamic(&cfg, &med)?
            };
            Ok(SweepRecord {
                eta,
                shell_h1: sol.shell_h1(rc, rs)?,
                slab_h1: None,
                condition_estimate: f64::NAN,
                far_norm: sphere_l2(&sol, problem.far_radius)?,
                truncation_or_nodes: sol.modes_used,
                error: None,
            })
        }
        SweepEngine::Bem => {
            let (inner, outer) = prep
                .contours
                .as_ref()
                .expect("prepare built contours for the boundary-element engine");
            let res = &problem.resolution;
            let sol = solve_transmission(&med, inner, outer, src, cache)?;
            let shell_h1 = if prep.concentric_circles {
                sol.shell_h1(res.radial_panels, res.n_theta)?.h1
            } else {
                masked_shell_h1(
                    &sol,
                    prep.shell_rect
                        .as_ref()
                        .expect("prepare stored the outer bounds"),
                    res,
                )?
            };
            let slab_h1 = match &prep.slab {
                None => None,
                Some(ps) => Some(slab_norm(&sol, ps, src.location, res)?),
            };
            Ok(SweepRecord {
                eta,
                shell_h1,
                slab_h1,
                condition_estimate: sol.condition_estimate,
                far_norm: ring_l2(&sol, prep.far_center, problem.far_radius, res.n_theta)?,
                truncation_or_nodes: outer.n,
                error: None,
            })
        }
    }
}

fn annulus_config_from_source(rc: f64, rs: f64, src: &SourceSpec) -> AnnulusConfig {
    let z = src.location;
    let r0 = (z[0] * z[0] + z[1] * z[1]).sqrt();
    let mut cfg = match src.kind {
        SourceKind::Point => AnnulusConfig::point(rc, rs, r0),
        SourceKind::Dipole { moment } => AnnulusConfig::dipole(rc, rs, r0, moment),
    };
    cfg.source_angle = z[1].atan2(z[0]);
    cfg.amplitude = src.amplitude.re;
    cfg
}

/// L2 norm of the total field on the sphere of the given radius.
fn sphere_l2(sol: &BallSolution, radius: f64) -> Result<f64> {
    let (xg, wg) = gauss_legendre(SPHERE_GL_ORDER);
    let mut acc = 0.0f64;
    for (ct, w) in xg.iter().zip(&wg) {
        acc += w * sol.eval(radius, *ct)?.norm_sqr();
    }
    Ok((TWO_PI * radius * radius * acc).sqrt())
}

/// L2 norm of the total exterior field on a circle, trapezoid rule.
fn ring_l2(
    sol: &TransmissionSolution,
    center: [f64; 2],
    radius: f64,
    samples: usize,
) -> Result<f64> {
    let pts: Vec<[f64; 2]> = (0..samples)
        .map(|j| {
            let t = TWO_PI * j as f64 / samples as f64;
            [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
        })
        .collect();
    let vals = sol.region_values(Region::Exterior, &pts, false)?;
    let acc: f64 = vals.iter().map(|v| v.value.norm_sqr()).sum();
    Ok((acc * TWO_PI * radius / samples as f64).sqrt())
}

/// Shell H1 norm on a masked Cartesian grid, for contour pairs that are not
/// concentric circles. Cells outside the shell or within the evaluation
/// standoff are trimmed.
fn masked_shell_h1(
    sol: &TransmissionSolution,
    rect: &Rect,
    res: &NormResolution,
) -> Result<f64> {
    h1_masked_grid(
        rect,
        res.grid_nx,
        res.grid_ny,
        |p| sol.region_of(p) == Region::Shell && sol.evaluation_clearance(p) > 0.0,
        |p| sol.eval_gradient(p).map(|(_, v, g)| (v, g)),
    )
}

/// Slab diagnostic: H1 over the box above the facet (shell side) plus H1
/// over the mirror box below it (exterior side, source ball excluded).
fn slab_norm(
    sol: &TransmissionSolution,
    ps: &PreparedSlab,
    source: [f64; 2],
    res: &NormResolution,
) -> Result<f64> {
    let above = h1_masked_grid(
        &ps.region.box_above(),
        res.grid_nx,
        res.grid_ny,
        |p| sol.region_of(p) == Region::Shell && sol.evaluation_clearance(p) > 0.0,
        |p| sol.eval_gradient(p).map(|(_, v, g)| (v, g)),
    )?;
    let below = h1_masked_grid(
        &ps.region.box_below(),
        res.grid_nx,
        res.grid_ny,
        |p| {
            sol.region_of(p) == Region::Exterior
                && dist(p, source) > ps.exclusion
                && sol.evaluation_clearance(p) > 0.0
        },
        |p| sol.eval_gradient(p).map(|(_, v, g)| (v, g)),
    )?;
    Ok(above + below)
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Limit behaviour of the recorded norms as eta -> 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlowUpLabel {
    /// Norms level off; no resonance.
    Bounded,
    /// Norms grow without the resonant square-root rate: weak anomalous
    /// localized resonance.
    WAlr,
    /// The fitted slope sits above the resonant window, yet the
    /// square-root-rescaled norms still grow end to end: borderline
    /// cloaking-type resonance.
    WeakCalr,
    /// Fitted slope at or past the square-root signature: anomalous
    /// localized resonance.
    Alr,
    /// The fit is too noisy or the criteria conflict.
    Inconclusive,
}

impl fmt::Display for BlowUpLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlowUpLabel::Bounded => "bounded",
            BlowUpLabel::WAlr => "w-ALR",
            BlowUpLabel::WeakCalr => "weak-CALR",
            BlowUpLabel::Alr => "ALR",
            BlowUpLabel::Inconclusive => "inconclusive",
        })
    }
}

/// Decision thresholds for [`classify_norm`]. The defaults encode the
/// square-root resonance signature with a margin for finite sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyThresholds {
    /// Slopes at or below this are full resonance.
    pub alr_slope: f64,
    /// Slopes at or below this count as growth for the borderline label.
    pub weak_slope: f64,
    /// |slope| below this counts as flat.
    pub flat_slope: f64,
    /// End-to-end norm ratio that counts as growth.
    pub growth_ratio: f64,
    /// Fits with a slope standard error above this are inconclusive.
    pub stderr_max: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> ClassifyThresholds {
        ClassifyThresholds {
            alr_slope: -0.45,
            weak_slope: -0.05,
            flat_slope: 0.05,
            growth_ratio: 1.2,
            stderr_max: 0.1,
        }
    }
}

/// Which recorded norm feeds the fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormSelector {
    Shell,
    Slab,
}

/// Fitted growth law and its label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: BlowUpLabel,
    /// Least-squares slope of ln N against ln |eta|; negative means the
    /// norm grows as eta -> 0.
    pub fitted_slope: f64,
    /// Standard error of the fitted slope.
    pub slope_stderr: f64,
    /// Norm at the smallest |eta| over the norm at the largest.
    pub growth_ratio: f64,
    /// Same ratio after multiplying each norm by sqrt|eta|.
    pub scaled_growth_ratio: f64,
    /// Records that survived filtering and fed the fit.
    pub points_used: usize,
}

/// Classify the shell-norm growth of a sweep with the default thresholds'
/// structure supplied by the caller.
pub fn classify(
    records: &[SweepRecord],
    thresholds: &ClassifyThresholds,
) -> Result<Classification> {
    classify_norm(records, NormSelector::Shell, thresholds)
}

/// Fit ln N against ln |eta| over the valid records and label the growth.
///
/// Needs at least four valid points spanning at least two decades of
/// |eta|. The decision runs in a fixed order: a noisy fit is inconclusive
/// outright; a slope at or below the ALR threshold is full resonance;
/// next, growth that survives square-root rescaling is the borderline
/// label; next, plain end-to-end growth is weak resonance; a flat slope
/// without growth is bounded; anything left is inconclusive.
pub fn classify_norm(
    records: &[SweepRecord],
    selector: NormSelector,
    thresholds: &ClassifyThresholds,
) -> Result<Classification> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for r in records {
        if r.error.is_some() {
            continue;
        }
        let norm = match selector {
            NormSelector::Shell => Some(r.shell_h1),
            NormSelector::Slab => r.slab_h1,
        };
        let Some(nm) = norm else { continue };
        let ae = r.eta.norm();
        if nm.is_finite() && nm > 0.0 && ae.is_finite() && ae > 0.0 {
            pairs.push((ae, nm));
        }
    }
    if pairs.len() < 4 {
        return Err(WorkbenchError::InvalidParameter(format!(
            "classification needs at least 4 valid records, got {}",
            pairs.len()
        )));
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite |eta|"));
    let span = pairs[0].0 / pairs[pairs.len() - 1].0;
    if span.log10() < 2.0 - 1e-9 {
        return Err(WorkbenchError::InvalidParameter(format!(
            "classification needs |eta| spanning at least two decades, got {:.3}",
            span.log10()
        )));
    }

    let m = pairs.len();
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / m as f64;
    let ybar = ys.iter().sum::<f64>() / m as f64;
    let mut sxx = 0.0f64;
    let mut sxy = 0.0f64;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - xbar) * (x - xbar);
        sxy += (x - xbar) * (y - ybar);
    }
    let slope = sxy / sxx;
    let mut ss_res = 0.0f64;
    for (x, y) in xs.iter().zip(&ys) {
        let r = y - ybar - slope * (x - xbar);
        ss_res += r * r;
    }
    let stderr = (ss_res / ((m - 2) as f64 * sxx)).sqrt();

    let (eta_hi, n_hi) = pairs[0];
    let (eta_lo, n_lo) = pairs[m - 1];
    let growth_ratio = n_lo / n_hi;
    let scaled_growth_ratio = (eta_lo.sqrt() * n_lo) / (eta_hi.sqrt() * n_hi);

    let t = thresholds;
    let label = if stderr > t.stderr_max {
        BlowUpLabel::Inconclusive
    } else if slope <= t.alr_slope {
        BlowUpLabel::Alr
    } else if slope <= t.weak_slope && scaled_growth_ratio >= t.growth_ratio {
        BlowUpLabel::WeakCalr
    } else if growth_ratio >= t.growth_ratio {
        BlowUpLabel::WAlr
    } else if slope.abs() < t.flat_slope && growth_ratio < t.growth_ratio {
        BlowUpLabel::Bounded
    } else {
        BlowUpLabel::Inconclusive
    };

    Ok(Classification {
        label,
        fitted_slope: slope,
        slope_stderr: stderr,
        growth_ratio,
        scaled_growth_ratio,
        points_used: m,
    })
}

// ---------------------------------------------------------------------------
// Cloaking diagnostic
// ---------------------------------------------------------------------------

/// Relative L2 difference of two fields on a probe circle centered at the
/// origin: ||u_with - u_without|| / ||u_without||.
pub fn cloaking_metric<F, G>(
    mut with_obj: F,
    mut without_obj: G,
    probe_radius: f64,
    samples: usize,
) -> Result<f64>
where
    F: FnMut(f64, f64) -> Result<Complex64>,
    G: FnMut(f64, f64) -> Result<Complex64>,
{
    if !(probe_radius > 0.0 && probe_radius.is_finite()) || samples < 8 {
        return Err(WorkbenchError::InvalidParameter(
            "cloaking metric needs a positive probe radius and >= 8 samples".into(),
        ));
    }
    let mut diff = 0.0f64;
    let mut base = 0.0f64;
    for j in 0..samples {
        let t = TWO_PI * j as f64 / samples as f64;
        let (x, y) = (probe_radius * t.cos(), probe_radius * t.sin());
        let a = with_obj(x, y)?;
        let b = without_obj(x, y)?;
        diff += (a - b).norm_sqr();
        base += b.norm_sqr();
    }
    Ok((diff / base.max(TINY)).sqrt())
}

/// Cloaking run for a polarizable point dipole outside a quasi-static
/// shell under a uniform applied field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarizableCloak {
    /// Relative far-circle signature of the dipole; small means cloaked.
    pub metric: f64,
    /// Self-consistent induced moment p = alpha E_loc / (1 - alpha Lambda).
    pub induced_moment: Complex64,
    /// Shell feedback Lambda: the x-gradient of the shell's response to a
    /// unit x-dipole, evaluated back at the dipole site.
    pub shell_response: Complex64,
}

/// Quasi-static cloaking metric for a polarizable dipole at radius
/// `r_dipole` on the x axis, outside the shell (r_core, r_shell) with
/// coefficient -1 + i sigma and matched core, under a uniform x-directed
/// applied field.
///
/// The dipole moment solves the self-consistency equation with the shell
/// feedback included; the metric compares the far circle with and without
/// the dipole. Inside the critical radius the feedback is resonant and the
/// induced moment collapses; outside it the dipole scatters freely.
pub fn qs_polarizable_cloaking(
    r_core: f64,
    r_shell: f64,
    r_dipole: f64,
    sigma: f64,
    alpha: f64,
    probe_radius: f64,
    samples: usize,
) -> Result<PolarizableCloak> {
    if !(sigma > 0.0) || !(alpha > 0.0) {
        return Err(WorkbenchError::InvalidParameter(
            "cloaking run needs sigma > 0 and alpha > 0".into(),
        ));
    }
    if !(r_dipole > r_shell) {
        return Err(WorkbenchError::InvalidParameter(format!(
            "the dipole must sit outside the shell: r_dipole = {r_dipole}, \
             r_shell = {r_shell}"
        )));
    }
    let eps = Complex64::new(-1.0, sigma);
    let bg = annulus_solve_qs(&AnnulusConfig::uniform_x(r_core, r_shell), eps, true)?;
    let dip = annulus_solve_qs(
        &AnnulusConfig::dipole(r_core, r_shell, r_dipole, [1.0, 0.0]),
        eps,
        true,
    )?;

    // Local applied field at the dipole site (x component of -grad u of the
    // background run) and the shell feedback of a unit dipole onto itself.
    let e_loc = -bg.eval_gradient(r_dipole, 0.0)?[0];
    let lambda = -dip.exterior_response_gradient(r_dipole, 0.0)?[0];
    let p = alpha * e_loc / (Complex64::new(1.0, 0.0) - alpha * lambda);

    let metric = cloaking_metric(
        |x, y| Ok(bg.eval(x, y)? + p * dip.eval(x, y)?),
        |x, y| bg.eval(x, y),
        probe_radius,
        samples,
    )?;
    Ok(PolarizableCloak {
        metric,
        induced_moment: p,
        shell_response: lambda,
    })
}

// ---------------------------------------------------------------------------
// Mirror-symmetry diagnostic
// ---------------------------------------------------------------------------

/// Sup of |u(x) - u(mirror x)| over cell centers of the box below the
/// facet, relative to the largest sampled magnitude. The mirror image of
/// the lower box is the upper box, so this measures how closely the field
/// continues across the facet by reflection. Points within
/// `exclusion_radius` of the source are skipped, as are points where
/// either evaluation is refused; at least one pair must survive.
pub fn mirror_asymmetry<F>(
    mut field: F,
    region: &FlatSlabRegion,
    source: [f64; 2],
    exclusion_radius: f64,
    nx: usize,
    ny: usize,
) -> Result<f64>
where
    F: FnMut([f64; 2]) -> Result<Complex64>,
{
    if nx < 2 || ny < 2 {
        return Err(WorkbenchError::InvalidParameter(
            "mirror probe needs at least a 2 x 2 grid".into(),
        ));
    }
    if !(exclusion_radius >= 0.0 && exclusion_radius.is_finite()) {
        return Err(WorkbenchError::InvalidParameter(
            "exclusion radius must be finite and nonnegative".into(),
        ));
    }
    let below = region.box_below();
    if !below.contains(source) {
        return Err(WorkbenchError::InvalidParameter(format!(
            "mirror probe expects the source inside the lower box, got \
             ({}, {})",
            source[0], source[1]
        )));
    }
    let hx = below.width() / nx as f64;
    let hy = below.height() / ny as f64;
    let mut sup = 0.0f64;
    let mut scale = 0.0f64;
    let mut used = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            let p = [
                below.x0 + (i as f64 + 0.5) * hx,
                below.y0 + (j as f64 + 0.5) * hy,
            ];
            if dist(p, source) <= exclusion_radius {
                continue;
            }
            let (Ok(lo), Ok(hi)) = (field(p), field(region.mirror(p))) else {
                continue;
            };
            sup = sup.max((lo - hi).norm());
            scale = scale.max(lo.norm()).max(hi.norm());
            used += 1;
        }
    }
    if used == 0 {
        return Err(WorkbenchError::InvalidParameter(
            "mirror probe found no evaluable point pairs".into(),
        ));
    }
    Ok(sup / scale.max(TINY))
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// Sweep CSV format tag; bump when columns change.
pub const SWEEP_CSV_VERSION: &str = "# alrshell sweep csv v1";
/// Field-grid CSV format tag; bump when columns change.
pub const FIELD_CSV_VERSION: &str = "# alrshell field-grid csv v1";

fn csv_field(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

/// Write sweep records as versioned CSV. Optional columns are left empty;
/// error text is quoted.
pub fn sweep_to_csv<W: Write>(records: &[SweepRecord], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_VERSION}")?;
    writeln!(
        out,
        "eta_re,eta_im,abs_eta,shell_h1,slab_h1,condition_estimate,far_norm,\
         truncation_or_nodes,error"
    )?;
    for r in records {
        let slab = r.slab_h1.map(csv_field).unwrap_or_default();
        let err = r
            .error
            .as_ref()
            .map(|e| format!("\"{}\"", e.replace('"', "\"\"")))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(r.eta.re),
            csv_field(r.eta.im),
            csv_field(r.eta.norm()),
            csv_field(r.shell_h1),
            slab,
            csv_field(r.condition_estimate),
            csv_field(r.far_norm),
            r.truncation_or_nodes,
            err
        )?;
    }
    Ok(())
}

/// Sample a solved field on a Cartesian grid and write it as versioned
/// CSV. Cell centers that the evaluator refuses (inside the near-field
/// standoff) keep their row with NaN values.
pub fn field_grid_csv<W: Write>(
    sol: &TransmissionSolution,
    rect: &Rect,
    nx: usize,
    ny: usize,
    mut out: W,
) -> Result<()> {
    if nx == 0 || ny == 0 || rect.width() <= 0.0 || rect.height() <= 0.0 {
        return Err(WorkbenchError::InvalidParameter(
            "field grid needs a nonempty rectangle and positive cell counts".into(),
        ));
    }
    writeln!(out, "{FIELD_CSV_VERSION}")?;
    writeln!(out, "x,y,region,u_re,u_im")?;
    let hx = rect.width() / nx as f64;
    let hy = rect.height() / ny as f64;
    for i in 0..nx {
        for j in 0..ny {
            let p = [
                rect.x0 + (i as f64 + 0.5) * hx,
                rect.y0 + (j as f64 + 0.5) * hy,
            ];
            let region = match sol.region_of(p) {
                Region::Core => "core",
                Region::Shell => "shell",
                Region::Exterior => "exterior",
            };
            let (re, im) = match sol.eval(p) {
                Ok((_, v)) => (csv_field(v.re), csv_field(v.im)),
                Err(_) => ("nan".into(), "nan".into()),
            };
            writeln!(out, "{},{},{region},{re},{im}", p[0], p[1])?;
        }
    }
    Ok(())
}
