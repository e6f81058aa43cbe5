//! Command-line front end: solve one transmission problem, run an eta
//! sweep with classification, self-check the numerics, or print the
//! critical radii of a concentric shell.
//!
//! Exit codes: 0 on success, 2 when a sweep classification comes back
//! inconclusive, 1 on any error or failed self-check.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use alrshell::boundary_ops::{assemble_trace_ops, eval_potential, LayerKind, OpCache};
use alrshell::config::Config;
use alrshell::geometry::{make_contour, Contour, Rect, ShapeSpec};
use alrshell::medium::MediumParams;
use alrshell::oracle::{annulus_solve_dynamic, critical_radii, AnnulusConfig};
use alrshell::resonance_driver::{
    classify_norm, eta_sweep, field_grid_csv, sweep_to_csv, BlowUpLabel, Classification,
    ClassifyThresholds, NormSelector, SweepEngine, SweepGeometry,
};
use alrshell::transmission::{
    h1_masked_grid, solve_transmission, Region, SourceSpec, TransmissionSolution,
};
use alrshell::{Result, WorkbenchError};

#[derive(Parser)]
#[command(
    name = "alrshell",
    version,
    about = "Boundary-element workbench for negative-material shells"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one transmission problem from a config file and sample the
    /// field on a grid.
    Solve {
        /// Path to the JSON configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured eta sweep, write the records, and classify the
    /// norm growth.
    Sweep {
        /// Path to the JSON configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in quadrature, identity and reference cross-checks.
    Validate,
    /// Print the critical source radii of a concentric shell.
    Radii {
        #[arg(long)]
        r_core: f64,
        #[arg(long)]
        r_shell: f64,
        /// Source radius used for the resonant-annuli report.
        #[arg(long)]
        source_radius: f64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Solve { config } => cmd_solve(&Config::load(&config)?),
        Cmd::Sweep { config } => cmd_sweep(&Config::load(&config)?),
        Cmd::Validate => cmd_validate(),
        Cmd::Radii {
            r_core,
            r_shell,
            source_radius,
        } => cmd_radii(r_core, r_shell, source_radius),
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn cmd_solve(cfg: &Config) -> Result<ExitCode> {
    let SweepGeometry::Contours {
        inner,
        outer,
        n_nodes,
    } = &cfg.geometry
    else {
        return Err(WorkbenchError::InvalidParameter(
            "solve works on the contours geometry; series geometries \
             belong to sweep"
                .into(),
        ));
    };
    let ci = make_contour(inner.clone(), *n_nodes)?;
    let co = make_contour(outer.clone(), *n_nodes)?;
    let src = cfg.source.to_spec();
    let mut cache = OpCache::new();
    let sol = solve_transmission(&cfg.medium, &ci, &co, &src, &mut cache)?;

    let res = &cfg.sweep.resolution;
    let shell_h1 = if concentric_circles(inner, outer) {
        sol.shell_h1(res.radial_panels, res.n_theta)?.h1
    } else {
        let rect = node_bounds(&co);
        h1_masked_grid(
            &rect,
            res.grid_nx,
            res.grid_ny,
            |p| sol.region_of(p) == Region::Shell && sol.evaluation_clearance(p) > 0.0,
            |p| sol.eval_gradient(p).map(|(_, v, g)| (v, g)),
        )?
    };
    let far = ring_l2(&sol, node_centroid(&co), cfg.sweep.far_radius, res.n_theta)?;

    println!("solve: {n_nodes} nodes per contour");
    println!("  k_e                 {}", fmt_c(sol.k_e));
    println!("  k_i                 {}", fmt_c(sol.k_i));
    println!("  tau                 {}", fmt_c(sol.tau));
    println!("  condition estimate  {:.3e}", sol.condition_estimate);
    println!("  solve residual      {:.3e}", sol.solve_residual);
    println!("  trace mismatch      {:.3e}", sol.trace_mismatch);
    println!("  flux mismatch       {:.3e}", sol.flux_mismatch);
    println!("  shell H1            {:.9e}", shell_h1);
    println!(
        "  far L2 (r = {})     {:.9e}",
        cfg.sweep.far_radius, far
    );

    let grid = &cfg.output.grid;
    if let Some(path) = &cfg.output.field_csv {
        let mut buf = Vec::new();
        field_grid_csv(&sol, &grid.rect, grid.nx, grid.ny, &mut buf)?;
        fs::write(path, buf)?;
        println!(
            "field grid: wrote {} x {} window to {path}",
            grid.nx, grid.ny
        );
    } else {
        println!("field grid: no output.field_csv path configured, skipped");
    }
    Ok(ExitCode::SUCCESS)
}

fn concentric_circles(inner: &ShapeSpec, outer: &ShapeSpec) -> bool {
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

fn ring_l2(
    sol: &TransmissionSolution,
    center: [f64; 2],
    radius: f64,
    samples: usize,
) -> Result<f64> {
    let pts: Vec<[f64; 2]> = (0..samples)
        .map(|j| {
            let t = std::f64::consts::TAU * j as f64 / samples as f64;
            [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
        })
        .collect();
    let vals = sol.region_values(Region::Exterior, &pts, false)?;
    let acc: f64 = vals.iter().map(|v| v.value.norm_sqr()).sum();
    Ok((acc * std::f64::consts::TAU * radius / samples as f64).sqrt())
}

fn fmt_c(z: Complex64) -> String {
    format!("{:.6e} {:+.6e}i", z.re, z.im)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// JSON summary written next to the records. The note records why the
/// labels carry numeric cutoffs at all.
#[derive(Serialize)]
struct SweepSummary<'a> {
    engine: SweepEngine,
    norm: NormSelector,
    points: usize,
    failed_points: usize,
    thresholds: &'a ClassifyThresholds,
    threshold_note: &'static str,
    classification: Classification,
}

const THRESHOLD_NOTE: &str = "the labels compare a finite sweep against \
asymptotic growth classes, so the slope gates around the square-root \
signature and the growth ratios are configurable cutoffs rather than \
derived constants";

fn cmd_sweep(cfg: &Config) -> Result<ExitCode> {
    let problem = cfg.to_problem();
    let etas = cfg.eta_values()?;
    let records = eta_sweep(&problem, &etas)?;

    if let Some(path) = &cfg.output.records_csv {
        let mut buf = Vec::new();
        sweep_to_csv(&records, &mut buf)?;
        fs::write(path, buf)?;
        println!("records: wrote {} sweep points to {path}", records.len());
    } else {
        sweep_to_csv(&records, std::io::stdout().lock())?;
    }
    for r in &records {
        match &r.error {
            Some(e) => println!("  |eta| {:.3e}  FAILED: {e}", r.eta.norm()),
            None => println!(
                "  |eta| {:.3e}  shell H1 {:.6e}{}",
                r.eta.norm(),
                r.shell_h1,
                r.slab_h1
                    .map(|s| format!("  slab H1 {s:.6e}"))
                    .unwrap_or_default()
            ),
        }
    }

    let classification = classify_norm(&records, cfg.sweep.norm, &cfg.sweep.thresholds)?;
    let summary = SweepSummary {
        engine: cfg.sweep.engine,
        norm: cfg.sweep.norm,
        points: records.len(),
        failed_points: records.iter().filter(|r| r.error.is_some()).count(),
        thresholds: &cfg.sweep.thresholds,
        threshold_note: THRESHOLD_NOTE,
        classification,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(WorkbenchError::from)?;
    if let Some(path) = &cfg.output.summary_json {
        fs::write(path, &text)?;
        println!("summary: wrote classification to {path}");
    }
    println!(
        "classification: {} (slope {:.4} +- {:.4}, growth x{:.3})",
        classification.label,
        classification.fitted_slope,
        classification.slope_stderr,
        classification.growth_ratio
    );
    Ok(if classification.label == BlowUpLabel::Inconclusive {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct Check {
    name: &'static str,
    measured: f64,
    gate: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.measured < self.gate
    }
}

fn cmd_validate() -> Result<ExitCode> {
    let checks = [
        check_circle_eigenvalues()?,
        check_calderon_commutator()?,
        check_jump_relations()?,
        check_series_equivalence()?,
        check_energy_identity()?,
    ];
    let mut all = true;
    for c in &checks {
        let ok = c.passed();
        all &= ok;
        println!(
            "{} {:<38} measured {:.3e}  gate {:.0e}",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.gate
        );
    }
    Ok(if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn circle(radius: f64, n: usize) -> Result<Contour> {
    make_contour(
        ShapeSpec::Circle {
            radius,
            center: [0.0, 0.0],
        },
        n,
    )
}

fn fourier_mode(c: &Contour, m: i32) -> Vec<Complex64> {
    c.params
        .iter()
        .map(|&t| Complex64::from_polar(1.0, m as f64 * t))
        .collect()
}

fn sup_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Static single-layer symbol on a circle of radius r: V e_m = r/(2m) e_m.
fn check_circle_eigenvalues() -> Result<Check> {
    let r = 2.0;
    let cc = circle(r, 128)?;
    let ops = assemble_trace_ops(&cc, Complex64::new(0.0, 0.0))?;
    let mut worst = 0.0f64;
    for m in 1..=4 {
        let x = fourier_mode(&cc, m);
        let lam = r / (2.0 * m as f64);
        let y = ops.v.apply(&x);
        let dev: Vec<Complex64> = y.iter().zip(&x).map(|(a, b)| a - lam * b).collect();
        worst = worst.max(sup_norm(&dev) / lam);
    }
    Ok(Check {
        name: "circle single-layer eigenvalues (n=128)",
        measured: worst,
        gate: 1e-10,
    })
}

/// K V = V K* in action on Fourier modes, static kernel on an ellipse.
fn check_calderon_commutator() -> Result<Check> {
    let e = make_contour(
        ShapeSpec::Ellipse {
            semi_x: 4.0,
            semi_y: 3.0,
            center: [0.0, 0.0],
        },
        256,
    )?;
    let ops = assemble_trace_ops(&e, Complex64::new(0.0, 0.0))?;
    let kv = ops.k.matrix.matmul(&ops.v.matrix);
    let mut com = ops.v.matrix.matmul(&ops.kstar.matrix);
    com.add_scaled(&kv, Complex64::new(-1.0, 0.0));
    let mut worst = 0.0f64;
    for m in [0i32, 1, 2, 3, 6] {
        let x = fourier_mode(&e, m);
        worst = worst.max(sup_norm(&com.matvec(&x)));
    }
    Ok(Check {
        name: "Calderon commutator, ellipse (n=256)",
        measured: worst,
        gate: 1e-8,
    })
}

/// One-sided layer-potential limits by Richardson extrapolation in the
/// standoff: S continuous, normal derivative of S jumps by the density,
/// D jumps by the density.
fn check_jump_relations() -> Result<Check> {
    let cc = circle(1.0, 32_768)?;
    let k = Complex64::new(1.0, 0.0);
    let dens: Vec<Complex64> = cc
        .params
        .iter()
        .map(|&t| Complex64::new(t.cos(), 0.0))
        .collect();
    let theta: f64 = 0.7;
    let dir = [theta.cos(), theta.sin()];
    let phi_here = Complex64::new(theta.cos(), 0.0);
    let eps = [0.1, 0.01, 0.001];

    let extrap = |vals: [Complex64; 3]| -> Complex64 {
        let mut v = vals.to_vec();
        for lev in 1..3 {
            for i in 0..3 - lev {
                let num = v[i + 1] * eps[i] - v[i] * eps[i + lev];
                v[i] = num / (eps[i] - eps[i + lev]);
            }
        }
        v[0]
    };

    let mut s_out = [Complex64::default(); 3];
    let mut s_in = [Complex64::default(); 3];
    let mut ds_out = [Complex64::default(); 3];
    let mut ds_in = [Complex64::default(); 3];
    let mut d_out = [Complex64::default(); 3];
    let mut d_in = [Complex64::default(); 3];
    for (i, &e) in eps.iter().enumerate() {
        let po = [[dir[0] * (1.0 + e), dir[1] * (1.0 + e)]];
        let pi_ = [[dir[0] * (1.0 - e), dir[1] * (1.0 - e)]];
        let so = eval_potential(LayerKind::Single, &cc, &dens, k, &po, true)?[0];
        let si = eval_potential(LayerKind::Single, &cc, &dens, k, &pi_, true)?[0];
        s_out[i] = so.value;
        s_in[i] = si.value;
        let go = so.gradient.expect("gradient requested");
        let gi = si.gradient.expect("gradient requested");
        ds_out[i] = go[0] * dir[0] + go[1] * dir[1];
        ds_in[i] = gi[0] * dir[0] + gi[1] * dir[1];
        d_out[i] = eval_potential(LayerKind::Double, &cc, &dens, k, &po, false)?[0].value;
        d_in[i] = eval_potential(LayerKind::Double, &cc, &dens, k, &pi_, false)?[0].value;
    }

    let continuity = (extrap(s_out) - extrap(s_in)).norm();
    let ds_jump = (extrap(ds_in) - extrap(ds_out) - phi_here).norm();
    let d_jump = (extrap(d_out) - extrap(d_in) - phi_here).norm();
    Ok(Check {
        name: "jump relations by extrapolation",
        measured: continuity.max(ds_jump).max(d_jump),
        gate: 1e-4,
    })
}

fn standard_solve(eta: Complex64, b: Complex64) -> Result<TransmissionSolution> {
    let med = MediumParams {
        eta,
        b,
        ..MediumParams::nondimensional()
    };
    let ci = circle(2.0, 256)?;
    let co = circle(4.0, 256)?;
    let src = SourceSpec::point([6.0, 0.0], Complex64::new(1.0, 0.0));
    let mut cache = OpCache::new();
    solve_transmission(&med, &ci, &co, &src, &mut cache)
}

/// Boundary-element fields against the separable series on concentric
/// circles: sup relative field error over probe rings in all three
/// regions, folded with the relative shell-norm error (scaled so the
/// shared gate stays meaningful for both).
fn check_series_equivalence() -> Result<Check> {
    let eta = Complex64::new(0.5, 0.0);
    let sol = standard_solve(eta, Complex64::new(1.0, 0.0))?;
    let med = MediumParams {
        eta,
        b: Complex64::new(1.0, 0.0),
        ..MediumParams::nondimensional()
    };
    let oracle = annulus_solve_dynamic(&AnnulusConfig::point(2.0, 4.0, 6.0), &med)?;

    let mut worst = 0.0f64;
    for radius in [1.0, 3.0, 5.0] {
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..8 {
            let t = std::f64::consts::TAU * (j as f64 + 0.37) / 8.0;
            let p = [radius * t.cos(), radius * t.sin()];
            let got = sol.eval(p)?.1;
            let want = oracle.eval(p[0], p[1])?;
            diff = diff.max((got - want).norm());
            scale = scale.max(want.norm());
        }
        worst = worst.max(diff / scale);
    }

    let got_h1 = sol.shell_h1(4, 96)?.h1;
    let want_h1 = oracle.shell_h1(2.0, 4.0)?;
    // The norm gate is 1e-4 while the field gate is 1e-6; fold the norm
    // deviation in at 1e-2 weight so one combined number reports both.
    let norm_dev = (got_h1 - want_h1).abs() / want_h1;
    Ok(Check {
        name: "series equivalence, circles (n=256)",
        measured: worst.max(norm_dev * 1e-2),
        gate: 1e-6,
    })
}

/// Weighted energy balance for the sign-changing shell.
fn check_energy_identity() -> Result<Check> {
    let sol = standard_solve(Complex64::new(0.0, 1e-2), Complex64::new(-1.0, 0.0))?;
    let audit = sol.energy_residual(7.5, 4, 96)?;
    Ok(Check {
        name: "weighted energy identity (n=256)",
        measured: audit.residual,
        gate: 1e-6,
    })
}

// ---------------------------------------------------------------------------
// radii
// ---------------------------------------------------------------------------

fn cmd_radii(r_core: f64, r_shell: f64, source_radius: f64) -> Result<ExitCode> {
    let cr = critical_radii(r_core, r_shell, source_radius)?;
    println!("shell ({r_core}, {r_shell}), source at {source_radius}");
    println!("  r_star   {:.9}", cr.r_star);
    println!("  r_sharp  {:.9}", cr.r_sharp);
    println!("  r_crit   {:.9}", cr.r_crit);
    if cr.resonant_annuli.is_empty() {
        println!("  resonant annuli: none (source at or beyond r_star)");
    } else {
        for (lo, hi) in &cr.resonant_annuli {
            println!("  resonant annulus ({lo:.9}, {hi:.9})");
        }
    }
    Ok(ExitCode::SUCCESS)
}
