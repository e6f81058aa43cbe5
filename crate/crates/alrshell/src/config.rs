//! Run configuration: one JSON document with sections for the geometry,
//! the medium, the source, the sweep, and the outputs.
//!
//! The file format is plain serde JSON. Complex numbers are two-element
//! arrays `[re, im]`. Only the first three sections are required; the
//! sweep and output sections fall back to the documented defaults, so a
//! minimal file is just a geometry, a medium and a source. The `solve`
//! command uses the medium's own eta as is; sweeps overwrite eta point by
//! point from the sweep section's eta grid.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::geometry::Rect;
use crate::medium::MediumParams;
use crate::resonance_driver::{
    ClassifyThresholds, NormResolution, NormSelector, SlabSpec, SweepEngine, SweepGeometry,
    SweepProblem,
};
use crate::transmission::SourceSpec;
use crate::{Result, WorkbenchError};

/// Hard cap on generated eta grids, to catch runaway exponent ranges.
const MAX_ETA_POINTS: usize = 10_000;

/// Exterior excitation, JSON form. Amplitude defaults to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Point {
        location: [f64; 2],
        #[serde(default = "default_amplitude")]
        amplitude: Complex64,
    },
    Dipole {
        location: [f64; 2],
        moment: [f64; 2],
        #[serde(default = "default_amplitude")]
        amplitude: Complex64,
    },
}

fn default_amplitude() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

impl SourceConfig {
    pub fn to_spec(self) -> SourceSpec {
        match self {
            SourceConfig::Point {
                location,
                amplitude,
            } => SourceSpec::point(location, amplitude),
            SourceConfig::Dipole {
                location,
                moment,
                amplitude,
            } => SourceSpec::dipole(location, moment, amplitude),
        }
    }
}

/// Which ray of the closed upper half plane the eta grid walks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaRay {
    /// eta = i |eta|: the lossy ray of the imaginary axis.
    Imaginary,
    /// eta = -|eta|: the real-negative ray, off the imaginary axis.
    RealNegative,
}

/// The eta list of a sweep: explicit values, or a log-spaced walk down a
/// ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaGrid {
    Explicit { values: Vec<Complex64> },
    /// |eta| from 10^start_exp down to 10^end_exp inclusive with
    /// `per_decade` points per decade, along `ray`.
    LogRay {
        start_exp: f64,
        end_exp: f64,
        per_decade: usize,
        ray: EtaRay,
    },
}

impl Default for EtaGrid {
    /// Five decades of loss on the imaginary ray, one point per decade:
    /// |eta| = 1e-2 .. 1e-6.
    fn default() -> EtaGrid {
        EtaGrid::LogRay {
            start_exp: -2.0,
            end_exp: -6.0,
            per_decade: 1,
            ray: EtaRay::Imaginary,
        }
    }
}

impl EtaGrid {
    /// Materialize the grid, largest |eta| first.
    pub fn values(&self) -> Result<Vec<Complex64>> {
        match self {
            EtaGrid::Explicit { values } => {
                if values.is_empty() {
                    return Err(WorkbenchError::InvalidParameter(
                        "explicit eta grid must not be empty".into(),
                    ));
                }
                Ok(values.clone())
            }
            EtaGrid::LogRay {
                start_exp,
                end_exp,
                per_decade,
                ray,
            } => {
                if !(start_exp.is_finite() && end_exp.is_finite()) || start_exp <= end_exp {
                    return Err(WorkbenchError::InvalidParameter(format!(
                        "log eta grid walks downward: start_exp {start_exp} must \
                         exceed end_exp {end_exp}"
                    )));
                }
                if *per_decade == 0 {
                    return Err(WorkbenchError::InvalidParameter(
                        "per_decade must be at least 1".into(),
                    ));
                }
                let steps = ((start_exp - end_exp) * *per_decade as f64).round() as usize;
                if steps + 1 > MAX_ETA_POINTS {
                    return Err(WorkbenchError::InvalidParameter(format!(
                        "eta grid would have {} points; the cap is {MAX_ETA_POINTS}",
                        steps + 1
                    )));
                }
                let mut out = Vec::with_capacity(steps + 1);
                for k in 0..=steps {
                    let e = start_exp - k as f64 / *per_decade as f64;
                    let a = 10f64.powf(e);
                    out.push(match ray {
                        EtaRay::Imaginary => Complex64::new(0.0, a),
                        EtaRay::RealNegative => Complex64::new(-a, 0.0),
                    });
                }
                Ok(out)
            }
        }
    }
}

/// Sweep section. Every field has a default, so the whole section may be
/// omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Engine: "bem", "annulus-series" or "ball-series". Default bem.
    pub engine: SweepEngine,
    /// Eta grid. Default: five decades 1e-2 .. 1e-6 on the imaginary ray.
    pub eta: EtaGrid,
    /// Matched-core toggle for quasi-static series runs. Default true.
    pub core_matched: bool,
    /// Slab-norm request (boundary-element engine only). Default none.
    pub slab: Option<SlabSpec>,
    /// Radius of the far-field record circle. Default 8; set it to clear
    /// your geometry.
    pub far_radius: f64,
    /// Norm quadrature resolution. Defaults documented on the type.
    pub resolution: NormResolution,
    /// Which norm feeds the classification. Default shell.
    pub norm: NormSelector,
    /// Classification thresholds. Defaults documented on the type.
    pub thresholds: ClassifyThresholds,
}

impl Default for SweepConfig {
    fn default() -> SweepConfig {
        SweepConfig {
            engine: SweepEngine::Bem,
            eta: EtaGrid::default(),
            core_matched: true,
            slab: None,
            far_radius: 8.0,
            resolution: NormResolution::default(),
            norm: NormSelector::Shell,
            thresholds: ClassifyThresholds::default(),
        }
    }
}

/// Field-grid sampling window for the `solve` command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridConfig {
    /// A 120 x 120 window over [-6, 6]^2.
    fn default() -> GridConfig {
        GridConfig {
            rect: Rect {
                x0: -6.0,
                x1: 6.0,
                y0: -6.0,
                y1: 6.0,
            },
            nx: 120,
            ny: 120,
        }
    }
}

/// Output section: file destinations are optional; commands print their
/// summaries to stdout regardless.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Sweep records CSV path.
    pub records_csv: Option<String>,
    /// Classification summary JSON path.
    pub summary_json: Option<String>,
    /// Field grid CSV path for `solve`.
    pub field_csv: Option<String>,
    /// Field grid window for `solve`.
    pub grid: GridConfig,
}

/// The whole run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub geometry: SweepGeometry,
    pub medium: MediumParams,
    pub source: SourceConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Config {
    pub fn from_json_str(text: &str) -> Result<Config> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::from_json_str(&fs::read_to_string(path)?)
    }

    /// Assemble the sweep problem this config describes.
    pub fn to_problem(&self) -> SweepProblem {
        SweepProblem {
            engine: self.sweep.engine,
            geometry: self.geometry.clone(),
            medium: self.medium,
            source: self.source.to_spec(),
            core_matched: self.sweep.core_matched,
            slab: self.sweep.slab,
            far_radius: self.sweep.far_radius,
            resolution: self.sweep.resolution,
        }
    }

    /// Materialize the sweep's eta grid.
    pub fn eta_values(&self) -> Result<Vec<Complex64>> {
        self.sweep.eta.values()
    }

    /// A complete worked example: the resonant quasi-static dipole sweep
    /// on the shell (2, 4). Useful as a starting file.
    pub fn example() -> Config {
        Config {
            geometry: SweepGeometry::Annulus {
                r_core: 2.0,
                r_shell: 4.0,
            },
            medium: MediumParams {
                omega: 0.0,
                ..MediumParams::nondimensional()
            },
            source: SourceConfig::Dipole {
                location: [5.0, 0.0],
                moment: [1.0, 0.0],
                amplitude: default_amplitude(),
            },
            sweep: SweepConfig {
                engine: SweepEngine::AnnulusSeries,
                eta: EtaGrid::LogRay {
                    start_exp: -3.0,
                    end_exp: -7.0,
                    per_decade: 1,
                    ray: EtaRay::Imaginary,
                },
                ..SweepConfig::default()
            },
            output: OutputConfig {
                records_csv: Some("sweep.csv".into()),
                summary_json: Some("summary.json".into()),
                ..OutputConfig::default()
            },
        }
    }
}
