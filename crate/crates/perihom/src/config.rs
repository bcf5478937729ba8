//! JSON experiment configuration shared by the CLI and tests: schema-checked
//! (unknown keys rejected, versioned), with builders for every domain object
//! and a load-time re-check of the physical constraints.

use crate::assembly::AssemblyOptions;
use crate::coeffs::{DefectCoefficient, Nonlinearity, PeriodicCoefficient, ScalarTable, SourceTerm};
use crate::corrector::Variant;
use crate::mesh::{build_domain_mesh, DomainMesh};
use crate::solver::SolverConfig;
use crate::study::{FitWindow, StudyOptions};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub d: usize,
    /// per-axis [lo, hi]
    pub extents: Vec<[f64; 2]>,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoeffConfig {
    /// isotropic constant scalar coefficient
    Constant { value: f64 },
    /// base + amp sin(2 pi y1), isotropic
    Laminate { base: f64, amp: f64 },
    /// two-phase bar laminate split at 1/2
    BarLaminate { phase0: f64, phase1: f64 },
    /// two-phase checkerboard (2D)
    Checkerboard { phase0: f64, phase1: f64 },
    /// base + amp sin(2 pi y1) sin(2 pi y2)
    Trig { base: f64, amp: f64 },
    /// diag(base + amp sin(2 pi y1), beta0) (2D)
    DiagLaminate { base: f64, amp: f64, beta0: f64 },
    /// scalar samples from CSV on a uniform lattice
    Table { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DefectConfig {
    /// b = scale * a inside the ball
    BallScaled {
        center: Vec<f64>,
        radius: f64,
        scale: f64,
    },
    /// b = scale * I inside the ball
    BallIdentity {
        center: Vec<f64>,
        radius: f64,
        scale: f64,
    },
    /// truncated Gaussian bump times the identity
    Gaussian {
        center: Vec<f64>,
        width: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceConfig {
    Zero,
    Constant { value: f64 },
    SinProduct { amplitude: f64 },
}

impl SourceConfig {
    fn build(&self) -> SourceTerm {
        match self {
            SourceConfig::Zero => SourceTerm::Zero,
            SourceConfig::Constant { value } => SourceTerm::Constant(*value),
            SourceConfig::SinProduct { amplitude } => SourceTerm::SinProduct {
                amplitude: *amplitude,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NlConfig {
    Zero,
    /// d(x,u) = linear u + cubic u^3 - g(x), c = 0
    Reaction {
        linear: f64,
        cubic: f64,
        source: SourceConfig,
    },
    /// c_1 = strength sin(u), d = u - g(x)
    Drift { strength: f64, source: SourceConfig },
    /// d(x,u) = scale sin(freq u) + linear u - g(x)
    SineReaction {
        scale: f64,
        freq: f64,
        linear: f64,
        source: SourceConfig,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub damping: bool,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    30
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: default_tol(),
            max_iter: default_max_iter(),
            damping: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub delta: f64,
    pub trials: usize,
}

/// Experiment configuration; see the repository README for examples.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mesh: MeshConfig,
    /// unit-cell subdivisions for the corrector problems
    pub cell_m: usize,
    pub coefficient: CoeffConfig,
    #[serde(default)]
    pub defect: Option<DefectConfig>,
    pub nonlinearity: NlConfig,
    /// single eps for `solve`/`probe`
    #[serde(default)]
    pub eps: Option<f64>,
    /// strictly decreasing ladder for the studies
    #[serde(default)]
    pub eps_ladder: Vec<f64>,
    /// "plain-2d" (default), "smoothed-2d" or "plain-scalar"
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub solver: SolverSection,
    /// "drop-largest" (default) or "all"
    #[serde(default)]
    pub fit_window: Option<String>,
    #[serde(default)]
    pub resolution_floor: Option<f64>,
    #[serde(default)]
    pub allow_coarse: bool,
    /// coercivity sampling density per axis (default 64)
    #[serde(default)]
    pub sample_density: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub probe: Option<ProbeSection>,
    /// write a static SVG log-log plot next to study outputs
    #[serde(default)]
    pub svg: bool,
}

impl ExperimentConfig {
    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_reader(r).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(1..=2).contains(&self.mesh.d) {
            return Err(Error::config("mesh.d must be 1 or 2"));
        }
        if self.mesh.extents.len() < self.mesh.d {
            return Err(Error::config("mesh.extents must cover every axis"));
        }
        if self.mesh.m < 2 || self.cell_m < 2 {
            return Err(Error::config("mesh.m and cell_m must be at least 2"));
        }
        if !self.eps_ladder.is_empty() {
            if self.eps_ladder.iter().any(|&e| e <= 0.0) {
                return Err(Error::config("eps_ladder must be positive"));
            }
            if self.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::config("eps_ladder must be strictly decreasing"));
            }
        }
        if let Some(e) = self.eps {
            if e <= 0.0 {
                return Err(Error::config("eps must be positive"));
            }
        }
        self.variant_enum()?;
        self.window_enum()?;
        let solver = self.solver_config();
        solver.validate().map_err(|e| Error::config(e.to_string()))?;
        // physical constraint: the mesh must resolve the smallest scale
        if !self.allow_coarse {
            let floor = self.resolution_floor.unwrap_or(8.0);
            let h = self.h_max();
            let mut scales: Vec<f64> = self.eps_ladder.clone();
            if let Some(e) = self.eps {
                scales.push(e);
            }
            for e in scales {
                if h > e / floor {
                    return Err(Error::config(format!(
                        "mesh too coarse for eps={e}: h={h:.4e} > eps/{floor}; refine mesh.m or set allow_coarse"
                    )));
                }
            }
        }
        match &self.coefficient {
            CoeffConfig::Checkerboard { .. } | CoeffConfig::DiagLaminate { .. }
                if self.mesh.d != 2 =>
            {
                return Err(Error::config("coefficient requires a 2D mesh"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Max element diameter of the configured mesh, from the extents alone.
    pub fn h_max(&self) -> f64 {
        let mut h2 = 0.0;
        for k in 0..self.mesh.d {
            let [lo, hi] = self.mesh.extents[k];
            let step = (hi - lo) / self.mesh.m as f64;
            h2 += step * step;
        }
        h2.sqrt()
    }

    pub fn build_mesh(&self) -> Result<DomainMesh> {
        build_domain_mesh(self.mesh.d, &self.mesh.extents, self.mesh.m)
    }

    pub fn build_coefficient(&self) -> Result<PeriodicCoefficient> {
        let d = self.mesh.d;
        Ok(match &self.coefficient {
            CoeffConfig::Constant { value } => PeriodicCoefficient::constant(
                crate::coeffs::CoeffBlock::scalar_identity(d, 1, *value),
            ),
            CoeffConfig::Laminate { base, amp } => {
                PeriodicCoefficient::scalar_laminate(d, *base, *amp)
            }
            CoeffConfig::BarLaminate { phase0, phase1 } => {
                PeriodicCoefficient::bar_laminate(d, *phase0, *phase1)
            }
            CoeffConfig::Checkerboard { phase0, phase1 } => {
                PeriodicCoefficient::checkerboard(*phase0, *phase1)
            }
            CoeffConfig::Trig { base, amp } => PeriodicCoefficient::scalar_trig(d, *base, *amp),
            CoeffConfig::DiagLaminate { base, amp, beta0 } => {
                PeriodicCoefficient::diag_laminate(*base, *amp, *beta0)
            }
            CoeffConfig::Table { path } => {
                PeriodicCoefficient::from_table(ScalarTable::from_csv(path, d)?)
            }
        })
    }

    pub fn build_defect(&self) -> Result<Option<DefectCoefficient>> {
        let d = self.mesh.d;
        Ok(match &self.defect {
            None => None,
            Some(DefectConfig::BallScaled {
                center,
                radius,
                scale,
            }) => Some(DefectCoefficient::ball_scaled(
                center,
                *radius,
                *scale,
                self.build_coefficient()?,
            )),
            Some(DefectConfig::BallIdentity {
                center,
                radius,
                scale,
            }) => Some(DefectCoefficient::ball_tensor(
                center,
                *radius,
                crate::coeffs::CoeffBlock::scalar_identity(d, 1, *scale),
            )),
            Some(DefectConfig::Gaussian {
                center,
                width,
                scale,
            }) => Some(DefectCoefficient::gaussian_identity(
                d, center, *width, *scale,
            )),
        })
    }

    pub fn build_nonlinearity(&self) -> Nonlinearity {
        let d = self.mesh.d;
        match &self.nonlinearity {
            NlConfig::Zero => Nonlinearity::zero(d, 1),
            NlConfig::Reaction {
                linear,
                cubic,
                source,
            } => Nonlinearity::reaction(d, 1, *linear, *cubic, source.build()),
            NlConfig::Drift { strength, source } => {
                Nonlinearity::drift(d, *strength, source.build())
            }
            NlConfig::SineReaction {
                scale,
                freq,
                linear,
                source,
            } => Nonlinearity::sine_reaction(d, *scale, *freq, *linear, source.build()),
        }
    }

    pub fn variant_enum(&self) -> Result<Variant> {
        match self.variant.as_deref() {
            None => Ok(if self.mesh.d == 1 {
                Variant::PlainScalar
            } else {
                Variant::Plain2d
            }),
            Some("plain-2d") => Ok(Variant::Plain2d),
            Some("smoothed-2d") => Ok(Variant::Smoothed2d),
            Some("plain-scalar") => Ok(Variant::PlainScalar),
            Some(other) => Err(Error::config(format!("unknown variant {other:?}"))),
        }
    }

    pub fn window_enum(&self) -> Result<FitWindow> {
        match self.fit_window.as_deref() {
            None | Some("drop-largest") => Ok(FitWindow::DropLargest),
            Some("all") => Ok(FitWindow::All),
            Some(other) => Err(Error::config(format!("unknown fit_window {other:?}"))),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            damping: self.solver.damping,
            q_window: 3,
        }
    }

    pub fn assembly_options(&self) -> AssemblyOptions {
        AssemblyOptions {
            resolution_floor: self.resolution_floor.unwrap_or(8.0),
            allow_coarse: self.allow_coarse,
        }
    }

    pub fn study_options(&self, threads: usize) -> Result<StudyOptions> {
        Ok(StudyOptions {
            solver: self.solver_config(),
            assembly: self.assembly_options(),
            window: self.window_enum()?,
            threads,
        })
    }
}
