//! Run configuration: one TOML file per run, unknown keys rejected,
//! everything that can be checked without touching the grid is checked at
//! parse time.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::{GroundMode, DEFAULT_EPSILON};
use crate::conductivity::{AnalyticConductivity, Conductivity, Inclusion, RasterConductivity};
use crate::convergence::SweepCase;
use crate::error::{Error, Result};
use crate::forward::{CurrentPatterns, Manufactured};
use crate::geometry::{Admittivity, BoundaryShape, ElectrodeLayout};
use crate::inverse::conductivity::SigmaSettings;
use crate::inverse::electrodes::{ElectrodeSettings, EndpointMode};
use crate::mesh::{CartesianMesh, Extent};
use crate::shapes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub electrodes: ElectrodeConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currents: Option<CurrentsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invert_sigma: Option<SigmaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invert_electrodes: Option<ElectrodeInversionConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A named reference shape or Fourier coefficients `α`, not both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeConfig {
    pub layout: LayoutSpec,
    #[serde(default = "default_admittivity")]
    pub admittivity: Admittivity,
}

fn default_admittivity() -> Admittivity {
    Admittivity::constant(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayoutSpec {
    /// Sixteen electrodes of length 0.35 from `−π`.
    Standard16,
    /// Four electrodes of 0.5 rad on a disk, from `−3π/4`.
    FourDisk,
    EquallySpaced { count: usize, start: f64, length: f64 },
    Explicit { theta1: Vec<f64>, theta2: Vec<f64> },
}

/// Square `[extent[0], extent[1]]²` with either `cells` per side or spacing `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub extent: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub ground: GroundMode,
    pub epsilon: f64,
    pub solver: crate::solve::SolverOptions,
    pub sigma: SigmaSpec,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            ground: GroundMode::FirstElectrode,
            epsilon: DEFAULT_EPSILON,
            solver: Default::default(),
            sigma: SigmaSpec::Constant { value: 1.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SigmaSpec {
    Constant { value: f64 },
    Inclusions { background: f64, inclusions: Vec<Inclusion> },
    /// Square CSV matrix of samples over the grid extent.
    Raster { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CurrentsConfig {
    /// `e_p − e_{p+1}`, `p = 1..M−1`.
    Adjacent,
    /// `I_m = (−1)^m`.
    Alternating,
    /// `e_a − e_b`, one-based.
    Pair { a: usize, b: usize },
    /// One inner array per pattern.
    Explicit { columns: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub h: Vec<f64>,
    pub field: Manufactured,
    /// Electrode potentials of the manufactured solution (zeros if absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potentials: Option<Vec<f64>>,
}

/// Synthetic measurements from a finer grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub cells: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaConfig {
    pub measurements: PathBuf,
    #[serde(default = "one")]
    pub background: f64,
    /// Truth used only for reporting the localization error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_center: Option<[f64; 2]>,
    #[serde(default)]
    pub settings: SigmaSettings,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeInversionConfig {
    pub measurements: PathBuf,
    pub start_theta1: Vec<f64>,
    /// Required in free mode; ignored in fixed-length mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_theta2: Option<Vec<f64>>,
    /// Fixed-length mode: arc lengths (default: those of `[electrodes]`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_theta1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_theta2: Option<Vec<f64>>,
    /// Repeat the endpoint-sign calibration at the start and record it.
    #[serde(default = "yes")]
    pub calibrate: bool,
    #[serde(default = "calibration_step")]
    pub calibration_step: f64,
    #[serde(default)]
    pub settings: ElectrodeSettings,
}

fn yes() -> bool {
    true
}

fn calibration_step() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub pgm: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), pgm: true }
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::Parse { line, message: e.message().to_string() }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.shape()?;
        let layout = self.layout(&shape)?;
        let extent = self.extent()?;
        let h = self.h()?;
        crate::mesh::check_margin(&shape, extent, h)?;
        let p = &self.physics;
        positive("physics.epsilon", p.epsilon)?;
        positive("physics.solver.tolerance", p.solver.tolerance)?;
        match &p.sigma {
            SigmaSpec::Constant { value } => positive("physics.sigma.value", *value)?,
            SigmaSpec::Inclusions { background, inclusions } => {
                positive("physics.sigma.background", *background)?;
                let mut low = *background;
                for inc in inclusions {
                    finite("inclusion center", inc.center[0])?;
                    finite("inclusion center", inc.center[1])?;
                    positive("inclusion radius", inc.radius)?;
                    finite("inclusion amplitude", inc.amplitude)?;
                    low += inc.amplitude.min(0.0);
                }
                positive("minimum of physics.sigma", low)?;
            }
            SigmaSpec::Raster { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::Config("physics.sigma.path is empty".into()));
                }
            }
        }
        for adm in layout.admittivity() {
            match *adm {
                Admittivity::Constant { impedance } => positive("contact impedance", impedance)?,
                Admittivity::SmoothBump { impedance, support } => {
                    positive("contact impedance", impedance)?;
                    if !(support > 0.0 && support <= 1.0) {
                        return Err(Error::Config(format!("bump support must lie in (0, 1], got {support}")));
                    }
                }
            }
        }
        let m = layout.len();
        if let Some(c) = &self.currents {
            self.patterns_for(c, m)?;
        }
        if let Some(s) = &self.sweep {
            if s.h.len() < 3 {
                return Err(Error::Config("sweep.h needs at least 3 spacings".into()));
            }
            if s.h.iter().any(|v| !(*v > 0.0 && v.is_finite())) || s.h.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::Config("sweep.h must be positive and strictly decreasing".into()));
            }
            if let Some(u) = &s.potentials {
                if u.len() != m || u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("sweep.potentials needs {m} finite values")));
                }
            }
            if matches!(p.sigma, SigmaSpec::Raster { .. }) {
                return Err(Error::Config("convergence sweeps need an analytic conductivity".into()));
            }
        }
        if let Some(d) = &self.data {
            if d.cells < 2 {
                return Err(Error::Config("data.cells must be at least 2".into()));
            }
            if d.seed > i64::MAX as u64 {
                return Err(Error::Config("data.seed must be below 2^63 (TOML integers are signed)".into()));
            }
            if !(d.noise >= 0.0 && d.noise.is_finite()) {
                return Err(Error::Config(format!("data.noise must be non-negative, got {}", d.noise)));
            }
        }
        if let Some(s) = &self.invert_sigma {
            positive("invert_sigma.background", s.background)?;
            let st = &s.settings;
            if !(st.regularization >= 0.0 && st.regularization.is_finite()) {
                return Err(Error::Config("invert_sigma.settings.regularization must be non-negative".into()));
            }
            positive("invert_sigma.settings.t_max", st.t_max)?;
            positive("invert_sigma.settings.sigma_min", st.sigma_min)?;
            positive("invert_sigma.settings.line_search_rtol", st.line_search_rtol)?;
            positive("invert_sigma.settings.epsilon", st.epsilon)?;
            if !(st.tau_stop >= 0.0) {
                return Err(Error::Config("invert_sigma.settings.tau_stop must be non-negative".into()));
            }
        }
        if let Some(e) = &self.invert_electrodes {
            self.electrode_start(e, &shape, &layout)?;
            self.electrode_prior(e, &shape, &layout)?;
            let st = &e.settings;
            if !(st.regularization >= 0.0 && st.regularization.is_finite()) {
                return Err(Error::Config("invert_electrodes.settings.regularization must be non-negative".into()));
            }
            positive("invert_electrodes.settings.initial_step", st.initial_step)?;
            positive("invert_electrodes.settings.min_step", st.min_step)?;
            positive("invert_electrodes.settings.epsilon", st.epsilon)?;
            positive("invert_electrodes.calibration_step", e.calibration_step)?;
            if !(st.gradient_tol >= 0.0) {
                return Err(Error::Config("invert_electrodes.settings.gradient_tol must be non-negative".into()));
            }
            if self.analytic_sigma().is_none() {
                return Err(Error::Config("electrode reconstruction needs an analytic conductivity".into()));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Result<BoundaryShape> {
        match (&self.geometry.shape, &self.geometry.alpha) {
            (Some(name), None) => {
                shapes::by_name(name).ok_or_else(|| Error::Config(format!("unknown shape '{name}'")))
            }
            (None, Some(alpha)) => BoundaryShape::new(alpha.clone()),
            _ => Err(Error::Config("geometry needs exactly one of `shape` and `alpha`".into())),
        }
    }

    pub fn layout(&self, shape: &BoundaryShape) -> Result<ElectrodeLayout> {
        let adm = self.electrodes.admittivity;
        match &self.electrodes.layout {
            LayoutSpec::Standard16 => ElectrodeLayout::standard16(shape, adm),
            LayoutSpec::FourDisk => Ok(shapes::four_electrode_disk_layout(adm)),
            LayoutSpec::EquallySpaced { count, start, length } => {
                if *count == 0 {
                    return Err(Error::Layout("at least one electrode".into()));
                }
                finite("electrodes.layout.start", *start)?;
                positive("electrodes.layout.length", *length)?;
                ElectrodeLayout::equally_spaced(shape, *count, *start, *length, adm)
            }
            LayoutSpec::Explicit { theta1, theta2 } => {
                ElectrodeLayout::new(theta1.clone(), theta2.clone(), vec![adm; theta1.len()])
            }
        }
    }

    pub fn extent(&self) -> Result<Extent> {
        Extent::new(self.grid.extent[0], self.grid.extent[1])
    }

    pub fn cells(&self) -> Result<usize> {
        let width = self.extent()?.width();
        match (self.grid.cells, self.grid.h) {
            (Some(n), None) if n >= 2 => Ok(n),
            (None, Some(h)) if h > 0.0 && h.is_finite() => {
                let n = (width / h).round();
                if n < 2.0 || n > 1e6 || ((n * h - width) / width).abs() > 1e-9 {
                    return Err(Error::Config(format!("h = {h} does not divide the square of width {width}")));
                }
                Ok(n as usize)
            }
            (Some(_), Some(_)) | (None, None) => Err(Error::Config("grid needs exactly one of `cells` and `h`".into())),
            _ => Err(Error::Config("grid.cells must be at least 2 and grid.h positive".into())),
        }
    }

    pub fn h(&self) -> Result<f64> {
        Ok(self.extent()?.width() / self.cells()? as f64)
    }

    pub fn mesh(&self) -> Result<CartesianMesh> {
        self.mesh_with_cells(self.cells()?)
    }

    pub fn mesh_with_cells(&self, cells: usize) -> Result<CartesianMesh> {
        let shape = self.shape()?;
        let layout = self.layout(&shape)?;
        CartesianMesh::with_cells(&shape, &layout, self.extent()?, cells)
    }

    /// The conductivity as an analytic profile, if it is one.
    pub fn analytic_sigma(&self) -> Option<AnalyticConductivity> {
        match &self.physics.sigma {
            SigmaSpec::Constant { value } => Some(AnalyticConductivity::constant(*value)),
            SigmaSpec::Inclusions { background, inclusions } => {
                Some(AnalyticConductivity::Inclusions { background: *background, inclusions: inclusions.clone() })
            }
            SigmaSpec::Raster { .. } => None,
        }
    }

    /// The conductivity, reading the raster file if there is one.
    pub fn sigma(&self) -> Result<Box<dyn Conductivity>> {
        match &self.physics.sigma {
            SigmaSpec::Raster { path } => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read raster {}: {e}", path.display())))?;
                let rows = crate::io::parse_matrix(&text)?;
                Ok(Box::new(RasterConductivity::new(self.extent()?, rows)?))
            }
            _ => Ok(Box::new(self.analytic_sigma().expect("analytic"))),
        }
    }

    pub fn patterns(&self) -> Result<CurrentPatterns> {
        let c = self.currents.as_ref().ok_or_else(|| Error::Config("missing [currents]".into()))?;
        let m = self.layout(&self.shape()?)?.len();
        self.patterns_for(c, m)
    }

    fn patterns_for(&self, c: &CurrentsConfig, m: usize) -> Result<CurrentPatterns> {
        match c {
            CurrentsConfig::Adjacent => {
                if m < 2 {
                    return Err(Error::Config("adjacent patterns need at least 2 electrodes".into()));
                }
                Ok(CurrentPatterns::adjacent(m))
            }
            CurrentsConfig::Alternating => Ok(CurrentPatterns::alternating(m)),
            CurrentsConfig::Pair { a, b } => CurrentPatterns::pair(m, *a, *b),
            CurrentsConfig::Explicit { columns } => {
                let p = CurrentPatterns::new(columns.clone())?;
                if p.electrodes() != m {
                    return Err(Error::Config(format!("currents have {} entries, expected {m}", p.electrodes())));
                }
                Ok(p)
            }
        }
    }

    pub fn sweep_case(&self) -> Result<SweepCase> {
        let s = self.sweep.as_ref().ok_or_else(|| Error::Config("missing [sweep]".into()))?;
        let shape = self.shape()?;
        let layout = self.layout(&shape)?;
        let sigma = self
            .analytic_sigma()
            .ok_or_else(|| Error::Config("convergence sweeps need an analytic conductivity".into()))?;
        Ok(SweepCase {
            potentials: s.potentials.clone().unwrap_or_else(|| vec![0.0; layout.len()]),
            layout,
            shape,
            extent: self.extent()?,
            sigma,
            field: s.field,
            h: s.h.clone(),
            ground: self.physics.ground,
            epsilon: self.physics.epsilon,
            solver: self.physics.solver,
        })
    }

    /// Starting layout of an electrode inversion.
    pub fn electrode_start(
        &self,
        e: &ElectrodeInversionConfig,
        shape: &BoundaryShape,
        nominal: &ElectrodeLayout,
    ) -> Result<ElectrodeLayout> {
        self.electrode_angles(e, shape, nominal, &e.start_theta1, e.start_theta2.as_ref(), "start")
    }

    /// Prior centres (the start when not given).
    pub fn electrode_prior(
        &self,
        e: &ElectrodeInversionConfig,
        shape: &BoundaryShape,
        nominal: &ElectrodeLayout,
    ) -> Result<ElectrodeLayout> {
        match &e.prior_theta1 {
            Some(t1) => self.electrode_angles(e, shape, nominal, t1, e.prior_theta2.as_ref(), "prior"),
            None if e.prior_theta2.is_some() => Err(Error::Config("prior_theta2 given without prior_theta1".into())),
            None => self.electrode_start(e, shape, nominal),
        }
    }

    fn electrode_angles(
        &self,
        e: &ElectrodeInversionConfig,
        shape: &BoundaryShape,
        nominal: &ElectrodeLayout,
        theta1: &[f64],
        theta2: Option<&Vec<f64>>,
        what: &str,
    ) -> Result<ElectrodeLayout> {
        let m = nominal.len();
        if theta1.len() != m {
            return Err(Error::Config(format!("{what}_theta1 needs {m} angles, got {}", theta1.len())));
        }
        let adm = nominal.admittivity().to_vec();
        match e.settings.mode {
            EndpointMode::Free => {
                let t2 = theta2.ok_or_else(|| Error::Config(format!("free mode needs {what}_theta2")))?;
                if t2.len() != m {
                    return Err(Error::Config(format!("{what}_theta2 needs {m} angles, got {}", t2.len())));
                }
                ElectrodeLayout::new(theta1.to_vec(), t2.clone(), adm)
            }
            EndpointMode::FixedLength => {
                let lengths = match &e.lengths {
                    Some(l) => {
                        if l.len() != m {
                            return Err(Error::Config(format!("lengths needs {m} values, got {}", l.len())));
                        }
                        for &v in l {
                            positive("electrode length", v)?;
                        }
                        l.clone()
                    }
                    None => nominal.arcs(shape).iter().map(|a| a.length).collect(),
                };
                ElectrodeLayout::with_lengths(shape, theta1.to_vec(), &lengths, adm)
            }
        }
    }
}
