//! TOML experiment configuration.
//!
//! ```toml
//! seed = 1
//! reps = 2
//!
//! [mesh]
//! radius_mm = 30.0
//!
//! [truth]
//! sites = [{ vertex = 100 }]
//! ```
//!
//! Every section except `truth` has defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use ecgi_sir_core::filter::{Direction, FilterConfig, ResamplingScheme};
use ecgi_sir_core::mesh::{ConductivitySpec, DirectionField, Region, Vec3};
use ecgi_sir_core::synth::{BlockSpec, StimSite, TruthSpec};
use ecgi_sir_core::Backend;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub reps: usize,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub electrodes: ElectrodeConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    pub truth: TruthConfig,
    #[serde(default)]
    pub filter: FilterSection,
    /// Candidate metrics for the filter; empty means a single homogeneous mode.
    #[serde(default)]
    pub modes: Vec<ModeConfig>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshShape {
    Sphere,
    Ellipsoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    Dijkstra,
    Fmm,
}

impl From<BackendName> for Backend {
    fn from(b: BackendName) -> Backend {
        match b {
            BackendName::Dijkstra => Backend::Dijkstra,
            BackendName::Fmm => Backend::FastMarching,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "MeshConfig::default_shape")]
    pub shape: MeshShape,
    #[serde(default = "MeshConfig::default_radius")]
    pub radius_mm: f64,
    /// Axis scales for the ellipsoid shape.
    #[serde(default = "MeshConfig::default_scales")]
    pub scales: [f64; 3],
    #[serde(default = "MeshConfig::default_subdivisions")]
    pub subdivisions: u32,
    /// Finer mesh the truth is generated on.
    #[serde(default = "MeshConfig::default_truth_subdivisions")]
    pub truth_subdivisions: u32,
    #[serde(default = "MeshConfig::default_backend")]
    pub backend: BackendName,
    /// OFF or OBJ file replacing the generated filter mesh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// OFF or OBJ file for the truth; defaults to the filter mesh when `path` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<PathBuf>,
}

impl MeshConfig {
    fn default_shape() -> MeshShape {
        MeshShape::Sphere
    }
    fn default_radius() -> f64 {
        30.0
    }
    fn default_scales() -> [f64; 3] {
        [1.0, 1.0, 1.0]
    }
    fn default_subdivisions() -> u32 {
        3
    }
    fn default_truth_subdivisions() -> u32 {
        4
    }
    fn default_backend() -> BackendName {
        BackendName::Dijkstra
    }
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            shape: Self::default_shape(),
            radius_mm: Self::default_radius(),
            scales: Self::default_scales(),
            subdivisions: Self::default_subdivisions(),
            truth_subdivisions: Self::default_truth_subdivisions(),
            backend: Self::default_backend(),
            path: None,
            truth_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeConfig {
    #[serde(default = "ElectrodeConfig::default_count")]
    pub count: usize,
    /// Shell radius around the mesh centroid.
    #[serde(default = "ElectrodeConfig::default_radius")]
    pub radius_mm: f64,
    /// CSV of `x,y,z` rows replacing the generated shell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ElectrodeConfig {
    fn default_count() -> usize {
        64
    }
    fn default_radius() -> f64 {
        60.0
    }
}

impl Default for ElectrodeConfig {
    fn default() -> Self {
        ElectrodeConfig { count: Self::default_count(), radius_mm: Self::default_radius(), path: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    /// Binary transfer matrix for the filter mesh; the dipole layer is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub vertex: usize,
    #[serde(default)]
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConductivityConfig {
    Isotropic {
        #[serde(default = "unit")]
        value: f64,
    },
    /// Fibres along circles of latitude around `axis`.
    Azimuthal { axis: [f64; 3], longitudinal: f64, transverse: f64 },
    /// Fibres along a fixed direction.
    Constant { direction: [f64; 3], longitudinal: f64, transverse: f64 },
}

fn unit() -> f64 {
    1.0
}

impl Default for ConductivityConfig {
    fn default() -> Self {
        ConductivityConfig::Isotropic { value: 1.0 }
    }
}

impl ConductivityConfig {
    pub fn to_spec(&self) -> ConductivitySpec {
        match self {
            ConductivityConfig::Isotropic { value } => ConductivitySpec::Uniform(*value),
            ConductivityConfig::Azimuthal { axis, longitudinal, transverse } => ConductivitySpec::Anisotropic {
                direction: DirectionField::Azimuthal { axis: vec3(axis) },
                longitudinal: *longitudinal,
                transverse: *transverse,
            },
            ConductivityConfig::Constant { direction, longitudinal, transverse } => ConductivitySpec::Anisotropic {
                direction: DirectionField::Constant(vec3(direction)),
                longitudinal: *longitudinal,
                transverse: *transverse,
            },
        }
    }
}

fn vec3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionConfig {
    EuclideanBall { center: [f64; 3], radius: f64 },
    GeodesicBall { center: usize, radius: f64 },
    Band { normal: [f64; 3], offset: f64, half_width: f64, extent_center: [f64; 3], extent_radius: f64 },
    Empty,
}

impl RegionConfig {
    pub fn to_region(&self) -> Region {
        match self {
            RegionConfig::EuclideanBall { center, radius } => Region::EuclideanBall { center: vec3(center), radius: *radius },
            RegionConfig::GeodesicBall { center, radius } => Region::GeodesicBall { center: *center, radius: *radius },
            RegionConfig::Band { normal, offset, half_width, extent_center, extent_radius } => Region::Band {
                normal: vec3(normal),
                offset: *offset,
                half_width: *half_width,
                extent_center: vec3(extent_center),
                extent_radius: *extent_radius,
            },
            RegionConfig::Empty => Region::Empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub region: RegionConfig,
    pub factor: f64,
}

impl BlockConfig {
    pub fn to_spec(&self) -> BlockSpec {
        BlockSpec { region: self.region.to_region(), factor: self.factor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub sites: Vec<SiteConfig>,
    #[serde(default = "TruthConfig::default_speed")]
    pub speed: f64,
    #[serde(default = "TruthConfig::default_duration")]
    pub duration_ms: f64,
    #[serde(default = "unit")]
    pub dt_ms: f64,
    #[serde(default = "TruthConfig::default_noise")]
    pub noise_level: f64,
    #[serde(default)]
    pub conductivity: ConductivityConfig,
    #[serde(default)]
    pub blocks: Vec<BlockConfig>,
}

impl TruthConfig {
    fn default_speed() -> f64 {
        1.0
    }
    fn default_duration() -> f64 {
        120.0
    }
    fn default_noise() -> f64 {
        0.04
    }

    pub fn to_spec(&self) -> TruthSpec {
        TruthSpec {
            sites: self.sites.iter().map(|s| StimSite { vertex: s.vertex, delay_ms: s.delay_ms }).collect(),
            speed: self.speed,
            duration_ms: self.duration_ms,
            dt_ms: self.dt_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub label: String,
    #[serde(default)]
    pub blocks: Vec<BlockConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingName {
    Multinomial,
    Systematic,
}

/// Filter parameters; `direction` and `seed` are set per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub n_particles: usize,
    pub centers_per_particle: usize,
    pub sigma_r: f64,
    pub lambda_mm: f64,
    pub sigma_w: f64,
    pub width: f64,
    pub resample_fraction: f64,
    pub mode_keep_prob: f64,
    pub r_init_fwd: f64,
    pub r_init_bwd: f64,
    pub resampling: ResamplingName,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        FilterSection {
            n_particles: d.n_particles,
            centers_per_particle: d.centers_per_particle,
            sigma_r: d.sigma_r,
            lambda_mm: d.lambda_mm,
            sigma_w: d.sigma_w,
            width: d.width,
            resample_fraction: d.resample_fraction,
            mode_keep_prob: d.mode_keep_prob,
            r_init_fwd: d.r_init_fwd,
            r_init_bwd: d.r_init_bwd,
            resampling: ResamplingName::Multinomial,
        }
    }
}

impl FilterSection {
    pub fn to_config(&self, direction: Direction, seed: u64) -> FilterConfig {
        FilterConfig {
            n_particles: self.n_particles,
            centers_per_particle: self.centers_per_particle,
            sigma_r: self.sigma_r,
            lambda_mm: self.lambda_mm,
            sigma_w: self.sigma_w,
            width: self.width,
            direction,
            resample_fraction: self.resample_fraction,
            mode_keep_prob: self.mode_keep_prob,
            r_init_fwd: self.r_init_fwd,
            r_init_bwd: self.r_init_bwd,
            seed,
            resampling: match self.resampling {
                ResamplingName::Multinomial => ResamplingScheme::Multinomial,
                ResamplingName::Systematic => ResamplingScheme::Systematic,
            },
            radius_grid: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            AppError::Config(msg) => AppError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(AppError::Config("`reps` must be at least 1".into()));
        }
        if self.truth.sites.is_empty() {
            return Err(AppError::Config("`truth.sites` needs at least one stimulation site".into()));
        }
        if !(self.truth.noise_level >= 0.0) {
            return Err(AppError::Config("`truth.noise_level` must be nonnegative".into()));
        }
        self.filter
            .to_config(Direction::Forward, self.seed)
            .validate()
            .map_err(|e| AppError::Config(format!("[filter]: {e}")))?;
        let mut labels: Vec<&str> = self.modes.iter().map(|m| m.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(AppError::Config("mode labels must be distinct".into()));
        }
        Ok(())
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`to_toml`](Self::to_toml).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn mode_labels(&self) -> Vec<String> {
        if self.modes.is_empty() {
            vec!["homogeneous".to_string()]
        } else {
            self.modes.iter().map(|m| m.label.clone()).collect()
        }
    }
}
