//! Run configuration, loadable from TOML.

use crate::extract::ExtractConfig;
use crate::field::train::TrainConfig;
use crate::field::FieldConfig;
use crate::scene::SceneBox;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Recording to replay through the in-process server. Mutually
    /// exclusive with `endpoint`.
    pub recording: Option<PathBuf>,
    /// External server to connect to instead of serving in-process.
    pub endpoint: Option<String>,
    /// Stream pacing rate, frames per second.
    pub fps: f64,
    /// Frames per buffer publication; defaults to round(fps).
    pub batch_n: Option<usize>,
    pub buffer_capacity: usize,
    pub seed: u64,
    /// Incoming poses use the device axis convention and need the flip.
    pub device_pose_convention: bool,
    /// Every k-th buffered frame is held out of training for evaluation.
    pub holdout_every: Option<usize>,
    /// Cap on rendered evaluation views (evenly strided over the holdout set).
    pub eval_max_views: Option<usize>,
    pub eval_samples_per_ray: usize,
    /// When set, the stream is drained unpaced and training runs this many
    /// steps afterwards (deterministic offline mode).
    pub offline_steps: Option<usize>,
    /// Inclusive replay range into the recording.
    pub range: Option<(usize, usize)>,
    /// Recording indices the server omits.
    pub drop_indices: Vec<usize>,
    pub scene_box: BoxSettings,
    pub field: FieldSettings,
    pub train: TrainSettings,
    pub extract: ExtractSettings,
    pub output: OutputSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            recording: None,
            endpoint: None,
            fps: 5.0,
            batch_n: None,
            buffer_capacity: 400,
            seed: 42,
            device_pose_convention: false,
            holdout_every: Some(10),
            eval_max_views: Some(12),
            eval_samples_per_ray: 64,
            offline_steps: None,
            range: None,
            drop_indices: Vec::new(),
            scene_box: BoxSettings::default(),
            field: FieldSettings::default(),
            train: TrainSettings::default(),
            extract: ExtractSettings::default(),
            output: OutputSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.fps > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if self.recording.is_none() && self.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "either a recording path or an endpoint is required".into(),
            ));
        }
        if self.buffer_capacity == 0 {
            return Err(ConfigError::Invalid("buffer capacity must be positive".into()));
        }
        if !(self.scene_box.scale > 0.0) {
            return Err(ConfigError::Invalid("scene box scale must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_batch_n(&self) -> usize {
        self.batch_n.unwrap_or((self.fps.round() as usize).max(1))
    }

    pub fn scene_box(&self) -> SceneBox {
        SceneBox::new(self.scene_box.center, self.scene_box.scale)
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            base_resolution: self.field.base_resolution,
            growth_factor: self.field.growth_factor,
            table_log2: self.field.table_log2,
            density_bias: self.field.density_bias,
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_rays: self.train.batch_rays,
            samples_per_ray: self.train.samples_per_ray,
            lr_grid: self.train.lr_grid,
            lr_net: self.train.lr_net,
            min_transmittance: self.train.min_transmittance,
            holdout_every: self.holdout_every,
            seed: self.seed ^ 0x7261696e, // distinct stream from init
            ..TrainConfig::default()
        }
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            samples_per_ray: self.extract.samples_per_ray,
            termination_transmittance: self.extract.termination_transmittance,
            seed: self.seed ^ 0x65787472,
        }
    }

    pub fn drop_set(&self) -> BTreeSet<usize> {
        self.drop_indices.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxSettings {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Default for BoxSettings {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0, 1.8],
            scale: 0.5 / 1.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSettings {
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub table_log2: u32,
    pub density_bias: f32,
}

impl Default for FieldSettings {
    fn default() -> Self {
        let f = crate::field::FieldConfig::default();
        Self {
            base_resolution: f.base_resolution,
            growth_factor: f.growth_factor,
            table_log2: f.table_log2,
            density_bias: f.density_bias,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    pub lr_grid: f32,
    pub lr_net: f32,
    pub min_transmittance: f32,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_rays: t.batch_rays,
            samples_per_ray: t.samples_per_ray,
            lr_grid: t.lr_grid,
            lr_net: t.lr_net,
            min_transmittance: t.min_transmittance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractSettings {
    pub targets: Vec<usize>,
    pub samples_per_ray: usize,
    pub termination_transmittance: f32,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        let e = ExtractConfig::default();
        Self {
            targets: vec![50_000],
            samples_per_ray: e.samples_per_ray,
            termination_transmittance: e.termination_transmittance,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSettings {
    pub ply: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}
