use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameRate;

/// Every tunable of the pipeline. Defaults reproduce the reference
/// DiariZen configuration for 16 kHz audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate_hz: u32,
    pub seg_duration_s: f64,
    /// Window hop as a fraction of the window length.
    pub segmentation_step: f64,
    pub max_local_speakers: usize,
    pub max_overlap: usize,
    pub median_kernel_frames: usize,
    pub binarize_onset: f64,
    pub binarize_offset: f64,
    pub max_speakers: usize,
    pub ahc_threshold: f64,
    pub vbx_max_iters: usize,
    pub vbx_fa: f64,
    pub vbx_fb: f64,
    pub vbx_loop_p: f64,
    pub lda_dim: usize,
    pub embedding_dim: usize,
    pub min_num_frames: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            seg_duration_s: 16.0,
            segmentation_step: 0.1,
            max_local_speakers: 4,
            max_overlap: 2,
            median_kernel_frames: 11,
            binarize_onset: 0.5,
            binarize_offset: 0.5,
            max_speakers: 20,
            ahc_threshold: 0.6,
            vbx_max_iters: 20,
            vbx_fa: 0.07,
            vbx_fb: 0.8,
            vbx_loop_p: 0.9,
            lda_dim: 128,
            embedding_dim: 256,
            min_num_frames: 1,
        }
    }
}

/// Names of all configuration keys, in declaration order.
pub const CONFIG_KEYS: &[&str] = &[
    "sample_rate_hz",
    "seg_duration_s",
    "segmentation_step",
    "max_local_speakers",
    "max_overlap",
    "median_kernel_frames",
    "binarize_onset",
    "binarize_offset",
    "max_speakers",
    "ahc_threshold",
    "vbx_max_iters",
    "vbx_fa",
    "vbx_fb",
    "vbx_loop_p",
    "lda_dim",
    "embedding_dim",
    "min_num_frames",
];

impl PipelineConfig {
    /// Parse a flat `key = value` file. Missing keys keep their defaults.
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Apply a single `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .ok_or_else(|| Error::Config(format!("cannot parse value `{value}` for `{key}`")))?;
        // integers are accepted where reals are expected
        let parsed = match (&table[key], parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("`{key}`: {}", e.message())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive");
        }
        if !(self.seg_duration_s > 0.0) {
            return bad("seg_duration_s must be positive");
        }
        if !(self.segmentation_step > 0.0 && self.segmentation_step <= 1.0) {
            return bad("segmentation_step must lie in (0, 1]");
        }
        if self.max_local_speakers < 1 || self.max_overlap < 1 {
            return bad("max_local_speakers and max_overlap must be at least 1");
        }
        if self.max_overlap > self.max_local_speakers {
            return bad("max_overlap cannot exceed max_local_speakers");
        }
        if self.median_kernel_frames.is_multiple_of(2) {
            return bad("median_kernel_frames must be odd");
        }
        if self.binarize_offset > self.binarize_onset {
            return bad("binarize_offset cannot exceed binarize_onset");
        }
        if !(self.vbx_fa > 0.0 && self.vbx_fb > 0.0) {
            return bad("vbx_fa and vbx_fb must be positive");
        }
        if !(0.0..=1.0).contains(&self.vbx_loop_p) {
            return bad("vbx_loop_p must lie in [0, 1]");
        }
        if self.lda_dim == 0 || self.lda_dim > self.embedding_dim {
            return bad("lda_dim must lie in [1, embedding_dim]");
        }
        if self.window_samples() < FrameRate::default().conv_window {
            return bad("window shorter than one analysis frame");
        }
        if self.hop_samples() == 0 {
            return bad("window hop rounds to zero samples");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.seg_duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.segmentation_step * self.window_samples() as f64).round() as usize
    }

    pub fn frame_rate(&self) -> FrameRate {
        FrameRate::new(self.sample_rate_hz)
    }
}
