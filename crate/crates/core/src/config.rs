//! Pipeline configuration file.
//!
//! ```toml
//! [counting]
//! band_center = 0.5
//! band_width = 0.10
//! iou_threshold = 0.5
//! next_frames_to_consider = 7
//! min_confidence = 0.25
//!
//! [density]
//! bandwidth_m = 50.0
//! grid_cols = 256
//! grid_rows = 256
//! padding_m = 50.0
//!
//! [pipeline]
//! segment_length_m = 1000.0
//! gps_offset_s = 0.0
//! # fps = 30.0
//! ```
//!
//! Every key is optional; missing keys take the defaults shown.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counting::{CountingConfig, CountingRange};
use crate::kdr::KdrConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountingSection {
    pub band_center: f64,
    pub band_width: f64,
    pub iou_threshold: f64,
    pub next_frames_to_consider: u32,
    pub min_confidence: f64,
}

impl Default for CountingSection {
    fn default() -> Self {
        let c = CountingConfig::default();
        Self {
            band_center: c.range.center_fraction,
            band_width: c.range.width_fraction,
            iou_threshold: c.iou_threshold,
            next_frames_to_consider: c.next_frames_to_consider,
            min_confidence: c.min_confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub segment_length_m: f64,
    pub gps_offset_s: f64,
    /// Overrides the frame rate in the detection header.
    pub fps: Option<f64>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            segment_length_m: 1000.0,
            gps_offset_s: 0.0,
            fps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub counting: CountingSection,
    pub density: KdrConfig,
    pub pipeline: PipelineSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn counting(&self) -> CountingConfig {
        CountingConfig {
            range: CountingRange {
                center_fraction: self.counting.band_center,
                width_fraction: self.counting.band_width,
            },
            iou_threshold: self.counting.iou_threshold,
            next_frames_to_consider: self.counting.next_frames_to_consider,
            min_confidence: self.counting.min_confidence,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.counting()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.density
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let p = &self.pipeline;
        if !(p.segment_length_m.is_finite() && p.segment_length_m > 0.0) {
            return Err(ConfigError::Invalid(format!("segment length {} m", p.segment_length_m)));
        }
        if !p.gps_offset_s.is_finite() {
            return Err(ConfigError::Invalid(format!("gps offset {}", p.gps_offset_s)));
        }
        if let Some(fps) = p.fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(ConfigError::Invalid(format!("fps {fps}")));
            }
        }
        Ok(())
    }
}
