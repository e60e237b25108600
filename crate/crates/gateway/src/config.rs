//! Service configuration, loaded from TOML.
//!
//! Every section is optional. The store directory and port can also be set
//! through `TSTKIT_STORE_DIR` and `TSTKIT_PORT`, which win over the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tstkit_core::records::ReadWindow;
use tstkit_core::{CalibrationTable, GateConfig, RuleTable};

use crate::error::ApiError;

pub const STORE_DIR_ENV: &str = "TSTKIT_STORE_DIR";
pub const PORT_ENV: &str = "TSTKIT_PORT";
pub const CONFIG_ENV: &str = "TSTKIT_CONFIG";

/// Side of the square capture crop, pixels.
pub const CAPTURE_SIDE: u32 = 450;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub store: StoreConfig,
    pub capture: CaptureConfig,
    pub gate: GateConfig,
    pub calibration: CalibrationTable,
    pub rules: RuleTable,
    pub reminders: ReadWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub dir: PathBuf,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("tstkit-store"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    /// Uploads larger than this are center-cropped to a square of this side.
    pub crop_side: u32,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            crop_side: CAPTURE_SIDE,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ApiError> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| ApiError::new(400, "invalid_config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ApiError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    let code = if e.kind() == std::io::ErrorKind::NotFound {
                        "file_not_found"
                    } else {
                        "unreadable_file"
                    };
                    let status = if code == "file_not_found" { 404 } else { 400 };
                    ApiError::new(status, code, format!("cannot read {}: {e}", p.display()))
                })?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ApiError> {
        self.gate.validate()?;
        let w = self.reminders;
        if !(w.start_hours.is_finite() && w.end_hours.is_finite() && w.start_hours < w.end_hours) {
            return Err(ApiError::new(
                400,
                "invalid_config",
                format!("reminder window [{}, {}] h is empty", w.start_hours, w.end_hours),
            ));
        }
        if self.capture.crop_side == 0 {
            return Err(ApiError::new(400, "invalid_config", "capture.crop_side must be positive"));
        }
        Ok(())
    }
}
