//! Network and training configuration.
//!
//! Configs are JSON objects with the keys of [`NetworkConfig`]; missing keys
//! take their defaults and command-line flags override the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::horl::{DEFAULT_EPS_DEG, DEFAULT_HYPEREDGES, DEFAULT_LAMBDA};
use crate::lorentz::Curvature;
use crate::numerics::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Tiny,
    Full,
}

impl Preset {
    /// Channel widths of the five scales.
    pub fn widths(self) -> [usize; 5] {
        match self {
            Preset::Tiny => [8, 16, 32, 64, 128],
            Preset::Full => [16, 32, 64, 128, 256],
        }
    }

    pub fn default_input_size(self) -> usize {
        match self {
            Preset::Tiny => 64,
            Preset::Full => 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub curvature: Curvature,
    pub preset: Preset,
    /// Square input extent. `None` means the preset default.
    pub input_size: Option<usize>,
    pub lambda: f64,
    /// Hyperedge count. `None` means the preset rule.
    pub hyperedges: Option<usize>,
    pub eps_deg: f64,
    pub attention_ratio: usize,
    pub seed: u64,
    pub precision: Precision,
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            curvature: Curvature::default(),
            preset: Preset::Tiny,
            input_size: None,
            lambda: DEFAULT_LAMBDA,
            hyperedges: None,
            eps_deg: DEFAULT_EPS_DEG,
            attention_ratio: 4,
            seed: 0,
            precision: Precision::F32,
            learning_rate: 1e-2,
            steps: 500,
        }
    }
}

impl NetworkConfig {
    pub fn tiny() -> Self {
        NetworkConfig::default()
    }

    pub fn full() -> Self {
        NetworkConfig {
            preset: Preset::Full,
            ..NetworkConfig::default()
        }
    }

    pub fn widths(&self) -> [usize; 5] {
        self.preset.widths()
    }

    pub fn input_size(&self) -> usize {
        self.input_size.unwrap_or(self.preset.default_input_size())
    }

    /// Vertices of the deepest feature map.
    pub fn vertices(&self) -> usize {
        (self.input_size() / 16).pow(2)
    }

    /// 256 for the full preset, `min(256, 4N)` for the tiny one.
    pub fn hyperedges(&self) -> usize {
        self.hyperedges.unwrap_or(match self.preset {
            Preset::Full => DEFAULT_HYPEREDGES,
            Preset::Tiny => DEFAULT_HYPEREDGES.min(4 * self.vertices()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.input_size();
        if s == 0 || s % 16 != 0 {
            return Err(Error::contract(format!(
                "input size must be a positive multiple of 16, got {s}"
            )));
        }
        if !(self.lambda >= 0.0) || !(self.eps_deg > 0.0) || self.hyperedges() == 0 {
            return Err(Error::contract("need λ ≥ 0, ε_deg > 0 and M ≥ 1"));
        }
        if self.attention_ratio == 0 {
            return Err(Error::contract("attention ratio must be ≥ 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract("learning rate must be finite and ≥ 0"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
