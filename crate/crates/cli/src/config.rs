//! Run settings shared by the commands and the TOML pipeline config.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use taildep::baselines::BaselineKind;
use taildep::learning::QuantileGrid;
use taildep::LatentLaw;

use crate::error::{CliError, Result};
use crate::panel::{InputMode, DEFAULT_SPLIT};

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_SAMPLES: usize = 1_000_000;

/// Dependence model fitted to the GARCH residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum ModelChoice {
    Triangular,
    OneFactor,
    Baseline(BaselineKind),
}

impl ModelChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelChoice::Triangular => "triangular",
            ModelChoice::OneFactor => "onefactor",
            ModelChoice::Baseline(k) => k.as_str(),
        }
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "triangular" => Ok(ModelChoice::Triangular),
            "onefactor" => Ok(ModelChoice::OneFactor),
            other => BaselineKind::parse(other).map(ModelChoice::Baseline).ok_or_else(|| {
                format!(
                    "unknown model `{other}` (expected triangular, onefactor, mvnormal, mvt, clayton, gumbel, of-gaussian, of-t)"
                )
            }),
        }
    }
}

impl TryFrom<String> for ModelChoice {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Quantile levels used by the quantile-regression stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "u32")]
pub enum GridChoice {
    Fine,
    Coarse,
}

impl GridChoice {
    pub fn levels(&self) -> QuantileGrid {
        match self {
            GridChoice::Fine => QuantileGrid::fine(),
            GridChoice::Coarse => QuantileGrid::coarse(),
        }
    }

    pub fn size(&self) -> u32 {
        match self {
            GridChoice::Fine => 99,
            GridChoice::Coarse => 21,
        }
    }
}

impl TryFrom<u32> for GridChoice {
    type Error = String;

    fn try_from(n: u32) -> std::result::Result<Self, String> {
        match n {
            99 => Ok(GridChoice::Fine),
            21 => Ok(GridChoice::Coarse),
            other => Err(format!("grid must be 99 or 21, got {other}")),
        }
    }
}

impl FromStr for GridChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<u32>().map_err(|e| e.to_string()).and_then(GridChoice::try_from)
    }
}

/// Everything that affects a fit or backtest other than the input data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub model: ModelChoice,
    pub reduced: bool,
    pub tau: f64,
    pub grid: GridChoice,
    pub samples: usize,
    pub seed: u64,
    pub split: f64,
    /// Student-t latent law with this df; standard normal when absent.
    pub latent_df: Option<f64>,
    /// Column used as the market factor by the one-factor models.
    pub market: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            model: ModelChoice::Triangular,
            reduced: false,
            tau: DEFAULT_TAU,
            grid: GridChoice::Fine,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            split: DEFAULT_SPLIT,
            latent_df: None,
            market: 0,
        }
    }
}

impl RunSettings {
    pub fn law(&self) -> LatentLaw {
        match self.latent_df {
            Some(df) => LatentLaw::StudentT { df },
            None => LatentLaw::StandardNormal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(CliError::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(CliError::Config(format!("split must lie in (0, 1], got {}", self.split)));
        }
        if self.samples == 0 {
            return Err(CliError::Config("samples must be positive".into()));
        }
        if (self.samples as f64) * self.tau < 10.0 {
            return Err(CliError::Config(format!(
                "samples * tau = {} is too small to locate tau*",
                self.samples as f64 * self.tau
            )));
        }
        if let Some(df) = self.latent_df {
            if !(df > 2.0 && df.is_finite()) {
                return Err(CliError::Config(format!("latent_df must exceed 2, got {df}")));
            }
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order.
    pub fn manifest_lines(&self) -> Vec<(String, String)> {
        vec![
            ("model".into(), self.model.to_string()),
            ("reduced".into(), self.reduced.to_string()),
            ("tau".into(), format!("{:?}", self.tau)),
            ("grid".into(), self.grid.size().to_string()),
            ("samples".into(), self.samples.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("split".into(), format!("{:?}", self.split)),
            (
                "latent".into(),
                self.latent_df.map_or("normal".into(), |df| format!("student-t({df:?})")),
            ),
            ("market".into(), self.market.to_string()),
        ]
    }
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_grid() -> GridChoice {
    GridChoice::Fine
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_split() -> f64 {
    DEFAULT_SPLIT
}

/// TOML file driving the `pipeline` command. `input`, `mode`, `model` and
/// `out` are required; the rest default as on the command line.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub mode: InputMode,
    pub model: ModelChoice,
    pub out: PathBuf,
    #[serde(default)]
    pub reduced: bool,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_grid")]
    pub grid: GridChoice,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub latent_df: Option<f64>,
    #[serde(default)]
    pub market: usize,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Reads a config file; a relative `input` or `out` resolves against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("read {}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.input.is_relative() {
                cfg.input = dir.join(&cfg.input);
            }
            if cfg.out.is_relative() {
                cfg.out = dir.join(&cfg.out);
            }
        }
        Ok(cfg)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            model: self.model,
            reduced: self.reduced,
            tau: self.tau,
            grid: self.grid,
            samples: self.samples,
            seed: self.seed,
            split: self.split,
            latent_df: self.latent_df,
            market: self.market,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
input = "prices.csv"
mode = "prices"
model = "mvt"
out = "run"
tau = 0.05
grid = 21
seed = 7
"#;

    #[test]
    fn parses_with_defaults() {
        let c = PipelineConfig::from_toml(FULL).unwrap();
        assert_eq!(c.model, ModelChoice::Baseline(BaselineKind::MvT));
        assert_eq!(c.mode, InputMode::Prices);
        assert_eq!(c.grid, GridChoice::Coarse);
        assert_eq!(c.samples, DEFAULT_SAMPLES);
        assert_eq!(c.split, DEFAULT_SPLIT);
        assert_eq!(c.settings().tau, 0.05);
    }

    #[test]
    fn missing_field_is_named() {
        for field in ["input", "mode", "model", "out"] {
            let text: String = FULL
                .lines()
                .filter(|l| !l.starts_with(&format!("{field} =")))
                .map(|l| format!("{l}\n"))
                .collect();
            let e = PipelineConfig::from_toml(&text).unwrap_err().to_string();
            assert!(e.contains(field), "{e}");
        }
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(PipelineConfig::from_toml(&FULL.replace("grid = 21", "grid = 50")).is_err());
        assert!(PipelineConfig::from_toml(&FULL.replace("\"mvt\"", "\"vine\"")).is_err());
        assert!(PipelineConfig::from_toml(&format!("{FULL}bogus = 1\n")).is_err());
    }

    #[test]
    fn every_model_name_parses() {
        for name in ["triangular", "onefactor", "mvnormal", "mvt", "clayton", "gumbel", "of-gaussian", "of-t"] {
            assert_eq!(name.parse::<ModelChoice>().unwrap().as_str(), name);
        }
    }

    #[test]
    fn settings_validation() {
        let ok = RunSettings::default();
        assert!(ok.validate().is_ok());
        assert!(RunSettings { tau: 1.0, ..ok.clone() }.validate().is_err());
        assert!(RunSettings { samples: 100, ..ok.clone() }.validate().is_err());
        assert!(RunSettings { latent_df: Some(2.0), ..ok }.validate().is_err());
    }
}
