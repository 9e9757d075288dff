//! Run configuration files.
//!
//! A run is described by a TOML file with `[data]`, `[shape]`, `[warp]`,
//! `[model]`, `[priors]`, `[mcmc]` and `[output]` sections. Every section and
//! field has a default except `data.path`.

use std::path::{Path, PathBuf};

use regclust::splines::make_knots;
use regclust::{BandKind, KnotPlacement, McmcConfig, Mode, ModelConfig, Priors};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    /// Replace each curve by the first derivative of a penalized spline fit.
    #[serde(default)]
    pub derivative: bool,
    /// Smoothing parameter for the derivative fit; chosen by GCV when unset.
    #[serde(default)]
    pub smoothing: Option<f64>,
    /// Ground truth written by `simulate`; enables agreement scores.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSection {
    /// Spline domain; the sampling window widened by `warp.delta` when unset.
    pub domain: Option<[f64; 2]>,
    /// Count of equidistant interior knots or explicit positions.
    pub knots: KnotPlacement,
    pub degree: usize,
}

impl Default for ShapeSection {
    fn default() -> Self {
        Self {
            domain: None,
            knots: KnotPlacement::Count(31),
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpSection {
    /// Sampling window; the data time range when unset.
    pub window: Option<[f64; 2]>,
    pub knots: KnotPlacement,
    pub degree: usize,
    pub delta: f64,
}

impl Default for WarpSection {
    fn default() -> Self {
        Self {
            window: None,
            knots: KnotPlacement::Positions(vec![5.0, 10.0, 15.0]),
            degree: 3,
            delta: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mode: Mode,
    pub positive_amplitude: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            mode: Mode::Joint,
            positive_amplitude: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub level: f64,
    pub band: BandKind,
    pub grid_points: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            level: 0.95,
            band: BandKind::Simultaneous,
            grid_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub shape: ShapeSection,
    #[serde(default)]
    pub warp: WarpSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data and truth paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.data.path.is_relative() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
            if let Some(t) = cfg.data.truth.as_mut().filter(|t| t.is_relative()) {
                *t = dir.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("`{field}`: {msg}")));
        if !(self.output.level > 0.0 && self.output.level < 1.0) {
            return bad(
                "output.level",
                format!("must lie in (0, 1), got {}", self.output.level),
            );
        }
        if self.output.grid_points < 2 {
            return bad("output.grid_points", "must be at least 2".into());
        }
        if !(self.warp.delta >= 0.0 && self.warp.delta.is_finite()) {
            return bad(
                "warp.delta",
                format!("must be finite and >= 0, got {}", self.warp.delta),
            );
        }
        if let Some(s) = self.data.smoothing {
            if !(s > 0.0 && s.is_finite()) {
                return bad("data.smoothing", format!("must be positive, got {s}"));
            }
        }
        self.mcmc
            .validate()
            .map_err(|e| CliError::Config(format!("`mcmc`: {e}")))?;
        Ok(())
    }

    /// Model configuration for data observed on `data_window`.
    pub fn model_config(&self, data_window: (f64, f64)) -> Result<ModelConfig, CliError> {
        let (lo, hi) = self.warp.window.map_or(data_window, |w| (w[0], w[1]));
        let delta = self.warp.delta;
        let warp = make_knots((lo, hi), self.warp.knots.clone(), self.warp.degree)
            .map_err(|e| CliError::Config(format!("`warp.knots`: {e}")))?;
        let (slo, shi) = self
            .shape
            .domain
            .map_or((lo - delta, hi + delta), |d| (d[0], d[1]));
        let shape = make_knots((slo, shi), self.shape.knots.clone(), self.shape.degree)
            .map_err(|e| CliError::Config(format!("`shape.knots`: {e}")))?;
        Ok(ModelConfig {
            shape,
            warp,
            delta,
            positive_amplitude: self.model.positive_amplitude,
            mode: self.model.mode,
            priors: self.priors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse("[data]\npath = \"d.csv\"\n").unwrap();
        assert_eq!(cfg.mcmc.iterations, 20_000);
        assert_eq!(cfg.mcmc.burn_in, 10_000);
        assert_eq!(cfg.priors.a_alpha, 0.01);
        assert_eq!(cfg.output.level, 0.95);
        let mc = cfg.model_config((0.0, 20.0)).unwrap();
        assert_eq!(mc.shape.domain(), (-5.0, 25.0));
        assert_eq!(mc.shape.num_basis(), 35);
        assert_eq!(mc.warp.num_basis(), 7);
    }

    #[test]
    fn unknown_field_is_named() {
        let err =
            RunConfig::parse("[data]\npath = \"d.csv\"\n[mcmc]\niterationz = 5\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("iterationz"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err =
            RunConfig::parse("[data]\npath = \"d.csv\"\n[mcmc]\niterations = 10\nburn_in = 10\n")
                .unwrap_err();
        assert!(err.to_string().contains("burn_in"));
        let err =
            RunConfig::parse("[data]\npath = \"d.csv\"\n[output]\nlevel = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("output.level"));
        let cfg = RunConfig::parse("[data]\npath = \"d.csv\"\n[warp]\nknots = [25.0]\n").unwrap();
        assert!(cfg
            .model_config((0.0, 20.0))
            .unwrap_err()
            .to_string()
            .contains("warp.knots"));
    }

    #[test]
    fn modes_and_knot_lists_parse() {
        let text = "[data]\npath = \"x.csv\"\n[model]\nmode = \"clustering-only\"\n[shape]\nknots = [0.0, 10.0]\ndomain = [-1.0, 21.0]\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.mode, Mode::ClusteringOnly);
        assert_eq!(
            cfg.model_config((0.0, 20.0)).unwrap().shape.interior(),
            &[0.0, 10.0]
        );
    }
}
