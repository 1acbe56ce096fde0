//! TOML experiment configuration.
//!
//! ```toml
//! [system]
//! preset = "G1"            # or a = [[..], ..], b = [[..], ..], optional q, r, sigma
//!
//! [init]                   # exactly one of: gain, k1 + k2, remark2
//! remark2 = { eta = 1.0, kappa = 10, seed = 7 }
//!
//! [integrator]
//! t_end = 20.0
//!
//! [output]
//! stride = 1
//! formats = ["csv", "json"]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ExperimentError;
use crate::flow::IntegratorConfig;
use crate::linalg::{self, Mat};
use crate::lqr::LtiSystem;
use crate::overparam::{self, FactoredGain, DEFAULT_GROWTH, DEFAULT_S0};

use super::presets;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Remark2Init {
    pub eta: f64,
    #[serde(default = "default_s0")]
    pub s0: f64,
    #[serde(default = "default_growth")]
    pub growth: f64,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_s0() -> f64 {
    DEFAULT_S0
}
fn default_growth() -> f64 {
    DEFAULT_GROWTH
}
fn default_kappa() -> usize {
    presets::KAPPA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remark2: Option<Remark2Init>,
    /// Which flow to integrate; inferred from the variant when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Standard,
    Factored,
    /// Scalar flow of `f(k) = J(k²)`; the gain entry is `k`, not `k²`.
    Reparam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    /// Keep every `stride`-th recorded row.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_stride() -> usize {
    1
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: None,
            stride: 1,
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemBlock,
    pub init: InitBlock,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Initial point resolved from the init block.
#[derive(Debug, Clone)]
pub enum InitialPoint {
    Gain(Mat),
    Factors(FactoredGain),
}

fn matrix(field: &str, rows: &Rows) -> Result<Mat, ExperimentError> {
    linalg::mat_from_rows(rows).map_err(|e| ExperimentError::Config(format!("{field}: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Structural checks that do not need the numerics.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let s = &self.system;
        match (&s.preset, &s.a, &s.b) {
            (Some(name), None, None) => {
                if presets::system(name).is_none() {
                    return Err(ExperimentError::Config(format!(
                        "system.preset: unknown preset {name:?} (expected \"G1\" or \"G2\")"
                    )));
                }
            }
            (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => {
                return Err(ExperimentError::Config(
                    "system: give either preset or matrices a and b, not both".into(),
                ))
            }
            _ => {
                return Err(ExperimentError::Config(
                    "system: need preset or both matrices a and b".into(),
                ))
            }
        }
        let i = &self.init;
        let variants = [
            i.gain.is_some(),
            i.k1.is_some() || i.k2.is_some(),
            i.remark2.is_some(),
        ];
        if variants.iter().filter(|v| **v).count() != 1 {
            return Err(ExperimentError::Config(
                "init: exactly one of gain, (k1, k2), remark2 must be given".into(),
            ));
        }
        if i.k1.is_some() != i.k2.is_some() {
            return Err(ExperimentError::Config("init: k1 and k2 must be given together".into()));
        }
        if self.output.stride == 0 {
            return Err(ExperimentError::Config("output.stride must be at least 1".into()));
        }
        self.integrator
            .validate()
            .map_err(|e| ExperimentError::Config(format!("integrator: {e}")))?;
        for (name, rows) in [
            ("system.a", &s.a),
            ("system.b", &s.b),
            ("system.q", &s.q),
            ("system.r", &s.r),
            ("system.sigma", &s.sigma),
            ("init.gain", &i.gain),
            ("init.k1", &i.k1),
            ("init.k2", &i.k2),
        ] {
            if let Some(rows) = rows {
                matrix(name, rows)?;
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<LtiSystem, ExperimentError> {
        let s = &self.system;
        let (a, b) = match &s.preset {
            Some(name) => {
                let sys = presets::system(name)
                    .ok_or_else(|| ExperimentError::Config(format!("unknown preset {name:?}")))?;
                (sys.a().clone(), sys.b().clone())
            }
            None => (
                matrix("system.a", s.a.as_ref().expect("validated"))?,
                matrix("system.b", s.b.as_ref().expect("validated"))?,
            ),
        };
        let (n, m) = (a.nrows(), b.ncols());
        let weight = |name: &str, rows: &Option<Rows>, dim: usize| match rows {
            Some(r) => matrix(name, r),
            None => Ok(Mat::identity(dim, dim)),
        };
        let q = weight("system.q", &s.q, n)?;
        let r = weight("system.r", &s.r, m)?;
        let sigma = weight("system.sigma", &s.sigma, n)?;
        Ok(LtiSystem::new(a, b, q, r, sigma)?)
    }

    pub fn initial_point(&self, sys: &LtiSystem) -> Result<InitialPoint, ExperimentError> {
        let i = &self.init;
        if let Some(g) = &i.gain {
            return Ok(InitialPoint::Gain(matrix("init.gain", g)?));
        }
        if let (Some(k1), Some(k2)) = (&i.k1, &i.k2) {
            let fg = FactoredGain::new(matrix("init.k1", k1)?, matrix("init.k2", k2)?)?;
            return Ok(InitialPoint::Factors(fg));
        }
        let r2 = i.remark2.as_ref().expect("validated");
        let scaled = overparam::remark2_scale(sys, r2.eta, r2.s0, r2.growth)?;
        let fg = overparam::remark2_factorize(&scaled.gain, r2.kappa, r2.seed)?;
        Ok(InitialPoint::Factors(fg))
    }

    pub fn flow_kind(&self) -> FlowKind {
        self.init.flow.unwrap_or(if self.init.gain.is_some() {
            FlowKind::Standard
        } else {
            FlowKind::Factored
        })
    }

    pub fn seed(&self) -> Option<u64> {
        self.init.remark2.as_ref().map(|r| r.seed)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[system]\npreset = \"G1\"\n\n[init]\ngain = [[0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0]]\n";

    #[test]
    fn minimal_preset_config_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.system.preset.as_deref(), Some("G1"));
        assert_eq!(cfg.integrator, IntegratorConfig::default());
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let sys = cfg.build_system().unwrap();
        assert!(matches!(cfg.initial_point(&sys).unwrap(), InitialPoint::Gain(k) if k.shape() == (3, 5)));
    }

    #[test]
    fn ragged_matrix_names_the_row() {
        let text = "[system]\na = [[-1.0, 0.0], [0.0]]\nb = [[1.0], [0.0]]\n[init]\ngain = [[1.0, 0.0]]\n";
        let err = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("system.a") && err.contains("row 1"), "{err}");
    }

    #[test]
    fn init_variants_are_exclusive() {
        let both = format!("{MINIMAL}remark2 = {{ eta = 1.0 }}\n");
        assert!(ExperimentConfig::from_toml_str(&both).is_err());
        let none = "[system]\npreset = \"G2\"\n[init]\n";
        assert!(ExperimentConfig::from_toml_str(none).is_err());
        let half = "[system]\npreset = \"G2\"\n[init]\nk1 = [[1.0]]\n";
        assert!(ExperimentConfig::from_toml_str(half).is_err());
    }

    #[test]
    fn unknown_preset_and_fields_rejected() {
        let text = MINIMAL.replace("G1", "G3");
        assert!(ExperimentConfig::from_toml_str(&text).unwrap_err().to_string().contains("G3"));
        let text = format!("{MINIMAL}\n[integrator]\nrtoll = 1e-6\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("rtoll"), "{err}");
    }

    #[test]
    fn remark2_init_hits_requested_gap() {
        let text = "[system]\npreset = \"G1\"\n[init]\nremark2 = { eta = 2.0, seed = 5 }\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let sys = cfg.build_system().unwrap();
        let InitialPoint::Factors(fg) = cfg.initial_point(&sys).unwrap() else {
            panic!("expected factors")
        };
        assert_eq!(fg.kappa(), presets::KAPPA);
        let (_, j_opt) = crate::lqr::lqr_optimum(&sys).unwrap();
        let gap = crate::lqr::lqr_cost(&sys, &overparam::compose(&fg)).unwrap() - j_opt;
        assert!(gap >= 2.0 * (1.0 - 1e-9));
    }
}
