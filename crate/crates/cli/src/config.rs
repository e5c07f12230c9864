//! Experiment configuration: TOML parsing, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparse_stein::datagen::NoiseSpec;
use sparse_stein::inference::{AdamConfig, HmcConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{key}`: {message}")]
    Validation { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Hyperelasticity,
    Mechanochemistry,
    GaussianDemo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svgd,
    Psvgd,
    Hmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "d_count")]
    pub count: usize,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "d_one")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Hidden widths; the problem decides the default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub constrain_first_layer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    #[serde(default)]
    pub p: u32,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_one_usize")]
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// Defaults to 0.08 / 0.01 / 0.005 for p = 0 / 1 / 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_unit")]
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsifyConfig {
    /// Entries with `|θ| <= tolerance` are pruned when no gates exist.
    #[serde(default)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default = "d_method")]
    pub method: Method,
    #[serde(default = "d_particles")]
    pub particles: usize,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_svgd_lr")]
    pub lr: f64,
    #[serde(default = "d_svgd_decay")]
    pub decay: f64,
    /// Standard deviation of the initial jitter around the MAP.
    #[serde(default = "d_jitter")]
    pub jitter: f64,
    /// Gaussian prior `λ‖θ‖²` on the surviving parameters.
    #[serde(default = "d_prior_lambda")]
    pub prior_lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_hmc")]
    pub hmc: HmcConfig,
    #[serde(default = "d_three")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(default = "d_points")]
    pub path_points: usize,
    #[serde(default = "d_replicates")]
    pub replicates: usize,
    #[serde(default = "d_eval_seed")]
    pub noise_seed: u64,
    /// Observable name; `S11` for hyperelasticity and `mu` for mechanochemistry by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    #[serde(default = "d_true")]
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    #[serde(default = "d_precision")]
    pub precision: Vec<Vec<f64>>,
    #[serde(default = "d_mean")]
    pub mean: Vec<f64>,
    #[serde(default = "d_unit")]
    pub lambda1: f64,
    #[serde(default = "d_demo_init_sd")]
    pub init_sd: f64,
    /// Reference chain length for the W1 table.
    #[serde(default = "d_reference_samples")]
    pub reference_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcurveConfig {
    #[serde(default = "d_lambdas")]
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    /// Seed for parameter initialization and gate noise.
    #[serde(default = "d_one")]
    pub seed: u64,
    #[serde(default = "Default::default")]
    pub data: DataConfig,
    #[serde(default = "Default::default")]
    pub architecture: ArchitectureConfig,
    #[serde(default = "Default::default")]
    pub regularizer: RegularizerConfig,
    #[serde(default = "Default::default")]
    pub map: MapConfig,
    #[serde(default = "Default::default")]
    pub sparsify: SparsifyConfig,
    #[serde(default = "Default::default")]
    pub inference: InferenceConfig,
    #[serde(default = "Default::default")]
    pub evaluate: EvaluateConfig,
    #[serde(default = "Default::default")]
    pub demo: DemoConfig,
    #[serde(default = "Default::default")]
    pub lcurve: LcurveConfig,
}

fn d_count() -> usize {
    80
}
fn d_epsilon() -> f64 {
    0.2
}
fn d_noise() -> NoiseSpec {
    NoiseSpec::multiplicative(0.1, 7)
}
fn d_one() -> u64 {
    1
}
fn d_three() -> u64 {
    3
}
fn d_one_usize() -> usize {
    1
}
fn d_lambda() -> f64 {
    10.0
}
fn d_epochs() -> usize {
    5000
}
fn d_unit() -> f64 {
    1.0
}
fn d_method() -> Method {
    Method::Svgd
}
fn d_particles() -> usize {
    10
}
fn d_iterations() -> usize {
    2000
}
fn d_svgd_lr() -> f64 {
    0.01
}
fn d_svgd_decay() -> f64 {
    0.999
}
fn d_jitter() -> f64 {
    0.01
}
fn d_prior_lambda() -> f64 {
    0.001
}
fn d_threshold() -> f64 {
    0.99
}
fn d_hmc() -> HmcConfig {
    HmcConfig {
        step_size: 0.001,
        leapfrog_steps: 10,
        chain_length: 10_000,
        burn_in: 1000,
        thin: 10,
    }
}
fn d_points() -> usize {
    1000
}
fn d_replicates() -> usize {
    1000
}
fn d_eval_seed() -> u64 {
    99
}
fn d_true() -> bool {
    true
}
fn d_precision() -> Vec<Vec<f64>> {
    vec![vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 0.025]]
}
fn d_mean() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}
fn d_demo_init_sd() -> f64 {
    1.0
}
fn d_reference_samples() -> usize {
    10_000
}
fn d_lambdas() -> Vec<f64> {
    vec![0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0]
}
fn d_output() -> PathBuf {
    PathBuf::from("out")
}

macro_rules! serde_defaults {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                toml::from_str("").expect("every field has a default")
            }
        }
    )*};
}

serde_defaults!(
    DataConfig,
    ArchitectureConfig,
    RegularizerConfig,
    MapConfig,
    SparsifyConfig,
    InferenceConfig,
    EvaluateConfig,
    DemoConfig,
    LcurveConfig
);

impl ExperimentConfig {
    pub fn hidden(&self) -> Vec<usize> {
        self.architecture.hidden.clone().unwrap_or_else(|| match self.problem {
            Problem::Mechanochemistry => vec![4, 16, 4],
            _ => vec![30, 30],
        })
    }

    pub fn map_adam(&self) -> AdamConfig {
        let lr = self.map.lr.unwrap_or(match self.regularizer.p {
            0 => 0.08,
            1 => 0.01,
            _ => 0.005,
        });
        AdamConfig::new(lr).with_decay(self.map.decay)
    }

    pub fn svgd_adam(&self) -> AdamConfig {
        AdamConfig::new(self.inference.lr).with_decay(self.inference.decay)
    }

    pub fn observable(&self) -> String {
        self.evaluate.observable.clone().unwrap_or_else(|| match self.problem {
            Problem::Mechanochemistry => "mu".into(),
            _ => "S11".into(),
        })
    }

    /// Stable text form of every setting except the output directory.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        toml::to_string(&c).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive, got {v}")))
            }
        };
        let at_least_one = |key: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(invalid(key, "must be at least 1"))
            }
        };
        if self.problem != Problem::GaussianDemo {
            at_least_one("data.count", self.data.count)?;
            if !(0.0..1.0).contains(&self.data.epsilon) {
                return Err(invalid("data.epsilon", format!("must lie in [0, 1), got {}", self.data.epsilon)));
            }
            if !(self.data.noise.level >= 0.0 && self.data.noise.level.is_finite()) {
                return Err(invalid("data.noise.level", format!("must be >= 0, got {}", self.data.noise.level)));
            }
            let hidden = self.hidden();
            if hidden.is_empty() || hidden.contains(&0) {
                return Err(invalid("architecture.hidden", "needs at least one layer, all widths >= 1"));
            }
            if self.problem == Problem::Hyperelasticity && hidden.iter().any(|&w| w < 3) {
                return Err(invalid("architecture.hidden", "ICNN widths must be >= 3 (the input width)"));
            }
            if self.regularizer.p > 2 {
                return Err(invalid("regularizer.p", format!("must be 0, 1 or 2, got {}", self.regularizer.p)));
            }
            if !(self.regularizer.lambda >= 0.0 && self.regularizer.lambda.is_finite()) {
                return Err(invalid("regularizer.lambda", format!("must be >= 0, got {}", self.regularizer.lambda)));
            }
            at_least_one("regularizer.mc_samples", self.regularizer.mc_samples)?;
            positive("map.lr", self.map_adam().lr)?;
            if !(self.map.decay > 0.0 && self.map.decay <= 1.0) {
                return Err(invalid("map.decay", format!("must lie in (0, 1], got {}", self.map.decay)));
            }
            if !(self.sparsify.tolerance >= 0.0) {
                return Err(invalid("sparsify.tolerance", "must be >= 0"));
            }
            at_least_one("evaluate.path_points", self.evaluate.path_points.saturating_sub(1))?;
            at_least_one("evaluate.replicates", self.evaluate.replicates)?;
            let obs = self.observable();
            let names = crate::experiment::observable_names(self.problem);
            if !names.contains(&obs) {
                return Err(invalid("evaluate.observable", format!("unknown observable '{obs}', expected one of {names:?}")));
            }
            for (i, &l) in self.lcurve.lambdas.iter().enumerate() {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(invalid(&format!("lcurve.lambdas[{i}]"), format!("must be positive, got {l}")));
                }
            }
        }
        let inf = &self.inference;
        at_least_one("inference.particles", inf.particles)?;
        positive("inference.lr", inf.lr)?;
        if !(inf.decay > 0.0 && inf.decay <= 1.0) {
            return Err(invalid("inference.decay", format!("must lie in (0, 1], got {}", inf.decay)));
        }
        if !(inf.jitter >= 0.0 && inf.jitter.is_finite()) {
            return Err(invalid("inference.jitter", format!("must be >= 0, got {}", inf.jitter)));
        }
        positive("inference.prior_lambda", inf.prior_lambda)?;
        if let Some(h) = inf.bandwidth {
            positive("inference.bandwidth", h)?;
        }
        if !(inf.threshold > 0.0 && inf.threshold <= 1.0) {
            return Err(invalid("inference.threshold", format!("must lie in (0, 1], got {}", inf.threshold)));
        }
        positive("inference.hmc.step_size", inf.hmc.step_size)?;
        at_least_one("inference.hmc.leapfrog_steps", inf.hmc.leapfrog_steps)?;
        at_least_one("inference.hmc.chain_length", inf.hmc.chain_length)?;
        at_least_one("inference.hmc.thin", inf.hmc.thin)?;
        if self.problem == Problem::GaussianDemo {
            let d = &self.demo;
            let n = d.mean.len();
            if n == 0 {
                return Err(invalid("demo.mean", "must be non-empty"));
            }
            if d.precision.len() != n || d.precision.iter().any(|r| r.len() != n) {
                return Err(invalid("demo.precision", format!("must be {n}x{n}")));
            }
            for i in 0..n {
                for j in 0..n {
                    if d.precision[i][j] != d.precision[j][i] {
                        return Err(invalid("demo.precision", "must be symmetric"));
                    }
                }
            }
            if !(d.lambda1 >= 0.0 && d.lambda1.is_finite()) {
                return Err(invalid("demo.lambda1", format!("must be >= 0, got {}", d.lambda1)));
            }
            positive("demo.init_sd", d.init_sd)?;
            at_least_one("demo.reference_samples", d.reference_samples)?;
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Unknown-key diagnostics: the offending name and the closest accepted one.
fn unknown_key(message: &str) -> Option<(String, Option<String>)> {
    let rest = message.split("unknown field `").nth(1)?;
    let name = rest.split('`').next()?.to_string();
    let candidates: Vec<&str> = rest
        .split("expected")
        .nth(1)
        .map(|list| list.split('`').skip(1).step_by(2).collect())
        .unwrap_or_default();
    let best = candidates
        .iter()
        .map(|c| (strsim::damerau_levenshtein(&name, c), *c))
        .filter(|(d, _)| *d <= 3)
        .min()
        .map(|(_, c)| c.to_string());
    Some((name, best))
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        match unknown_key(e.message()) {
            Some((key, hint)) => ConfigError::Validation {
                message: match hint {
                    Some(h) => format!("unknown key on line {line}; did you mean `{h}`?"),
                    None => format!("unknown key on line {line}"),
                },
                key,
            },
            None => ConfigError::Parse {
                line,
                message: e.message().trim_end().to_string(),
            },
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggestion_picks_nearest_field() {
        let msg = "unknown field `particlez`, expected one of `method`, `particles`, `iterations`";
        assert_eq!(unknown_key(msg), Some(("particlez".into(), Some("particles".into()))));
        assert_eq!(unknown_key("something else"), None);
    }

    #[test]
    fn defaults_are_complete() {
        let c = parse_config_str("problem = \"hyperelasticity\"").unwrap();
        assert_eq!(c.hidden(), vec![30, 30]);
        assert_eq!(c.map_adam().lr, 0.08);
        assert_eq!(parse_config_str(&toml::to_string(&c).unwrap()).unwrap(), c);
    }
}
