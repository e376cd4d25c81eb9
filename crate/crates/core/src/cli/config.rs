//! Run configuration: built-in defaults, then a TOML file, then `BSTEER_*`
//! environment variables, then command-line flags.
//!
//! Environment keys are `BSTEER_<SECTION>_<KEY>`, e.g. `BSTEER_STEER_ALPHA=0.5`
//! or `BSTEER_VERIFY_DIMS=[2,8]`. Values are parsed as TOML, falling back to a
//! bare string. Unknown sections and keys are rejected at every layer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barrier::{OptimizerKind, TrainConfig, DESK_HIDDEN_DIMS};
use crate::dynamics::{ScenarioKind, SuiteConfig};
use crate::error::{Error, Result};
use crate::steering::ProjectionSettings;
use crate::types::{SteeringConfig, SteeringMode};

pub const ENV_PREFIX: &str = "BSTEER_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub heads: usize,
    pub hidden_dims: Vec<usize>,
    /// Fraction of source ids kept for training; the rest is held out.
    pub train_fraction: f64,
    pub lambda_unsafe: f64,
    pub epsilon_margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            heads: 4,
            hidden_dims: DESK_HIDDEN_DIMS.to_vec(),
            train_fraction: 0.8,
            lambda_unsafe: t.lambda_unsafe,
            epsilon_margin: t.epsilon_margin,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            optimizer: t.optimizer,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda_unsafe: self.lambda_unsafe,
            epsilon_margin: self.epsilon_margin,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub suite: ScenarioKind,
    pub scenarios: usize,
    pub steps: usize,
    pub dims: Vec<usize>,
    /// Defaults to LSE and QP, or LSE alone for stabilization suites.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<SteeringMode>>,
    pub alpha: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Half-width of the box that start states are drawn from for a trained model.
    pub start_radius: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let s = SuiteConfig::default();
        Self {
            suite: s.kind,
            scenarios: s.scenarios,
            steps: s.steps,
            dims: s.dims,
            modes: None,
            alpha: s.steering.alpha,
            dt: s.steering.dt,
            max_speed: s.max_speed,
            seed: s.seed,
            tolerance: None,
            start_radius: 2.0,
        }
    }
}

impl VerifySection {
    pub fn modes(&self) -> Vec<SteeringMode> {
        self.modes.clone().unwrap_or_else(|| match self.suite {
            ScenarioKind::Stabilization => vec![SteeringMode::Lse],
            _ => vec![SteeringMode::Lse, SteeringMode::Qp],
        })
    }

    pub fn suite_config(&self, steer: &SteeringConfig) -> SuiteConfig {
        SuiteConfig {
            kind: self.suite,
            scenarios: self.scenarios,
            steps: self.steps,
            dims: self.dims.clone(),
            modes: self.modes(),
            steering: SteeringConfig {
                alpha: self.alpha,
                dt: self.dt,
                ..steer.clone()
            },
            max_speed: self.max_speed,
            seed: self.seed,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub trials: usize,
    pub warmup: usize,
    pub heads: usize,
    pub d_h: usize,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    pub projection_iterations: usize,
    pub projection_learning_rate: f64,
    pub projection_penalty: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        let p = ProjectionSettings::default();
        Self {
            trials: 1000,
            warmup: 20,
            heads: 14,
            d_h: 1536,
            hidden_dims: DESK_HIDDEN_DIMS.to_vec(),
            seed: 0,
            projection_iterations: p.iterations,
            projection_learning_rate: p.learning_rate,
            projection_penalty: p.penalty,
        }
    }
}

impl BenchSection {
    pub fn projection(&self) -> ProjectionSettings {
        ProjectionSettings {
            iterations: self.projection_iterations,
            learning_rate: self.projection_learning_rate,
            penalty: self.projection_penalty,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainSection,
    pub steer: SteeringConfig,
    pub verify: VerifySection,
    pub bench: BenchSection,
    pub paths: PathsSection,
}

const SECTIONS: [&str; 5] = ["train", "steer", "verify", "bench", "paths"];

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Overrides from `(name, value)` pairs; names without the prefix are ignored.
fn env_overrides<I>(vars: I) -> Result<toml::Table>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut out = toml::Table::new();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let rest = rest.to_ascii_lowercase();
        let (section, key) = rest
            .split_once('_')
            .filter(|(s, k)| SECTIONS.contains(s) && !k.is_empty())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown configuration variable {name}")))?;
        let table = out
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(t) = table {
            t.insert(key.to_string(), parse_env_value(&raw));
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then `file`, then the given environment.
    pub fn load<I>(file: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::InvalidConfig(format!("default configuration: {e}")))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let doc: toml::Table =
                toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            merge(&mut table, doc);
        }
        merge(&mut table, env_overrides(env)?);
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_process_env(file: Option<&Path>) -> Result<Self> {
        Self::load(file, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        self.steer.validate()?;
        self.train.train_config().validate()?;
        let f = self.train.train_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0, 1], got {f}"
            )));
        }
        if self.train.heads == 0 || self.bench.heads == 0 {
            return Err(Error::InvalidConfig("head count must be >= 1".into()));
        }
        self.verify.suite_config(&self.steer).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::load(None, env(&[])).unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn file_then_env_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[steer]\nalpha = 0.7\nkappa = 50.0\n[verify]\ndims = [3]\n").unwrap();
        let c = RunConfig::load(Some(&path), env(&[("BSTEER_STEER_ALPHA", "0.9"), ("OTHER", "x")])).unwrap();
        assert_eq!(c.steer.alpha, 0.9);
        assert_eq!(c.steer.kappa, 50.0);
        assert_eq!(c.verify.dims, vec![3]);
        assert_eq!(c.steer.delta, 0.0);
    }

    #[test]
    fn env_values_parse_as_toml() {
        let c = RunConfig::load(
            None,
            env(&[
                ("BSTEER_VERIFY_DIMS", "[2, 4]"),
                ("BSTEER_STEER_MODE", "lse"),
                ("BSTEER_PATHS_OUT", "/tmp/x"),
                ("BSTEER_STEER_GRAD_FLOOR", "1e-10"),
            ]),
        )
        .unwrap();
        assert_eq!(c.verify.dims, vec![2, 4]);
        assert_eq!(c.steer.mode, SteeringMode::Lse);
        assert_eq!(c.paths.out, Some(PathBuf::from("/tmp/x")));
        assert_eq!(c.steer.grad_floor, 1e-10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, env(&[("BSTEER_STEER_ALHPA", "1")])).is_err());
        assert!(RunConfig::load(None, env(&[("BSTEER_NOPE_X", "1")])).is_err());
        assert!(RunConfig::load(None, env(&[("BSTEER_STEER", "1")])).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepoch = 3\n").unwrap();
        assert!(RunConfig::load(Some(&path), env(&[])).is_err());
        std::fs::write(&path, "[extra]\n").unwrap();
        assert!(RunConfig::load(Some(&path), env(&[])).is_err());
    }

    #[test]
    fn stabilization_defaults_to_lse() {
        let v = VerifySection {
            suite: ScenarioKind::Stabilization,
            ..VerifySection::default()
        };
        assert_eq!(v.modes(), vec![SteeringMode::Lse]);
    }
}
