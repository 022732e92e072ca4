//! Run configuration: one JSON document, with `NP_SEED` / `NP_OUT` overrides.

use std::path::{Path, PathBuf};

use accel_leak::attacks::{AttackKind, InputPolicy, LeakedConstants, NsqfPrior, ReverseConfig};
use accel_leak::mellin::BetaPrior;
use accel_leak::model::{by_name, NetworkSpec};
use accel_leak::tracegen::{AdditiveModel, NpKey, Observability};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A shipped key preset or an explicit key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeySpec {
    Preset(String),
    Explicit(NpKey),
}

impl KeySpec {
    pub fn resolve(&self) -> Result<NpKey, CliError> {
        match self {
            Self::Explicit(k) => Ok(*k),
            Self::Preset(name) => match name.as_str() {
                "default" => Ok(NpKey::default()),
                "desk-scaled" => Ok(NpKey::desk_scaled()),
                other => Err(CliError::Config(format!(
                    "unknown key preset {other:?} (expected \"default\" or \"desk-scaled\")"
                ))),
            },
        }
    }
}

impl Default for KeySpec {
    fn default() -> Self {
        Self::Preset("desk-scaled".into())
    }
}

/// The inference input: `{"ramp": [mul, add, modulus]}` fills element `i`
/// with `(i·mul + add) mod modulus`; otherwise a crafted-input policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Ramp { ramp: (usize, usize, usize) },
    Crafted(InputPolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CmSpec {
    None,
    Additive {
        model: AdditiveModel,
    },
    Neuroplug {
        #[serde(default)]
        key: KeySpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub cm: CmSpec,
    /// Keep only the first `layers` layers of the network.
    #[serde(default)]
    pub layers: Option<usize>,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_u64")]
    pub weight_seed: u64,
    #[serde(default = "ramp")]
    pub inputs: InputSpec,
    /// Baseline event sizes follow tile NNZ.
    #[serde(default)]
    pub sparse: bool,
    #[serde(default)]
    pub observability: Observability,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

fn ramp() -> InputSpec {
    InputSpec::Ramp { ramp: (37, 0, 251) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Broken,
    Held,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Broken => "broken",
            Self::Held => "held",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub list: Vec<AttackKind>,
    #[serde(default)]
    pub leaked: LeakedConstants,
    #[serde(default)]
    pub prior: Option<NsqfPrior>,
    #[serde(default)]
    pub reverse: Option<ReverseConfig>,
    /// Largest relative volume error still counted as a recovery.
    #[serde(default = "tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub expect: Option<Verdict>,
}

fn tolerance() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpaceSpec {
    pub alphas: Vec<f64>,
    pub priors: Vec<BetaPrior>,
    /// Compression-factor range `[lo, hi]` the adversary considers.
    pub factor_range: (f64, f64),
    pub grid: usize,
    /// Floor of the adversary's α prior.
    pub alpha_floor: f64,
    /// Weight seeds of the similar models used to centre the normal prior.
    pub cognate_seeds: Vec<u64>,
    pub run_seed: u64,
}

impl Default for SearchSpaceSpec {
    fn default() -> Self {
        Self {
            alphas: vec![1000.0, 2000.0, 4000.0, 8000.0, 16000.0, 32000.0],
            priors: BetaPrior::ALL.to_vec(),
            factor_range: (1.0, 40.0),
            grid: 512,
            alpha_floor: 100.0,
            cognate_seeds: vec![2, 3, 4, 5],
            run_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    /// Filter sizes of the secret layer; each level is a toy-sparse network.
    pub levels: Vec<usize>,
    pub samples_per_level: usize,
    pub layers: usize,
    pub permutations: usize,
    pub keys: Vec<(String, KeySpec)>,
    pub additive: AdditiveModel,
    pub seed: u64,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            levels: vec![1, 3, 5, 7],
            samples_per_level: 64,
            layers: 4,
            permutations: 32,
            keys: vec![
                ("neuroplug".into(), KeySpec::Preset("default".into())),
                (
                    "neuroplug-desk".into(),
                    KeySpec::Preset("desk-scaled".into()),
                ),
            ],
            additive: AdditiveModel::const_mean(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Shipped network name or path to a network JSON file.
    pub network: String,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub attacks: Option<AttackSpec>,
    #[serde(default)]
    pub searchspace: Option<SearchSpaceSpec>,
    #[serde(default)]
    pub metrics: Option<MetricsSpec>,
    #[serde(default = "out_dir")]
    pub out: PathBuf,
}

fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Overrides applied after parsing, highest precedence last.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// `NP_SEED` and `NP_OUT` from the environment.
    pub fn from_env() -> Result<Self, CliError> {
        let seed = match std::env::var("NP_SEED") {
            Ok(s) => Some(s.trim().parse().map_err(|_| {
                CliError::Config(format!("NP_SEED={s:?} is not an unsigned integer"))
            })?),
            Err(_) => None,
        };
        Ok(Self {
            seed,
            out: std::env::var_os("NP_OUT").map(PathBuf::from),
        })
    }

    pub fn then(self, other: Self) -> Self {
        Self {
            seed: other.seed.or(self.seed),
            out: other.out.or(self.out),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Reads, applies overrides, resolves relative paths against the config's
    /// directory and validates.
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        cfg.apply(ov);
        let base = path.parent().unwrap_or(Path::new("."));
        if looks_like_path(&cfg.network) && Path::new(&cfg.network).is_relative() {
            cfg.network = base.join(&cfg.network).to_string_lossy().into_owned();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.scenario.seed = s;
        }
        if let Some(o) = &ov.out {
            self.out = o.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.network_spec()?;
        let s = &self.scenario;
        if s.layers == Some(0) {
            return Err(CliError::Config(
                "scenario.layers must be at least 1".into(),
            ));
        }
        if s.runs == 0 {
            return Err(CliError::Config("scenario.runs must be at least 1".into()));
        }
        if let CmSpec::Neuroplug { key } = &s.cm {
            key.resolve()?
                .bins
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(a) = &self.attacks {
            if a.list.is_empty() {
                return Err(CliError::Config("attacks.list is empty".into()));
            }
            if !(a.tolerance >= 0.0) {
                return Err(CliError::Config(
                    "attacks.tolerance must be nonnegative".into(),
                ));
            }
        }
        if let Some(ss) = &self.searchspace {
            let (lo, hi) = ss.factor_range;
            if !(lo >= 1.0 && hi > lo) {
                return Err(CliError::Config(format!(
                    "searchspace.factor_range [{lo}, {hi}] must satisfy 1 <= lo < hi"
                )));
            }
            if ss.alphas.is_empty() || ss.alphas.iter().any(|a| !(*a >= 0.0)) {
                return Err(CliError::Config(
                    "searchspace.alphas must be nonnegative and nonempty".into(),
                ));
            }
            if ss.grid < 16 {
                return Err(CliError::Config(
                    "searchspace.grid must be at least 16".into(),
                ));
            }
        }
        if let Some(m) = &self.metrics {
            if m.levels.len() < 2 || m.samples_per_level < 30 {
                return Err(CliError::Config(
                    "metrics needs at least two levels and 30 samples per level".into(),
                ));
            }
            for (_, k) in &m.keys {
                k.resolve()?;
            }
        }
        Ok(())
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, CliError> {
        let net = if looks_like_path(&self.network) {
            let p = Path::new(&self.network);
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            NetworkSpec::from_json(&text)?
        } else {
            by_name(&self.network)?
        };
        Ok(match self.scenario.layers {
            Some(n) => net.truncated(n),
            None => net,
        })
    }

    /// SHA-256 of the canonical JSON form, hex.
    /// SHA-256 of everything but the output directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("struct").remove("out");
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn looks_like_path(s: &str) -> bool {
    s.ends_with(".json") || s.contains('/')
}
