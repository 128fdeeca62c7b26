use std::path::{Path, PathBuf};

use audioshield::attack::AttackConfig;
use audioshield::classifier::TrainConfig;
use audioshield::detection::{DetectionOptions, LearnerParams, Scheme};
use audioshield::transforms::{default_ensemble, validate_ensemble, TransformSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const SEED_ENV: &str = "AUDIOSHIELD_SEED";

/// Everything one pipeline run needs. Relative paths resolve against the
/// working directory, except `model_path`, which lives in `output_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    /// Restricts and orders the dataset labels; all label directories when absent.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    pub output_dir: PathBuf,
    #[serde(default = "default_model_path")]
    pub model_path: PathBuf,
    /// Drives every random choice; required so no run is implicitly nondeterministic.
    pub seed: u64,
    /// Per-class share of the dataset held out from classifier training.
    /// Attack sources and benign detection clips come from this share.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_ensemble")]
    pub ensemble: Vec<TransformSpec>,
    /// `attack.seed` is replaced by `seed`.
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_per_pair")]
    pub per_pair: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub learners: LearnerParams,
    #[serde(default)]
    pub detection: DetectionOptions,
    /// Share of adversarial and benign clips used to train detectors.
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    /// Benign clips drawn for detection; defaults to the number of
    /// successful adversarial examples.
    #[serde(default)]
    pub benign_count: Option<usize>,
    /// Scheme whose verdicts feed the heat map and frequency analysis.
    #[serde(default = "default_analysis_scheme")]
    pub analysis_scheme: Scheme,
    /// Welch's unequal-variance t-test instead of the pooled Student test.
    #[serde(default)]
    pub welch: bool,
}

fn default_model_path() -> PathBuf {
    PathBuf::from("model.kwsm")
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_per_pair() -> usize {
    1
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn default_split_ratio() -> f64 {
    0.5
}

fn default_analysis_scheme() -> Scheme {
    Scheme::VoteThreshold
}

impl RunConfig {
    /// Reads `path`, applies `key=value` overrides in order, then the seed
    /// environment variable, and validates the result.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::User(format!("invalid config JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed: u64 = s.trim().parse().map_err(|_| CliError::User(format!("{SEED_ENV} must be an integer")))?;
            set_path(&mut value, "seed", Value::from(seed))?;
        }
        let mut config: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::User(format!("invalid config: {e}")))?;
        config.attack.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let user = |m: String| Err(CliError::User(m));
        if !(0.0..1.0).contains(&self.test_fraction) {
            return user(format!("test_fraction must be in [0, 1), got {}", self.test_fraction));
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return user(format!("split_ratio must be in [0, 1], got {}", self.split_ratio));
        }
        if self.schemes.is_empty() {
            return user("schemes must not be empty".into());
        }
        validate_ensemble(&self.ensemble).map_err(|e| CliError::User(format!("invalid ensemble: {e}")))?;
        self.attack.validate().map_err(|e| CliError::User(e.to_string()))?;
        if self.model_path.is_absolute() && !self.model_path.starts_with(&self.output_dir) {
            return user("model_path must lie inside output_dir".into());
        }
        Ok(())
    }

    /// Fails unless the dataset root is an existing directory.
    pub fn require_dataset(&self) -> Result<(), CliError> {
        if !self.dataset_root.is_dir() {
            return Err(CliError::User(format!("dataset root not found: {}", self.dataset_root.display())));
        }
        Ok(())
    }

    pub fn model_file(&self) -> PathBuf {
        self.output_dir.join(&self.model_path)
    }

    /// Writes the resolved config as `<command>.config.json` in the output directory.
    pub fn write_resolved(&self, command: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(format!("{command}.config.json"));
        std::fs::write(path, serde_json::to_string_pretty(self).map_err(CliError::internal)? + "\n")?;
        Ok(())
    }
}

/// `a.b.c=value`; the value is parsed as JSON and kept as a string otherwise.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) =
        spec.split_once('=').ok_or_else(|| CliError::User(format!("override {spec:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, key, value)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::User(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| CliError::User(format!("{key:?} does not name an object field")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| CliError::User(format!("{key:?} does not name an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
