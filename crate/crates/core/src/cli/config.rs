use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adversary::AttackConfig;
use crate::distill::DistillConfig;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::teacher::{TeacherConfig, TeacherSource};

/// Everything one pipeline run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub teacher_source: TeacherSource,
    pub teacher: TeacherConfig,
    pub dataset_states: usize,
    pub distill: DistillConfig,
    /// Template for every budget of the sweep; its `eps` is replaced per row.
    pub attack: AttackConfig,
    pub eps_grid: Vec<f64>,
    pub eval_episodes: usize,
    /// Clean episodes whose states are certified.
    pub acr_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::CartPole,
            seed: 0,
            out_dir: PathBuf::from("runs/cartpole"),
            teacher_source: TeacherSource::Dqn,
            teacher: TeacherConfig::default(),
            dataset_states: 50_000,
            distill: DistillConfig::default(),
            attack: AttackConfig::default(),
            eps_grid: eps_grid(0.0, 0.2, 0.02),
            eval_episodes: 20,
            acr_episodes: 20,
        }
    }
}

/// `start, start + step, …` up to `stop` inclusive, rounded to 12 decimals
/// so that e.g. `0.06` prints as `0.06`.
pub fn eps_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()
}

impl RunConfig {
    /// The reduced network and iteration budget used for CI-scale runs.
    pub fn ci() -> Self {
        let mut cfg = Self::default();
        cfg.distill.hidden_widths = vec![64, 64];
        cfg.distill.iterations = 8000;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.distill.validate()?;
        self.attack.validate()?;
        if self.eps_grid.is_empty() {
            return Err(Error::Config("eps_grid must not be empty".into()));
        }
        if self.eps_grid.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) || self.eps_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("eps_grid must be finite, nonnegative and strictly increasing".into()));
        }
        if self.eval_episodes == 0 || self.acr_episodes == 0 {
            return Err(Error::Config("eval_episodes and acr_episodes must be positive".into()));
        }
        if self.dataset_states == 0 {
            return Err(Error::Config("dataset_states must be positive".into()));
        }
        if self.teacher_source == TeacherSource::Scripted && self.env != EnvKind::CartPole {
            return Err(Error::Config(format!("the scripted teacher only exists for cartpole, not {}", self.env)));
        }
        Ok(())
    }

    /// Resolves defaults < `file` < `overrides`. Overrides are `path=value`
    /// with a dotted key path and a JSON value (bare words are strings).
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        Self::resolve_over(Self::default(), file, overrides)
    }

    /// As [`RunConfig::resolve`] with `base` in place of the defaults.
    pub fn resolve_over(base: Self, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(base)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let layer: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
            merge(&mut tree, layer);
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the serialized config, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
