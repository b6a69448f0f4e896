use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bank::BankConfig;
use crate::error::{Error, Result};
use crate::metrics::PenaltyConfig;
use crate::script::EntityId;

/// A user-supplied reference: frame tensor, entity mask, and the entity it
/// depicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceAsset {
    pub frame: PathBuf,
    pub mask: PathBuf,
    pub entity: EntityId,
}

fn default_steps() -> usize {
    4
}

fn default_frames() -> usize {
    8
}

fn default_keyframes() -> usize {
    2
}

fn default_update_every() -> usize {
    1
}

fn default_sigma() -> f64 {
    0.25
}

/// Run configuration. Relative paths resolve against the directory of the
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub script: PathBuf,
    #[serde(default)]
    pub bank: BankConfig,
    #[serde(default = "default_steps")]
    pub steps_per_shot: usize,
    #[serde(default = "default_frames")]
    pub frames_per_shot: usize,
    #[serde(default = "default_keyframes")]
    pub keyframes_per_shot: usize,
    /// Update the bank after every n-th shot; 0 disables updates.
    #[serde(default = "default_update_every")]
    pub update_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub references: Vec<ReferenceAsset>,
    #[serde(default)]
    pub metrics: PenaltyConfig,
}

impl RunConfig {
    pub fn new(script: impl Into<PathBuf>) -> Self {
        Self {
            script: script.into(),
            bank: BankConfig::default(),
            steps_per_shot: default_steps(),
            frames_per_shot: default_frames(),
            keyframes_per_shot: default_keyframes(),
            update_every: default_update_every(),
            seed: 0,
            noise_sigma: default_sigma(),
            references: Vec::new(),
            metrics: PenaltyConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::Schema(e.to_string()),
            _ => Error::Syntax(e.to_string()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.bank.validate()?;
        self.metrics.validate()?;
        if self.steps_per_shot == 0 || self.frames_per_shot == 0 || self.keyframes_per_shot == 0 {
            return Err(Error::InvalidConfig(
                "steps, frames and keyframes per shot must be at least 1".into(),
            ));
        }
        if self.keyframes_per_shot > self.frames_per_shot {
            return Err(Error::InvalidK {
                k: self.keyframes_per_shot,
                available: self.frames_per_shot,
            });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Whether the bank is updated after the shot at 0-based `position`.
    pub fn updates_after(&self, position: usize) -> bool {
        self.update_every > 0 && (position + 1).is_multiple_of(self.update_every)
    }
}

/// A run configuration together with the directory its paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            config: RunConfig::from_json(&text)?,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_json(r#"{"script": "story.json"}"#).unwrap();
        assert_eq!(c, RunConfig::new("story.json"));
        assert_eq!(c.bank.token_budget, 256);
        assert_eq!(c.keyframes_per_shot, 2);
        assert_eq!(c.metrics.alpha1, 0.88);
    }

    #[test]
    fn partial_nested_sections() {
        let c = RunConfig::from_json(
            r#"{"script": "s.json", "bank": {"token_budget": 64}, "metrics": {"resolution": 32}, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(c.bank.token_budget, 64);
        assert_eq!(c.bank.tau_minmatch, 0.5);
        assert_eq!(c.metrics.resolution, 32);
        assert_eq!(c.seed, 9);
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(RunConfig::from_json("{"), Err(Error::Syntax(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"script": 3}"#),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"script": "a", "bogus": 1}"#),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            RunConfig::from_json(
                r#"{"script": "a", "frames_per_shot": 1, "keyframes_per_shot": 2}"#
            ),
            Err(Error::InvalidK { k: 2, available: 1 })
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"script": "a", "steps_per_shot": 0}"#),
            Err(Error::InvalidConfig(_))
        ));
        assert!(
            RunConfig::from_json(r#"{"script": "a", "bank": {"tau_minmatch": 0.99}}"#).is_err()
        );
    }

    #[test]
    fn update_schedule() {
        let mut c = RunConfig::new("s");
        assert!((0..5).all(|p| c.updates_after(p)));
        c.update_every = 2;
        assert_eq!(
            (0..5).map(|p| c.updates_after(p)).collect::<Vec<_>>(),
            [false, true, false, true, false]
        );
        c.update_every = 0;
        assert!((0..5).all(|p| !c.updates_after(p)));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"script": "story.json"}"#).unwrap();
        let loaded = LoadedConfig::load(&path).unwrap();
        assert_eq!(
            loaded.resolve(&loaded.config.script),
            dir.path().join("story.json")
        );
        assert_eq!(loaded.resolve(Path::new("/abs/x")), PathBuf::from("/abs/x"));
    }
}
