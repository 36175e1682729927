//! Layered run configuration: preset, then config file, then flags.

use std::path::{Path, PathBuf};

use hcct::config::KeyValues;
use hcct::model::ModelConfig;
use hcct::train::TrainConfig;

use crate::{CliError, Common, Preset};

pub struct Resolved {
    pub kv: KeyValues,
    /// Keys given by the config file or flags rather than the preset.
    pub explicit: KeyValues,
}

impl Resolved {
    /// Applies preset, `--config` file and `flags` (key, value) in that
    /// order. `None` flag values are ignored.
    pub fn new(common: &Common, flags: &[(&str, Option<String>)]) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                KeyValues::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => KeyValues::new(),
        };
        let preset = match (common.preset, file.get("run.preset")) {
            (Some(p), _) => p,
            (None, None | Some("desk")) => Preset::Desk,
            (None, Some("paper")) => Preset::Paper,
            (None, Some(other)) => return Err(CliError::Usage(format!("unknown preset {other:?}"))),
        };
        let (model, train) = match preset {
            Preset::Desk => (ModelConfig::desk(), TrainConfig::desk()),
            Preset::Paper => (ModelConfig::paper(), TrainConfig::paper()),
        };
        let mut kv = KeyValues::new();
        kv.set("run.preset", if preset == Preset::Paper { "paper" } else { "desk" })?;
        model.write_to(&mut kv)?;
        train.write_to(&mut kv)?;

        let mut explicit = file;
        if let Some(seed) = common.seed {
            explicit.set("train.seed", seed)?;
        }
        if let Some(out) = &common.out {
            explicit.set("run.out", path_text(out)?)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                explicit.set(key, v)?;
            }
        }
        explicit.set("run.preset", kv.get("run.preset").unwrap_or("desk"))?;
        kv.merge(&explicit)?;
        Ok(Self { kv, explicit })
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        let cfg = ModelConfig::read_from(&self.kv, &ModelConfig::desk()).map_err(usage)?;
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig::read_from(&self.kv, &TrainConfig::desk()).map_err(usage)?;
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.kv.parsed(key).map_err(usage)
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> Result<(), CliError> {
        Ok(self.kv.set(key, value)?)
    }

    /// Path stored under `key`; missing or nonexistent paths are usage
    /// errors naming `flag`.
    pub fn existing_path(&self, key: &str, flag: &str) -> Result<PathBuf, CliError> {
        let Some(p) = self.kv.get(key) else {
            return Err(CliError::Usage(format!("{flag} is required")));
        };
        let path = PathBuf::from(p);
        if !path.exists() {
            return Err(CliError::Usage(format!("{flag} {} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let Some(p) = self.kv.get("run.out") else {
            return Err(CliError::Usage("--out is required".into()));
        };
        let out = PathBuf::from(p);
        std::fs::create_dir_all(&out).map_err(|e| hcct::Error::Io {
            path: out.clone(),
            source: e,
        })?;
        Ok(out)
    }

    /// Uses the checkpoint's architecture. Structural keys set explicitly
    /// must agree with it; dropout may be overridden.
    pub fn adopt_model(&mut self, stored: &ModelConfig) -> Result<ModelConfig, CliError> {
        let requested = ModelConfig::read_from(&self.explicit, stored).map_err(usage)?;
        let structural = ModelConfig {
            dropout: stored.dropout,
            ..requested.clone()
        };
        if &structural != stored {
            let mut mine = KeyValues::new();
            structural.write_to(&mut mine)?;
            let mut theirs = KeyValues::new();
            stored.write_to(&mut theirs)?;
            let diffs: Vec<String> = mine
                .iter()
                .filter(|(k, v)| theirs.get(k) != Some(v))
                .map(|(k, v)| format!("{k} = {v} (checkpoint: {})", theirs.get(k).unwrap_or("?")))
                .collect();
            return Err(CliError::Usage(format!(
                "configuration does not match the checkpoint: {}",
                diffs.join("; ")
            )));
        }
        requested.write_to(&mut self.kv)?;
        Ok(requested)
    }

    /// Prints the resolved configuration and writes it to `config.txt`.
    pub fn echo(&self, out: &Path) -> Result<(), CliError> {
        let text = self.kv.render();
        println!("# resolved configuration\n{text}");
        let path = out.join("config.txt");
        std::fs::write(&path, text).map_err(|e| hcct::Error::Io { path, source: e })?;
        Ok(())
    }
}

/// Configuration values that fail to parse or validate are usage errors.
pub fn usage(e: hcct::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn path_text(path: &Path) -> Result<String, CliError> {
    path.to_str()
        .map(str::to_string)
        .ok_or_else(|| CliError::Usage(format!("path {} is not valid UTF-8", path.display())))
}
