//! Run configuration: built-in preset, optional JSON file and command-line
//! flags, merged with precedence flag > file > preset > default.

use std::path::{Path, PathBuf};

use dialmae::model::ModelConfig;
use dialmae::training::presets::{preset, Preset};
use dialmae::training::TrainConfig;
use dialmae::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const DEFAULT_PRESET: &str = "desk";

/// Schema of a `--config` file. Every section is a partial override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub model: Map<String, Value>,
    #[serde(default)]
    pub post_train: Map<String, Value>,
    #[serde(default)]
    pub fine_tune: Map<String, Value>,
    #[serde(default)]
    pub sessions: Option<PathBuf>,
    #[serde(default)]
    pub eval: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Flag overrides collected from the command line, keyed by config field.
#[derive(Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub model: Map<String, Value>,
    pub post_train: Map<String, Value>,
    pub fine_tune: Map<String, Value>,
}

pub fn set<T: Serialize>(map: &mut Map<String, Value>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        map.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
    }
}

fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: &T, layers: &[&Map<String, Value>], what: &str) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("configs serialize as objects");
    for layer in layers {
        for (k, val) in layer.iter() {
            obj.insert(k.clone(), val.clone());
        }
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Fully resolved configuration for one command.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub preset: String,
    pub model: ModelConfig,
    pub post_train: TrainConfig,
    pub fine_tune: TrainConfig,
}

pub fn resolve(file: &RunConfig, flags: &Overrides) -> Result<Resolved> {
    let name = flags.preset.as_deref().or(file.preset.as_deref()).unwrap_or(DEFAULT_PRESET);
    let Preset { model, post_train, fine_tune, .. } = preset(name)?;
    let resolved = Resolved {
        preset: name.to_string(),
        model: overlay(&model, &[&file.model, &flags.model], "model")?,
        post_train: overlay(&post_train, &[&file.post_train, &flags.post_train], "post_train")?,
        fine_tune: overlay(&fine_tune, &[&file.fine_tune, &flags.fine_tune], "fine_tune")?,
    };
    resolved.model.validate()?;
    resolved.post_train.validate()?;
    resolved.fine_tune.validate()?;
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn precedence_flag_file_preset_default() {
        let file: RunConfig = serde_json::from_value(json!({
            "preset": "ecommerce-style",
            "post_train": {"max_steps": 7, "batch_size": 5}
        }))
        .unwrap();
        let mut flags = Overrides::default();
        set(&mut flags.post_train, "max_steps", Some(3usize));
        let r = resolve(&file, &flags).unwrap();
        assert_eq!(r.post_train.max_steps, 3);
        assert_eq!(r.post_train.batch_size, 5);
        assert_eq!(r.post_train.dec_mask_rate, 0.45);
        assert_eq!(r.post_train.beta2, 0.999);

        flags.preset = Some("ubuntu-style".into());
        let r = resolve(&file, &flags).unwrap();
        assert_eq!((r.post_train.dec_mask_rate, r.model.n_dec_layers), (0.75, 1));

        let r = resolve(&RunConfig::default(), &Overrides::default()).unwrap();
        assert_eq!(r.preset, "desk");
        assert_eq!(r.post_train.max_steps, 2000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_value::<RunConfig>(json!({"bogus": 1})).is_err());
        let file: RunConfig = serde_json::from_value(json!({"model": {"hiden_dim": 8}})).unwrap();
        assert!(matches!(resolve(&file, &Overrides::default()), Err(Error::Config(_))));
    }
}
