//! Run configuration: one TOML (or JSON) file with sections for the
//! generator, learner, classifier, loss weights, and trainer, plus dotted
//! `key=value` overrides. Unknown keys are hard errors so hyperparameter
//! typos never pass silently.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::objective::LossWeights;
use crate::synth::SyntheticSpec;
use crate::trainer::TrainConfig;

/// Every knob of a run. Section defaults follow the reference protocol;
/// a config file only needs the keys it wants to change.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, overrides both `synth.seed` and `train.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Default dataset directory (CLI arguments take precedence).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
    /// Default output directory (CLI arguments take precedence).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub synth: SyntheticSpec,
    pub learner: LearnerConfig,
    pub classifier: ClassifierConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Validate every section.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.learner.validate()?;
        self.classifier.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    /// Apply the shared seed to the sections that consume one.
    fn finalize(&mut self) {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
            self.train.seed = seed;
        }
    }

    /// Pretty JSON of the effective configuration; loadable back via
    /// [`load_config`].
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialization failed: {e}")))
    }
}

/// Parse an override value: anything TOML accepts on the right-hand side of
/// an assignment (numbers, booleans, arrays, quoted strings); bare words
/// fall back to strings.
fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Set a dotted key in the document, creating intermediate sections. Typos
/// surface later when the document is checked against the schema.
fn apply_override(doc: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override {key:?}: empty key segment")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::config(format!("override {key:?}: {part:?} is not a section"))
        })?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("override {key:?}: target is not a section")))?;
    table.insert(parts.last().unwrap().to_string(), parse_override_value(raw));
    Ok(())
}

fn parse_document(path: &Path) -> Result<toml::Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read config {}", path.display()), e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "toml" => toml::from_str(&text)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string())),
        "json" => serde_json::from_str(&text)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string())),
        other => Err(Error::config(format!(
            "config {}: unsupported extension {other:?} (use .toml or .json)",
            path.display()
        ))),
    }
}

/// Finish loading a config document: apply `key=value` overrides in order,
/// reject unknown keys, validate, and propagate the shared seed.
pub fn config_from_value(
    mut doc: toml::Value,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    for (key, value) in overrides {
        apply_override(&mut doc, key, value)?;
    }
    let mut config: RunConfig =
        doc.try_into().map_err(|e| Error::config(format!("config: {e}")))?;
    config.finalize();
    config.validate()?;
    Ok(config)
}

/// Load a config file (or the defaults when `path` is `None`) and finish it
/// via [`config_from_value`].
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let doc = match path {
        Some(p) => parse_document(p)?,
        None => toml::Value::try_from(RunConfig::default())
            .map_err(|e| Error::config(format!("default config: {e}")))?,
    };
    config_from_value(doc, overrides)
}

/// Split a `--set KEY=VALUE` argument at the first equals sign.
pub fn parse_set_flag(arg: &str) -> Result<(String, String)> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config(format!("--set {arg:?}: expected KEY=VALUE"))),
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_load_and_validate() {
        let config = load_config(None, &[]).unwrap();
        assert_eq!(config.train.batch_size, 20);
        assert_eq!(config.learner.window, 50);
        assert_eq!(config.learner.kernel_lens, vec![4, 8, 16]);
        assert_eq!(config.classifier.hidden_dim, 64);
        assert!(config.seed.is_none());
    }

    #[test]
    fn overrides_reach_every_section() {
        let config = load_config(
            None,
            &set(&[
                ("train.batch_size", "5"),
                ("train.crop_len", "100"),
                ("learner.window", "20"),
                ("learner.kernel_lens", "[2, 3]"),
                ("learner.use_sparsity", "false"),
                ("loss.lambda_sp", "0.0"),
                ("synth.density", "0.3"),
                ("classifier.bottleneck", "0.25"),
                ("train.split", "[0.6, 0.2, 0.2]"),
            ]),
        )
        .unwrap();
        assert_eq!(config.train.batch_size, 5);
        assert_eq!(config.train.crop_len, Some(100));
        assert_eq!(config.learner.window, 20);
        assert_eq!(config.learner.kernel_lens, vec![2, 3]);
        assert!(!config.learner.use_sparsity);
        assert_eq!(config.loss.lambda_sp, 0.0);
        assert_eq!(config.synth.density, 0.3);
        assert_eq!(config.classifier.bottleneck, 0.25);
        assert_eq!(config.train.split, [0.6, 0.2, 0.2]);
    }

    #[test]
    fn shared_seed_propagates() {
        let config = load_config(None, &set(&[("seed", "9")])).unwrap();
        assert_eq!(config.seed, Some(9));
        assert_eq!(config.synth.seed, 9);
        assert_eq!(config.train.seed, 9);
        // Section-level seeds stay independent without the shared key.
        let config = load_config(None, &set(&[("synth.seed", "4")])).unwrap();
        assert_eq!(config.synth.seed, 4);
        assert_eq!(config.train.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_config(None, &set(&[("train.batch_sze", "5")])).err().unwrap();
        assert!(err.to_string().contains("batch_sze"), "got: {err}");
        let err = load_config(None, &set(&[("trian.batch_size", "5")])).err().unwrap();
        assert!(err.to_string().contains("trian"), "got: {err}");
    }

    #[test]
    fn bad_values_fail_loudly() {
        assert!(load_config(None, &set(&[("train.batch_size", "many")])).is_err());
        assert!(load_config(None, &set(&[("train.batch_size", "0")])).is_err(), "validated");
        assert!(load_config(None, &set(&[("synth.density", "2.0")])).is_err());
        assert!(parse_set_flag("no_equals_here").is_err());
        assert!(parse_set_flag("=5").is_err());
        assert_eq!(
            parse_set_flag("train.batch_size=5").unwrap(),
            ("train.batch_size".to_string(), "5".to_string())
        );
    }

    #[test]
    fn toml_files_load_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "seed = 3\n[learner]\nwindow = 30\nstride = 1\n[train]\nbatch_size = 10\n",
        )
        .unwrap();
        let config = load_config(Some(&path), &[]).unwrap();
        assert_eq!(config.learner.window, 30);
        assert_eq!(config.learner.stride, 1);
        assert_eq!(config.train.batch_size, 10);
        assert_eq!(config.train.seed, 3, "shared seed from the file propagates");
        // Overrides still apply on top of a file.
        let config = load_config(Some(&path), &set(&[("train.batch_size", "7")])).unwrap();
        assert_eq!(config.train.batch_size, 7);

        let bad = dir.path().join("run.yaml");
        fs::write(&bad, "x: 1\n").unwrap();
        assert!(load_config(Some(&bad), &[]).err().unwrap().to_string().contains("extension"));
    }

    #[test]
    fn json_echo_reproduces_the_config() {
        let original = load_config(
            None,
            &set(&[("seed", "11"), ("train.crop_len", "90"), ("learner.embed_dim", "32")]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, original.to_json().unwrap()).unwrap();
        let reloaded = load_config(Some(&path), &[]).unwrap();
        assert_eq!(original.to_json().unwrap(), reloaded.to_json().unwrap());
        assert_eq!(reloaded.train.crop_len, Some(90));
        assert_eq!(reloaded.train.seed, 11);
    }
}
