//! Run configuration: defaults, then the JSON file, then `--seed`, then
//! `--set key=value` overrides.

use std::path::Path;

use inpaint_core::completion::CompletionConfig;
use inpaint_core::data::{FaceRanges, MaskKind, MixtureSpec};
use inpaint_core::enhance::EnhanceConfig;
use inpaint_core::metrics::SsimParams;
use inpaint_core::models::ArchPreset;
use inpaint_core::wgan::WganConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Faces,
    Mixture2d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n: usize,
    pub side: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub faces: FaceRanges,
    pub mixture: MixtureSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Faces,
            n: 2200,
            side: 16,
            train_fraction: 10.0 / 11.0,
            seed: 0,
            faces: FaceRanges::default(),
            mixture: MixtureSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub image_generator: ArchPreset,
    pub image_critic: ArchPreset,
    pub toy_generator: ArchPreset,
    pub toy_critic: ArchPreset,
    pub enhancer: ArchPreset,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            image_generator: ArchPreset::gen_img(),
            image_critic: ArchPreset::critic_img(),
            toy_generator: ArchPreset::gen_mlp2d(),
            toy_critic: ArchPreset::critic_mlp2d(),
            enhancer: ArchPreset::enhancer(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub models: ModelsConfig,
    pub wgan: WganConfig,
    pub completion: CompletionConfig,
    pub enhance: EnhanceConfig,
    pub mask: MaskKind,
    pub ssim: SsimParams,
}

/// Config sections that carry their own `seed`.
const SEEDED: [&str; 4] = ["data", "wgan", "completion", "enhance"];

fn set_all_seeds(v: &mut Value, seed: u64) {
    v["seed"] = seed.into();
    for section in SEEDED {
        v[section]["seed"] = seed.into();
    }
}

/// Tag fields of internally tagged enums; a different tag replaces the
/// whole object instead of merging into it.
const TAGS: [&str; 2] = ["kind", "name"];

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            let retag = TAGS
                .iter()
                .any(|t| matches!((d.get(*t), s.get(*t)), (Some(a), Some(b)) if a != b));
            if retag {
                *d = s;
                return;
            }
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override. Every path segment must exist.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj: &mut Map<String, Value> = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("unknown config key `{key}`")))?;
        let next = obj
            .get_mut(*part)
            .ok_or_else(|| CliError::Config(format!("unknown config key `{key}`")))?;
        if i + 1 == parts.len() {
            let mut v = parse_value(raw);
            if next.is_object() && v.is_object() {
                let mut merged = next.clone();
                merge(&mut merged, v);
                v = merged;
            }
            *next = v;
            return Ok(());
        }
        node = next;
    }
    unreachable!("split yields at least one part")
}

fn decode(v: Value) -> Result<RunConfig, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))
}

/// Resolves the configuration. `seed` is the `--seed` flag.
pub fn parse_config(path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
        }
        // validate the file alone so unknown keys are reported as written
        decode(file.clone())?;
        if let Some(s) = file.get("seed").and_then(Value::as_u64) {
            set_all_seeds(&mut value, s);
        }
        merge(&mut value, file);
    }
    if let Some(s) = seed {
        set_all_seeds(&mut value, s);
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg = decode(value)?;
    cfg.wgan.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.completion.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}
