//! `key = value` configuration files with `[section]` headers, and overlays
//! of string values onto typed settings.
//!
//! Keys before the first header belong to `general`. Lines starting with `#`
//! or `;` are comments. Dashes in keys are read as underscores.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use bintrans_core::embed::EmbedTrainConfig;
use bintrans_core::pipeline::{ToyConfig, TOY_SVM_LAMBDA};
use bintrans_core::toyoracle::TwinSpec;
use bintrans_core::{OversampleConfig, SelfLearnConfig, TrainSchedule};

use crate::CliError;

/// Parsed file: section → ordered `(key, value)` entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    pub sections: BTreeMap<String, Vec<(String, String)>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut ini = Ini::default();
        let mut section = "general".to_string();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("config line {}: unterminated section header", no + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", no + 1)))?;
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(CliError::Config(format!("config line {}: empty key", no + 1)));
            }
            ini.sections.entry(section.clone()).or_default().push((key, v.trim().to_string()));
        }
        Ok(ini)
    }

    pub fn push(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections.entry(section.to_string()).or_default().push((normalize_key(key), value.into()));
    }

    /// Adds a `section.key=value` override.
    pub fn push_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not `section.key=value`")))?;
        let (section, key) = path.split_once('.').unwrap_or(("general", path));
        self.push(section.trim(), key, value.trim());
        Ok(())
    }

    /// Appends `other`'s entries after this file's, so they win.
    pub fn extend(&mut self, other: Ini) {
        for (s, entries) in other.sections {
            self.sections.entry(s).or_default().extend(entries);
        }
    }

    pub fn section(&self, name: &str) -> &[(String, String)] {
        self.sections.get(name).map_or(&[], Vec::as_slice)
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

/// Parses `text` into the JSON type of `like`.
fn parse_like(like: &Value, text: &str) -> Option<Value> {
    match like {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().ok().map(Value::from),
        Value::Number(n) if n.is_i64() => text.parse::<i64>().ok().map(Value::from),
        Value::Number(_) => text.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::from),
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Array(items) => text
            .split(',')
            .enumerate()
            .map(|(i, part)| parse_like(items.get(i).or(items.first()).unwrap_or(&Value::Null), part.trim()))
            .collect::<Option<Vec<_>>>()
            .map(Value::Array),
        Value::Null => text
            .parse::<u64>()
            .map(Value::from)
            .or_else(|_| text.parse::<f64>().map(Value::from))
            .ok()
            .or_else(|| Some(Value::String(text.to_string()))),
        Value::Object(_) => None,
    }
}

/// Applies `entries` to `target`, one key at a time, naming the offending
/// `section.key` on failure.
pub fn overlay<T: Serialize + DeserializeOwned>(target: &mut T, section: &str, entries: &[(String, String)]) -> Result<(), CliError> {
    for (key, text) in entries {
        let field = format!("{section}.{key}");
        let mut obj: Map<String, Value> = match serde_json::to_value(&*target) {
            Ok(Value::Object(m)) => m,
            _ => return Err(CliError::Config(format!("section `{section}` cannot be configured"))),
        };
        let like = obj.get(key).ok_or_else(|| CliError::Config(format!("unknown configuration key `{field}`")))?;
        let value = parse_like(like, text).ok_or_else(|| CliError::Config(format!("invalid value `{text}` for `{field}`")))?;
        obj.insert(key.clone(), value);
        *target = serde_json::from_value(Value::Object(obj))
            .map_err(|e| CliError::Config(format!("invalid value `{text}` for `{field}`: {e}")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XlateSettings {
    #[serde(flatten)]
    pub schedule: TrainSchedule,
    pub beam: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnSettings {
    #[serde(flatten)]
    pub oversample: OversampleConfig,
    pub lambda: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuncsimSettings {
    /// `raw` or `normalized`.
    pub tf: String,
    /// `best`, `fixed:<t>` or `validation:<fraction>`.
    pub threshold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSettings {
    #[serde(flatten)]
    pub train: EmbedTrainConfig,
    pub min_count: u64,
}

/// Every tunable of every stage, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub toy: TwinSpec,
    pub embed: EmbedSettings,
    pub map: SelfLearnConfig,
    pub xlate: XlateSettings,
    pub vuln: VulnSettings,
    pub funcsim: FuncsimSettings,
}

impl Settings {
    /// Full-scale defaults.
    pub fn standard() -> Self {
        Settings {
            seed: 1,
            toy: TwinSpec::default(),
            embed: EmbedSettings { train: EmbedTrainConfig::default(), min_count: 1 },
            map: SelfLearnConfig::default(),
            xlate: XlateSettings { schedule: TrainSchedule::default(), beam: 1, seed: 1 },
            vuln: VulnSettings { oversample: OversampleConfig::default(), lambda: 1e-4, epochs: 50 },
            funcsim: FuncsimSettings { tf: "raw".into(), threshold: "validation:0.3".into() },
        }
    }

    /// Desk-scale defaults used by the synthetic demo.
    pub fn toy() -> Self {
        let t = ToyConfig::default();
        Settings {
            toy: t.twin,
            embed: EmbedSettings { train: t.embed, min_count: 1 },
            map: t.map,
            xlate: XlateSettings { schedule: t.schedule, beam: t.beam, seed: t.seed },
            vuln: VulnSettings { oversample: OversampleConfig::default(), lambda: TOY_SVM_LAMBDA, epochs: 50 },
            ..Settings::standard()
        }
    }

    /// Layers `seed` onto every stage, then the configuration entries.
    pub fn resolve(mut self, ini: &Ini, seed_flag: Option<u64>) -> Result<Self, CliError> {
        let mut seed = self.seed;
        for (k, v) in ini.section("general") {
            match k.as_str() {
                "seed" => seed = v.parse().map_err(|_| CliError::Config(format!("invalid value `{v}` for `general.seed`")))?,
                _ => return Err(CliError::Config(format!("unknown configuration key `general.{k}`"))),
            }
        }
        if let Some(s) = seed_flag {
            seed = s;
        }
        self.seed = seed;
        self.toy.seed = seed;
        self.embed.train.seed = seed;
        self.map.seed = seed;
        self.xlate.seed = seed;
        self.vuln.oversample.seed = seed;
        for name in ini.sections.keys() {
            let entries = ini.section(name);
            match name.as_str() {
                "general" => {}
                "toy" => overlay(&mut self.toy, name, entries)?,
                "embed" => overlay(&mut self.embed, name, entries)?,
                "map" => overlay(&mut self.map, name, entries)?,
                "xlate" => overlay(&mut self.xlate, name, entries)?,
                "vuln" => overlay(&mut self.vuln, name, entries)?,
                "funcsim" => overlay(&mut self.funcsim, name, entries)?,
                other => return Err(CliError::Config(format!("unknown configuration section `{other}`"))),
            }
        }
        self.toy.validate()?;
        self.embed.train.validate()?;
        self.map.validate()?;
        self.xlate.schedule.validate()?;
        self.vuln.oversample.validate()?;
        if self.embed.min_count == 0 {
            return Err(CliError::Config("`embed.min_count` must be at least 1".into()));
        }
        Ok(self)
    }
}
