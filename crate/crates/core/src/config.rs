//! Pipeline configuration. The file format is TOML, normally written as flat
//! dotted keys:
//!
//! ```toml
//! seed = 7
//! filter.min_view_angle = 1.5
//! forest.n_trees = 100
//! synth.n_rows = 256
//! ```
//!
//! Values are layered: built-in defaults, then the file, then environment
//! variables `CROPHEIGHT_<SECTION>__<KEY>` (for example
//! `CROPHEIGHT_FILTER__MAX_SLOPE=4`), then `--set key=value` pairs, then the
//! dedicated flags (`--seed`, `--workers`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cells::CellConfig;
use crate::error::{Error, Result};
use crate::eval::{TallCropSet, DEFAULT_GCVI_EDGES};
use crate::forest::RfConfig;
use crate::gedi::FilterConfig;
use crate::grid::GridSpec;
use crate::harmonics::HarmonicConfig;
use crate::height::{ReferenceSampling, SplitSpec};
use crate::synth::SceneConfig;

pub const ENV_PREFIX: &str = "CROPHEIGHT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeightConfig {
    pub forest: RfConfig,
    pub split: SplitSpec,
    pub sampling: ReferenceSampling,
    /// Scene used to train the shot height model.
    pub scene: SceneConfig,
}

impl Default for HeightConfig {
    fn default() -> Self {
        HeightConfig {
            forest: RfConfig::default(),
            split: SplitSpec::default(),
            sampling: ReferenceSampling::default(),
            scene: SceneConfig::height_training(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tall_crops: TallCropSet,
    pub top_k: usize,
    pub n_repeats: usize,
    /// Coarse aggregation cell, in fine pixels.
    pub aggregate_factor: usize,
    pub gcvi_edges: Vec<f64>,
    pub split: SplitSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tall_crops: TallCropSet::default(),
            top_k: 10,
            n_repeats: 5,
            aggregate_factor: 16,
            gcvi_edges: DEFAULT_GCVI_EDGES.to_vec(),
            split: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PipelineConfig {
    /// Root of all randomness; stage seeds are derived from it.
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub synth: SceneConfig,
    pub filter: FilterConfig,
    pub height: HeightConfig,
    pub harmonics: HarmonicConfig,
    /// Forest settings for the cell models and the local benchmark.
    pub forest: RfConfig,
    pub grid: GridSpec,
    pub cells: CellConfig,
    pub eval: EvalConfig,
}


/// Inserts `value` at a dotted `key` path, creating tables on the way.
fn insert(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

/// `CROPHEIGHT_FILTER__MAX_SLOPE` becomes `filter.max_slope`.
pub fn env_key(var: &str) -> Option<String> {
    var.strip_prefix(ENV_PREFIX)
        .filter(|k| !k.is_empty())
        .map(|k| k.to_lowercase().replace("__", "."))
}

pub struct ConfigSources<'a> {
    pub file_text: Option<&'a str>,
    pub env: Vec<(String, String)>,
    pub overrides: Vec<(String, toml::Value)>,
}

pub fn resolve(src: ConfigSources<'_>) -> Result<PipelineConfig> {
    let mut root: toml::Table = match src.file_text {
        Some(text) => text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
        None => toml::Table::new(),
    };
    for (var, raw) in &src.env {
        if let Some(k) = env_key(var) {
            insert(&mut root, &k, parse_value(raw))?;
        }
    }
    for (k, v) in src.overrides {
        insert(&mut root, &k, v)?;
    }
    let cfg: PipelineConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: Vec<(String, toml::Value)>) -> Result<PipelineConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let env = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    resolve(ConfigSources {
        file_text: text.as_deref(),
        env,
        overrides,
    })
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.height.scene.validate()?;
        self.filter.validate()?;
        self.harmonics.validate()?;
        self.grid.validate()?;
        self.cells.validate()?;
        if self.eval.top_k == 0 || self.eval.aggregate_factor == 0 {
            return Err(Error::Config("eval.top_k and eval.aggregate_factor must be positive".into()));
        }
        if self.eval.gcvi_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("eval.gcvi_edges must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_with(file: Option<&str>, env: &[(&str, &str)], sets: &[&str]) -> Result<PipelineConfig> {
        resolve(ConfigSources {
            file_text: file,
            env: env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            overrides: sets.iter().map(|s| parse_override(s).unwrap()).collect(),
        })
    }

    #[test]
    fn defaults_match_reference_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.filter.min_view_angle, 1.5);
        assert_eq!(c.filter.max_slope, 5.0);
        assert_eq!(c.filter.min_confidence, 0.8);
        assert_eq!(c.grid.cropland_gate, 0.05);
        assert_eq!(c.grid.tall_gate, 0.04);
        assert_eq!((c.harmonics.order, c.harmonics.omega), (3, 1.0));
        assert_eq!(c.cells.gcvi_flag_threshold, 4.0);
    }

    #[test]
    fn layering_order() {
        let file = "seed = 3\nfilter.max_slope = 4.0\n";
        let c = resolve_with(Some(file), &[], &[]).unwrap();
        assert_eq!((c.seed, c.filter.max_slope), (3, 4.0));
        let c = resolve_with(Some(file), &[("CROPHEIGHT_FILTER__MAX_SLOPE", "3.5")], &[]).unwrap();
        assert_eq!(c.filter.max_slope, 3.5);
        let c = resolve_with(
            Some(file),
            &[("CROPHEIGHT_FILTER__MAX_SLOPE", "3.5")],
            &["filter.max_slope=2.5", "synth.n_rows = 128"],
        )
        .unwrap();
        assert_eq!((c.filter.max_slope, c.synth.n_rows), (2.5, 128));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(resolve_with(Some("filter.bogus = 1"), &[], &[]).is_err());
        assert!(resolve_with(Some("filter.min_confidence = 2.0"), &[], &[]).is_err());
        assert!(resolve_with(Some("seed = "), &[], &[]).is_err());
        assert!(parse_override("no-equals").is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let c = PipelineConfig::default();
        let back = resolve_with(Some(&c.to_toml()), &[], &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = resolve_with(None, &[], &["seed=1"]).unwrap();
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn env_names() {
        assert_eq!(env_key("CROPHEIGHT_GRID__TALL_GATE").as_deref(), Some("grid.tall_gate"));
        assert_eq!(env_key("CROPHEIGHT_SEED").as_deref(), Some("seed"));
        assert_eq!(env_key("PATH"), None);
    }
}
