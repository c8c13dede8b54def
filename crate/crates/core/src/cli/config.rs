//! The run configuration: a single JSON document with one section per
//! workflow, plus `key.path=value` overrides from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::anatomy::{GlmSpec, ScoreName};
use crate::corruption::NoiseSchedule;
use crate::error::{Error, Result};
use crate::folds::DEFAULT_ATLAS_THRESHOLD;
use crate::harness::{Pairing, SegmenterHandle, SweepSchedule};
use crate::metrics::MetricParams;
use crate::morphology::EmbeddingParams;
use crate::synth::PhantomSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    pub synth: Option<SynthConfig>,
    pub folds: Option<FoldsConfig>,
    #[serde(default)]
    pub metrics: MetricParams,
    pub anatomy: Option<AnatomyConfig>,
    pub morphology: Option<MorphologyConfig>,
    pub noise: Option<NoiseConfig>,
    pub harness: Option<HarnessConfig>,
    /// Output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_pos: usize,
    pub n_ctrl: usize,
    pub seed: u64,
    /// Phantom parameters; the seed comes from `synth.seed`.
    #[serde(default)]
    pub phantom: PhantomSpec,
}

impl SynthConfig {
    pub fn spec(&self) -> PhantomSpec {
        PhantomSpec {
            seed: self.seed,
            ..self.phantom.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldsConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_fold_perms")]
    pub n_perm: usize,
    pub seed: u64,
    /// Archetype maps; when given, lesion phenotypes are reassigned from the labels.
    #[serde(default)]
    pub atlas: Vec<PathBuf>,
    #[serde(default = "default_atlas_threshold")]
    pub threshold: f64,
    /// Existing fold plan used by `score` instead of searching a new one.
    #[serde(default)]
    pub plan: Option<PathBuf>,
}

fn default_k() -> usize {
    5
}

fn default_fold_perms() -> usize {
    50_000
}

fn default_atlas_threshold() -> f64 {
    DEFAULT_ATLAS_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnatomyConfig {
    /// Model whose scores label the lesions; optional with a single model.
    #[serde(default)]
    pub model: Option<String>,
    /// Metric rows from a previous `score` run; recomputed when absent.
    #[serde(default)]
    pub metric_rows: Option<PathBuf>,
    #[serde(default = "default_score")]
    pub score: ScoreName,
    #[serde(default)]
    pub include_volume_covariate: bool,
    #[serde(default = "default_fwhm")]
    pub fwhm_mm: f64,
    #[serde(default = "default_glm_perms")]
    pub n_perm: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mask_m")]
    pub mask_min_subjects: usize,
    pub seed: u64,
}

fn default_score() -> ScoreName {
    ScoreName::Dice
}

fn default_fwhm() -> f64 {
    8.0
}

fn default_glm_perms() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

fn default_mask_m() -> usize {
    2
}

impl AnatomyConfig {
    pub fn glm(&self) -> GlmSpec {
        GlmSpec {
            score: self.score,
            include_volume_covariate: self.include_volume_covariate,
            fwhm_mm: self.fwhm_mm,
            n_perm: self.n_perm,
            alpha: self.alpha,
            mask_min_subjects: self.mask_min_subjects,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphologyConfig {
    #[serde(default = "default_neighbours")]
    pub k: usize,
    #[serde(default = "default_min_dist")]
    pub d_min: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_negative_rate")]
    pub negative_sample_rate: usize,
    /// Block size of the mean-pool applied to masks before embedding.
    #[serde(default = "default_downsample")]
    pub downsample: usize,
    pub seed: u64,
}

fn default_neighbours() -> usize {
    15
}

fn default_min_dist() -> f64 {
    0.1
}

fn default_epochs() -> usize {
    200
}

fn default_negative_rate() -> usize {
    5
}

fn default_downsample() -> usize {
    2
}

impl MorphologyConfig {
    pub fn params(&self) -> EmbeddingParams {
        EmbeddingParams {
            n_neighbors: self.k,
            min_dist: self.d_min,
            n_epochs: self.epochs,
            negative_sample_rate: self.negative_sample_rate,
            seed: self.seed,
        }
    }
}

/// A sweep schedule: either one noise kind or a named combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleEntry {
    Single(NoiseSchedule),
    Combined(SweepSchedule),
}

impl ScheduleEntry {
    pub fn schedule(&self) -> SweepSchedule {
        match self {
            ScheduleEntry::Single(s) => SweepSchedule::single(s.clone()),
            ScheduleEntry::Combined(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub schedules: Vec<ScheduleEntry>,
    pub seed: u64,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub models: BTreeMap<String, SegmenterHandle>,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_boot_size")]
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_n_boot() -> usize {
    10_000
}

fn default_boot_size() -> usize {
    100
}

/// A parsed configuration with the effective JSON it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Effective document after overrides.
    pub effective: Value,
    /// Hex SHA-256 of the compact effective document (keys sorted).
    pub sha256: String,
    /// Directory against which relative paths resolve.
    pub base_dir: PathBuf,
}

fn config_error(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(assignment, "override must look like key.path=value"))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(key, "empty path segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_error(&parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one part")
}

/// Parses and validates a configuration document.
pub fn parse_config(
    mut doc: Value,
    overrides: &[String],
    base_dir: PathBuf,
) -> Result<LoadedConfig> {
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if doc.pointer("/synth/phantom/seed").is_some() {
        return Err(config_error(
            "synth.phantom.seed",
            "set the phantom seed as synth.seed",
        ));
    }
    let config: RunConfig = serde_path_to_error::deserialize(doc.clone()).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." {
            "config".to_string()
        } else {
            path
        };
        config_error(&key, e.into_inner())
    })?;
    config.validate()?;
    let sha256 = Sha256::digest(serde_json::to_vec(&doc)?)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(LoadedConfig {
        config,
        effective: doc,
        sha256,
        base_dir,
    })
}

/// Reads `path` and applies `overrides`; relative paths in the document
/// resolve against the file's directory.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    parse_config(doc, overrides, base)
}

fn section(key: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) | Error::Config(m) => config_error(key, m),
        other => other,
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        section("metrics", self.metrics.validate())?;
        if let Some(s) = &self.synth {
            section("synth.phantom", s.spec().validate())?;
        }
        if let Some(f) = &self.folds {
            if f.k < 2 {
                return Err(config_error("folds.k", "must be at least 2"));
            }
            if f.n_perm < 1 {
                return Err(config_error("folds.n_perm", "must be positive"));
            }
        }
        if let Some(a) = &self.anatomy {
            section("anatomy", a.glm().validate())?;
        }
        if let Some(m) = &self.morphology {
            section("morphology", m.params().validate())?;
            if m.downsample < 1 {
                return Err(config_error("morphology.downsample", "must be at least 1"));
            }
        }
        if let Some(n) = &self.noise {
            if n.schedules.is_empty() {
                return Err(config_error(
                    "noise.schedules",
                    "at least one schedule required",
                ));
            }
            for (i, s) in n.schedules.iter().enumerate() {
                section(&format!("noise.schedules[{i}]"), s.schedule().validate())?;
            }
            if !(n.alpha > 0.0 && n.alpha < 1.0) {
                return Err(config_error("noise.alpha", "must lie in (0, 1)"));
            }
        }
        if let Some(h) = &self.harness {
            if h.models.is_empty() {
                return Err(config_error(
                    "harness.models",
                    "at least one model required",
                ));
            }
            if h.n_boot < 1 || h.size < 1 {
                return Err(config_error("harness", "n_boot and size must be positive"));
            }
            if h.workers == Some(0) {
                return Err(config_error("harness.workers", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Every seed in the document, keyed by its config path.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        let mut put = |k: &str, v: Option<u64>| {
            if let Some(v) = v {
                out.insert(k.to_string(), v);
            }
        };
        put("synth.seed", self.synth.as_ref().map(|s| s.seed));
        put("folds.seed", self.folds.as_ref().map(|s| s.seed));
        put("anatomy.seed", self.anatomy.as_ref().map(|s| s.seed));
        put("morphology.seed", self.morphology.as_ref().map(|s| s.seed));
        put("noise.seed", self.noise.as_ref().map(|s| s.seed));
        put("harness.seed", self.harness.as_ref().map(|s| s.seed));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn parse(doc: Value) -> Result<LoadedConfig> {
        parse_config(doc, &[], PathBuf::from("."))
    }

    #[test]
    fn minimal_config_parses() {
        let c = parse(json!({"synth": {"n_pos": 2, "n_ctrl": 1, "seed": 4}})).unwrap();
        let s = c.config.synth.unwrap();
        assert_eq!(s.spec().seed, 4);
        assert_eq!(s.spec().dims, [48, 48, 48]);
        assert_eq!(c.config.metrics, MetricParams::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse(json!({"folds": {"seed": 1, "kk": 3}})).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("folds") && msg.contains("kk"), "{msg}");

        let err = parse(json!({"bogus": 1})).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn seeds_must_be_explicit() {
        let err = parse(json!({"folds": {"k": 5}})).unwrap_err().to_string();
        assert!(err.contains("folds") && err.contains("seed"), "{err}");
        let err =
            parse(json!({"synth": {"n_pos": 1, "n_ctrl": 0, "seed": 1, "phantom": {"seed": 2}}}))
                .unwrap_err()
                .to_string();
        assert!(err.contains("synth.phantom.seed"), "{err}");
    }

    #[test]
    fn overrides_set_nested_values() {
        let mut doc = json!({"folds": {"seed": 1}});
        apply_override(&mut doc, "folds.k=7").unwrap();
        apply_override(&mut doc, "output=runs/a").unwrap();
        apply_override(&mut doc, "metrics.gamma=0").unwrap();
        assert_eq!(doc["folds"]["k"], json!(7));
        assert_eq!(doc["output"], json!("runs/a"));
        let c = parse(doc).unwrap();
        assert_eq!(c.config.folds.unwrap().k, 7);
        assert_eq!(c.config.metrics.gamma, 0.0);

        let mut doc = json!({"folds": 3});
        assert!(apply_override(&mut doc, "folds.k=7").is_err());
        assert!(apply_override(&mut doc, "nothing").is_err());
    }

    #[test]
    fn invalid_values_name_their_section() {
        let err = parse(json!({"metrics": {"threshold": 2.0}})).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("metrics"));
        let err = parse(json!({"harness": {"models": {}, "seed": 0}})).unwrap_err();
        assert!(err.to_string().contains("harness.models"));
    }

    #[test]
    fn schedules_accept_single_and_combined_forms() {
        let c = parse(json!({"noise": {"seed": 3, "schedules": [
            {"kind": "rician", "n_steps": 12, "max_magnitude": 0.3},
            {"name": "allnoises", "components": [
                {"kind": "gibbs", "n_steps": 12, "max_magnitude": 0.5},
                {"kind": "bias", "n_steps": 12, "max_magnitude": 0.5}
            ]}
        ]}}))
        .unwrap();
        let n = c.config.noise.unwrap();
        assert_eq!(n.schedules[0].schedule().name, "rician");
        assert_eq!(n.schedules[1].schedule().components.len(), 2);
        assert_eq!(n.pairing, Pairing::IncrementMeans);
    }

    #[test]
    fn hash_depends_on_effective_document() {
        let a = parse(json!({"folds": {"seed": 1}})).unwrap();
        let b = parse_config(
            json!({"folds": {"seed": 1}}),
            &["folds.seed=2".into()],
            ".".into(),
        )
        .unwrap();
        let c = parse(json!({"folds": {"seed": 1}})).unwrap();
        assert_ne!(a.sha256, b.sha256);
        assert_eq!(a.sha256, c.sha256);
        assert_eq!(a.sha256.len(), 64);
    }
}
