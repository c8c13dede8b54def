use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    #[serde(rename = "unknown")]
    Unknown,
}

/// Archetype index of a lesion, or `None` for controls and unassignable masks.
///
/// Serialized as the bare index or the string `"none"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phenotype {
    Archetype(usize),
    None,
}

impl fmt::Display for Phenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phenotype::Archetype(i) => write!(f, "{i}"),
            Phenotype::None => f.write_str("none"),
        }
    }
}

impl Serialize for Phenotype {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Phenotype::Archetype(i) => s.serialize_u64(*i as u64),
            Phenotype::None => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for Phenotype {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Phenotype::Archetype(i)),
            Raw::Name(s) if s == "none" => Ok(Phenotype::None),
            Raw::Name(s) => s
                .parse()
                .map(Phenotype::Archetype)
                .map_err(|_| serde::de::Error::custom(format!("bad phenotype {s:?}"))),
        }
    }
}

/// One imaging study as listed in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRecord {
    pub id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<PathBuf>,
    /// Lesion voxel count.
    pub volume: usize,
    pub age: f64,
    pub sex: Sex,
    pub phenotype: Phenotype,
    pub is_control: bool,
}

impl StudyRecord {
    pub fn validate(&self) -> Result<()> {
        if self.is_control {
            ensure!(
                self.label_path.is_none() && self.phenotype == Phenotype::None,
                InvalidArgument,
                "control study {} must have no label and phenotype \"none\"",
                self.id
            );
        }
        ensure!(
            self.age.is_finite(),
            InvalidArgument,
            "study {} has non-finite age",
            self.id
        );
        Ok(())
    }
}

/// Reads a manifest, resolving relative paths against the manifest directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<StudyRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<StudyRecord> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for r in &mut records {
        r.validate()?;
        if r.image_path.is_relative() {
            r.image_path = base.join(&r.image_path);
        }
        if let Some(l) = r.label_path.as_mut() {
            if l.is_relative() {
                *l = base.join(&*l);
            }
        }
    }
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!(
            "duplicate study id {} in manifest",
            w[0]
        )));
    }
    Ok(records)
}

pub fn write_manifest(records: &[StudyRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(records)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
