use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{ensure, Error, Result};
use crate::nifti::{self, Datatype};
use crate::volume::{normalize_intensity, BinaryMask, GridVolume, ProbabilityMap};

/// Anything that turns an image into a voxel-wise lesion probability map.
pub trait Segmenter: Send + Sync {
    fn segment(&self, study_id: &str, image: &GridVolume) -> Result<ProbabilityMap>;
}

/// Reference segmenter: `p = clamp((normalize(image) - threshold) / softness, 0, 1)`.
///
/// With a region attached, voxels inside the region use `region_threshold`
/// instead, which makes a segmenter that is deliberately worse in one part
/// of the brain.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSegmenter {
    pub threshold: f64,
    pub softness: f64,
    pub region: Option<(BinaryMask, f64)>,
}

impl ThresholdSegmenter {
    pub fn new(threshold: f64, softness: f64) -> Result<Self> {
        ensure!(
            threshold.is_finite(),
            InvalidArgument,
            "segmenter threshold must be finite"
        );
        ensure!(
            softness > 0.0,
            InvalidArgument,
            "segmenter softness must be > 0, got {softness}"
        );
        Ok(Self {
            threshold,
            softness,
            region: None,
        })
    }

    pub fn with_region(mut self, region: BinaryMask, threshold: f64) -> Result<Self> {
        ensure!(
            threshold.is_finite(),
            InvalidArgument,
            "region threshold must be finite"
        );
        self.region = Some((region, threshold));
        Ok(self)
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&self, _study_id: &str, image: &GridVolume) -> Result<ProbabilityMap> {
        if let Some((region, _)) = &self.region {
            region.volume().check_same_grid(image)?;
        }
        let norm = normalize_intensity(image);
        let data = norm
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let theta = match &self.region {
                    Some((r, t)) if r.contains(idx) => *t,
                    _ => self.threshold,
                };
                ((v - theta) / self.softness).clamp(0.0, 1.0)
            })
            .collect();
        ProbabilityMap::new(GridVolume::new(image.dims(), image.spacing(), data)?)
    }
}

/// Runs a shell command template with `{input}` and `{output}` replaced by
/// absolute NIfTI paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSegmenter {
    pub template: String,
    pub timeout: Duration,
    pub workdir: Option<PathBuf>,
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

impl ExternalSegmenter {
    pub fn new(
        template: impl Into<String>,
        timeout_secs: f64,
        workdir: Option<PathBuf>,
    ) -> Result<Self> {
        let template = template.into();
        for ph in ["{input}", "{output}"] {
            let n = template.matches(ph).count();
            ensure!(
                n == 1,
                Config,
                "segmenter command must contain {ph} exactly once, found {n}"
            );
        }
        ensure!(
            timeout_secs > 0.0 && timeout_secs.is_finite(),
            Config,
            "segmenter timeout must be > 0, got {timeout_secs}"
        );
        Ok(Self {
            template,
            timeout: Duration::from_secs_f64(timeout_secs),
            workdir,
        })
    }

    pub fn command_line(&self, input: &Path, output: &Path) -> String {
        self.template
            .replace("{input}", &shell_quote(input))
            .replace("{output}", &shell_quote(output))
    }
}

fn tail(path: &Path) -> String {
    let s = std::fs::read_to_string(path).unwrap_or_default();
    let lines: Vec<&str> = s.lines().collect();
    lines[lines.len().saturating_sub(5)..].join("\n")
}

impl Segmenter for ExternalSegmenter {
    fn segment(&self, study_id: &str, image: &GridVolume) -> Result<ProbabilityMap> {
        let tmp = tempfile::Builder::new()
            .prefix("lesioncal-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = tmp.path().join("input.nii");
        let output = tmp.path().join("output.nii");
        let log = tmp.path().join("stderr.log");
        nifti::write_volume(image, &input, Datatype::Float32)?;

        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(self.command_line(&input, &output));
        if let Some(dir) = &self.workdir {
            cmd.current_dir(dir);
        }
        let stderr = File::create(&log).map_err(|e| Error::io(&log, e))?;
        let mut child = cmd
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()
            .map_err(|e| Error::Segmenter(format!("cannot start `{}`: {e}", self.template)))?;
        let status = match child
            .wait_timeout(self.timeout)
            .map_err(|e| Error::Segmenter(format!("waiting for segmenter: {e}")))?
        {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Segmenter(format!(
                    "timed out after {:.1}s on study {study_id}",
                    self.timeout.as_secs_f64()
                )));
            }
        };
        if !status.success() {
            let code = status
                .code()
                .map_or("signal".to_string(), |c| c.to_string());
            return Err(Error::Segmenter(format!(
                "exit code {code} on study {study_id}: {}",
                tail(&log)
            )));
        }
        let (out, _) = nifti::read_volume(&output)?;
        out.check_same_grid(image)?;
        ProbabilityMap::new(out).map_err(|_| {
            Error::Segmenter(format!(
                "output for study {study_id} has values outside [0, 1]"
            ))
        })
    }
}

/// Reads precomputed maps from `{dir}/{study_id}.nii.gz` (or `.nii`).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDir {
    pub dir: PathBuf,
}

impl PredictionDir {
    pub fn path_for(&self, study_id: &str) -> Option<PathBuf> {
        ["nii.gz", "nii"]
            .iter()
            .map(|ext| self.dir.join(format!("{study_id}.{ext}")))
            .find(|p| p.exists())
    }
}

impl Segmenter for PredictionDir {
    fn segment(&self, study_id: &str, image: &GridVolume) -> Result<ProbabilityMap> {
        let path = self.path_for(study_id).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no prediction for study {study_id} in {}",
                self.dir.display()
            ))
        })?;
        let (v, _) = nifti::read_volume(&path)?;
        v.check_same_grid(image)?;
        ProbabilityMap::new(v)
    }
}

/// Region in which a builtin segmenter uses a different threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    /// NIfTI map; the region is `map >= level`.
    pub map: PathBuf,
    pub level: f64,
    pub threshold: f64,
}

/// Serializable segmenter description used in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterHandle {
    Builtin {
        threshold: f64,
        softness: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        region: Option<RegionSpec>,
    },
    External {
        command: String,
        timeout_secs: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        workdir: Option<PathBuf>,
    },
    Predictions {
        dir: PathBuf,
    },
}

impl SegmenterHandle {
    pub fn builtin(threshold: f64, softness: f64) -> Self {
        SegmenterHandle::Builtin {
            threshold,
            softness,
            region: None,
        }
    }

    /// Relative paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Box<dyn Segmenter>> {
        Ok(match self {
            SegmenterHandle::Builtin {
                threshold,
                softness,
                region,
            } => {
                let seg = ThresholdSegmenter::new(*threshold, *softness)?;
                match region {
                    None => Box::new(seg),
                    Some(r) => {
                        let (map, _) = nifti::read_volume(base.join(&r.map))?;
                        Box::new(seg.with_region(
                            BinaryMask::threshold_at_least(&map, r.level),
                            r.threshold,
                        )?)
                    }
                }
            }
            SegmenterHandle::External {
                command,
                timeout_secs,
                workdir,
            } => Box::new(ExternalSegmenter::new(
                command.clone(),
                *timeout_secs,
                workdir.as_ref().map(|w| base.join(w)),
            )?),
            SegmenterHandle::Predictions { dir } => Box::new(PredictionDir {
                dir: base.join(dir),
            }),
        })
    }
}

/// Runs a segmenter, attaching the study id to any failure.
pub fn run_segmenter(
    seg: &dyn Segmenter,
    study_id: &str,
    image: &GridVolume,
) -> Result<ProbabilityMap> {
    seg.segment(study_id, image)
        .map_err(|e| e.for_study(study_id))
}
