//! Anatomical calibration: lesion overlap maps, smoothed density stacks, a
//! voxel-wise GLM of density on a performance score with permutation
//! family-wise error control, and cluster reporting.

mod glm;

pub use glm::{fit_voxelwise_glm, permutation_fwe, FweResult, TMap};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::volume::{gaussian_smooth, BinaryMask, Dims, GridVolume};

/// Which per-subject score labels each lesion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreName {
    Dice,
    Hd95,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlmSpec {
    pub score: ScoreName,
    pub include_volume_covariate: bool,
    pub fwhm_mm: f64,
    pub n_perm: usize,
    pub alpha: f64,
    /// Analysis mask: voxels lesioned (before smoothing) in at least this many subjects.
    pub mask_min_subjects: usize,
    pub seed: u64,
}

impl Default for GlmSpec {
    fn default() -> Self {
        Self {
            score: ScoreName::Dice,
            include_volume_covariate: false,
            fwhm_mm: 8.0,
            n_perm: 1000,
            alpha: 0.05,
            mask_min_subjects: 2,
            seed: 0,
        }
    }
}

impl GlmSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_perm >= 100,
            InvalidArgument,
            "n_perm must be at least 100, got {}",
            self.n_perm
        );
        ensure!(
            self.alpha > 0.0 && self.alpha < 1.0,
            InvalidArgument,
            "alpha must lie in (0, 1), got {}",
            self.alpha
        );
        ensure!(
            self.mask_min_subjects >= 1,
            InvalidArgument,
            "mask_min_subjects must be at least 1"
        );
        ensure!(
            self.fwhm_mm >= 0.0 && self.fwhm_mm.is_finite(),
            InvalidArgument,
            "fwhm_mm must be non-negative"
        );
        Ok(())
    }
}

/// Voxel-wise lesion count (or frequency when `normalize` is set).
pub fn overlap_map(masks: &[BinaryMask], normalize: bool) -> Result<GridVolume> {
    ensure!(
        !masks.is_empty(),
        InvalidArgument,
        "overlap of an empty mask list"
    );
    let mut acc = vec![0.0; masks[0].volume().len()];
    for m in masks {
        masks[0].check_same_grid(m)?;
        for (a, v) in acc.iter_mut().zip(m.volume().data()) {
            *a += v;
        }
    }
    if normalize {
        let n = masks.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    GridVolume::new(masks[0].dims(), masks[0].spacing(), acc)
}

/// Smoothed lesion densities for n subjects plus the analysis mask.
#[derive(Debug, Clone)]
pub struct DensityStack {
    pub subjects: Vec<String>,
    pub densities: Vec<GridVolume>,
    pub analysis_mask: BinaryMask,
    pub fwhm_mm: f64,
}

impl DensityStack {
    /// Stack from pre-computed densities, testing every voxel of `analysis_mask`.
    pub fn from_volumes(
        subjects: Vec<String>,
        densities: Vec<GridVolume>,
        analysis_mask: BinaryMask,
        fwhm_mm: f64,
    ) -> Result<Self> {
        ensure!(
            subjects.len() == densities.len(),
            InvalidArgument,
            "{} subject ids for {} densities",
            subjects.len(),
            densities.len()
        );
        ensure!(
            !densities.is_empty(),
            InvalidArgument,
            "empty density stack"
        );
        for d in &densities {
            analysis_mask.volume().check_same_grid(d)?;
        }
        Ok(Self {
            subjects,
            densities,
            analysis_mask,
            fwhm_mm,
        })
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.analysis_mask.dims()
    }
}

/// Gaussian-smooths each mask and builds the analysis mask from the raw masks.
pub fn density_stack(
    subjects: Vec<String>,
    masks: &[BinaryMask],
    spec: &GlmSpec,
) -> Result<DensityStack> {
    ensure!(
        subjects.len() == masks.len(),
        InvalidArgument,
        "{} subject ids for {} masks",
        subjects.len(),
        masks.len()
    );
    let overlap = overlap_map(masks, false)?;
    let bits: Vec<bool> = overlap
        .data()
        .iter()
        .map(|&c| c >= spec.mask_min_subjects as f64)
        .collect();
    let analysis_mask = BinaryMask::from_bools(overlap.dims(), overlap.spacing(), &bits)?;
    let densities = masks
        .iter()
        .map(|m| gaussian_smooth(m.volume(), spec.fwhm_mm))
        .collect::<Result<Vec<_>>>()?;
    DensityStack::from_volumes(subjects, densities, analysis_mask, spec.fwhm_mm)
}

/// 26-connected components of the set voxels, each sorted, ordered by first voxel.
pub fn connected_components(bits: &[bool], dims: Dims) -> Vec<Vec<usize>> {
    let [nx, ny, nz] = dims;
    let mut label = vec![usize::MAX; bits.len()];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for seed in 0..bits.len() {
        if !bits[seed] || label[seed] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = Vec::new();
        label[seed] = id;
        stack.push(seed);
        while let Some(v) = stack.pop() {
            members.push(v);
            let (i, j, k) = (v % nx, (v / nx) % ny, v / (nx * ny));
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if a < 0
                            || b < 0
                            || c < 0
                            || a >= nx as i64
                            || b >= ny as i64
                            || c >= nz as i64
                        {
                            continue;
                        }
                        let w = a as usize + nx * (b as usize + ny * c as usize);
                        if bits[w] && label[w] == usize::MAX {
                            label[w] = id;
                            stack.push(w);
                        }
                    }
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub voxels: Vec<usize>,
    pub size: usize,
    /// Signed t at the voxel with the largest |t|.
    pub peak_t: f64,
    pub peak_xyz: [usize; 3],
    /// Smallest corrected p in the cluster, when available.
    pub corrected_p: Option<f64>,
}

/// 26-connected clusters of voxels with `|t| > t_threshold`, sorted by peak |t| descending.
pub fn clusters(
    t: &GridVolume,
    t_threshold: f64,
    corrected_p: Option<&GridVolume>,
) -> Vec<Cluster> {
    let bits: Vec<bool> = t.data().iter().map(|v| v.abs() > t_threshold).collect();
    let mut out: Vec<Cluster> = connected_components(&bits, t.dims())
        .into_iter()
        .map(|voxels| {
            let peak = *voxels
                .iter()
                .max_by(|&&a, &&b| {
                    t.data()[a]
                        .abs()
                        .total_cmp(&t.data()[b].abs())
                        .then(b.cmp(&a))
                })
                .expect("non-empty component");
            Cluster {
                size: voxels.len(),
                peak_t: t.data()[peak],
                peak_xyz: t.coords(peak),
                corrected_p: corrected_p
                    .map(|p| voxels.iter().map(|&v| p.data()[v]).fold(1.0, f64::min)),
                voxels,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.peak_t
            .abs()
            .total_cmp(&a.peak_t.abs())
            .then(a.voxels[0].cmp(&b.voxels[0]))
    });
    out
}

/// Cluster table: `cluster_id,size,peak_t,peak_xyz,corrected_p`.
pub fn write_clusters<W: Write>(clusters: &[Cluster], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "size", "peak_t", "peak_xyz", "corrected_p"])?;
    for (i, c) in clusters.iter().enumerate() {
        let [x, y, z] = c.peak_xyz;
        w.write_record([
            (i + 1).to_string(),
            c.size.to_string(),
            c.peak_t.to_string(),
            format!("{x} {y} {z}"),
            c.corrected_p.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
