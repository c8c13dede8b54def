//! Deterministic synthetic brain phantoms with known lesion masks, a matching
//! archetype atlas and dataset manifests.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::folds::{
    assign_phenotype, write_manifest, ArchetypeAtlas, Phenotype, Sex, StudyRecord,
    DEFAULT_ATLAS_THRESHOLD,
};
use crate::nifti::{self, Datatype};
use crate::seed;
use crate::volume::{BinaryMask, Dims, GridVolume, Spacing};

/// Brain ellipsoid semi-axes as fractions of the grid extent.
const BRAIN_SEMI_AXES: [f64; 3] = [0.38, 0.45, 0.38];
/// Archetype centres sit at this fraction of the brain semi-axes.
const ARCHETYPE_SHELL: f64 = 0.5;
const PROB_FEMALE: f64 = 0.43;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    pub background: f64,
    pub lesion: f64,
    pub artefact: f64,
    /// Artefact centre as fractions of the grid extent (inferior frontal).
    pub artefact_center: [f64; 3],
    /// Gaussian width of the artefact blob in voxels.
    pub artefact_sigma: f64,
    pub artefact_probability: f64,
    pub n_archetypes: usize,
    /// Gaussian width of each archetype frequency map in voxels.
    pub archetype_sigma: f64,
    pub archetype_peak: f64,
    pub lesion_radius_median: f64,
    pub lesion_radius_log_sd: f64,
    /// Per-axis radius jitter, as a fraction of the radius.
    pub lesion_anisotropy: f64,
    /// Amplitude of the smooth multiplicative texture.
    pub texture: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 48],
            spacing: [2.0, 2.0, 2.0],
            background: 0.4,
            lesion: 0.9,
            artefact: 0.65,
            artefact_center: [0.5, 0.8, 0.3],
            artefact_sigma: 2.0,
            artefact_probability: 0.5,
            n_archetypes: 4,
            archetype_sigma: 3.0,
            archetype_peak: 0.6,
            lesion_radius_median: 3.0,
            lesion_radius_log_sd: 0.3,
            lesion_anisotropy: 0.25,
            texture: 0.03,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("background", self.background),
            ("lesion", self.lesion),
            ("artefact", self.artefact),
        ] {
            ensure!(
                v > 0.0 && v < 1.0,
                InvalidArgument,
                "{name} intensity must lie in (0, 1), got {v}"
            );
        }
        ensure!(
            self.dims.iter().all(|&d| (4..=256).contains(&d)),
            InvalidArgument,
            "phantom dims must lie in 4..=256, got {:?}",
            self.dims
        );
        ensure!(
            self.n_archetypes >= 1,
            InvalidArgument,
            "need at least one archetype"
        );
        ensure!(
            (0.0..=1.0).contains(&self.artefact_probability),
            InvalidArgument,
            "artefact_probability must lie in [0, 1]"
        );
        ensure!(
            self.lesion_radius_median > 0.0 && self.lesion_radius_log_sd >= 0.0,
            InvalidArgument,
            "lesion radius parameters must be positive"
        );
        ensure!(
            self.texture >= 0.0 && self.texture < 0.5,
            InvalidArgument,
            "texture amplitude must lie in [0, 0.5)"
        );
        Ok(())
    }

    fn centre(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.dims[a] as f64 - 1.0) / 2.0)
    }

    fn semi_axes(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| BRAIN_SEMI_AXES[a] * self.dims[a] as f64)
    }

    pub fn brain_mask(&self) -> BinaryMask {
        let (c, r) = (self.centre(), self.semi_axes());
        let bits: Vec<bool> = grid_points(self.dims)
            .map(|p| (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0)
            .collect();
        BinaryMask::from_bools(self.dims, self.spacing, &bits).expect("validated dims")
    }

    /// Fixed, well-spread archetype centres on a shell inside the brain.
    pub fn archetype_centres(&self) -> Vec<[f64; 3]> {
        let (c, r) = (self.centre(), self.semi_axes());
        let k = self.n_archetypes;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..k)
            .map(|i| {
                let y = if k == 1 {
                    0.0
                } else {
                    1.0 - 2.0 * (i as f64 + 0.5) / k as f64
                };
                let rad = (1.0 - y * y).sqrt();
                let theta = golden * i as f64;
                let unit = [rad * theta.cos(), y, rad * theta.sin()];
                [0, 1, 2].map(|a| c[a] + ARCHETYPE_SHELL * r[a] * unit[a])
            })
            .collect()
    }
}

fn grid_points(dims: Dims) -> impl Iterator<Item = [f64; 3]> {
    let [nx, ny, nz] = dims;
    (0..nz).flat_map(move |k| {
        (0..ny).flat_map(move |j| (0..nx).map(move |i| [i as f64, j as f64, k as f64]))
    })
}

fn gaussian_at(p: [f64; 3], c: [f64; 3], sigma: f64) -> f64 {
    let d2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// K smooth Gaussian frequency maps at fixed centres, zero outside the brain.
pub fn make_archetype_atlas(spec: &PhantomSpec) -> Result<ArchetypeAtlas> {
    spec.validate()?;
    let brain = spec.brain_mask();
    let maps = spec
        .archetype_centres()
        .into_iter()
        .map(|c| {
            let data = grid_points(spec.dims)
                .enumerate()
                .map(|(idx, p)| {
                    if brain.contains(idx) {
                        spec.archetype_peak * gaussian_at(p, c, spec.archetype_sigma)
                    } else {
                        0.0
                    }
                })
                .collect();
            GridVolume::new(spec.dims, spec.spacing, data)
        })
        .collect::<Result<Vec<_>>>()?;
    ArchetypeAtlas::new(maps, DEFAULT_ATLAS_THRESHOLD)
}

/// Generated image, its exact lesion mask and the study metadata.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: GridVolume,
    pub mask: BinaryMask,
    pub record: StudyRecord,
    /// Archetype the lesion centre was drawn from.
    pub source_archetype: Option<usize>,
    pub has_artefact: bool,
}

/// Smooth texture in `[-1, 1]` from three seeded low-frequency waves.
fn texture_field(dims: Dims, rng: &mut impl Rng) -> Vec<f64> {
    let waves: Vec<([f64; 3], f64)> = (0..3)
        .map(|_| {
            let f =
                [0, 1, 2].map(|a| rng.gen_range(1.0..3.0) * std::f64::consts::TAU / dims[a] as f64);
            (f, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    grid_points(dims)
        .map(|p| {
            waves
                .iter()
                .map(|(f, ph)| (f[0] * p[0] + f[1] * p[1] + f[2] * p[2] + ph).sin())
                .sum::<f64>()
                / 3.0
        })
        .collect()
}

/// Builds one phantom. Lesion phantoms draw a thresholded Gaussian blob
/// centred inside the thresholded region of archetype `archetype`.
pub fn make_phantom(
    spec: &PhantomSpec,
    atlas: &ArchetypeAtlas,
    id: &str,
    archetype: Option<usize>,
    seed: u64,
) -> Result<Phantom> {
    spec.validate()?;
    if let Some(a) = archetype {
        ensure!(
            a < atlas.len(),
            InvalidArgument,
            "archetype index {a} out of range for {} archetypes",
            atlas.len()
        );
    }
    let mut rng = seed::rng(seed);
    let n: usize = spec.dims.iter().product();
    let brain = spec.brain_mask();
    let points: Vec<[f64; 3]> = grid_points(spec.dims).collect();

    let age = Normal::new(67.0f64, 15.0)
        .unwrap()
        .sample(&mut rng)
        .clamp(18.0, 100.0);
    let sex = if rng.gen_bool(PROB_FEMALE) {
        Sex::F
    } else {
        Sex::M
    };
    let texture = texture_field(spec.dims, &mut rng);

    let mut lesion = vec![false; n];
    let mut has_artefact = false;
    if let Some(a) = archetype {
        let map = &atlas.maps()[a];
        let region: Vec<usize> = (0..n)
            .filter(|&i| brain.contains(i) && map.data()[i] >= atlas.threshold())
            .collect();
        ensure!(
            !region.is_empty(),
            Degenerate,
            "archetype {a} has no voxels inside the brain"
        );
        let weights: Vec<f64> = region.iter().map(|&i| map.data()[i]).collect();
        let pick = rand_distr::WeightedIndex::new(&weights)
            .expect("positive weights")
            .sample(&mut rng);
        let c = points[region[pick]].map(|x| x + rng.gen_range(-0.5..0.5));
        let z: f64 = rng.sample(StandardNormal);
        let radius = spec.lesion_radius_median * (spec.lesion_radius_log_sd * z).exp();
        let radii =
            [0, 1, 2].map(|_| radius * (1.0 + spec.lesion_anisotropy * rng.gen_range(-1.0..1.0)));
        // exp(-q/2) >= 0.5
        let cut = 2.0 * std::f64::consts::LN_2;
        for (idx, p) in points.iter().enumerate() {
            let q: f64 = (0..3).map(|ax| ((p[ax] - c[ax]) / radii[ax]).powi(2)).sum();
            lesion[idx] = q <= cut && brain.contains(idx);
        }
        if !lesion.iter().any(|&b| b) {
            let nearest = region[pick];
            lesion[nearest] = true;
        }
    } else {
        has_artefact = rng.gen_bool(spec.artefact_probability);
    }

    let art_centre = [0, 1, 2].map(|a| spec.artefact_center[a] * (spec.dims[a] as f64 - 1.0));
    let data: Vec<f64> = (0..n)
        .map(|idx| {
            if !brain.contains(idx) {
                return 0.0;
            }
            let base = if lesion[idx] {
                spec.lesion
            } else if has_artefact {
                spec.background
                    + (spec.artefact - spec.background)
                        * gaussian_at(points[idx], art_centre, spec.artefact_sigma)
            } else {
                spec.background
            };
            base * (1.0 + spec.texture * texture[idx])
        })
        .collect();
    let image = GridVolume::new(spec.dims, spec.spacing, data)?;
    let mask = BinaryMask::from_bools(spec.dims, spec.spacing, &lesion)?;

    let phenotype = if archetype.is_some() {
        assign_phenotype(&mask, atlas, atlas.threshold())?
    } else {
        Phenotype::None
    };
    let record = StudyRecord {
        id: id.to_string(),
        image_path: PathBuf::from(format!("images/{id}.nii.gz")),
        label_path: archetype.map(|_| PathBuf::from(format!("labels/{id}.nii.gz"))),
        volume: mask.count(),
        age,
        sex,
        phenotype,
        is_control: archetype.is_none(),
    };
    Ok(Phantom {
        image,
        mask,
        record,
        source_archetype: archetype,
        has_artefact,
    })
}

pub fn positive_id(i: usize) -> String {
    format!("pos_{i:04}")
}

pub fn control_id(i: usize) -> String {
    format!("ctrl_{i:04}")
}

/// Generates `n_pos` lesion phantoms (archetypes round-robin) followed by
/// `n_ctrl` controls, each from its own per-study seed.
pub fn generate(
    n_pos: usize,
    n_ctrl: usize,
    spec: &PhantomSpec,
) -> Result<(ArchetypeAtlas, Vec<Phantom>)> {
    let atlas = make_archetype_atlas(spec)?;
    let jobs: Vec<(String, Option<usize>)> = (0..n_pos)
        .map(|i| (positive_id(i), Some(i % spec.n_archetypes)))
        .chain((0..n_ctrl).map(|i| (control_id(i), None)))
        .collect();
    let phantoms = jobs
        .par_iter()
        .map(|(id, arch)| {
            make_phantom(spec, &atlas, id, *arch, seed::study_seed(spec.seed, id))
                .map_err(|e| e.for_study(id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((atlas, phantoms))
}

/// Files written by [`make_dataset`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: PathBuf,
    pub atlas_maps: Vec<PathBuf>,
    pub records: Vec<StudyRecord>,
}

/// Writes images, labels, atlas maps and `manifest.json` under `out`.
///
/// Manifest paths are relative to `out`.
pub fn make_dataset(
    n_pos: usize,
    n_ctrl: usize,
    spec: &PhantomSpec,
    out: &Path,
) -> Result<Dataset> {
    let (atlas, phantoms) = generate(n_pos, n_ctrl, spec)?;
    for sub in ["images", "labels", "atlas"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    phantoms.par_iter().try_for_each(|p| -> Result<()> {
        nifti::write_volume(&p.image, out.join(&p.record.image_path), Datatype::Float32)?;
        if let Some(l) = &p.record.label_path {
            nifti::write_volume(p.mask.volume(), out.join(l), Datatype::Uint8)?;
        }
        Ok(())
    })?;
    let mut atlas_maps = Vec::new();
    for (i, m) in atlas.maps().iter().enumerate() {
        let path = out.join(format!("atlas/archetype_{i}.nii.gz"));
        nifti::write_volume(m, &path, Datatype::Float32)?;
        atlas_maps.push(path);
    }
    let records: Vec<StudyRecord> = phantoms.into_iter().map(|p| p.record).collect();
    let manifest = out.join("manifest.json");
    write_manifest(&records, &manifest)?;
    Ok(Dataset {
        manifest,
        atlas_maps,
        records,
    })
}
