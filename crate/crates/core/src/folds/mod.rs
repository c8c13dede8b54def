//! Study records, phenotype assignment against an archetype atlas, balanced
//! k-fold planning and cross-validation aggregation.

mod balance;
mod record;
mod summary;

pub use balance::{balance_folds, split_controls, BalanceDiagnostics, FoldAssignment, FoldPlan};
pub use record::{read_manifest, write_manifest, Phenotype, Sex, StudyRecord};
pub use summary::{
    aggregate_cv, fold_summary, write_fold_summary, CvSummary, FoldMetrics, FoldSummaryRow,
};

use std::path::Path;

use crate::error::{ensure, Result};
use crate::nifti;
use crate::volume::{BinaryMask, GridVolume};

pub const DEFAULT_ATLAS_THRESHOLD: f64 = 0.10;

/// K archetype frequency maps on a shared grid plus the threshold that turns
/// them into binary archetype masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeAtlas {
    maps: Vec<GridVolume>,
    threshold: f64,
}

impl ArchetypeAtlas {
    pub fn new(maps: Vec<GridVolume>, threshold: f64) -> Result<Self> {
        ensure!(
            !maps.is_empty(),
            InvalidArgument,
            "archetype atlas is empty"
        );
        ensure!(
            threshold > 0.0 && threshold < 1.0,
            InvalidArgument,
            "atlas threshold must lie in (0, 1), got {threshold}"
        );
        for m in &maps[1..] {
            maps[0].check_same_grid(m)?;
        }
        Ok(Self { maps, threshold })
    }

    pub fn load(paths: &[impl AsRef<Path>], threshold: f64) -> Result<Self> {
        let maps = paths
            .iter()
            .map(|p| nifti::read_volume(p).map(|(v, _)| v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps, threshold)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[GridVolume] {
        &self.maps
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Voxels with map value `>= t`.
    pub fn mask(&self, index: usize, t: f64) -> BinaryMask {
        BinaryMask::threshold_at_least(&self.maps[index], t)
    }

    pub fn masks(&self) -> Vec<BinaryMask> {
        (0..self.len())
            .map(|i| self.mask(i, self.threshold))
            .collect()
    }
}

/// Archetype with the largest Dice against the lesion mask.
///
/// All-zero Dice gives [`Phenotype::None`]; ties resolve to the lowest index.
pub fn assign_phenotype(mask: &BinaryMask, atlas: &ArchetypeAtlas, t: f64) -> Result<Phenotype> {
    mask.volume().check_same_grid(&atlas.maps[0])?;
    let mut best = Phenotype::None;
    let mut best_dice = 0.0;
    for i in 0..atlas.len() {
        let d = crate::metrics::dice_score(mask, &atlas.mask(i, t))?;
        if d > best_dice {
            best_dice = d;
            best = Phenotype::Archetype(i);
        }
    }
    Ok(best)
}
