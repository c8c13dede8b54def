//! Overlap and surface fidelity measures, training losses and the joint
//! Dice/HD early-stopping rule.

mod early_stop;
mod hausdorff;
mod row;

pub use early_stop::{early_stop, EarlyStop};
pub use hausdorff::{
    directed_surface_distances, hd95, hd95_with_units, percentile, squared_distance_transform,
    surface_voxels, DistanceUnits,
};
pub use row::{read_metric_rows, write_metric_rows, MetricRow};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::volume::{BinaryMask, ProbabilityMap};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    /// Focal loss focusing exponent.
    pub gamma: f64,
    /// Soft Dice smoothing constant.
    pub epsilon: f64,
    /// Binarization threshold applied to probability maps.
    pub threshold: f64,
    /// Thresholded Average loss threshold.
    pub ta_threshold: f64,
    /// Weight of the Thresholded Average term in the control loss.
    pub ta_weight: f64,
    /// Early-stopping patience in epochs.
    pub patience: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            epsilon: 1e-5,
            threshold: 0.5,
            ta_threshold: 0.5,
            ta_weight: 1.0,
            patience: 150,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma >= 0.0, InvalidArgument, "gamma must be >= 0");
        ensure!(self.epsilon > 0.0, InvalidArgument, "epsilon must be > 0");
        ensure!(
            self.threshold > 0.0 && self.threshold < 1.0,
            InvalidArgument,
            "threshold must lie in (0, 1)"
        );
        ensure!(
            self.ta_threshold > 0.0 && self.ta_threshold < 1.0,
            InvalidArgument,
            "ta_threshold must lie in (0, 1)"
        );
        ensure!(
            self.ta_weight >= 0.0,
            InvalidArgument,
            "ta_weight must be >= 0"
        );
        ensure!(self.patience >= 1, InvalidArgument, "patience must be >= 1");
        Ok(())
    }
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// `1 - (2 Σ p·g + ε) / (Σ p + Σ g + ε)`.
pub fn soft_dice_loss(p: &ProbabilityMap, g: &BinaryMask, params: &MetricParams) -> Result<f64> {
    p.volume().check_same_grid(g.volume())?;
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&pv, &gv) in p.data().iter().zip(g.volume().data()) {
        inter += pv * gv;
        sp += pv;
        sg += gv;
    }
    Ok(1.0 - (2.0 * inter + params.epsilon) / (sp + sg + params.epsilon))
}

/// Mean voxel-wise focal loss with focusing exponent `gamma` and no class weighting.
pub fn focal_loss(p: &ProbabilityMap, g: &BinaryMask, params: &MetricParams) -> Result<f64> {
    p.volume().check_same_grid(g.volume())?;
    let gamma = params.gamma;
    let total: f64 = p
        .data()
        .iter()
        .zip(g.volume().data())
        .map(|(&pv, &gv)| {
            let pc = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if gv != 0.0 {
                -(1.0 - pc).powf(gamma) * pc.ln()
            } else {
                -pc.powf(gamma) * (1.0 - pc).ln()
            }
        })
        .sum();
    Ok(total / p.data().len() as f64)
}

/// Mean of the voxel probabilities strictly above `ta_threshold`; zero when there are none.
pub fn thresholded_average_loss(p: &ProbabilityMap, params: &MetricParams) -> f64 {
    let (sum, n) = p
        .data()
        .iter()
        .filter(|&&v| v > params.ta_threshold)
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Training loss for one study.
///
/// Lesion studies: soft Dice + focal. Controls: focal against an empty target
/// plus the weighted Thresholded Average penalty; `g` only supplies the grid.
pub fn combined_loss(
    p: &ProbabilityMap,
    g: &BinaryMask,
    is_control: bool,
    params: &MetricParams,
) -> Result<f64> {
    p.volume().check_same_grid(g.volume())?;
    if is_control {
        let empty = BinaryMask::empty(g.dims(), g.spacing())?;
        Ok(focal_loss(p, &empty, params)? + params.ta_weight * thresholded_average_loss(p, params))
    } else {
        Ok(soft_dice_loss(p, g, params)? + focal_loss(p, g, params)?)
    }
}

/// Voxels with `p > threshold`.
pub fn binarize(p: &ProbabilityMap, threshold: f64) -> BinaryMask {
    BinaryMask::threshold(p.volume(), threshold)
}

/// Number of voxels a control prediction marks as lesion.
pub fn fp_voxel_count(p: &ProbabilityMap, threshold: f64) -> usize {
    p.data().iter().filter(|&&v| v > threshold).count()
}
