//! Experiment orchestration: segmenter invocation, cross-validated scoring,
//! false-positive reports on control studies and noise-calibration sweeps.

mod fp;
mod segmenter;
mod sweep;

pub use fp::{
    fp_counts, fp_report, write_fp_bootstrap, write_fp_table, FpPairTest, FpReport, FpTableRow,
    FP_TABLE_COLUMNS,
};
pub use segmenter::{
    run_segmenter, ExternalSegmenter, PredictionDir, RegionSpec, Segmenter, SegmenterHandle,
    ThresholdSegmenter,
};
pub use sweep::{
    noise_sweep, Pairing, SweepCell, SweepGap, SweepMetric, SweepOptions, SweepReport, SweepRow,
    SweepSchedule, SweepTest, SweepTrend,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::folds::{FoldPlan, StudyRecord};
use crate::metrics::{binarize, dice_score, hd95, MetricRow};
use crate::nifti;
use crate::volume::{normalize_intensity, BinaryMask, GridVolume, ProbabilityMap};

/// Image plus optional label, loaded into memory.
#[derive(Debug, Clone)]
pub struct Study {
    pub id: String,
    pub image: GridVolume,
    pub label: Option<BinaryMask>,
}

impl Study {
    pub fn load(record: &StudyRecord) -> Result<Self> {
        let load = || -> Result<Self> {
            let (image, _) = nifti::read_volume(&record.image_path)?;
            let label = match &record.label_path {
                Some(p) => {
                    let (v, _) = nifti::read_volume(p)?;
                    image.check_same_grid(&v)?;
                    Some(BinaryMask::threshold(&v, 0.5))
                }
                None => None,
            };
            Ok(Self {
                id: record.id.clone(),
                image,
                label,
            })
        };
        load().map_err(|e| e.for_study(&record.id))
    }
}

/// A named segmenter.
pub struct Model {
    pub id: String,
    pub segmenter: Box<dyn Segmenter>,
}

impl Model {
    pub fn new(id: impl Into<String>, segmenter: impl Segmenter + 'static) -> Self {
        Self {
            id: id.into(),
            segmenter: Box::new(segmenter),
        }
    }
}

/// Intensity normalization applied to every image before it reaches a model.
pub fn prepare_image(image: &GridVolume) -> GridVolume {
    normalize_intensity(image)
}

/// Scores one prediction against its label.
pub fn score_prediction(
    study_id: &str,
    model_id: &str,
    fold: usize,
    condition: &str,
    pred: &ProbabilityMap,
    label: &BinaryMask,
    threshold: f64,
) -> Result<MetricRow> {
    let bin = binarize(pred, threshold);
    let inter = bin.intersection_count(label)?;
    Ok(MetricRow {
        study_id: study_id.to_string(),
        model_id: model_id.to_string(),
        fold,
        condition: condition.to_string(),
        dice: dice_score(&bin, label)?,
        hd95: hd95(&bin, label)?,
        pred_volume: bin.count(),
        label_volume: label.count(),
        fp_voxels: bin.count() - inter,
    })
}

/// One row per (labelled study, model), sorted by model then study.
///
/// Each study's fold comes from `plan`; the caller is responsible for
/// predictions coming from the model instance that held that fold out.
pub fn cv_evaluate(
    plan: &FoldPlan,
    studies: &[Study],
    models: &[Model],
    threshold: f64,
) -> Result<Vec<MetricRow>> {
    let labelled: Vec<&Study> = studies.iter().filter(|s| s.label.is_some()).collect();
    let jobs: Vec<(&Model, &Study)> = models
        .iter()
        .flat_map(|m| labelled.iter().map(move |s| (m, *s)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|(m, s)| {
            let fold = plan.fold_of(&s.id).ok_or_else(|| {
                Error::InvalidArgument(format!("study {} is not in the fold plan", s.id))
            })?;
            let pred = run_segmenter(m.segmenter.as_ref(), &s.id, &prepare_image(&s.image))?;
            score_prediction(
                &s.id,
                &m.id,
                fold,
                "clean",
                &pred,
                s.label.as_ref().unwrap(),
                threshold,
            )
            .map_err(|e| e.for_study(&s.id))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (&a.model_id, &a.study_id).cmp(&(&b.model_id, &b.study_id)));
    Ok(rows)
}
