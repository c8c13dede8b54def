use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{prepare_image, run_segmenter, Model, Study};
use crate::error::{ensure, Result};
use crate::metrics::fp_voxel_count;
use crate::stats::{self, PairedOutcome};

pub const FP_TABLE_COLUMNS: [&str; 7] = [
    "model",
    "Mean",
    "Mean (non-zero)",
    "SD",
    "SD (non-zero)",
    "count ≥1",
    "Max",
];

/// Descriptive statistics of per-control false-positive voxel counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpTableRow {
    pub model: String,
    #[serde(rename = "Mean")]
    pub mean: f64,
    #[serde(rename = "Mean (non-zero)")]
    pub nonzero_mean: Option<f64>,
    #[serde(rename = "SD")]
    pub sd: Option<f64>,
    #[serde(rename = "SD (non-zero)")]
    pub nonzero_sd: Option<f64>,
    #[serde(rename = "count ≥1")]
    pub count_nonzero: usize,
    #[serde(rename = "Max")]
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpPairTest {
    pub model_a: String,
    pub model_b: String,
    /// Paired t on the bootstrap means of `model_a - model_b`.
    pub outcome: PairedOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpReport {
    pub threshold: f64,
    pub n_boot: usize,
    pub size: usize,
    pub seed: u64,
    pub controls: Vec<String>,
    /// Per model, false-positive voxel counts in control order.
    pub counts: Vec<(String, Vec<f64>)>,
    pub table: Vec<FpTableRow>,
    pub bootstrap: Vec<(String, Vec<f64>)>,
    pub tests: Vec<FpPairTest>,
}

/// False-positive voxel counts of every model on every control, in control
/// order.
pub fn fp_counts(
    controls: &[Study],
    models: &[Model],
    threshold: f64,
) -> Result<Vec<(String, Vec<f64>)>> {
    ensure!(
        !controls.is_empty(),
        InvalidArgument,
        "false-positive report needs at least one control"
    );
    models
        .iter()
        .map(|m| {
            let counts = controls
                .par_iter()
                .map(|c| {
                    let p = run_segmenter(m.segmenter.as_ref(), &c.id, &prepare_image(&c.image))?;
                    Ok(fp_voxel_count(&p, threshold) as f64)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((m.id.clone(), counts))
        })
        .collect()
}

pub fn fp_report(
    controls: &[Study],
    models: &[Model],
    threshold: f64,
    n_boot: usize,
    size: usize,
    seed: u64,
) -> Result<FpReport> {
    let counts = fp_counts(controls, models, threshold)?;
    let ids = controls.iter().map(|c| c.id.clone()).collect();
    FpReport::from_counts(ids, counts, threshold, n_boot, size, seed)
}

impl FpReport {
    /// Builds the report from precomputed counts. Every model's bootstrap
    /// uses the same seed, so subsample `i` draws the same controls for all
    /// models.
    pub fn from_counts(
        controls: Vec<String>,
        counts: Vec<(String, Vec<f64>)>,
        threshold: f64,
        n_boot: usize,
        size: usize,
        seed: u64,
    ) -> Result<Self> {
        ensure!(
            !controls.is_empty(),
            InvalidArgument,
            "false-positive report needs at least one control"
        );
        for (m, c) in &counts {
            ensure!(
                c.len() == controls.len(),
                InvalidArgument,
                "model {m} was scored on {} controls, expected {}",
                c.len(),
                controls.len()
            );
        }
        let table = counts
            .iter()
            .map(|(m, c)| {
                let d = stats::descriptive(c)?;
                Ok(FpTableRow {
                    model: m.clone(),
                    mean: d.mean,
                    nonzero_mean: d.nonzero_mean,
                    sd: d.sd,
                    nonzero_sd: d.nonzero_sd,
                    count_nonzero: d.count_nonzero,
                    max: d.max,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bootstrap = counts
            .iter()
            .map(|(m, c)| Ok((m.clone(), stats::bootstrap_means(c, n_boot, size, seed)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut tests = Vec::new();
        for i in 0..bootstrap.len() {
            for j in i + 1..bootstrap.len() {
                tests.push(FpPairTest {
                    model_a: bootstrap[i].0.clone(),
                    model_b: bootstrap[j].0.clone(),
                    outcome: stats::compare_paired(&bootstrap[i].1, &bootstrap[j].1)?,
                });
            }
        }
        Ok(Self {
            threshold,
            n_boot,
            size,
            seed,
            controls,
            counts,
            table,
            bootstrap,
            tests,
        })
    }
}

pub fn write_fp_table<W: Write>(rows: &[FpTableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Wide table: one row per subsample, one column per model.
pub fn write_fp_bootstrap<W: Write>(report: &FpReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subsample".to_string()];
    header.extend(report.bootstrap.iter().map(|(m, _)| m.clone()));
    w.write_record(&header)?;
    for i in 0..report.n_boot {
        let mut rec = vec![i.to_string()];
        rec.extend(report.bootstrap.iter().map(|(_, b)| b[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
