use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::Serialize;

use super::{FoldPlan, Sex, StudyRecord};
use crate::error::{Error, Result};
use crate::metrics::MetricRow;
use crate::stats;

/// Per-fold demographics and label sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSummaryRow {
    pub fold: String,
    #[serde(rename = "Mean Patient Age")]
    pub mean_age: f64,
    #[serde(rename = "SD Patient Age")]
    pub sd_age: Option<f64>,
    #[serde(rename = "Proportion Female (F)")]
    pub proportion_female: f64,
    #[serde(rename = "SD Proportion Female")]
    pub sd_proportion_female: Option<f64>,
    #[serde(rename = "Mean Label Size")]
    pub mean_label_size: f64,
    #[serde(rename = "SD Label Size")]
    pub sd_label_size: Option<f64>,
}

pub fn fold_summary(plan: &FoldPlan, records: &[StudyRecord]) -> Result<Vec<FoldSummaryRow>> {
    let by_id: HashMap<&str, &StudyRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut folds: Vec<Vec<&StudyRecord>> = vec![Vec::new(); plan.k];
    for a in &plan.assignments {
        let r = by_id.get(a.id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "study {} is in the plan but not in the records",
                a.id
            ))
        })?;
        folds[a.fold].push(r);
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, members)| {
            let ages: Vec<f64> = members.iter().map(|r| r.age).collect();
            let female: Vec<f64> = members
                .iter()
                .map(|r| (r.sex == Sex::F) as u8 as f64)
                .collect();
            let sizes: Vec<f64> = members.iter().map(|r| r.volume as f64).collect();
            FoldSummaryRow {
                fold: format!("fold_{f}"),
                mean_age: stats::mean(&ages),
                sd_age: stats::sample_sd(&ages),
                proportion_female: stats::mean(&female),
                sd_proportion_female: stats::sample_sd(&female),
                mean_label_size: stats::mean(&sizes),
                sd_label_size: stats::sample_sd(&sizes),
            }
        })
        .collect())
}

pub fn write_fold_summary<W: Write>(rows: &[FoldSummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n: usize,
    pub mean_dice: f64,
    pub mean_hd95: Option<f64>,
    pub hd95_excluded: usize,
}

/// Pooled out-of-sample performance of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub model_id: String,
    pub n: usize,
    pub mean_dice: f64,
    /// Mean over rows with a defined HD95.
    pub mean_hd95: Option<f64>,
    pub hd95_excluded: usize,
    pub per_fold: Vec<FoldMetrics>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    dice: f64,
    hd: f64,
    hd_n: usize,
}

impl Acc {
    fn push(&mut self, r: &MetricRow) {
        self.n += 1;
        self.dice += r.dice;
        if let Some(h) = r.hd95 {
            self.hd += h;
            self.hd_n += 1;
        }
    }

    fn mean_hd(&self) -> Option<f64> {
        (self.hd_n > 0).then(|| self.hd / self.hd_n as f64)
    }
}

/// Pools rows over folds per model: means over all rows, not means of fold means.
pub fn aggregate_cv(rows: &[MetricRow]) -> Result<Vec<CvSummary>> {
    let mut seen = HashSet::new();
    let mut models: BTreeMap<&str, (Acc, BTreeMap<usize, Acc>)> = BTreeMap::new();
    for r in rows {
        if !seen.insert((r.study_id.as_str(), r.model_id.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "study {} appears more than once for model {}",
                r.study_id, r.model_id
            )));
        }
        let entry = models.entry(&r.model_id).or_default();
        entry.0.push(r);
        entry.1.entry(r.fold).or_default().push(r);
    }
    Ok(models
        .into_iter()
        .map(|(model, (all, folds))| CvSummary {
            model_id: model.to_string(),
            n: all.n,
            mean_dice: all.dice / all.n as f64,
            mean_hd95: all.mean_hd(),
            hd95_excluded: all.n - all.hd_n,
            per_fold: folds
                .into_iter()
                .map(|(fold, a)| FoldMetrics {
                    fold,
                    n: a.n,
                    mean_dice: a.dice / a.n as f64,
                    mean_hd95: a.mean_hd(),
                    hd95_excluded: a.n - a.hd_n,
                })
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::{BalanceDiagnostics, FoldAssignment, Phenotype};
    use rand::{Rng, SeedableRng};

    fn rec(id: &str, age: f64, sex: Sex, volume: usize) -> StudyRecord {
        StudyRecord {
            id: id.into(),
            image_path: "x".into(),
            label_path: Some("y".into()),
            volume,
            age,
            sex,
            phenotype: Phenotype::Archetype(0),
            is_control: false,
        }
    }

    fn plan(assign: &[(&str, usize)], k: usize) -> FoldPlan {
        FoldPlan {
            k,
            seed: 0,
            n_perm: 1,
            assignments: assign
                .iter()
                .map(|(id, f)| FoldAssignment {
                    id: id.to_string(),
                    fold: *f,
                })
                .collect(),
            diagnostics: BalanceDiagnostics {
                kw_h: 0.0,
                kw_p: 1.0,
                pool_median_kw_p: 1.0,
                kw_p_cutoff: 1.0,
                n_shortlisted: 1,
                selected_candidate: 0,
                mean_volume_variance: 0.0,
                sd_volume_variance: 0.0,
                fold_sizes: vec![],
                fold_mean_volume: vec![],
                fold_sd_volume: vec![],
                phenotype_counts: vec![],
                selection_rule: String::new(),
            },
        }
    }

    #[test]
    fn summary_examples() {
        let recs = vec![rec("a", 60.0, Sex::F, 10), rec("b", 70.0, Sex::F, 30)];
        let rows = fold_summary(&plan(&[("a", 0), ("b", 0)], 1), &recs).unwrap();
        assert_eq!(rows[0].mean_age, 65.0);
        assert!((rows[0].sd_age.unwrap() - 7.0710678).abs() < 1e-6);
        assert_eq!(rows[0].proportion_female, 1.0);
        assert_eq!(rows[0].sd_proportion_female, Some(0.0));
        assert_eq!(rows[0].mean_label_size, 20.0);
        assert!(fold_summary(&plan(&[("zz", 0)], 1), &recs).is_err());
    }

    #[test]
    fn summary_header_order() {
        let recs = vec![rec("a", 60.0, Sex::M, 10)];
        let rows = fold_summary(&plan(&[("a", 0)], 1), &recs).unwrap();
        let mut buf = Vec::new();
        write_fold_summary(&rows, &mut buf).unwrap();
        let header = String::from_utf8(buf)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(
            header,
            "fold,Mean Patient Age,SD Patient Age,Proportion Female (F),SD Proportion Female,Mean Label Size,SD Label Size"
        );
    }

    fn row(study: &str, model: &str, fold: usize, dice: f64, hd: Option<f64>) -> MetricRow {
        MetricRow {
            study_id: study.into(),
            model_id: model.into(),
            fold,
            condition: "clean".into(),
            dice,
            hd95: hd,
            pred_volume: 0,
            label_volume: 0,
            fp_voxels: 0,
        }
    }

    #[test]
    fn pooled_means() {
        let rows = vec![
            row("a", "m", 0, 0.8, Some(1.0)),
            row("b", "m", 0, 0.8, None),
            row("c", "m", 1, 0.9, Some(3.0)),
            row("d", "m", 1, 0.9, Some(2.0)),
        ];
        let s = aggregate_cv(&rows).unwrap();
        assert!((s[0].mean_dice - 0.85).abs() < 1e-12);
        assert_eq!(s[0].mean_hd95, Some(2.0));
        assert_eq!(s[0].hd95_excluded, 1);
        assert_eq!(s[0].per_fold[0].mean_hd95, Some(1.0));

        let dup = vec![row("a", "m", 0, 0.8, None), row("a", "m", 1, 0.7, None)];
        assert!(aggregate_cv(&dup).is_err());
    }

    #[test]
    fn pooled_equals_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<MetricRow> = (0..97)
            .map(|i| {
                let hd = if rng.gen_bool(0.8) {
                    Some(rng.gen_range(0.0..10.0))
                } else {
                    None
                };
                row(
                    &format!("s{i}"),
                    "m",
                    rng.gen_range(0..5),
                    rng.gen_range(0.0..1.0),
                    hd,
                )
            })
            .collect();
        let s = &aggregate_cv(&rows).unwrap()[0];
        let dice: f64 = rows.iter().map(|r| r.dice).sum::<f64>() / rows.len() as f64;
        let hds: Vec<f64> = rows.iter().filter_map(|r| r.hd95).collect();
        assert!((s.mean_dice - dice).abs() < 1e-12);
        assert!((s.mean_hd95.unwrap() - stats::mean(&hds)).abs() < 1e-12);
        assert_eq!(s.hd95_excluded, rows.len() - hds.len());
    }
}
