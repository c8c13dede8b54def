use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{prepare_image, run_segmenter, score_prediction, Model, Study};
use crate::corruption::{apply_combined, NoiseSchedule, NoiseSpec};
use crate::error::{ensure, Error, Result};
use crate::seed::study_seed;
use crate::stats::{self, PairedOutcome};

/// One or more noise schedules stepped together; increment `i` applies the
/// `i`-th magnitude of every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSchedule {
    pub name: String,
    pub components: Vec<NoiseSchedule>,
}

impl SweepSchedule {
    pub fn single(schedule: NoiseSchedule) -> Self {
        Self {
            name: schedule.kind.name().to_string(),
            components: vec![schedule],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.components.is_empty(),
            InvalidArgument,
            "schedule {} has no components",
            self.name
        );
        let n = self.components[0].n_steps;
        let mut kinds = HashSet::new();
        for c in &self.components {
            c.validate()?;
            ensure!(
                c.n_steps == n,
                InvalidArgument,
                "schedule {} mixes {} and {} steps",
                self.name,
                n,
                c.n_steps
            );
            ensure!(
                kinds.insert(c.kind),
                InvalidArgument,
                "schedule {} repeats {}",
                self.name,
                c.kind
            );
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.components[0].n_steps
    }

    pub fn specs(&self, increment: usize, cell_seed: u64) -> Vec<NoiseSpec> {
        self.components
            .iter()
            .map(|c| NoiseSpec {
                kind: c.kind,
                magnitude: c.magnitudes()[increment],
                seed: study_seed(cell_seed, c.kind.name()),
            })
            .collect()
    }

    fn magnitude_label(&self, increment: usize) -> String {
        self.components
            .iter()
            .map(|c| format!("{}={}", c.kind, c.magnitudes()[increment]))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// What a paired test pairs: per-increment means (default) or individual
/// (study, increment) cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    IncrementMeans,
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub seed: u64,
    /// Binarization threshold for predictions.
    pub threshold: f64,
    pub pairing: Pairing,
    /// Level for the FDR and FWER rejections.
    pub alpha: f64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            threshold: 0.5,
            pairing: Pairing::IncrementMeans,
            alpha: 0.05,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    Dice,
    Hd95,
    Volume,
}

impl SweepMetric {
    pub const ALL: [SweepMetric; 3] = [SweepMetric::Dice, SweepMetric::Hd95, SweepMetric::Volume];

    fn value(self, c: &SweepCell) -> Option<f64> {
        match self {
            SweepMetric::Dice => Some(c.dice),
            SweepMetric::Hd95 => c.hd95,
            SweepMetric::Volume => Some(c.pred_volume as f64),
        }
    }
}

/// Score of one model on one corrupted study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub schedule: String,
    pub increment: usize,
    pub study_id: String,
    pub model_id: String,
    pub dice: f64,
    pub hd95: Option<f64>,
    pub pred_volume: usize,
}

/// Per (schedule, model, increment) means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub schedule: String,
    pub model: String,
    pub increment: usize,
    pub magnitudes: String,
    pub n: usize,
    pub mean_dice: f64,
    pub mean_hd95: Option<f64>,
    pub hd95_undefined: usize,
    pub mean_pred_volume: f64,
}

/// Paired comparison of two models on one (schedule, metric), with
/// family-wise adjusted p-values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTest {
    pub schedule: String,
    pub metric: SweepMetric,
    pub model_a: String,
    pub model_b: String,
    /// `tested`, `indistinguishable` or `insufficient`.
    pub outcome: String,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub p_fdr: Option<f64>,
    pub p_fwer: Option<f64>,
    pub reject_fdr: bool,
    pub reject_fwer: bool,
    pub n_pairs: usize,
    /// Pairs dropped because a HD95 was undefined for either model.
    pub excluded: usize,
}

/// Spearman correlation of increment index with a model's mean Dice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTrend {
    pub schedule: String,
    pub model: String,
    pub rho: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGap {
    pub schedule: String,
    pub increment: usize,
    pub study_id: String,
    pub model_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub options: SweepOptions,
    pub schedules: Vec<SweepSchedule>,
    pub models: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub tests: Vec<SweepTest>,
    pub trends: Vec<SweepTrend>,
    pub gaps: Vec<SweepGap>,
    pub cells: Vec<SweepCell>,
}

/// Scores every model on every (schedule, increment, study) cell.
///
/// The corruption seed of a cell depends only on the sweep seed, the study id
/// and the increment, so all models see identical corrupted images. A cell in
/// which any model fails is recorded as a gap and dropped for every model.
pub fn noise_sweep(
    studies: &[Study],
    models: &[Model],
    schedules: &[SweepSchedule],
    options: &SweepOptions,
) -> Result<SweepReport> {
    ensure!(
        !studies.is_empty(),
        InvalidArgument,
        "noise sweep needs at least one study"
    );
    ensure!(
        !models.is_empty(),
        InvalidArgument,
        "noise sweep needs at least one model"
    );
    ensure!(
        options.alpha > 0.0 && options.alpha < 1.0,
        InvalidArgument,
        "alpha must lie in (0, 1)"
    );
    let mut names = HashSet::new();
    for s in schedules {
        s.validate()?;
        ensure!(
            names.insert(&s.name),
            InvalidArgument,
            "duplicate schedule name {}",
            s.name
        );
    }
    let mut model_ids = HashSet::new();
    for m in models {
        ensure!(
            model_ids.insert(&m.id),
            InvalidArgument,
            "duplicate model id {}",
            m.id
        );
    }
    for s in studies {
        ensure!(
            s.label.is_some(),
            InvalidArgument,
            "study {} has no label",
            s.id
        );
    }

    let jobs: Vec<(usize, usize, usize)> = schedules
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            (0..s.n_steps()).flat_map(move |inc| (0..studies.len()).map(move |st| (si, inc, st)))
        })
        .collect();
    let run_cell = |&(si, inc, st): &(usize, usize, usize)| -> Result<std::result::Result<Vec<SweepCell>, Vec<SweepGap>>> {
        let schedule = &schedules[si];
        let study = &studies[st];
        let cell_seed = study_seed(options.seed, &format!("{}#{inc}", study.id));
        let corrupted = apply_combined(&study.image, &schedule.specs(inc, cell_seed)).map_err(|e| e.for_study(&study.id))?;
        let image = prepare_image(&corrupted);
        let label = study.label.as_ref().unwrap();
        let mut cells = Vec::with_capacity(models.len());
        let mut gaps = Vec::new();
        for m in models {
            let scored = run_segmenter(m.segmenter.as_ref(), &study.id, &image)
                .and_then(|p| score_prediction(&study.id, &m.id, 0, &schedule.name, &p, label, options.threshold));
            match scored {
                Ok(r) => cells.push(SweepCell {
                    schedule: schedule.name.clone(),
                    increment: inc,
                    study_id: study.id.clone(),
                    model_id: m.id.clone(),
                    dice: r.dice,
                    hd95: r.hd95,
                    pred_volume: r.pred_volume,
                }),
                Err(e) => gaps.push(SweepGap {
                    schedule: schedule.name.clone(),
                    increment: inc,
                    study_id: study.id.clone(),
                    model_id: m.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        Ok(if gaps.is_empty() { Ok(cells) } else { Err(gaps) })
    };
    let outcomes = match options.workers {
        Some(n) => {
            ensure!(n >= 1, InvalidArgument, "workers must be >= 1");
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
                .install(|| jobs.par_iter().map(run_cell).collect::<Result<Vec<_>>>())?
        }
        None => jobs.par_iter().map(run_cell).collect::<Result<Vec<_>>>()?,
    };

    let mut cells = Vec::new();
    let mut gaps = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => cells.extend(c),
            Err(g) => gaps.extend(g),
        }
    }
    let model_order: Vec<String> = models.iter().map(|m| m.id.clone()).collect();
    let rows = aggregate(schedules, &model_order, &cells);
    let mut tests = pair_tests(schedules, &model_order, &cells, options.pairing)?;
    adjust(&mut tests, options.alpha)?;
    let trends = trends(&rows);
    Ok(SweepReport {
        options: options.clone(),
        schedules: schedules.to_vec(),
        models: model_order,
        rows,
        tests,
        trends,
        gaps,
        cells,
    })
}

type CellIndex<'a> = BTreeMap<(&'a str, &'a str, usize), Vec<&'a SweepCell>>;

/// Cells keyed by (schedule, model, increment), each list in study order.
fn index(cells: &[SweepCell]) -> CellIndex<'_> {
    let mut m: CellIndex = BTreeMap::new();
    for c in cells {
        m.entry((&c.schedule, &c.model_id, c.increment))
            .or_default()
            .push(c);
    }
    m
}

fn aggregate(schedules: &[SweepSchedule], models: &[String], cells: &[SweepCell]) -> Vec<SweepRow> {
    let idx = index(cells);
    let mut rows = Vec::new();
    for s in schedules {
        for m in models {
            for inc in 0..s.n_steps() {
                let Some(cs) = idx.get(&(s.name.as_str(), m.as_str(), inc)) else {
                    continue;
                };
                let dice: Vec<f64> = cs.iter().map(|c| c.dice).collect();
                let hd: Vec<f64> = cs.iter().filter_map(|c| c.hd95).collect();
                let vol: Vec<f64> = cs.iter().map(|c| c.pred_volume as f64).collect();
                rows.push(SweepRow {
                    schedule: s.name.clone(),
                    model: m.clone(),
                    increment: inc,
                    magnitudes: s.magnitude_label(inc),
                    n: cs.len(),
                    mean_dice: stats::mean(&dice),
                    mean_hd95: (!hd.is_empty()).then(|| stats::mean(&hd)),
                    hd95_undefined: cs.len() - hd.len(),
                    mean_pred_volume: stats::mean(&vol),
                });
            }
        }
    }
    rows
}

/// Paired vectors for two models on one schedule and metric, with the number
/// of pairs dropped for undefined values.
fn paired_vectors(
    idx: &CellIndex<'_>,
    schedule: &SweepSchedule,
    a: &str,
    b: &str,
    metric: SweepMetric,
    pairing: Pairing,
) -> (Vec<f64>, Vec<f64>, usize) {
    let (mut va, mut vb, mut excluded) = (Vec::new(), Vec::new(), 0);
    for inc in 0..schedule.n_steps() {
        let (Some(ca), Some(cb)) = (
            idx.get(&(schedule.name.as_str(), a, inc)),
            idx.get(&(schedule.name.as_str(), b, inc)),
        ) else {
            continue;
        };
        let mut xa = Vec::new();
        let mut xb = Vec::new();
        for (p, q) in ca.iter().zip(cb.iter()) {
            debug_assert_eq!(p.study_id, q.study_id);
            match (metric.value(p), metric.value(q)) {
                (Some(x), Some(y)) => {
                    xa.push(x);
                    xb.push(y);
                }
                _ => excluded += 1,
            }
        }
        match pairing {
            Pairing::PerImage => {
                va.extend(xa);
                vb.extend(xb);
            }
            Pairing::IncrementMeans => {
                if !xa.is_empty() {
                    va.push(stats::mean(&xa));
                    vb.push(stats::mean(&xb));
                }
            }
        }
    }
    (va, vb, excluded)
}

fn pair_tests(
    schedules: &[SweepSchedule],
    models: &[String],
    cells: &[SweepCell],
    pairing: Pairing,
) -> Result<Vec<SweepTest>> {
    let idx = index(cells);
    let mut tests = Vec::new();
    for s in schedules {
        for metric in SweepMetric::ALL {
            for i in 0..models.len() {
                for j in i + 1..models.len() {
                    let (a, b) = (&models[i], &models[j]);
                    let (va, vb, excluded) = paired_vectors(&idx, s, a, b, metric, pairing);
                    let mut test = SweepTest {
                        schedule: s.name.clone(),
                        metric,
                        model_a: a.clone(),
                        model_b: b.clone(),
                        outcome: "insufficient".into(),
                        t: None,
                        df: None,
                        p: None,
                        p_fdr: None,
                        p_fwer: None,
                        reject_fdr: false,
                        reject_fwer: false,
                        n_pairs: va.len(),
                        excluded,
                    };
                    if va.len() >= 2 {
                        let o = stats::compare_paired(&va, &vb)?;
                        test.outcome = o.label().into();
                        if let PairedOutcome::Tested(r) = o {
                            test.t = Some(r.statistic);
                            test.df = Some(r.df);
                            test.p = Some(r.p_value);
                        }
                    }
                    tests.push(test);
                }
            }
        }
    }
    Ok(tests)
}

/// BH and Holm over every test that produced a p-value.
fn adjust(tests: &mut [SweepTest], alpha: f64) -> Result<()> {
    let tested: Vec<usize> = (0..tests.len()).filter(|&i| tests[i].p.is_some()).collect();
    if tested.is_empty() {
        return Ok(());
    }
    let p: Vec<f64> = tested.iter().map(|&i| tests[i].p.unwrap()).collect();
    let fdr = stats::bh_fdr(&p, alpha)?;
    let fwer = stats::holm_fwer(&p, alpha)?;
    for (k, &i) in tested.iter().enumerate() {
        tests[i].p_fdr = Some(fdr.adjusted[k]);
        tests[i].p_fwer = Some(fwer.adjusted[k]);
        tests[i].reject_fdr = fdr.reject[k];
        tests[i].reject_fwer = fwer.reject[k];
    }
    Ok(())
}

fn trends(rows: &[SweepRow]) -> Vec<SweepTrend> {
    let mut groups: Vec<((String, String), Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let key = (r.schedule.clone(), r.model.clone());
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push((r.increment as f64, r.mean_dice)),
            None => groups.push((key, vec![(r.increment as f64, r.mean_dice)])),
        }
    }
    groups
        .into_iter()
        .map(|((schedule, model), pts)| {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let r = stats::spearman(&x, &y).ok();
            SweepTrend {
                schedule,
                model,
                rho: r.map(|r| r.statistic),
                p: r.map(|r| r.p_value),
            }
        })
        .collect()
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

impl SweepReport {
    pub fn write_rows<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.rows, out)
    }

    pub fn write_tests<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.tests, out)
    }

    pub fn write_cells<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.cells, out)
    }

    pub fn rows_for(&self, schedule: &str, model: &str) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.schedule == schedule && r.model == model)
            .collect()
    }
}
