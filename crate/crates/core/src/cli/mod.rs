//! Command implementations behind the `lesioncal` binary. Every command reads
//! a [`RunConfig`], writes its reports into an output directory and records a
//! `run_metadata.json` next to them.

mod config;

pub use config::{
    apply_override, load_config, parse_config, AnatomyConfig, DataConfig, FoldsConfig,
    HarnessConfig, LoadedConfig, MorphologyConfig, NoiseConfig, RunConfig, ScheduleEntry,
    SynthConfig,
};

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::anatomy::{
    clusters, density_stack, overlap_map, permutation_fwe, write_clusters, ScoreName,
};
use crate::error::{Error, Result};
use crate::folds::{
    aggregate_cv, assign_phenotype, balance_folds, fold_summary, read_manifest, write_fold_summary,
    ArchetypeAtlas, CvSummary, FoldPlan, StudyRecord,
};
use crate::harness::{
    cv_evaluate, fp_report, noise_sweep, prepare_image, run_segmenter, write_fp_bootstrap,
    write_fp_table, Model, Study, SweepOptions,
};
use crate::metrics::{binarize, read_metric_rows, write_metric_rows, MetricRow};
use crate::morphology::{
    compute_alignment, embed_new, embedding_distances, fit_embedding, DistanceSummary,
    LesionVector, StudyCoord,
};
use crate::nifti::{self, Datatype};
use crate::stats::PairedOutcome;
use crate::synth::make_dataset;
use crate::volume::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Synth,
    Folds,
    Score,
    Anatomy,
    Morphology,
    NoiseSweep,
    FpReport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Folds => "folds",
            Command::Score => "score",
            Command::Anatomy => "anatomy",
            Command::Morphology => "morphology",
            Command::NoiseSweep => "noise-sweep",
            Command::FpReport => "fp-report",
        }
    }
}

/// Process exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Written as `run_metadata.json` beside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub command: Command,
    pub toolkit_version: String,
    pub config_sha256: String,
    pub overrides: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    base: &'a Path,
    out: PathBuf,
    outputs: Vec<String>,
}

fn require<'a, T>(section: &'a Option<T>, key: &str, cmd: Command) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "{key}: section required by the {} command",
            cmd.name()
        ))
    })
}

impl<'a> Run<'a> {
    fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<std::fs::File>> {
        let path = self.out.join(name);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn write_csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut dyn Write) -> Result<()>,
    ) -> Result<()> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(self.out.join(name), e))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(self.out.join(name), e))
    }

    fn write_nifti(&mut self, name: &str, v: &crate::volume::GridVolume) -> Result<()> {
        nifti::write_volume(v, self.out.join(name), Datatype::Float32)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn records(&self, cmd: Command) -> Result<Vec<StudyRecord>> {
        let data = require(&self.cfg.data, "data", cmd)?;
        read_manifest(self.path(&data.manifest))
    }

    fn models(&self, cmd: Command) -> Result<Vec<Model>> {
        let h = require(&self.cfg.harness, "harness", cmd)?;
        h.models
            .iter()
            .map(|(id, handle)| {
                Ok(Model {
                    id: id.clone(),
                    segmenter: handle
                        .build(self.base)
                        .map_err(|e| Error::Config(format!("harness.models.{id}: {e}")))?,
                })
            })
            .collect()
    }
}

fn load_studies<'r>(records: impl IntoIterator<Item = &'r StudyRecord>) -> Result<Vec<Study>> {
    let recs: Vec<&StudyRecord> = records.into_iter().collect();
    recs.par_iter().map(|r| Study::load(r)).collect()
}

fn lesion_records(records: &[StudyRecord]) -> impl Iterator<Item = &StudyRecord> {
    records
        .iter()
        .filter(|r| !r.is_control && r.label_path.is_some())
}

/// Loads `config`, applies `overrides` and runs `command`, writing into `out`
/// (or the config's `output` directory).
pub fn run(
    command: Command,
    config: &Path,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<RunMetadata> {
    let loaded = load_config(config, overrides)?;
    let out = match (out, &loaded.config.output) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => loaded.base_dir.join(o),
        (None, None) => {
            return Err(Error::Config(
                "output: no output directory (pass --out or set output)".into(),
            ))
        }
    };
    run_loaded(command, &loaded, &out, overrides)
}

/// Runs `command` with an already parsed configuration.
pub fn run_loaded(
    command: Command,
    loaded: &LoadedConfig,
    out: &Path,
    overrides: &[String],
) -> Result<RunMetadata> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut run = Run {
        cfg: &loaded.config,
        base: &loaded.base_dir,
        out: out.to_path_buf(),
        outputs: Vec::new(),
    };
    let workers = loaded.config.harness.as_ref().and_then(|h| h.workers);
    let exec = |run: &mut Run| match command {
        Command::Synth => cmd_synth(run),
        Command::Folds => cmd_folds(run),
        Command::Score => cmd_score(run),
        Command::Anatomy => cmd_anatomy(run),
        Command::Morphology => cmd_morphology(run),
        Command::NoiseSweep => cmd_noise_sweep(run),
        Command::FpReport => cmd_fp_report(run),
    };
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("harness.workers: {e}")))?
            .install(|| exec(&mut run))?,
        None => exec(&mut run)?,
    }
    let mut outputs = std::mem::take(&mut run.outputs);
    outputs.push("run_metadata.json".into());
    outputs.sort();
    let meta = RunMetadata {
        command,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: loaded.sha256.clone(),
        overrides: overrides.to_vec(),
        seeds: loaded.config.seeds(),
        outputs,
    };
    run.write_json("run_metadata.json", &meta)?;
    Ok(meta)
}

fn cmd_synth(run: &mut Run) -> Result<()> {
    let s = require(&run.cfg.synth, "synth", Command::Synth)?;
    let ds = make_dataset(s.n_pos, s.n_ctrl, &s.spec(), &run.out)?;
    run.outputs.push("manifest.json".into());
    for p in ds
        .records
        .iter()
        .flat_map(|r| std::iter::once(&r.image_path).chain(&r.label_path))
        .chain(&ds.atlas_maps)
    {
        let rel = p.strip_prefix(&run.out).unwrap_or(p);
        run.outputs.push(rel.to_string_lossy().into_owned());
    }
    Ok(())
}

/// Lesion records with phenotypes reassigned from the atlas when one is configured.
fn phenotyped_records(run: &Run, cmd: Command) -> Result<Vec<StudyRecord>> {
    let folds = require(&run.cfg.folds, "folds", cmd)?;
    let mut records = run.records(cmd)?;
    if !folds.atlas.is_empty() {
        let paths: Vec<PathBuf> = folds.atlas.iter().map(|p| run.path(p)).collect();
        let atlas = ArchetypeAtlas::load(&paths, folds.threshold)?;
        records
            .par_iter_mut()
            .filter(|r| !r.is_control)
            .try_for_each(|r| -> Result<()> {
                let label = r.label_path.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("lesion study {} has no label", r.id))
                })?;
                let (v, _) = nifti::read_volume(label).map_err(|e| e.for_study(&r.id))?;
                r.phenotype =
                    assign_phenotype(&BinaryMask::threshold(&v, 0.5), &atlas, folds.threshold)
                        .map_err(|e| e.for_study(&r.id))?;
                Ok(())
            })?;
    }
    Ok(records)
}

fn search_plan(run: &Run, records: &[StudyRecord], cmd: Command) -> Result<FoldPlan> {
    let folds = require(&run.cfg.folds, "folds", cmd)?;
    let lesions: Vec<StudyRecord> = records.iter().filter(|r| !r.is_control).cloned().collect();
    let controls: Vec<String> = records
        .iter()
        .filter(|r| r.is_control)
        .map(|r| r.id.clone())
        .collect();
    let mut plan = balance_folds(&lesions, folds.k, folds.n_perm, folds.seed)?;
    plan.add_controls(&controls);
    Ok(plan)
}

fn cmd_folds(run: &mut Run) -> Result<()> {
    let records = phenotyped_records(run, Command::Folds)?;
    let plan = search_plan(run, &records, Command::Folds)?;
    run.write_json("foldplan.json", &plan)?;
    let summary = fold_summary(&plan, &records)?;
    run.write_csv("fold_summary.csv", |w| write_fold_summary(&summary, w))
}

fn fold_plan(run: &Run, records: &[StudyRecord], cmd: Command) -> Result<FoldPlan> {
    match run.cfg.folds.as_ref().and_then(|f| f.plan.as_ref()) {
        Some(p) => {
            let path = run.path(p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(serde_json::from_str(&text)?)
        }
        None => {
            let phenotyped = phenotyped_records(run, cmd)?;
            search_plan(run, &phenotyped, cmd)
        }
    }
    .and_then(|plan: FoldPlan| {
        if let Some(r) = records.iter().find(|r| plan.fold_of(&r.id).is_none()) {
            return Err(Error::InvalidArgument(format!(
                "study {} is not in the fold plan",
                r.id
            )));
        }
        Ok(plan)
    })
}

fn evaluate(run: &Run, cmd: Command) -> Result<(Vec<StudyRecord>, Vec<MetricRow>)> {
    let records = run.records(cmd)?;
    let plan = fold_plan(run, &records, cmd)?;
    let studies = load_studies(lesion_records(&records))?;
    let models = run.models(cmd)?;
    let rows = cv_evaluate(&plan, &studies, &models, run.cfg.metrics.threshold)?;
    Ok((records, rows))
}

#[derive(Serialize)]
struct PooledRow<'a> {
    model_id: &'a str,
    fold: String,
    n: usize,
    mean_dice: f64,
    mean_hd95: Option<f64>,
    hd95_excluded: usize,
}

fn write_pooled<W: Write>(summary: &[CvSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in summary {
        w.serialize(PooledRow {
            model_id: &s.model_id,
            fold: "pooled".into(),
            n: s.n,
            mean_dice: s.mean_dice,
            mean_hd95: s.mean_hd95,
            hd95_excluded: s.hd95_excluded,
        })?;
        for f in &s.per_fold {
            w.serialize(PooledRow {
                model_id: &s.model_id,
                fold: f.fold.to_string(),
                n: f.n,
                mean_dice: f.mean_dice,
                mean_hd95: f.mean_hd95,
                hd95_excluded: f.hd95_excluded,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn cmd_score(run: &mut Run) -> Result<()> {
    let (_, rows) = evaluate(run, Command::Score)?;
    let pooled = aggregate_cv(&rows)?;
    run.write_csv("metric_rows.csv", |w| write_metric_rows(&rows, w))?;
    run.write_csv("pooled_summary.csv", |w| write_pooled(&pooled, w))
}

#[derive(Serialize)]
struct AnatomySummary {
    model: String,
    score: ScoreName,
    n_subjects: usize,
    excluded_undefined: usize,
    df: usize,
    tested_voxels: usize,
    degenerate_voxels: usize,
    t_threshold: f64,
    significant_voxels: usize,
    n_perm: usize,
    alpha: f64,
}

fn cmd_anatomy(run: &mut Run) -> Result<()> {
    let cmd = Command::Anatomy;
    let a = require(&run.cfg.anatomy, "anatomy", cmd)?;
    let (records, rows) = match &a.metric_rows {
        Some(p) => {
            let path = run.path(p);
            let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            (run.records(cmd)?, read_metric_rows(f)?)
        }
        None => evaluate(run, cmd)?,
    };
    let mut models: Vec<&str> = rows.iter().map(|r| r.model_id.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    let model = match (&a.model, models.as_slice()) {
        (Some(m), _) => m.clone(),
        (None, [only]) => only.to_string(),
        (None, _) => {
            return Err(Error::Config(format!(
                "anatomy.model: choose one of {}",
                models.join(", ")
            )))
        }
    };
    let mut picked: Vec<(&MetricRow, f64)> = Vec::new();
    let mut excluded = 0;
    for r in rows.iter().filter(|r| r.model_id == model) {
        match a.score {
            ScoreName::Dice => picked.push((r, r.dice)),
            ScoreName::Hd95 => match r.hd95 {
                Some(h) => picked.push((r, h)),
                None => excluded += 1,
            },
        }
    }
    if picked.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no scored lesions for model {model}"
        )));
    }
    picked.sort_by(|x, y| x.0.study_id.cmp(&y.0.study_id));
    let by_id: BTreeMap<&str, &StudyRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let masks = picked
        .par_iter()
        .map(|(row, _)| {
            let rec = by_id.get(row.study_id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("study {} is not in the manifest", row.study_id))
            })?;
            Study::load(rec)?.label.ok_or_else(|| {
                Error::InvalidArgument(format!("study {} has no lesion label", row.study_id))
            })
        })
        .collect::<Result<Vec<BinaryMask>>>()?;
    let ids: Vec<String> = picked.iter().map(|(r, _)| r.study_id.clone()).collect();
    let scores: Vec<f64> = picked.iter().map(|(_, s)| *s).collect();
    let glm = a.glm();
    let stack = density_stack(ids, &masks, &glm)?;
    let volumes: Vec<f64> = masks.iter().map(|m| m.count() as f64).collect();
    let covariate = glm.include_volume_covariate.then_some(volumes.as_slice());
    let fwe = permutation_fwe(&stack, &scores, covariate, &glm)?;

    run.write_nifti("tmap.nii", &fwe.tmap.t)?;
    run.write_nifti("fwe_p.nii", &fwe.p_corrected)?;
    run.write_nifti("overlap.nii", &overlap_map(&masks, true)?)?;
    let found = clusters(&fwe.tmap.t, fwe.t_threshold, Some(&fwe.p_corrected));
    run.write_csv("clusters.csv", |w| write_clusters(&found, w))?;
    let summary = AnatomySummary {
        model,
        score: a.score,
        n_subjects: scores.len(),
        excluded_undefined: excluded,
        df: fwe.tmap.df,
        tested_voxels: fwe.tmap.tested.len(),
        degenerate_voxels: fwe.tmap.degenerate.len(),
        t_threshold: fwe.t_threshold,
        significant_voxels: fwe.significant().len(),
        n_perm: fwe.n_perm,
        alpha: fwe.alpha,
    };
    run.write_json("anatomy_summary.json", &summary)
}

#[derive(Serialize)]
struct PairTestRow<'a> {
    model_a: &'a str,
    model_b: &'a str,
    outcome: &'static str,
    t: Option<f64>,
    df: Option<f64>,
    p: Option<f64>,
}

impl<'a> PairTestRow<'a> {
    fn new(model_a: &'a str, model_b: &'a str, outcome: &PairedOutcome) -> Self {
        let t = outcome.test();
        Self {
            model_a,
            model_b,
            outcome: outcome.label(),
            t: t.map(|t| t.statistic),
            df: t.map(|t| t.df),
            p: t.map(|t| t.p_value),
        }
    }
}

fn write_serialized<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct EmbeddingRow<'a> {
    source: &'a str,
    study_id: &'a str,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct DistanceRow<'a> {
    model: &'a str,
    study_id: &'a str,
    distance: f64,
}

#[derive(Serialize)]
struct MorphologySummary<'a> {
    n_studies: usize,
    model_means: BTreeMap<&'a str, f64>,
    model_medians: BTreeMap<&'a str, f64>,
    degenerate: bool,
}

fn cmd_morphology(run: &mut Run) -> Result<()> {
    let cmd = Command::Morphology;
    let m = require(&run.cfg.morphology, "morphology", cmd)?;
    let records = run.records(cmd)?;
    let studies = load_studies(lesion_records(&records))?;
    let models = run.models(cmd)?;
    let threshold = run.cfg.metrics.threshold;

    let gt: Vec<LesionVector> = studies
        .par_iter()
        .map(|s| LesionVector::from_mask(&s.id, s.label.as_ref().unwrap(), m.downsample))
        .collect::<Result<_>>()?;
    let features: Vec<Vec<f64>> = gt.iter().map(|v| v.features.clone()).collect();
    let embedding = fit_embedding(&features, &m.params())?;
    let gt_raw = embedding.coords();
    let align = compute_alignment(&gt_raw)?;
    let gt_coords: Vec<StudyCoord> = gt
        .iter()
        .zip(align.apply(&gt_raw))
        .map(|(v, p)| StudyCoord::new(&v.study_id, p))
        .collect();

    let mut per_model: Vec<(String, Vec<StudyCoord>, DistanceSummary)> = Vec::new();
    for model in &models {
        let vectors = studies
            .par_iter()
            .map(|s| {
                let p = run_segmenter(model.segmenter.as_ref(), &s.id, &prepare_image(&s.image))?;
                LesionVector::from_mask(&s.id, &binarize(&p, threshold), m.downsample)
            })
            .collect::<Result<Vec<_>>>()?;
        let feats: Vec<Vec<f64>> = vectors.iter().map(|v| v.features.clone()).collect();
        let coords: Vec<StudyCoord> = vectors
            .iter()
            .zip(align.apply(&embed_new(&embedding, &feats)?))
            .map(|(v, p)| StudyCoord::new(&v.study_id, p))
            .collect();
        let d = embedding_distances(&gt_coords, &coords)?;
        per_model.push((model.id.clone(), coords, d));
    }

    let mut emb_rows: Vec<EmbeddingRow> = gt_coords
        .iter()
        .map(|c| EmbeddingRow {
            source: "ground_truth",
            study_id: &c.study_id,
            x: c.x,
            y: c.y,
        })
        .collect();
    let mut dist_rows = Vec::new();
    for (id, coords, d) in &per_model {
        emb_rows.extend(coords.iter().map(|c| EmbeddingRow {
            source: id,
            study_id: &c.study_id,
            x: c.x,
            y: c.y,
        }));
        dist_rows.extend(d.distances.iter().map(|s| DistanceRow {
            model: id,
            study_id: &s.study_id,
            distance: s.distance,
        }));
    }
    let mut tests = Vec::new();
    for i in 0..per_model.len() {
        for j in i + 1..per_model.len() {
            let outcome = crate::morphology::compare_models(&per_model[i].2, &per_model[j].2)?;
            tests.push((i, j, outcome));
        }
    }
    let test_rows: Vec<PairTestRow> = tests
        .iter()
        .map(|(i, j, o)| PairTestRow::new(&per_model[*i].0, &per_model[*j].0, o))
        .collect();
    let summary = MorphologySummary {
        n_studies: studies.len(),
        model_means: per_model
            .iter()
            .map(|(id, _, d)| (id.as_str(), d.mean))
            .collect(),
        model_medians: per_model
            .iter()
            .map(|(id, _, d)| (id.as_str(), d.median))
            .collect(),
        degenerate: embedding.degenerate,
    };

    run.write_csv("embedding.csv", |w| write_serialized(&emb_rows, w))?;
    run.write_csv("distances.csv", |w| write_serialized(&dist_rows, w))?;
    run.write_csv("model_tests.csv", |w| write_serialized(&test_rows, w))?;
    run.write_json("morphology_summary.json", &summary)?;
    embedding.save(&run.out.join("embedding_model.json"))?;
    run.outputs.push("embedding_model.json".into());
    Ok(())
}

fn cmd_noise_sweep(run: &mut Run) -> Result<()> {
    let cmd = Command::NoiseSweep;
    let n = require(&run.cfg.noise, "noise", cmd)?;
    let records = run.records(cmd)?;
    let studies = load_studies(lesion_records(&records))?;
    let models = run.models(cmd)?;
    let schedules: Vec<_> = n.schedules.iter().map(|s| s.schedule()).collect();
    let options = SweepOptions {
        seed: n.seed,
        threshold: run.cfg.metrics.threshold,
        pairing: n.pairing,
        alpha: n.alpha,
        workers: None,
    };
    let report = noise_sweep(&studies, &models, &schedules, &options)?;
    for g in &report.gaps {
        eprintln!(
            "gap: {} increment {} study {} model {}: {}",
            g.schedule, g.increment, g.study_id, g.model_id, g.error
        );
    }
    run.write_csv("sweep_report.csv", |w| report.write_rows(w))?;
    run.write_csv("sweep_tests.csv", |w| report.write_tests(w))?;
    run.write_csv("sweep_cells.csv", |w| report.write_cells(w))?;
    run.write_json("sweep_report.json", &report)
}

#[derive(Serialize)]
struct FpSummary<'a> {
    threshold: f64,
    n_boot: usize,
    size: usize,
    seed: u64,
    n_controls: usize,
    table: &'a [crate::harness::FpTableRow],
    tests: &'a [crate::harness::FpPairTest],
}

fn cmd_fp_report(run: &mut Run) -> Result<()> {
    let cmd = Command::FpReport;
    let h = require(&run.cfg.harness, "harness", cmd)?;
    let records = run.records(cmd)?;
    let controls = load_studies(records.iter().filter(|r| r.is_control))?;
    let models = run.models(cmd)?;
    let report = fp_report(
        &controls,
        &models,
        run.cfg.metrics.threshold,
        h.n_boot,
        h.size,
        h.seed,
    )?;
    let tests: Vec<PairTestRow> = report
        .tests
        .iter()
        .map(|t| PairTestRow::new(&t.model_a, &t.model_b, &t.outcome))
        .collect();
    run.write_csv("fp_report.csv", |w| write_fp_table(&report.table, w))?;
    run.write_csv("bootstrap.csv", |w| write_fp_bootstrap(&report, w))?;
    run.write_csv("fp_tests.csv", |w| write_serialized(&tests, w))?;
    run.write_csv("fp_counts.csv", |w| {
        let mut cw = csv::Writer::from_writer(w);
        let mut header = vec!["study_id".to_string()];
        header.extend(report.counts.iter().map(|(m, _)| m.clone()));
        cw.write_record(&header)?;
        for (i, id) in report.controls.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(report.counts.iter().map(|(_, c)| c[i].to_string()));
            cw.write_record(&rec)?;
        }
        cw.flush().map_err(csv::Error::from)?;
        Ok(())
    })?;
    let summary = FpSummary {
        threshold: report.threshold,
        n_boot: report.n_boot,
        size: report.size,
        seed: report.seed,
        n_controls: report.controls.len(),
        table: &report.table,
        tests: &report.tests,
    };
    run.write_json("fp_report.json", &summary)
}
