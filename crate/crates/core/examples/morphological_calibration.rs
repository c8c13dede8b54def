//! Embeds ground-truth lesion shapes, projects two segmenters' predictions
//! into the same space and compares their distances to the truth.

use lesioncal::corruption::apply_rician;
use lesioncal::harness::{prepare_image, Segmenter, ThresholdSegmenter};
use lesioncal::metrics::binarize;
use lesioncal::morphology::{
    compare_models, compute_alignment, embed_new, embedding_distances, fit_embedding,
    EmbeddingParams, LesionVector, StudyCoord,
};
use lesioncal::synth::{generate, PhantomSpec};

fn main() -> lesioncal::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 32],
        seed: 2,
        ..Default::default()
    };
    let (_, phantoms) = generate(60, 0, &spec)?;
    let gt = phantoms
        .iter()
        .map(|p| LesionVector::from_mask(&p.record.id, &p.mask, 2))
        .collect::<lesioncal::Result<Vec<_>>>()?;
    let features: Vec<Vec<f64>> = gt.iter().map(|v| v.features.clone()).collect();
    let params = EmbeddingParams {
        seed: 4,
        ..Default::default()
    };
    let model = fit_embedding(&features, &params)?;
    let raw = model.coords();
    let align = compute_alignment(&raw)?;
    let gt_coords: Vec<StudyCoord> = gt
        .iter()
        .zip(align.apply(&raw))
        .map(|(v, p)| StudyCoord::new(&v.study_id, p))
        .collect();

    let mut summaries = Vec::new();
    for (name, theta) in [("theta_0.5", 0.5), ("theta_0.7", 0.7)] {
        let seg = ThresholdSegmenter::new(theta, 0.2)?;
        let mut vectors = Vec::new();
        for p in &phantoms {
            let img = prepare_image(&apply_rician(&p.image, 0.1, 9)?);
            let pred = binarize(&seg.segment(&p.record.id, &img)?, 0.5);
            vectors.push(LesionVector::from_mask(&p.record.id, &pred, 2)?);
        }
        let feats: Vec<Vec<f64>> = vectors.iter().map(|v| v.features.clone()).collect();
        let coords: Vec<StudyCoord> = vectors
            .iter()
            .zip(align.apply(&embed_new(&model, &feats)?))
            .map(|(v, p)| StudyCoord::new(&v.study_id, p))
            .collect();
        let d = embedding_distances(&gt_coords, &coords)?;
        println!(
            "{name}: mean distance {:.3}, median {:.3}",
            d.mean, d.median
        );
        summaries.push(d);
    }
    let outcome = compare_models(&summaries[0], &summaries[1])?;
    println!(
        "paired comparison: {} {:?}",
        outcome.label(),
        outcome.test()
    );
    Ok(())
}
