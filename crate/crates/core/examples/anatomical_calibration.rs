//! Voxel-wise score-by-location analysis. A segmenter that fails inside one
//! archetype's territory is compared with one that does not; permutation
//! testing should flag only the first.

use lesioncal::anatomy::{clusters, density_stack, permutation_fwe, GlmSpec};
use lesioncal::corruption::apply_rician;
use lesioncal::harness::{prepare_image, Segmenter, ThresholdSegmenter};
use lesioncal::metrics::{binarize, dice_score};
use lesioncal::seed::study_seed;
use lesioncal::synth::{generate, PhantomSpec};
use lesioncal::{BinaryMask, GridVolume};

fn main() -> lesioncal::Result<()> {
    let spec = PhantomSpec {
        n_archetypes: 8,
        lesion_radius_log_sd: 0.0,
        seed: 500,
        ..Default::default()
    };
    let (atlas, phantoms) = generate(64, 0, &spec)?;
    let images = phantoms
        .iter()
        .map(|p| {
            Ok(prepare_image(&apply_rician(
                &p.image,
                0.08,
                study_seed(1, &p.record.id),
            )?))
        })
        .collect::<lesioncal::Result<Vec<GridVolume>>>()?;
    let masks: Vec<BinaryMask> = phantoms.iter().map(|p| p.mask.clone()).collect();
    let ids = phantoms.iter().map(|p| p.record.id.clone()).collect();
    let glm = GlmSpec {
        n_perm: 500,
        seed: 1,
        ..Default::default()
    };
    let stack = density_stack(ids, &masks, &glm)?;

    let fair = ThresholdSegmenter::new(0.5, 0.2)?;
    let handicapped = fair
        .clone()
        .with_region(atlas.mask(0, atlas.threshold()), 0.9)?;
    for (name, seg) in [("fair", &fair), ("handicapped", &handicapped)] {
        let scores = phantoms
            .iter()
            .zip(&images)
            .map(|(p, img)| dice_score(&binarize(&seg.segment(&p.record.id, img)?, 0.5), &p.mask))
            .collect::<lesioncal::Result<Vec<f64>>>()?;
        let fwe = permutation_fwe(&stack, &scores, None, &glm)?;
        let found = clusters(&fwe.tmap.t, fwe.t_threshold, Some(&fwe.p_corrected));
        println!(
            "{name}: |t| threshold {:.2}, {} significant voxels, {} clusters",
            fwe.t_threshold,
            fwe.significant().len(),
            found.len()
        );
        for c in found.iter().take(3) {
            println!(
                "  size {:>4}  peak t {:+.2} at {:?}  p {:?}",
                c.size, c.peak_t, c.peak_xyz, c.corrected_p
            );
        }
    }
    println!("archetype 0 centre {:?}", spec.archetype_centres()[0]);
    Ok(())
}
