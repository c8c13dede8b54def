//! Applies each artefact model to one phantom at increasing magnitude and
//! writes the results as NIfTI files.
//!
//! Usage: `cargo run --example corruption_gallery [out_dir]`

use std::path::PathBuf;

use lesioncal::corruption::{schedule, NoiseKind, NoiseSpec};
use lesioncal::nifti::{self, Datatype};
use lesioncal::synth::{generate, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "corruption_gallery".into()),
    );
    std::fs::create_dir_all(&out)?;
    let (_, phantoms) = generate(1, 0, &PhantomSpec::default())?;
    let clean = &phantoms[0].image;
    nifti::write_volume(clean, out.join("clean.nii.gz"), Datatype::Float32)?;

    for kind in NoiseKind::ALL {
        let s = schedule(kind, kind.default_max_magnitude(), 4)?;
        for (step, m) in s.magnitudes().into_iter().enumerate() {
            let noisy = NoiseSpec::new(kind, m, 21)?.apply(clean)?;
            let rmse = (noisy
                .data()
                .iter()
                .zip(clean.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / clean.len() as f64)
                .sqrt();
            println!(
                "{:8} step {step} magnitude {m:.3}  rmse {rmse:.4}",
                kind.name()
            );
            let name = format!("{}_{step}.nii.gz", kind.name());
            nifti::write_volume(&noisy, out.join(name), Datatype::Float32)?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
