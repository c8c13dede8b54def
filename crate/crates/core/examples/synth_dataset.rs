//! Generates a small phantom dataset on disk: images, labels, archetype maps
//! and a manifest that the command-line tool can consume.
//!
//! Usage: `cargo run --example synth_dataset [out_dir]`

use std::path::PathBuf;

use lesioncal::synth::{make_dataset, PhantomSpec};

fn main() -> lesioncal::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantoms".into()));
    let spec = PhantomSpec {
        dims: [32, 32, 32],
        seed: 11,
        ..Default::default()
    };
    let ds = make_dataset(20, 10, &spec, &out)?;
    for r in ds.records.iter().take(5) {
        println!(
            "{}  volume {:>5}  age {:>5.1}  sex {:?}  phenotype {:?}",
            r.id, r.volume, r.age, r.sex, r.phenotype
        );
    }
    println!(
        "... {} studies, manifest {}",
        ds.records.len(),
        ds.manifest.display()
    );
    Ok(())
}
