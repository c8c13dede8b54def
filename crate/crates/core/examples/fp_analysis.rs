//! False-positive report on healthy controls for a lenient and a strict
//! threshold segmenter.

use lesioncal::harness::{fp_report, write_fp_table, Model, Study, ThresholdSegmenter};
use lesioncal::synth::{generate, PhantomSpec};

fn main() -> lesioncal::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 32],
        ..Default::default()
    };
    let (_, phantoms) = generate(0, 60, &spec)?;
    let controls: Vec<Study> = phantoms
        .into_iter()
        .map(|p| Study {
            id: p.record.id,
            image: p.image,
            label: None,
        })
        .collect();
    let models = vec![
        Model::new("lenient", ThresholdSegmenter::new(0.55, 0.2)?),
        Model::new("strict", ThresholdSegmenter::new(0.75, 0.2)?),
    ];
    let report = fp_report(&controls, &models, 0.5, 2000, 50, 3)?;
    write_fp_table(&report.table, std::io::stdout())?;
    for t in &report.tests {
        println!("{} vs {}: {}", t.model_a, t.model_b, t.outcome.label());
    }
    Ok(())
}
