//! Dice and HD95 under increasing Rician noise and a combined Gibbs + bias
//! schedule, with the per-schedule trend test.

use lesioncal::corruption::{schedule, NoiseKind};
use lesioncal::harness::{
    noise_sweep, Model, Study, SweepOptions, SweepSchedule, ThresholdSegmenter,
};
use lesioncal::synth::{generate, PhantomSpec};

fn main() -> lesioncal::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 32],
        ..Default::default()
    };
    let (_, phantoms) = generate(24, 0, &spec)?;
    let studies: Vec<Study> = phantoms
        .into_iter()
        .map(|p| Study {
            id: p.record.id,
            image: p.image,
            label: Some(p.mask),
        })
        .collect();
    let models = vec![
        Model::new("theta_0.5", ThresholdSegmenter::new(0.5, 0.2)?),
        Model::new("theta_0.6", ThresholdSegmenter::new(0.6, 0.2)?),
    ];
    let schedules = vec![
        SweepSchedule::single(schedule(NoiseKind::Rician, 0.3, 6)?),
        SweepSchedule {
            name: "gibbs+bias".into(),
            components: vec![
                schedule(NoiseKind::Gibbs, 0.6, 6)?,
                schedule(NoiseKind::Bias, 0.3, 6)?,
            ],
        },
    ];
    let options = SweepOptions {
        seed: 5,
        ..Default::default()
    };
    let report = noise_sweep(&studies, &models, &schedules, &options)?;
    report.write_rows(std::io::stdout())?;
    println!();
    for t in &report.trends {
        println!(
            "trend {} / {}: rho {:?} p {:?}",
            t.schedule, t.model, t.rho, t.p
        );
    }
    println!();
    report.write_tests(std::io::stdout())
}
