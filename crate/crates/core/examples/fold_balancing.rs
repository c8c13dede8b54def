//! Searches for a fold assignment that balances lesion volume, age, sex and
//! phenotype, then prints the per-fold summary.

use lesioncal::folds::{
    balance_folds, fold_summary, write_fold_summary, Phenotype, Sex, StudyRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn main() -> lesioncal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vol = LogNormal::<f64>::new(6.0, 1.2).unwrap();
    let records: Vec<StudyRecord> = (0..120)
        .map(|i| StudyRecord {
            id: format!("s{i:03}"),
            image_path: format!("images/s{i:03}.nii.gz").into(),
            label_path: Some(format!("labels/s{i:03}.nii.gz").into()),
            volume: vol.sample(&mut rng).round() as usize + 1,
            age: rng.gen_range(20.0..90.0),
            sex: if rng.gen_bool(0.43) { Sex::F } else { Sex::M },
            phenotype: Phenotype::Archetype(rng.gen_range(0..4)),
            is_control: false,
        })
        .collect();
    let plan = balance_folds(&records, 5, 2000, 7)?;
    let d = &plan.diagnostics;
    println!(
        "volume KW p {:.3} (pool median {:.3})",
        d.kw_p, d.pool_median_kw_p
    );
    println!("fold sizes {:?}", d.fold_sizes);
    write_fold_summary(&fold_summary(&plan, &records)?, std::io::stdout())
}
