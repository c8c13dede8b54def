//! Writes a volume as `.nii` and `.nii.gz`, reads both back and reports
//! whether the float32 payload survived bit for bit.

use lesioncal::nifti::{self, Datatype};
use lesioncal::GridVolume;

fn main() -> lesioncal::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let v = GridVolume::from_fn([9, 7, 5], [1.0, 1.25, 2.5], |i, j, k| {
        (i as f64 * 0.3).sin() + j as f64 * 0.01 - k as f64
    })?;
    for name in ["volume.nii", "volume.nii.gz"] {
        let path = dir.path().join(name);
        nifti::write_volume(&v, &path, Datatype::Float32)?;
        let (back, header) = nifti::read_volume(&path)?;
        let exact = back
            .data()
            .iter()
            .zip(v.data())
            .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits());
        println!(
            "{name:14} {} bytes  dims {:?}  spacing {:?}  slope {}  bit-exact {exact}",
            std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
            back.dims(),
            back.spacing(),
            header.scl_slope,
        );
    }
    Ok(())
}
