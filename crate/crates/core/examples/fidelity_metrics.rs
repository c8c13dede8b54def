//! Dice, HD95 and the training losses on a sphere against a shifted copy.

use lesioncal::metrics::{
    combined_loss, dice_score, focal_loss, hd95, soft_dice_loss, thresholded_average_loss,
    MetricParams,
};
use lesioncal::{BinaryMask, GridVolume, ProbabilityMap};

fn sphere(c: [f64; 3], r: f64) -> lesioncal::Result<BinaryMask> {
    let v = GridVolume::from_fn([32, 32, 32], [1.0; 3], |i, j, k| {
        let d = [i as f64 - c[0], j as f64 - c[1], k as f64 - c[2]];
        f64::from(d.iter().map(|x| x * x).sum::<f64>() <= r * r)
    })?;
    BinaryMask::new(v)
}

fn main() -> lesioncal::Result<()> {
    let params = MetricParams::default();
    let truth = sphere([16.0, 16.0, 16.0], 6.0)?;
    for shift in [0.0, 1.0, 2.0, 4.0, 8.0] {
        let pred = sphere([16.0 + shift, 16.0, 16.0], 6.0)?;
        let hd = hd95(&pred, &truth)?.map_or("undefined".into(), |h| format!("{h:.2}"));
        println!(
            "shift {shift:>3}: dice {:.3}  hd95 {hd}",
            dice_score(&pred, &truth)?
        );
    }

    // a blurred prediction: probability falls off linearly past the boundary
    let soft = ProbabilityMap::new(GridVolume::from_fn([32, 32, 32], [1.0; 3], |i, j, k| {
        let d = [i, j, k].map(|x| x as f64 - 16.0);
        let r = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        (1.0 - (r - 5.0) / 3.0).clamp(0.0, 1.0)
    })?)?;
    println!(
        "soft dice loss  {:.4}",
        soft_dice_loss(&soft, &truth, &params)?
    );
    println!("focal loss      {:.6}", focal_loss(&soft, &truth, &params)?);
    println!(
        "TA loss         {:.4}",
        thresholded_average_loss(&soft, &params)
    );
    println!(
        "lesion loss     {:.4}",
        combined_loss(&soft, &truth, false, &params)?
    );
    println!(
        "control loss    {:.4}",
        combined_loss(&soft, &truth, true, &params)?
    );
    Ok(())
}
