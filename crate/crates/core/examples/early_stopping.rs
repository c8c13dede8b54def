//! Applies the joint Dice/HD95 patience rule to a synthetic training trace.

use lesioncal::metrics::{early_stop, MetricParams};

fn main() -> lesioncal::Result<()> {
    let patience = MetricParams::default().patience;
    // validation Dice and HD95 per epoch: steady gains, then a noisy plateau
    let trace: Vec<(f64, f64)> = (0..400)
        .map(|e| {
            let t = e as f64;
            let ramp = (t / 100.0).min(1.0);
            let dice = 0.85 * ramp + 0.01 * (t * 0.7).sin();
            let hd = 4.0 + 30.0 * (1.0 - ramp) + 0.2 * (t * 1.3).cos().abs();
            (dice, hd)
        })
        .collect();
    let res = early_stop(&trace, patience)?;
    println!("patience              {patience}");
    println!("last joint improvement {}", res.last_joint_improvement);
    println!(
        "stop epoch            {} (fired: {})",
        res.stop_epoch, res.stopped
    );
    let (d, h) = trace[res.best_epoch];
    println!(
        "kept checkpoint       {} (dice {d:.3}, hd95 {h:.2})",
        res.best_epoch
    );
    Ok(())
}
