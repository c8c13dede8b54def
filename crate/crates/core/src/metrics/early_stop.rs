use serde::Serialize;

use crate::error::{ensure, Error, Result};

/// Outcome of walking a validation trace with the joint Dice/HD patience rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EarlyStop {
    /// Epoch at which training stops, or the last epoch when the rule never fired.
    pub stop_epoch: usize,
    /// Whether the patience rule fired before the trace ended.
    pub stopped: bool,
    /// Epoch whose checkpoint is kept.
    pub best_epoch: usize,
    /// Last epoch where Dice and HD improved together.
    pub last_joint_improvement: usize,
}

/// Joint early stopping over `(dice, hd)` pairs per epoch.
///
/// An epoch is a joint improvement when its Dice strictly exceeds every
/// earlier Dice and its HD is strictly below every earlier HD; epoch 0 always
/// counts. Training stops at the first epoch more than `patience` epochs after
/// the last joint improvement. The kept checkpoint is the highest-Dice epoch in
/// `[last_joint, last_joint + patience]`, earliest on ties.
pub fn early_stop(trace: &[(f64, f64)], patience: usize) -> Result<EarlyStop> {
    ensure!(
        !trace.is_empty(),
        InvalidArgument,
        "early stopping needs a non-empty trace"
    );
    ensure!(patience >= 1, InvalidArgument, "patience must be >= 1");
    if trace.iter().any(|(d, h)| !d.is_finite() || !h.is_finite()) {
        return Err(Error::InvalidArgument(
            "trace entries must be finite".into(),
        ));
    }
    let mut best_dice = f64::NEG_INFINITY;
    let mut best_hd = f64::INFINITY;
    let mut last_joint = 0;
    let mut stop = None;
    for (epoch, &(dice, hd)) in trace.iter().enumerate() {
        if epoch - last_joint > patience {
            stop = Some(epoch);
            break;
        }
        if dice > best_dice && hd < best_hd {
            last_joint = epoch;
        }
        best_dice = best_dice.max(dice);
        best_hd = best_hd.min(hd);
    }
    let end = trace.len() - 1;
    let window_end = (last_joint + patience).min(end);
    let mut best_epoch = last_joint;
    for e in last_joint..=window_end {
        if trace[e].0 > trace[best_epoch].0 {
            best_epoch = e;
        }
    }
    Ok(EarlyStop {
        stop_epoch: stop.unwrap_or(end),
        stopped: stop.is_some(),
        best_epoch,
        last_joint_improvement: last_joint,
    })
}
