//! Evaluation metrics: Dice, clDice, Betti numbers and Hausdorff distance.
//!
//! Foreground connectivity is 26 (8 in 2D), background connectivity is 6
//! (4 in 2D).

mod betti;
mod evaluate;
mod hausdorff;

pub use betti::{betti, betti_error, euler_characteristic, BettiTriple, PatchMode, PatchSpec};
pub use evaluate::{evaluate, ClassReport, EvalInput, EvalSpec, MetricsReport};
pub use hausdorff::{hausdorff, hausdorff_with, HausdorffMode};

use crate::error::Result;
use crate::grid::BinaryMask;
use crate::skeleton::{soft_skeleton, ThinningParams};

/// `2|P∩G| / (|P|+|G|)`; two empty masks score 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * pred.intersection_count(gt) as f64 / total as f64)
}

/// Harmonic mean of topology precision and sensitivity.
///
/// One empty skeleton scores 0, two empty skeletons score 1.
pub fn cldice(pred: &BinaryMask, gt: &BinaryMask, params: &ThinningParams) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    let sp = soft_skeleton(pred, params).mask;
    let sg = soft_skeleton(gt, params).mask;
    Ok(cldice_from_skeletons(pred, gt, &sp, &sg))
}

pub(crate) fn cldice_from_skeletons(pred: &BinaryMask, gt: &BinaryMask, sp: &BinaryMask, sg: &BinaryMask) -> f64 {
    match (sp.is_empty(), sg.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let tprec = sp.intersection_count(gt) as f64 / sp.count() as f64;
    let tsens = sg.intersection_count(pred) as f64 / sg.count() as f64;
    if tprec + tsens == 0.0 {
        return 0.0;
    }
    2.0 * tprec * tsens / (tprec + tsens)
}
