use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{betti, betti_error, cldice, dice, hausdorff_with, BettiTriple, HausdorffMode, PatchSpec};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, LabelVolume, ProbVolume};
use crate::skeleton::ThinningParams;

/// Prediction handed to [`evaluate`]. Scores are discretized by argmax.
#[derive(Clone, Copy, Debug)]
pub enum EvalInput<'a> {
    Labels(&'a LabelVolume),
    Scores(&'a ProbVolume),
}

impl<'a> From<&'a LabelVolume> for EvalInput<'a> {
    fn from(l: &'a LabelVolume) -> Self {
        EvalInput::Labels(l)
    }
}

impl<'a> From<&'a ProbVolume> for EvalInput<'a> {
    fn from(p: &'a ProbVolume) -> Self {
        EvalInput::Scores(p)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    /// Foreground labels to score; `None` uses every label found in either input.
    pub classes: Option<Vec<u32>>,
    pub patch: PatchSpec,
    pub hausdorff: HausdorffMode,
    pub thinning: ThinningParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: u32,
    pub dice: f64,
    pub cldice: f64,
    /// `None` when either side has no voxel of this class.
    pub hausdorff_mm: Option<f64>,
    pub in_gt: bool,
    pub in_pred: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Macro average over classes present in the ground truth.
    pub dice: f64,
    pub cldice: f64,
    pub hausdorff_mm: Option<f64>,
    /// Betti numbers of the foreground union.
    pub betti_pred: BettiTriple,
    pub betti_gt: BettiTriple,
    pub betti_error: f64,
    /// Binary scores of the foreground union.
    pub union_dice: f64,
    pub union_cldice: f64,
    pub per_class: Vec<ClassReport>,
    /// Classes whose Hausdorff distance is undefined and left out of the average.
    pub undefined_hausdorff: Vec<u32>,
}

fn class_report(pred: &LabelVolume, gt: &LabelVolume, label: u32, spec: &EvalSpec) -> Result<ClassReport> {
    let p = pred.class_mask(label);
    let g = gt.class_mask(label);
    let hausdorff_mm = if p.is_empty() || g.is_empty() { None } else { Some(hausdorff_with(&p, &g, spec.hausdorff)?) };
    Ok(ClassReport {
        label,
        dice: dice(&p, &g)?,
        cldice: cldice(&p, &g, &spec.thinning)?,
        hausdorff_mm,
        in_gt: !g.is_empty(),
        in_pred: !p.is_empty(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Full metric suite. Overlap and distance scores are computed per class
/// and macro-averaged; Betti quantities use the foreground union.
pub fn evaluate<'a>(pred: impl Into<EvalInput<'a>>, gt: &LabelVolume, spec: &EvalSpec) -> Result<MetricsReport> {
    let argmaxed;
    let pred = match pred.into() {
        EvalInput::Labels(l) => l,
        EvalInput::Scores(p) => {
            argmaxed = p.argmax();
            &argmaxed
        }
    };
    if pred.shape() != gt.shape() {
        return Err(Error::shape_mismatch(pred.shape(), gt.shape()));
    }
    spec.thinning.validate()?;

    let classes = match &spec.classes {
        Some(list) => {
            if let Some(bad) = pred.labels().into_iter().find(|l| !list.contains(l)) {
                return Err(Error::LabelMismatch(bad));
            }
            let mut list: Vec<u32> = list.iter().copied().filter(|&l| l != 0).collect();
            list.sort_unstable();
            list.dedup();
            list
        }
        None => {
            let mut all = pred.labels();
            all.extend(gt.labels());
            all.sort_unstable();
            all.dedup();
            all
        }
    };

    let per_class = classes.par_iter().map(|&c| class_report(pred, gt, c, spec)).collect::<Result<Vec<_>>>()?;

    let pf: BinaryMask = pred.foreground();
    let gf: BinaryMask = gt.foreground();
    let union_dice = dice(&pf, &gf)?;
    let union_cldice = cldice(&pf, &gf, &spec.thinning)?;
    let betti_pred = betti(&pf);
    let betti_gt = betti(&gf);
    let betti_err = betti_error(&pf, &gf, &spec.patch)?;

    let scored: Vec<&ClassReport> = per_class.iter().filter(|r| r.in_gt).collect();
    let (dice_avg, cldice_avg, hd) = if scored.is_empty() {
        let hd = if pf.is_empty() || gf.is_empty() { None } else { Some(hausdorff_with(&pf, &gf, spec.hausdorff)?) };
        (union_dice, union_cldice, hd)
    } else {
        (
            mean(scored.iter().map(|r| r.dice)).unwrap_or(0.0),
            mean(scored.iter().map(|r| r.cldice)).unwrap_or(0.0),
            mean(scored.iter().filter_map(|r| r.hausdorff_mm)),
        )
    };
    let undefined_hausdorff = scored.iter().filter(|r| r.hausdorff_mm.is_none()).map(|r| r.label).collect();

    Ok(MetricsReport {
        dice: dice_avg,
        cldice: cldice_avg,
        hausdorff_mm: hd,
        betti_pred,
        betti_gt,
        betti_error: betti_err,
        union_dice,
        union_cldice,
        per_class,
        undefined_hausdorff,
    })
}
