//! Flat-buffer entry points for foreign-language bindings.
//!
//! Inputs are borrowed views over caller-owned, C-contiguous buffers and are
//! never written. Every output is freshly allocated. The conversions match
//! the ones the command-line tool applies to files, so a binding and the CLI
//! agree bit for bit on the same data and configuration.
//!
//! Masks and labels are `u8`; predictions may be `u8` labels or `f32` scores.
//! Scores either carry a leading channel axis (`(C, [z,] y, x)`) or, with the
//! same rank as the ground truth, hold the foreground channel alone.

use serde::{Deserialize, Serialize};

use crate::edm::{self, EdmConfig, MiningSummary};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Shape, Spacing, ValueKind};
use crate::metrics::{self, EvalSpec, MetricsReport};
use crate::skeleton::{self, SkeletonMask, ThinningParams};
use crate::volio::{Datatype, PredictionData, Volume};

#[derive(Clone, Copy, Debug)]
pub enum ArrayData<'a> {
    U8(&'a [u8]),
    F32(&'a [f32]),
}

impl ArrayData<'_> {
    fn len(&self) -> usize {
        match self {
            ArrayData::U8(d) => d.len(),
            ArrayData::F32(d) => d.len(),
        }
    }

    fn item_size(&self) -> usize {
        match self {
            ArrayData::U8(_) => 1,
            ArrayData::F32(_) => 4,
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            ArrayData::U8(_) => "uint8",
            ArrayData::F32(_) => "float32",
        }
    }
}

/// Borrowed n-dimensional array. `strides` are in bytes, as most array
/// libraries report them.
#[derive(Clone, Copy, Debug)]
pub struct ArrayView<'a> {
    pub shape: &'a [usize],
    pub strides: &'a [isize],
    pub data: ArrayData<'a>,
}

impl<'a> ArrayView<'a> {
    /// Checks that the view describes one contiguous row-major block.
    pub fn validate(&self) -> Result<()> {
        if self.strides.len() != self.shape.len() {
            return Err(Error::InvalidGrid(format!(
                "{} strides for a rank-{} array",
                self.strides.len(),
                self.shape.len()
            )));
        }
        let count = self.shape.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
        if count != Some(self.data.len()) {
            return Err(Error::InvalidGrid(format!(
                "shape {:?} does not match a buffer of {} elements",
                self.shape,
                self.data.len()
            )));
        }
        let mut expected = self.data.item_size() as isize;
        for (axis, (&n, &s)) in self.shape.iter().zip(self.strides).enumerate().rev() {
            // Strides of length-1 axes are irrelevant to the layout.
            if n > 1 && s != expected {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has stride {s}, a contiguous row-major array needs {expected}"
                )));
            }
            expected *= n as isize;
        }
        Ok(())
    }

    fn grid_shape(dims: &[usize]) -> Result<Shape> {
        match *dims {
            [y, x] => Ok(Shape::new_2d(y, x)),
            [z, y, x] => Ok(Shape::new_3d(z, y, x)),
            _ => Err(Error::DimensionalityMismatch(format!("expected a 2D or 3D grid, got shape {dims:?}"))),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self.data {
            ArrayData::U8(d) => d.iter().map(|&v| f64::from(v)).collect(),
            ArrayData::F32(d) => d.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    fn require_u8(&self, role: &str) -> Result<&'a [u8]> {
        match self.data {
            ArrayData::U8(d) => Ok(d),
            other => Err(Error::UnsupportedDatatype(format!("{role} must be uint8, got {}", other.type_name()))),
        }
    }

    /// A `u8` grid of rank 2 or 3.
    fn to_mask(self, role: &str, spacing: Spacing) -> Result<BinaryMask> {
        self.validate()?;
        let data = self.require_u8(role)?;
        let shape = Self::grid_shape(self.shape)?;
        BinaryMask::new(shape, spacing, data.iter().map(|&v| u8::from(v != 0)).collect())
    }

    fn to_label_volume(self, role: &str, spacing: Spacing) -> Result<Volume> {
        self.validate()?;
        self.require_u8(role)?;
        Ok(Volume {
            shape: Self::grid_shape(self.shape)?,
            spacing,
            channels: 1,
            datatype: Datatype::U8,
            data: self.values(),
            spacing_repaired: false,
        })
    }

    /// A prediction relative to a ground-truth grid of shape `gt`.
    fn to_prediction(self, gt: Shape, spacing: Spacing, kind: ValueKind) -> Result<PredictionData> {
        self.validate()?;
        let (shape, channels, datatype) = match self.data {
            ArrayData::U8(_) => (Self::grid_shape(self.shape)?, 1, Datatype::U8),
            ArrayData::F32(_) if self.shape.len() == gt.rank() + 1 => {
                (Self::grid_shape(&self.shape[1..])?, self.shape[0], Datatype::F32)
            }
            ArrayData::F32(_) => (Self::grid_shape(self.shape)?, 1, Datatype::F32),
        };
        if shape != gt {
            return Err(Error::shape_mismatch(shape, gt));
        }
        if channels == 0 {
            return Err(Error::DimensionalityMismatch("score array has no channels".into()));
        }
        let vol = Volume { shape, spacing, channels, datatype, data: self.values(), spacing_repaired: false };
        vol.to_prediction(kind)
    }
}

/// Options for [`mine`]. `edm: None` uses the defaults for the volume shape.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineOptions {
    pub edm: Option<EdmConfig>,
    pub thinning: ThinningParams,
    pub spacing: Option<[f64; 3]>,
    /// Float predictions are logits rather than probabilities.
    pub logits: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MineOutput {
    /// Discontinuity mask, same shape and layout as the ground truth.
    pub mask: Vec<u8>,
    pub summary: MiningSummary,
    /// Configuration actually used.
    pub config: EdmConfig,
}

fn spacing_of(s: Option<[f64; 3]>) -> Result<Spacing> {
    let sp = Spacing(s.unwrap_or([1.0; 3]));
    sp.validate()?;
    Ok(sp)
}

fn kind_of(logits: bool) -> ValueKind {
    if logits {
        ValueKind::Logits
    } else {
        ValueKind::Probabilities
    }
}

/// Resolves the mining configuration for a volume.
pub fn effective_edm_config(cfg: Option<EdmConfig>, shape: Shape) -> EdmConfig {
    cfg.unwrap_or_else(|| EdmConfig::for_patch(shape))
}

pub fn mine(gt: ArrayView<'_>, pred: ArrayView<'_>, opts: &MineOptions) -> Result<MineOutput> {
    opts.thinning.validate()?;
    let spacing = spacing_of(opts.spacing)?;
    let gt = gt.to_mask("ground truth", spacing)?;
    let config = effective_edm_config(opts.edm, gt.shape());
    let outcome = match pred.to_prediction(gt.shape(), spacing, kind_of(opts.logits))? {
        PredictionData::Labels(l) => edm::mine(&gt, &l.foreground(), &config, &opts.thinning)?,
        PredictionData::Scores(p) => edm::mine(&gt, &p, &config, &opts.thinning)?,
    };
    let summary = outcome.summary();
    Ok(MineOutput { mask: outcome.mask.mask.into_data(), summary, config })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateOptions {
    pub spec: EvalSpec,
    pub spacing: Option<[f64; 3]>,
    pub logits: bool,
}

pub fn evaluate(pred: ArrayView<'_>, gt: ArrayView<'_>, opts: &EvaluateOptions) -> Result<MetricsReport> {
    let spacing = spacing_of(opts.spacing)?;
    let gt = gt.to_label_volume("ground truth", spacing)?.to_labels()?;
    match pred.to_prediction(gt.shape(), spacing, kind_of(opts.logits))? {
        PredictionData::Labels(l) => metrics::evaluate(&l, &gt, &opts.spec),
        PredictionData::Scores(p) => metrics::evaluate(&p, &gt, &opts.spec),
    }
}

pub fn soft_skeleton(mask: ArrayView<'_>, params: &ThinningParams) -> Result<Vec<u8>> {
    params.validate()?;
    let mask = mask.to_mask("mask", Spacing::UNIT)?;
    Ok(skeleton::soft_skeleton(&mask, params).mask.into_data())
}

/// Endpoints of a skeleton as `[z, y, x]` rows (`z = 0` for 2D input).
pub fn detect_endpoints(skel: ArrayView<'_>) -> Result<Vec<[usize; 3]>> {
    let mask = skel.to_mask("skeleton", Spacing::UNIT)?;
    let ends = skeleton::detect_endpoints(&SkeletonMask::from_mask(mask));
    Ok(ends.points.iter().map(|v| [v.z, v.y, v.x]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view<'a>(shape: &'a [usize], strides: &'a [isize], data: ArrayData<'a>) -> ArrayView<'a> {
        ArrayView { shape, strides, data }
    }

    #[test]
    fn contiguity_is_enforced() {
        let buf = [0u8; 24];
        assert!(view(&[2, 3, 4], &[12, 4, 1], ArrayData::U8(&buf)).validate().is_ok());
        assert!(view(&[1, 6, 4], &[0, 4, 1], ArrayData::U8(&buf)).validate().is_ok());
        assert!(view(&[2, 3, 4], &[1, 2, 6], ArrayData::U8(&buf)).validate().is_err());
        assert!(view(&[2, 3, 5], &[15, 5, 1], ArrayData::U8(&buf)).validate().is_err());
        let f = [0f32; 24];
        assert!(view(&[2, 3, 4], &[48, 16, 4], ArrayData::F32(&f)).validate().is_ok());
        assert!(view(&[2, 3, 4], &[12, 4, 1], ArrayData::F32(&f)).validate().is_err());
    }

    #[test]
    fn wrong_dtype_is_typed() {
        let f = [0f32; 8];
        let err = soft_skeleton(view(&[2, 2, 2], &[16, 8, 4], ArrayData::F32(&f)), &ThinningParams::default());
        assert!(matches!(err, Err(Error::UnsupportedDatatype(_))));
    }

    #[test]
    fn identical_inputs() {
        let shape = [9usize, 9, 9];
        let strides = [81isize, 9, 1];
        let mut buf = vec![0u8; 729];
        for x in 1..8 {
            buf[4 * 81 + 4 * 9 + x] = 1;
        }
        let gt = view(&shape, &strides, ArrayData::U8(&buf));
        let out = mine(gt, gt, &MineOptions::default()).unwrap();
        assert!(out.mask.iter().all(|&v| v == 0));
        assert!(out.summary.candidates.reduced.is_empty());

        let report = evaluate(gt, gt, &EvaluateOptions::default()).unwrap();
        assert_eq!(report.dice, 1.0);

        let skel = soft_skeleton(gt, &ThinningParams::default()).unwrap();
        assert_eq!(skel, buf);
        let ends = detect_endpoints(view(&shape, &strides, ArrayData::U8(&skel))).unwrap();
        assert_eq!(ends, vec![[4, 4, 1], [4, 4, 7]]);
    }

    #[test]
    fn shape_mismatch_is_typed() {
        let a = [1u8; 8];
        let b = [1u8; 12];
        let err = evaluate(
            view(&[2, 2, 2], &[4, 2, 1], ArrayData::U8(&a)),
            view(&[2, 2, 3], &[6, 3, 1], ArrayData::U8(&b)),
            &EvaluateOptions::default(),
        );
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn channel_axis_scores() {
        // Two-channel probabilities whose foreground matches the mask.
        let gt = [0u8, 1, 1, 0];
        let mut scores = vec![1f32, 0.0, 0.0, 1.0];
        scores.extend_from_slice(&[0.0, 1.0, 1.0, 0.0]);
        let report = evaluate(
            view(&[2, 2, 2], &[16, 8, 4], ArrayData::F32(&scores)),
            view(&[2, 2], &[2, 1], ArrayData::U8(&gt)),
            &EvaluateOptions::default(),
        )
        .unwrap();
        assert_eq!(report.dice, 1.0);
    }
}
