use serde::{Deserialize, Serialize};

use super::{LabelVolume, Shape, Spacing, Voxel, VoxelGrid};
use crate::error::{Error, Result};

/// Whether a [`ProbVolume`] holds raw scores or normalized probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Logits,
    Probabilities,
}

/// Per-channel real-valued volume, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume {
    shape: Shape,
    spacing: Spacing,
    channels: usize,
    kind: ValueKind,
    data: Vec<f64>,
}

const PROB_SUM_TOL: f64 = 1e-5;

impl ProbVolume {
    /// `data` is channel-major: channel `c` occupies `c * n .. (c + 1) * n`.
    pub fn new(shape: Shape, spacing: Spacing, channels: usize, kind: ValueKind, data: Vec<f64>) -> Result<Self> {
        spacing.validate()?;
        if channels < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 channels, got {channels}")));
        }
        if data.len() != channels * shape.len() {
            return Err(Error::InvalidGrid(format!(
                "data length {} does not match {} channels x {} voxels",
                data.len(),
                channels,
                shape.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value {bad}")));
        }
        let vol = ProbVolume { shape, spacing, channels, kind, data };
        if kind == ValueKind::Probabilities {
            vol.check_distributions()?;
        }
        Ok(vol)
    }

    /// Builds from per-voxel channel vectors (`values[voxel][channel]`).
    pub fn from_voxel_values(shape: Shape, spacing: Spacing, kind: ValueKind, values: &[Vec<f64>]) -> Result<Self> {
        let channels = values.first().map_or(0, Vec::len);
        if values.len() != shape.len() || values.iter().any(|v| v.len() != channels) {
            return Err(Error::InvalidGrid("ragged per-voxel channel values".into()));
        }
        let n = shape.len();
        let mut data = vec![0.0; channels * n];
        for (i, v) in values.iter().enumerate() {
            for (c, &x) in v.iter().enumerate() {
                data[c * n + i] = x;
            }
        }
        ProbVolume::new(shape, spacing, channels, kind, data)
    }

    fn check_distributions(&self) -> Result<()> {
        let n = self.shape.len();
        for i in 0..n {
            let mut sum = 0.0;
            for c in 0..self.channels {
                let p = self.data[c * n + i];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidGrid(format!("probability {p} outside [0, 1] at voxel {i}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidGrid(format!("channel probabilities sum to {sum} at voxel {i}")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn value(&self, channel: usize, voxel_index: usize) -> f64 {
        self.data[channel * self.shape.len() + voxel_index]
    }

    pub fn voxel_values(&self, v: Voxel) -> Vec<f64> {
        let i = self.shape.index(v);
        (0..self.channels).map(|c| self.value(c, i)).collect()
    }

    pub(crate) fn from_parts_unchecked(
        shape: Shape,
        spacing: Spacing,
        channels: usize,
        kind: ValueKind,
        data: Vec<f64>,
    ) -> Self {
        ProbVolume { shape, spacing, channels, kind, data }
    }

    /// Per-voxel argmax channel; ties go to the lower index.
    pub fn argmax(&self) -> LabelVolume {
        let n = self.shape.len();
        let labels = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.channels {
                    if self.value(c, i) > self.value(best, i) {
                        best = c;
                    }
                }
                best as u32
            })
            .collect();
        LabelVolume(VoxelGrid { shape: self.shape, spacing: self.spacing, data: labels })
    }

    /// Probabilities: softmax for logits, a copy otherwise.
    pub fn to_probabilities(&self) -> ProbVolume {
        match self.kind {
            ValueKind::Logits => softmax(self),
            ValueKind::Probabilities => self.clone(),
        }
    }
}

/// Per-voxel channel softmax with max subtraction.
///
/// Inputs already flagged as probabilities are treated as scores as well;
/// call [`ProbVolume::to_probabilities`] to skip the transform for them.
pub fn softmax(p: &ProbVolume) -> ProbVolume {
    let n = p.shape.len();
    let c = p.channels;
    let mut out = vec![0.0; p.data.len()];
    let mut buf = vec![0.0; c];
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for (ch, slot) in buf.iter_mut().enumerate() {
            *slot = p.data[ch * n + i];
            max = max.max(*slot);
        }
        let mut sum = 0.0;
        for slot in buf.iter_mut() {
            *slot = (*slot - max).exp();
            sum += *slot;
        }
        for (ch, slot) in buf.iter().enumerate() {
            out[ch * n + i] = slot / sum;
        }
    }
    ProbVolume { shape: p.shape, spacing: p.spacing, channels: c, kind: ValueKind::Probabilities, data: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(values: &[f64]) -> ProbVolume {
        ProbVolume::from_voxel_values(Shape::new_2d(1, 1), Spacing::UNIT, ValueKind::Logits, &[values.to_vec()])
            .unwrap()
    }

    #[test]
    fn zero_logits_are_uniform() {
        let s = softmax(&single(&[0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let s = softmax(&single(&[1000.0, 0.0]));
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
    }

    #[test]
    fn unit_logit_gap() {
        // e / (e + 1) evaluated independently.
        let s = softmax(&single(&[1.0, 0.0]));
        assert!((s.data()[0] - 0.731059).abs() < 1e-6);
        assert!((s.data()[1] - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn shift_invariance_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::new_3d(2, 3, 4);
        let values: Vec<Vec<f64>> =
            (0..shape.len()).map(|_| (0..4).map(|_| rng.gen_range(-20.0..20.0)).collect()).collect();
        let shifted: Vec<Vec<f64>> = values
            .iter()
            .map(|v| {
                let k = rng.gen_range(-50.0..50.0);
                v.iter().map(|x| x + k).collect()
            })
            .collect();
        let a = softmax(&ProbVolume::from_voxel_values(shape, Spacing::UNIT, ValueKind::Logits, &values).unwrap());
        let b = softmax(&ProbVolume::from_voxel_values(shape, Spacing::UNIT, ValueKind::Logits, &shifted).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        for i in 0..shape.len() {
            let sum: f64 = (0..4).map(|c| a.value(c, i)).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn probability_flag_is_validated() {
        let shape = Shape::new_2d(1, 1);
        assert!(
            ProbVolume::from_voxel_values(shape, Spacing::UNIT, ValueKind::Probabilities, &[vec![0.3, 0.3]]).is_err()
        );
        assert!(
            ProbVolume::from_voxel_values(shape, Spacing::UNIT, ValueKind::Probabilities, &[vec![0.3, 0.7]]).is_ok()
        );
        assert!(ProbVolume::from_voxel_values(shape, Spacing::UNIT, ValueKind::Logits, &[vec![f64::NAN, 0.0]]).is_err());
    }
}
