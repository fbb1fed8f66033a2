use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{distance_transform, BinaryMask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HausdorffMode {
    /// Exact maximum of the directed distances.
    #[default]
    Max,
    /// Larger of the two directed 95th percentiles (linear interpolation).
    Percentile95,
}

/// Exact symmetric Hausdorff distance in mm between foreground voxel centers.
pub fn hausdorff(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    hausdorff_with(pred, gt, HausdorffMode::Max)
}

pub fn hausdorff_with(pred: &BinaryMask, gt: &BinaryMask, mode: HausdorffMode) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    if pred.spacing() != gt.spacing() {
        return Err(Error::InvalidGrid(format!("spacing {:?} differs from {:?}", pred.spacing(), gt.spacing())));
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyMask);
    }
    let to_gt = directed(pred, gt)?;
    let to_pred = directed(gt, pred)?;
    Ok(match mode {
        HausdorffMode::Max => to_gt.iter().chain(&to_pred).copied().fold(0.0, f64::max),
        HausdorffMode::Percentile95 => percentile(to_gt, 95.0).max(percentile(to_pred, 95.0)),
    })
}

/// Distance from each foreground voxel of `from` to the nearest voxel of `to`.
fn directed(from: &BinaryMask, to: &BinaryMask) -> Result<Vec<f64>> {
    let dt = distance_transform(to)?;
    Ok(from.data().iter().zip(dt.data()).filter(|(m, _)| **m != 0).map(|(_, d)| *d).collect())
}

fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (rank - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Shape, Spacing, Voxel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let s = a.spacing().0;
        let d = |p: &Voxel, q: &Voxel| {
            let dz = (p.z as f64 - q.z as f64) * s[0];
            let dy = (p.y as f64 - q.y as f64) * s[1];
            let dx = (p.x as f64 - q.x as f64) * s[2];
            (dz * dz + dy * dy + dx * dx).sqrt()
        };
        let directed = |x: &BinaryMask, y: &BinaryMask| {
            x.voxels().map(|p| y.voxels().map(|q| d(&p, &q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
        };
        directed(a, b).max(directed(b, a))
    }

    #[test]
    fn simple_cases() {
        let s = Shape::new_3d(1, 1, 8);
        let a = BinaryMask::from_fn(s, Spacing::UNIT, |v| v.x == 0);
        let b = BinaryMask::from_fn(s, Spacing::UNIT, |v| v.x == 5);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        let spaced = BinaryMask::from_fn(s, Spacing([1.0, 1.0, 0.5]), |v| v.x == 0);
        let spaced_b = BinaryMask::from_fn(s, Spacing([1.0, 1.0, 0.5]), |v| v.x == 5);
        assert_eq!(hausdorff(&spaced, &spaced_b).unwrap(), 2.5);
        assert!(matches!(hausdorff(&a, &BinaryMask::zeros(s, Spacing::UNIT)), Err(Error::EmptyMask)));
    }

    #[test]
    fn random_pairs_match_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Shape::new_3d(8, 8, 8);
        for trial in 0..20 {
            let spacing = if trial % 2 == 0 { Spacing::UNIT } else { Spacing([0.7, 1.3, 2.1]) };
            let mut mk = || {
                let mut m = BinaryMask::from_fn(s, spacing, |_| rng.gen_bool(0.05));
                if m.is_empty() {
                    m.set(Voxel::new(1, 2, 3), true);
                }
                m
            };
            let (a, b) = (mk(), mk());
            let h = hausdorff(&a, &b).unwrap();
            assert!((h - oracle(&a, &b)).abs() <= 1e-9);
            assert_eq!(h, hausdorff(&b, &a).unwrap());
            let c = mk();
            assert!(h <= hausdorff(&a, &c).unwrap() + hausdorff(&c, &b).unwrap() + 1e-9);
        }
    }

    #[test]
    fn percentile_mode_ignores_single_outlier() {
        let s = Shape::new_3d(1, 1, 200);
        let gt = BinaryMask::from_fn(s, Spacing::UNIT, |v| v.x < 100);
        let pred = BinaryMask::from_fn(s, Spacing::UNIT, |v| v.x < 100 || v.x == 199);
        assert_eq!(hausdorff(&pred, &gt).unwrap(), 100.0);
        assert_eq!(hausdorff_with(&pred, &gt, HausdorffMode::Percentile95).unwrap(), 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(vec![0.0, 10.0], 95.0), 9.5);
        assert_eq!(percentile(vec![3.0], 95.0), 3.0);
    }
}
