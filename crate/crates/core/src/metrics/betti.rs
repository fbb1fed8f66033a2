use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{connected_components, BinaryMask, Connectivity, Shape, Voxel};

/// Betti numbers of a binary mask together with its Euler characteristic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BettiTriple {
    pub b0: usize,
    pub b1: usize,
    pub b2: usize,
    pub euler: i64,
}

/// Euler characteristic of the cubical complex formed by the closed unit
/// cubes (squares in 2D) of the foreground voxels.
///
/// Cells are addressed in doubled coordinates: a coordinate `t` on an axis is
/// odd for the interior of a voxel and even for a boundary between voxels.
/// A cell exists when any voxel it touches is foreground.
pub fn euler_characteristic(mask: &BinaryMask) -> i64 {
    let shape = mask.shape();
    let [nz, ny, nx] = shape.dims();
    let volumetric = shape.rank() == 3;
    let z_cells = if volumetric { 2 * nz + 1 } else { 1 };
    let data = mask.data();

    (0..z_cells)
        .into_par_iter()
        .map(|tz| {
            let (zs, z_odd) = if volumetric { touched(tz, nz) } else { ((0, 0), false) };
            let mut row = vec![false; nx];
            let mut sum = 0i64;
            for ty in 0..2 * ny + 1 {
                let (ys, y_odd) = touched(ty, ny);
                row.iter_mut().for_each(|r| *r = false);
                for z in zs.0..=zs.1 {
                    for y in ys.0..=ys.1 {
                        let base = (z * ny + y) * nx;
                        for (r, &v) in row.iter_mut().zip(&data[base..base + nx]) {
                            *r |= v != 0;
                        }
                    }
                }
                let dim_yz = usize::from(z_odd && volumetric) + usize::from(y_odd);
                for tx in 0..2 * nx + 1 {
                    let (xs, x_odd) = touched(tx, nx);
                    if row[xs.0..=xs.1].iter().any(|&b| b) {
                        let dim = dim_yz + usize::from(x_odd);
                        sum += if dim % 2 == 0 { 1 } else { -1 };
                    }
                }
            }
            sum
        })
        .sum()
}

/// Voxel index range touched by doubled coordinate `t` (in `0..=2n`) on an
/// axis of `n` voxels, and whether the coordinate is a voxel interior.
fn touched(t: usize, n: usize) -> ((usize, usize), bool) {
    if t % 2 == 1 {
        return (((t - 1) / 2, (t - 1) / 2), true);
    }
    ((t.saturating_sub(2) / 2, (t / 2).min(n - 1)), false)
}

/// Background components of the zero-padded mask under face connectivity,
/// not counting the outside one.
fn enclosed_background(mask: &BinaryMask) -> usize {
    let shape = mask.shape();
    let [nz, ny, nx] = shape.dims();
    let padded = if shape.rank() == 3 { Shape::new_3d(nz + 2, ny + 2, nx + 2) } else { Shape::new_2d(ny + 2, nx + 2) };
    let dz = usize::from(shape.rank() == 3);
    let bg = BinaryMask::from_fn(padded, mask.spacing(), |v| {
        if v.y == 0 || v.x == 0 || v.y == ny + 1 || v.x == nx + 1 {
            return true;
        }
        if dz == 1 && (v.z == 0 || v.z == nz + 1) {
            return true;
        }
        !mask.is_set(Voxel::new(v.z - dz, v.y - 1, v.x - 1))
    });
    let comps = connected_components(&bg, Connectivity::Face).expect("face connectivity is valid for every rank");
    comps.count - 1
}

/// Betti numbers with 26/8 foreground and 6/4 background connectivity.
///
/// `b1` follows from the Euler characteristic: `b0 - b1 + b2 = χ`. In 2D,
/// `b2` is 0 and enclosed background regions are the holes counted by `b1`.
pub fn betti(mask: &BinaryMask) -> BettiTriple {
    if mask.is_empty() {
        return BettiTriple::default();
    }
    let b0 = connected_components(mask, Connectivity::Full).expect("full connectivity is valid for every rank").count;
    let euler = euler_characteristic(mask);
    let b2 = if mask.shape().rank() == 3 { enclosed_background(mask) } else { 0 };
    let b1 = b0 as i64 + b2 as i64 - euler;
    debug_assert!(b1 >= 0, "negative b1 from b0={b0} b2={b2} euler={euler}");
    BettiTriple { b0, b1: b1.max(0) as usize, b2, euler }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    #[default]
    Whole,
    Patches,
}

/// How the Betti error is aggregated over the volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub mode: PatchMode,
    pub patch_shape: [usize; 3],
    pub stride: [usize; 3],
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { mode: PatchMode::Whole, patch_shape: [64, 64, 64], stride: [64, 64, 64] }
    }
}

impl PatchSpec {
    pub fn whole() -> Self {
        PatchSpec::default()
    }

    pub fn patches(patch_shape: [usize; 3], stride: [usize; 3]) -> Self {
        PatchSpec { mode: PatchMode::Patches, patch_shape, stride }
    }

    fn origins(&self, shape: Shape) -> Result<Vec<[usize; 3]>> {
        let dims = shape.dims();
        let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(3);
        for a in 0..3 {
            let (p, s) = (self.patch_shape[a], self.stride[a]);
            if p == 0 || s == 0 || p > dims[a] {
                return Err(Error::InvalidConfig(format!(
                    "patch {:?} with stride {:?} does not fit volume {:?}",
                    self.patch_shape, self.stride, dims
                )));
            }
            per_axis.push((0..=dims[a] - p).step_by(s).collect());
        }
        let mut out = Vec::new();
        for &z in &per_axis[0] {
            for &y in &per_axis[1] {
                for &x in &per_axis[2] {
                    out.push([z, y, x]);
                }
            }
        }
        Ok(out)
    }
}

fn triple_error(p: &BettiTriple, g: &BettiTriple) -> f64 {
    (p.b0.abs_diff(g.b0) + p.b1.abs_diff(g.b1)) as f64
}

fn crop(mask: &BinaryMask, origin: [usize; 3], size: [usize; 3]) -> BinaryMask {
    let shape = if mask.shape().rank() == 3 {
        Shape::new_3d(size[0], size[1], size[2])
    } else {
        Shape::new_2d(size[1], size[2])
    };
    BinaryMask::from_fn(shape, mask.spacing(), |v| {
        mask.is_set(Voxel::new(v.z + origin[0], v.y + origin[1], v.x + origin[2]))
    })
}

/// `|Δb0| + |Δb1|`, over the whole volume or averaged over a patch grid.
pub fn betti_error(pred: &BinaryMask, gt: &BinaryMask, spec: &PatchSpec) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    match spec.mode {
        PatchMode::Whole => Ok(triple_error(&betti(pred), &betti(gt))),
        PatchMode::Patches => {
            let origins = spec.origins(pred.shape())?;
            let errors: Vec<f64> = origins
                .par_iter()
                .map(|&o| {
                    let p = betti(&crop(pred, o, spec.patch_shape));
                    let g = betti(&crop(gt, o, spec.patch_shape));
                    triple_error(&p, &g)
                })
                .collect();
            Ok(errors.iter().sum::<f64>() / errors.len() as f64)
        }
    }
}
