//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas method (Felzenszwalb & Huttenlocher),
//! one pass per axis, with physical spacing folded into each pass.

use super::{map_lines, BinaryMask, VoxelGrid};
use crate::error::{Error, Result};

/// Distance in mm from every voxel center to the nearest foreground voxel center.
pub fn distance_transform(mask: &BinaryMask) -> Result<VoxelGrid<f64>> {
    let mut sq = squared_distance_transform(mask)?;
    sq.data_mut().iter_mut().for_each(|d| *d = d.sqrt());
    Ok(sq)
}

pub(crate) fn squared_distance_transform(mask: &BinaryMask) -> Result<VoxelGrid<f64>> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let shape = mask.shape();
    let spacing = mask.spacing();
    let mut data: Vec<f64> = mask.data().iter().map(|&v| if v != 0 { 0.0 } else { f64::INFINITY }).collect();
    for axis in (0..3).rev() {
        if shape.dims()[axis] > 1 {
            let step = spacing.0[axis];
            map_lines(&mut data, shape, axis, |line| envelope_1d(line, step));
        }
    }
    VoxelGrid::new(shape, spacing, data)
}

/// In-place 1D squared distance transform of sampled function `f` on a grid
/// with sample spacing `step`. Infinite samples contribute no parabola.
fn envelope_1d(f: &mut [f64], step: f64) {
    let n = f.len();
    let pos = |i: usize| i as f64 * step;
    let mut verts: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);

    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if verts.is_empty() {
            verts.push(q);
            bounds.push(f64::NEG_INFINITY);
            continue;
        }
        loop {
            let p = *verts.last().unwrap();
            let cross = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if cross <= *bounds.last().unwrap() {
                verts.pop();
                bounds.pop();
                if verts.is_empty() {
                    verts.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
            } else {
                verts.push(q);
                bounds.push(cross);
                break;
            }
        }
    }
    if verts.is_empty() {
        return;
    }

    let src: Vec<f64> = verts.iter().map(|&v| f[v]).collect();
    let mut k = 0;
    for (q, out) in f.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < verts.len() && bounds[k + 1] < x {
            k += 1;
        }
        let d = x - pos(verts[k]);
        *out = d * d + src[k];
    }
}
