use super::{BinaryMask, Connectivity, LabelVolume, VoxelGrid};
use crate::error::Result;

/// Output of [`connected_components`].
#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    pub labels: LabelVolume,
    pub count: usize,
}

/// Labels the foreground components of `mask`.
///
/// Labels run `1..=count` and are handed out in raster-scan order of each
/// component's first voxel, so the output does not depend on traversal order.
pub fn connected_components(mask: &BinaryMask, conn: Connectivity) -> Result<Labeling> {
    let shape = mask.shape();
    let offsets = conn.offsets(shape.rank())?;
    let src = mask.data();
    let mut labels = vec![0u32; shape.len()];
    let mut stack = Vec::new();
    let mut count = 0u32;

    for seed in 0..src.len() {
        if src[seed] == 0 || labels[seed] != 0 {
            continue;
        }
        count += 1;
        labels[seed] = count;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            shape.for_each_neighbor(shape.voxel(i), &offsets, |j| {
                if src[j] != 0 && labels[j] == 0 {
                    labels[j] = count;
                    stack.push(j);
                }
            });
        }
    }

    Ok(Labeling {
        labels: LabelVolume(VoxelGrid { shape, spacing: mask.spacing(), data: labels }),
        count: count as usize,
    })
}
