//! Morphological soft skeletons and skeleton endpoints.
//!
//! The skeleton is the iterative erosion/opening recurrence used by clDice:
//!
//! ```text
//! skel_0 = M \ open(M)
//! skel_i = skel_{i-1} ∪ (E_i \ open(E_i)),   E_i = erode^i(M)
//! ```
//!
//! Erosion and dilation take the min/max over the face neighborhood plus the
//! center voxel (7 in 3D, 5 in 2D). Neighbors outside the grid are ignored,
//! which matches max-pooling with `-inf` padding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Connectivity, ProbVolume, Shape, Voxel, VoxelGrid};

/// Skeletonization and binarization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThinningParams {
    /// Number of erosion steps `k` after the initial opening.
    pub iterations: usize,
    /// Channel-1 probability above which a two-channel prediction is foreground.
    pub binarize_threshold: f64,
}

impl Default for ThinningParams {
    fn default() -> Self {
        ThinningParams { iterations: 10, binarize_threshold: 0.5 }
    }
}

impl ThinningParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("thinning iterations must be >= 1".into()));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "binarize threshold must lie in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        Ok(())
    }
}

/// A skeleton together with the shape of the mask it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonMask {
    pub mask: BinaryMask,
    pub source_shape: Shape,
}

impl SkeletonMask {
    /// Wraps an existing mask (e.g. one read from disk) as a skeleton.
    pub fn from_mask(mask: BinaryMask) -> Self {
        let source_shape = mask.shape();
        SkeletonMask { mask, source_shape }
    }
}

/// Skeleton endpoints in ascending `(z, y, x)` order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSet {
    pub points: Vec<Voxel>,
}

impl EndpointSet {
    pub fn new(mut points: Vec<Voxel>) -> Self {
        points.sort_unstable();
        points.dedup();
        EndpointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Morph {
    Erode,
    Dilate,
}

fn morph(src: &[u8], shape: Shape, op: Morph) -> Vec<u8> {
    let [nz, ny, nx] = shape.dims();
    let plane = ny * nx;
    let mut out = vec![0u8; src.len()];
    if src.is_empty() {
        return out;
    }
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let base = z * plane;
        for y in 0..ny {
            for x in 0..nx {
                let i = base + y * nx + x;
                let mut neighbors = [1u8; 6];
                let mut n = 0;
                if x > 0 {
                    neighbors[n] = src[i - 1];
                    n += 1;
                }
                if x + 1 < nx {
                    neighbors[n] = src[i + 1];
                    n += 1;
                }
                if y > 0 {
                    neighbors[n] = src[i - nx];
                    n += 1;
                }
                if y + 1 < ny {
                    neighbors[n] = src[i + nx];
                    n += 1;
                }
                if z > 0 {
                    neighbors[n] = src[i - plane];
                    n += 1;
                }
                if z + 1 < nz {
                    neighbors[n] = src[i + plane];
                    n += 1;
                }
                let around = &neighbors[..n];
                slab[y * nx + x] = match op {
                    Morph::Erode => src[i] & around.iter().fold(1, |a, &b| a & b),
                    Morph::Dilate => src[i] | around.iter().fold(0, |a, &b| a | b),
                };
            }
        }
    });
    out
}

/// Min over the face neighborhood plus center.
pub fn erode(mask: &BinaryMask) -> BinaryMask {
    wrap(mask, morph(mask.data(), mask.shape(), Morph::Erode))
}

/// Max over the face neighborhood plus center.
pub fn dilate(mask: &BinaryMask) -> BinaryMask {
    wrap(mask, morph(mask.data(), mask.shape(), Morph::Dilate))
}

fn wrap(like: &BinaryMask, data: Vec<u8>) -> BinaryMask {
    BinaryMask::from_grid_unchecked(VoxelGrid::new(like.shape(), like.spacing(), data).expect("same shape"))
}

/// Iterative soft skeleton with `params.iterations` erosion steps.
pub fn soft_skeleton(mask: &BinaryMask, params: &ThinningParams) -> SkeletonMask {
    let shape = mask.shape();
    let mut eroded = mask.data().to_vec();
    let mut next = morph(&eroded, shape, Morph::Erode);
    let opened = morph(&next, shape, Morph::Dilate);
    let mut skel: Vec<u8> = eroded.iter().zip(&opened).map(|(&e, &o)| e & !o & 1).collect();

    for _ in 0..params.iterations {
        eroded = next;
        if !eroded.iter().any(|&v| v != 0) {
            break;
        }
        next = morph(&eroded, shape, Morph::Erode);
        let opened = morph(&next, shape, Morph::Dilate);
        skel.par_iter_mut().zip(eroded.par_iter().zip(opened.par_iter())).for_each(|(s, (&e, &o))| {
            *s |= e & !o & 1;
        });
    }

    SkeletonMask { mask: wrap(mask, skel), source_shape: shape }
}

/// Discretizes a prediction.
///
/// Two channels: foreground where the channel-1 probability exceeds the
/// threshold (strictly). More channels: foreground where the argmax channel,
/// ties broken toward the lower index, is not 0.
pub fn binarize(pred: &ProbVolume, params: &ThinningParams) -> BinaryMask {
    if pred.channels() == 2 {
        let probs = pred.to_probabilities();
        let data = probs.channel(1).iter().map(|&p| (p > params.binarize_threshold) as u8).collect();
        BinaryMask::from_grid_unchecked(VoxelGrid::new(pred.shape(), pred.spacing(), data).expect("same shape"))
    } else {
        pred.argmax().foreground()
    }
}

/// Skeleton voxels with at most one skeleton neighbor in the full
/// (26 / 8) neighborhood, i.e. an all-ones kernel response of at most 2.
/// Isolated voxels are endpoints.
pub fn detect_endpoints(skel: &SkeletonMask) -> EndpointSet {
    let mask = &skel.mask;
    let shape = mask.shape();
    let offsets = Connectivity::Full.offsets(shape.rank()).expect("full connectivity exists in every rank");
    let data = mask.data();
    let points = mask
        .voxels()
        .filter(|&v| {
            let mut count = 0;
            shape.for_each_neighbor(v, &offsets, |j| count += data[j] as usize);
            count <= 1
        })
        .collect();
    EndpointSet { points }
}
