//! Dense 2D/3D voxel grids.
//!
//! Axis order is always `(z, y, x)` with `x` varying fastest. A rank-2 grid
//! uses the same layout with a single z-slice.

mod edt;
mod label;
mod prob;

pub use edt::distance_transform;
pub use label::{connected_components, Labeling};
pub use prob::{softmax, ProbVolume, ValueKind};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent plus dimensionality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    rank: usize,
    dims: [usize; 3],
}

impl Shape {
    pub fn new_3d(z: usize, y: usize, x: usize) -> Self {
        Shape { rank: 3, dims: [z, y, x] }
    }

    pub fn new_2d(y: usize, x: usize) -> Self {
        Shape { rank: 2, dims: [1, y, x] }
    }

    /// Builds a shape from `(z, y, x)` dims. Rank 2 requires `z == 1`.
    pub fn new(rank: usize, dims: [usize; 3]) -> Result<Self> {
        match rank {
            2 if dims[0] == 1 => Ok(Shape { rank, dims }),
            2 => Err(Error::InvalidGrid(format!("rank-2 shape needs z = 1, got {}", dims[0]))),
            3 => Ok(Shape { rank, dims }),
            _ => Err(Error::InvalidGrid(format!("rank must be 2 or 3, got {rank}"))),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn z(&self) -> usize {
        self.dims[0]
    }

    pub fn y(&self) -> usize {
        self.dims[1]
    }

    pub fn x(&self) -> usize {
        self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, v: Voxel) -> usize {
        (v.z * self.dims[1] + v.y) * self.dims[2] + v.x
    }

    #[inline]
    pub fn voxel(&self, index: usize) -> Voxel {
        let x = index % self.dims[2];
        let rest = index / self.dims[2];
        Voxel { z: rest / self.dims[1], y: rest % self.dims[1], x }
    }

    #[inline]
    pub fn contains(&self, z: i64, y: i64, x: i64) -> bool {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < self.dims[0]
            && (y as usize) < self.dims[1]
            && (x as usize) < self.dims[2]
    }

    /// Calls `f` with the linear index of every in-bounds neighbor of `v`.
    #[inline]
    pub(crate) fn for_each_neighbor(&self, v: Voxel, offsets: &[[i64; 3]], mut f: impl FnMut(usize)) {
        for o in offsets {
            let (z, y, x) = (v.z as i64 + o[0], v.y as i64 + o[1], v.x as i64 + o[2]);
            if self.contains(z, y, x) {
                f((z as usize * self.dims[1] + y as usize) * self.dims[2] + x as usize);
            }
        }
    }

    /// Euclidean length of the grid diagonal in index units.
    pub fn diameter(&self) -> f64 {
        self.dims.iter().map(|&d| (d.saturating_sub(1) as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Integer voxel coordinate. Ordering is lexicographic in `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Voxel {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Voxel {
    pub const fn new(z: usize, y: usize, x: usize) -> Self {
        Voxel { z, y, x }
    }

    /// Euclidean distance in index space.
    pub fn distance(&self, other: &Voxel) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Voxel) -> f64 {
        let dz = self.z as f64 - other.z as f64;
        let dy = self.y as f64 - other.y as f64;
        let dx = self.x as f64 - other.x as f64;
        dz * dz + dy * dy + dx * dx
    }

    pub fn chebyshev(&self, other: &Voxel) -> usize {
        self.z.abs_diff(other.z).max(self.y.abs_diff(other.y)).max(self.x.abs_diff(other.x))
    }
}

impl From<[usize; 3]> for Voxel {
    fn from(a: [usize; 3]) -> Self {
        Voxel::new(a[0], a[1], a[2])
    }
}

impl From<Voxel> for [usize; 3] {
    fn from(v: Voxel) -> Self {
        [v.z, v.y, v.x]
    }
}

/// Physical voxel size in mm, `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub const UNIT: Spacing = Spacing([1.0, 1.0, 1.0]);

    pub fn new(z: f64, y: f64, x: f64) -> Result<Self> {
        let s = Spacing([z, y, x]);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidGrid(format!("spacing must be finite and positive, got {:?}", self.0)))
        }
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::UNIT
    }
}

/// Dense scalar grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    shape: Shape,
    spacing: Spacing,
    data: Vec<T>,
}

impl<T: Copy> VoxelGrid<T> {
    pub fn new(shape: Shape, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        spacing.validate()?;
        if data.len() != shape.len() {
            return Err(Error::InvalidGrid(format!(
                "data length {} does not match shape {:?} ({} voxels)",
                data.len(),
                shape.dims(),
                shape.len()
            )));
        }
        Ok(VoxelGrid { shape, spacing, data })
    }

    pub fn filled(shape: Shape, spacing: Spacing, value: T) -> Self {
        VoxelGrid { shape, spacing, data: vec![value; shape.len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, v: Voxel) -> T {
        self.data[self.shape.index(v)]
    }

    pub fn set(&mut self, v: Voxel, value: T) {
        let i = self.shape.index(v);
        self.data[i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> VoxelGrid<U> {
        VoxelGrid { shape: self.shape, spacing: self.spacing, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Grid whose voxels are all exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask(VoxelGrid<u8>);

impl BinaryMask {
    pub fn new(shape: Shape, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidGrid(format!("binary mask holds value {bad}")));
        }
        Ok(BinaryMask(VoxelGrid::new(shape, spacing, data)?))
    }

    pub fn zeros(shape: Shape, spacing: Spacing) -> Self {
        BinaryMask(VoxelGrid::filled(shape, spacing, 0))
    }

    /// Foreground wherever `f` returns true.
    pub fn from_fn(shape: Shape, spacing: Spacing, mut f: impl FnMut(Voxel) -> bool) -> Self {
        let data = (0..shape.len()).map(|i| f(shape.voxel(i)) as u8).collect();
        BinaryMask(VoxelGrid { shape, spacing, data })
    }

    /// Foreground wherever `pred` holds for the source value.
    pub fn threshold<T: Copy>(grid: &VoxelGrid<T>, pred: impl Fn(T) -> bool) -> Self {
        BinaryMask(grid.map(|v| pred(v) as u8))
    }

    pub(crate) fn from_grid_unchecked(grid: VoxelGrid<u8>) -> Self {
        debug_assert!(grid.data.iter().all(|&v| v <= 1));
        BinaryMask(grid)
    }

    pub fn grid(&self) -> &VoxelGrid<u8> {
        &self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.0.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.0.data
    }

    #[inline]
    pub fn is_set(&self, v: Voxel) -> bool {
        self.0.get(v) != 0
    }

    pub fn set(&mut self, v: Voxel, on: bool) {
        self.0.set(v, on as u8);
    }

    pub fn count(&self) -> usize {
        self.0.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.data.iter().any(|&v| v != 0)
    }

    /// Foreground voxels in ascending `(z, y, x)` order.
    pub fn voxels(&self) -> impl Iterator<Item = Voxel> + '_ {
        let shape = self.0.shape;
        self.0.data.iter().enumerate().filter(|(_, &v)| v != 0).map(move |(i, _)| shape.voxel(i))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.0.data.iter().zip(&other.0.data).filter(|(&a, &b)| a & b != 0).count()
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.0.data.iter().zip(&other.0.data).all(|(&a, &b)| a <= b)
    }

    pub fn ensure_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape_mismatch(self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// Non-negative integer labels; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume(VoxelGrid<u32>);

impl LabelVolume {
    pub fn new(shape: Shape, spacing: Spacing, data: Vec<u32>) -> Result<Self> {
        Ok(LabelVolume(VoxelGrid::new(shape, spacing, data)?))
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        LabelVolume(mask.grid().map(u32::from))
    }

    pub fn grid(&self) -> &VoxelGrid<u32> {
        &self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing
    }

    pub fn data(&self) -> &[u32] {
        &self.0.data
    }

    pub fn get(&self, v: Voxel) -> u32 {
        self.0.get(v)
    }

    pub fn max_label(&self) -> u32 {
        self.0.data.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct non-zero labels.
    pub fn labels(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.0.data.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn class_mask(&self, label: u32) -> BinaryMask {
        BinaryMask::threshold(&self.0, |v| v == label)
    }

    /// All non-background labels merged into one foreground.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::threshold(&self.0, |v| v != 0)
    }
}

/// Voxel adjacency convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// 6 in 3D, 4 in 2D.
    Face,
    /// 18, 3D only.
    FaceEdge,
    /// 26 in 3D, 8 in 2D.
    Full,
}

impl Connectivity {
    pub fn name(&self) -> &'static str {
        match self {
            Connectivity::Face => "face",
            Connectivity::FaceEdge => "face+edge",
            Connectivity::Full => "full",
        }
    }

    /// Neighbor offsets for a grid of the given rank, in `(z, y, x)` scan order.
    pub fn offsets(&self, rank: usize) -> Result<Vec<[i64; 3]>> {
        let max_l1 = match (self, rank) {
            (Connectivity::Face, _) => 1,
            (Connectivity::FaceEdge, 3) => 2,
            (Connectivity::FaceEdge, r) => return Err(Error::InvalidConnectivity(self.name(), r)),
            (Connectivity::Full, _) => 3,
        };
        let zr: &[i64] = if rank == 3 { &[-1, 0, 1] } else { &[0] };
        let mut out = Vec::new();
        for &dz in zr {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let l1 = dz.abs() + dy.abs() + dx.abs();
                    if l1 > 0 && l1 <= max_l1 {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Applies `f` to every 1D line of `data` along `axis` (0 = z, 1 = y, 2 = x).
///
/// Lines are processed in parallel; each line is independent so the result is
/// identical for any thread count.
pub(crate) fn map_lines<T, F>(data: &mut [T], shape: Shape, axis: usize, f: F)
where
    T: Copy + Send + Sync + Default,
    F: Fn(&mut [T]) + Send + Sync,
{
    let [nz, ny, nx] = shape.dims();
    if shape.is_empty() {
        return;
    }
    match axis {
        2 => data.par_chunks_mut(nx).for_each(&f),
        1 => data.par_chunks_mut(ny * nx).for_each(|slab| {
            let mut line = vec![T::default(); ny];
            for x in 0..nx {
                for y in 0..ny {
                    line[y] = slab[y * nx + x];
                }
                f(&mut line);
                for y in 0..ny {
                    slab[y * nx + x] = line[y];
                }
            }
        }),
        0 => {
            let plane = ny * nx;
            let rows: Vec<Vec<T>> = (0..ny)
                .into_par_iter()
                .map(|y| {
                    let mut out = vec![T::default(); nz * nx];
                    let mut line = vec![T::default(); nz];
                    for x in 0..nx {
                        for z in 0..nz {
                            line[z] = data[z * plane + y * nx + x];
                        }
                        f(&mut line);
                        out[x * nz..(x + 1) * nz].copy_from_slice(&line);
                    }
                    out
                })
                .collect();
            for (y, row) in rows.iter().enumerate() {
                for x in 0..nx {
                    for z in 0..nz {
                        data[z * plane + y * nx + x] = row[x * nz + z];
                    }
                }
            }
        }
        _ => unreachable!("axis must be 0, 1 or 2"),
    }
}
