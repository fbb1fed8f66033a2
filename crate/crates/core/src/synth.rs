//! Synthetic tubular networks with known centerlines, endpoints and cuts.
//!
//! A network is a tree of jittered polylines. The first branch is the root;
//! every later branch starts on a point of an earlier one. Tubes are drawn by
//! stamping a ball of the branch radius at every centerline voxel, so tube
//! ends are rounded. A cut drops the centerline voxels near its midpoint
//! before stamping, which leaves rounded caps on both sides of the gap.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{connected_components, BinaryMask, Connectivity, Shape, Spacing, Voxel};
use crate::metrics::{betti, BettiTriple};
use crate::rng::{substream, CUTS_STREAM, SYNTH_STREAM};
use crate::skeleton::EndpointSet;

/// Extra background required between the surfaces of unrelated branches.
const CLEARANCE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TubeNetworkSpec {
    pub seed: u64,
    pub shape: Shape,
    pub n_branches: usize,
    /// Inclusive tube radius range in voxels.
    pub radius: [usize; 2],
    pub min_branch_length: usize,
    pub max_branch_length: usize,
    /// Per-step random perturbation of the growth direction.
    pub jitter: f64,
    /// Placement attempts per branch before giving up.
    pub max_attempts: usize,
}

impl Default for TubeNetworkSpec {
    fn default() -> Self {
        TubeNetworkSpec {
            seed: 0,
            shape: Shape::new_3d(96, 96, 96),
            n_branches: 20,
            radius: [1, 1],
            min_branch_length: 20,
            max_branch_length: 32,
            jitter: 0.15,
            max_attempts: 200,
        }
    }
}

impl TubeNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_branches == 0 {
            return bad("need at least one branch".into());
        }
        if self.radius[0] == 0 || self.radius[0] > self.radius[1] {
            return bad(format!("radius range {:?} must satisfy 1 <= min <= max", self.radius));
        }
        if self.min_branch_length < 2 || self.min_branch_length > self.max_branch_length {
            return bad(format!(
                "branch length range [{}, {}] must satisfy 2 <= min <= max",
                self.min_branch_length, self.max_branch_length
            ));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad(format!("jitter must be finite and >= 0, got {}", self.jitter));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub parent: Option<usize>,
    /// Index of the attachment point on the parent's centerline.
    pub junction: Option<usize>,
    pub radius: usize,
    /// 26-connected centerline; a child's first point is its junction voxel.
    pub points: Vec<Voxel>,
}

/// One cut: branch index and arc-length parameter in `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPosition {
    pub branch: usize,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutSpec {
    pub cuts: Vec<CutPosition>,
    /// Length of the removed stretch, in voxels.
    pub gap: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub spec: TubeNetworkSpec,
    pub gt_mask: BinaryMask,
    pub frag_mask: BinaryMask,
    pub branches: Vec<Branch>,
    pub true_endpoints: EndpointSet,
    pub cut_midpoints: Vec<Voxel>,
    pub gt_betti: BettiTriple,
    /// Foreground components of the fragmented mask.
    pub frag_components: usize,
    /// Per branch, which centerline points survive the cuts.
    kept: Vec<Vec<bool>>,
    /// Centerline points removed by each applied cut.
    windows: Vec<Vec<(usize, usize)>>,
}

/// Serializable description of a fixture, without the masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSidecar {
    pub spec: TubeNetworkSpec,
    pub centerlines: Vec<Vec<Voxel>>,
    pub radii: Vec<usize>,
    pub true_endpoints: Vec<Voxel>,
    pub cut_midpoints: Vec<Voxel>,
    pub gt_betti: BettiTriple,
    pub frag_components: usize,
}

impl Fixture {
    pub fn sidecar(&self) -> FixtureSidecar {
        FixtureSidecar {
            spec: self.spec.clone(),
            centerlines: self.branches.iter().map(|b| b.points.clone()).collect(),
            radii: self.branches.iter().map(|b| b.radius).collect(),
            true_endpoints: self.true_endpoints.points.clone(),
            cut_midpoints: self.cut_midpoints.clone(),
            gt_betti: self.gt_betti,
            frag_components: self.frag_components,
        }
    }

    /// Junction voxels: attachment points of every child branch.
    pub fn junctions(&self) -> Vec<Voxel> {
        self.branches.iter().filter(|b| b.parent.is_some()).map(|b| b.points[0]).collect()
    }

    fn max_radius(&self) -> usize {
        self.branches.iter().map(|b| b.radius).max().unwrap_or(1)
    }
}

fn planar(shape: Shape) -> bool {
    shape.rank() == 2
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn random_direction(rng: &mut ChaCha8Rng, flat: bool) -> [f64; 3] {
    loop {
        let z = if flat { 0.0 } else { rng.gen_range(-1.0..1.0) };
        let v = [z, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 0.01 && n2 <= 1.0 {
            return normalize(v);
        }
    }
}

fn to_f(v: Voxel) -> [f64; 3] {
    [v.z as f64, v.y as f64, v.x as f64]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Walks `steps` unit steps from `start`, perturbing the direction each
/// step. Returns `None` if the walk leaves the box `[lo, hi]` on any axis.
fn grow(
    start: [f64; 3],
    dir: [f64; 3],
    steps: usize,
    jitter: f64,
    bounds: ([f64; 3], [f64; 3]),
    flat: bool,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Voxel>> {
    let round = |p: [f64; 3]| -> Option<Voxel> {
        if (0..3).any(|a| p[a] < bounds.0[a] || p[a] > bounds.1[a]) {
            return None;
        }
        Some(Voxel::new(p[0].round() as usize, p[1].round() as usize, p[2].round() as usize))
    };
    let mut pos = start;
    let mut d = dir;
    let mut points = vec![round(pos)?];
    for _ in 0..steps {
        let mut n = [0.0; 3];
        for (a, slot) in n.iter_mut().enumerate() {
            if !(flat && a == 0) {
                *slot = rng.gen_range(-1.0..1.0) * jitter;
            }
        }
        d = normalize([d[0] + n[0], d[1] + n[1], d[2] + n[2]]);
        for a in 0..3 {
            pos[a] += d[a];
        }
        let v = round(pos)?;
        if Some(&v) != points.last() {
            points.push(v);
        }
    }
    Some(thin_path(&points))
}

/// Drops staircase corners so that every point is 26-adjacent only to its
/// predecessor and successor: from each point, jump to the farthest later
/// point still adjacent to it.
fn thin_path(points: &[Voxel]) -> Vec<Voxel> {
    let mut out = vec![points[0]];
    let mut i = 0;
    while i + 1 < points.len() {
        let next = (i + 1..points.len()).rev().find(|&j| points[i].chebyshev(&points[j]) <= 1).unwrap_or(i + 1);
        out.push(points[next]);
        i = next;
    }
    out
}

fn brush(radius: usize, flat: bool) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let zr = if flat { 0 } else { r };
    let mut out = Vec::new();
    for dz in -zr..=zr {
        for dy in -r..=r {
            for dx in -r..=r {
                if dz * dz + dy * dy + dx * dx <= r * r {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

fn rasterize(shape: Shape, branches: &[Branch], kept: &[Vec<bool>]) -> BinaryMask {
    let mut mask = BinaryMask::zeros(shape, Spacing::UNIT);
    let flat = planar(shape);
    for (b, keep) in branches.iter().zip(kept) {
        let offsets = brush(b.radius, flat);
        for (p, _) in b.points.iter().zip(keep).filter(|(_, k)| **k) {
            for o in &offsets {
                let (z, y, x) = (p.z as i64 + o[0], p.y as i64 + o[1], p.x as i64 + o[2]);
                if shape.contains(z, y, x) {
                    mask.set(Voxel::new(z as usize, y as usize, x as usize), true);
                }
            }
        }
    }
    mask
}

/// Whether `candidate` keeps clear of every placed branch. Points of the
/// parent near the junction are exempt.
fn clear_of(candidate: &Branch, placed: &[Branch]) -> bool {
    let junction = candidate.points.first().map(|&v| to_f(v));
    for (idx, other) in placed.iter().enumerate() {
        let need = (candidate.radius + other.radius) as f64 + CLEARANCE;
        let is_parent = candidate.parent == Some(idx);
        for q in &candidate.points {
            let qf = to_f(*q);
            if is_parent && dist(qf, junction.unwrap()) < need + 1.0 {
                continue;
            }
            for p in &other.points {
                let pf = to_f(*p);
                if is_parent && dist(pf, junction.unwrap()) < need + 1.0 {
                    continue;
                }
                if dist(qf, pf) < need {
                    return false;
                }
            }
        }
    }
    true
}

/// Builds an uncut network fixture.
pub fn generate(spec: &TubeNetworkSpec) -> Result<Fixture> {
    spec.validate()?;
    let shape = spec.shape;
    let flat = planar(shape);
    let dims = shape.dims();
    let mut rng = substream(spec.seed, SYNTH_STREAM);

    for _layout in 0..spec.max_attempts {
        let mut branches: Vec<Branch> = Vec::new();
        let mut failed = false;
        while branches.len() < spec.n_branches {
            let mut placed = false;
            for _ in 0..spec.max_attempts {
                let radius = rng.gen_range(spec.radius[0]..=spec.radius[1]);
                let margin = (radius + 1) as f64;
                let lo = [if flat { 0.0 } else { margin }, margin, margin];
                let hi = [
                    if flat { 0.0 } else { dims[0] as f64 - 1.0 - margin },
                    dims[1] as f64 - 1.0 - margin,
                    dims[2] as f64 - 1.0 - margin,
                ];
                if (0..3).any(|a| hi[a] < lo[a]) {
                    return Err(Error::SpecInfeasible(format!("shape {dims:?} too small for radius {radius}")));
                }
                let steps = rng.gen_range(spec.min_branch_length..=spec.max_branch_length);
                let (start, dir, parent, junction) = if branches.is_empty() {
                    let start = [0, 1, 2].map(|a| if hi[a] > lo[a] { rng.gen_range(lo[a]..=hi[a]) } else { lo[a] });
                    (start, random_direction(&mut rng, flat), None, None)
                } else {
                    let pi = rng.gen_range(0..branches.len());
                    let parent = &branches[pi];
                    let n = parent.points.len();
                    let j = rng.gen_range(n / 5..=(4 * n) / 5).min(n - 2).max(1);
                    let tangent = normalize({
                        let a = to_f(parent.points[j - 1]);
                        let b = to_f(parent.points[j + 1]);
                        [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
                    });
                    let dir = loop {
                        let d = random_direction(&mut rng, flat);
                        if (d[0] * tangent[0] + d[1] * tangent[1] + d[2] * tangent[2]).abs() < 0.6 {
                            break d;
                        }
                    };
                    (to_f(parent.points[j]), dir, Some(pi), Some(j))
                };
                let Some(points) = grow(start, dir, steps, spec.jitter, (lo, hi), flat, &mut rng) else {
                    continue;
                };
                let candidate = Branch { parent, junction, radius, points };
                if candidate.points.len() >= 2 && clear_of(&candidate, &branches) {
                    branches.push(candidate);
                    placed = true;
                    break;
                }
            }
            if !placed {
                failed = true;
                break;
            }
        }
        if failed {
            continue;
        }

        let kept: Vec<Vec<bool>> = branches.iter().map(|b| vec![true; b.points.len()]).collect();
        let gt_mask = rasterize(shape, &branches, &kept);
        let gt_betti = betti(&gt_mask);
        if gt_betti.b0 != 1 || gt_betti.b1 != 0 || gt_betti.b2 != 0 {
            continue;
        }
        let mut ends = vec![branches[0].points[0]];
        ends.extend(branches.iter().map(|b| *b.points.last().unwrap()));
        return Ok(Fixture {
            spec: spec.clone(),
            frag_mask: gt_mask.clone(),
            gt_mask,
            true_endpoints: EndpointSet::new(ends),
            cut_midpoints: Vec::new(),
            gt_betti,
            frag_components: 1,
            windows: Vec::new(),
            kept,
            branches,
        });
    }
    Err(Error::SpecInfeasible(format!(
        "could not place {} branches in {:?} after {} attempts",
        spec.n_branches, dims, spec.max_attempts
    )))
}

/// Centerline index closest to arc-length fraction `t`.
fn index_at(points: &[Voxel], t: f64) -> usize {
    let mut acc = vec![0.0];
    for w in points.windows(2) {
        acc.push(acc.last().unwrap() + w[0].distance(&w[1]));
    }
    let target = t * acc.last().unwrap();
    (0..points.len()).min_by(|&a, &b| (acc[a] - target).abs().total_cmp(&(acc[b] - target).abs())).unwrap()
}

/// Connected pieces of the surviving centerline graph.
fn centerline_components(branches: &[Branch], kept: &[Vec<bool>]) -> usize {
    let mut ids: HashMap<Voxel, usize> = HashMap::new();
    let mut parent: Vec<usize> = Vec::new();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for (b, keep) in branches.iter().zip(kept) {
        let mut prev: Option<usize> = None;
        for (p, k) in b.points.iter().zip(keep) {
            if !k {
                prev = None;
                continue;
            }
            let id = *ids.entry(*p).or_insert_with(|| {
                parent.push(parent.len());
                parent.len() - 1
            });
            if let Some(q) = prev {
                let (a, c) = (find(&mut parent, q), find(&mut parent, id));
                parent[a] = c;
            }
            prev = Some(id);
        }
    }
    (0..parent.len()).filter(|&i| find(&mut parent, i) == i).count()
}

/// Removes the tube around each cut position.
///
/// Every centerline point of the cut branch within `gap / 2 + radius` of the
/// midpoint is dropped, so no foreground remains within `gap / 2` of it.
pub fn apply_cuts(fix: &Fixture, cuts: &CutSpec) -> Result<Fixture> {
    if cuts.cuts.is_empty() {
        return Ok(fix.clone());
    }
    if cuts.gap == 0 {
        return Err(Error::InvalidCut("gap must be >= 1".into()));
    }
    let mut out = fix.clone();
    let junctions = fix.junctions();
    let r_max = fix.max_radius() as f64;
    let half = cuts.gap as f64 / 2.0;

    for cut in &cuts.cuts {
        let Some(branch) = fix.branches.get(cut.branch) else {
            return Err(Error::InvalidCut(format!("no branch {}", cut.branch)));
        };
        if !(cut.t > 0.0 && cut.t < 1.0) {
            return Err(Error::InvalidCut(format!("t = {} is outside (0, 1)", cut.t)));
        }
        let mid = branch.points[index_at(&branch.points, cut.t)];
        let reach = half + branch.radius as f64;
        let window: Vec<(usize, usize)> = (0..branch.points.len())
            .filter(|&i| branch.points[i].distance(&mid) <= reach)
            .map(|i| (cut.branch, i))
            .collect();
        for j in &junctions {
            let near = window.iter().any(|&(_, i)| branch.points[i].distance(j) <= reach.max(2.0 * r_max + 1.0));
            if near || mid.distance(j) <= reach + 2.0 * r_max + 1.0 {
                return Err(Error::InvalidCut(format!(
                    "cut at t = {} on branch {} overlaps the junction at {:?}",
                    cut.t, cut.branch, j
                )));
            }
        }
        for other in &out.windows {
            let touching = window.iter().any(|&(b, i)| {
                other
                    .iter()
                    .any(|&(ob, oi)| ob == b && fix.branches[b].points[i].chebyshev(&fix.branches[ob].points[oi]) <= 1)
            });
            if touching {
                return Err(Error::InvalidCut(format!(
                    "cut at t = {} on branch {} overlaps another cut",
                    cut.t, cut.branch
                )));
            }
        }
        for &(b, i) in &window {
            out.kept[b][i] = false;
        }
        out.windows.push(window);
        out.cut_midpoints.push(mid);
    }

    out.frag_mask = rasterize(fix.spec.shape, &out.branches, &out.kept);
    out.frag_components = connected_components(&out.frag_mask, Connectivity::Full)
        .expect("full connectivity is valid for every rank")
        .count;

    let expected = centerline_components(&out.branches, &out.kept);
    if out.frag_components != expected {
        return Err(Error::InvalidCut(format!(
            "fragmented mask has {} components, centerline graph has {}",
            out.frag_components, expected
        )));
    }
    debug_assert!(out.frag_mask.is_subset_of(&out.gt_mask));
    for m in &out.cut_midpoints {
        if out.frag_mask.voxels().any(|v| v.distance(m) <= half) {
            return Err(Error::InvalidCut(format!("foreground left within the gap around {m:?}")));
        }
    }
    Ok(out)
}

/// Draws `n` valid cuts at `t` in `[0.25, 0.75]` whose midpoints are at
/// least `min_separation` apart.
pub fn sample_cuts(fix: &Fixture, n: usize, gap: usize, min_separation: f64, rng: &mut ChaCha8Rng) -> Result<CutSpec> {
    let mut accepted: Vec<CutPosition> = Vec::new();
    let mut mids: Vec<Voxel> = Vec::new();
    for _ in 0..fix.spec.max_attempts * n.max(1) {
        if accepted.len() == n {
            break;
        }
        let branch = rng.gen_range(0..fix.branches.len());
        let t = rng.gen_range(0.25..=0.75);
        let points = &fix.branches[branch].points;
        let mid = points[index_at(points, t)];
        if mids.iter().any(|m| m.distance(&mid) < min_separation) {
            continue;
        }
        let mut trial = accepted.clone();
        trial.push(CutPosition { branch, t });
        if apply_cuts(fix, &CutSpec { cuts: trial.clone(), gap }).is_ok() {
            accepted = trial;
            mids.push(mid);
        }
    }
    if accepted.len() < n {
        return Err(Error::SpecInfeasible(format!("placed only {} of {n} cuts", accepted.len())));
    }
    Ok(CutSpec { cuts: accepted, gap })
}

/// How many cuts to inject and where.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CutPlan {
    pub n_cuts: usize,
    pub gap: usize,
    /// Minimum distance between cut midpoints, in voxels.
    pub min_separation: f64,
}

impl Default for CutPlan {
    fn default() -> Self {
        CutPlan { n_cuts: 3, gap: 4, min_separation: 16.0 }
    }
}

/// Generates a network and injects `plan.n_cuts` sampled cuts. Cut sampling
/// draws from its own stream of `spec.seed`.
pub fn generate_with_cuts(spec: &TubeNetworkSpec, plan: &CutPlan) -> Result<Fixture> {
    if plan.gap == 0 {
        return Err(Error::InvalidConfig("cut gap must be >= 1".into()));
    }
    let fix = generate(spec)?;
    if plan.n_cuts == 0 {
        return Ok(fix);
    }
    let mut rng = substream(spec.seed, CUTS_STREAM);
    let cuts = sample_cuts(&fix, plan.n_cuts, plan.gap, plan.min_separation, &mut rng)?;
    apply_cuts(&fix, &cuts)
}
