//! Endpoint-guided discontinuity mining.
//!
//! Given a ground-truth mask and a prediction, the miner
//!
//! 1. skeletonizes both and collects skeleton endpoints,
//! 2. measures, for each prediction endpoint, the distance to the closest
//!    ground-truth endpoint (and the reverse),
//! 3. keeps the endpoints whose distance exceeds `mean + std` of their side,
//! 4. merges both sides, clusters them with DBSCAN and keeps one
//!    representative per cluster,
//! 5. paints a cube window around every representative.
//!
//! The union of windows is the discontinuity mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ProbVolume, Shape, Spacing, Voxel};
use crate::rng::{substream, EDM_STREAM};
use crate::skeleton::{binarize, detect_endpoints, soft_skeleton, EndpointSet, ThinningParams};

/// Relative slack for the strict `d > tau` test, scaled by the largest
/// distance of the set. Values this close to the threshold count as ties.
const TIE_TOLERANCE: f64 = 1e-9;

/// How one point is picked from each cluster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representative {
    /// Seeded uniform choice among the members.
    #[default]
    Random,
    /// Member with the smallest summed distance to the others; ties go to the
    /// lexicographically smallest coordinate.
    Medoid,
}

/// Mining parameters. All distances are in voxel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdmConfig {
    /// Cube window `(w_z, w_y, w_x)`.
    pub window: [usize; 3],
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub representative: Representative,
    pub rng_seed: u64,
    /// Multiplier on the standard deviation in the selection threshold.
    pub std_multiplier: f64,
}

impl EdmConfig {
    /// Defaults for a patch: window = patch / 8 per axis (at least 1),
    /// eps = max(window) / 2, min_pts = 1.
    pub fn for_patch(shape: Shape) -> Self {
        let d = shape.dims();
        EdmConfig::with_window([(d[0] / 8).max(1), (d[1] / 8).max(1), (d[2] / 8).max(1)])
    }

    /// Defaults around an explicit window.
    pub fn with_window(window: [usize; 3]) -> Self {
        let widest = window.iter().copied().max().unwrap_or(1);
        EdmConfig {
            window,
            dbscan_eps: widest as f64 / 2.0,
            dbscan_min_pts: 1,
            representative: Representative::Random,
            rng_seed: 0,
            std_multiplier: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.contains(&0) {
            return Err(Error::InvalidConfig(format!("window components must be >= 1, got {:?}", self.window)));
        }
        if !(self.dbscan_eps.is_finite() && self.dbscan_eps > 0.0) {
            return Err(Error::InvalidConfig(format!("dbscan eps must be > 0, got {}", self.dbscan_eps)));
        }
        if self.dbscan_min_pts == 0 {
            return Err(Error::InvalidConfig("dbscan min_pts must be >= 1".into()));
        }
        if !self.std_multiplier.is_finite() {
            return Err(Error::InvalidConfig("std multiplier must be finite".into()));
        }
        Ok(())
    }

    fn half_window(&self) -> [usize; 3] {
        [self.window[0] / 2, self.window[1] / 2, self.window[2] / 2]
    }
}

/// One query endpoint and its distance to the closest reference endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub point: Voxel,
    /// `None` when the reference set was empty.
    pub distance: Option<f64>,
}

/// Shortest endpoint distances for one side of the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSet {
    pub entries: Vec<DistanceEntry>,
    /// Set when the reference was empty: every query endpoint is unmatched.
    pub all_spurious: bool,
}

impl DistanceSet {
    /// Builds a set from raw distances (points are synthesized along x).
    pub fn from_distances(distances: &[f64]) -> Self {
        DistanceSet {
            entries: distances
                .iter()
                .enumerate()
                .map(|(i, &d)| DistanceEntry { point: Voxel::new(0, 0, i), distance: Some(d) })
                .collect(),
            all_spurious: false,
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().filter_map(|e| e.distance)
    }

    pub fn mean(&self) -> Option<f64> {
        if self.all_spurious || self.entries.is_empty() {
            return None;
        }
        Some(self.values().sum::<f64>() / self.entries.len() as f64)
    }

    /// Population standard deviation.
    pub fn std(&self) -> Option<f64> {
        let mean = self.mean()?;
        let var = self.values().map(|d| (d - mean) * (d - mean)).sum::<f64>() / self.entries.len() as f64;
        Some(var.sqrt())
    }
}

/// Minimum Euclidean distance (index space) from each query point to the
/// reference set.
pub fn min_endpoint_distances(query: &EndpointSet, reference: &EndpointSet) -> Result<DistanceSet> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if reference.is_empty() {
        return Ok(DistanceSet {
            entries: query.points.iter().map(|&p| DistanceEntry { point: p, distance: None }).collect(),
            all_spurious: true,
        });
    }
    let entries = query
        .points
        .iter()
        .map(|q| {
            let best = reference.points.iter().map(|r| q.distance_sq(r)).fold(f64::INFINITY, f64::min);
            DistanceEntry { point: *q, distance: Some(best.sqrt()) }
        })
        .collect();
    Ok(DistanceSet { entries, all_spurious: false })
}

/// Points selected by the dynamic threshold, plus the threshold itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub points: Vec<Voxel>,
    /// `None` when thresholding was skipped (empty reference).
    pub threshold: Option<f64>,
}

/// Keeps points with `d > mean(D) + std(D)`.
pub fn select_discontinuity_points(d: &DistanceSet) -> Selection {
    select_with_multiplier(d, 1.0)
}

/// Keeps points with `d > mean(D) + m * std(D)`; an all-spurious set keeps
/// every point.
pub fn select_with_multiplier(d: &DistanceSet, std_multiplier: f64) -> Selection {
    if d.all_spurious {
        return Selection { points: d.entries.iter().map(|e| e.point).collect(), threshold: None };
    }
    let (Some(mean), Some(std)) = (d.mean(), d.std()) else {
        return Selection { points: Vec::new(), threshold: None };
    };
    let tau = mean + std_multiplier * std;
    let scale = d.values().fold(0.0f64, |a, v| a.max(v.abs()));
    let slack = TIE_TOLERANCE * scale;
    let points = d.entries.iter().filter(|e| e.distance.is_some_and(|v| v - tau > slack)).map(|e| e.point).collect();
    Selection { points, threshold: Some(tau) }
}

/// DBSCAN assignment of each candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    /// Clustered points, in the order they were given.
    pub points: Vec<Voxel>,
    /// Cluster id per point; `None` marks noise.
    pub cluster: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl ClusterLabeling {
    pub fn is_noise(&self, i: usize) -> bool {
        self.cluster[i].is_none()
    }
}

/// Standard DBSCAN with Euclidean distance in index space.
///
/// A point's neighborhood includes itself and every point within `eps`
/// (inclusive). With `min_pts = 1` this is the connected components of the
/// eps-graph. Cluster ids follow the order of `points`, so sorting the input
/// makes the labeling reproducible.
pub fn cluster_candidates(points: &[Voxel], cfg: &EdmConfig) -> ClusterLabeling {
    let n = points.len();
    let eps_sq = cfg.dbscan_eps * cfg.dbscan_eps;
    let region = |i: usize| -> Vec<usize> { (0..n).filter(|&j| points[i].distance_sq(&points[j]) <= eps_sq).collect() };

    let mut cluster = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_id = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = region(i);
        if seeds.len() < cfg.dbscan_min_pts {
            continue;
        }
        cluster[i] = Some(next_id);
        let mut queue = std::collections::VecDeque::from(seeds);
        while let Some(j) = queue.pop_front() {
            if cluster[j].is_none() {
                cluster[j] = Some(next_id);
            }
            if !visited[j] {
                visited[j] = true;
                let more = region(j);
                if more.len() >= cfg.dbscan_min_pts {
                    queue.extend(more);
                }
            }
        }
        next_id += 1;
    }
    ClusterLabeling { points: points.to_vec(), cluster, n_clusters: next_id }
}

/// One representative per cluster. Noise points are kept as singleton
/// clusters. The result is sorted.
pub fn reduce_clusters<R: Rng>(labeling: &ClusterLabeling, cfg: &EdmConfig, rng: &mut R) -> Vec<Voxel> {
    let mut groups: Vec<Vec<Voxel>> = vec![Vec::new(); labeling.n_clusters];
    let mut singletons = Vec::new();
    for (p, c) in labeling.points.iter().zip(&labeling.cluster) {
        match c {
            Some(id) => groups[*id].push(*p),
            None => singletons.push(vec![*p]),
        }
    }
    groups.extend(singletons);

    let mut out: Vec<Voxel> = groups
        .iter()
        .map(|members| match cfg.representative {
            Representative::Random => members[rng.gen_range(0..members.len())],
            Representative::Medoid => medoid(members),
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn medoid(members: &[Voxel]) -> Voxel {
    let mut best = (f64::INFINITY, members[0]);
    for &m in members {
        let cost: f64 = members.iter().map(|o| m.distance(o)).sum();
        if cost < best.0 || (cost == best.0 && m < best.1) {
            best = (cost, m);
        }
    }
    best.1
}

/// Union of cube windows around the seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscontinuityMask {
    pub mask: BinaryMask,
    pub seeds: Vec<Voxel>,
}

/// Paints `|c - p_c| <= floor(w_c / 2)` on every axis around each seed,
/// clipped to the grid.
pub fn build_mask(points: &[Voxel], cfg: &EdmConfig, shape: Shape, spacing: Spacing) -> Result<DiscontinuityMask> {
    let mut mask = BinaryMask::zeros(shape, spacing);
    let half = cfg.half_window();
    let dims = shape.dims();
    for p in points {
        if !shape.contains(p.z as i64, p.y as i64, p.x as i64) {
            return Err(Error::OutOfBounds { z: p.z as i64, y: p.y as i64, x: p.x as i64, shape });
        }
        let c = [p.z, p.y, p.x];
        let lo: Vec<usize> = (0..3).map(|a| c[a].saturating_sub(half[a])).collect();
        let hi: Vec<usize> = (0..3).map(|a| (c[a] + half[a]).min(dims[a] - 1)).collect();
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    mask.set(Voxel::new(z, y, x), true);
                }
            }
        }
    }
    Ok(DiscontinuityMask { mask, seeds: points.to_vec() })
}

/// Candidate points at every stage of the pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Prediction endpoints far from any ground-truth endpoint.
    pub pred_side: Vec<Voxel>,
    /// Ground-truth endpoints far from any prediction endpoint.
    pub gt_side: Vec<Voxel>,
    /// Sorted, de-duplicated union of both sides.
    pub merged: Vec<Voxel>,
    /// One representative per cluster of `merged`.
    pub reduced: Vec<Voxel>,
}

/// A prediction handed to [`mine`].
#[derive(Clone, Copy, Debug)]
pub enum Prediction<'a> {
    Mask(&'a BinaryMask),
    Scores(&'a ProbVolume),
}

impl<'a> From<&'a BinaryMask> for Prediction<'a> {
    fn from(m: &'a BinaryMask) -> Self {
        Prediction::Mask(m)
    }
}

impl<'a> From<&'a ProbVolume> for Prediction<'a> {
    fn from(p: &'a ProbVolume) -> Self {
        Prediction::Scores(p)
    }
}

/// Threshold statistics of one side.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub endpoints: usize,
    pub selected: usize,
    pub threshold: Option<f64>,
    pub all_spurious: bool,
}

/// Everything [`mine`] produces.
#[derive(Clone, Debug)]
pub struct MiningOutcome {
    pub mask: DiscontinuityMask,
    pub candidates: CandidateSet,
    pub pred_endpoints: EndpointSet,
    pub gt_endpoints: EndpointSet,
    pub pred_summary: SideSummary,
    pub gt_summary: SideSummary,
    pub n_clusters: usize,
}

/// Serializable digest of a [`MiningOutcome`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningSummary {
    pub pred_endpoints: usize,
    pub gt_endpoints: usize,
    pub pred_side: SideSummary,
    pub gt_side: SideSummary,
    pub n_clusters: usize,
    pub candidates: CandidateSet,
    pub mask_voxels: usize,
}

impl MiningOutcome {
    pub fn summary(&self) -> MiningSummary {
        MiningSummary {
            pred_endpoints: self.pred_endpoints.len(),
            gt_endpoints: self.gt_endpoints.len(),
            pred_side: self.pred_summary.clone(),
            gt_side: self.gt_summary.clone(),
            n_clusters: self.n_clusters,
            candidates: self.candidates.clone(),
            mask_voxels: self.mask.mask.count(),
        }
    }
}

fn select_side(query: &EndpointSet, reference: &EndpointSet, m: f64) -> Result<(Vec<Voxel>, SideSummary)> {
    if query.is_empty() {
        return Ok((Vec::new(), SideSummary::default()));
    }
    let d = min_endpoint_distances(query, reference)?;
    let sel = select_with_multiplier(&d, m);
    let summary = SideSummary {
        endpoints: query.len(),
        selected: sel.points.len(),
        threshold: sel.threshold,
        all_spurious: d.all_spurious,
    };
    Ok((sel.points, summary))
}

/// Runs the full mining pipeline and returns the discontinuity mask.
pub fn mine<'a>(
    gt: &BinaryMask,
    pred: impl Into<Prediction<'a>>,
    cfg: &EdmConfig,
    params: &ThinningParams,
) -> Result<MiningOutcome> {
    cfg.validate()?;
    let binarized;
    let pred_mask = match pred.into() {
        Prediction::Mask(m) => m,
        Prediction::Scores(p) => {
            binarized = binarize(p, params);
            &binarized
        }
    };
    gt.ensure_same_shape(pred_mask)?;

    let gt_endpoints = detect_endpoints(&soft_skeleton(gt, params));
    let pred_endpoints = detect_endpoints(&soft_skeleton(pred_mask, params));

    let (pred_side, pred_summary) = select_side(&pred_endpoints, &gt_endpoints, cfg.std_multiplier)?;
    let (gt_side, gt_summary) = select_side(&gt_endpoints, &pred_endpoints, cfg.std_multiplier)?;

    let mut merged: Vec<Voxel> = pred_side.iter().chain(&gt_side).copied().collect();
    merged.sort_unstable();
    merged.dedup();

    let (reduced, n_clusters) = if merged.is_empty() {
        (Vec::new(), 0)
    } else {
        let labeling = cluster_candidates(&merged, cfg);
        let mut rng = substream(cfg.rng_seed, EDM_STREAM);
        (reduce_clusters(&labeling, cfg, &mut rng), labeling.n_clusters)
    };

    let mask = build_mask(&reduced, cfg, gt.shape(), gt.spacing())?;
    Ok(MiningOutcome {
        mask,
        candidates: CandidateSet { pred_side, gt_side, merged, reduced },
        pred_endpoints,
        gt_endpoints,
        pred_summary,
        gt_summary,
        n_clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(points: &[[usize; 3]]) -> EndpointSet {
        EndpointSet::new(points.iter().map(|&p| Voxel::from(p)).collect())
    }

    #[test]
    fn distance_three_four_five() {
        let d = min_endpoint_distances(&set(&[[0, 0, 0]]), &set(&[[0, 3, 4]])).unwrap();
        assert_eq!(d.entries[0].distance, Some(5.0));
    }

    #[test]
    fn distance_to_self_is_zero() {
        let pts = set(&[[1, 2, 3], [4, 5, 6], [0, 9, 2]]);
        let d = min_endpoint_distances(&pts, &pts).unwrap();
        assert!(d.entries.iter().all(|e| e.distance == Some(0.0)));
    }

    #[test]
    fn empty_query_and_reference() {
        assert!(matches!(min_endpoint_distances(&set(&[]), &set(&[[0, 0, 0]])), Err(Error::EmptyQuery)));
        let d = min_endpoint_distances(&set(&[[0, 0, 0], [1, 1, 1]]), &set(&[])).unwrap();
        assert!(d.all_spurious);
        assert_eq!(select_discontinuity_points(&d).points.len(), 2);
    }

    #[test]
    fn random_sets_match_pairwise_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut rand_set = |n: usize| -> EndpointSet {
                let mut pts = Vec::new();
                while pts.len() < n {
                    let p = Voxel::new(rng.gen_range(0..30), rng.gen_range(0..30), rng.gen_range(0..30));
                    if !pts.contains(&p) {
                        pts.push(p);
                    }
                }
                EndpointSet::new(pts)
            };
            let q = rand_set(20);
            let r = rand_set(15);
            let d = min_endpoint_distances(&q, &r).unwrap();
            for e in &d.entries {
                let mut table = Vec::new();
                for rp in &r.points {
                    let (dz, dy, dx) = (
                        e.point.z as f64 - rp.z as f64,
                        e.point.y as f64 - rp.y as f64,
                        e.point.x as f64 - rp.x as f64,
                    );
                    table.push((dz * dz + dy * dy + dx * dx).sqrt());
                }
                let oracle = table.into_iter().fold(f64::INFINITY, f64::min);
                assert_eq!(e.distance, Some(oracle));
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let flat = select_discontinuity_points(&DistanceSet::from_distances(&[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(flat.threshold, Some(1.0));
        assert!(flat.points.is_empty());

        // mean 2.5, population std sqrt(18.75)
        let spike = select_discontinuity_points(&DistanceSet::from_distances(&[0.0, 0.0, 0.0, 10.0]));
        assert!((spike.threshold.unwrap() - (2.5 + 18.75f64.sqrt())).abs() < 1e-12);
        assert!((spike.threshold.unwrap() - 6.8301).abs() < 1e-4);
        assert_eq!(spike.points, vec![Voxel::new(0, 0, 3)]);

        let single = select_discontinuity_points(&DistanceSet::from_distances(&[7.0]));
        assert_eq!(single.threshold, Some(7.0));
        assert!(single.points.is_empty());
    }

    #[test]
    fn balanced_two_value_sets_select_nothing() {
        // mean + std equals the larger value exactly; strict comparison drops it.
        for (a, b) in [(0.1, 0.7), (1.0, 3.0), (2f64.sqrt(), 5f64.sqrt())] {
            let d = DistanceSet::from_distances(&[a, b, a, b, a, b]);
            assert!(select_discontinuity_points(&d).points.is_empty(), "{a} {b}");
        }
    }

    proptest! {
        #[test]
        fn selection_is_scale_invariant(values in prop::collection::vec(0u32..400, 1..40), c in prop::sample::select(vec![0.1, 3.0, 100.0])) {
            let d: Vec<f64> = values.iter().map(|&v| (v as f64).sqrt()).collect();
            let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
            let a = select_discontinuity_points(&DistanceSet::from_distances(&d));
            let b = select_discontinuity_points(&DistanceSet::from_distances(&scaled));
            prop_assert_eq!(a.points, b.points);
        }
    }

    fn cfg_eps(eps: f64) -> EdmConfig {
        EdmConfig { dbscan_eps: eps, ..EdmConfig::with_window([4, 4, 4]) }
    }

    #[test]
    fn chain_forms_one_cluster() {
        let pts: Vec<Voxel> = (0..6).map(|i| Voxel::new(0, 0, i * 2)).collect();
        let lab = cluster_candidates(&pts, &cfg_eps(2.0));
        assert_eq!(lab.n_clusters, 1);
    }

    #[test]
    fn distant_points_form_two_clusters() {
        let pts = vec![Voxel::new(0, 0, 0), Voxel::new(0, 0, 20)];
        let lab = cluster_candidates(&pts, &cfg_eps(2.0));
        assert_eq!(lab.n_clusters, 2);
    }

    #[test]
    fn min_pts_one_matches_graph_closure() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut pts: Vec<Voxel> =
                (0..50).map(|_| Voxel::new(rng.gen_range(0..20), rng.gen_range(0..20), rng.gen_range(0..20))).collect();
            pts.sort_unstable();
            pts.dedup();
            let eps = rng.gen_range(1.0..6.0);
            let lab = cluster_candidates(&pts, &cfg_eps(eps));
            // Transitive closure of the eps-adjacency matrix (Warshall).
            let n = pts.len();
            let mut reach = vec![vec![false; n]; n];
            for i in 0..n {
                for j in 0..n {
                    reach[i][j] = pts[i].distance(&pts[j]) <= eps;
                }
            }
            for k in 0..n {
                for i in 0..n {
                    if reach[i][k] {
                        for j in 0..n {
                            if reach[k][j] {
                                reach[i][j] = true;
                            }
                        }
                    }
                }
            }
            for i in 0..n {
                assert!(!lab.is_noise(i));
                for j in 0..n {
                    assert_eq!(reach[i][j], lab.cluster[i] == lab.cluster[j]);
                }
            }
        }
    }

    #[test]
    fn noise_points_survive_reduction() {
        let pts = vec![Voxel::new(0, 0, 0), Voxel::new(0, 0, 1), Voxel::new(0, 0, 30)];
        let cfg = EdmConfig { dbscan_min_pts: 2, ..cfg_eps(1.5) };
        let lab = cluster_candidates(&pts, &cfg);
        assert_eq!(lab.n_clusters, 1);
        assert!(lab.is_noise(2));
        let reduced = reduce_clusters(&lab, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(reduced.len(), 2);
        assert!(reduced.contains(&Voxel::new(0, 0, 30)));
    }

    #[test]
    fn singleton_clusters_reduce_to_identity() {
        let pts: Vec<Voxel> = (0..5).map(|i| Voxel::new(i * 10, 0, 0)).collect();
        let cfg = cfg_eps(1.0);
        let reduced = reduce_clusters(&cluster_candidates(&pts, &cfg), &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(reduced, pts);
    }

    #[test]
    fn medoid_of_a_line_is_its_middle() {
        let pts: Vec<Voxel> = (0..5).map(|x| Voxel::new(3, 3, x)).collect();
        let cfg = EdmConfig { representative: Representative::Medoid, ..cfg_eps(1.5) };
        let reduced = reduce_clusters(&cluster_candidates(&pts, &cfg), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(reduced, vec![Voxel::new(3, 3, 2)]);
    }

    #[test]
    fn random_representative_is_reproducible() {
        let pts: Vec<Voxel> = (0..12).map(|x| Voxel::new(0, x % 3, x)).collect();
        let cfg = cfg_eps(2.0);
        let lab = cluster_candidates(&pts, &cfg);
        let first = reduce_clusters(&lab, &cfg, &mut substream(42, EDM_STREAM));
        for _ in 0..100 {
            assert_eq!(reduce_clusters(&lab, &cfg, &mut substream(42, EDM_STREAM)), first);
        }
    }

    #[test]
    fn window_clipping_and_union() {
        let shape = Shape::new_3d(64, 64, 64);
        let cfg = EdmConfig::with_window([4, 4, 4]);
        let corner = build_mask(&[Voxel::new(0, 0, 0)], &cfg, shape, Spacing::UNIT).unwrap();
        assert_eq!(corner.mask.count(), 27);
        let center = build_mask(&[Voxel::new(32, 32, 32)], &cfg, shape, Spacing::UNIT).unwrap();
        assert_eq!(center.mask.count(), 125);
        let pair = build_mask(&[Voxel::new(32, 32, 32), Voxel::new(32, 32, 34)], &cfg, shape, Spacing::UNIT).unwrap();
        assert!(pair.mask.count() < 250);
        assert_eq!(pair.mask.count(), 5 * 5 * 7);
        let out = build_mask(&[Voxel::new(64, 0, 0)], &cfg, shape, Spacing::UNIT);
        assert!(matches!(out, Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn default_config_follows_patch() {
        let c = EdmConfig::for_patch(Shape::new_3d(96, 96, 96));
        assert_eq!(c.window, [12, 12, 12]);
        assert_eq!(c.dbscan_eps, 6.0);
        assert_eq!(c.dbscan_min_pts, 1);
        let c2 = EdmConfig::for_patch(Shape::new_2d(512, 256));
        assert_eq!(c2.window, [1, 64, 32]);
    }

    fn tube(shape: Shape, from: usize, to: usize) -> BinaryMask {
        BinaryMask::from_fn(shape, Spacing::UNIT, |v| {
            // Distance to the segment, so the caps are rounded.
            let dx = (v.x as f64).clamp(from as f64, to as f64) - v.x as f64;
            let dy = v.y as f64 - 10.0;
            let dz = v.z as f64 - 10.0;
            dx * dx + dy * dy + dz * dz <= 1.0
        })
    }

    #[test]
    fn perfect_prediction_yields_empty_mask() {
        let shape = Shape::new_3d(21, 21, 40);
        let gt = tube(shape, 4, 35);
        let out = mine(&gt, &gt, &EdmConfig::for_patch(shape), &ThinningParams::default()).unwrap();
        assert!(out.mask.mask.is_empty());
        assert!(out.candidates.merged.is_empty());
    }

    #[test]
    fn empty_prediction_selects_ground_truth_endpoints() {
        let shape = Shape::new_3d(21, 21, 40);
        let gt = tube(shape, 4, 35);
        let pred = BinaryMask::zeros(shape, Spacing::UNIT);
        let cfg = EdmConfig { dbscan_eps: 1.0, ..EdmConfig::with_window([4, 4, 4]) };
        let out = mine(&gt, &pred, &cfg, &ThinningParams::default()).unwrap();
        assert!(out.gt_summary.all_spurious);
        assert_eq!(out.candidates.gt_side, out.gt_endpoints.points);
        let expected = build_mask(&out.candidates.reduced, &cfg, shape, Spacing::UNIT).unwrap();
        assert_eq!(out.mask.mask, expected.mask);
        assert!(!out.mask.mask.is_empty());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = BinaryMask::zeros(Shape::new_3d(4, 4, 4), Spacing::UNIT);
        let b = BinaryMask::zeros(Shape::new_3d(4, 4, 5), Spacing::UNIT);
        let r = mine(&a, &b, &EdmConfig::with_window([2, 2, 2]), &ThinningParams::default());
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }
}
