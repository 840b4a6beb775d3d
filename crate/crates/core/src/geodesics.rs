//! Shortest paths between extreme points on the voxel grid.
//!
//! The length of a discrete path `Γ` is the sum over its edges of
//!
//! ```text
//! γ_e · d(Γ_k, Γ_k+1) + γ_g · |X(Γ_k+1) − X(Γ_k)| + (1 − p(Γ_k))
//! ```
//!
//! where `d` is the physical step length in mm and `p` the current
//! foreground probability. The Euclidean term is dropped in
//! [`GeodesicMode::Gradient`] and the probability term is only present in
//! [`GeodesicMode::Deep`]. Paths never leave the tight bounding box of the
//! extreme points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{tight_bbox, ExtremePointSet, VoxelBox};
use crate::error::{Error, Result};
use crate::volume::{Spacing, Volume, VoxelIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeodesicMode {
    /// Accumulated intensity differences only.
    Gradient,
    /// Intensity differences plus physical step length.
    GradientEuclidean,
    /// Step length, intensity differences and the model's background probability.
    Deep,
}

impl GeodesicMode {
    pub const ALL: [GeodesicMode; 3] = [
        GeodesicMode::Gradient,
        GeodesicMode::GradientEuclidean,
        GeodesicMode::Deep,
    ];

    fn uses_euclidean(self) -> bool {
        !matches!(self, GeodesicMode::Gradient)
    }
}

impl std::str::FromStr for GeodesicMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(GeodesicMode::Gradient),
            "gradient-euclidean" => Ok(GeodesicMode::GradientEuclidean),
            "deep" => Ok(GeodesicMode::Deep),
            other => Err(Error::Config(format!("unknown geodesic mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::Config(format!("connectivity must be 6 or 26, got {other}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dk in -1isize..=1 {
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    let nonzero = (di != 0) as u8 + (dj != 0) as u8 + (dk != 0) as u8;
                    let keep = match self {
                        Connectivity::Six => nonzero == 1,
                        Connectivity::TwentySix => nonzero >= 1,
                    };
                    if keep {
                        out.push([di, dj, dk]);
                    }
                }
            }
        }
        out
    }

    pub fn adjacent(self, a: VoxelIndex, b: VoxelIndex) -> bool {
        let diffs = [0, 1, 2].map(|n| a.0[n].abs_diff(b.0[n]));
        if diffs.iter().any(|&d| d > 1) {
            return false;
        }
        let moved = diffs.iter().filter(|&&d| d == 1).count();
        match self {
            Connectivity::Six => moved == 1,
            Connectivity::TwentySix => moved >= 1,
        }
    }
}

/// Geodesic metric settings. Unset weights follow the automatic policy of
/// [`auto_gammas`], evaluated per path from its start point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicConfig {
    pub mode: GeodesicMode,
    pub gamma_e: Option<f64>,
    pub gamma_g: Option<f64>,
    pub connectivity: Connectivity,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        GeodesicConfig {
            mode: GeodesicMode::Deep,
            gamma_e: None,
            gamma_g: None,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl GeodesicConfig {
    pub fn with_mode(mode: GeodesicMode) -> Self {
        GeodesicConfig {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_e", self.gamma_e), ("gamma_g", self.gamma_g)] {
            if let Some(g) = g {
                if !(g.is_finite() && g >= 0.0) {
                    return Err(Error::Config(format!("{name} must be finite and >= 0, got {g}")));
                }
            }
        }
        Ok(())
    }
}

/// Weights of the Euclidean and intensity terms. A zero weight disables its term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gammas {
    pub euclidean: f64,
    pub gradient: f64,
}

/// Scales both terms into `[0, 1]`: `1/γ_e` is the largest distance in mm
/// from `source` to any voxel of `bbox`, `1/γ_g` the largest gradient
/// magnitude inside `bbox`. A zero maximum disables the term.
pub fn auto_gammas(grad: &Volume<f32>, bbox: &VoxelBox, source: VoxelIndex) -> Gammas {
    let spacing = grad.spacing();
    // The farthest voxel of a box from any interior point is one of its corners.
    let max_dist = (0..8)
        .map(|c| {
            let corner = VoxelIndex([0, 1, 2].map(|a| {
                if c >> a & 1 == 0 {
                    bbox.lo.0[a]
                } else {
                    bbox.hi.0[a]
                }
            }));
            source.distance_mm(&corner, spacing)
        })
        .fold(0.0f64, f64::max);
    let max_grad = bbox
        .voxels()
        .map(|v| grad.get(v) as f64)
        .fold(0.0f64, f64::max);
    let inv = |m: f64| if m > 0.0 { 1.0 / m } else { 0.0 };
    Gammas {
        euclidean: inv(max_dist),
        gradient: inv(max_grad),
    }
}

/// A fully resolved edge-length function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeMetric {
    pub mode: GeodesicMode,
    pub gammas: Gammas,
}

impl EdgeMetric {
    pub fn resolve(cfg: &GeodesicConfig, grad: &Volume<f32>, bbox: &VoxelBox, source: VoxelIndex) -> Self {
        let auto = if cfg.gamma_e.is_none() || cfg.gamma_g.is_none() {
            auto_gammas(grad, bbox, source)
        } else {
            Gammas {
                euclidean: 0.0,
                gradient: 0.0,
            }
        };
        EdgeMetric {
            mode: cfg.mode,
            gammas: Gammas {
                euclidean: cfg.gamma_e.unwrap_or(auto.euclidean),
                gradient: cfg.gamma_g.unwrap_or(auto.gradient),
            },
        }
    }

    fn require_prob<'a>(&self, prob: Option<&'a Volume<f64>>) -> Result<Option<&'a Volume<f64>>> {
        match (self.mode, prob) {
            (GeodesicMode::Deep, None) => Err(Error::Config(
                "deep geodesic mode requires a probability map".into(),
            )),
            (GeodesicMode::Deep, Some(p)) => Ok(Some(p)),
            _ => Ok(None),
        }
    }

    #[inline]
    fn cost_raw(&self, step_mm: f64, x_from: f32, x_to: f32, p_from: Option<f64>) -> f64 {
        let mut c = self.gammas.gradient * (x_to as f64 - x_from as f64).abs();
        if self.mode.uses_euclidean() {
            c += self.gammas.euclidean * step_mm;
        }
        if let Some(p) = p_from {
            c += 1.0 - p;
        }
        c
    }

    /// Cost of the directed edge `from → to`.
    pub fn edge_cost(
        &self,
        from: VoxelIndex,
        to: VoxelIndex,
        image: &Volume<f32>,
        prob: Option<&Volume<f64>>,
    ) -> Result<f64> {
        let prob = self.require_prob(prob)?;
        let step = from.distance_mm(&to, image.spacing());
        Ok(self.cost_raw(step, image.get(from), image.get(to), prob.map(|p| p.get(from))))
    }

    /// Total length of an arbitrary voxel sequence under this metric.
    pub fn path_length(
        &self,
        voxels: &[VoxelIndex],
        image: &Volume<f32>,
        prob: Option<&Volume<f64>>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for w in voxels.windows(2) {
            total += self.edge_cost(w[0], w[1], image, prob)?;
        }
        Ok(total)
    }
}

/// Convenience wrapper over [`EdgeMetric::edge_cost`] that resolves the
/// metric with `from` as the policy source when weights are unset.
pub fn edge_cost(
    cfg: &GeodesicConfig,
    from: VoxelIndex,
    to: VoxelIndex,
    image: &Volume<f32>,
    grad: &Volume<f32>,
    prob: Option<&Volume<f64>>,
    bbox: &VoxelBox,
) -> Result<f64> {
    EdgeMetric::resolve(cfg, grad, bbox, from).edge_cost(from, to, image, prob)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelPath {
    pub voxels: Vec<VoxelIndex>,
    pub total_length: f64,
}

impl VoxelPath {
    pub fn start(&self) -> VoxelIndex {
        self.voxels[0]
    }

    pub fn end(&self) -> VoxelIndex {
        self.voxels[self.voxels.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: reverse so the cheapest, then lowest
        // index, pops first.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra shortest path from `start` to `end` restricted to `bbox`.
pub fn shortest_path(
    metric: &EdgeMetric,
    connectivity: Connectivity,
    image: &Volume<f32>,
    prob: Option<&Volume<f64>>,
    start: VoxelIndex,
    end: VoxelIndex,
    bbox: &VoxelBox,
) -> Result<VoxelPath> {
    let prob = metric.require_prob(prob)?;
    let shape = image.shape();
    if let Some(p) = prob {
        image.check_shape(p)?;
    }
    for p in [start, end, bbox.lo, bbox.hi] {
        if !p.in_shape(shape) {
            return Err(Error::OutOfBounds { index: p.0, shape });
        }
    }
    if !bbox.contains(start) || !bbox.contains(end) {
        return Err(Error::Config(format!(
            "path endpoints {:?} -> {:?} must lie in box {:?}..{:?}",
            start.0, end.0, bbox.lo.0, bbox.hi.0
        )));
    }
    if start == end {
        return Ok(VoxelPath {
            voxels: vec![start],
            total_length: 0.0,
        });
    }

    let ext = bbox.extent();
    let n = ext[0] * ext[1] * ext[2];
    let to_local = |v: VoxelIndex| {
        let l = [0, 1, 2].map(|a| v.0[a] - bbox.lo.0[a]);
        l[0] + ext[0] * (l[1] + ext[1] * l[2])
    };
    let to_global = |local: usize| {
        let i = local % ext[0];
        let r = local / ext[0];
        VoxelIndex::new(i + bbox.lo.0[0], r % ext[1] + bbox.lo.0[1], r / ext[1] + bbox.lo.0[2])
    };

    let spacing: Spacing = image.spacing();
    let steps: Vec<([isize; 3], f64)> = connectivity
        .offsets()
        .into_iter()
        .map(|o| {
            let d = (0..3)
                .map(|a| (o[a] as f64 * spacing[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            (o, d)
        })
        .collect();

    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let (src, dst) = (to_local(start), to_local(end));
    dist[src] = 0.0;
    heap.push(HeapEntry { cost: 0.0, node: src });

    let image_data = image.data();
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if node == dst {
            break;
        }
        let here = to_global(node);
        let here_lin = image.linear(here);
        let x_here = image_data[here_lin];
        let p_here = prob.map(|p| p.data()[here_lin]);
        for &(off, step) in &steps {
            let mut next = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let c = here.0[a] as isize + off[a];
                if c < bbox.lo.0[a] as isize || c > bbox.hi.0[a] as isize {
                    inside = false;
                    break;
                }
                next[a] = c as usize;
            }
            if !inside {
                continue;
            }
            let next = VoxelIndex(next);
            let local = to_local(next);
            if settled[local] {
                continue;
            }
            let cand = cost + metric.cost_raw(step, x_here, image.get(next), p_here);
            if cand < dist[local] {
                dist[local] = cand;
                prev[local] = node;
                heap.push(HeapEntry {
                    cost: cand,
                    node: local,
                });
            }
        }
    }

    let mut voxels = vec![end];
    let mut cur = dst;
    while cur != src {
        cur = prev[cur];
        debug_assert!(cur != usize::MAX, "box is connected");
        voxels.push(to_global(cur));
    }
    voxels.reverse();
    Ok(VoxelPath {
        voxels,
        total_length: dist[dst],
    })
}

/// The three inter-extreme-point geodesics, one per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSet {
    pub path_x: VoxelPath,
    pub path_y: VoxelPath,
    pub path_z: VoxelPath,
}

impl GeodesicSet {
    pub fn paths(&self) -> [&VoxelPath; 3] {
        [&self.path_x, &self.path_y, &self.path_z]
    }

    /// Distinct voxels over all three paths, sorted.
    pub fn union(&self) -> Vec<VoxelIndex> {
        let mut all: Vec<VoxelIndex> = self
            .paths()
            .iter()
            .flat_map(|p| p.voxels.iter().copied())
            .collect();
        all.sort_by_key(|v| (v.0[2], v.0[1], v.0[0]));
        all.dedup();
        all
    }
}

/// Computes the x, y and z geodesics between matching extreme points,
/// each inside the tight box of `pts`.
pub fn inter_extreme_geodesics(
    cfg: &GeodesicConfig,
    image: &Volume<f32>,
    grad: &Volume<f32>,
    prob: Option<&Volume<f64>>,
    pts: &ExtremePointSet,
) -> Result<GeodesicSet> {
    cfg.validate()?;
    pts.check_inside(image.shape())?;
    image.check_shape(grad)?;
    let bbox = tight_bbox(pts);
    let mut paths: Vec<VoxelPath> = (0..3usize)
        .into_par_iter()
        .map(|axis| {
            let (start, end) = (pts.min(axis), pts.max(axis));
            let metric = EdgeMetric::resolve(cfg, grad, &bbox, start);
            shortest_path(&metric, cfg.connectivity, image, prob, start, end, &bbox)
        })
        .collect::<Result<_>>()?;
    let path_z = paths.pop().expect("three paths");
    let path_y = paths.pop().expect("three paths");
    let path_x = paths.pop().expect("three paths");
    Ok(GeodesicSet {
        path_x,
        path_y,
        path_z,
    })
}

/// Fraction of path voxels (counted with multiplicity over the given
/// paths) that lie inside `mask`.
pub fn containment(paths: &[&VoxelPath], mask: &Volume<bool>) -> f64 {
    let total: usize = paths.iter().map(|p| p.len()).sum();
    if total == 0 {
        return 1.0;
    }
    let inside: usize = paths
        .iter()
        .flat_map(|p| p.voxels.iter())
        .filter(|&&v| mask.get(v))
        .count();
    inside as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::gradient_magnitude;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(i: usize, j: usize, k: usize) -> VoxelIndex {
        VoxelIndex::new(i, j, k)
    }

    fn random_image(shape: [usize; 3], spacing: Spacing, seed: u64) -> Volume<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(shape, spacing, |_| rng.random_range(0.0f32..1.0)).unwrap()
    }

    #[test]
    fn auto_gammas_examples() {
        let img = Volume::filled([4, 4, 4], [1.0; 3], 1.0f32).unwrap();
        let grad = gradient_magnitude(&img).unwrap();
        let single = VoxelBox {
            lo: v(1, 1, 1),
            hi: v(1, 1, 1),
        };
        let g = auto_gammas(&grad, &single, v(1, 1, 1));
        assert_eq!(g.euclidean, 0.0);
        assert_eq!(g.gradient, 0.0);

        let line = VoxelBox {
            lo: v(0, 0, 0),
            hi: v(3, 0, 0),
        };
        let g = auto_gammas(&grad, &line, v(0, 0, 0));
        assert!((1.0 / g.euclidean - 3.0).abs() < 1e-12);
    }

    #[test]
    fn auto_gammas_match_exhaustive_scan() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image([7, 6, 5], [0.5, 0.8, 1.5], seed);
            let grad = gradient_magnitude(&img).unwrap();
            let lo = [rng.random_range(0..4), rng.random_range(0..3), rng.random_range(0..3)];
            let hi = [0, 1, 2].map(|a| rng.random_range(lo[a]..img.shape()[a]));
            let bbox = VoxelBox {
                lo: VoxelIndex(lo),
                hi: VoxelIndex(hi),
            };
            let src = VoxelIndex([0, 1, 2].map(|a| rng.random_range(lo[a]..=hi[a])));
            let (mut dmax, mut gmax) = (0.0f64, 0.0f64);
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let p = v(i, j, k);
                        dmax = dmax.max(src.distance_mm(&p, img.spacing()));
                        gmax = gmax.max(grad.get(p) as f64);
                    }
                }
            }
            let g = auto_gammas(&grad, &bbox, src);
            assert!((g.euclidean - 1.0 / dmax).abs() < 1e-12);
            assert!((g.gradient - 1.0 / gmax).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_cost_examples() {
        let img = Volume::filled([4, 4, 4], [1.0; 3], 0.3f32).unwrap();
        let grad = gradient_magnitude(&img).unwrap();
        let bbox = VoxelBox::whole([4, 4, 4]);
        let grad_only = GeodesicConfig::with_mode(GeodesicMode::Gradient);
        for (a, b) in [(v(0, 0, 0), v(1, 0, 0)), (v(1, 1, 1), v(2, 2, 2))] {
            assert_eq!(edge_cost(&grad_only, a, b, &img, &grad, None, &bbox).unwrap(), 0.0);
        }

        let ones = Volume::filled([4, 4, 4], [1.0; 3], 1.0f64).unwrap();
        let deep = EdgeMetric {
            mode: GeodesicMode::Deep,
            gammas: Gammas {
                euclidean: 0.0,
                gradient: 1.0,
            },
        };
        assert_eq!(deep.edge_cost(v(0, 0, 0), v(1, 1, 0), &img, Some(&ones)).unwrap(), 0.0);

        let eu = EdgeMetric {
            mode: GeodesicMode::GradientEuclidean,
            gammas: Gammas {
                euclidean: 0.5,
                gradient: 1.0,
            },
        };
        assert_eq!(eu.edge_cost(v(0, 0, 0), v(0, 1, 0), &img, None).unwrap(), 0.5);

        let deep_cfg = GeodesicConfig::with_mode(GeodesicMode::Deep);
        assert!(matches!(
            edge_cost(&deep_cfg, v(0, 0, 0), v(1, 0, 0), &img, &grad, None, &bbox),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn start_equals_end() {
        let img = random_image([4, 4, 4], [1.0; 3], 1);
        let metric = EdgeMetric {
            mode: GeodesicMode::GradientEuclidean,
            gammas: Gammas {
                euclidean: 1.0,
                gradient: 1.0,
            },
        };
        let p = shortest_path(
            &metric,
            Connectivity::TwentySix,
            &img,
            None,
            v(2, 2, 2),
            v(2, 2, 2),
            &VoxelBox::whole([4, 4, 4]),
        )
        .unwrap();
        assert_eq!(p.voxels, vec![v(2, 2, 2)]);
        assert_eq!(p.total_length, 0.0);
    }

    #[test]
    fn uniform_image_gives_straight_line_length() {
        let img = Volume::filled([9, 5, 5], [1.0; 3], 0.2f32).unwrap();
        let metric = EdgeMetric {
            mode: GeodesicMode::GradientEuclidean,
            gammas: Gammas {
                euclidean: 0.25,
                gradient: 1.0,
            },
        };
        let p = shortest_path(
            &metric,
            Connectivity::TwentySix,
            &img,
            None,
            v(0, 2, 2),
            v(8, 2, 2),
            &VoxelBox::whole([9, 5, 5]),
        )
        .unwrap();
        assert!((p.total_length - 8.0 * 0.25).abs() < 1e-12);
        assert_eq!(p.len(), 9);
    }

    fn check_path_invariants(p: &VoxelPath, conn: Connectivity, bbox: &VoxelBox, a: VoxelIndex, b: VoxelIndex) {
        assert_eq!(p.start(), a);
        assert_eq!(p.end(), b);
        for w in p.voxels.windows(2) {
            assert!(conn.adjacent(w[0], w[1]));
        }
        let mut seen = p.voxels.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), p.len());
        assert!(p.voxels.iter().all(|&q| bbox.contains(q)));
    }

    #[test]
    fn paths_are_valid_and_costs_consistent() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image([8, 7, 6], [1.0, 1.0, 1.5], seed);
            let prob = {
                let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
                Volume::from_fn([8, 7, 6], [1.0, 1.0, 1.5], |_| r.random_range(0.0..1.0)).unwrap()
            };
            let grad = gradient_magnitude(&img).unwrap();
            let bbox = VoxelBox {
                lo: v(1, 0, 1),
                hi: v(6, 5, 4),
            };
            let pick = |rng: &mut ChaCha8Rng| VoxelIndex([0, 1, 2].map(|a| rng.random_range(bbox.lo.0[a]..=bbox.hi.0[a])));
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            for mode in GeodesicMode::ALL {
                for conn in [Connectivity::Six, Connectivity::TwentySix] {
                    let metric = EdgeMetric::resolve(&GeodesicConfig::with_mode(mode), &grad, &bbox, a);
                    let p = shortest_path(&metric, conn, &img, Some(&prob), a, b, &bbox).unwrap();
                    check_path_invariants(&p, conn, &bbox, a, b);
                    let recomputed = metric.path_length(&p.voxels, &img, Some(&prob)).unwrap();
                    assert!((recomputed - p.total_length).abs() < 1e-9);
                    if mode != GeodesicMode::Deep {
                        let q = shortest_path(&metric, conn, &img, None, b, a, &bbox).unwrap();
                        assert!((q.total_length - p.total_length).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn deep_term_never_shortens_a_fixed_path() {
        let img = random_image([6, 6, 6], [1.0; 3], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prob = Volume::from_fn([6, 6, 6], [1.0; 3], |_| rng.random_range(0.0..1.0)).unwrap();
        let path: Vec<VoxelIndex> = (0..6).map(|i| v(i, i.min(3), 5 - i)).collect();
        let gammas = Gammas {
            euclidean: 0.3,
            gradient: 0.7,
        };
        let plain = EdgeMetric {
            mode: GeodesicMode::GradientEuclidean,
            gammas,
        };
        let deep = EdgeMetric {
            mode: GeodesicMode::Deep,
            gammas,
        };
        let a = plain.path_length(&path, &img, None).unwrap();
        let b = deep.path_length(&path, &img, Some(&prob)).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn single_voxel_object_gives_trivial_geodesics() {
        let img = random_image([5, 5, 5], [1.0; 3], 2);
        let grad = gradient_magnitude(&img).unwrap();
        let pts = ExtremePointSet::new([v(2, 3, 1); 6]).unwrap();
        let prob = img.map(|_| 0.5f64);
        let set = inter_extreme_geodesics(&GeodesicConfig::default(), &img, &grad, Some(&prob), &pts).unwrap();
        for p in set.paths() {
            assert_eq!(p.voxels, vec![v(2, 3, 1)]);
        }
        assert_eq!(set.union(), vec![v(2, 3, 1)]);
    }
}
