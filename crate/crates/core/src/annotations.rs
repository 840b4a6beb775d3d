//! Extreme-point annotations, bounding boxes and the per-voxel supervision
//! mask derived from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{linear_index, Shape, Volume, VoxelIndex};

/// The six extreme clicks: one minimum and one maximum per image axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPoints")]
pub struct ExtremePointSet {
    x_min: VoxelIndex,
    x_max: VoxelIndex,
    y_min: VoxelIndex,
    y_max: VoxelIndex,
    z_min: VoxelIndex,
    z_max: VoxelIndex,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoints {
    x_min: VoxelIndex,
    x_max: VoxelIndex,
    y_min: VoxelIndex,
    y_max: VoxelIndex,
    z_min: VoxelIndex,
    z_max: VoxelIndex,
}

impl TryFrom<RawPoints> for ExtremePointSet {
    type Error = Error;

    fn try_from(r: RawPoints) -> Result<Self> {
        ExtremePointSet::new([r.x_min, r.x_max, r.y_min, r.y_max, r.z_min, r.z_max])
    }
}

pub const POINT_NAMES: [&str; 6] = ["x_min", "x_max", "y_min", "y_max", "z_min", "z_max"];

impl ExtremePointSet {
    /// Points in the order `x_min, x_max, y_min, y_max, z_min, z_max`.
    ///
    /// Fails unless each `a_min` (`a_max`) point attains the smallest
    /// (largest) `a`-coordinate among all six.
    pub fn new(points: [VoxelIndex; 6]) -> Result<Self> {
        for axis in 0..3 {
            let lo = points[2 * axis].axis(axis);
            let hi = points[2 * axis + 1].axis(axis);
            for (n, p) in points.iter().enumerate() {
                let c = p.axis(axis);
                if c < lo {
                    return Err(Error::InconsistentPoints(format!(
                        "{} has {}-coordinate {} below {} ({})",
                        POINT_NAMES[n],
                        ["x", "y", "z"][axis],
                        c,
                        POINT_NAMES[2 * axis],
                        lo
                    )));
                }
                if c > hi {
                    return Err(Error::InconsistentPoints(format!(
                        "{} has {}-coordinate {} above {} ({})",
                        POINT_NAMES[n],
                        ["x", "y", "z"][axis],
                        c,
                        POINT_NAMES[2 * axis + 1],
                        hi
                    )));
                }
            }
        }
        let [x_min, x_max, y_min, y_max, z_min, z_max] = points;
        Ok(ExtremePointSet {
            x_min,
            x_max,
            y_min,
            y_max,
            z_min,
            z_max,
        })
    }

    pub fn points(&self) -> [VoxelIndex; 6] {
        [
            self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max,
        ]
    }

    pub fn min(&self, axis: usize) -> VoxelIndex {
        self.points()[2 * axis]
    }

    pub fn max(&self, axis: usize) -> VoxelIndex {
        self.points()[2 * axis + 1]
    }

    pub fn check_inside(&self, shape: Shape) -> Result<()> {
        match self.points().into_iter().find(|p| !p.in_shape(shape)) {
            Some(p) => Err(Error::OutOfBounds { index: p.0, shape }),
            None => Ok(()),
        }
    }
}

/// Axis-aligned box with inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: VoxelIndex,
    pub hi: VoxelIndex,
}

impl VoxelBox {
    pub fn new(lo: VoxelIndex, hi: VoxelIndex) -> Result<Self> {
        if (0..3).any(|a| lo.0[a] > hi.0[a]) {
            return Err(Error::Config(format!(
                "box lower corner {:?} exceeds upper corner {:?}",
                lo.0, hi.0
            )));
        }
        Ok(VoxelBox { lo, hi })
    }

    pub fn whole(shape: Shape) -> Self {
        VoxelBox {
            lo: VoxelIndex::new(0, 0, 0),
            hi: VoxelIndex::new(shape[0] - 1, shape[1] - 1, shape[2] - 1),
        }
    }

    #[inline]
    pub fn contains(&self, idx: VoxelIndex) -> bool {
        (0..3).all(|a| self.lo.0[a] <= idx.0[a] && idx.0[a] <= self.hi.0[a])
    }

    pub fn contains_box(&self, other: &VoxelBox) -> bool {
        self.contains(other.lo) && self.contains(other.hi)
    }

    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi.0[a] - self.lo.0[a] + 1)
    }

    pub fn voxel_count(&self) -> usize {
        self.extent().iter().product()
    }

    /// All voxels of the box, x-fastest.
    pub fn voxels(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        let (lo, hi) = (self.lo.0, self.hi.0);
        (lo[2]..=hi[2]).flat_map(move |k| {
            (lo[1]..=hi[1]).flat_map(move |j| (lo[0]..=hi[0]).map(move |i| VoxelIndex::new(i, j, k)))
        })
    }
}

pub fn tight_bbox(pts: &ExtremePointSet) -> VoxelBox {
    let ps = pts.points();
    let lo = [0, 1, 2].map(|a| ps.iter().map(|p| p.axis(a)).min().unwrap_or(0));
    let hi = [0, 1, 2].map(|a| ps.iter().map(|p| p.axis(a)).max().unwrap_or(0));
    VoxelBox {
        lo: VoxelIndex(lo),
        hi: VoxelIndex(hi),
    }
}

/// Dilates `bbox` by `margin` voxels per side, clamped to the volume.
pub fn relax_bbox(bbox: &VoxelBox, margin: usize, shape: Shape) -> VoxelBox {
    let lo = [0, 1, 2].map(|a| bbox.lo.0[a].saturating_sub(margin).min(shape[a] - 1));
    let hi = [0, 1, 2].map(|a| (bbox.hi.0[a] + margin).min(shape[a] - 1));
    VoxelBox {
        lo: VoxelIndex(lo),
        hi: VoxelIndex(hi),
    }
}

/// Extreme points of a binary mask. Among voxels tied for an extreme
/// coordinate one is picked uniformly at random from `seed`.
pub fn simulate_extreme_points(gt: &Volume<bool>, seed: u64) -> Result<ExtremePointSet> {
    let fg: Vec<VoxelIndex> = gt
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(lin, _)| gt.voxel(lin))
        .collect();
    if fg.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = [VoxelIndex::new(0, 0, 0); 6];
    for axis in 0..3 {
        let lo = fg.iter().map(|p| p.axis(axis)).min().unwrap_or(0);
        let hi = fg.iter().map(|p| p.axis(axis)).max().unwrap_or(0);
        for (slot, target) in [(2 * axis, lo), (2 * axis + 1, hi)] {
            let candidates: Vec<&VoxelIndex> = fg.iter().filter(|p| p.axis(axis) == target).collect();
            out[slot] = *candidates[rng.random_range(0..candidates.len())];
        }
    }
    ExtremePointSet::new(out)
}

/// Supervision state of a single voxel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Unlabeled = 0,
    Foreground = 1,
    Background = 2,
}

/// Per-voxel supervision: foreground, background or unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionMask {
    shape: Shape,
    labels: Vec<Label>,
}

impl SupervisionMask {
    pub fn unlabeled(shape: Shape) -> Self {
        SupervisionMask {
            shape,
            labels: vec![Label::Unlabeled; shape.iter().product()],
        }
    }

    /// Background everywhere outside `relaxed`, nothing else labeled.
    pub fn outside_box(relaxed: &VoxelBox, shape: Shape) -> Self {
        let mut mask = Self::unlabeled(shape);
        for (lin, label) in mask.labels.iter_mut().enumerate() {
            if !relaxed.contains(crate::volume::voxel_index(shape, lin)) {
                *label = Label::Background;
            }
        }
        mask
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, idx: VoxelIndex) -> Label {
        self.labels[linear_index(self.shape, idx)]
    }

    /// Marks `idx` as foreground, overriding any background label.
    pub fn mark_foreground(&mut self, idx: VoxelIndex) {
        self.labels[linear_index(self.shape, idx)] = Label::Foreground;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn annotated_count(&self) -> usize {
        self.labels.len() - self.count(Label::Unlabeled)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Naive supervision: the six extreme points as foreground and everything
/// outside the relaxed box as background.
pub fn initial_supervision(
    pts: &ExtremePointSet,
    box_relax: &VoxelBox,
    shape: Shape,
) -> Result<SupervisionMask> {
    pts.check_inside(shape)?;
    let mut mask = SupervisionMask::outside_box(box_relax, shape);
    for p in pts.points() {
        mask.mark_foreground(p);
    }
    Ok(mask)
}
