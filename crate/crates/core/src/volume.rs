//! Dense 3D scalar volumes with voxel spacing.
//!
//! Data is stored x-fastest: the linear index of voxel `(i, j, k)` is
//! `i + nx * (j + ny * k)`. Images are `Volume<f32>`; probability maps and
//! loss gradients use `Volume<f64>`; binary masks use `Volume<bool>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Shape = [usize; 3];
/// Physical voxel size in mm along each axis.
pub type Spacing = [f64; 3];

/// Integer voxel coordinate `(i, j, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoxelIndex(pub [usize; 3]);

impl VoxelIndex {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        VoxelIndex([i, j, k])
    }

    #[inline]
    pub fn axis(&self, a: usize) -> usize {
        self.0[a]
    }

    pub fn in_shape(&self, shape: Shape) -> bool {
        self.0.iter().zip(shape.iter()).all(|(&c, &n)| c < n)
    }

    /// Euclidean distance in mm.
    pub fn distance_mm(&self, other: &VoxelIndex, spacing: Spacing) -> f64 {
        (0..3)
            .map(|a| {
                let d = (self.0[a] as f64 - other.0[a] as f64) * spacing[a];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl From<[usize; 3]> for VoxelIndex {
    fn from(v: [usize; 3]) -> Self {
        VoxelIndex(v)
    }
}

/// Element types a volume can hold.
pub trait Element: Copy + Send + Sync + 'static {
    fn is_finite_value(self) -> bool;
}

impl Element for f32 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Element for f64 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Element for bool {
    fn is_finite_value(self) -> bool {
        true
    }
}

impl Element for u8 {
    fn is_finite_value(self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T = f32> {
    shape: Shape,
    spacing: Spacing,
    data: Vec<T>,
}

pub(crate) fn validate_geometry(shape: Shape, spacing: Spacing) -> Result<()> {
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidShape(shape));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidSpacing(spacing));
    }
    Ok(())
}

impl<T: Element> Volume<T> {
    pub fn new(shape: Shape, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        validate_geometry(shape, spacing)?;
        let expected = shape[0] * shape[1] * shape[2];
        if data.len() != expected {
            return Err(Error::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Volume {
            shape,
            spacing,
            data,
        })
    }

    pub fn filled(shape: Shape, spacing: Spacing, value: T) -> Result<Self> {
        validate_geometry(shape, spacing)?;
        let n = shape[0] * shape[1] * shape[2];
        Self::new(shape, spacing, vec![value; n])
    }

    pub fn from_fn(shape: Shape, spacing: Spacing, mut f: impl FnMut(VoxelIndex) -> T) -> Result<Self> {
        validate_geometry(shape, spacing)?;
        let mut data = Vec::with_capacity(shape[0] * shape[1] * shape[2]);
        for k in 0..shape[2] {
            for j in 0..shape[1] {
                for i in 0..shape[0] {
                    data.push(f(VoxelIndex::new(i, j, k)));
                }
            }
        }
        Self::new(shape, spacing, data)
    }

    /// Builds a volume with the same geometry as `self`.
    pub fn with_data<U: Element>(&self, data: Vec<U>) -> Result<Volume<U>> {
        Volume::new(self.shape, self.spacing, data)
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear(&self, idx: VoxelIndex) -> usize {
        linear_index(self.shape, idx)
    }

    #[inline]
    pub fn voxel(&self, linear: usize) -> VoxelIndex {
        voxel_index(self.shape, linear)
    }

    #[inline]
    pub fn get(&self, idx: VoxelIndex) -> T {
        self.data[self.linear(idx)]
    }

    pub fn same_geometry<U>(&self, other: &Volume<U>) -> bool {
        self.shape == other.shape && self.spacing == other.spacing
    }

    pub fn check_shape<U>(&self, other: &Volume<U>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape, other.shape));
        }
        Ok(())
    }
}

impl Volume<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

#[inline]
pub fn linear_index(shape: Shape, idx: VoxelIndex) -> usize {
    let [i, j, k] = idx.0;
    i + shape[0] * (j + shape[1] * k)
}

#[inline]
pub fn voxel_index(shape: Shape, linear: usize) -> VoxelIndex {
    let i = linear % shape[0];
    let rest = linear / shape[0];
    VoxelIndex::new(i, rest % shape[1], rest / shape[1])
}

/// Spacing-aware gradient magnitude: central differences inside, one-sided
/// differences on the faces.
pub fn gradient_magnitude(vol: &Volume<f32>) -> Result<Volume<f32>> {
    let shape = vol.shape;
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::TooSmallForGradient(shape));
    }
    let strides = [1, shape[0], shape[0] * shape[1]];
    let data = &vol.data;
    let out = (0..vol.len())
        .map(|lin| {
            let idx = voxel_index(shape, lin);
            let mut sq = 0.0f64;
            for a in 0..3 {
                let c = idx.0[a];
                let n = shape[a];
                let s = strides[a];
                let h = vol.spacing[a];
                let d = if c == 0 {
                    (data[lin + s] as f64 - data[lin] as f64) / h
                } else if c == n - 1 {
                    (data[lin] as f64 - data[lin - s] as f64) / h
                } else {
                    (data[lin + s] as f64 - data[lin - s] as f64) / (2.0 * h)
                };
                sq += d * d;
            }
            sq.sqrt() as f32
        })
        .collect();
    vol.with_data(out)
}

/// Affine rescale to `[0, 1]`; constant volumes map to 0.5.
pub fn normalize_intensity(vol: &Volume<f32>) -> Volume<f32> {
    let (lo, hi) = vol
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return vol.map(|_| 0.5);
    }
    vol.map(|v| (((v as f64 - lo) / range) as f32).clamp(0.0, 1.0))
}

/// Mean over the cubic window of the given radius, clipped at the borders
/// (the mean is taken over in-bounds voxels only).
pub fn box_filter(vol: &Volume<f32>, radius: usize) -> Volume<f32> {
    let shape = vol.shape;
    let mut buf: Vec<f64> = vol.data.iter().map(|&v| v as f64).collect();
    let strides = [1, shape[0], shape[0] * shape[1]];
    for a in 0..3 {
        let n = shape[a];
        let s = strides[a];
        let mut next = vec![0.0f64; buf.len()];
        for (lin, out) in next.iter_mut().enumerate() {
            let c = voxel_index(shape, lin).0[a];
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(n - 1);
            let base = lin - c * s;
            let mut acc = 0.0;
            for t in lo..=hi {
                acc += buf[base + t * s];
            }
            *out = acc / (hi - lo + 1) as f64;
        }
        buf = next;
    }
    Volume {
        shape,
        spacing: vol.spacing,
        data: buf.into_iter().map(|v| v as f32).collect(),
    }
}
