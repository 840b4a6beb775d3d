//! Pairwise CRF relaxation used as an unsupervised regulariser.
//!
//! ```text
//! R(p) = 1/|Ω| · Σ_{k,l} p_k · W_kl · (1 − p_l)
//! W_kl = exp(−d(k,l)² / 2σ_α² − (X_k − X_l)² / 2σ_β²)
//! ```
//!
//! Pairs are ordered. In windowed mode `l` ranges over the cube of the given
//! radius around `k`; the window is symmetric, so `W` stays symmetric and
//! the gradient simplifies to `∂R/∂p_m = 1/|Ω| · Σ_l W_ml (1 − 2 p_l)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Volume, VoxelIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnits {
    Mm,
    Voxel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    /// Spatial bandwidth, in `sigma_alpha_units`.
    pub sigma_alpha: f64,
    /// Intensity bandwidth.
    pub sigma_beta: f64,
    /// Cube half-width in voxels; `None` sums over every pair.
    pub window_radius: Option<usize>,
    /// Weight of the regulariser in the training objective.
    pub lambda: f64,
    pub include_self: bool,
    pub sigma_alpha_units: DistanceUnits,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            sigma_alpha: 15.0,
            sigma_beta: 0.05,
            window_radius: Some(45),
            lambda: 1e-4,
            include_self: true,
            sigma_alpha_units: DistanceUnits::Voxel,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_alpha.is_finite() && self.sigma_alpha > 0.0) {
            return Err(Error::Config(format!("sigma_alpha must be > 0, got {}", self.sigma_alpha)));
        }
        if !(self.sigma_beta.is_finite() && self.sigma_beta > 0.0) {
            return Err(Error::Config(format!("sigma_beta must be > 0, got {}", self.sigma_beta)));
        }
        if self.window_radius == Some(0) {
            return Err(Error::Config("window_radius must be >= 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn spatial_scale(&self, spacing: [f64; 3]) -> [f64; 3] {
        match self.sigma_alpha_units {
            DistanceUnits::Mm => spacing,
            DistanceUnits::Voxel => [1.0; 3],
        }
    }

    #[inline]
    fn spatial(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.sigma_alpha * self.sigma_alpha)).exp()
    }

    #[inline]
    fn range(&self, dx: f64) -> f64 {
        (-dx * dx / (2.0 * self.sigma_beta * self.sigma_beta)).exp()
    }
}

/// Bilateral weight between voxels `k` and `l`.
pub fn kernel_weight(k: VoxelIndex, l: VoxelIndex, image: &Volume<f32>, cfg: &RegConfig) -> f64 {
    let scale = cfg.spatial_scale(image.spacing());
    let d2: f64 = (0..3)
        .map(|a| ((k.0[a] as f64 - l.0[a] as f64) * scale[a]).powi(2))
        .sum();
    let dx = image.get(k) as f64 - image.get(l) as f64;
    (-d2 / (2.0 * cfg.sigma_alpha * cfg.sigma_alpha) - dx * dx / (2.0 * cfg.sigma_beta * cfg.sigma_beta)).exp()
}

fn check_inputs(prob: &Volume<f64>, image: &Volume<f32>, cfg: &RegConfig) -> Result<()> {
    cfg.validate()?;
    if !prob.same_geometry(image) {
        return Err(Error::ShapeMismatch(prob.shape(), image.shape()));
    }
    Ok(())
}

fn window_extent(radius: usize, shape: [usize; 3]) -> [isize; 3] {
    shape.map(|n| radius.min(n.saturating_sub(1)) as isize)
}

struct Window {
    offsets: Vec<([isize; 3], f64)>,
}

impl Window {
    /// Offsets beyond the volume extent never pair two voxels, so each axis
    /// is clipped to `shape − 1`.
    fn new(radius: usize, cfg: &RegConfig, spacing: [f64; 3], shape: [usize; 3]) -> Self {
        let r = window_extent(radius, shape);
        let scale = cfg.spatial_scale(spacing);
        let mut offsets = Vec::new();
        for dk in -r[2]..=r[2] {
            for dj in -r[1]..=r[1] {
                for di in -r[0]..=r[0] {
                    if !cfg.include_self && di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let d2 = (di as f64 * scale[0]).powi(2)
                        + (dj as f64 * scale[1]).powi(2)
                        + (dk as f64 * scale[2]).powi(2);
                    offsets.push(([di, dj, dk], cfg.spatial(d2)));
                }
            }
        }
        Window { offsets }
    }
}

/// Per-voxel sums `(Σ_l W_kl (1 − p_l), Σ_l W_kl (1 − 2 p_l))`.
fn neighbour_sums(prob: &Volume<f64>, image: &Volume<f32>, cfg: &RegConfig) -> Vec<(f64, f64)> {
    let shape = image.shape();
    let x = image.data();
    let p = prob.data();
    match cfg.window_radius {
        None => {
            let scale = cfg.spatial_scale(image.spacing());
            (0..x.len())
                .into_par_iter()
                .map(|k| {
                    let vk = image.voxel(k);
                    let (mut a, mut b) = (0.0, 0.0);
                    for l in 0..x.len() {
                        if !cfg.include_self && l == k {
                            continue;
                        }
                        let vl = image.voxel(l);
                        let d2: f64 = (0..3)
                            .map(|ax| ((vk.0[ax] as f64 - vl.0[ax] as f64) * scale[ax]).powi(2))
                            .sum();
                        let w = cfg.spatial(d2) * cfg.range(x[k] as f64 - x[l] as f64);
                        a += w * (1.0 - p[l]);
                        b += w * (1.0 - 2.0 * p[l]);
                    }
                    (a, b)
                })
                .collect()
        }
        Some(radius) => {
            let window = Window::new(radius, cfg, image.spacing(), shape);
            (0..x.len())
                .into_par_iter()
                .map(|k| {
                    let vk = image.voxel(k);
                    let (mut a, mut b) = (0.0, 0.0);
                    for &(off, ws) in &window.offsets {
                        let mut inside = true;
                        let mut n = [0usize; 3];
                        for ax in 0..3 {
                            let c = vk.0[ax] as isize + off[ax];
                            if c < 0 || c >= shape[ax] as isize {
                                inside = false;
                                break;
                            }
                            n[ax] = c as usize;
                        }
                        if !inside {
                            continue;
                        }
                        let l = crate::volume::linear_index(shape, VoxelIndex(n));
                        let w = ws * cfg.range(x[k] as f64 - x[l] as f64);
                        a += w * (1.0 - p[l]);
                        b += w * (1.0 - 2.0 * p[l]);
                    }
                    (a, b)
                })
                .collect()
        }
    }
}

pub fn regularizer_value(prob: &Volume<f64>, image: &Volume<f32>, cfg: &RegConfig) -> Result<f64> {
    check_inputs(prob, image, cfg)?;
    let sums = neighbour_sums(prob, image, cfg);
    let total: f64 = sums.iter().zip(prob.data()).map(|(&(a, _), &pk)| pk * a).sum();
    Ok(total / prob.len() as f64)
}

/// `∂R/∂p` per voxel.
pub fn regularizer_gradient(prob: &Volume<f64>, image: &Volume<f32>, cfg: &RegConfig) -> Result<Volume<f64>> {
    Ok(regularizer_value_and_gradient(prob, image, cfg)?.1)
}

pub fn regularizer_value_and_gradient(
    prob: &Volume<f64>,
    image: &Volume<f32>,
    cfg: &RegConfig,
) -> Result<(f64, Volume<f64>)> {
    check_inputs(prob, image, cfg)?;
    let n = prob.len() as f64;
    let sums = neighbour_sums(prob, image, cfg);
    let value = sums.iter().zip(prob.data()).map(|(&(a, _), &pk)| pk * a).sum::<f64>() / n;
    let grad = sums.iter().map(|&(_, b)| b / n).collect();
    Ok((value, prob.with_data(grad)?))
}

/// Windowed kernel weights precomputed for a fixed image.
///
/// The weights depend only on the image, so during training they are built
/// once per case and reused for every probability map.
#[derive(Clone, Debug)]
pub struct PairwiseKernel {
    shape: [usize; 3],
    offsets: Vec<isize>,
    /// `weights[k * offsets.len() + o]`, zero where the neighbour falls outside.
    weights: Vec<f32>,
}

impl PairwiseKernel {
    /// Number of stored weights for an image of `shape`, or `None` without a
    /// finite window.
    pub fn weight_count(shape: [usize; 3], cfg: &RegConfig) -> Option<usize> {
        let r = window_extent(cfg.window_radius?, shape);
        let per_voxel: usize = r.iter().map(|&e| 2 * e as usize + 1).product();
        Some(shape.iter().product::<usize>() * per_voxel)
    }

    pub fn new(image: &Volume<f32>, cfg: &RegConfig) -> Result<Self> {
        cfg.validate()?;
        let radius = cfg.window_radius.ok_or_else(|| {
            Error::Config("a precomputed kernel needs a finite window_radius".into())
        })?;
        let shape = image.shape();
        let window = Window::new(radius, cfg, image.spacing(), shape);
        let offsets: Vec<isize> = window
            .offsets
            .iter()
            .map(|(o, _)| o[0] + shape[0] as isize * (o[1] + shape[1] as isize * o[2]))
            .collect();
        let x = image.data();
        let m = window.offsets.len();
        let weights: Vec<f32> = (0..x.len())
            .into_par_iter()
            .flat_map_iter(|k| {
                let vk = image.voxel(k);
                window.offsets.iter().map(move |&(off, ws)| {
                    let inside = (0..3).all(|ax| {
                        let c = vk.0[ax] as isize + off[ax];
                        c >= 0 && c < shape[ax] as isize
                    });
                    if !inside {
                        return 0.0;
                    }
                    let l = (k as isize + off[0] + shape[0] as isize * (off[1] + shape[1] as isize * off[2])) as usize;
                    (ws * cfg.range(x[k] as f64 - x[l] as f64)) as f32
                })
            })
            .collect();
        debug_assert_eq!(weights.len(), x.len() * m);
        Ok(PairwiseKernel {
            shape,
            offsets,
            weights,
        })
    }

    pub fn value_and_gradient(&self, prob: &Volume<f64>) -> Result<(f64, Volume<f64>)> {
        if prob.shape() != self.shape {
            return Err(Error::ShapeMismatch(prob.shape(), self.shape));
        }
        let p = prob.data();
        let m = self.offsets.len();
        let sums: Vec<(f64, f64)> = (0..p.len())
            .into_par_iter()
            .map(|k| {
                let row = &self.weights[k * m..(k + 1) * m];
                let (mut a, mut b) = (0.0, 0.0);
                for (&w, &off) in row.iter().zip(&self.offsets) {
                    if w == 0.0 {
                        continue;
                    }
                    let pl = p[(k as isize + off) as usize];
                    a += w as f64 * (1.0 - pl);
                    b += w as f64 * (1.0 - 2.0 * pl);
                }
                (a, b)
            })
            .collect();
        let n = p.len() as f64;
        let value = sums.iter().zip(p).map(|(&(a, _), &pk)| pk * a).sum::<f64>() / n;
        Ok((value, prob.with_data(sums.iter().map(|&(_, b)| b / n).collect())?))
    }
}
