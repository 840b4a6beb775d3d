//! Seeded synthetic phantoms: a single path-connected object in a noisy
//! background, optionally with a distractor corridor that hugs the object.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::simulate_extreme_points;
use crate::error::{Error, Result};
use crate::io::{write_json, write_mask, write_points, write_volume, Manifest, ManifestCase, Split, MANIFEST_NAME};
use crate::volume::{box_filter, Shape, Spacing, Volume, VoxelIndex};

const MAX_ATTEMPTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Blob,
    BentTube,
    BlobWithDistractor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: Shape,
    pub spacing: Spacing,
    pub kind: PhantomKind,
    pub fg_intensity: f32,
    pub bg_intensity: f32,
    pub noise_sd: f32,
    /// Corridor intensity as a fraction of the way from background to
    /// foreground.
    pub distractor_contrast: f32,
    /// Intensity of the internal septa of distractor phantoms, as a fraction
    /// of the way from background to foreground.
    pub septum_contrast: f32,
    /// Radius of the box filter applied before noise; 0 keeps edges sharp.
    pub blur_radius: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            shape: [48, 48, 24],
            spacing: [1.0, 1.0, 1.5],
            kind: PhantomKind::BlobWithDistractor,
            fg_intensity: 1.0,
            bg_intensity: 0.0,
            noise_sd: 0.02,
            distractor_contrast: 0.3,
            septum_contrast: 2.0,
            blur_radius: 0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        crate::volume::validate_geometry(self.shape, self.spacing)?;
        if self.shape.iter().any(|&n| n < 8) {
            return Err(Error::Config(format!(
                "phantom shape {:?} too small (every dimension must be at least 8)",
                self.shape
            )));
        }
        if self.fg_intensity == self.bg_intensity {
            return Err(Error::Config("fg_intensity must differ from bg_intensity".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !self.distractor_contrast.is_finite() || !self.septum_contrast.is_finite() {
            return Err(Error::Config("distractor_contrast and septum_contrast must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Volume<f32>,
    pub gt: Volume<bool>,
    /// Distractor voxels (empty unless the kind has a distractor).
    pub distractor: Volume<bool>,
}

/// Smooth surrogate of a model that has learned the object: the ground
/// truth box-filtered with radius 1.
pub fn soft_mask(gt: &Volume<bool>) -> Volume<f64> {
    box_filter(&gt.map(|b| if b { 1.0f32 } else { 0.0 }), 1).map(|v| v as f64)
}

/// True when the foreground forms exactly one 26-connected component.
pub fn is_single_component(mask: &Volume<bool>) -> bool {
    let shape = mask.shape();
    let Some(first) = mask.data().iter().position(|&b| b) else {
        return false;
    };
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::from([first]);
    seen[first] = true;
    let mut reached = 1usize;
    while let Some(lin) = queue.pop_front() {
        let v = mask.voxel(lin);
        for dk in -1isize..=1 {
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    let n = [v.0[0] as isize + di, v.0[1] as isize + dj, v.0[2] as isize + dk];
                    if (0..3).any(|a| n[a] < 0 || n[a] >= shape[a] as isize) {
                        continue;
                    }
                    let l = mask.linear(VoxelIndex(n.map(|c| c as usize)));
                    if mask.data()[l] && !seen[l] {
                        seen[l] = true;
                        reached += 1;
                        queue.push_back(l);
                    }
                }
            }
        }
    }
    reached == mask.count()
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    /// Low-order surface perturbation: amplitude and phases.
    wobble: f64,
    phase: [f64; 2],
}

impl Ellipsoid {
    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.map(|s| s as f64);
        let radii = [
            n[0] * rng.random_range(0.14..0.19),
            n[1] * rng.random_range(0.14..0.19),
            n[2] * rng.random_range(0.2..0.27),
        ];
        let center = [0, 1, 2].map(|a| n[a] / 2.0 + rng.random_range(-0.08..0.08) * n[a]);
        Ellipsoid {
            center,
            radii,
            wobble: rng.random_range(0.0..0.12),
            phase: [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)],
        }
    }

    fn contains(&self, v: VoxelIndex) -> bool {
        let u = [0, 1, 2].map(|a| (v.0[a] as f64 - self.center[a]) / self.radii[a]);
        let rho = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let theta = u[1].atan2(u[0]);
        let limit = 1.0 + self.wobble * ((2.0 * theta + self.phase[0]).sin() + (3.0 * theta + self.phase[1]).cos()) * 0.5;
        rho <= limit
    }
}

fn blob(shape: Shape, spacing: Spacing, rng: &mut ChaCha8Rng) -> Result<(Volume<bool>, [f64; 3], [f64; 3])> {
    let e = Ellipsoid::random(shape, rng);
    let (center, radii) = (e.center, e.radii);
    Ok((Volume::from_fn(shape, spacing, |v| e.contains(v))?, center, radii))
}

fn bent_tube(shape: Shape, spacing: Spacing, rng: &mut ChaCha8Rng) -> Result<Volume<bool>> {
    let n = shape.map(|s| s as f64);
    let arc_radius = n[0].min(n[1]) * rng.random_range(0.22..0.3);
    let tube = n[0].min(n[1]) * rng.random_range(0.06..0.08);
    let tube_z = n[2] * rng.random_range(0.12..0.18);
    let start = rng.random_range(0.0..std::f64::consts::TAU);
    let sweep = rng.random_range(2.2..3.4);
    let c = [n[0] / 2.0, n[1] / 2.0, n[2] / 2.0];
    Volume::from_fn(shape, spacing, |v| {
        let p = [v.0[0] as f64 - c[0], v.0[1] as f64 - c[1], v.0[2] as f64 - c[2]];
        let mut ang = p[1].atan2(p[0]) - start;
        ang = ang.rem_euclid(std::f64::consts::TAU);
        let ang = ang.min(sweep);
        let nearest = [arc_radius * (ang + start).cos(), arc_radius * (ang + start).sin()];
        let dx = p[0] - nearest[0];
        let dy = p[1] - nearest[1];
        (dx * dx + dy * dy) / (tube * tube) + (p[2] * p[2]) / (tube_z * tube_z) <= 1.0
    })
}

/// Exterior shell of width 2 around the object, plus a rod running from
/// the object's far side (along ±y) out to the volume border, so the
/// corridor intensity also occurs well away from the object.
fn distractor_corridor(gt: &Volume<bool>, center: [f64; 3], rng: &mut ChaCha8Rng) -> Result<Volume<bool>> {
    let shape = gt.shape();
    let width = 2isize;
    let near = |v: VoxelIndex| -> bool {
        for dk in -width..=width {
            for dj in -width..=width {
                for di in -width..=width {
                    if di * di + dj * dj + dk * dk > width * width {
                        continue;
                    }
                    let n = [v.0[0] as isize + di, v.0[1] as isize + dj, v.0[2] as isize + dk];
                    if (0..3).any(|a| n[a] < 0 || n[a] >= shape[a] as isize) {
                        continue;
                    }
                    if gt.get(VoxelIndex(n.map(|c| c as usize))) {
                        return true;
                    }
                }
            }
        }
        false
    };
    let (lo_y, hi_y) = (0..gt.len())
        .filter(|&l| gt.data()[l])
        .map(|l| gt.voxel(l).0[1])
        .fold((usize::MAX, 0usize), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let positive = rng.random_bool(0.5);
    let tail_x = center[0].round() as isize;
    let tail_z = center[2].round() as isize;
    Volume::from_fn(shape, gt.spacing(), |v| {
        if gt.get(v) {
            return false;
        }
        if near(v) {
            return true;
        }
        let beyond = if positive { v.0[1] > hi_y } else { v.0[1] < lo_y };
        beyond && (v.0[0] as isize - tail_x).abs() <= 1 && (v.0[2] as isize - tail_z).abs() <= 1
    })
}

/// Two one-voxel-thick planes per axis across the object, at 40% of the
/// radius on either side of its centre. Offsetting them keeps their
/// intersections away from the extreme points.
fn septum_planes(center: [f64; 3], radii: [f64; 3]) -> Vec<(usize, f64)> {
    (0..3)
        .flat_map(|a| [-0.4, 0.4].map(|f| (a, (center[a] + f * radii[a]).round())))
        .collect()
}

/// The y and z septa stop short of the x septa, so no septum forms a
/// constant-intensity channel across an x septum.
fn on_septum(v: VoxelIndex, planes: &[(usize, f64)]) -> bool {
    let x = v.0[0] as f64;
    let (x_lo, x_hi) = planes
        .iter()
        .filter(|p| p.0 == 0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    planes
        .iter()
        .any(|&(a, c)| v.0[a] as f64 == c && (a == 0 || (x > x_lo && x < x_hi)))
}

/// Generates one phantom. Retries with fresh randomness until the object is
/// a single 26-connected component covering 1–20% of the volume.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let total = spec.shape.iter().product::<usize>() as f64;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(attempt as u64);
        let (gt, center, radii) = match spec.kind {
            PhantomKind::Blob | PhantomKind::BlobWithDistractor => blob(spec.shape, spec.spacing, &mut rng)?,
            PhantomKind::BentTube => {
                let c = spec.shape.map(|s| s as f64 / 2.0);
                (bent_tube(spec.shape, spec.spacing, &mut rng)?, c, [0.0; 3])
            }
        };
        let frac = gt.count() as f64 / total;
        if !(0.01..=0.20).contains(&frac) || !is_single_component(&gt) {
            continue;
        }
        let distractor = if spec.kind == PhantomKind::BlobWithDistractor {
            distractor_corridor(&gt, center, &mut rng)?
        } else {
            gt.map(|_| false)
        };
        let range = spec.fg_intensity - spec.bg_intensity;
        let corridor = spec.bg_intensity + spec.distractor_contrast * range;
        let septum = spec.bg_intensity + spec.septum_contrast * range;
        let planes = if spec.kind == PhantomKind::BlobWithDistractor {
            septum_planes(center, radii)
        } else {
            Vec::new()
        };
        let clean = Volume::new(
            spec.shape,
            spec.spacing,
            gt.data()
                .iter()
                .zip(distractor.data())
                .enumerate()
                .map(|(lin, (&g, &d))| {
                    if g {
                        if on_septum(gt.voxel(lin), &planes) {
                            septum
                        } else {
                            spec.fg_intensity
                        }
                    } else if d {
                        corridor
                    } else {
                        spec.bg_intensity
                    }
                })
                .collect(),
        )?;
        let smooth = if spec.blur_radius > 0 { box_filter(&clean, spec.blur_radius) } else { clean };
        let noisy = if spec.noise_sd > 0.0 {
            let normal = Normal::new(0.0f32, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
            let data = smooth.data().iter().map(|&v| v + normal.sample(&mut rng)).collect();
            smooth.with_data(data)?
        } else {
            smooth
        };
        return Ok(Phantom {
            image: noisy,
            gt,
            distractor,
        });
    }
    Err(Error::PhantomGeneration(MAX_ATTEMPTS))
}

/// Per-case seeds: distinct draws from a generator seeded with `seed`.
pub(crate) fn case_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = rng.random::<u32>() as u64;
        if seen.insert(s) {
            out.push(s);
        }
    }
    out
}

/// Writes `n_train + n_val + n_test` phantoms with simulated extreme points
/// under `out_dir`, plus a manifest listing every case.
pub fn generate_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    base_spec: &PhantomSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config("every split needs at least one case".into()));
    }
    base_spec.validate()?;
    let splits = [(Split::Train, n_train), (Split::Val, n_val), (Split::Test, n_test)];
    let seeds = case_seeds(n_train + n_val + n_test, seed);
    let plan: Vec<(Split, usize, u64)> = splits
        .iter()
        .flat_map(|&(split, n)| (0..n).map(move |i| (split, i)))
        .zip(seeds)
        .map(|((split, i), s)| (split, i, s))
        .collect();
    let cases = plan
        .into_par_iter()
        .map(|(split, i, case_seed)| {
            let id = format!("{}_{i:03}", split.name());
            let spec = PhantomSpec {
                seed: case_seed,
                ..base_spec.clone()
            };
            let phantom = generate_phantom(&spec)?;
            let points = simulate_extreme_points(&phantom.gt, case_seed)?;
            let case = ManifestCase {
                image: format!("{id}_image.json"),
                gt: format!("{id}_gt.json"),
                points: format!("{id}_points.json"),
                id,
                split,
                seed: case_seed,
            };
            write_volume(&out_dir.join(&case.image), &phantom.image)?;
            write_mask(&out_dir.join(&case.gt), &phantom.gt)?;
            write_points(&out_dir.join(&case.points), &points)?;
            Ok(case)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        seed,
        spec: base_spec.clone(),
        cases,
    };
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}
