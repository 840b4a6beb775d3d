//! A per-voxel logistic model over handcrafted features.
//!
//! Features, in order: raw intensity, box-smoothed intensity at radii 1 and
//! 2, gradient magnitude, and the voxel coordinates rescaled to `[-1, 1]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{box_filter, gradient_magnitude, Volume};

pub const FEATURE_COUNT: usize = 7;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "intensity",
    "smoothed_r1",
    "smoothed_r2",
    "gradient_magnitude",
    "x",
    "y",
    "z",
];

/// Per-voxel feature vectors for one image.
#[derive(Clone, Debug)]
pub struct Features {
    shape: [usize; 3],
    spacing: [f64; 3],
    rows: Vec<[f64; FEATURE_COUNT]>,
}

impl Features {
    /// `image` is expected to be intensity-normalised already.
    pub fn compute(image: &Volume<f32>) -> Result<Self> {
        let s1 = box_filter(image, 1);
        let s2 = box_filter(image, 2);
        let grad = gradient_magnitude(image)?;
        let shape = image.shape();
        let coord = |c: usize, n: usize| {
            if n > 1 {
                2.0 * c as f64 / (n - 1) as f64 - 1.0
            } else {
                0.0
            }
        };
        let rows = (0..image.len())
            .map(|lin| {
                let v = image.voxel(lin);
                [
                    image.data()[lin] as f64,
                    s1.data()[lin] as f64,
                    s2.data()[lin] as f64,
                    grad.data()[lin] as f64,
                    coord(v.0[0], shape[0]),
                    coord(v.0[1], shape[1]),
                    coord(v.0[2], shape[2]),
                ]
            })
            .collect();
        Ok(Features {
            shape,
            spacing: image.spacing(),
            rows,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn rows(&self) -> &[[f64; FEATURE_COUNT]] {
        &self.rows
    }
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ToyModel {
    pub fn zeros() -> Self {
        ToyModel {
            weights: vec![0.0; FEATURE_COUNT],
            bias: 0.0,
        }
    }

    /// Weights drawn from `N(0, sd²)`, zero bias.
    pub fn random(seed: u64, sd: f64) -> Result<Self> {
        if sd == 0.0 {
            return Ok(Self::zeros());
        }
        let normal = Normal::new(0.0, sd).map_err(|e| Error::Config(format!("init sd: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ToyModel {
            weights: (0..FEATURE_COUNT).map(|_| normal.sample(&mut rng)).collect(),
            bias: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != FEATURE_COUNT {
            return Err(Error::Config(format!(
                "model has {} weights, expected {FEATURE_COUNT}",
                self.weights.len()
            )));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        Ok(())
    }

    /// Parameters flattened as `[weights..., bias]`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let (w, b) = params.split_at(FEATURE_COUNT);
        self.weights.copy_from_slice(w);
        self.bias = b[0];
    }

    #[inline]
    fn logit(&self, row: &[f64; FEATURE_COUNT]) -> f64 {
        self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Foreground probability per voxel.
    pub fn forward(&self, features: &Features) -> Result<Volume<f64>> {
        self.validate()?;
        let data = features.rows.iter().map(|r| logistic(self.logit(r))).collect();
        Volume::new(features.shape, features.spacing, data)
    }

    /// Back-propagates `∂L/∂p` through the logistic link to the parameters.
    pub fn backward(&self, features: &Features, prob: &Volume<f64>, grad_prob: &Volume<f64>) -> Vec<f64> {
        let mut g = vec![0.0; FEATURE_COUNT + 1];
        for ((row, &p), &gp) in features.rows.iter().zip(prob.data()).zip(grad_prob.data()) {
            if gp == 0.0 {
                continue;
            }
            let dz = gp * p * (1.0 - p);
            for (gj, x) in g.iter_mut().zip(row) {
                *gj += dz * x;
            }
            g[FEATURE_COUNT] += dz;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{normalize_intensity, VoxelIndex};
    use rand::Rng;

    fn image(seed: u64) -> Volume<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normalize_intensity(&Volume::from_fn([6, 5, 4], [1.0, 1.0, 2.0], |_| rng.random_range(0.0f32..1.0)).unwrap())
    }

    #[test]
    fn zero_model_is_one_half() {
        let f = Features::compute(&image(1)).unwrap();
        let p = ToyModel::zeros().forward(&f).unwrap();
        assert!(p.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn saturated_bias() {
        let f = Features::compute(&image(2)).unwrap();
        let mut m = ToyModel::zeros();
        m.bias = 30.0;
        let p = m.forward(&f).unwrap();
        assert!(p.data().iter().all(|&x| x >= 1.0 - 1e-9 && x < 1.0));
    }

    #[test]
    fn forward_matches_per_voxel_oracle() {
        let img = image(3);
        let f = Features::compute(&img).unwrap();
        let m = ToyModel::random(5, 1.0).unwrap();
        let p = m.forward(&f).unwrap();
        let s1 = box_filter(&img, 1);
        let s2 = box_filter(&img, 2);
        let g = gradient_magnitude(&img).unwrap();
        let [nx, ny, nz] = img.shape();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let v = VoxelIndex::new(i, j, k);
                    let phi = [
                        img.get(v) as f64,
                        s1.get(v) as f64,
                        s2.get(v) as f64,
                        g.get(v) as f64,
                        -1.0 + 2.0 * i as f64 / (nx - 1) as f64,
                        -1.0 + 2.0 * j as f64 / (ny - 1) as f64,
                        -1.0 + 2.0 * k as f64 / (nz - 1) as f64,
                    ];
                    let z: f64 = m.weights.iter().zip(phi).map(|(w, x)| w * x).sum::<f64>() + m.bias;
                    let want = 1.0 / (1.0 + (-z).exp());
                    assert!((p.get(v) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let img = image(4);
        let f = Features::compute(&img).unwrap();
        let m = ToyModel::random(6, 0.5).unwrap();
        // L = Σ c_k p_k with fixed random c
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c: Vec<f64> = (0..img.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |m: &ToyModel| -> f64 { m.forward(&f).unwrap().data().iter().zip(&c).map(|(p, c)| p * c).sum() };
        let p = m.forward(&f).unwrap();
        let g = m.backward(&f, &p, &p.with_data(c.clone()).unwrap());
        let theta = m.parameters();
        for j in 0..theta.len() {
            let h = 1e-6;
            let (mut a, mut b) = (m.clone(), m.clone());
            let mut t = theta.clone();
            t[j] += h;
            a.set_parameters(&t);
            t[j] -= 2.0 * h;
            b.set_parameters(&t);
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}
