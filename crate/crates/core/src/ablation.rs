//! Supervision ablation on distractor phantoms: the same model trained
//! with gradient, gradient+Euclidean and deep geodesic labels, and with
//! deep geodesics plus the pairwise regulariser, scored on a held-out set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::simulate_extreme_points;
use crate::crf::RegConfig;
use crate::error::Result;
use crate::geodesics::GeodesicMode;
use crate::metrics::{dice, precision, wilcoxon_signed_rank};
use crate::model::{Features, ToyModel};
use crate::phantom::{case_seeds, generate_phantom, Phantom, PhantomKind, PhantomSpec};
use crate::trainer::{train_with_state, SupervisionMode, TrainConfig, TrainingCase};
use crate::volume::{normalize_intensity, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Gradient,
    GradientEuclidean,
    Deep,
    DeepReg,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Gradient, Arm::GradientEuclidean, Arm::Deep, Arm::DeepReg];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Gradient => "gradient",
            Arm::GradientEuclidean => "gradient-euclidean",
            Arm::Deep => "geodesic",
            Arm::DeepReg => "geodesic-reg",
        }
    }

    /// `base` with the supervision and geodesic metric of this arm.
    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let (supervision, mode) = match self {
            Arm::Gradient => (SupervisionMode::Geodesic, GeodesicMode::Gradient),
            Arm::GradientEuclidean => (SupervisionMode::Geodesic, GeodesicMode::GradientEuclidean),
            Arm::Deep => (SupervisionMode::Geodesic, GeodesicMode::Deep),
            Arm::DeepReg => (SupervisionMode::GeodesicReg, GeodesicMode::Deep),
        };
        cfg.supervision = supervision;
        cfg.geodesic.mode = mode;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub phantom: PhantomSpec,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            phantom: PhantomSpec {
                shape: [48, 48, 24],
                kind: PhantomKind::BlobWithDistractor,
                ..PhantomSpec::default()
            },
            n_train: 6,
            n_val: 2,
            n_test: 12,
            seed: 2024,
            train: desk_train_config(),
        }
    }
}

/// Training schedule sized for whole 48×48×24 phantoms on one CPU: the
/// rate decays every iteration over 600 iterations, and the regulariser
/// uses a 7³ window at unit spatial bandwidth.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        iterations: 600,
        lr_step: 1,
        lr_total: 600,
        reg: RegConfig {
            sigma_alpha: 1.0,
            window_radius: Some(3),
            lambda: 0.005,
            ..RegConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub dice: Vec<f64>,
    pub mean_dice: f64,
    pub precision: Vec<f64>,
    /// Fraction of distractor voxels predicted as foreground, per case.
    pub distractor_fg: Vec<f64>,
    pub best_val_loss: Option<f64>,
    pub model: ToyModel,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
}

impl AblationReport {
    pub fn arm(&self, arm: Arm) -> &ArmResult {
        self.arms.iter().find(|r| r.arm == arm).expect("every arm is run")
    }

    /// Two-sided Wilcoxon p-value between the per-case Dice of two arms.
    pub fn p_value(&self, a: Arm, b: Arm) -> Result<f64> {
        wilcoxon_signed_rank(&self.arm(a).dice, &self.arm(b).dice)
    }
}

pub struct Split {
    pub train: Vec<(Phantom, u64)>,
    pub val: Vec<(Phantom, u64)>,
    pub test: Vec<Phantom>,
}

pub fn phantoms(cfg: &AblationConfig) -> Result<Split> {
    let seeds = case_seeds(cfg.n_train + cfg.n_val + cfg.n_test, cfg.seed);
    let mut all: Vec<(Phantom, u64)> = seeds
        .par_iter()
        .map(|&seed| {
            let spec = PhantomSpec {
                seed,
                ..cfg.phantom.clone()
            };
            Ok((generate_phantom(&spec)?, seed))
        })
        .collect::<Result<_>>()?;
    let test = all.split_off(cfg.n_train + cfg.n_val).into_iter().map(|(p, _)| p).collect();
    let val = all.split_off(cfg.n_train);
    Ok(Split { train: all, val, test })
}

pub fn cases(phantoms: &[(Phantom, u64)], prefix: &str, cfg: &TrainConfig) -> Result<Vec<TrainingCase>> {
    phantoms
        .iter()
        .enumerate()
        .map(|(i, (p, seed))| {
            let pts = simulate_extreme_points(&p.gt, *seed)?;
            TrainingCase::new(format!("{prefix}_{i:03}"), &p.image, pts, cfg)
        })
        .collect()
}

/// Thresholded prediction of `model` on a raw image.
pub fn segment(model: &ToyModel, image: &Volume<f32>) -> Result<Volume<bool>> {
    let features = Features::compute(&normalize_intensity(image))?;
    Ok(model.forward(&features)?.map(|p| p >= 0.5))
}

pub fn run_arm(cfg: &AblationConfig, arm: Arm) -> Result<ArmResult> {
    let split = phantoms(cfg)?;
    run_arm_on(&split, cfg, arm)
}

fn run_arm_on(split: &Split, cfg: &AblationConfig, arm: Arm) -> Result<ArmResult> {
    let tcfg = arm.config(&cfg.train);
    let train = cases(&split.train, "train", &tcfg)?;
    let val = cases(&split.val, "val", &tcfg)?;
    let state = train_with_state(&train, &val, &tcfg)?;
    let (mut dices, mut precisions, mut distractor_fg) = (Vec::new(), Vec::new(), Vec::new());
    for p in &split.test {
        let pred = segment(&state.best_model, &p.image)?;
        dices.push(dice(&pred, &p.gt)?);
        precisions.push(precision(&pred, &p.gt)?);
        let n = p.distractor.count();
        let hit = pred.data().iter().zip(p.distractor.data()).filter(|(a, b)| **a && **b).count();
        distractor_fg.push(if n == 0 { 0.0 } else { hit as f64 / n as f64 });
    }
    let dice = dices;
    let mean_dice = dice.iter().sum::<f64>() / dice.len() as f64;
    Ok(ArmResult {
        arm,
        dice,
        mean_dice,
        precision: precisions,
        distractor_fg,
        best_val_loss: state.best_val_loss,
        model: state.best_model,
    })
}

/// Runs every arm on one shared set of phantoms. Arms run concurrently;
/// each is deterministic on its own.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    let split = phantoms(cfg)?;
    let arms = Arm::ALL
        .par_iter()
        .map(|&arm| run_arm_on(&split, cfg, arm))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { arms })
}
