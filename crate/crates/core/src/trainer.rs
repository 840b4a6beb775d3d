//! Weakly supervised training of the per-voxel model.
//!
//! Each step runs a forward pass, rebuilds the supervision mask from the
//! current probabilities (geodesics are detached labels), evaluates the
//! combined partial loss plus `λ·R`, and applies one Nesterov update.

use serde::{Deserialize, Serialize};

use crate::annotations::{initial_supervision, relax_bbox, tight_bbox, ExtremePointSet, SupervisionMask, VoxelBox};
use crate::crf::{regularizer_value_and_gradient, PairwiseKernel, RegConfig};
use crate::error::{Error, Result};
use crate::geodesics::{inter_extreme_geodesics, GeodesicConfig, GeodesicMode, GeodesicSet};
use crate::losses::{combined_loss, DEFAULT_FOCAL_GAMMA};
use crate::model::{Features, ToyModel, FEATURE_COUNT};
use crate::volume::{gradient_magnitude, normalize_intensity, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionMode {
    Naive,
    Geodesic,
    GeodesicReg,
}

impl SupervisionMode {
    pub fn name(self) -> &'static str {
        match self {
            SupervisionMode::Naive => "naive",
            SupervisionMode::Geodesic => "geodesic",
            SupervisionMode::GeodesicReg => "geodesic-reg",
        }
    }

    fn uses_geodesics(self) -> bool {
        self != SupervisionMode::Naive
    }

    fn uses_regularizer(self) -> bool {
        self == SupervisionMode::GeodesicReg
    }
}

impl std::str::FromStr for SupervisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(SupervisionMode::Naive),
            "geodesic" => Ok(SupervisionMode::Geodesic),
            "geodesic-reg" => Ok(SupervisionMode::GeodesicReg),
            other => Err(Error::Config(format!(
                "unknown supervision mode {other:?} (expected naive, geodesic or geodesic-reg)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub iterations: usize,
    /// Iterations per learning-rate step (`s`).
    pub lr_step: usize,
    /// Number of learning-rate steps until the rate reaches zero (`K`).
    pub lr_total: usize,
    /// Relaxed-box margin in voxels.
    pub margin: usize,
    pub geodesic: GeodesicConfig,
    /// The regulariser weight is `reg.lambda`.
    pub reg: RegConfig,
    pub focal_gamma: f64,
    pub seed: u64,
    pub supervision: SupervisionMode,
    /// Standard deviation of the initial weights.
    pub init_sd: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            momentum: 0.99,
            iterations: 9000,
            lr_step: 30,
            lr_total: 300,
            margin: 4,
            geodesic: GeodesicConfig::default(),
            reg: RegConfig::default(),
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            seed: 0,
            supervision: SupervisionMode::GeodesicReg,
            init_sd: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.lr_step == 0 || self.lr_total == 0 {
            return Err(Error::Config("lr_step and lr_total must be positive".into()));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!("focal_gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.init_sd.is_finite() && self.init_sd >= 0.0) {
            return Err(Error::Config(format!("init_sd must be >= 0, got {}", self.init_sd)));
        }
        self.geodesic.validate()?;
        self.reg.validate()
    }
}

/// `lr0 · (1 − ⌊it/s⌋/K)^0.9`, zero once `it ≥ s·K`.
pub fn poly_lr(it: usize, cfg: &TrainConfig) -> f64 {
    let step = it / cfg.lr_step;
    if step >= cfg.lr_total {
        return 0.0;
    }
    cfg.lr0 * (1.0 - step as f64 / cfg.lr_total as f64).powf(0.9)
}

/// Largest pairwise kernel, in stored weights, kept in memory per case
/// (256 MB of `f32`). Larger windows are evaluated on the fly each step.
pub const KERNEL_CACHE_LIMIT: usize = 1 << 26;

/// One annotated volume with everything that does not depend on the model
/// precomputed.
#[derive(Clone, Debug)]
pub struct TrainingCase {
    pub id: String,
    /// Intensity-normalised image.
    pub image: Volume<f32>,
    pub grad: Volume<f32>,
    pub features: Features,
    pub points: ExtremePointSet,
    pub relaxed: VoxelBox,
    kernel: Option<PairwiseKernel>,
}

impl TrainingCase {
    /// Normalises `image` and builds the features. The pairwise kernel is
    /// only cached when `cfg` trains with the regulariser and it fits in
    /// [`KERNEL_CACHE_LIMIT`].
    pub fn new(id: impl Into<String>, image: &Volume<f32>, points: ExtremePointSet, cfg: &TrainConfig) -> Result<Self> {
        points.check_inside(image.shape())?;
        let image = normalize_intensity(image);
        let grad = gradient_magnitude(&image)?;
        let features = Features::compute(&image)?;
        let relaxed = relax_bbox(&tight_bbox(&points), cfg.margin, image.shape());
        let cache = cfg.supervision.uses_regularizer()
            && cfg.reg.lambda > 0.0
            && PairwiseKernel::weight_count(image.shape(), &cfg.reg).is_some_and(|n| n <= KERNEL_CACHE_LIMIT);
        let kernel = if cache {
            Some(PairwiseKernel::new(&image, &cfg.reg)?)
        } else {
            None
        };
        Ok(TrainingCase {
            id: id.into(),
            image,
            grad,
            features,
            points,
            relaxed,
            kernel,
        })
    }
}

/// Builds the supervision mask for the current probability map. The
/// geodesic set is returned in geodesic modes.
pub fn assemble_supervision(
    case: &TrainingCase,
    prob: &Volume<f64>,
    cfg: &TrainConfig,
) -> Result<(SupervisionMask, Option<GeodesicSet>)> {
    let shape = case.image.shape();
    if !cfg.supervision.uses_geodesics() {
        return Ok((initial_supervision(&case.points, &case.relaxed, shape)?, None));
    }
    let deep = (cfg.geodesic.mode == GeodesicMode::Deep).then_some(prob);
    let set = inter_extreme_geodesics(&cfg.geodesic, &case.image, &case.grad, deep, &case.points)?;
    let mut mask = SupervisionMask::outside_box(&case.relaxed, shape);
    for v in set.union() {
        mask.mark_foreground(v);
    }
    for v in case.points.points() {
        mask.mark_foreground(v);
    }
    Ok((mask, Some(set)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    /// Combined loss plus `λ·R`.
    pub value: f64,
    pub loss: f64,
    pub reg: f64,
    /// Gradient with respect to `[weights..., bias]`.
    pub grad: Vec<f64>,
}

/// Objective and parameter gradient of `model` on one case.
pub fn objective(model: &ToyModel, case: &TrainingCase, cfg: &TrainConfig) -> Result<Objective> {
    let prob = model.forward(&case.features)?;
    let (mask, _) = assemble_supervision(case, &prob, cfg)?;
    let report = combined_loss(&prob, &mask, cfg.focal_gamma)?;
    let mut grad_prob = report.grad;
    let mut reg = 0.0;
    if cfg.supervision.uses_regularizer() && cfg.reg.lambda > 0.0 {
        let (r, gr) = match &case.kernel {
            Some(kernel) => kernel.value_and_gradient(&prob)?,
            None => regularizer_value_and_gradient(&prob, &case.image, &cfg.reg)?,
        };
        reg = r;
        let lambda = cfg.reg.lambda;
        let combined: Vec<f64> = grad_prob.data().iter().zip(gr.data()).map(|(a, b)| a + lambda * b).collect();
        grad_prob = prob.with_data(combined)?;
    }
    let grad = model.backward(&case.features, &prob, &grad_prob);
    Ok(Objective {
        value: report.total + cfg.reg.lambda * reg,
        loss: report.total,
        reg,
        grad,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: ToyModel,
    pub velocity: Vec<f64>,
    pub iteration: usize,
    pub best_val_loss: Option<f64>,
    pub best_model: ToyModel,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: ToyModel) -> Self {
        TrainState {
            velocity: vec![0.0; FEATURE_COUNT + 1],
            iteration: 0,
            best_val_loss: None,
            best_model: model.clone(),
            model,
            history: Vec::new(),
        }
    }

    /// Records a validation loss and snapshots the model when it improves.
    pub fn record_validation(&mut self, train_loss: f64, val_loss: f64) {
        if self.best_val_loss.is_none_or(|best| val_loss < best) {
            self.best_val_loss = Some(val_loss);
            self.best_model = self.model.clone();
        }
        self.history.push(EpochRecord {
            iteration: self.iteration,
            train_loss,
            val_loss,
        });
    }
}

/// Nesterov update `v ← μv − lr·g`, `θ ← θ + μv − lr·g`.
pub fn nesterov_update(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *t += momentum * *v - lr * g;
    }
}

/// One optimisation step on `case`; returns the objective before the update.
pub fn train_step(state: &mut TrainState, case: &TrainingCase, cfg: &TrainConfig) -> Result<Objective> {
    let obj = objective(&state.model, case, cfg)?;
    let iteration = state.iteration;
    if !obj.value.is_finite() {
        return Err(Error::NonFiniteTraining { what: "loss", iteration });
    }
    if obj.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteTraining { what: "gradient", iteration });
    }
    let lr = poly_lr(iteration, cfg);
    let mut theta = state.model.parameters();
    nesterov_update(&mut theta, &mut state.velocity, &obj.grad, lr, cfg.momentum);
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFiniteTraining { what: "parameters", iteration });
    }
    state.model.set_parameters(&theta);
    state.iteration += 1;
    Ok(obj)
}

/// Mean objective over `cases`.
pub fn validation_loss(model: &ToyModel, cases: &[TrainingCase], cfg: &TrainConfig) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut total = 0.0;
    for case in cases {
        total += objective(model, case, cfg)?.value;
    }
    Ok(total / cases.len() as f64)
}

/// Trains for `cfg.iterations` steps cycling over `train_set`, validating
/// once per epoch (and on the initial model), and returns the final state.
/// `state.best_model` is the selected model.
pub fn train_with_state(train_set: &[TrainingCase], val_set: &[TrainingCase], cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut state = TrainState::new(ToyModel::random(cfg.seed, cfg.init_sd)?);
    if cfg.iterations == 0 {
        return Ok(state);
    }
    let v0 = validation_loss(&state.model, val_set, cfg)?;
    state.record_validation(f64::NAN, v0);
    let n = train_set.len();
    let mut epoch_loss = 0.0;
    for it in 0..cfg.iterations {
        let obj = train_step(&mut state, &train_set[it % n], cfg)?;
        epoch_loss += obj.value;
        let done = it + 1 == cfg.iterations;
        if (it + 1) % n == 0 || done {
            let steps = if (it + 1) % n == 0 { n } else { (it + 1) % n };
            let v = validation_loss(&state.model, val_set, cfg)?;
            state.record_validation(epoch_loss / steps as f64, v);
            epoch_loss = 0.0;
        }
    }
    Ok(state)
}

/// Returns the model with the smallest validation loss.
pub fn train(train_set: &[TrainingCase], val_set: &[TrainingCase], cfg: &TrainConfig) -> Result<ToyModel> {
    Ok(train_with_state(train_set, val_set, cfg)?.best_model)
}
