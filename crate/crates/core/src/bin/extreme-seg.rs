use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use extreme_seg::annotations::simulate_extreme_points;
use extreme_seg::geodesics::{inter_extreme_geodesics, Connectivity, GeodesicConfig, GeodesicMode, VoxelPath};
use extreme_seg::io::{
    read_json, read_mask, read_points, read_volume, write_bytes, write_json, write_mask, write_points,
    write_probability, Checkpoint, Dataset, Split,
};
use extreme_seg::metrics::{evaluate_case, Comparison, EvalReport};
use extreme_seg::model::Features;
use extreme_seg::phantom::{generate_dataset, PhantomKind, PhantomSpec};
use extreme_seg::trainer::{train_with_state, SupervisionMode, TrainConfig, TrainingCase};
use extreme_seg::volume::{gradient_magnitude, normalize_intensity, Volume, VoxelIndex};

#[derive(Parser)]
#[command(name = "extreme-seg", version, about = "Weakly supervised segmentation from extreme points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with simulated extreme points.
    Synth(SynthArgs),
    /// Simulate extreme points from a ground-truth mask.
    Points(PointsArgs),
    /// Compute the three inter-extreme-point geodesics.
    Geodesic(GeodesicArgs),
    /// Train a model on the training split of a dataset.
    Train(TrainArgs),
    /// Predict probability and mask volumes.
    Predict(PredictArgs),
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    n_train: usize,
    #[arg(long, default_value_t = 1)]
    n_val: usize,
    #[arg(long, default_value_t = 1)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Phantom spec as JSON; individual flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Volume shape as `nx,ny,nz`.
    #[arg(long, value_parser = parse_shape)]
    shape: Option<[usize; 3]>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<PhantomKind>,
    #[arg(long)]
    noise_sd: Option<f32>,
    #[arg(long)]
    distractor_contrast: Option<f32>,
}

#[derive(Args)]
struct PointsArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GeodesicArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    points: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: GeodesicMode,
    /// Probability volume; required by `--mode deep`.
    #[arg(long)]
    prob: Option<PathBuf>,
    #[arg(long, default_value_t = 26, value_parser = parse_connectivity)]
    connectivity: u8,
    #[arg(long)]
    gamma_e: Option<f64>,
    #[arg(long)]
    gamma_g: Option<f64>,
    /// Output JSON with the voxels of each path.
    #[arg(long)]
    out_paths: PathBuf,
    /// Output mask volume marking every path voxel.
    #[arg(long)]
    out_mask: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_supervision)]
    supervision: Option<SupervisionMode>,
    /// Geodesic metric used in geodesic supervision modes.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<GeodesicMode>,
    /// JSON training configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Optional JSON file receiving the per-epoch loss history.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Single image to segment.
    #[arg(long, conflicts_with_all = ["data", "split", "out_dir"], requires_all = ["out_prob", "out_mask"])]
    image: Option<PathBuf>,
    #[arg(long)]
    out_prob: Option<PathBuf>,
    #[arg(long)]
    out_mask: Option<PathBuf>,
    /// Dataset directory or manifest; segments every case of `--split`.
    #[arg(long, requires = "out_dir")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Option<Split>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Single predicted mask (with `--gt`).
    #[arg(long, requires = "gt", conflicts_with_all = ["data", "pred_dir"])]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Dataset directory or manifest (with `--pred-dir`).
    #[arg(long, requires = "pred_dir")]
    data: Option<PathBuf>,
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Second prediction set compared against `--pred-dir` with a Wilcoxon test.
    #[arg(long, requires = "pred_dir")]
    compare_dir: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<GeodesicMode, String> {
    s.parse().map_err(|e: extreme_seg::Error| e.to_string())
}

fn parse_supervision(s: &str) -> Result<SupervisionMode, String> {
    s.parse().map_err(|e: extreme_seg::Error| e.to_string())
}

fn parse_connectivity(s: &str) -> Result<u8, String> {
    match s {
        "6" => Ok(6),
        "26" => Ok(26),
        other => Err(format!("connectivity must be 6 or 26, got {other:?}")),
    }
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse().map_err(|_| format!("invalid dimension {d:?} in shape {s:?}")))
        .collect::<Result<_, _>>()?;
    dims.try_into().map_err(|_| format!("shape must have three comma-separated dimensions, got {s:?}"))
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?} (expected train, val or test)")),
    }
}

fn parse_kind(s: &str) -> Result<PhantomKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown phantom kind {s:?} (expected blob, bent_tube or blob_with_distractor)"))
}

fn usage_error(kind: ErrorKind, message: &str) -> ! {
    Cli::command().error(kind, message).exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Points(a) => points(a),
        Command::Geodesic(a) => geodesic(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: PhantomSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(s) = a.shape {
        spec.shape = s;
    }
    if let Some(k) = a.kind {
        spec.kind = k;
    }
    if let Some(n) = a.noise_sd {
        spec.noise_sd = n;
    }
    if let Some(c) = a.distractor_contrast {
        spec.distractor_contrast = c;
    }
    let manifest = generate_dataset(a.n_train, a.n_val, a.n_test, &spec, a.seed, &a.out)?;
    eprintln!("wrote {} cases to {}", manifest.cases.len(), a.out.display());
    Ok(())
}

fn points(a: PointsArgs) -> Result<()> {
    let gt = read_mask(&a.gt)?;
    let pts = simulate_extreme_points(&gt, a.seed).with_context(|| format!("simulating points from {}", a.gt.display()))?;
    write_points(&a.out, &pts)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct PathsReport<'a> {
    mode: GeodesicMode,
    path_x: PathEntry<'a>,
    path_y: PathEntry<'a>,
    path_z: PathEntry<'a>,
}

#[derive(serde::Serialize)]
struct PathEntry<'a> {
    length: f64,
    voxels: &'a [VoxelIndex],
}

impl<'a> From<&'a VoxelPath> for PathEntry<'a> {
    fn from(p: &'a VoxelPath) -> Self {
        PathEntry {
            length: p.total_length,
            voxels: &p.voxels,
        }
    }
}

fn geodesic(a: GeodesicArgs) -> Result<()> {
    if a.mode == GeodesicMode::Deep && a.prob.is_none() {
        usage_error(ErrorKind::MissingRequiredArgument, "--prob <PROB> is required when --mode deep");
    }
    let raw = read_volume(&a.image)?;
    let pts = read_points(&a.points)?;
    pts.check_inside(raw.shape()).with_context(|| format!("points in {}", a.points.display()))?;
    let image = normalize_intensity(&raw);
    let grad = gradient_magnitude(&image).with_context(|| format!("image {}", a.image.display()))?;
    let prob = match &a.prob {
        Some(p) => {
            let v = read_volume(p)?;
            if v.shape() != image.shape() {
                bail!("--prob {} has shape {:?}, image has {:?}", p.display(), v.shape(), image.shape());
            }
            Some(v.map(|x| x as f64))
        }
        None => None,
    };
    let cfg = GeodesicConfig {
        mode: a.mode,
        gamma_e: a.gamma_e,
        gamma_g: a.gamma_g,
        connectivity: Connectivity::try_from(a.connectivity)?,
    };
    let set = inter_extreme_geodesics(&cfg, &image, &grad, prob.as_ref(), &pts)?;
    let report = PathsReport {
        mode: a.mode,
        path_x: (&set.path_x).into(),
        path_y: (&set.path_y).into(),
        path_z: (&set.path_z).into(),
    };
    write_json(&a.out_paths, &report)?;
    let union = set.union();
    let mut mask = image.map(|_| false).into_data();
    for v in union {
        mask[image.linear(v)] = true;
    }
    write_mask(&a.out_mask, &image.with_data(mask)?)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.supervision {
        cfg.supervision = s;
    }
    if let Some(m) = a.mode {
        cfg.geodesic.mode = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.iterations {
        cfg.iterations = t;
    }
    cfg.validate().with_context(|| match &a.config {
        Some(p) => format!("configuration {}", p.display()),
        None => "configuration flags".into(),
    })?;
    let data = Dataset::open(&a.data)?;
    let build = |split: Split| -> Result<Vec<TrainingCase>> {
        data.load_split(split)?
            .into_iter()
            .map(|c| {
                TrainingCase::new(c.id.clone(), &c.image, c.points, &cfg)
                    .with_context(|| format!("case {} of {}", c.id, a.data.display()))
            })
            .collect()
    };
    let train_set = build(Split::Train)?;
    let val_set = build(Split::Val)?;
    if train_set.is_empty() || val_set.is_empty() {
        bail!("dataset {} needs non-empty train and val splits", a.data.display());
    }
    let state = train_with_state(&train_set, &val_set, &cfg)?;
    write_json(&a.out, &Checkpoint::new(&state.best_model, &cfg))?;
    if let Some(h) = &a.history {
        write_json(h, &state.history)?;
    }
    Ok(())
}

fn predict_one(ckpt: &Checkpoint, image: &Volume<f32>) -> Result<(Volume<f64>, Volume<bool>)> {
    let features = Features::compute(&normalize_intensity(image))?;
    let prob = ckpt.model()?.forward(&features)?;
    let mask = prob.map(|p| p >= 0.5);
    Ok((prob, mask))
}

fn predict(a: PredictArgs) -> Result<()> {
    let ckpt: Checkpoint = read_json(&a.checkpoint)?;
    ckpt.model().with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    if let Some(image) = &a.image {
        let (prob, mask) = predict_one(&ckpt, &read_volume(image)?)?;
        write_probability(a.out_prob.as_deref().expect("required by clap"), &prob)?;
        write_mask(a.out_mask.as_deref().expect("required by clap"), &mask)?;
        return Ok(());
    }
    let (Some(data), Some(out_dir)) = (&a.data, &a.out_dir) else {
        usage_error(ErrorKind::MissingRequiredArgument, "either --image or --data with --out-dir is required");
    };
    let data = Dataset::open(data)?;
    let split = a.split.unwrap_or(Split::Test);
    for case in data.manifest.split(split) {
        let image = read_volume(&data.root.join(&case.image))?;
        let (prob, mask) = predict_one(&ckpt, &image)?;
        write_probability(&out_dir.join(format!("{}_prob.json", case.id)), &prob)?;
        write_mask(&out_dir.join(pred_mask_name(&case.id)), &mask)?;
    }
    Ok(())
}

fn pred_mask_name(id: &str) -> String {
    format!("{id}_mask.json")
}

fn write_report(report: &EvalReport, csv: Option<&Path>, json: Option<&Path>) -> Result<()> {
    match csv {
        Some(p) => write_bytes(p, report.to_csv().as_bytes())?,
        None if json.is_none() => print!("{}", report.to_csv()),
        None => {}
    }
    if let Some(p) = json {
        write_bytes(p, format!("{}\n", report.to_json()).as_bytes())?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let case = evaluate_case("case", &read_mask(pred)?, &read_mask(gt)?)
            .with_context(|| format!("evaluating {} against {}", pred.display(), gt.display()))?;
        let report = EvalReport::from_cases(vec![case]);
        return write_report(&report, a.out_csv.as_deref(), a.out_json.as_deref());
    }
    let (Some(data), Some(pred_dir)) = (&a.data, &a.pred_dir) else {
        usage_error(ErrorKind::MissingRequiredArgument, "either --pred with --gt or --data with --pred-dir is required");
    };
    let data = Dataset::open(data)?;
    let score = |dir: &Path| -> Result<Vec<_>> {
        data.manifest
            .split(a.split)
            .map(|c| {
                let gt = read_mask(&data.root.join(&c.gt))?;
                let pred = read_mask(&dir.join(pred_mask_name(&c.id)))?;
                Ok(evaluate_case(&c.id, &pred, &gt).with_context(|| format!("case {}", c.id))?)
            })
            .collect()
    };
    let cases = score(pred_dir)?;
    let comparison = match &a.compare_dir {
        Some(dir) => {
            let other = score(dir)?;
            Some(Comparison::between(&cases, &other))
        }
        None => None,
    };
    let mut report = EvalReport::from_cases(cases);
    report.comparison = comparison;
    write_report(&report, a.out_csv.as_deref(), a.out_json.as_deref())
}
