//! Runs the supervision ablation and prints per-arm Dice.
//!
//! Usage: `cargo run --release --example ablation [config.json]`, where the
//! optional file overrides fields of the default ablation configuration.

use std::time::Instant;

use extreme_seg::ablation::{run_ablation, AblationConfig, Arm};
use extreme_seg::io::read_json;

fn main() -> anyhow::Result<()> {
    let cfg: AblationConfig = match std::env::args().nth(1) {
        Some(p) => read_json(std::path::Path::new(&p))?,
        None => AblationConfig::default(),
    };
    let t = Instant::now();
    let report = run_ablation(&cfg)?;
    for r in &report.arms {
        let d: Vec<String> = r.dice.iter().map(|d| format!("{d:.1}")).collect();
        println!("{:<20} mean {:6.2}  val {:?}  [{}]", r.arm.name(), r.mean_dice, r.best_val_loss, d.join(" "));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("{:<20} precision {:.1} distractor-fg {:.3}", "", mean(&r.precision), mean(&r.distractor_fg));
        println!("{:<20} weights {:?} bias {:.3}", "", r.model.weights.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>(), r.model.bias);
    }
    println!("p(gradient, geodesic) = {:?}", report.p_value(Arm::Gradient, Arm::Deep).ok());
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
