//! Prints geodesic containment in the ground truth for each metric on
//! distractor phantoms, with the smoothed ground truth as probability map.

use extreme_seg::annotations::simulate_extreme_points;
use extreme_seg::geodesics::{containment, inter_extreme_geodesics, GeodesicConfig, GeodesicMode};
use extreme_seg::io::read_json;
use extreme_seg::phantom::{generate_phantom, soft_mask, PhantomSpec};
use extreme_seg::volume::{gradient_magnitude, normalize_intensity};

fn main() -> anyhow::Result<()> {
    let base: PhantomSpec = match std::env::args().nth(1) {
        Some(p) => read_json(std::path::Path::new(&p))?,
        None => PhantomSpec::default(),
    };
    let n: u64 = std::env::args().nth(2).map_or(Ok(12), |s| s.parse())?;
    for seed in 0..n {
        let p = generate_phantom(&PhantomSpec { seed, ..base.clone() })?;
        let pts = simulate_extreme_points(&p.gt, seed)?;
        let image = normalize_intensity(&p.image);
        let grad = gradient_magnitude(&image)?;
        let prob = soft_mask(&p.gt);
        let mut line = format!("seed {seed:3} fg {:5} corridor {:5}", p.gt.count(), p.distractor.count());
        for mode in GeodesicMode::ALL {
            let prob = (mode == GeodesicMode::Deep).then_some(&prob);
            let set = inter_extreme_geodesics(&GeodesicConfig::with_mode(mode), &image, &grad, prob, &pts)?;
            let c = containment(&set.paths(), &p.gt);
            let in_corr = containment(&set.paths(), &p.distractor);
            let cx = containment(&[&set.path_x], &p.gt);
            line += &format!("  {:?}: in {:.3} x {:.3} corr {:.3}", mode, c, cx, in_corr);
        }
        println!("{line}");
    }
    Ok(())
}
