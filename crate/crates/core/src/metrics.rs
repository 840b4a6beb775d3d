//! Segmentation metrics and paired significance testing.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::volume::{Spacing, Volume, VoxelIndex};

fn overlap(pred: &Volume<bool>, gt: &Volume<bool>) -> Result<(usize, usize, usize)> {
    pred.check_shape(gt)?;
    let (mut p, mut g, mut both) = (0, 0, 0);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    Ok((p, g, both))
}

/// Dice score in percent. Two empty masks score 100.
pub fn dice(pred: &Volume<bool>, gt: &Volume<bool>) -> Result<f64> {
    let (p, g, both) = overlap(pred, gt)?;
    if p + g == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * both as f64 / (p + g) as f64)
}

/// Precision in percent. An empty prediction scores 100 against an empty
/// ground truth and 0 otherwise.
pub fn precision(pred: &Volume<bool>, gt: &Volume<bool>) -> Result<f64> {
    let (p, g, both) = overlap(pred, gt)?;
    if p == 0 {
        return Ok(if g == 0 { 100.0 } else { 0.0 });
    }
    Ok(100.0 * both as f64 / p as f64)
}

/// Foreground voxels with at least one background 6-neighbour. Voxels on
/// the volume border count as boundary.
pub fn boundary_voxels(mask: &Volume<bool>) -> Vec<VoxelIndex> {
    let shape = mask.shape();
    (0..mask.len())
        .filter(|&lin| mask.data()[lin])
        .map(|lin| mask.voxel(lin))
        .filter(|v| {
            (0..3).any(|a| {
                let c = v.0[a];
                let mut lo = *v;
                let mut hi = *v;
                if c == 0 || c + 1 == shape[a] {
                    return true;
                }
                lo.0[a] = c - 1;
                hi.0[a] = c + 1;
                !mask.get(lo) || !mask.get(hi)
            })
        })
        .collect()
}

/// Linear-interpolation percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// For every voxel, the nearest seed voxel under the anisotropic Euclidean
/// metric (exact separable distance transform, tracking feature indices).
fn nearest_seed(shape: [usize; 3], spacing: Spacing, seeds: &[VoxelIndex]) -> Vec<Option<VoxelIndex>> {
    let n = shape.iter().product::<usize>();
    let mut dist = vec![f64::INFINITY; n];
    let mut feat: Vec<Option<VoxelIndex>> = vec![None; n];
    for s in seeds {
        let lin = crate::volume::linear_index(shape, *s);
        dist[lin] = 0.0;
        feat[lin] = Some(*s);
    }
    let strides = [1, shape[0], shape[0] * shape[1]];
    for axis in 0..3 {
        let len = shape[axis];
        let w = spacing[axis] * spacing[axis];
        let stride = strides[axis];
        let mut f = vec![0.0f64; len];
        let mut line_feat = vec![None; len];
        let mut v = vec![0usize; len];
        let mut z = vec![0.0f64; len + 1];
        for base in 0..n {
            if crate::volume::voxel_index(shape, base).0[axis] != 0 {
                continue;
            }
            for q in 0..len {
                f[q] = dist[base + q * stride];
                line_feat[q] = feat[base + q * stride];
            }
            // Lower envelope of parabolas w·(p − q)² + f(q) over finite f.
            let mut k: isize = -1;
            for q in 0..len {
                if !f[q].is_finite() {
                    continue;
                }
                loop {
                    if k < 0 {
                        k = 0;
                        v[0] = q;
                        z[0] = f64::NEG_INFINITY;
                        z[1] = f64::INFINITY;
                        break;
                    }
                    let r = v[k as usize];
                    let s = ((f[q] + w * (q * q) as f64) - (f[r] + w * (r * r) as f64))
                        / (2.0 * w * (q as f64 - r as f64));
                    if s <= z[k as usize] {
                        k -= 1;
                        continue;
                    }
                    k += 1;
                    v[k as usize] = q;
                    z[k as usize] = s;
                    z[k as usize + 1] = f64::INFINITY;
                    break;
                }
            }
            if k < 0 {
                continue;
            }
            let mut j = 0usize;
            for p in 0..len {
                while z[j + 1] < p as f64 {
                    j += 1;
                }
                let r = v[j];
                let d = p as f64 - r as f64;
                dist[base + p * stride] = w * d * d + f[r];
                feat[base + p * stride] = line_feat[r];
            }
        }
    }
    feat
}

fn directed_percentile(from: &[VoxelIndex], to: &[VoxelIndex], shape: [usize; 3], spacing: Spacing, q: f64) -> f64 {
    let nearest = nearest_seed(shape, spacing, to);
    let mut d: Vec<f64> = from
        .iter()
        .map(|v| {
            let t = nearest[crate::volume::linear_index(shape, *v)].expect("non-empty seed set");
            v.distance_mm(&t, spacing)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    percentile_sorted(&d, q)
}

/// Symmetric boundary distance at percentile `q` (in mm): the maximum of
/// the two directed percentiles.
pub fn hausdorff_percentile(pred: &Volume<bool>, gt: &Volume<bool>, q: f64) -> Result<f64> {
    pred.check_shape(gt)?;
    let bp = boundary_voxels(pred);
    let bg = boundary_voxels(gt);
    if bp.is_empty() {
        return Err(Error::UndefinedHd95("prediction"));
    }
    if bg.is_empty() {
        return Err(Error::UndefinedHd95("ground truth"));
    }
    let (shape, spacing) = (pred.shape(), pred.spacing());
    Ok(directed_percentile(&bp, &bg, shape, spacing, q).max(directed_percentile(&bg, &bp, shape, spacing, q)))
}

/// 95th-percentile Hausdorff distance in mm.
pub fn hd95(pred: &Volume<bool>, gt: &Volume<bool>) -> Result<f64> {
    hausdorff_percentile(pred, gt, 95.0)
}

/// Largest number of non-zero differences for which the p-value comes from
/// the exact null distribution instead of the normal approximation.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

/// Midranks of `|d|` doubled so that they are integers; `diffs` must be
/// sorted by absolute value.
fn doubled_midranks(diffs: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; diffs.len()];
    let mut i = 0;
    while i < diffs.len() {
        let mut j = i;
        while j + 1 < diffs.len() && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        ranks[i..=j].fill(i + j + 2);
        i = j + 1;
    }
    ranks
}

/// Two-sided p-value from the exact permutation distribution of the
/// signed-rank statistic, conditional on the observed (mid)ranks.
fn exact_signed_rank_p(sorted_diffs: &[f64]) -> f64 {
    let ranks = doubled_midranks(sorted_diffs);
    let total: usize = ranks.iter().sum();
    // counts[s]: sign assignments whose positive doubled ranks sum to s
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &ranks {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let observed: usize = ranks.iter().zip(sorted_diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    // all quantities are doubled: |2W − total/2·2| compares as |2s − total|
    let dev = (2 * observed).abs_diff(total);
    let extreme: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * s).abs_diff(total) >= dev)
        .map(|(_, c)| c)
        .sum();
    (extreme / 2f64.powi(ranks.len() as i32)).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Up to
/// [`EXACT_WILCOXON_MAX_N`] non-zero differences the p-value is exact;
/// beyond that it uses the normal approximation with tie and continuity
/// corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Ok(1.0);
    }
    if diffs.len() < 6 {
        return Err(Error::Config(format!(
            "Wilcoxon test needs at least 6 non-zero differences, got {}",
            diffs.len()
        )));
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let n = diffs.len();
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        w_plus += diffs[i..=j].iter().filter(|d| **d > 0.0).count() as f64 * rank;
        i = j + 1;
    }
    if n <= EXACT_WILCOXON_MAX_N {
        return Ok(exact_signed_rank_p(&diffs));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub precision: f64,
}

pub fn evaluate_case(case_id: &str, pred: &Volume<bool>, gt: &Volume<bool>) -> Result<CaseMetrics> {
    let hd = match hd95(pred, gt) {
        Ok(h) => Some(h),
        Err(Error::UndefinedHd95(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dice: dice(pred, gt)?,
        hd95: hd,
        precision: precision(pred, gt)?,
    })
}

/// Mean, sample variance and standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub sd: f64,
}

impl Aggregate {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let variance = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Aggregate {
            n: v.len(),
            mean,
            variance,
            sd: variance.sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: Vec<CaseMetrics>,
    pub dice: Option<Aggregate>,
    pub hd95: Option<Aggregate>,
    pub precision: Option<Aggregate>,
    /// Wilcoxon p-values against a second set of predictions, when one was
    /// supplied. A metric whose test is undefined is left empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dice_p_value: Option<f64>,
    pub hd95_p_value: Option<f64>,
    pub precision_p_value: Option<f64>,
}

impl Comparison {
    /// Paired tests between two evaluations of the same cases; a case with
    /// an undefined HD95 in either set is dropped from that test.
    pub fn between(a: &[CaseMetrics], b: &[CaseMetrics]) -> Self {
        let test = |f: fn(&CaseMetrics) -> Option<f64>| {
            let (x, y): (Vec<f64>, Vec<f64>) = a.iter().zip(b).filter_map(|(p, q)| Some((f(p)?, f(q)?))).unzip();
            wilcoxon_signed_rank(&x, &y).ok()
        };
        Comparison {
            dice_p_value: test(|c| Some(c.dice)),
            hd95_p_value: test(|c| c.hd95),
            precision_p_value: test(|c| Some(c.precision)),
        }
    }
}

impl EvalReport {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Self {
        EvalReport {
            dice: Aggregate::of(cases.iter().map(|c| c.dice)),
            hd95: Aggregate::of(cases.iter().filter_map(|c| c.hd95)),
            precision: Aggregate::of(cases.iter().map(|c| c.precision)),
            cases,
            comparison: None,
        }
    }

    /// Per-case CSV with columns `case_id,dice,hd95,precision`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case_id,dice,hd95,precision\n");
        for c in &self.cases {
            let hd = c.hd95.map_or_else(|| "NA".to_string(), |h| h.to_string());
            out.push_str(&format!("{},{},{},{}\n", c.case_id, c.dice, hd, c.precision));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(shape: [usize; 3], on: &[[usize; 3]]) -> Volume<bool> {
        Volume::from_fn(shape, [1.0; 3], |v| on.contains(&v.0)).unwrap()
    }

    #[test]
    fn dice_and_precision_examples() {
        let shape = [4, 4, 1];
        let a = mask_from(shape, &[[0, 0, 0], [1, 0, 0]]);
        assert_eq!(dice(&a, &a).unwrap(), 100.0);
        let b = mask_from(shape, &[[3, 3, 0]]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(precision(&a, &b).unwrap(), 0.0);
        let empty = mask_from(shape, &[]);
        assert_eq!(dice(&empty, &empty).unwrap(), 100.0);
        assert_eq!(precision(&empty, &empty).unwrap(), 100.0);
        assert_eq!(precision(&empty, &a).unwrap(), 0.0);

        // |P| = |G| = 8, |P ∩ G| = 4
        let shape = [16, 1, 1];
        let p = Volume::from_fn(shape, [1.0; 3], |v| v.0[0] < 8).unwrap();
        let g = Volume::from_fn(shape, [1.0; 3], |v| (4..12).contains(&v.0[0])).unwrap();
        assert_eq!(dice(&p, &g).unwrap(), 50.0);

        // |P| = 10, |P ∩ G| = 7
        let p = Volume::from_fn(shape, [1.0; 3], |v| v.0[0] < 10).unwrap();
        let g = Volume::from_fn(shape, [1.0; 3], |v| v.0[0] < 7).unwrap();
        assert_eq!(precision(&p, &g).unwrap(), 70.0);
        assert_eq!(precision(&g, &p).unwrap(), 100.0);
    }

    #[test]
    fn hd95_examples() {
        let shape = [8, 3, 3];
        let a = mask_from(shape, &[[1, 1, 1]]);
        let b = mask_from(shape, &[[4, 1, 1]]);
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
        assert_eq!(hd95(&a, &b).unwrap(), 3.0);
        let empty = mask_from(shape, &[]);
        assert!(matches!(hd95(&empty, &a), Err(Error::UndefinedHd95(_))));
        assert!(matches!(hd95(&a, &empty), Err(Error::UndefinedHd95(_))));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&s, 50.0), 2.0);
        assert!((percentile_sorted(&s, 95.0) - 3.8).abs() < 1e-12);
        assert_eq!(percentile_sorted(&s, 100.0), 4.0);
    }

    #[test]
    fn wilcoxon_identical_and_one_sided() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x - 1.0 - i as f64 * 0.1).collect();
        // W+ = 210 is the maximum: only all-positive and all-negative qualify
        let p = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(p, 2.0 / 2f64.powi(20));
        assert!(p < 0.01);
    }

    #[test]
    fn wilcoxon_exact_small_sample() {
        // W+ = 19 of 21; sums >= 19 or <= 2 occur for 6 of 64 sign patterns
        let p = wilcoxon_signed_rank(&[1.0, -2.0, 3.0, 4.0, 5.0, 6.0], &[0.0; 6]).unwrap();
        assert!((p - 6.0 / 64.0).abs() < 1e-15);
        // tied magnitudes share the midrank 1.5; W+ = 19.5, and W+ >= 19.5 or
        // <= 1.5 occurs for 6 patterns
        let p = wilcoxon_signed_rank(&[1.0, -1.0, 3.0, 4.0, 5.0, 6.0], &[0.0; 6]).unwrap();
        let q = wilcoxon_signed_rank(&[-1.0, 1.0, 3.0, 4.0, 5.0, 6.0], &[0.0; 6]).unwrap();
        assert_eq!(p, q);
        assert!((p - 6.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_normal_approximation_for_large_samples() {
        let a: Vec<f64> = (1..=30).map(|i| i as f64).collect();
        let p = wilcoxon_signed_rank(&a, &[0.0; 30]).unwrap();
        let z = (465.0 - 232.5 - 0.5) / (30.0f64 * 31.0 * 61.0 / 24.0).sqrt();
        assert!((p - erfc(z / std::f64::consts::SQRT_2)).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_rejects_tiny_samples() {
        assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let shape = [4, 4, 1];
        let a = mask_from(shape, &[[1, 1, 0], [2, 1, 0]]);
        let r = EvalReport::from_cases(vec![
            evaluate_case("c0", &a, &a).unwrap(),
            evaluate_case("c1", &mask_from(shape, &[]), &a).unwrap(),
        ]);
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "case_id,dice,hd95,precision");
        assert_eq!(csv.lines().nth(1).unwrap(), "c0,100,0,100");
        assert_eq!(csv.lines().nth(2).unwrap(), "c1,0,NA,0");
        assert_eq!(r.hd95.unwrap().n, 1);
    }
}
