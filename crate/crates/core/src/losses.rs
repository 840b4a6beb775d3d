//! Partial-label losses evaluated on annotated voxels only.
//!
//! Every loss returns its value and the gradient with respect to the
//! probability map; the gradient is zero on unlabeled voxels.

use crate::annotations::{Label, SupervisionMask};
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Probability clamp used by the log terms.
pub const PROB_EPS: f64 = 1e-7;
/// Smoothing constant of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub ce: f64,
    pub dice: f64,
    pub focal: f64,
    /// `∂total/∂p`.
    pub grad: Volume<f64>,
}

fn check(prob: &Volume<f64>, mask: &SupervisionMask) -> Result<usize> {
    if prob.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(prob.shape(), mask.shape()));
    }
    let n = mask.annotated_count();
    if n == 0 {
        return Err(Error::EmptySupervision);
    }
    Ok(n)
}

/// Clamped probability and the derivative of the clamp.
#[inline]
fn clamp_prob(p: f64) -> (f64, f64) {
    if p < PROB_EPS {
        (PROB_EPS, 0.0)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, 0.0)
    } else {
        (p, 1.0)
    }
}

fn annotated(mask: &SupervisionMask) -> impl Iterator<Item = (usize, bool)> + '_ {
    mask.labels().iter().enumerate().filter_map(|(i, l)| match l {
        Label::Foreground => Some((i, true)),
        Label::Background => Some((i, false)),
        Label::Unlabeled => None,
    })
}

pub fn partial_cross_entropy(prob: &Volume<f64>, mask: &SupervisionMask) -> Result<(f64, Volume<f64>)> {
    let n = check(prob, mask)? as f64;
    let p = prob.data();
    let mut grad = vec![0.0; p.len()];
    let mut value = 0.0;
    for (i, fg) in annotated(mask) {
        let (q, dq) = clamp_prob(p[i]);
        if fg {
            value -= q.ln();
            grad[i] = -dq / (q * n);
        } else {
            value -= (1.0 - q).ln();
            grad[i] = dq / ((1.0 - q) * n);
        }
    }
    Ok((value / n, prob.with_data(grad)?))
}

pub fn partial_soft_dice(prob: &Volume<f64>, mask: &SupervisionMask) -> Result<(f64, Volume<f64>)> {
    check(prob, mask)?;
    let p = prob.data();
    let (mut inter, mut psum, mut ysum) = (0.0, 0.0, 0.0);
    for (i, fg) in annotated(mask) {
        psum += p[i];
        if fg {
            inter += p[i];
            ysum += 1.0;
        }
    }
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = psum + ysum + DICE_SMOOTH;
    let mut grad = vec![0.0; p.len()];
    for (i, fg) in annotated(mask) {
        let y = if fg { 1.0 } else { 0.0 };
        grad[i] = -(2.0 * y * den - num) / (den * den);
    }
    Ok((1.0 - num / den, prob.with_data(grad)?))
}

/// Class-balanced focal loss with per-class weights `|A| / (2 |A_c|)`.
pub fn partial_class_balanced_focal(
    prob: &Volume<f64>,
    mask: &SupervisionMask,
    gamma: f64,
) -> Result<(f64, Volume<f64>)> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Config(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let n_ann = check(prob, mask)?;
    let n_fg = mask.count(Label::Foreground);
    let n_bg = mask.count(Label::Background);
    let weight = |count: usize| {
        if count == 0 {
            0.0
        } else {
            n_ann as f64 / (2.0 * count as f64)
        }
    };
    let (alpha_fg, alpha_bg) = (weight(n_fg), weight(n_bg));
    let n = n_ann as f64;
    let p = prob.data();
    let mut grad = vec![0.0; p.len()];
    let mut value = 0.0;
    for (i, fg) in annotated(mask) {
        let (q, dq) = clamp_prob(p[i]);
        let (pt, dpt, alpha) = if fg { (q, dq, alpha_fg) } else { (1.0 - q, -dq, alpha_bg) };
        let one_minus = 1.0 - pt;
        let modulation = one_minus.powf(gamma);
        let nll = -pt.ln();
        value += alpha * modulation * nll;
        let mut d = -modulation / pt;
        if gamma > 0.0 {
            d += gamma * one_minus.powf(gamma - 1.0) * pt.ln();
        }
        grad[i] = alpha * d * dpt / n;
    }
    Ok((value / n, prob.with_data(grad)?))
}

/// Sum of cross-entropy, soft Dice and class-balanced focal loss.
pub fn combined_loss(prob: &Volume<f64>, mask: &SupervisionMask, gamma: f64) -> Result<LossReport> {
    let (ce, g_ce) = partial_cross_entropy(prob, mask)?;
    let (dice, g_dice) = partial_soft_dice(prob, mask)?;
    let (focal, g_focal) = partial_class_balanced_focal(prob, mask, gamma)?;
    let grad: Vec<f64> = g_ce
        .data()
        .iter()
        .zip(g_dice.data())
        .zip(g_focal.data())
        .map(|((a, b), c)| a + b + c)
        .collect();
    Ok(LossReport {
        total: ce + dice + focal,
        ce,
        dice,
        focal,
        grad: prob.with_data(grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelIndex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64) -> (Volume<f64>, SupervisionMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [5, 4, 3];
        let prob = Volume::from_fn(shape, [1.0; 3], |_| rng.random_range(0.05..0.95)).unwrap();
        let inner = crate::annotations::VoxelBox {
            lo: VoxelIndex::new(1, 1, 0),
            hi: VoxelIndex::new(3, 2, 2),
        };
        let mut mask = SupervisionMask::outside_box(&inner, shape);
        for v in inner.voxels() {
            if rng.random_bool(0.4) {
                mask.mark_foreground(v);
            }
        }
        mask.mark_foreground(inner.lo);
        (prob, mask)
    }

    fn perfect(mask: &SupervisionMask) -> Volume<f64> {
        let data = mask
            .labels()
            .iter()
            .map(|l| match l {
                Label::Foreground => 1.0 - PROB_EPS,
                _ => PROB_EPS,
            })
            .collect();
        Volume::new(mask.shape(), [1.0; 3], data).unwrap()
    }

    #[test]
    fn empty_supervision_is_an_error() {
        let prob = Volume::filled([2, 2, 2], [1.0; 3], 0.5).unwrap();
        let mask = SupervisionMask::unlabeled([2, 2, 2]);
        assert!(matches!(partial_cross_entropy(&prob, &mask), Err(Error::EmptySupervision)));
        assert!(matches!(partial_soft_dice(&prob, &mask), Err(Error::EmptySupervision)));
        assert!(matches!(
            partial_class_balanced_focal(&prob, &mask, 2.0),
            Err(Error::EmptySupervision)
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let (_, mask) = random_instance(1);
        let (v, _) = partial_cross_entropy(&perfect(&mask), &mask).unwrap();
        assert!((v - -(1.0 - PROB_EPS).ln()).abs() < 1e-12);
        assert!(v < 1.1e-7);
        let half = Volume::filled(mask.shape(), [1.0; 3], 0.5).unwrap();
        let (v, _) = partial_cross_entropy(&half, &mask).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dice_examples() {
        let (_, mask) = random_instance(2);
        let exact: Vec<f64> = mask
            .labels()
            .iter()
            .map(|l| if *l == Label::Foreground { 1.0 } else { 0.0 })
            .collect();
        let exact = Volume::new(mask.shape(), [1.0; 3], exact).unwrap();
        assert!(partial_soft_dice(&exact, &mask).unwrap().0.abs() < 1e-15);
        let zero = exact.map(|_| 0.0);
        let m = mask.count(Label::Foreground) as f64;
        assert!((partial_soft_dice(&zero, &mask).unwrap().0 - (1.0 - 1.0 / (m + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn focal_collapses_to_cross_entropy() {
        let shape = [4, 1, 1];
        let mut mask = SupervisionMask::outside_box(
            &crate::annotations::VoxelBox {
                lo: VoxelIndex::new(0, 0, 0),
                hi: VoxelIndex::new(1, 0, 0),
            },
            shape,
        );
        mask.mark_foreground(VoxelIndex::new(0, 0, 0));
        mask.mark_foreground(VoxelIndex::new(1, 0, 0));
        let prob = Volume::new(shape, [1.0; 3], vec![0.3, 0.8, 0.6, 0.1]).unwrap();
        let (f, gf) = partial_class_balanced_focal(&prob, &mask, 0.0).unwrap();
        let (c, gc) = partial_cross_entropy(&prob, &mask).unwrap();
        assert!((f - c).abs() < 1e-14);
        for (a, b) in gf.data().iter().zip(gc.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        let (f, _) = partial_class_balanced_focal(&perfect(&mask), &mask, 2.0).unwrap();
        assert!(f < 1e-12);
    }

    #[test]
    fn combined_is_sum_of_parts() {
        for seed in 0..5 {
            let (prob, mask) = random_instance(seed);
            let r = combined_loss(&prob, &mask, 2.0).unwrap();
            assert_eq!(r.total, r.ce + r.dice + r.focal);
            let (_, a) = partial_cross_entropy(&prob, &mask).unwrap();
            let (_, b) = partial_soft_dice(&prob, &mask).unwrap();
            let (_, c) = partial_class_balanced_focal(&prob, &mask, 2.0).unwrap();
            for i in 0..prob.len() {
                assert_eq!(r.grad.data()[i], a.data()[i] + b.data()[i] + c.data()[i]);
            }
        }
        let (_, mask) = random_instance(9);
        let r = combined_loss(&perfect(&mask), &mask, 2.0).unwrap();
        assert!(r.total <= 1e-6);
    }

    #[test]
    fn gradients_vanish_on_unlabeled_voxels() {
        let (prob, mask) = random_instance(4);
        let r = combined_loss(&prob, &mask, 2.0).unwrap();
        for (g, l) in r.grad.data().iter().zip(mask.labels()) {
            if *l == Label::Unlabeled {
                assert_eq!(*g, 0.0);
            }
        }
        assert!(r.ce >= 0.0 && r.dice >= 0.0 && r.focal >= 0.0);
    }

    #[test]
    fn cross_entropy_ignores_unlabeled_permutations() {
        let (prob, mask) = random_instance(6);
        let unl: Vec<usize> = (0..prob.len()).filter(|&i| mask.labels()[i] == Label::Unlabeled).collect();
        let mut data = prob.data().to_vec();
        let vals: Vec<f64> = unl.iter().rev().map(|&i| data[i]).collect();
        for (&i, v) in unl.iter().zip(vals) {
            data[i] = v;
        }
        let permuted = prob.with_data(data).unwrap();
        assert_eq!(
            partial_cross_entropy(&prob, &mask).unwrap().0,
            partial_cross_entropy(&permuted, &mask).unwrap().0
        );
    }
}
