//! Combined Dice + cross-entropy segmentation loss.
//!
//! `loss = (DiceLoss + CE) / 2` where DiceLoss averages
//! `1 - (2 I_c + s)/(P_c + Y_c + s)` over the scored classes and CE
//! averages `-log p_true` over every voxel. `exclude_background` drops
//! class 0 from the Dice mean only; CE always scores all voxels, because a
//! loss that ignores background voxels entirely leaves them unconstrained
//! and training falls into a "one class everywhere" optimum.

use crate::error::{data_err, usage_err, Result};
use crate::tensor::{Element, Tensor};

/// Smoothing constant keeping empty classes away from 0/0.
pub const DICE_SMOOTHING: f64 = 1e-5;

fn shape_info<T: Element>(probs: &Tensor<T>, labels: &[u8]) -> Result<(usize, usize, usize)> {
    let s = probs.shape();
    if s.len() < 3 {
        return Err(usage_err!(
            "dice_ce_loss expects probabilities [N, C, ...], got {:?}",
            s
        ));
    }
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    if labels.len() != n * spatial {
        return Err(usage_err!(
            "dice_ce_loss got {} labels for {} voxels",
            labels.len(),
            n * spatial
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(data_err!("label {} out of range for {} classes", bad, c));
    }
    Ok((n, c, spatial))
}

/// Differentiable loss on softmax probabilities and integer labels.
pub fn dice_ce_loss<T: Element>(
    probs: &Tensor<T>,
    labels: &[u8],
    exclude_background: bool,
) -> Result<Tensor<T>> {
    let (n, c, spatial) = shape_info(probs, labels)?;
    let smooth = T::from_f64(DICE_SMOOTHING);

    // One-hot reference and per-class voxel counts.
    let mut one_hot = vec![T::zero(); n * c * spatial];
    let mut counts = vec![T::zero(); c];
    for b in 0..n {
        for i in 0..spatial {
            let l = labels[b * spatial + i] as usize;
            one_hot[(b * c + l) * spatial + i] = T::one();
            counts[l] += T::one();
        }
    }
    let y = Tensor::from_vec(probs.shape(), one_hot.clone());
    let sum_y = Tensor::from_vec(&[c], counts);

    let inter = probs.mul(&y)?.sum_channels()?;
    let sum_p = probs.sum_channels()?;
    let numer = inter.scale(T::from_f64(2.0)).add_scalar(smooth);
    let denom = sum_p.add(&sum_y)?.add_scalar(smooth);
    let ratio = numer.div(&denom)?;

    let first_class = usize::from(exclude_background);
    let scored_classes = c - first_class;
    let mut class_mask = vec![T::one(); c];
    if exclude_background {
        class_mask[0] = T::zero();
    }
    let fg = Tensor::from_vec(&[c], class_mask);
    let dice_term = ratio
        .mul(&fg)?
        .sum_all()
        .scale(-T::one() / T::from_f64(scored_classes as f64))
        .add_scalar(T::one());

    // CE over every voxel via the one-hot mask. The floor sits far below
    // any reachable probability so the (p - 1)/N recovery gradient keeps
    // flowing for classes the optimizer momentarily crushed; it only
    // guards log(0).
    let m = Tensor::from_vec(probs.shape(), one_hot);
    let ce_term = probs
        .clamp_min(T::from_f64(1e-30))
        .ln()
        .mul(&m)?
        .sum_all()
        .scale(-T::one() / T::from_f64((n * spatial) as f64));

    Ok(dice_term.add(&ce_term)?.scale(T::from_f64(0.5)))
}

/// The two halves of the loss, recomputed independently with plain loops in
/// double precision (reporting and verification path).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub dice_term: f64,
    pub cross_entropy: f64,
    pub total: f64,
}

pub fn dice_ce_components<T: Element>(
    probs: &Tensor<T>,
    labels: &[u8],
    exclude_background: bool,
) -> Result<LossComponents> {
    let (n, c, spatial) = shape_info(probs, labels)?;
    let p = probs.data();
    let first_class = usize::from(exclude_background);

    let mut dice_acc = 0.0f64;
    for class in first_class..c {
        let mut inter = 0.0f64;
        let mut sum_p = 0.0f64;
        let mut sum_y = 0.0f64;
        for b in 0..n {
            for i in 0..spatial {
                let pv = p[(b * c + class) * spatial + i].to_f64_val();
                sum_p += pv;
                if labels[b * spatial + i] as usize == class {
                    inter += pv;
                    sum_y += 1.0;
                }
            }
        }
        dice_acc += (2.0 * inter + DICE_SMOOTHING) / (sum_p + sum_y + DICE_SMOOTHING);
    }
    let dice_term = 1.0 - dice_acc / (c - first_class) as f64;

    let mut ce = 0.0f64;
    for b in 0..n {
        for i in 0..spatial {
            let l = labels[b * spatial + i] as usize;
            let pv = p[(b * c + l) * spatial + i].to_f64_val().max(1e-30);
            ce -= pv.ln();
        }
    }
    let cross_entropy = ce / (n * spatial) as f64;
    Ok(LossComponents {
        dice_term,
        cross_entropy,
        total: 0.5 * (dice_term + cross_entropy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn soft_probs(n: usize, c: usize, spatial_shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut shape = vec![n, c];
        shape.extend_from_slice(spatial_shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::<f64>::randn(&shape, 1.0, &mut rng)
            .softmax(1)
            .unwrap()
    }

    #[test]
    fn near_one_hot_correct_prediction_is_near_zero() {
        // p_true = 1 - 1e-6 at every voxel.
        let spatial = 8;
        let labels: Vec<u8> = (0..spatial).map(|i| (i % 2 + 1) as u8).collect();
        let mut data = vec![0.0f64; 3 * spatial];
        for (i, &l) in labels.iter().enumerate() {
            for cl in 0..3 {
                data[cl * spatial + i] = if cl == l as usize { 1.0 - 1e-6 } else { 5e-7 };
            }
        }
        let probs = Tensor::from_vec(&[1, 3, 2, 2, 2], data);
        let loss = dice_ce_loss(&probs, &labels, true).unwrap().item();
        assert!(loss < 1e-3, "loss = {loss}");
    }

    #[test]
    fn uniform_probabilities_give_ln6_cross_entropy() {
        let spatial = 27;
        let probs = Tensor::<f64>::full(&[1, 6, 3, 3, 3], 1.0 / 6.0);
        let labels: Vec<u8> = (0..spatial).map(|i| (i % 5 + 1) as u8).collect();
        let comp = dice_ce_components(&probs, &labels, true).unwrap();
        assert_relative_eq!(comp.cross_entropy, 6.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(comp.cross_entropy, 1.7918, epsilon = 1e-4);
    }

    #[test]
    fn all_background_volume_is_finite_and_scores_background_ce() {
        // Dice relies on its smoothing constant here; CE reduces to the
        // background log-likelihood.
        let probs = soft_probs(1, 3, &[2, 2, 2], 3);
        let labels = vec![0u8; 8];
        let comp = dice_ce_components(&probs, &labels, true).unwrap();
        let expected_ce: f64 = -probs.data()[..8]
            .iter()
            .map(|&p| (p as f64).ln())
            .sum::<f64>()
            / 8.0;
        assert_relative_eq!(comp.cross_entropy, expected_ce, epsilon = 1e-9);
        assert!(comp.dice_term.is_finite());
        let loss = dice_ce_loss(&probs, &labels, true).unwrap().item();
        assert!(loss.is_finite());
        assert_relative_eq!(loss, comp.total, epsilon = 1e-9);
    }

    #[test]
    fn loss_is_mean_of_independently_recomputed_halves() {
        let probs = soft_probs(2, 4, &[2, 2, 2], 5);
        let labels: Vec<u8> = (0..16).map(|i| (i % 4) as u8).collect();
        for excl in [true, false] {
            let loss = dice_ce_loss(&probs, &labels, excl).unwrap().item();
            let comp = dice_ce_components(&probs, &labels, excl).unwrap();
            assert_relative_eq!(loss, comp.total, epsilon = 1e-9);
            assert_relative_eq!(
                comp.total,
                0.5 * (comp.dice_term + comp.cross_entropy),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn loss_is_nonnegative_on_random_inputs() {
        for seed in 0..10 {
            let probs = soft_probs(1, 3, &[2, 2, 2], seed);
            let labels: Vec<u8> = (0..8).map(|i| ((i + seed as usize) % 3) as u8).collect();
            let loss = dice_ce_loss(&probs, &labels, true).unwrap().item();
            assert!(loss >= 0.0, "seed {seed}: {loss}");
        }
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let probs = soft_probs(1, 3, &[2, 2, 2], 1);
        let labels = vec![3u8; 8];
        assert!(matches!(
            dice_ce_loss(&probs, &labels, true),
            Err(crate::Error::Data(_))
        ));
    }
}
