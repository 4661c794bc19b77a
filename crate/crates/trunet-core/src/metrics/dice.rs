//! Dice similarity score.

use crate::error::{usage_err, Result};
use crate::volume::LabelVolume;

/// `2|A n B| / (|A| + |B|)` over the binary masks of `class_id`.
/// Both masks empty scores 1.0; exactly one empty scores 0.0.
pub fn dice_score(pred: &LabelVolume, truth: &LabelVolume, class_id: u8) -> Result<f64> {
    if pred.extents != truth.extents {
        return Err(usage_err!(
            "dice_score shape mismatch: {:?} vs {:?}",
            pred.extents,
            truth.extents
        ));
    }
    let mut a = 0usize;
    let mut b = 0usize;
    let mut inter = 0usize;
    for (&p, &t) in pred.voxels.iter().zip(&truth.voxels) {
        let pa = p == class_id;
        let tb = t == class_id;
        a += pa as usize;
        b += tb as usize;
        inter += (pa && tb) as usize;
    }
    Ok(match (a, b) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * inter as f64 / (a + b) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(extents: [usize; 3], voxels: Vec<u8>) -> LabelVolume {
        LabelVolume::new(extents, voxels, [1.0; 3]).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let v = vol([2, 2, 2], vec![1, 0, 1, 0, 1, 0, 1, 0]);
        assert_eq!(dice_score(&v, &v, 1).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = vol([2, 2, 2], vec![1, 1, 0, 0, 0, 0, 0, 0]);
        let b = vol([2, 2, 2], vec![0, 0, 1, 1, 0, 0, 0, 0]);
        assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn overlapping_cubes_score_half() {
        // Two 2x2x2 cubes in a 3x2x2 grid overlapping in a 1x2x2 slab:
        // |A| = |B| = 8, |A n B| = 4, dice = 2*4/16 = 0.5. Verified against
        // brute-force voxel counting.
        let e = [3, 2, 2];
        let mut a = vec![0u8; 12];
        let mut b = vec![0u8; 12];
        for x in 0..3 {
            for y in 0..2 {
                for z in 0..2 {
                    let i = (x * 2 + y) * 2 + z;
                    if x < 2 {
                        a[i] = 1;
                    }
                    if x > 0 {
                        b[i] = 1;
                    }
                }
            }
        }
        let (va, vb) = (vol(e, a.clone()), vol(e, b.clone()));
        assert_eq!(dice_score(&va, &vb, 1).unwrap(), 0.5);

        // Brute force.
        let na = a.iter().filter(|&&v| v == 1).count();
        let nb = b.iter().filter(|&&v| v == 1).count();
        let ni = a
            .iter()
            .zip(&b)
            .filter(|(&x, &y)| x == 1 && y == 1)
            .count();
        assert_eq!((na, nb, ni), (8, 8, 4));
    }

    #[test]
    fn both_empty_is_one_single_empty_is_zero() {
        let empty = vol([2, 2, 2], vec![0; 8]);
        let full = vol([2, 2, 2], vec![1; 8]);
        assert_eq!(dice_score(&empty, &empty, 1).unwrap(), 1.0);
        assert_eq!(dice_score(&empty, &full, 1).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let a = vol([2, 2, 2], vec![0; 8]);
        let b = vol([2, 2, 1], vec![0; 4]);
        assert!(dice_score(&a, &b, 1).is_err());
    }
}
