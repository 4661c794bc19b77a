//! Axis-aligned voxel bounding boxes (inclusive bounds) and the
//! union-and-expand rule used for ROI localization.

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelBox {
    pub fn extents(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        ]
    }

    pub fn contains(&self, other: &VoxelBox) -> bool {
        (0..3).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    pub fn full(extents: [usize; 3]) -> VoxelBox {
        VoxelBox {
            lo: [0; 3],
            hi: [extents[0] - 1, extents[1] - 1, extents[2] - 1],
        }
    }
}

/// Tight bounding box of one binary mask, if nonempty.
pub fn tight_box(mask: &[bool], extents: [usize; 3]) -> Option<VoxelBox> {
    let [ex, ey, ez] = extents;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for x in 0..ex {
        for y in 0..ey {
            for z in 0..ez {
                if mask[(x * ey + y) * ez + z] {
                    any = true;
                    let p = [x, y, z];
                    for d in 0..3 {
                        lo[d] = lo[d].min(p[d]);
                        hi[d] = hi[d].max(p[d]);
                    }
                }
            }
        }
    }
    any.then_some(VoxelBox { lo, hi })
}

/// Union of the tight boxes over a set of masks (one per timepoint),
/// expanded by `margin` voxels per direction and clamped to the volume.
/// Fails when every mask is empty.
pub fn bounding_box(
    masks: &[Vec<bool>],
    extents: [usize; 3],
    margin: usize,
) -> Result<VoxelBox> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for mask in masks {
        if let Some(b) = tight_box(mask, extents) {
            any = true;
            for d in 0..3 {
                lo[d] = lo[d].min(b.lo[d]);
                hi[d] = hi[d].max(b.hi[d]);
            }
        }
    }
    if !any {
        return Err(data_err!("no foreground voxels: cannot form a bounding box"));
    }
    for d in 0..3 {
        lo[d] = lo[d].saturating_sub(margin);
        hi[d] = (hi[d] + margin).min(extents[d] - 1);
    }
    Ok(VoxelBox { lo, hi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with_span(extents: [usize; 3], lo: [usize; 3], hi: [usize; 3]) -> Vec<bool> {
        let mut m = vec![false; extents.iter().product()];
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    m[(x * extents[1] + y) * extents[2] + z] = true;
                }
            }
        }
        m
    }

    #[test]
    fn margin_expansion_clamps_at_volume_edge() {
        // Span [10,20]x[12,22]x[14,24] with margin 20 in a 64^3 volume
        // clamps to [0,40]x[0,42]x[0,44].
        let e = [64, 64, 64];
        let m = mask_with_span(e, [10, 12, 14], [20, 22, 24]);
        let b = bounding_box(&[m], e, 20).unwrap();
        assert_eq!(b.lo, [0, 0, 0]);
        assert_eq!(b.hi, [40, 42, 44]);
    }

    #[test]
    fn zero_margin_gives_tight_box() {
        let e = [16, 16, 16];
        let m = mask_with_span(e, [3, 4, 5], [6, 7, 8]);
        let b = bounding_box(&[m], e, 0).unwrap();
        assert_eq!(b.lo, [3, 4, 5]);
        assert_eq!(b.hi, [6, 7, 8]);
    }

    #[test]
    fn union_over_timepoints_is_componentwise_minmax() {
        let e = [32, 32, 32];
        let spans = [
            ([4, 6, 8], [10, 12, 14]),
            ([2, 9, 10], [8, 15, 12]),
            ([5, 5, 5], [6, 20, 11]),
        ];
        let masks: Vec<Vec<bool>> = spans
            .iter()
            .map(|&(lo, hi)| mask_with_span(e, lo, hi))
            .collect();
        let margin = 3;
        let b = bounding_box(&masks, e, margin).unwrap();
        let tights: Vec<VoxelBox> = masks
            .iter()
            .map(|m| tight_box(m, e).unwrap())
            .collect();
        for d in 0..3 {
            let lo = tights.iter().map(|t| t.lo[d]).min().unwrap();
            let hi = tights.iter().map(|t| t.hi[d]).max().unwrap();
            assert_eq!(b.lo[d], lo.saturating_sub(margin));
            assert_eq!(b.hi[d], (hi + margin).min(e[d] - 1));
        }
    }

    #[test]
    fn all_empty_masks_is_an_error() {
        let e = [8, 8, 8];
        let err = bounding_box(&[vec![false; 512]], e, 2).unwrap_err();
        assert!(err.to_string().contains("no foreground"));
    }
}
