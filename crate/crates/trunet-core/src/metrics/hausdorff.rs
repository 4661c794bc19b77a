//! 95th-percentile Hausdorff distance between mask surfaces, in
//! millimetres.
//!
//! Surfaces are mask voxels with at least one non-mask 6-neighbour (the
//! volume border counts as outside). Directed distances use an exact
//! separable squared Euclidean distance transform with per-axis spacing;
//! the percentile is nearest-rank; the symmetric value is the max of the
//! two directions. An empty mask on either side scores the volume diagonal
//! as a finite penalty.

use crate::error::{usage_err, Result};
use crate::volume::LabelVolume;

/// Surface voxels of a binary mask under the 6-neighbourhood complement
/// test.
pub fn surface_voxels(mask: &[bool], extents: [usize; 3]) -> Vec<[usize; 3]> {
    let [ex, ey, ez] = extents;
    let idx = |x: usize, y: usize, z: usize| (x * ey + y) * ez + z;
    let mut out = Vec::new();
    for x in 0..ex {
        for y in 0..ey {
            for z in 0..ez {
                if !mask[idx(x, y, z)] {
                    continue;
                }
                let boundary = x == 0
                    || !mask[idx(x - 1, y, z)]
                    || x + 1 == ex
                    || !mask[idx(x + 1, y, z)]
                    || y == 0
                    || !mask[idx(x, y - 1, z)]
                    || y + 1 == ey
                    || !mask[idx(x, y + 1, z)]
                    || z == 0
                    || !mask[idx(x, y, z - 1)]
                    || z + 1 == ez
                    || !mask[idx(x, y, z + 1)];
                if boundary {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// One pass of the exact 1-D squared distance transform (lower envelope of
/// parabolas) with grid step `step`. Infinite entries are unseeded.
fn dt_1d(f: &[f64], step: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let s2 = step * step;
    // Lower envelope over finite parabolas only.
    let mut apex: Vec<usize> = Vec::with_capacity(n);
    let mut bound: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if apex.is_empty() {
            apex.push(q);
            bound.push(f64::NEG_INFINITY);
            bound.push(f64::INFINITY);
            continue;
        }
        loop {
            let k = apex.len() - 1;
            let p = apex[k];
            let s =
                ((f[q] - f[p]) / s2 + (q * q - p * p) as f64) / (2.0 * (q - p) as f64);
            // s is finite, so it can never fall below bound[0] = -inf.
            if s <= bound[k] {
                apex.pop();
                bound.pop();
            } else {
                bound.pop();
                bound.push(s);
                bound.push(f64::INFINITY);
                apex.push(q);
                break;
            }
        }
    }
    if apex.is_empty() {
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        while bound[k + 1] < q as f64 {
            k += 1;
        }
        let p = apex[k];
        let d = (q as f64 - p as f64) * step;
        out[q] = d * d + f[p];
    }
}

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// seed voxel, anisotropic spacing supported.
pub fn squared_distance_field(
    seeds: &[[usize; 3]],
    extents: [usize; 3],
    spacing: [f64; 3],
) -> Vec<f64> {
    let [ex, ey, ez] = extents;
    let n = ex * ey * ez;
    let mut dist = vec![f64::INFINITY; n];
    for &[x, y, z] in seeds {
        dist[(x * ey + y) * ez + z] = 0.0;
    }
    let mut line = Vec::new();
    let mut transformed = Vec::new();
    // Pass along z (contiguous).
    for x in 0..ex {
        for y in 0..ey {
            let base = (x * ey + y) * ez;
            line.clear();
            line.extend_from_slice(&dist[base..base + ez]);
            dt_1d(&line, spacing[2], &mut transformed);
            dist[base..base + ez].copy_from_slice(&transformed);
        }
    }
    // Pass along y.
    for x in 0..ex {
        for z in 0..ez {
            line.clear();
            for y in 0..ey {
                line.push(dist[(x * ey + y) * ez + z]);
            }
            dt_1d(&line, spacing[1], &mut transformed);
            for y in 0..ey {
                dist[(x * ey + y) * ez + z] = transformed[y];
            }
        }
    }
    // Pass along x.
    for y in 0..ey {
        for z in 0..ez {
            line.clear();
            for x in 0..ex {
                line.push(dist[(x * ey + y) * ez + z]);
            }
            dt_1d(&line, spacing[0], &mut transformed);
            for x in 0..ex {
                dist[(x * ey + y) * ez + z] = transformed[x];
            }
        }
    }
    dist
}

/// Nearest-rank percentile of an unsorted sample (p in (0, 1]).
fn nearest_rank(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (p * values.len() as f64).ceil() as usize;
    values[k.max(1) - 1]
}

/// Finite penalty for an empty mask: the volume diagonal in mm.
pub fn volume_diagonal_mm(extents: [usize; 3], spacing: [f64; 3]) -> f64 {
    extents
        .iter()
        .zip(spacing.iter())
        .map(|(&e, &s)| {
            let span = (e.saturating_sub(1)) as f64 * s;
            span * span
        })
        .sum::<f64>()
        .sqrt()
}

pub fn hd95(pred: &LabelVolume, truth: &LabelVolume, class_id: u8) -> Result<f64> {
    if pred.extents != truth.extents {
        return Err(usage_err!(
            "hd95 shape mismatch: {:?} vs {:?}",
            pred.extents,
            truth.extents
        ));
    }
    if pred.spacing_mm != truth.spacing_mm {
        return Err(usage_err!(
            "hd95 spacing mismatch: {:?} vs {:?}",
            pred.spacing_mm,
            truth.spacing_mm
        ));
    }
    let extents = pred.extents;
    let spacing = pred.spacing_mm;
    let mask_a = pred.class_mask(class_id);
    let mask_b = truth.class_mask(class_id);
    if !mask_a.iter().any(|&m| m) || !mask_b.iter().any(|&m| m) {
        return Ok(volume_diagonal_mm(extents, spacing));
    }
    let surf_a = surface_voxels(&mask_a, extents);
    let surf_b = surface_voxels(&mask_b, extents);

    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| -> f64 {
        let field = squared_distance_field(to, extents, spacing);
        let mut d: Vec<f64> = from
            .iter()
            .map(|&[x, y, z]| field[(x * extents[1] + y) * extents[2] + z].sqrt())
            .collect();
        nearest_rank(&mut d, 0.95)
    };
    Ok(directed(&surf_a, &surf_b).max(directed(&surf_b, &surf_a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(extents: [usize; 3], voxels: Vec<u8>, spacing: [f64; 3]) -> LabelVolume {
        LabelVolume::new(extents, voxels, spacing).unwrap()
    }

    /// Exhaustive all-pairs oracle: directed nearest-neighbour distances
    /// between surfaces, nearest-rank percentile, symmetric max.
    pub(crate) fn hd95_oracle(pred: &LabelVolume, truth: &LabelVolume, class_id: u8) -> f64 {
        let ma = pred.class_mask(class_id);
        let mb = truth.class_mask(class_id);
        if !ma.iter().any(|&m| m) || !mb.iter().any(|&m| m) {
            return volume_diagonal_mm(pred.extents, pred.spacing_mm);
        }
        let sa = surface_voxels(&ma, pred.extents);
        let sb = surface_voxels(&mb, truth.extents);
        let sp = pred.spacing_mm;
        let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| -> f64 {
            let mut d: Vec<f64> = from
                .iter()
                .map(|a| {
                    to.iter()
                        .map(|b| {
                            let dx = (a[0] as f64 - b[0] as f64) * sp[0];
                            let dy = (a[1] as f64 - b[1] as f64) * sp[1];
                            let dz = (a[2] as f64 - b[2] as f64) * sp[2];
                            (dx * dx + dy * dy + dz * dz).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = (0.95 * d.len() as f64).ceil() as usize;
            d[k.max(1) - 1]
        };
        directed(&sa, &sb).max(directed(&sb, &sa))
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let mut v = vec![0u8; 4 * 4 * 4];
        v[21] = 1;
        v[22] = 1;
        let a = vol([4, 4, 4], v, [1.0; 3]);
        assert_eq!(hd95(&a, &a, 1).unwrap(), 0.0);
    }

    #[test]
    fn single_voxels_three_apart() {
        // Two single voxels 3 apart along x at unit spacing.
        let e = [8, 4, 4];
        let mut a = vec![0u8; 8 * 4 * 4];
        let mut b = vec![0u8; 8 * 4 * 4];
        a[(1 * 4 + 2) * 4 + 2] = 1;
        b[(4 * 4 + 2) * 4 + 2] = 1;
        let (va, vb) = (vol(e, a, [1.0; 3]), vol(e, b, [1.0; 3]));
        let d = hd95(&va, &vb, 1).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
        assert!((hd95_oracle(&va, &vb, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_scores_volume_diagonal() {
        let n = 64 * 64 * 64;
        let empty = vol([64, 64, 64], vec![0; n], [1.0; 3]);
        let mut t = vec![0u8; n];
        t[0] = 1;
        let truth = vol([64, 64, 64], t, [1.0; 3]);
        let d = hd95(&empty, &truth, 1).unwrap();
        let expect = (3.0f64).sqrt() * 63.0;
        assert!((d - expect).abs() < 1e-9, "{d} vs {expect}");
    }

    #[test]
    fn spacing_scales_linearly() {
        let e = [6, 6, 6];
        let mut a = vec![0u8; 216];
        let mut b = vec![0u8; 216];
        a[(1 * 6 + 1) * 6 + 1] = 1;
        b[(4 * 6 + 3) * 6 + 2] = 1;
        let d1 = hd95(&vol(e, a.clone(), [1.0; 3]), &vol(e, b.clone(), [1.0; 3]), 1).unwrap();
        let d2 = hd95(&vol(e, a, [2.5; 3]), &vol(e, b, [2.5; 3]), 1).unwrap();
        assert!((d2 - 2.5 * d1).abs() < 1e-9);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(63);
        for case in 0..25 {
            let spacing = [
                0.5 + rng.gen::<f64>(),
                0.5 + rng.gen::<f64>(),
                0.5 + rng.gen::<f64>(),
            ];
            let make = |rng: &mut rand_chacha::ChaCha8Rng| {
                let v: Vec<u8> = (0..512)
                    .map(|_| if rng.gen::<f64>() < 0.25 { 1 } else { 0 })
                    .collect();
                vol([8, 8, 8], v, spacing)
            };
            let a = make(&mut rng);
            let b = make(&mut rng);
            let fast = hd95(&a, &b, 1).unwrap();
            let slow = hd95_oracle(&a, &b, 1);
            assert!(
                (fast - slow).abs() < 1e-9,
                "case {case}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn anisotropic_distance_field_is_exact() {
        let seeds = vec![[0usize, 0, 0]];
        let field = squared_distance_field(&seeds, [3, 3, 3], [1.0, 2.0, 3.0]);
        let d = field[(2 * 3 + 1) * 3 + 2];
        // (2*1)^2 + (1*2)^2 + (2*3)^2 = 4 + 4 + 36.
        assert!((d - 44.0).abs() < 1e-12);
    }
}
