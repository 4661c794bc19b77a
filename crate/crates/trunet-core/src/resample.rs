//! Raw-grid resampling: resize, rotation, and mirroring of `[x, y, z]`
//! volumes (last axis fastest). These run outside the autodiff tape; the
//! differentiable upsampling lives on `Tensor`.
//!
//! Coordinate convention matches the tensor upsampler: a destination voxel
//! center maps to `src = (dst + 0.5) * (from / to) - 0.5`.

/// Trilinear resize of an intensity grid to arbitrary target extents.
pub fn trilinear_resize(src: &[f32], from: [usize; 3], to: [usize; 3]) -> Vec<f32> {
    assert_eq!(src.len(), from.iter().product::<usize>());
    let scale = [
        from[0] as f64 / to[0] as f64,
        from[1] as f64 / to[1] as f64,
        from[2] as f64 / to[2] as f64,
    ];
    let taps = |extent: usize, o: usize, s: f64| -> (usize, usize, f64) {
        let src_c = (o as f64 + 0.5) * s - 0.5;
        let floor = src_c.floor();
        let t = src_c - floor;
        let i0 = (floor as isize).clamp(0, extent as isize - 1) as usize;
        let i1 = (floor as isize + 1).clamp(0, extent as isize - 1) as usize;
        (i0, i1, t)
    };
    let mut out = Vec::with_capacity(to.iter().product());
    for x in 0..to[0] {
        let (x0, x1, tx) = taps(from[0], x, scale[0]);
        for y in 0..to[1] {
            let (y0, y1, ty) = taps(from[1], y, scale[1]);
            for z in 0..to[2] {
                let (z0, z1, tz) = taps(from[2], z, scale[2]);
                let at = |a: usize, b: usize, c: usize| {
                    src[(a * from[1] + b) * from[2] + c] as f64
                };
                let c00 = at(x0, y0, z0) * (1.0 - tz) + at(x0, y0, z1) * tz;
                let c01 = at(x0, y1, z0) * (1.0 - tz) + at(x0, y1, z1) * tz;
                let c10 = at(x1, y0, z0) * (1.0 - tz) + at(x1, y0, z1) * tz;
                let c11 = at(x1, y1, z0) * (1.0 - tz) + at(x1, y1, z1) * tz;
                let c0 = c00 * (1.0 - ty) + c01 * ty;
                let c1 = c10 * (1.0 - ty) + c11 * ty;
                out.push((c0 * (1.0 - tx) + c1 * tx) as f32);
            }
        }
    }
    out
}

/// Nearest-neighbour resize (labels): never invents values.
pub fn nearest_resize(src: &[u8], from: [usize; 3], to: [usize; 3]) -> Vec<u8> {
    assert_eq!(src.len(), from.iter().product::<usize>());
    let nearest = |extent: usize, o: usize, s: f64| -> usize {
        let src_c = (o as f64 + 0.5) * s - 0.5;
        (src_c.round() as isize).clamp(0, extent as isize - 1) as usize
    };
    let scale = [
        from[0] as f64 / to[0] as f64,
        from[1] as f64 / to[1] as f64,
        from[2] as f64 / to[2] as f64,
    ];
    let mut out = Vec::with_capacity(to.iter().product());
    for x in 0..to[0] {
        let sx = nearest(from[0], x, scale[0]);
        for y in 0..to[1] {
            let sy = nearest(from[1], y, scale[1]);
            for z in 0..to[2] {
                let sz = nearest(from[2], z, scale[2]);
                out.push(src[(sx * from[1] + sy) * from[2] + sz]);
            }
        }
    }
    out
}

/// Mirrors a grid along one axis.
pub fn flip<T: Copy>(src: &[T], extents: [usize; 3], axis: usize) -> Vec<T> {
    assert!(axis < 3);
    let mut out = Vec::with_capacity(src.len());
    for x in 0..extents[0] {
        for y in 0..extents[1] {
            for z in 0..extents[2] {
                let mut idx = [x, y, z];
                idx[axis] = extents[axis] - 1 - idx[axis];
                out.push(src[(idx[0] * extents[1] + idx[1]) * extents[2] + idx[2]]);
            }
        }
    }
    out
}

/// Inverse-mapped source coordinate for a rotation of `theta` radians about
/// `axis` through the grid center.
fn rotated_source(dst: [usize; 3], extents: [usize; 3], axis: usize, theta: f64) -> [f64; 3] {
    let center = [
        (extents[0] as f64 - 1.0) / 2.0,
        (extents[1] as f64 - 1.0) / 2.0,
        (extents[2] as f64 - 1.0) / 2.0,
    ];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (sin, cos) = (-theta).sin_cos();
    let mut src = [
        dst[0] as f64 - center[0],
        dst[1] as f64 - center[1],
        dst[2] as f64 - center[2],
    ];
    let (u, v) = (src[a], src[b]);
    src[a] = cos * u - sin * v;
    src[b] = sin * u + cos * v;
    [
        src[0] + center[0],
        src[1] + center[1],
        src[2] + center[2],
    ]
}

fn in_bounds(p: [f64; 3], extents: [usize; 3]) -> bool {
    p.iter()
        .zip(extents.iter())
        .all(|(&c, &e)| c >= 0.0 && c <= e as f64 - 1.0)
}

/// Rotates an intensity grid about one axis, resampling trilinearly;
/// out-of-field voxels take `fill`.
pub fn rotate_trilinear(
    src: &[f32],
    extents: [usize; 3],
    axis: usize,
    theta: f64,
    fill: f32,
) -> Vec<f32> {
    assert_eq!(src.len(), extents.iter().product::<usize>());
    let mut out = Vec::with_capacity(src.len());
    for x in 0..extents[0] {
        for y in 0..extents[1] {
            for z in 0..extents[2] {
                let p = rotated_source([x, y, z], extents, axis, theta);
                if !in_bounds(p, extents) {
                    out.push(fill);
                    continue;
                }
                let mut i0 = [0usize; 3];
                let mut i1 = [0usize; 3];
                let mut t = [0f64; 3];
                for d in 0..3 {
                    let floor = p[d].floor();
                    t[d] = p[d] - floor;
                    i0[d] = (floor as isize).clamp(0, extents[d] as isize - 1) as usize;
                    i1[d] = (floor as isize + 1).clamp(0, extents[d] as isize - 1) as usize;
                }
                let at = |a: usize, b: usize, c: usize| {
                    src[(a * extents[1] + b) * extents[2] + c] as f64
                };
                let c00 = at(i0[0], i0[1], i0[2]) * (1.0 - t[2]) + at(i0[0], i0[1], i1[2]) * t[2];
                let c01 = at(i0[0], i1[1], i0[2]) * (1.0 - t[2]) + at(i0[0], i1[1], i1[2]) * t[2];
                let c10 = at(i1[0], i0[1], i0[2]) * (1.0 - t[2]) + at(i1[0], i0[1], i1[2]) * t[2];
                let c11 = at(i1[0], i1[1], i0[2]) * (1.0 - t[2]) + at(i1[0], i1[1], i1[2]) * t[2];
                let c0 = c00 * (1.0 - t[1]) + c01 * t[1];
                let c1 = c10 * (1.0 - t[1]) + c11 * t[1];
                out.push((c0 * (1.0 - t[0]) + c1 * t[0]) as f32);
            }
        }
    }
    out
}

/// Rotates a label grid about one axis with nearest-neighbour sampling;
/// out-of-field voxels become `fill` (background).
pub fn rotate_nearest(
    src: &[u8],
    extents: [usize; 3],
    axis: usize,
    theta: f64,
    fill: u8,
) -> Vec<u8> {
    assert_eq!(src.len(), extents.iter().product::<usize>());
    let mut out = Vec::with_capacity(src.len());
    for x in 0..extents[0] {
        for y in 0..extents[1] {
            for z in 0..extents[2] {
                let p = rotated_source([x, y, z], extents, axis, theta);
                let i = [p[0].round(), p[1].round(), p[2].round()];
                if !in_bounds(i, extents) {
                    out.push(fill);
                    continue;
                }
                out.push(
                    src[((i[0] as usize) * extents[1] + i[1] as usize) * extents[2]
                        + i[2] as usize],
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_preserves_constants() {
        let src = vec![2.5f32; 4 * 4 * 4];
        let out = trilinear_resize(&src, [4, 4, 4], [7, 3, 5]);
        assert_eq!(out.len(), 7 * 3 * 5);
        assert!(out.iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn nearest_resize_never_invents_labels() {
        let src: Vec<u8> = (0..64).map(|i| (i % 5) as u8).collect();
        let out = nearest_resize(&src, [4, 4, 4], [3, 3, 3]);
        assert!(out.iter().all(|v| src.contains(v)));
    }

    #[test]
    fn identity_resize_is_exact() {
        let src: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let out = trilinear_resize(&src, [2, 3, 4], [2, 3, 4]);
        assert_eq!(out, src);
        let labels: Vec<u8> = (0..24).map(|i| (i % 7) as u8).collect();
        assert_eq!(nearest_resize(&labels, [2, 3, 4], [2, 3, 4]), labels);
    }

    #[test]
    fn flip_is_an_involution() {
        let src: Vec<u8> = (0..30).map(|i| i as u8).collect();
        for axis in 0..3 {
            let once = flip(&src, [2, 3, 5], axis);
            let twice = flip(&once, [2, 3, 5], axis);
            assert_eq!(twice, src, "axis {axis}");
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let src: Vec<f32> = (0..4 * 4 * 4).map(|i| (i as f32).sin()).collect();
        let out = rotate_trilinear(&src, [4, 4, 4], 1, 0.0, -1.0);
        for (a, b) in out.iter().zip(&src) {
            assert!((a - b).abs() < 1e-6);
        }
        let labels: Vec<u8> = (0..64).map(|i| (i % 6) as u8).collect();
        assert_eq!(rotate_nearest(&labels, [4, 4, 4], 2, 0.0, 0), labels);
    }

    #[test]
    fn quarter_turn_permutes_plane() {
        // Rotating an off-center marker by 90 degrees about z moves it to a
        // lattice position; nearest sampling recovers it exactly.
        let e = [5, 5, 1];
        let mut src = vec![0u8; 25];
        src[(3 * 5 + 2) * 1] = 7; // (x=3, y=2)
        let out = rotate_nearest(&src, e, 2, std::f64::consts::FRAC_PI_2, 0);
        // Forward rotation by +90 deg about the center (2,2):
        // (3,2) -> (2 - (2-2), 2 + (3-2)) = (2, 3).
        assert_eq!(out[(2 * 5 + 3) * 1], 7);
        assert_eq!(out.iter().filter(|&&v| v == 7).count(), 1);
    }

    #[test]
    fn out_of_field_gets_fill() {
        let e = [4, 4, 1];
        let src = vec![1.0f32; 16];
        let out = rotate_trilinear(&src, e, 2, 0.4, -9.0);
        assert!(out.iter().any(|&v| v == -9.0), "corners rotate out of field");
    }
}
