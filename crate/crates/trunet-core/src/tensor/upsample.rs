//! Trilinear upsampling by an integer factor (align-corners = false).

use super::{Element, Tensor};
use crate::error::{config_err, Result};
use crate::exec;

/// Per-output-index sampling taps along one axis: indices i0/i1 (edge
/// clamped) and the weight of i1. Source coordinate convention:
/// `src = (dst + 0.5) / factor - 0.5`.
fn axis_taps<T: Element>(in_extent: usize, factor: usize) -> Vec<(usize, usize, T)> {
    let out_extent = in_extent * factor;
    (0..out_extent)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let floor = src.floor();
            let t = src - floor;
            let i0 = (floor as isize).clamp(0, in_extent as isize - 1) as usize;
            let i1 = (floor as isize + 1).clamp(0, in_extent as isize - 1) as usize;
            (i0, i1, T::from_f64(t))
        })
        .collect()
}

impl<T: Element> Tensor<T> {
    /// Scales the spatial extents of `[N, C, D, H, W]` by `factor` with
    /// trilinear interpolation. `factor == 1` returns the input unchanged.
    pub fn trilinear_upsample(&self, factor: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 5 {
            return Err(config_err!(
                "trilinear_upsample expects [N,C,D,H,W], got {:?}",
                s
            ));
        }
        if factor == 0 {
            return Err(config_err!("trilinear_upsample factor must be positive"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let (od, oh, ow) = (d * factor, h * factor, w * factor);
        let tz = axis_taps::<T>(d, factor);
        let ty = axis_taps::<T>(h, factor);
        let tx = axis_taps::<T>(w, factor);

        let in_spatial = d * h * w;
        let out_spatial = od * oh * ow;
        let mut data = vec![T::zero(); n * c * out_spatial];
        {
            let guard = self.data();
            let iv: &[T] = &guard;
            exec::for_each_chunk_mut(&mut data, out_spatial, |slice_idx, chunk| {
                let src = &iv[slice_idx * in_spatial..][..in_spatial];
                let one = T::one();
                for oz in 0..od {
                    let (z0, z1, wz) = tz[oz];
                    for oy in 0..oh {
                        let (y0, y1, wy) = ty[oy];
                        let r00 = &src[(z0 * h + y0) * w..][..w];
                        let r01 = &src[(z0 * h + y1) * w..][..w];
                        let r10 = &src[(z1 * h + y0) * w..][..w];
                        let r11 = &src[(z1 * h + y1) * w..][..w];
                        let out_row = &mut chunk[(oz * oh + oy) * ow..][..ow];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let (x0, x1, wx) = tx[ox];
                            let c00 = r00[x0] * (one - wx) + r00[x1] * wx;
                            let c01 = r01[x0] * (one - wx) + r01[x1] * wx;
                            let c10 = r10[x0] * (one - wx) + r10[x1] * wx;
                            let c11 = r11[x0] * (one - wx) + r11[x1] * wx;
                            let c0 = c00 * (one - wy) + c01 * wy;
                            let c1 = c10 * (one - wy) + c11 * wy;
                            *o = c0 * (one - wz) + c1 * wz;
                        }
                    }
                }
            });
        }

        let p = self.clone();
        let out_shape = vec![n, c, od, oh, ow];
        Ok(Tensor::from_op(out_shape, data, &[self], move |gout| {
            let mut gin = vec![T::zero(); n * c * in_spatial];
            let one = T::one();
            exec::for_each_chunk_mut(&mut gin, in_spatial, |slice_idx, chunk| {
                let g = &gout[slice_idx * out_spatial..][..out_spatial];
                for oz in 0..od {
                    let (z0, z1, wz) = tz[oz];
                    for oy in 0..oh {
                        let (y0, y1, wy) = ty[oy];
                        for ox in 0..ow {
                            let (x0, x1, wx) = tx[ox];
                            let gv = g[(oz * oh + oy) * ow + ox];
                            for (zi, zw) in [(z0, one - wz), (z1, wz)] {
                                for (yi, yw) in [(y0, one - wy), (y1, wy)] {
                                    let base = (zi * h + yi) * w;
                                    chunk[base + x0] += gv * zw * yw * (one - wx);
                                    chunk[base + x1] += gv * zw * yw * wx;
                                }
                            }
                        }
                    }
                }
            });
            p.accumulate_grad(&gin);
        }))
    }
}
