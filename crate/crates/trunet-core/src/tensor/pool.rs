//! 3-D max pooling.

use super::{Element, Tensor};
use crate::error::{config_err, Result};
use crate::exec;

use super::conv::conv_out_extent;

impl<T: Element> Tensor<T> {
    /// Max pooling over cubic windows of `[N, C, D, H, W]`. Padded positions
    /// never win the max. Backward routes the gradient to each window's
    /// argmax (first occurrence on ties).
    pub fn maxpool3d(&self, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 5 {
            return Err(config_err!("maxpool3d expects [N,C,D,H,W], got {:?}", s));
        }
        if k == 0 || stride == 0 || pad >= k {
            return Err(config_err!(
                "maxpool3d needs k > 0, stride > 0, pad < k (got k={}, stride={}, pad={})",
                k,
                stride,
                pad
            ));
        }
        let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let (od, oh, ow) = match (
            conv_out_extent(d, k, stride, pad),
            conv_out_extent(h, k, stride, pad),
            conv_out_extent(w, k, stride, pad),
        ) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(config_err!("maxpool3d output would be empty")),
        };
        let in_spatial = d * h * w;
        let out_spatial = od * oh * ow;

        let mut data = vec![T::zero(); n * c * out_spatial];
        let mut argmax = vec![0u32; n * c * out_spatial];
        {
            let guard = self.data();
            let iv: &[T] = &guard;
            // One task per (n, c) slice; records the in-slice argmax.
            let mut paired: Vec<(T, u32)> = vec![(T::zero(), 0); n * c * out_spatial];
            exec::for_each_chunk_mut(&mut paired, out_spatial, |slice_idx, chunk| {
                let in_ch = &iv[slice_idx * in_spatial..][..in_spatial];
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = T::neg_infinity();
                            let mut best_idx = 0u32;
                            for kz in 0..k {
                                let iz = (oz * stride + kz) as isize - pad as isize;
                                if iz < 0 || iz >= d as isize {
                                    continue;
                                }
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let idx =
                                            (iz as usize * h + iy as usize) * w + ix as usize;
                                        let v = in_ch[idx];
                                        if v > best {
                                            best = v;
                                            best_idx = idx as u32;
                                        }
                                    }
                                }
                            }
                            chunk[(oz * oh + oy) * ow + ox] = (best, best_idx);
                        }
                    }
                }
            });
            for (i, (v, idx)) in paired.into_iter().enumerate() {
                data[i] = v;
                argmax[i] = idx;
            }
        }

        let p = self.clone();
        let out_shape = vec![n, c, od, oh, ow];
        Ok(Tensor::from_op(out_shape, data, &[self], move |gout| {
            let mut gin = vec![T::zero(); n * c * in_spatial];
            exec::for_each_chunk_mut(&mut gin, in_spatial, |slice_idx, chunk| {
                let base = slice_idx * out_spatial;
                for o in 0..out_spatial {
                    chunk[argmax[base + o] as usize] += gout[base + o];
                }
            });
            p.accumulate_grad(&gin);
        }))
    }
}
