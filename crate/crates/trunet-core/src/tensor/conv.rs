//! Direct 3-D convolution (cross-correlation) with stride and zero padding.

use super::{Element, Tensor};
use crate::error::{config_err, Result};
use crate::exec;

#[derive(Clone, Copy)]
struct ConvDims {
    n: usize,
    cin: usize,
    d: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

pub(crate) fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output positions `o` with `0 <= o*stride + k_off < in_extent`,
/// as an inclusive range clamped to `0..out_extent`.
fn valid_range(in_extent: usize, k_off: isize, stride: usize, out_extent: usize) -> Option<(usize, usize)> {
    let s = stride as isize;
    let lo = if k_off < 0 {
        (-k_off + s - 1) / s
    } else {
        0
    };
    let max_in = in_extent as isize - 1 - k_off;
    if max_in < 0 {
        return None;
    }
    let hi = (max_in / s).min(out_extent as isize - 1);
    if lo > hi {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// `out_row[o] += w * in_row[o*stride + k_off]` over the valid range.
#[inline]
fn axpy_rows<T: Element>(
    out_row: &mut [T],
    in_row: &[T],
    weight: T,
    k_off: isize,
    stride: usize,
    lo: usize,
    hi: usize,
) {
    if stride == 1 {
        let src = (lo as isize + k_off) as usize;
        let len = hi - lo + 1;
        for (o, &i) in out_row[lo..lo + len].iter_mut().zip(&in_row[src..src + len]) {
            *o += weight * i;
        }
    } else {
        for o in lo..=hi {
            let i = (o * stride) as isize + k_off;
            out_row[o] += weight * in_row[i as usize];
        }
    }
}

/// Dot of `g_row[o]` with `in_row[o*stride + k_off]` over the valid range.
#[inline]
fn dot_rows<T: Element>(
    g_row: &[T],
    in_row: &[T],
    k_off: isize,
    stride: usize,
    lo: usize,
    hi: usize,
) -> T {
    let mut acc = T::zero();
    if stride == 1 {
        let src = (lo as isize + k_off) as usize;
        let len = hi - lo + 1;
        for (&g, &i) in g_row[lo..lo + len].iter().zip(&in_row[src..src + len]) {
            acc += g * i;
        }
    } else {
        for o in lo..=hi {
            let i = (o * stride) as isize + k_off;
            acc += g_row[o] * in_row[i as usize];
        }
    }
    acc
}

fn conv_forward<T: Element>(input: &[T], kernel: &[T], bias: Option<&[T]>, dm: ConvDims) -> Vec<T> {
    let out_spatial = dm.od * dm.oh * dm.ow;
    let mut out = vec![T::zero(); dm.n * dm.cout * out_spatial];
    exec::for_each_chunk_mut(&mut out, out_spatial, |chunk_idx, chunk| {
        let n = chunk_idx / dm.cout;
        let co = chunk_idx % dm.cout;
        if let Some(b) = bias {
            let bv = b[co];
            for v in chunk.iter_mut() {
                *v = bv;
            }
        }
        for ci in 0..dm.cin {
            let in_ch = &input[(n * dm.cin + ci) * dm.d * dm.h * dm.w..][..dm.d * dm.h * dm.w];
            let ker = &kernel[(co * dm.cin + ci) * dm.k * dm.k * dm.k..][..dm.k * dm.k * dm.k];
            for kz in 0..dm.k {
                let z_off = kz as isize - dm.pad as isize;
                let Some((oz_lo, oz_hi)) = valid_range(dm.d, z_off, dm.stride, dm.od) else {
                    continue;
                };
                for ky in 0..dm.k {
                    let y_off = ky as isize - dm.pad as isize;
                    let Some((oy_lo, oy_hi)) = valid_range(dm.h, y_off, dm.stride, dm.oh) else {
                        continue;
                    };
                    for kx in 0..dm.k {
                        let x_off = kx as isize - dm.pad as isize;
                        let Some((ox_lo, ox_hi)) = valid_range(dm.w, x_off, dm.stride, dm.ow)
                        else {
                            continue;
                        };
                        for oz in oz_lo..=oz_hi {
                            let iz = ((oz * dm.stride) as isize + z_off) as usize;
                            for oy in oy_lo..=oy_hi {
                                let iy = ((oy * dm.stride) as isize + y_off) as usize;
                                let weight = ker[(kz * dm.k + ky) * dm.k + kx];
                                let in_row = &in_ch[(iz * dm.h + iy) * dm.w..][..dm.w];
                                let out_row = &mut chunk[(oz * dm.oh + oy) * dm.ow..][..dm.ow];
                                axpy_rows(out_row, in_row, weight, x_off, dm.stride, ox_lo, ox_hi);
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_grad_input<T: Element>(gout: &[T], kernel: &[T], dm: ConvDims) -> Vec<T> {
    let in_spatial = dm.d * dm.h * dm.w;
    let mut gin = vec![T::zero(); dm.n * dm.cin * in_spatial];
    exec::for_each_chunk_mut(&mut gin, in_spatial, |chunk_idx, chunk| {
        let n = chunk_idx / dm.cin;
        let ci = chunk_idx % dm.cin;
        for co in 0..dm.cout {
            let g_ch = &gout[(n * dm.cout + co) * dm.od * dm.oh * dm.ow..][..dm.od * dm.oh * dm.ow];
            let ker = &kernel[(co * dm.cin + ci) * dm.k * dm.k * dm.k..][..dm.k * dm.k * dm.k];
            for kz in 0..dm.k {
                let z_off = kz as isize - dm.pad as isize;
                let Some((oz_lo, oz_hi)) = valid_range(dm.d, z_off, dm.stride, dm.od) else {
                    continue;
                };
                for ky in 0..dm.k {
                    let y_off = ky as isize - dm.pad as isize;
                    let Some((oy_lo, oy_hi)) = valid_range(dm.h, y_off, dm.stride, dm.oh) else {
                        continue;
                    };
                    for kx in 0..dm.k {
                        let x_off = kx as isize - dm.pad as isize;
                        let Some((ox_lo, ox_hi)) = valid_range(dm.w, x_off, dm.stride, dm.ow)
                        else {
                            continue;
                        };
                        let weight = ker[(kz * dm.k + ky) * dm.k + kx];
                        for oz in oz_lo..=oz_hi {
                            let iz = ((oz * dm.stride) as isize + z_off) as usize;
                            for oy in oy_lo..=oy_hi {
                                let iy = ((oy * dm.stride) as isize + y_off) as usize;
                                let g_row = &g_ch[(oz * dm.oh + oy) * dm.ow..][..dm.ow];
                                let in_row = &mut chunk[(iz * dm.h + iy) * dm.w..][..dm.w];
                                // Transposed forward: scatter g into input rows.
                                if dm.stride == 1 {
                                    let src = (ox_lo as isize + x_off) as usize;
                                    let len = ox_hi - ox_lo + 1;
                                    for (i, &g) in
                                        in_row[src..src + len].iter_mut().zip(&g_row[ox_lo..ox_lo + len])
                                    {
                                        *i += weight * g;
                                    }
                                } else {
                                    for ox in ox_lo..=ox_hi {
                                        let ix = ((ox * dm.stride) as isize + x_off) as usize;
                                        in_row[ix] += weight * g_row[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gin
}

fn conv_grad_kernel<T: Element>(input: &[T], gout: &[T], dm: ConvDims) -> Vec<T> {
    let ker_block = dm.cin * dm.k * dm.k * dm.k;
    let mut gw = vec![T::zero(); dm.cout * ker_block];
    exec::for_each_chunk_mut(&mut gw, ker_block, |co, chunk| {
        for n in 0..dm.n {
            let g_ch = &gout[(n * dm.cout + co) * dm.od * dm.oh * dm.ow..][..dm.od * dm.oh * dm.ow];
            for ci in 0..dm.cin {
                let in_ch = &input[(n * dm.cin + ci) * dm.d * dm.h * dm.w..][..dm.d * dm.h * dm.w];
                for kz in 0..dm.k {
                    let z_off = kz as isize - dm.pad as isize;
                    let Some((oz_lo, oz_hi)) = valid_range(dm.d, z_off, dm.stride, dm.od) else {
                        continue;
                    };
                    for ky in 0..dm.k {
                        let y_off = ky as isize - dm.pad as isize;
                        let Some((oy_lo, oy_hi)) = valid_range(dm.h, y_off, dm.stride, dm.oh)
                        else {
                            continue;
                        };
                        for kx in 0..dm.k {
                            let x_off = kx as isize - dm.pad as isize;
                            let Some((ox_lo, ox_hi)) =
                                valid_range(dm.w, x_off, dm.stride, dm.ow)
                            else {
                                continue;
                            };
                            let mut acc = T::zero();
                            for oz in oz_lo..=oz_hi {
                                let iz = ((oz * dm.stride) as isize + z_off) as usize;
                                for oy in oy_lo..=oy_hi {
                                    let iy = ((oy * dm.stride) as isize + y_off) as usize;
                                    let g_row = &g_ch[(oz * dm.oh + oy) * dm.ow..][..dm.ow];
                                    let in_row = &in_ch[(iz * dm.h + iy) * dm.w..][..dm.w];
                                    acc += dot_rows(g_row, in_row, x_off, dm.stride, ox_lo, ox_hi);
                                }
                            }
                            chunk[(ci * dm.k + kz) * dm.k * dm.k + ky * dm.k + kx] += acc;
                        }
                    }
                }
            }
        }
    });
    gw
}

impl<T: Element> Tensor<T> {
    /// 3-D cross-correlation of `[N, Cin, D, H, W]` with a cubic kernel
    /// `[Cout, Cin, k, k, k]`, optional per-channel bias, stride and zero
    /// padding. Differentiable in the input, kernel, and bias.
    pub fn conv3d(
        &self,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let si = self.shape();
        let sk = kernel.shape();
        if si.len() != 5 || sk.len() != 5 {
            return Err(config_err!(
                "conv3d expects input [N,C,D,H,W] and kernel [Co,Ci,k,k,k], got {:?} and {:?}",
                si,
                sk
            ));
        }
        if sk[2] != sk[3] || sk[2] != sk[4] {
            return Err(config_err!("conv3d kernel must be cubic, got {:?}", sk));
        }
        let k = sk[2];
        if k % 2 == 0 {
            return Err(config_err!("conv3d kernel extent must be odd, got {}", k));
        }
        if stride == 0 {
            return Err(config_err!("conv3d stride must be positive"));
        }
        if si[1] != sk[1] {
            return Err(config_err!(
                "conv3d channel mismatch: input has {} channels, kernel expects {}",
                si[1],
                sk[1]
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [sk[0]] {
                return Err(config_err!(
                    "conv3d bias shape {:?} does not match {} output channels",
                    b.shape(),
                    sk[0]
                ));
            }
        }
        let od = conv_out_extent(si[2], k, stride, pad);
        let oh = conv_out_extent(si[3], k, stride, pad);
        let ow = conv_out_extent(si[4], k, stride, pad);
        let (Some(od), Some(oh), Some(ow)) = (od, oh, ow) else {
            return Err(config_err!(
                "conv3d output would be empty for input {:?}, k={}, stride={}, pad={}",
                &si[2..],
                k,
                stride,
                pad
            ));
        };
        let dm = ConvDims {
            n: si[0],
            cin: si[1],
            d: si[2],
            h: si[3],
            w: si[4],
            cout: sk[0],
            k,
            stride,
            pad,
            od,
            oh,
            ow,
        };

        let data = {
            let iv = self.data();
            let kv = kernel.data();
            let bv = bias.map(|b| b.to_vec());
            conv_forward(&iv, &kv, bv.as_deref(), dm)
        };
        let out_shape = vec![dm.n, dm.cout, od, oh, ow];

        let px = self.clone();
        let pk = kernel.clone();
        let pb = bias.cloned();
        let mut parents: Vec<&Tensor<T>> = vec![self, kernel];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(Tensor::from_op(out_shape, data, &parents, move |gout| {
            if px.requires_grad() {
                let kv = pk.data();
                let gin = conv_grad_input(gout, &kv, dm);
                drop(kv);
                px.accumulate_grad(&gin);
            }
            if pk.requires_grad() {
                let iv = px.data();
                let gw = conv_grad_kernel(&iv, gout, dm);
                drop(iv);
                pk.accumulate_grad(&gw);
            }
            if let Some(b) = &pb {
                if b.requires_grad() {
                    let spatial = dm.od * dm.oh * dm.ow;
                    let gb: Vec<T> = exec::map_range(dm.cout, |co| {
                        let mut acc = T::zero();
                        for n in 0..dm.n {
                            let s = (n * dm.cout + co) * spatial;
                            acc += exec::chunked_sum(&gout[s..s + spatial]);
                        }
                        acc
                    });
                    b.accumulate_grad(&gb);
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive direct-summation reference, kept separate from the kernel path.
    pub(crate) fn conv3d_oracle(
        input: &[f64],
        ishape: &[usize],
        kernel: &[f64],
        kshape: &[usize],
        bias: Option<&[f64]>,
        stride: usize,
        pad: usize,
    ) -> (Vec<f64>, Vec<usize>) {
        let (n, cin, d, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3], ishape[4]);
        let (cout, k) = (kshape[0], kshape[2]);
        let od = (d + 2 * pad - k) / stride + 1;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * cout * od * oh * ow];
        for bn in 0..n {
            for co in 0..cout {
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias.map_or(0.0, |b| b[co]);
                            for ci in 0..cin {
                                for kz in 0..k {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iz = (oz * stride + kz) as isize - pad as isize;
                                            let iy = (oy * stride + ky) as isize - pad as isize;
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz >= d as isize
                                                || iy >= h as isize
                                                || ix >= w as isize
                                            {
                                                continue;
                                            }
                                            let iv = input[(((bn * cin + ci) * d
                                                + iz as usize)
                                                * h
                                                + iy as usize)
                                                * w
                                                + ix as usize];
                                            let kv = kernel[(((co * cin + ci) * k + kz) * k
                                                + ky)
                                                * k
                                                + kx];
                                            acc += iv * kv;
                                        }
                                    }
                                }
                            }
                            out[(((bn * cout + co) * od + oz) * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
        }
        (out, vec![n, cout, od, oh, ow])
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2, 2], (1..=8).map(|v| v as f32).collect());
        let k = Tensor::from_vec(&[1, 1, 1, 1, 1], vec![1.0]);
        let y = x.conv3d(&k, None, 1, 0).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn all_ones_kernel_counts_window() {
        // Constant-1 input, all-ones 3^3 kernel, pad 1: the center voxel sees
        // the full 27-point window. Checked against the direct-summation oracle.
        let x = Tensor::<f32>::full(&[1, 1, 5, 5, 5], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
        let y = x.conv3d(&k, None, 1, 1).unwrap();
        let center = ((2 * 5) + 2) * 5 + 2;
        assert_eq!(y.data()[center], 27.0);

        let (oracle, _) = conv3d_oracle(
            &vec![1.0; 125],
            &[1, 1, 5, 5, 5],
            &vec![1.0; 27],
            &[1, 1, 3, 3, 3],
            None,
            1,
            1,
        );
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((f64::from(*a) - b).abs() < 1e-6);
        }
    }

    #[test]
    fn strided_shape_arithmetic() {
        let x = Tensor::<f32>::zeros(&[1, 1, 16, 16, 16]);
        let k = Tensor::zeros(&[2, 1, 3, 3, 3]);
        let y = x.conv3d(&k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 8, 8]);
    }

    #[test]
    fn random_forward_matches_oracle() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1), (3, 2)] {
            let x = Tensor::<f64>::randn(&[2, 3, 6, 5, 7], 1.0, &mut rng);
            let k = Tensor::<f64>::randn(&[4, 3, 3, 3, 3], 0.5, &mut rng);
            let b = Tensor::<f64>::randn(&[4], 0.1, &mut rng);
            let y = x.conv3d(&k, Some(&b), stride, pad).unwrap();
            let (oracle, oshape) = conv3d_oracle(
                &x.to_vec(),
                x.shape(),
                &k.to_vec(),
                k.shape(),
                Some(&b.to_vec()),
                stride,
                pad,
            );
            assert_eq!(y.shape(), &oshape[..]);
            for (a, o) in y.data().iter().zip(&oracle) {
                assert!((a - o).abs() < 1e-10, "stride={} pad={}", stride, pad);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3, 3]);
        assert!(matches!(
            x.conv3d(&k, None, 1, 1),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn empty_output_is_config_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 3, 3]);
        assert!(x.conv3d(&k, None, 1, 0).is_err());
    }
}
