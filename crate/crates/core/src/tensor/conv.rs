//! 2-D convolution and transposed convolution with full backward passes.
//!
//! Layouts follow the usual convention: inputs are `[B, C, H, W]`, conv
//! weights are `[Cout, Cin, kH, kW]`, transposed-conv weights are
//! `[Cin, Cout, kH, kW]`. Loops are ordered so the innermost accesses are
//! contiguous; bounds are hoisted out of the inner loops.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

/// Valid output range `[lo, hi]` such that `o*stride + k_off - pad` stays in
/// `[0, in_len)`. Returns `None` when empty.
fn valid_range(out_len: usize, in_len: usize, k_off: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    let (s, p, k) = (stride as i64, pad as i64, k_off as i64);
    let lo = ceil_div(p - k, s).max(0);
    let hi = ((in_len as i64 - 1 - k + p).div_euclid(s)).min(out_len as i64 - 1);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel > padded || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv2d_check<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d: input {:?} and weight {:?} must both be rank 4",
            xs, ws
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::Dimension(format!(
            "conv2d: input has {} channels, weight expects {}",
            xs[1], ws[1]
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d: stride must be >= 1".into()));
    }
    let oh = conv_out_dim(xs[2], ws[2], stride, pad).ok_or_else(|| {
        Error::Dimension(format!(
            "conv2d: kernel {}x{} too large for input {}x{} with padding {}",
            ws[2], ws[3], xs[2], xs[3], pad
        ))
    })?;
    let ow = conv_out_dim(xs[3], ws[3], stride, pad).ok_or_else(|| {
        Error::Dimension(format!(
            "conv2d: kernel {}x{} too large for input {}x{} with padding {}",
            ws[2], ws[3], xs[2], xs[3], pad
        ))
    })?;
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(Error::Dimension(format!(
                "conv2d: bias shape {:?}, expected [{}]",
                b.shape(),
                ws[0]
            )));
        }
    }
    Ok(ConvDims {
        batch: xs[0],
        cin: xs[1],
        h: xs[2],
        w: xs[3],
        cout: ws[0],
        kh: ws[2],
        kw: ws[3],
        oh,
        ow,
        stride,
        pad,
    })
}

/// `H' = floor((H + 2*pad - kH)/stride) + 1`, analogously for width.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = conv2d_check(input, weight, bias, stride, pad)?;
    let mut out = vec![T::zero(); d.batch * d.cout * d.oh * d.ow];

    {
        let x = input.data();
        let w = weight.data();
        if let Some(b) = bias {
            let bv = b.data();
            for bi in 0..d.batch {
                for oc in 0..d.cout {
                    let base = (bi * d.cout + oc) * d.oh * d.ow;
                    out[base..base + d.oh * d.ow].fill(bv[oc]);
                }
            }
        }
        for bi in 0..d.batch {
            for oc in 0..d.cout {
                for ic in 0..d.cin {
                    let xc = &x[(bi * d.cin + ic) * d.h * d.w..][..d.h * d.w];
                    for kh in 0..d.kh {
                        let Some((oh_lo, oh_hi)) = valid_range(d.oh, d.h, kh, d.stride, d.pad)
                        else {
                            continue;
                        };
                        for kw in 0..d.kw {
                            let Some((ow_lo, ow_hi)) = valid_range(d.ow, d.w, kw, d.stride, d.pad)
                            else {
                                continue;
                            };
                            let wv = w[((oc * d.cin + ic) * d.kh + kh) * d.kw + kw];
                            if wv == T::zero() {
                                continue;
                            }
                            for oh in oh_lo..=oh_hi {
                                let ih = oh * d.stride + kh - d.pad;
                                let xrow = &xc[ih * d.w..][..d.w];
                                let orow =
                                    &mut out[((bi * d.cout + oc) * d.oh + oh) * d.ow..][..d.ow];
                                if d.stride == 1 {
                                    let off = kw as i64 - d.pad as i64;
                                    for ow in ow_lo..=ow_hi {
                                        orow[ow] += wv * xrow[(ow as i64 + off) as usize];
                                    }
                                } else {
                                    for ow in ow_lo..=ow_hi {
                                        orow[ow] += wv * xrow[ow * d.stride + kw - d.pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut parents = vec![input.clone(), weight.clone()];
    let has_bias = bias.is_some();
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::node(
        vec![d.batch, d.cout, d.oh, d.ow],
        out,
        parents,
        Box::new(move |grad, _out, parents| {
            let (input, weight) = (&parents[0], &parents[1]);

            if input.requires_grad() {
                let w = weight.data();
                let mut gx = vec![T::zero(); d.batch * d.cin * d.h * d.w];
                for bi in 0..d.batch {
                    for oc in 0..d.cout {
                        for ic in 0..d.cin {
                            let gxc = &mut gx[(bi * d.cin + ic) * d.h * d.w..][..d.h * d.w];
                            for kh in 0..d.kh {
                                let Some((oh_lo, oh_hi)) =
                                    valid_range(d.oh, d.h, kh, d.stride, d.pad)
                                else {
                                    continue;
                                };
                                for kw in 0..d.kw {
                                    let Some((ow_lo, ow_hi)) =
                                        valid_range(d.ow, d.w, kw, d.stride, d.pad)
                                    else {
                                        continue;
                                    };
                                    let wv = w[((oc * d.cin + ic) * d.kh + kh) * d.kw + kw];
                                    if wv == T::zero() {
                                        continue;
                                    }
                                    for oh in oh_lo..=oh_hi {
                                        let ih = oh * d.stride + kh - d.pad;
                                        let grow =
                                            &grad[((bi * d.cout + oc) * d.oh + oh) * d.ow..][..d.ow];
                                        let gxrow = &mut gxc[ih * d.w..][..d.w];
                                        for ow in ow_lo..=ow_hi {
                                            gxrow[ow * d.stride + kw - d.pad] += wv * grow[ow];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                input.accumulate_grad(&gx);
            }

            if weight.requires_grad() {
                let x = input.data();
                let mut gw = vec![T::zero(); d.cout * d.cin * d.kh * d.kw];
                for bi in 0..d.batch {
                    for oc in 0..d.cout {
                        for ic in 0..d.cin {
                            let xc = &x[(bi * d.cin + ic) * d.h * d.w..][..d.h * d.w];
                            for kh in 0..d.kh {
                                let Some((oh_lo, oh_hi)) =
                                    valid_range(d.oh, d.h, kh, d.stride, d.pad)
                                else {
                                    continue;
                                };
                                for kw in 0..d.kw {
                                    let Some((ow_lo, ow_hi)) =
                                        valid_range(d.ow, d.w, kw, d.stride, d.pad)
                                    else {
                                        continue;
                                    };
                                    let mut acc = T::zero();
                                    for oh in oh_lo..=oh_hi {
                                        let ih = oh * d.stride + kh - d.pad;
                                        let grow =
                                            &grad[((bi * d.cout + oc) * d.oh + oh) * d.ow..][..d.ow];
                                        let xrow = &xc[ih * d.w..][..d.w];
                                        for ow in ow_lo..=ow_hi {
                                            acc += grow[ow] * xrow[ow * d.stride + kw - d.pad];
                                        }
                                    }
                                    gw[((oc * d.cin + ic) * d.kh + kh) * d.kw + kw] += acc;
                                }
                            }
                        }
                    }
                }
                drop(x);
                weight.accumulate_grad(&gw);
            }

            if has_bias && parents[2].requires_grad() {
                let mut gb = vec![T::zero(); d.cout];
                for bi in 0..d.batch {
                    for oc in 0..d.cout {
                        let base = (bi * d.cout + oc) * d.oh * d.ow;
                        let mut s = T::zero();
                        for &g in &grad[base..base + d.oh * d.ow] {
                            s += g;
                        }
                        gb[oc] += s;
                    }
                }
                parents[2].accumulate_grad(&gb);
            }
        }),
    ))
}

/// Transposed convolution: `H'' = (H-1)*stride - 2*pad + kH`. The forward
/// pass is the adjoint of [`conv2d`] with the same stride and padding.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: input {:?} and weight {:?} must both be rank 4",
            xs, ws
        )));
    }
    if xs[1] != ws[0] {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: input has {} channels, weight expects {}",
            xs[1], ws[0]
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv_transpose2d: stride must be >= 1".into()));
    }
    let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
    let oh_i = (h as i64 - 1) * stride as i64 - 2 * pad as i64 + kh as i64;
    let ow_i = (w as i64 - 1) * stride as i64 - 2 * pad as i64 + kw as i64;
    if oh_i < 1 || ow_i < 1 {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: output {}x{} is empty",
            oh_i, ow_i
        )));
    }
    let (oh, ow) = (oh_i as usize, ow_i as usize);
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: bias shape {:?}, expected [{}]",
                b.shape(),
                cout
            )));
        }
    }

    // Scatter: out[ih*s - p + kh, iw*s - p + kw] += x[ih, iw] * w.
    // The valid input range for each kernel offset mirrors conv2d's.
    let mut out = vec![T::zero(); batch * cout * oh * ow];
    {
        let x = input.data();
        let wd = weight.data();
        if let Some(b) = bias {
            let bv = b.data();
            for bi in 0..batch {
                for oc in 0..cout {
                    let base = (bi * cout + oc) * oh * ow;
                    out[base..base + oh * ow].fill(bv[oc]);
                }
            }
        }
        for bi in 0..batch {
            for ic in 0..cin {
                let xc = &x[(bi * cin + ic) * h * w..][..h * w];
                for oc in 0..cout {
                    for dkh in 0..kh {
                        let Some((ih_lo, ih_hi)) = valid_range(h, oh, dkh, stride, pad) else {
                            continue;
                        };
                        for dkw in 0..kw {
                            let Some((iw_lo, iw_hi)) = valid_range(w, ow, dkw, stride, pad) else {
                                continue;
                            };
                            let wv = wd[((ic * cout + oc) * kh + dkh) * kw + dkw];
                            if wv == T::zero() {
                                continue;
                            }
                            for ih in ih_lo..=ih_hi {
                                let o_h = ih * stride + dkh - pad;
                                let xrow = &xc[ih * w..][..w];
                                let orow = &mut out[((bi * cout + oc) * oh + o_h) * ow..][..ow];
                                for iw in iw_lo..=iw_hi {
                                    orow[iw * stride + dkw - pad] += wv * xrow[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut parents = vec![input.clone(), weight.clone()];
    let has_bias = bias.is_some();
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::node(
        vec![batch, cout, oh, ow],
        out,
        parents,
        Box::new(move |grad, _out, parents| {
            let (input, weight) = (&parents[0], &parents[1]);

            if input.requires_grad() {
                // Gather: gx[ih, iw] = sum w * g[ih*s - p + kh, ...]
                let wd = weight.data();
                let mut gx = vec![T::zero(); batch * cin * h * w];
                for bi in 0..batch {
                    for ic in 0..cin {
                        let gxc = &mut gx[(bi * cin + ic) * h * w..][..h * w];
                        for oc in 0..cout {
                            for dkh in 0..kh {
                                let Some((ih_lo, ih_hi)) = valid_range(h, oh, dkh, stride, pad)
                                else {
                                    continue;
                                };
                                for dkw in 0..kw {
                                    let Some((iw_lo, iw_hi)) =
                                        valid_range(w, ow, dkw, stride, pad)
                                    else {
                                        continue;
                                    };
                                    let wv = wd[((ic * cout + oc) * kh + dkh) * kw + dkw];
                                    if wv == T::zero() {
                                        continue;
                                    }
                                    for ih in ih_lo..=ih_hi {
                                        let o_h = ih * stride + dkh - pad;
                                        let grow =
                                            &grad[((bi * cout + oc) * oh + o_h) * ow..][..ow];
                                        let gxrow = &mut gxc[ih * w..][..w];
                                        for iw in iw_lo..=iw_hi {
                                            gxrow[iw] += wv * grow[iw * stride + dkw - pad];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                drop(wd);
                input.accumulate_grad(&gx);
            }

            if weight.requires_grad() {
                let x = input.data();
                let mut gw = vec![T::zero(); cin * cout * kh * kw];
                for bi in 0..batch {
                    for ic in 0..cin {
                        let xc = &x[(bi * cin + ic) * h * w..][..h * w];
                        for oc in 0..cout {
                            for dkh in 0..kh {
                                let Some((ih_lo, ih_hi)) = valid_range(h, oh, dkh, stride, pad)
                                else {
                                    continue;
                                };
                                for dkw in 0..kw {
                                    let Some((iw_lo, iw_hi)) =
                                        valid_range(w, ow, dkw, stride, pad)
                                    else {
                                        continue;
                                    };
                                    let mut acc = T::zero();
                                    for ih in ih_lo..=ih_hi {
                                        let o_h = ih * stride + dkh - pad;
                                        let grow =
                                            &grad[((bi * cout + oc) * oh + o_h) * ow..][..ow];
                                        let xrow = &xc[ih * w..][..w];
                                        for iw in iw_lo..=iw_hi {
                                            acc += xrow[iw] * grow[iw * stride + dkw - pad];
                                        }
                                    }
                                    gw[((ic * cout + oc) * kh + dkh) * kw + dkw] += acc;
                                }
                            }
                        }
                    }
                }
                drop(x);
                weight.accumulate_grad(&gw);
            }

            if has_bias && parents[2].requires_grad() {
                let mut gb = vec![T::zero(); cout];
                for bi in 0..batch {
                    for oc in 0..cout {
                        let base = (bi * cout + oc) * oh * ow;
                        let mut s = T::zero();
                        for &g in &grad[base..base + oh * ow] {
                            s += g;
                        }
                        gb[oc] += s;
                    }
                }
                parents[2].accumulate_grad(&gb);
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn conv_of_ones_sums_kernel() {
        let x = Tensor::<f64>::from_vec(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::<f64>::from_vec(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![1], vec![0.0]).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn shape_preserving_padding() {
        // 2 in channels, 8 out channels, 3x3 kernel, pad 1, stride 1
        let x = Tensor::<f32>::zeros(vec![16, 2, 12, 10]);
        let w = Tensor::<f32>::zeros(vec![8, 2, 3, 3]);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[16, 8, 12, 10]);
    }

    #[test]
    fn kernel_too_large_errors() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros(vec![1, 1, 5, 5]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
    }

    #[test]
    fn channel_mismatch_errors() {
        let x = Tensor::<f32>::zeros(vec![1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros(vec![1, 2, 3, 3]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
    }

    #[test]
    fn transpose_stamps_kernel_once() {
        let x = Tensor::<f64>::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let w = Tensor::<f64>::from_vec(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let y = conv_transpose2d(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![1.0; 4]);
    }

    #[test]
    fn transpose_output_dims() {
        // (H-1)*s - 2p + k
        let x = Tensor::<f32>::zeros(vec![2, 4, 5, 3]);
        let w = Tensor::<f32>::zeros(vec![4, 2, 6, 6]);
        let y = conv_transpose2d(&x, &w, None, 2, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 10, 6]);
    }

    #[test]
    fn adjoint_identity_small() {
        // <conv(x, w), y> == <x, conv_T(y, w)>
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
            let xv: Vec<f64> = (0..2 * 3 * 5 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wv: Vec<f64> = (0..4 * 3 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(vec![2, 3, 5, 5], xv).unwrap();
            let w = Tensor::from_vec(vec![4, 3, 3, 3], wv).unwrap();
            let cx = conv2d(&x, &w, None, stride, pad).unwrap();
            let yv: Vec<f64> = (0..cx.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = Tensor::from_vec(cx.shape().to_vec(), yv).unwrap();
            // conv_transpose2d consumes the conv weight as [Cin=Cout_conv, Cout=Cin_conv, ...]
            let wt = Tensor::from_vec(vec![4, 3, 3, 3], w.to_vec()).unwrap();
            let ty = conv_transpose2d(&y, &wt, None, stride, pad).unwrap();
            assert_eq!(ty.shape(), x.shape());

            let lhs: f64 = cx.data().iter().zip(y.data().iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data().iter()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-5 * lhs.abs().max(1.0),
                "adjoint identity failed at stride {stride} pad {pad}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn conv_backward_matches_known_case() {
        // y = conv(x, w), loss = sum(y); with 1x1 kernel the gradients are sums.
        let x = Tensor::<f64>::param(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f64>::param(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        let loss = ops::sum(&y);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 4]);
        assert_eq!(w.grad().unwrap(), vec![10.0]);
    }
}
