//! Spatial pooling and resampling over `[B, C, H, W]` tensors.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn check_4d<T: Scalar>(x: &Tensor<T>, op: &str) -> Result<(usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("{op}: expected [B,C,H,W], got {:?}", s)));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// Pooling flavors exposed by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    AdaptiveAvg,
    GlobalAvg,
    GlobalMax,
}

/// Dispatch wrapper; `out_hw` only applies to [`PoolKind::AdaptiveAvg`].
pub fn pooling<T: Scalar>(x: &Tensor<T>, kind: PoolKind, out_hw: (usize, usize)) -> Result<Tensor<T>> {
    match kind {
        PoolKind::AdaptiveAvg => adaptive_avg_pool2d(x, out_hw),
        PoolKind::GlobalAvg => adaptive_avg_pool2d(x, (1, 1)),
        PoolKind::GlobalMax => global_max_pool2d(x),
    }
}

/// Adaptive average pooling to `(out_h, out_w)`. Each output cell averages a
/// near-equal bin `[floor(o*I/O), ceil((o+1)*I/O))` of the input.
pub fn adaptive_avg_pool2d<T: Scalar>(x: &Tensor<T>, out_hw: (usize, usize)) -> Result<Tensor<T>> {
    let (batch, ch, h, w) = check_4d(x, "adaptive_avg_pool2d")?;
    let (oh, ow) = out_hw;
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(Error::Dimension(format!(
            "adaptive_avg_pool2d: output {:?} invalid for input {}x{}",
            out_hw, h, w
        )));
    }
    let bin = |o: usize, out_len: usize, in_len: usize| -> (usize, usize) {
        let lo = o * in_len / out_len;
        let hi = ((o + 1) * in_len).div_ceil(out_len);
        (lo, hi)
    };

    let mut out = vec![T::zero(); batch * ch * oh * ow];
    {
        let d = x.data();
        for bc in 0..batch * ch {
            let plane = &d[bc * h * w..][..h * w];
            for o_h in 0..oh {
                let (h_lo, h_hi) = bin(o_h, oh, h);
                for o_w in 0..ow {
                    let (w_lo, w_hi) = bin(o_w, ow, w);
                    let mut s = T::zero();
                    for ih in h_lo..h_hi {
                        for iw in w_lo..w_hi {
                            s += plane[ih * w + iw];
                        }
                    }
                    let count = T::from_f64(((h_hi - h_lo) * (w_hi - w_lo)) as f64);
                    out[(bc * oh + o_h) * ow + o_w] = s / count;
                }
            }
        }
    }

    Ok(Tensor::node(
        vec![batch, ch, oh, ow],
        out,
        vec![x.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let mut gx = vec![T::zero(); batch * ch * h * w];
            for bc in 0..batch * ch {
                let gplane = &mut gx[bc * h * w..][..h * w];
                for o_h in 0..oh {
                    let (h_lo, h_hi) = bin(o_h, oh, h);
                    for o_w in 0..ow {
                        let (w_lo, w_hi) = bin(o_w, ow, w);
                        let count = T::from_f64(((h_hi - h_lo) * (w_hi - w_lo)) as f64);
                        let g = grad[(bc * oh + o_h) * ow + o_w] / count;
                        for ih in h_lo..h_hi {
                            for iw in w_lo..w_hi {
                                gplane[ih * w + iw] += g;
                            }
                        }
                    }
                }
            }
            p.accumulate_grad(&gx);
        }),
    ))
}

/// Global max pooling to `[B, C, 1, 1]`. The backward pass routes the entire
/// gradient to the argmax element; ties break to the first (row-major) index.
pub fn global_max_pool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, ch, h, w) = check_4d(x, "global_max_pool2d")?;
    let mut out = vec![T::zero(); batch * ch];
    let mut argmax = vec![0usize; batch * ch];
    {
        let d = x.data();
        for bc in 0..batch * ch {
            let plane = &d[bc * h * w..][..h * w];
            let mut best = plane[0];
            let mut best_i = 0usize;
            for (i, &v) in plane.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            out[bc] = best;
            argmax[bc] = best_i;
        }
    }
    Ok(Tensor::node(
        vec![batch, ch, 1, 1],
        out,
        vec![x.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let mut gx = vec![T::zero(); batch * ch * h * w];
            for bc in 0..batch * ch {
                gx[bc * h * w + argmax[bc]] += grad[bc];
            }
            p.accumulate_grad(&gx);
        }),
    ))
}

/// Non-overlapping 2x2 average pooling with stride 2. Odd trailing rows or
/// columns are dropped (floor semantics).
pub fn avg_pool2d_2x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, ch, h, w) = check_4d(x, "avg_pool2d_2x2")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Dimension(format!(
            "avg_pool2d_2x2: input {}x{} too small",
            h, w
        )));
    }
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); batch * ch * oh * ow];
    {
        let d = x.data();
        for bc in 0..batch * ch {
            let plane = &d[bc * h * w..][..h * w];
            for o_h in 0..oh {
                let r0 = &plane[(2 * o_h) * w..][..w];
                let r1 = &plane[(2 * o_h + 1) * w..][..w];
                let orow = &mut out[(bc * oh + o_h) * ow..][..ow];
                for o_w in 0..ow {
                    orow[o_w] =
                        (r0[2 * o_w] + r0[2 * o_w + 1] + r1[2 * o_w] + r1[2 * o_w + 1]) * quarter;
                }
            }
        }
    }
    Ok(Tensor::node(
        vec![batch, ch, oh, ow],
        out,
        vec![x.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let mut gx = vec![T::zero(); batch * ch * h * w];
            for bc in 0..batch * ch {
                let gplane = &mut gx[bc * h * w..][..h * w];
                for o_h in 0..oh {
                    for o_w in 0..ow {
                        let g = grad[(bc * oh + o_h) * ow + o_w] * quarter;
                        gplane[(2 * o_h) * w + 2 * o_w] += g;
                        gplane[(2 * o_h) * w + 2 * o_w + 1] += g;
                        gplane[(2 * o_h + 1) * w + 2 * o_w] += g;
                        gplane[(2 * o_h + 1) * w + 2 * o_w + 1] += g;
                    }
                }
            }
            p.accumulate_grad(&gx);
        }),
    ))
}

/// Bilinear resize to `(out_h, out_w)` with half-pixel centers (the
/// `align_corners=false` convention). Differentiable: the backward pass
/// scatters with the same interpolation weights.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_hw: (usize, usize)) -> Result<Tensor<T>> {
    let (batch, ch, h, w) = check_4d(x, "resize_bilinear")?;
    let (oh, ow) = out_hw;
    if oh == 0 || ow == 0 {
        return Err(Error::Dimension("resize_bilinear: empty output".into()));
    }

    // Per output coordinate: source position, floor index, and lerp weight.
    let axis = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let hmap = axis(oh, h);
    let wmap = axis(ow, w);

    let mut out = vec![T::zero(); batch * ch * oh * ow];
    {
        let d = x.data();
        for bc in 0..batch * ch {
            let plane = &d[bc * h * w..][..h * w];
            for (o_h, &(h0, h1, fh)) in hmap.iter().enumerate() {
                let (wh1, wh0) = (T::from_f64(fh), T::from_f64(1.0 - fh));
                for (o_w, &(w0, w1, fw)) in wmap.iter().enumerate() {
                    let (ww1, ww0) = (T::from_f64(fw), T::from_f64(1.0 - fw));
                    let v = plane[h0 * w + w0] * wh0 * ww0
                        + plane[h0 * w + w1] * wh0 * ww1
                        + plane[h1 * w + w0] * wh1 * ww0
                        + plane[h1 * w + w1] * wh1 * ww1;
                    out[(bc * oh + o_h) * ow + o_w] = v;
                }
            }
        }
    }

    Ok(Tensor::node(
        vec![batch, ch, oh, ow],
        out,
        vec![x.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let mut gx = vec![T::zero(); batch * ch * h * w];
            for bc in 0..batch * ch {
                let gplane = &mut gx[bc * h * w..][..h * w];
                for (o_h, &(h0, h1, fh)) in hmap.iter().enumerate() {
                    let (wh1, wh0) = (T::from_f64(fh), T::from_f64(1.0 - fh));
                    for (o_w, &(w0, w1, fw)) in wmap.iter().enumerate() {
                        let (ww1, ww0) = (T::from_f64(fw), T::from_f64(1.0 - fw));
                        let g = grad[(bc * oh + o_h) * ow + o_w];
                        gplane[h0 * w + w0] += g * wh0 * ww0;
                        gplane[h0 * w + w1] += g * wh0 * ww1;
                        gplane[h1 * w + w0] += g * wh1 * ww0;
                        gplane[h1 * w + w1] += g * wh1 * ww1;
                    }
                }
            }
            p.accumulate_grad(&gx);
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn adaptive_avg_to_single_cell() {
        let x = Tensor::<f64>::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = adaptive_avg_pool2d(&x, (1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 2.5);
    }

    #[test]
    fn global_max_and_gradient_mask() {
        let x = Tensor::<f64>::param(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = global_max_pool2d(&x).unwrap();
        assert_eq!(y.item(), 4.0);
        ops::sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_max_tie_breaks_to_first() {
        let x = Tensor::<f64>::param(vec![1, 1, 1, 4], vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let y = global_max_pool2d(&x).unwrap();
        ops::sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_of_64_channels_flattens_to_feature_vector() {
        let x = Tensor::<f32>::zeros(vec![3, 64, 5, 4]);
        let y = adaptive_avg_pool2d(&x, (1, 1)).unwrap();
        assert_eq!(y.shape(), &[3, 64, 1, 1]);
        let v = ops::reshape(&y, vec![3, 64]).unwrap();
        assert_eq!(v.shape(), &[3, 64]);
    }

    #[test]
    fn avg_pool_2x2_halves_and_averages() {
        let x = Tensor::<f64>::from_vec(
            vec![1, 1, 2, 4],
            vec![1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0],
        )
        .unwrap();
        let y = avg_pool2d_2x2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.to_vec(), vec![2.0, 6.0]);
    }

    #[test]
    fn avg_pool_2x2_drops_odd_tail() {
        let x = Tensor::<f64>::from_vec(vec![1, 1, 3, 5], (0..15).map(|v| v as f64).collect())
            .unwrap();
        let y = avg_pool2d_2x2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
    }

    #[test]
    fn bilinear_identity_when_same_size() {
        let x = Tensor::<f64>::from_vec(vec![1, 1, 3, 3], (0..9).map(|v| v as f64).collect())
            .unwrap();
        let y = resize_bilinear(&x, (3, 3)).unwrap();
        for (a, b) in x.data().iter().zip(y.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_constant_preserved() {
        let x = Tensor::<f64>::from_vec(vec![1, 2, 2, 2], vec![0.5; 8]).unwrap();
        let y = resize_bilinear(&x, (7, 5)).unwrap();
        for &v in y.data().iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_spatial_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 1, 1]);
        assert!(avg_pool2d_2x2(&x).is_err());
        assert!(adaptive_avg_pool2d(&x, (2, 2)).is_err());
    }
}
