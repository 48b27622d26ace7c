//! Elementwise, linear-algebra, reduction, and loss operations.
//!
//! Binary elementwise ops broadcast NumPy-style: shapes are right-aligned and
//! size-1 dimensions stretch. The backward pass sums gradients over stretched
//! dimensions.

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Broadcasting machinery
// ---------------------------------------------------------------------------

/// Right-aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::Dimension(format!(
                "cannot broadcast shapes {:?} and {:?}",
                a, b
            )));
        };
    }
    Ok(out)
}

/// Row-major strides, with stride 0 on dimensions being stretched to match
/// `out_shape`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visit every output position of a broadcast op, yielding the flat offsets
/// into both inputs. Iteration order is row-major and deterministic.
fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for out in 0..total {
        f(out, oa, ob);
        // odometer increment
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

fn binary_broadcast<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    forward: impl Fn(T, T) -> T,
    // (grad_out, a_val, b_val) -> (grad_a, grad_b)
    backward: impl Fn(T, T, T) -> (T, T) + 'static,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let total: usize = out_shape.iter().product();

    let mut data = vec![T::zero(); total];
    {
        let da = a.data();
        let db = b.data();
        if a.shape() == b.shape() {
            for i in 0..total {
                data[i] = forward(da[i], db[i]);
            }
        } else {
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                data[o] = forward(da[ia], db[ib]);
            });
        }
    }

    let out_shape_bw = out_shape.clone();
    Ok(Tensor::node(
        out_shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |grad, _out, parents| {
            let a = &parents[0];
            let b = &parents[1];
            let da = a.data();
            let db = b.data();
            let mut ga = vec![T::zero(); da.len()];
            let mut gb = vec![T::zero(); db.len()];
            for_each_broadcast(&out_shape_bw, &sa, &sb, |o, ia, ib| {
                let (va, vb) = backward(grad[o], da[ia], db[ib]);
                ga[ia] += va;
                gb[ib] += vb;
            });
            drop(da);
            drop(db);
            if a.requires_grad() {
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                b.accumulate_grad(&gb);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// Binary elementwise
// ---------------------------------------------------------------------------

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast(a, b, |x, y| x + y, |g, _, _| (g, g))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast(a, b, |x, y| x - y, |g, _, _| (g, -g))
}

/// Elementwise (Hadamard) product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast(a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
}

// ---------------------------------------------------------------------------
// Unary elementwise
// ---------------------------------------------------------------------------

fn unary<T: Scalar>(
    a: &Tensor<T>,
    forward: impl Fn(T) -> T,
    // (grad_out, in_val, out_val) -> grad_in
    backward: impl Fn(T, T, T) -> T + 'static,
) -> Tensor<T> {
    let data: Vec<T> = a.data().iter().map(|&x| forward(x)).collect();
    Tensor::node(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |grad, out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let input = p.data();
            let g: Vec<T> = grad
                .iter()
                .zip(input.iter())
                .zip(out.iter())
                .map(|((&g, &x), &y)| backward(g, x, y))
                .collect();
            drop(input);
            p.accumulate_grad(&g);
        }),
    )
}

pub fn neg<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(a, |x| -x, |g, _, _| -g)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, c: f64) -> Tensor<T> {
    let c = T::from_f64(c);
    unary(a, move |x| x * c, move |g, _, _| g * c)
}

pub fn add_scalar<T: Scalar>(a: &Tensor<T>, c: f64) -> Tensor<T> {
    let c = T::from_f64(c);
    unary(a, move |x| x + c, |g, _, _| g)
}

pub fn relu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(
        a,
        |x| if x > T::zero() { x } else { T::zero() },
        |g, x, _| if x > T::zero() { g } else { T::zero() },
    )
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(
        a,
        |x| T::one() / (T::one() + (-x).exp()),
        |g, _, y| g * y * (T::one() - y),
    )
}

pub fn exp<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(a, |x| x.exp(), |g, _, y| g * y)
}

pub fn ln<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    unary(a, |x| x.ln(), |g, x, _| g / x)
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Softmax along `axis`. Outputs are strictly positive and sum to 1 along the
/// reduction axis.
pub fn softmax<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = a.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "softmax axis {} out of range for shape {:?}",
            axis, shape
        )));
    }
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();

    let mut data = a.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * axis_len + k) * inner + i;
            let mut m = data[at(0)];
            for k in 1..axis_len {
                m = m.max(data[at(k)]);
            }
            let mut sum = T::zero();
            for k in 0..axis_len {
                let e = (data[at(k)] - m).exp();
                data[at(k)] = e;
                sum += e;
            }
            for k in 0..axis_len {
                data[at(k)] /= sum;
            }
        }
    }

    Ok(Tensor::node(
        shape,
        data,
        vec![a.clone()],
        Box::new(move |grad, out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            // dx = y * (g - sum(g * y)) per slice
            let mut gx = vec![T::zero(); out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * axis_len + k) * inner + i;
                    let mut dot = T::zero();
                    for k in 0..axis_len {
                        dot += grad[at(k)] * out[at(k)];
                    }
                    for k in 0..axis_len {
                        gx[at(k)] = out[at(k)] * (grad[at(k)] - dot);
                    }
                }
            }
            p.accumulate_grad(&gx);
        }),
    ))
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// `a[M,K] @ b[K,N] -> [M,N]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
        return Err(Error::Dimension(format!(
            "matmul: incompatible shapes {:?} x {:?}",
            ash, bsh
        )));
    }
    let (m, k, n) = (ash[0], ash[1], bsh[1]);
    let mut data = vec![T::zero(); m * n];
    {
        let da = a.data();
        let db = b.data();
        for i in 0..m {
            for p in 0..k {
                let aik = da[i * k + p];
                if aik == T::zero() {
                    continue;
                }
                let row = &db[p * n..(p + 1) * n];
                let out = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += aik * row[j];
                }
            }
        }
    }
    Ok(Tensor::node(
        vec![m, n],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |grad, _out, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            if a.requires_grad() {
                // dA[i,p] = sum_j g[i,j] * B[p,j]
                let db = b.data();
                let mut ga = vec![T::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = T::zero();
                        for j in 0..n {
                            s += grad[i * n + j] * db[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                drop(db);
                a.accumulate_grad(&ga);
            }
            if b.requires_grad() {
                // dB[p,j] = sum_i A[i,p] * g[i,j]
                let da = a.data();
                let mut gb = vec![T::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = da[i * k + p];
                        if aip == T::zero() {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * grad[i * n + j];
                        }
                    }
                }
                drop(da);
                b.accumulate_grad(&gb);
            }
        }),
    ))
}

/// Affine map `x[B,I] * w[O,I]^T + bias[O] -> [B,O]`.
pub fn linear<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::Dimension(format!(
            "linear: input {:?} incompatible with weight {:?}",
            xs, ws
        )));
    }
    let (batch, in_dim, out_dim) = (xs[0], xs[1], ws[0]);
    if let Some(b) = bias {
        if b.shape() != [out_dim] {
            return Err(Error::Dimension(format!(
                "linear: bias shape {:?}, expected [{}]",
                b.shape(),
                out_dim
            )));
        }
    }

    let mut data = vec![T::zero(); batch * out_dim];
    {
        let dx = x.data();
        let dw = weight.data();
        for bi in 0..batch {
            for o in 0..out_dim {
                let mut s = T::zero();
                let xrow = &dx[bi * in_dim..(bi + 1) * in_dim];
                let wrow = &dw[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    s += xrow[i] * wrow[i];
                }
                data[bi * out_dim + o] = s;
            }
        }
        if let Some(b) = bias {
            let dbias = b.data();
            for bi in 0..batch {
                for o in 0..out_dim {
                    data[bi * out_dim + o] += dbias[o];
                }
            }
        }
    }

    let mut parents = vec![x.clone(), weight.clone()];
    let has_bias = bias.is_some();
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::node(
        vec![batch, out_dim],
        data,
        parents,
        Box::new(move |grad, _out, parents| {
            let (x, w) = (&parents[0], &parents[1]);
            if x.requires_grad() {
                let dw = w.data();
                let mut gx = vec![T::zero(); batch * in_dim];
                for bi in 0..batch {
                    for o in 0..out_dim {
                        let g = grad[bi * out_dim + o];
                        if g == T::zero() {
                            continue;
                        }
                        let wrow = &dw[o * in_dim..(o + 1) * in_dim];
                        let gxrow = &mut gx[bi * in_dim..(bi + 1) * in_dim];
                        for i in 0..in_dim {
                            gxrow[i] += g * wrow[i];
                        }
                    }
                }
                drop(dw);
                x.accumulate_grad(&gx);
            }
            if w.requires_grad() {
                let dx = x.data();
                let mut gw = vec![T::zero(); out_dim * in_dim];
                for bi in 0..batch {
                    let xrow = &dx[bi * in_dim..(bi + 1) * in_dim];
                    for o in 0..out_dim {
                        let g = grad[bi * out_dim + o];
                        if g == T::zero() {
                            continue;
                        }
                        let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
                        for i in 0..in_dim {
                            gwrow[i] += g * xrow[i];
                        }
                    }
                }
                drop(dx);
                w.accumulate_grad(&gw);
            }
            if has_bias && parents[2].requires_grad() {
                let mut gb = vec![T::zero(); out_dim];
                for bi in 0..batch {
                    for o in 0..out_dim {
                        gb[o] += grad[bi * out_dim + o];
                    }
                }
                parents[2].accumulate_grad(&gb);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

/// Sum of all elements, as a `[1]` tensor.
pub fn sum<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let total: T = a.data().iter().copied().sum();
    let n = a.numel();
    Tensor::node(
        vec![1],
        vec![total],
        vec![a.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if p.requires_grad() {
                p.accumulate_grad(&vec![grad[0]; n]);
            }
        }),
    )
}

/// Mean of all elements, as a `[1]` tensor.
pub fn mean<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = a.numel();
    scale(&sum(a), 1.0 / n as f64)
}

/// Mean over the given axes (removed from the output shape).
pub fn mean_axes<T: Scalar>(a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let shape = a.shape().to_vec();
    for &ax in axes {
        if ax >= shape.len() {
            return Err(Error::Dimension(format!(
                "mean_axes: axis {} out of range for shape {:?}",
                ax, shape
            )));
        }
    }
    let reduce: Vec<bool> = (0..shape.len()).map(|d| axes.contains(&d)).collect();
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
    let count: usize = shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();

    // Map each input flat index to its output flat index.
    let rank = shape.len();
    let mut out_strides = vec![0usize; rank];
    {
        let mut acc = 1usize;
        for d in (0..rank).rev() {
            if !reduce[d] {
                out_strides[d] = acc;
                acc *= shape[d];
            }
        }
    }

    let out_numel: usize = out_shape.iter().product();
    let mut data = vec![T::zero(); out_numel];
    let inv = T::from_f64(1.0 / count as f64);
    {
        let da = a.data();
        let mut idx = vec![0usize; rank];
        let mut out_off = 0usize;
        for i in 0..da.len() {
            data[out_off] += da[i];
            for d in (0..rank).rev() {
                idx[d] += 1;
                out_off += out_strides[d];
                if idx[d] < shape[d] {
                    break;
                }
                out_off -= out_strides[d] * shape[d];
                idx[d] = 0;
            }
        }
        for v in data.iter_mut() {
            *v *= inv;
        }
    }

    let in_numel = a.numel();
    Ok(Tensor::node(
        out_shape,
        data,
        vec![a.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let mut gx = vec![T::zero(); in_numel];
            let mut idx = vec![0usize; rank];
            let mut out_off = 0usize;
            for item in gx.iter_mut() {
                *item = grad[out_off] * inv;
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    out_off += out_strides[d];
                    if idx[d] < shape[d] {
                        break;
                    }
                    out_off -= out_strides[d] * shape[d];
                    idx[d] = 0;
                }
            }
            p.accumulate_grad(&gx);
        }),
    ))
}

/// View with a new shape; element count must match.
pub fn reshape<T: Scalar>(a: &Tensor<T>, shape: Vec<usize>) -> Result<Tensor<T>> {
    let numel: usize = shape.iter().product();
    if numel != a.numel() || shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "reshape: cannot view {:?} as {:?}",
            a.shape(),
            shape
        )));
    }
    Ok(Tensor::node(
        shape,
        a.to_vec(),
        vec![a.clone()],
        Box::new(|grad, _out, parents| {
            let p = &parents[0];
            if p.requires_grad() {
                p.accumulate_grad(grad);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: in train mode each element is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`; in eval mode this is the identity.
pub fn dropout<T: Scalar>(
    a: &Tensor<T>,
    p: f64,
    train: bool,
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {} not in [0,1)", p)));
    }
    if !train || p == 0.0 {
        return Ok(a.clone());
    }
    let keep_scale = T::from_f64(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..a.numel())
        .map(|_| {
            if rng.gen::<f64>() < p {
                T::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let data: Vec<T> = a.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok(Tensor::node(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let g: Vec<T> = grad.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
            p.accumulate_grad(&g);
        }),
    ))
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean of `-log softmax(logits)[label]` over the batch.
pub fn cross_entropy_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "cross_entropy: logits must be [B,C], got {:?}",
            shape
        )));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "cross_entropy: {} labels for batch {}",
            labels.len(),
            batch
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "cross_entropy: label {} out of range [0,{})",
            bad, classes
        )));
    }

    // Numerically stable log-softmax; keep the probabilities for backward.
    let mut probs = logits.to_vec();
    let mut loss = T::zero();
    for b in 0..batch {
        let row = &mut probs[b * classes..(b + 1) * classes];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        loss -= row[labels[b]].ln();
    }
    loss /= T::from_f64(batch as f64);

    let labels = labels.to_vec();
    Ok(Tensor::node(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |grad, _out, parents| {
            let p = &parents[0];
            if !p.requires_grad() {
                return;
            }
            let inv_b = T::from_f64(1.0 / batch as f64);
            let mut g = vec![T::zero(); batch * classes];
            for b in 0..batch {
                for c in 0..classes {
                    let indicator = if c == labels[b] { T::one() } else { T::zero() };
                    g[b * classes + c] = grad[0] * (probs[b * classes + c] - indicator) * inv_b;
                }
            }
            p.accumulate_grad(&g);
        }),
    ))
}

/// Mean squared error over all elements; shapes must match exactly.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "mse: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.numel();
    let inv_n = T::from_f64(1.0 / n as f64);
    let loss: T = {
        let da = a.data();
        let db = b.data();
        let mut s = T::zero();
        for i in 0..n {
            let d = da[i] - db[i];
            s += d * d;
        }
        s * inv_n
    };
    Ok(Tensor::node(
        vec![1],
        vec![loss],
        vec![a.clone(), b.clone()],
        Box::new(move |grad, _out, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            let two = T::from_f64(2.0);
            let da = a.data();
            let db = b.data();
            let g: Vec<T> = (0..n)
                .map(|i| grad[0] * two * (da[i] - db[i]) * inv_n)
                .collect();
            drop(da);
            drop(db);
            if a.requires_grad() {
                a.accumulate_grad(&g);
            }
            if b.requires_grad() {
                let gn: Vec<T> = g.iter().map(|&v| -v).collect();
                b.accumulate_grad(&gn);
            }
        }),
    ))
}
