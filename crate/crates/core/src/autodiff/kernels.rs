//! Eager numeric kernels behind the graph primitives.
//!
//! Images are laid out `[N, C, H, W]`, convolution kernels `[O, C, k, k]`.
//! Convolution is stride 1 with symmetric zero padding and goes through an
//! explicit patch expansion (im2col) followed by a GEMM.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(mismatch("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![S::zero(); m * n];
    S::gemm(
        m,
        k,
        n,
        S::one(),
        a.data(),
        k as isize,
        1,
        b.data(),
        n as isize,
        1,
        S::zero(),
        &mut out,
        n as isize,
        1,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(mismatch("transpose", s, &[0, 0]));
    }
    let (m, n) = (s[0], s[1]);
    let d = a.data();
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Adds `b` along axis 1 of `a` (features of a matrix, channels of an image).
pub fn bias_add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let s = a.shape();
    if s.len() < 2 || b.shape().len() != 1 || b.len() != s[1] {
        return Err(mismatch("bias_add", s, b.shape()));
    }
    let inner: usize = s[2..].iter().product();
    let channels = s[1];
    let mut out = a.data().to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        *v += b.data()[(i / inner) % channels];
    }
    Ok(Tensor::from_parts(s.to_vec(), out))
}

/// Sums every axis except axis 1.
pub fn bias_reduce<S: Scalar>(g: &Tensor<S>) -> Result<Tensor<S>> {
    let s = g.shape();
    if s.len() < 2 {
        return Err(mismatch("bias_reduce", s, &[0, 0]));
    }
    let inner: usize = s[2..].iter().product();
    let channels = s[1];
    let mut out = vec![S::zero(); channels];
    for (i, &v) in g.data().iter().enumerate() {
        out[(i / inner) % channels] += v;
    }
    Ok(Tensor::from_parts(vec![channels], out))
}

pub fn bias_broadcast<S: Scalar>(b: &Tensor<S>, shape: &[usize]) -> Result<Tensor<S>> {
    bias_add(&Tensor::zeros(shape), b)
}

type ConvDims = (usize, usize, usize, usize, usize, usize);

fn conv_dims(x: &[usize], w: &[usize], pad: usize) -> Result<ConvDims> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[1] || w[2] != w[3] {
        return Err(mismatch("conv2d", x, w));
    }
    let (n, c, h, wd) = (x[0], x[1], x[2], x[3]);
    let (o, k) = (w[0], w[2]);
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(mismatch("conv2d", x, w));
    }
    Ok((n, c, h, wd, o, k))
}

/// Expands one `[C, H, W]` sample into `[C*k*k, Ho*Wo]` patch columns.
fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [S]) {
    let ho = h + 2 * pad + 1 - k;
    let wo = w + 2 * pad + 1 - k;
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let ii = oi + ki;
                    let out_row = &mut dst[oi * wo..(oi + 1) * wo];
                    if ii < pad || ii - pad >= h {
                        out_row.fill(S::zero());
                        continue;
                    }
                    let src = &x[(ci * h + ii - pad) * w..(ci * h + ii - pad + 1) * w];
                    for (oj, v) in out_row.iter_mut().enumerate() {
                        let jj = oj + kj;
                        *v = if jj < pad || jj - pad >= w {
                            S::zero()
                        } else {
                            src[jj - pad]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating overlaps.
fn col2im<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize, pad: usize, x: &mut [S]) {
    let ho = h + 2 * pad + 1 - k;
    let wo = w + 2 * pad + 1 - k;
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let ii = oi + ki;
                    if ii < pad || ii - pad >= h {
                        continue;
                    }
                    let dst = &mut x[(ci * h + ii - pad) * w..(ci * h + ii - pad + 1) * w];
                    for oj in 0..wo {
                        let jj = oj + kj;
                        if jj >= pad && jj - pad < w {
                            dst[jj - pad] += src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, pad: usize) -> Result<Tensor<S>> {
    let (n, c, h, wd, o, k) = conv_dims(x.shape(), w.shape(), pad)?;
    let (ho, wo) = (h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
    let (plane, ckk) = (ho * wo, c * k * k);
    let mut cols = vec![S::zero(); ckk * plane];
    let mut out = vec![S::zero(); n * o * plane];
    let sample = c * h * wd;
    for ni in 0..n {
        im2col(&x.data()[ni * sample..(ni + 1) * sample], c, h, wd, k, pad, &mut cols);
        S::gemm(
            o,
            ckk,
            plane,
            S::one(),
            w.data(),
            ckk as isize,
            1,
            &cols,
            plane as isize,
            1,
            S::zero(),
            &mut out[ni * o * plane..(ni + 1) * o * plane],
            plane as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![n, o, ho, wo], out))
}

/// Gradient of `<g, conv2d(x, w)>` with respect to `x`, for `x` of spatial size `in_hw`.
pub fn conv_input_grad<S: Scalar>(
    g: &Tensor<S>,
    w: &Tensor<S>,
    pad: usize,
    in_hw: (usize, usize),
) -> Result<Tensor<S>> {
    let (gs, ws) = (g.shape(), w.shape());
    if gs.len() != 4 || ws.len() != 4 || gs[1] != ws[0] {
        return Err(mismatch("conv_input_grad", gs, ws));
    }
    let (n, o, ho, wo) = (gs[0], gs[1], gs[2], gs[3]);
    let (c, k) = (ws[1], ws[2]);
    let (h, wd) = in_hw;
    if h + 2 * pad + 1 != ho + k || wd + 2 * pad + 1 != wo + k {
        return Err(mismatch("conv_input_grad", gs, ws));
    }
    let (plane, ckk) = (ho * wo, c * k * k);
    let mut dcols = vec![S::zero(); ckk * plane];
    let sample = c * h * wd;
    let mut out = vec![S::zero(); n * sample];
    for ni in 0..n {
        S::gemm(
            ckk,
            o,
            plane,
            S::one(),
            w.data(),
            1,
            ckk as isize,
            &g.data()[ni * o * plane..(ni + 1) * o * plane],
            plane as isize,
            1,
            S::zero(),
            &mut dcols,
            plane as isize,
            1,
        );
        col2im(&dcols, c, h, wd, k, pad, &mut out[ni * sample..(ni + 1) * sample]);
    }
    Ok(Tensor::from_parts(vec![n, c, h, wd], out))
}

/// Gradient of `<g, conv2d(x, w)>` with respect to a `k x k` kernel `w`.
pub fn conv_weight_grad<S: Scalar>(g: &Tensor<S>, x: &Tensor<S>, pad: usize, k: usize) -> Result<Tensor<S>> {
    let (gs, xs) = (g.shape(), x.shape());
    if gs.len() != 4 || xs.len() != 4 || gs[0] != xs[0] {
        return Err(mismatch("conv_weight_grad", gs, xs));
    }
    let (n, o, ho, wo) = (gs[0], gs[1], gs[2], gs[3]);
    let (c, h, wd) = (xs[1], xs[2], xs[3]);
    if h + 2 * pad + 1 != ho + k || wd + 2 * pad + 1 != wo + k {
        return Err(mismatch("conv_weight_grad", gs, xs));
    }
    let (plane, ckk) = (ho * wo, c * k * k);
    let mut cols = vec![S::zero(); ckk * plane];
    let mut out = vec![S::zero(); o * ckk];
    let sample = c * h * wd;
    for ni in 0..n {
        im2col(&x.data()[ni * sample..(ni + 1) * sample], c, h, wd, k, pad, &mut cols);
        S::gemm(
            o,
            plane,
            ckk,
            S::one(),
            &g.data()[ni * o * plane..(ni + 1) * o * plane],
            plane as isize,
            1,
            &cols,
            1,
            plane as isize,
            S::one(),
            &mut out,
            ckk as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![o, c, k, k], out))
}

/// Flat index into `src` of the max of every 2x2 window (first max wins).
fn pool_argmax<S: Scalar>(src: &Tensor<S>) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = src.shape();
    if s.len() != 4 || s[2] < 2 || s[3] < 2 {
        return Err(mismatch("maxpool2", s, &[0, 0, 2, 2]));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h / 2, w / 2);
    let d = src.data();
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * i + di) * w + 2 * j + dj;
                    if d[cand] > d[best] {
                        best = cand;
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok((idx, vec![n, c, ho, wo]))
}

/// Picks `values` at the window maxima of `src` (max-pooling when `values == src`).
pub fn pool_gather<S: Scalar>(values: &Tensor<S>, src: &Tensor<S>) -> Result<Tensor<S>> {
    if values.shape() != src.shape() {
        return Err(mismatch("pool_gather", values.shape(), src.shape()));
    }
    let (idx, shape) = pool_argmax(src)?;
    let d = values.data();
    Ok(Tensor::from_parts(shape, idx.iter().map(|&i| d[i]).collect()))
}

/// Adjoint of [`pool_gather`]: routes pooled values back to the maxima of `src`.
pub fn pool_scatter<S: Scalar>(g: &Tensor<S>, src: &Tensor<S>) -> Result<Tensor<S>> {
    let (idx, shape) = pool_argmax(src)?;
    if g.shape() != shape.as_slice() {
        return Err(mismatch("pool_scatter", g.shape(), &shape));
    }
    let mut out = vec![S::zero(); src.len()];
    for (&i, &v) in idx.iter().zip(g.data()) {
        out[i] += v;
    }
    Ok(Tensor::from_parts(src.shape().to_vec(), out))
}

fn check_logits<S: Scalar>(z: &Tensor<S>, labels: &[usize]) -> Result<(usize, usize)> {
    let s = z.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(mismatch("softmax_xent", s, &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= s[1]) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: s[1],
        });
    }
    Ok((s[0], s[1]))
}

/// Row-wise softmax, stabilized by subtracting the row max.
pub fn softmax_rows<S: Scalar>(z: &Tensor<S>) -> Tensor<S> {
    let m = *z.shape().last().unwrap_or(&1);
    let mut out = z.data().to_vec();
    for row in out.chunks_mut(m) {
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::from_parts(z.shape().to_vec(), out)
}

/// Summed cross-entropy of row logits against class labels.
pub fn softmax_xent<S: Scalar>(z: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    let (_, m) = check_logits(z, labels)?;
    let mut total = S::zero();
    for (row, &y) in z.data().chunks(m).zip(labels) {
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln() + mx;
        total += lse - row[y];
    }
    Ok(Tensor::scalar(total))
}

/// `g * (softmax(z) - onehot(labels))`
pub fn softmax_xent_grad<S: Scalar>(z: &Tensor<S>, g: S, labels: &[usize]) -> Result<Tensor<S>> {
    let (_, m) = check_logits(z, labels)?;
    let mut p = softmax_rows(z).into_data();
    for (row, &y) in p.chunks_mut(m).zip(labels) {
        row[y] -= S::one();
        for v in row.iter_mut() {
            *v *= g;
        }
    }
    Ok(Tensor::from_parts(z.shape().to_vec(), p))
}

/// Hessian-vector product of the summed cross-entropy: `g * p ⊙ (u - <u, p>)` per row.
pub fn softmax_xent_hvp<S: Scalar>(z: &Tensor<S>, u: &Tensor<S>, g: S) -> Result<Tensor<S>> {
    if z.shape() != u.shape() || z.shape().len() != 2 {
        return Err(mismatch("softmax_xent_hvp", z.shape(), u.shape()));
    }
    let m = z.shape()[1];
    let mut p = softmax_rows(z).into_data();
    for (prow, urow) in p.chunks_mut(m).zip(u.data().chunks(m)) {
        let inner: S = prow.iter().zip(urow).map(|(&a, &b)| a * b).sum();
        for (pv, &uv) in prow.iter_mut().zip(urow) {
            *pv = g * *pv * (uv - inner);
        }
    }
    Ok(Tensor::from_parts(z.shape().to_vec(), p))
}
