//! Forward and backward kernels for the layer types the task networks use.
//!
//! All of these are pure functions over tensors. Inner products accumulate
//! in `f64` and are rounded once into the storage type.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial extent (stride 1).
    #[default]
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

impl Padding {
    /// (leading pad, output extent) along one axis.
    fn plan(self, extent: usize, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => ((k - 1) / 2, extent),
            Padding::Valid => (0, extent + 1 - k),
        }
    }
}

fn dims4(op: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    match *t {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(op, t, &[0, 0, 0, 0])),
    }
}

/// Valid range of output positions for kernel offset `k` so that the input
/// index `o + k - pad` lands inside `[0, extent)`.
#[inline]
fn span(out: usize, extent: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (extent + pad).saturating_sub(k).min(out);
    (lo, hi.max(lo))
}

pub(crate) struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    kh: usize,
    kw: usize,
    pad_t: usize,
    pad_l: usize,
    ho: usize,
    wo: usize,
}

pub(crate) fn conv_geometry(
    input: &[usize],
    kernels: &[usize],
    bias: &[usize],
    padding: Padding,
) -> Result<ConvGeometry> {
    let [n, c, h, w] = dims4("conv2d", input)?;
    let [m, kc, kh, kw] = dims4("conv2d", kernels)?;
    if kc != c || kh == 0 || kw == 0 {
        return Err(Error::shape("conv2d", input, kernels));
    }
    if kh > h || kw > w {
        return Err(Error::shape("conv2d", input, kernels));
    }
    if bias != [m] {
        return Err(Error::shape("conv2d bias", kernels, bias));
    }
    let (pad_t, ho) = padding.plan(h, kh);
    let (pad_l, wo) = padding.plan(w, kw);
    Ok(ConvGeometry {
        n,
        c,
        h,
        w,
        m,
        kh,
        kw,
        pad_t,
        pad_l,
        ho,
        wo,
    })
}

pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input.shape(), kernels.shape(), bias.shape(), padding)?;
    let x = input.data();
    let k = kernels.data();
    let b = bias.data();
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let mut out = Vec::with_capacity(g.n * g.m * plane_out);
    let mut acc = vec![0f64; plane_out];
    for n in 0..g.n {
        for m in 0..g.m {
            acc.iter_mut().for_each(|a| *a = b[m].as_f64());
            for c in 0..g.c {
                let xin = &x[(n * g.c + c) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    let (oy0, oy1) = span(g.ho, g.h, g.pad_t, ky);
                    for kx in 0..g.kw {
                        let wv = k[((m * g.c + c) * g.kh + ky) * g.kw + kx].as_f64();
                        let (ox0, ox1) = span(g.wo, g.w, g.pad_l, kx);
                        for oy in oy0..oy1 {
                            let iy = oy + ky - g.pad_t;
                            let row_in = &xin[iy * g.w..][..g.w];
                            let row_out = &mut acc[oy * g.wo..][..g.wo];
                            for ox in ox0..ox1 {
                                row_out[ox] += wv * row_in[ox + kx - g.pad_l].as_f64();
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&v| T::from_f64_lossy(v)));
        }
    }
    Tensor::new(vec![g.n, g.m, g.ho, g.wo], out)
}

/// Returns gradients w.r.t. (input, kernels, bias).
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let m_count = kernels.shape()[0];
    let g = conv_geometry(input.shape(), kernels.shape(), &[m_count], padding)?;
    let x = input.data();
    let k = kernels.data();
    let go = grad_out.data();
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;

    let mut gx = Vec::with_capacity(x.len());
    let mut acc = vec![0f64; plane_in];
    for n in 0..g.n {
        for c in 0..g.c {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for m in 0..g.m {
                let gplane = &go[(n * g.m + m) * plane_out..][..plane_out];
                for ky in 0..g.kh {
                    let (oy0, oy1) = span(g.ho, g.h, g.pad_t, ky);
                    for kx in 0..g.kw {
                        let wv = k[((m * g.c + c) * g.kh + ky) * g.kw + kx].as_f64();
                        let (ox0, ox1) = span(g.wo, g.w, g.pad_l, kx);
                        for oy in oy0..oy1 {
                            let iy = oy + ky - g.pad_t;
                            let grow = &gplane[oy * g.wo..][..g.wo];
                            let arow = &mut acc[iy * g.w..][..g.w];
                            for ox in ox0..ox1 {
                                arow[ox + kx - g.pad_l] += wv * grow[ox].as_f64();
                            }
                        }
                    }
                }
            }
            gx.extend(acc.iter().map(|&v| T::from_f64_lossy(v)));
        }
    }

    let mut gk = vec![0f64; k.len()];
    let mut gb = vec![0f64; g.m];
    for n in 0..g.n {
        for m in 0..g.m {
            let gplane = &go[(n * g.m + m) * plane_out..][..plane_out];
            gb[m] += gplane.iter().map(|v| v.as_f64()).sum::<f64>();
            for c in 0..g.c {
                let xin = &x[(n * g.c + c) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    let (oy0, oy1) = span(g.ho, g.h, g.pad_t, ky);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = span(g.wo, g.w, g.pad_l, kx);
                        let mut s = 0f64;
                        for oy in oy0..oy1 {
                            let iy = oy + ky - g.pad_t;
                            let grow = &gplane[oy * g.wo..][..g.wo];
                            let xrow = &xin[iy * g.w..][..g.w];
                            for ox in ox0..ox1 {
                                s += grow[ox].as_f64() * xrow[ox + kx - g.pad_l].as_f64();
                            }
                        }
                        gk[((m * g.c + c) * g.kh + ky) * g.kw + kx] += s;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::from_f64(kernels.shape(), &gk)?,
        Tensor::from_f64(&[g.m], &gb)?,
    ))
}

fn dense_dims(input: &[usize], weight: &[usize]) -> Result<(usize, usize, usize)> {
    match (input, weight) {
        ([n, f], [f2, g]) if f == f2 => Ok((*n, *f, *g)),
        _ => Err(Error::shape("dense", input, weight)),
    }
}

pub fn dense<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, f, g) = dense_dims(input.shape(), weight.shape())?;
    if let Some(b) = bias {
        if b.shape() != [g] {
            return Err(Error::shape("dense bias", weight.shape(), b.shape()));
        }
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * g);
    let mut acc = vec![0f64; g];
    for row in 0..n {
        match bias {
            Some(b) => acc
                .iter_mut()
                .zip(b.data())
                .for_each(|(a, v)| *a = v.as_f64()),
            None => acc.iter_mut().for_each(|a| *a = 0.0),
        }
        for k in 0..f {
            let xv = x[row * f + k].as_f64();
            let wrow = &w[k * g..][..g];
            for (a, wv) in acc.iter_mut().zip(wrow) {
                *a += xv * wv.as_f64();
            }
        }
        out.extend(acc.iter().map(|&v| T::from_f64_lossy(v)));
    }
    Tensor::new(vec![n, g], out)
}

/// Returns gradients w.r.t. (input, weight, bias).
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f, g) = dense_dims(input.shape(), weight.shape())?;
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    let mut gx = Vec::with_capacity(n * f);
    for row in 0..n {
        let grow = &go[row * g..][..g];
        for k in 0..f {
            let wrow = &w[k * g..][..g];
            let s: f64 = grow
                .iter()
                .zip(wrow)
                .map(|(a, b)| a.as_f64() * b.as_f64())
                .sum();
            gx.push(T::from_f64_lossy(s));
        }
    }
    let mut gw = vec![0f64; f * g];
    let mut gb = vec![0f64; g];
    for row in 0..n {
        let grow = &go[row * g..][..g];
        for (b, v) in gb.iter_mut().zip(grow) {
            *b += v.as_f64();
        }
        for k in 0..f {
            let xv = x[row * f + k].as_f64();
            for (acc, v) in gw[k * g..][..g].iter_mut().zip(grow) {
                *acc += xv * v.as_f64();
            }
        }
    }
    Ok((
        Tensor::new(vec![n, f], gx)?,
        Tensor::from_f64(&[f, g], &gw)?,
        Tensor::from_f64(&[g], &gb)?,
    ))
}

/// Non-overlapping max pooling with a square `window`; returns the output
/// and the flat input index of each selected maximum (first wins on ties).
pub fn max_pool2d<T: Real>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = dims4("max_pool2d", input.shape())?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::InvalidWindow {
            op: "max_pool2d",
            window,
            height: h,
            width: w,
        });
    }
    let (ho, wo) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * window * w + ox * window;
                for dy in 0..window {
                    for dx in 0..window {
                        let i = base + (oy * window + dy) * w + ox * window + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, idx))
}

/// Mean softmax cross-entropy over the batch and the softmax probabilities.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let (n, k) = match *logits.shape() {
        [n, k] if n == labels.len() && k > 0 => (n, k),
        _ => return Err(Error::shape("softmax_cross_entropy", logits.shape(), &[labels.len()])),
    };
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes: k,
        });
    }
    let z = logits.data();
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0f64;
    for (row, &label) in labels.iter().enumerate() {
        let r = &z[row * k..][..k];
        let max = r.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = r.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_denom = denom.ln();
        total += log_denom - (r[label].as_f64() - max);
        probs.extend(r.iter().map(|v| (v.as_f64() - max).exp() / denom));
    }
    Ok((total / n as f64, probs))
}
