use rand::Rng;

use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{Error, Result};

/// Pyramid grids of the spatial pyramid pooling layer, coarsest last.
pub const SPP_GRIDS: [usize; 3] = [4, 2, 1];

/// Number of pooled cells per channel: 16 + 4 + 1.
pub const SPP_CELLS: usize = 21;

fn chw(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(format!(
            "{what} expects a [C,H,W] tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

/// Column range `[lo, hi)` of output positions whose tap at offset `d`
/// (in -1..=1) stays inside a row of width `w`.
#[inline]
fn tap_range(d: isize, w: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { w - 1 } else { w };
    (lo, hi)
}

/// Unrolls a `[C,H,W]` input into a `[C·9, H·W]` matrix of zero-padded 3×3
/// neighborhoods; row `c·9 + ky·3 + kx` holds tap `(ky, kx)` of channel `c`.
pub(crate) fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut col = vec![T::zero(); c * 9 * plane];
    for ch in 0..c {
        let src = &x[ch * plane..(ch + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (lo, hi) = tap_range(dx, w);
                let row = &mut col[(ch * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (sy as usize * w) as isize + lo as isize + dx;
                    row[y * w + lo..y * w + hi].copy_from_slice(&src[s0 as usize..s0 as usize + (hi - lo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds a `[C·9, H·W]` matrix back to `[C,H,W]`.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut x = vec![T::zero(); c * plane];
    for ch in 0..c {
        let dst = &mut x[ch * plane..(ch + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (lo, hi) = tap_range(dx, w);
                let row = &col[(ch * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = ((sy as usize * w) as isize + lo as isize + dx) as usize;
                    for (d, &g) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&row[y * w + lo..y * w + hi]) {
                        *d += g;
                    }
                }
            }
        }
    }
    x
}

/// Zero-padded 3×3 cross-correlation (no kernel flip). Output has the same
/// spatial size as the input.
pub fn conv3x3_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    biases: &Tensor<T>,
) -> Result<Tensor<T>> {
    conv3x3_unrolled(input, weights, biases).map(|(y, _)| y)
}

/// Forward convolution that also returns the unrolled input for reuse in the
/// backward pass.
pub(crate) fn conv3x3_unrolled<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    biases: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (cin, h, w) = chw(input, "conv3x3")?;
    let cout = check_conv_weights(weights, biases, cin)?;
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "conv3x3 needs at least 3x3 input, got {h}x{w}"
        )));
    }
    let plane = h * w;
    let col = im2col(input.data(), cin, h, w);
    let mut out = vec![T::zero(); cout * plane];
    for (o, &b) in biases.data().iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(b);
    }
    matmul(cout, cin * 9, plane, weights.data(), false, &col, false, &mut out, true);
    Ok((Tensor::new(vec![cout, h, w], out)?, col))
}

fn check_conv_weights<T: Scalar>(weights: &Tensor<T>, biases: &Tensor<T>, cin: usize) -> Result<usize> {
    match *weights.shape() {
        [cout, wc, 3, 3] if wc == cin => {
            if biases.shape() != [cout] {
                return Err(Error::invalid(format!(
                    "conv3x3 bias shape {:?} does not match {cout} output channels",
                    biases.shape()
                )));
            }
            Ok(cout)
        }
        _ => Err(Error::invalid(format!(
            "conv3x3 weights {:?} incompatible with {cin} input channels",
            weights.shape()
        ))),
    }
}

/// Gradients of [`conv3x3_forward`] with respect to input, weights and biases.
pub fn conv3x3_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, h, w) = chw(input, "conv3x3 backward")?;
    let col = im2col(input.data(), cin, h, w);
    conv3x3_backward_unrolled(&col, [cin, h, w], weights, grad_out)
}

pub(crate) fn conv3x3_backward_unrolled<T: Scalar>(
    col: &[T],
    in_shape: [usize; 3],
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [cin, h, w] = in_shape;
    let cout = weights.shape()[0];
    if grad_out.shape() != [cout, h, w] {
        return Err(Error::invalid("conv3x3 backward: gradient shape mismatch"));
    }
    let plane = h * w;
    let k = cin * 9;
    let g = grad_out.data();
    let gb = g.chunks_exact(plane).map(|row| row.iter().copied().sum()).collect();
    let mut gw = vec![T::zero(); cout * k];
    matmul(cout, plane, k, g, false, col, true, &mut gw, false);
    let mut gcol = vec![T::zero(); k * plane];
    matmul(k, cout, plane, weights.data(), true, g, false, &mut gcol, false);
    Ok((
        Tensor::new(vec![cin, h, w], col2im(&gcol, cin, h, w))?,
        Tensor::new(vec![cout, cin, 3, 3], gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

/// Non-overlapping 2×2 max pooling; an odd trailing row or column is dropped.
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2x2_indexed(input).map(|(t, _)| t)
}

/// Max pooling that also reports, per output cell, the flat input index of
/// the selected maximum (first maximum in row-major window order).
pub(crate) fn maxpool2x2_indexed<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = chw(input, "maxpool2x2")?;
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!(
            "maxpool2x2 needs at least 2x2 input, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, idx))
}

/// Row (or column) ranges `[floor(r·len/n), ceil((r+1)·len/n))` of the `n`
/// bins of one pyramid grid.
pub fn spp_bins(len: usize, n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|r| (r * len / n, ((r + 1) * len).div_ceil(n)))
        .collect()
}

/// Spatial pyramid max pooling to a fixed `21·C` vector.
///
/// Layout: channel-major; within a channel the 4×4 grid (row-major), then
/// the 2×2 grid, then the global maximum.
pub fn spp_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    spp_indexed(input).map(|(t, _)| t)
}

pub(crate) fn spp_indexed<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = chw(input, "spp")?;
    if h < 4 || w < 4 {
        return Err(Error::invalid(format!(
            "spatial pyramid pooling needs at least 4x4 input, got {h}x{w}"
        )));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * SPP_CELLS);
    let mut idx = Vec::with_capacity(c * SPP_CELLS);
    for ch in 0..c {
        let base = ch * h * w;
        for n in SPP_GRIDS {
            let rows = spp_bins(h, n);
            let cols = spp_bins(w, n);
            for &(r0, r1) in &rows {
                for &(c0, c1) in &cols {
                    let mut best = base + r0 * w + c0;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            let i = base + y * w + xx;
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
    }
    Ok((Tensor::new(vec![c * SPP_CELLS], out)?, idx))
}

/// Scatters pooled gradients back to the recorded argmax positions.
pub(crate) fn scatter_max_grad<T: Scalar>(in_shape: &[usize], idx: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape);
    let d = gx.data_mut();
    for (&i, &g) in idx.iter().zip(grad.data()) {
        d[i] += g;
    }
    gx
}

/// Dense layer `W·x + b` with `W` of shape `[out, in]`.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, biases: &Tensor<T>) -> Result<Tensor<T>> {
    let (n_out, n_in) = match *weights.shape() {
        [o, i] => (o, i),
        _ => return Err(Error::invalid("fully-connected weights must be rank 2")),
    };
    if input.len() != n_in || biases.shape() != [n_out] {
        return Err(Error::invalid(format!(
            "fully-connected layer {n_in}->{n_out} got input of {} values",
            input.len()
        )));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n_in)
        .zip(biases.data())
        .map(|(row, &b)| b + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>())
        .collect();
    Tensor::new(vec![n_out], out)
}

pub(crate) fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let n_in = input.len();
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); n_in];
    let mut gw = Vec::with_capacity(weights.len());
    for (row, &go) in weights.data().chunks_exact(n_in).zip(g) {
        for ((d, &wv), &xv) in gx.iter_mut().zip(row).zip(x) {
            *d += wv * go;
            gw.push(go * xv);
        }
    }
    (
        Tensor::from_fn(input.shape(), |i| gx[i]),
        Tensor::from_fn(weights.shape(), |i| gw[i]),
        grad_out.clone(),
    )
}

/// Inverted dropout: in training each unit is zeroed with probability `rate`
/// and survivors are scaled by `1/(1-rate)`; at inference the input passes
/// through unchanged.
pub fn dropout_apply<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Tensor<T> {
    if !training || rate == 0.0 {
        return input.clone();
    }
    let mask = dropout_mask(input.len(), rate, rng);
    Tensor::from_fn(input.shape(), |i| input.data()[i] * T::of(mask[i]))
}

pub(crate) fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
