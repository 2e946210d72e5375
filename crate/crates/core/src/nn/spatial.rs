//! Parameter-free spatial layers: pooling, nearest upsampling, row cropping.

use super::Tensor;
use crate::error::{Error, Result};

fn check_factor(factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::InvalidParameter("spatial factor must be >= 1".into()));
    }
    Ok(())
}

/// Output extent of a ceil-mode pooling window: 75 -> 38 for factor 2.
pub fn pooled_extent(len: usize, factor: usize) -> usize {
    len.div_ceil(factor)
}

pub fn maxpool_shape(input: &[usize], factor: usize) -> Result<Vec<usize>> {
    check_factor(factor)?;
    match *input {
        [n, c, h, w] => Ok(vec![n, c, pooled_extent(h, factor), pooled_extent(w, factor)]),
        _ => Err(Error::shape("[N, C, H, W]", format!("{input:?}"))),
    }
}

/// Index (into the input item plane) of the max of every pooling window.
fn argmax_windows(plane: &[f64], h: usize, w: usize, f: usize) -> Vec<usize> {
    let (ho, wo) = (pooled_extent(h, f), pooled_extent(w, f));
    let mut idx = Vec::with_capacity(ho * wo);
    for oy in 0..ho {
        for ox in 0..wo {
            let mut best = (oy * f) * w + ox * f;
            for y in oy * f..((oy + 1) * f).min(h) {
                for x in ox * f..((ox + 1) * f).min(w) {
                    if plane[y * w + x] > plane[best] {
                        best = y * w + x;
                    }
                }
            }
            idx.push(best);
        }
    }
    idx
}

pub fn maxpool_forward(x: &Tensor, factor: usize) -> Result<Tensor> {
    let shape = maxpool_shape(x.shape(), factor)?;
    let (n, c, h, w) = x.dims4()?;
    let mut out = Vec::with_capacity(shape.iter().product());
    for plane in x.data().chunks(h * w).take(n * c) {
        out.extend(argmax_windows(plane, h, w, factor).into_iter().map(|i| plane[i]));
    }
    Tensor::new(shape, out)
}

pub fn maxpool_backward(x: &Tensor, grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    let shape = maxpool_shape(x.shape(), factor)?;
    if grad_out.shape() != shape.as_slice() {
        return Err(Error::shape(format!("{shape:?}"), format!("{:?}", grad_out.shape())));
    }
    let (_, _, h, w) = x.dims4()?;
    let out_plane = shape[2] * shape[3];
    let mut dx = vec![0.0; x.len()];
    for (p, (plane, dplane)) in x.data().chunks(h * w).zip(dx.chunks_mut(h * w)).enumerate() {
        let g = &grad_out.data()[p * out_plane..(p + 1) * out_plane];
        for (i, gv) in argmax_windows(plane, h, w, factor).into_iter().zip(g) {
            dplane[i] += gv;
        }
    }
    Tensor::new(x.shape().to_vec(), dx)
}

pub fn upsample_shape(input: &[usize], factor: usize) -> Result<Vec<usize>> {
    check_factor(factor)?;
    match *input {
        [n, c, h, w] => Ok(vec![n, c, h * factor, w * factor]),
        _ => Err(Error::shape("[N, C, H, W]", format!("{input:?}"))),
    }
}

pub fn upsample_forward(x: &Tensor, factor: usize) -> Result<Tensor> {
    let shape = upsample_shape(x.shape(), factor)?;
    let (_, _, h, w) = x.dims4()?;
    let wo = w * factor;
    let mut out = Vec::with_capacity(x.len() * factor * factor);
    for plane in x.data().chunks(h * w) {
        for y in 0..h * factor {
            let row = &plane[(y / factor) * w..(y / factor + 1) * w];
            out.extend((0..wo).map(|x| row[x / factor]));
        }
    }
    Tensor::new(shape, out)
}

pub fn upsample_backward(x: &Tensor, grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    let shape = upsample_shape(x.shape(), factor)?;
    if grad_out.shape() != shape.as_slice() {
        return Err(Error::shape(format!("{shape:?}"), format!("{:?}", grad_out.shape())));
    }
    let (_, _, h, w) = x.dims4()?;
    let (ho, wo) = (h * factor, w * factor);
    let mut dx = vec![0.0; x.len()];
    for (dplane, gplane) in dx.chunks_mut(h * w).zip(grad_out.data().chunks(ho * wo)) {
        for y in 0..ho {
            for xx in 0..wo {
                dplane[(y / factor) * w + xx / factor] += gplane[y * wo + xx];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), dx)
}

pub fn crop_shape(input: &[usize], rows: usize) -> Result<Vec<usize>> {
    match *input {
        [n, c, h, w] if h > 2 * rows => Ok(vec![n, c, h - 2 * rows, w]),
        _ => Err(Error::shape(
            format!("[N, C, H > {}, W]", 2 * rows),
            format!("{input:?}"),
        )),
    }
}

/// Removes `rows` rows from the top and from the bottom of every plane.
pub fn crop_forward(x: &Tensor, rows: usize) -> Result<Tensor> {
    let shape = crop_shape(x.shape(), rows)?;
    let (_, _, h, w) = x.dims4()?;
    let mut out = Vec::with_capacity(shape.iter().product());
    for plane in x.data().chunks(h * w) {
        out.extend_from_slice(&plane[rows * w..(h - rows) * w]);
    }
    Tensor::new(shape, out)
}

pub fn crop_backward(x: &Tensor, grad_out: &Tensor, rows: usize) -> Result<Tensor> {
    let shape = crop_shape(x.shape(), rows)?;
    if grad_out.shape() != shape.as_slice() {
        return Err(Error::shape(format!("{shape:?}"), format!("{:?}", grad_out.shape())));
    }
    let (_, _, h, w) = x.dims4()?;
    let inner = (h - 2 * rows) * w;
    let mut dx = vec![0.0; x.len()];
    for (dplane, gplane) in dx.chunks_mut(h * w).zip(grad_out.data().chunks(inner)) {
        dplane[rows * w..(h - rows) * w].copy_from_slice(gplane);
    }
    Tensor::new(x.shape().to_vec(), dx)
}
