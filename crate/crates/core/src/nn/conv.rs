use rand::Rng;

use super::gemm::{gemm, Mat};
use super::init::glorot_uniform;
use super::Tensor;
use crate::error::{Error, Result};

/// Output columns per im2col chunk; keeps the buffer cache-resident.
const CHUNK: usize = 512;
/// Up to this many output channels, taps are accumulated directly.
const DIRECT_MAX_OUT: usize = 4;

/// 2-D convolution, stride 1, zero 'same' padding, odd square kernel.
///
/// Computed per image as one matrix product over column chunks of an
/// im2col buffer built from a zero-padded copy of the input planes.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub(crate) in_channels: usize,
    pub(crate) out_channels: usize,
    pub(crate) kernel: usize,
    /// `[out, in, k, k]`
    pub(crate) weight: Tensor,
    /// `[out]`
    pub(crate) bias: Tensor,
}

struct Padded {
    buf: Vec<f64>,
    hp: usize,
    wp: usize,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidParameter("conv channels must be >= 1".into()));
        }
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::InvalidParameter(format!("conv kernel must be odd and >= 1, got {kernel}")));
        }
        let area = kernel * kernel;
        let weight = glorot_uniform(
            &[out_channels, in_channels, kernel, kernel],
            in_channels * area,
            out_channels * area,
            rng,
        );
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, c, h, w] if c == self.in_channels => Ok(vec![n, self.out_channels, h, w]),
            _ => Err(Error::shape(
                format!("[N, {}, H, W]", self.in_channels),
                format!("{input:?}"),
            )),
        }
    }

    fn pad(&self, item: &[f64], h: usize, w: usize) -> Padded {
        let p = self.kernel / 2;
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        // trailing slack keeps the shifted views of the last plane in bounds
        let mut buf = vec![0.0; self.in_channels * hp * wp + self.kernel * wp];
        for c in 0..self.in_channels {
            for y in 0..h {
                let src = &item[(c * h + y) * w..(c * h + y + 1) * w];
                let dst = (c * hp + y + p) * wp + p;
                buf[dst..dst + w].copy_from_slice(src);
            }
        }
        Padded { buf, hp, wp }
    }

    /// Offset of im2col row `r` (channel-major, then kernel tap) in the padded buffer.
    fn tap_offset(&self, padded: &Padded, r: usize) -> usize {
        let area = self.kernel * self.kernel;
        let (c, t) = (r / area, r % area);
        c * padded.hp * padded.wp + (t / self.kernel) * padded.wp + t % self.kernel
    }

    /// Fills `col` (`[in*k*k, jn]`) with the shifted views of columns
    /// `j0..j0 + jn` of the padded-width output grid.
    fn im2col(&self, padded: &Padded, j0: usize, jn: usize, col: &mut [f64]) {
        let k = self.kernel;
        let plane = padded.hp * padded.wp;
        for c in 0..self.in_channels {
            for t in 0..k * k {
                let src = c * plane + (t / k) * padded.wp + t % k + j0;
                let r = c * k * k + t;
                col[r * jn..(r + 1) * jn].copy_from_slice(&padded.buf[src..src + jn]);
            }
        }
    }

    fn col2im(&self, dcol: &[f64], j0: usize, jn: usize, dpad: &mut [f64], hp: usize, wp: usize) {
        let k = self.kernel;
        for c in 0..self.in_channels {
            for t in 0..k * k {
                let dst = c * hp * wp + (t / k) * wp + t % k + j0;
                let r = c * k * k + t;
                for (d, s) in dpad[dst..dst + jn].iter_mut().zip(&dcol[r * jn..(r + 1) * jn]) {
                    *d += s;
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let (n, _, h, w) = x.dims4()?;
        let (co, ci, k) = (self.out_channels, self.in_channels, self.kernel);
        let kk = ci * k * k;
        let mut out = vec![0.0; n * co * h * w];
        let item_in = ci * h * w;
        let bias = self.bias.data();
        let weights = Mat::new(self.weight.data(), co, kk);
        let mut col = vec![0.0; kk * CHUNK];
        for b in 0..n {
            let padded = self.pad(&x.data()[b * item_in..(b + 1) * item_in], h, w);
            let wp = padded.wp;
            // outputs live on the padded-width grid; the extra columns are discarded
            let span = h * wp;
            let mut acc = vec![0.0; co * span];
            for j0 in (0..span).step_by(CHUNK) {
                let jn = CHUNK.min(span - j0);
                if co <= DIRECT_MAX_OUT {
                    // too few output channels for a matrix product to pay off
                    for o in 0..co {
                        let dst = &mut acc[o * span + j0..o * span + j0 + jn];
                        for (r, &wv) in self.weight.data()[o * kk..(o + 1) * kk].iter().enumerate() {
                            let src = self.tap_offset(&padded, r) + j0;
                            for (d, &v) in dst.iter_mut().zip(&padded.buf[src..src + jn]) {
                                *d += wv * v;
                            }
                        }
                    }
                } else {
                    self.im2col(&padded, j0, jn, &mut col);
                    gemm(weights, Mat::new(&col[..kk * jn], kk, jn), 0.0, &mut acc[j0..], span);
                }
            }
            let dst = &mut out[b * co * h * w..(b + 1) * co * h * w];
            for o in 0..co {
                for y in 0..h {
                    let src = &acc[o * span + y * wp..o * span + y * wp + w];
                    let row = &mut dst[(o * h + y) * w..(o * h + y + 1) * w];
                    for (d, s) in row.iter_mut().zip(src) {
                        *d = s + bias[o];
                    }
                }
            }
        }
        Tensor::new(out_shape, out)
    }

    /// Returns `(dx, [dweight, dbias])`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (dx, grads) = self.backward_opt(x, grad_out, true)?;
        Ok((dx.expect("input gradient requested"), grads))
    }

    pub(crate) fn backward_opt(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        need_dx: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        let out_shape = self.output_shape(x.shape())?;
        if grad_out.shape() != out_shape.as_slice() {
            return Err(Error::shape(format!("{out_shape:?}"), format!("{:?}", grad_out.shape())));
        }
        let (n, _, h, w) = x.dims4()?;
        let (co, ci, k) = (self.out_channels, self.in_channels, self.kernel);
        let kk = ci * k * k;
        let p = k / 2;
        let mut dweight = vec![0.0; co * kk];
        let mut dbias = vec![0.0; co];
        let mut dx = if need_dx { vec![0.0; n * ci * h * w] } else { Vec::new() };
        let item_in = ci * h * w;
        let item_out = co * h * w;
        let weights_t = Mat::new(self.weight.data(), co, kk).t();
        let mut col = vec![0.0; kk * CHUNK];
        let mut dcol = vec![0.0; kk * CHUNK];
        for b in 0..n {
            let padded = self.pad(&x.data()[b * item_in..(b + 1) * item_in], h, w);
            let (hp, wp) = (padded.hp, padded.wp);
            let span = h * wp;
            let g = &grad_out.data()[b * item_out..(b + 1) * item_out];
            // gradient on the padded-width grid, zero in the discarded columns
            let mut gpl = vec![0.0; co * span];
            for o in 0..co {
                for y in 0..h {
                    let src = &g[(o * h + y) * w..(o * h + y + 1) * w];
                    gpl[o * span + y * wp..o * span + y * wp + w].copy_from_slice(src);
                    dbias[o] += src.iter().sum::<f64>();
                }
            }
            let mut dpad = if need_dx { vec![0.0; padded.buf.len()] } else { Vec::new() };
            for j0 in (0..span).step_by(CHUNK) {
                let jn = CHUNK.min(span - j0);
                if co <= DIRECT_MAX_OUT {
                    for o in 0..co {
                        let gs = &gpl[o * span + j0..o * span + j0 + jn];
                        for r in 0..kk {
                            let off = self.tap_offset(&padded, r) + j0;
                            let xs = &padded.buf[off..off + jn];
                            dweight[o * kk + r] += dot(gs, xs);
                            if need_dx {
                                let wv = self.weight.data()[o * kk + r];
                                for (d, &gv) in dpad[off..off + jn].iter_mut().zip(gs) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                    continue;
                }
                self.im2col(&padded, j0, jn, &mut col);
                let gchunk = Mat { data: &gpl[j0..], rows: co, cols: jn, stride: span, transposed: false };
                gemm(gchunk, Mat::new(&col[..kk * jn], kk, jn).t(), 1.0, &mut dweight, kk);
                if need_dx {
                    gemm(weights_t, gchunk, 0.0, &mut dcol[..kk * jn], jn);
                    self.col2im(&dcol[..kk * jn], j0, jn, &mut dpad, hp, wp);
                }
            }
            if need_dx {
                let dst = &mut dx[b * item_in..(b + 1) * item_in];
                for c in 0..ci {
                    for y in 0..h {
                        let src = (c * hp + y + p) * wp + p;
                        dst[(c * h + y) * w..(c * h + y + 1) * w].copy_from_slice(&dpad[src..src + w]);
                    }
                }
            }
        }
        let dx = if need_dx { Some(Tensor::new(x.shape().to_vec(), dx)?) } else { None };
        Ok((
            dx,
            vec![
                Tensor::new(self.weight.shape().to_vec(), dweight)?,
                Tensor::new(vec![co], dbias)?,
            ],
        ))
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight seven-loop convolution used as a reference.
    fn direct(conv: &Conv2d, x: &Tensor) -> Vec<f64> {
        let (n, ci, h, w) = x.dims4().unwrap();
        let (co, k) = (conv.out_channels, conv.kernel);
        let p = (k / 2) as isize;
        let wt = conv.weight.data();
        let mut out = vec![0.0; n * co * h * w];
        for b in 0..n {
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = conv.bias.data()[o];
                        for i in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = xx as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let v = x.data()[((b * ci + i) * h + sy as usize) * w + sx as usize];
                                    s += v * wt[((o * ci + i) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((b * co + o) * h + y) * w + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(ci, co, k, h, w) in &[(1, 3, 3, 5, 7), (3, 2, 3, 4, 4), (2, 2, 5, 6, 5), (2, 1, 1, 3, 3)] {
            let mut conv = Conv2d::new(ci, co, k, &mut rng).unwrap();
            conv.bias = Tensor::new(vec![co], (0..co).map(|v| v as f64 * 0.1).collect()).unwrap();
            let x = Tensor::new(
                vec![2, ci, h, w],
                (0..2 * ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let got = conv.forward(&x).unwrap();
            for (a, b) in got.data().iter().zip(direct(&conv, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_even_kernel_and_channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Conv2d::new(1, 1, 2, &mut rng).is_err());
        let conv = Conv2d::new(2, 1, 3, &mut rng).unwrap();
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 4, 4])).is_err());
    }
}
