use super::{Mode, Tensor};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization of `[N, C, H, W]` tensors.
///
/// Training mode normalizes with batch statistics (biased variance); evaluation
/// mode uses the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub(crate) channels: usize,
    pub(crate) gamma: Tensor,
    pub(crate) beta: Tensor,
    pub(crate) running_mean: Tensor,
    pub(crate) running_var: Tensor,
}

struct Stats {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidParameter("batchnorm channels must be >= 1".into()));
        }
        Ok(BatchNorm2d {
            channels,
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        })
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!("{} channels", self.channels), c));
        }
        Ok((n, h * w))
    }

    fn stats(&self, x: &Tensor, mode: Mode) -> Result<Stats> {
        let (n, plane) = self.check(x)?;
        let c = self.channels;
        let (mean, var) = match mode {
            Mode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
            Mode::Train => {
                let count = (n * plane) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (i, p) in x.data().chunks(plane).enumerate() {
                    mean[i % c] += p.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (i, p) in x.data().chunks(plane).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += p.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
        };
        let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        Ok(Stats { mean, inv_std, var })
    }

    fn normalize(&self, x: &Tensor, s: &Stats) -> Result<Tensor> {
        let (_, plane) = self.check(x)?;
        let c = self.channels;
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut out = x.data().to_vec();
        for (i, p) in out.chunks_mut(plane).enumerate() {
            let ch = i % c;
            let (m, is) = (s.mean[ch], s.inv_std[ch]);
            p.iter_mut().for_each(|v| *v = g[ch] * (*v - m) * is + b[ch]);
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.stats(x, mode)?;
        self.normalize(x, &s)
    }

    /// Training-mode forward that also folds the batch statistics into the
    /// running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let s = self.stats(x, Mode::Train)?;
        let (n, plane) = self.check(x)?;
        let count = (n * plane) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for ch in 0..self.channels {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * s.mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * s.var[ch] * unbias;
        }
        self.normalize(x, &s)
    }

    /// Returns `(dx, [dgamma, dbeta])`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Tensor>)> {
        x.check_same_shape(grad_out)?;
        let s = self.stats(x, mode)?;
        let (n, plane) = self.check(x)?;
        let c = self.channels;
        let g = self.gamma.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (i, (xp, gp)) in x.data().chunks(plane).zip(grad_out.data().chunks(plane)).enumerate() {
            let ch = i % c;
            for (v, d) in xp.iter().zip(gp) {
                dgamma[ch] += d * (v - s.mean[ch]) * s.inv_std[ch];
                dbeta[ch] += d;
            }
        }
        let mut dx = vec![0.0; x.len()];
        let count = (n * plane) as f64;
        for (i, ((xp, gp), dp)) in x
            .data()
            .chunks(plane)
            .zip(grad_out.data().chunks(plane))
            .zip(dx.chunks_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            let is = s.inv_std[ch];
            match mode {
                Mode::Eval => {
                    for (d, gv) in dp.iter_mut().zip(gp) {
                        *d = gv * g[ch] * is;
                    }
                }
                Mode::Train => {
                    // dx = gamma * inv_std / M * (M * dy - sum(dy) - xhat * sum(dy * xhat))
                    let (sum_dy, sum_dy_xhat) = (dbeta[ch], dgamma[ch]);
                    for ((d, gv), v) in dp.iter_mut().zip(gp).zip(xp) {
                        let xhat = (v - s.mean[ch]) * is;
                        *d = g[ch] * is / count * (count * gv - sum_dy - xhat * sum_dy_xhat);
                    }
                }
            }
        }
        Ok((
            Tensor::new(x.shape().to_vec(), dx)?,
            vec![Tensor::new(vec![c], dgamma)?, Tensor::new(vec![c], dbeta)?],
        ))
    }
}
