use rand::Rng;

use super::gemm::{gemm, Mat};
use super::init::glorot_uniform;
use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer over the flattened trailing dimensions.
#[derive(Clone, Debug)]
pub struct Dense {
    pub(crate) inputs: usize,
    pub(crate) units: usize,
    /// `[units, inputs]`
    pub(crate) weight: Tensor,
    /// `[units]`
    pub(crate) bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, rng: &mut impl Rng) -> Result<Self> {
        if inputs == 0 || units == 0 {
            return Err(Error::InvalidParameter("dense sizes must be >= 1".into()));
        }
        Ok(Dense {
            inputs,
            units,
            weight: glorot_uniform(&[units, inputs], inputs, units, rng),
            bias: Tensor::zeros(&[units]),
        })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let per_item: usize = input.iter().skip(1).product();
        if input.len() < 2 || per_item != self.inputs {
            return Err(Error::shape(
                format!("[N, {}]", self.inputs),
                format!("{input:?}"),
            ));
        }
        Ok(vec![input[0], self.units])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let n = x.batch();
        let mut out: Vec<f64> = self.bias.data().repeat(n);
        gemm(
            Mat::new(x.data(), n, self.inputs),
            Mat::new(self.weight.data(), self.units, self.inputs).t(),
            1.0,
            &mut out,
            self.units,
        );
        Tensor::new(shape, out)
    }

    /// Returns `(dx, [dweight, dbias])`; `dx` has the input's shape.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let shape = self.output_shape(x.shape())?;
        if grad_out.shape() != shape.as_slice() {
            return Err(Error::shape(format!("{shape:?}"), format!("{:?}", grad_out.shape())));
        }
        let n = x.batch();
        let g = Mat::new(grad_out.data(), n, self.units);
        let mut dw = vec![0.0; self.units * self.inputs];
        gemm(g.t(), Mat::new(x.data(), n, self.inputs), 0.0, &mut dw, self.inputs);
        let mut db = vec![0.0; self.units];
        for row in grad_out.data().chunks(self.units) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dx = vec![0.0; n * self.inputs];
        gemm(g, Mat::new(self.weight.data(), self.units, self.inputs), 0.0, &mut dx, self.inputs);
        Ok((
            Tensor::new(x.shape().to_vec(), dx)?,
            vec![
                Tensor::new(vec![self.units, self.inputs], dw)?,
                Tensor::new(vec![self.units], db)?,
            ],
        ))
    }
}
