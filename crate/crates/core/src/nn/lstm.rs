use rand::Rng;

use super::gemm::{gemm, Mat};
use super::init::glorot_uniform;
use super::layer::sigmoid;
use super::Tensor;
use crate::error::{Error, Result};

/// One LSTM cell with input, forget, candidate and output gates (in that
/// order inside the stacked weight matrices).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub(crate) inputs: usize,
    pub(crate) hidden: usize,
    /// `[4 * hidden, inputs]`
    pub(crate) w_input: Tensor,
    /// `[4 * hidden, hidden]`
    pub(crate) w_hidden: Tensor,
    /// `[4 * hidden]`, forget slice initialized to 1
    pub(crate) bias: Tensor,
}

/// Recurrent state of a batch: `[batch, hidden]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }
}

/// Everything one step's backward pass needs.
#[derive(Clone, Debug)]
pub struct StepTrace {
    x: Tensor,
    prev: LstmState,
    /// Activated gates `[batch, 4 * hidden]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients of one step.
#[derive(Debug)]
pub struct StepGrads {
    pub dx: Option<Tensor>,
    pub dh_prev: Tensor,
    pub dc_prev: Tensor,
    /// `[dw_input, dw_hidden, dbias]`
    pub params: Vec<Tensor>,
}

impl LstmCell {
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if inputs == 0 || hidden == 0 {
            return Err(Error::InvalidParameter("lstm sizes must be >= 1".into()));
        }
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Ok(LstmCell {
            inputs,
            hidden,
            w_input: glorot_uniform(&[4 * hidden, inputs], inputs, hidden, rng),
            w_hidden: glorot_uniform(&[4 * hidden, hidden], hidden, hidden, rng),
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn check(&self, x: &Tensor, state: &LstmState) -> Result<usize> {
        let (n, d) = x.dims2();
        if d != self.inputs || x.shape().len() != 2 {
            return Err(Error::shape(format!("[N, {}]", self.inputs), format!("{:?}", x.shape())));
        }
        let want = [n, self.hidden];
        if state.h.shape() != want || state.c.shape() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", state.h.shape())));
        }
        Ok(n)
    }

    /// Advances the state by one input; returns the new state and a trace.
    pub fn step(&self, x: &Tensor, state: &LstmState) -> Result<(LstmState, StepTrace)> {
        let n = self.check(x, state)?;
        let hd = self.hidden;
        let g4 = 4 * hd;
        let mut z: Vec<f64> = self.bias.data().repeat(n);
        gemm(
            Mat::new(x.data(), n, self.inputs),
            Mat::new(self.w_input.data(), g4, self.inputs).t(),
            1.0,
            &mut z,
            g4,
        );
        gemm(
            Mat::new(state.h.data(), n, hd),
            Mat::new(self.w_hidden.data(), g4, hd).t(),
            1.0,
            &mut z,
            g4,
        );
        let mut h = vec![0.0; n * hd];
        let mut c = vec![0.0; n * hd];
        let mut tanh_c = vec![0.0; n * hd];
        for b in 0..n {
            let zr = &mut z[b * g4..(b + 1) * g4];
            for j in 0..hd {
                zr[j] = sigmoid(zr[j]);
                zr[hd + j] = sigmoid(zr[hd + j]);
                zr[2 * hd + j] = zr[2 * hd + j].tanh();
                zr[3 * hd + j] = sigmoid(zr[3 * hd + j]);
                let k = b * hd + j;
                c[k] = zr[hd + j] * state.c.data()[k] + zr[j] * zr[2 * hd + j];
                tanh_c[k] = c[k].tanh();
                h[k] = zr[3 * hd + j] * tanh_c[k];
            }
        }
        let next = LstmState {
            h: Tensor::new(vec![n, hd], h)?,
            c: Tensor::new(vec![n, hd], c)?,
        };
        let trace = StepTrace { x: x.clone(), prev: state.clone(), gates: z, tanh_c };
        Ok((next, trace))
    }

    /// Backward through one step given gradients w.r.t. the step's outputs.
    pub fn step_backward(&self, trace: &StepTrace, dh: &Tensor, dc: &Tensor, want_dx: bool) -> Result<StepGrads> {
        let n = trace.x.batch();
        let hd = self.hidden;
        let g4 = 4 * hd;
        let want = [n, hd];
        if dh.shape() != want || dc.shape() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", dh.shape())));
        }
        let mut dz = vec![0.0; n * g4];
        let mut dc_prev = vec![0.0; n * hd];
        for b in 0..n {
            let gr = &trace.gates[b * g4..(b + 1) * g4];
            let dzr = &mut dz[b * g4..(b + 1) * g4];
            for j in 0..hd {
                let k = b * hd + j;
                let (i, f, g, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                let tc = trace.tanh_c[k];
                let dct = dc.data()[k] + dh.data()[k] * o * (1.0 - tc * tc);
                dzr[j] = dct * g * i * (1.0 - i);
                dzr[hd + j] = dct * trace.prev.c.data()[k] * f * (1.0 - f);
                dzr[2 * hd + j] = dct * i * (1.0 - g * g);
                dzr[3 * hd + j] = dh.data()[k] * tc * o * (1.0 - o);
                dc_prev[k] = dct * f;
            }
        }
        let dzm = Mat::new(&dz, n, g4);
        let mut dwi = vec![0.0; g4 * self.inputs];
        gemm(dzm.t(), Mat::new(trace.x.data(), n, self.inputs), 0.0, &mut dwi, self.inputs);
        let mut dwh = vec![0.0; g4 * hd];
        gemm(dzm.t(), Mat::new(trace.prev.h.data(), n, hd), 0.0, &mut dwh, hd);
        let mut db = vec![0.0; g4];
        for row in dz.chunks(g4) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dh_prev = vec![0.0; n * hd];
        gemm(dzm, Mat::new(self.w_hidden.data(), g4, hd), 0.0, &mut dh_prev, hd);
        let dx = if want_dx {
            let mut dx = vec![0.0; n * self.inputs];
            gemm(dzm, Mat::new(self.w_input.data(), g4, self.inputs), 0.0, &mut dx, self.inputs);
            Some(Tensor::new(vec![n, self.inputs], dx)?)
        } else {
            None
        };
        Ok(StepGrads {
            dx,
            dh_prev: Tensor::new(vec![n, hd], dh_prev)?,
            dc_prev: Tensor::new(vec![n, hd], dc_prev)?,
            params: vec![
                Tensor::new(vec![g4, self.inputs], dwi)?,
                Tensor::new(vec![g4, hd], dwh)?,
                Tensor::new(vec![g4], db)?,
            ],
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}
