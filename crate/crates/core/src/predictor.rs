//! Two-layer LSTM predictors of an occluded frame's embedding from the five
//! preceding (forward) or five succeeding (backward) embeddings.

use std::ops::ControlFlow;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderModel, Embedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, minibatches, mse_grad, mse_loss, AdamConfig, AdamState, Checkpoint, Dense, EpochHook, LayerSpec,
    LstmCell, LstmState, Saturation, Tensor,
};
use crate::silhouette::{FrameStatus, GaitSequence};

pub const CONTEXT_LEN: usize = 5;
pub const DEFAULT_HIDDEN: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn model_kind(self) -> &'static str {
        match self {
            Direction::Forward => "lstm_forward",
            Direction::Backward => "lstm_backward",
        }
    }

    /// Frame indices feeding a prediction of `target`, in temporal order, or
    /// `None` when they fall outside `0..len`. Never contains `target`.
    pub fn context_indices(self, target: usize, len: usize) -> Option<[usize; CONTEXT_LEN]> {
        let start = match self {
            Direction::Forward => target.checked_sub(CONTEXT_LEN)?,
            Direction::Backward => target + 1,
        };
        if start + CONTEXT_LEN > len {
            return None;
        }
        Some(std::array::from_fn(|k| start + k))
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::InvalidParameter(format!("unknown direction {other:?}"))),
        }
    }
}

/// Five embeddings in temporal order: `E[i-5..i]` for forward prediction of
/// frame `i`, `E[i+1..=i+5]` for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextWindow {
    direction: Direction,
    embeddings: Vec<Embedding>,
}

impl ContextWindow {
    pub fn new(direction: Direction, embeddings: Vec<Embedding>) -> Result<Self> {
        if embeddings.len() != CONTEXT_LEN {
            return Err(Error::shape(format!("{CONTEXT_LEN} context embeddings"), embeddings.len()));
        }
        Ok(ContextWindow { direction, embeddings })
    }

    /// Assembles the context of `target` from a per-frame lookup. Returns
    /// `None` if the window leaves the sequence or any entry is missing; the
    /// target itself is never consulted.
    pub fn gather<'a>(
        direction: Direction,
        target: usize,
        len: usize,
        lookup: impl Fn(usize) -> Option<&'a Embedding>,
    ) -> Option<Self> {
        let indices = direction.context_indices(target, len)?;
        let embeddings = indices.iter().map(|&i| lookup(i).cloned()).collect::<Option<Vec<_>>>()?;
        Some(ContextWindow { direction, embeddings })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    /// The context frame temporally closest to the target.
    pub fn nearest(&self) -> &Embedding {
        match self.direction {
            Direction::Forward => &self.embeddings[CONTEXT_LEN - 1],
            Direction::Backward => &self.embeddings[0],
        }
    }
}

/// Copy-nearest-frame baseline: predicts the adjacent context embedding.
pub fn copy_baseline(ctx: &ContextWindow) -> Embedding {
    ctx.nearest().clone()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorShape {
    pub hidden: usize,
    /// Feed backward contexts nearest-frame-last.
    pub reverse_backward: bool,
}

impl Default for PredictorShape {
    fn default() -> Self {
        PredictorShape { hidden: DEFAULT_HIDDEN, reverse_backward: true }
    }
}

#[derive(Clone, Debug)]
pub struct LstmPredictor {
    direction: Direction,
    shape: PredictorShape,
    layer1: LstmCell,
    layer2: LstmCell,
    head: Dense,
}

struct Unrolled {
    traces1: Vec<crate::nn::StepTrace>,
    traces2: Vec<crate::nn::StepTrace>,
    last: Tensor,
}

impl LstmPredictor {
    pub fn new(direction: Direction, shape: PredictorShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(LstmPredictor {
            direction,
            shape,
            layer1: LstmCell::new(EMBEDDING_DIM, shape.hidden, &mut rng)?,
            layer2: LstmCell::new(shape.hidden, shape.hidden, &mut rng)?,
            head: Dense::new(shape.hidden, EMBEDDING_DIM, &mut rng)?,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn shape(&self) -> PredictorShape {
        self.shape
    }

    pub fn layer1(&self) -> &LstmCell {
        &self.layer1
    }

    pub fn layer2(&self) -> &LstmCell {
        &self.layer2
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Context positions in the order they are fed to the cells.
    pub fn feed_order(&self) -> [usize; CONTEXT_LEN] {
        let mut order: [usize; CONTEXT_LEN] = std::array::from_fn(|k| k);
        if self.direction == Direction::Backward && self.shape.reverse_backward {
            order.reverse();
        }
        order
    }

    fn check(&self, ctx: &ContextWindow) -> Result<()> {
        if ctx.direction != self.direction {
            return Err(Error::DirectionMismatch { model: self.direction.to_string(), context: ctx.direction.to_string() });
        }
        if ctx.embeddings.len() != CONTEXT_LEN {
            return Err(Error::shape(CONTEXT_LEN, ctx.embeddings.len()));
        }
        Ok(())
    }

    /// Time-major inputs `[batch, 15200]` for each of the five steps.
    fn step_inputs(&self, batch: &[&ContextWindow]) -> Result<Vec<Tensor>> {
        self.feed_order()
            .iter()
            .map(|&k| {
                let mut data = Vec::with_capacity(batch.len() * EMBEDDING_DIM);
                for ctx in batch {
                    data.extend_from_slice(ctx.embeddings[k].values());
                }
                Tensor::new(vec![batch.len(), EMBEDDING_DIM], data)
            })
            .collect()
    }

    fn unroll(&self, inputs: &[Tensor]) -> Result<Unrolled> {
        let n = inputs[0].shape()[0];
        let (mut s1, mut s2) = (LstmState::zeros(n, self.shape.hidden), LstmState::zeros(n, self.shape.hidden));
        let (mut traces1, mut traces2) = (Vec::new(), Vec::new());
        for x in inputs {
            let (next1, t1) = self.layer1.step(x, &s1)?;
            let (next2, t2) = self.layer2.step(&next1.h, &s2)?;
            traces1.push(t1);
            traces2.push(t2);
            s1 = next1;
            s2 = next2;
        }
        Ok(Unrolled { traces1, traces2, last: s2.h })
    }

    pub fn predict(&self, ctx: &ContextWindow) -> Result<Embedding> {
        Ok(self.predict_batch(&[ctx])?.pop().expect("one prediction"))
    }

    pub fn predict_batch(&self, batch: &[&ContextWindow]) -> Result<Vec<Embedding>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        for ctx in batch {
            self.check(ctx)?;
        }
        let unrolled = self.unroll(&self.step_inputs(batch)?)?;
        let out = self.head.forward(&unrolled.last)?;
        out.into_data().chunks(EMBEDDING_DIM).map(|c| Embedding::new(c.to_vec())).collect()
    }

    /// One minibatch: returns (MSE, gradients in [`LstmPredictor::params`] order).
    fn loss_and_grads(&self, batch: &[&ContextWindow], targets: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let inputs = self.step_inputs(batch)?;
        let unrolled = self.unroll(&inputs)?;
        let pred = self.head.forward(&unrolled.last)?;
        let loss = mse_loss(&pred, targets)?;
        let (dh_last, head_grads) = self.head.backward(&unrolled.last, &mse_grad(&pred, targets)?)?;

        let (n, hd) = (batch.len(), self.shape.hidden);
        let mut g1: Vec<Tensor> = self.layer1.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut g2: Vec<Tensor> = self.layer2.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        // layer 2 through time; its input gradients feed layer 1's outputs
        let mut dh1_out = vec![Tensor::zeros(&[n, hd]); CONTEXT_LEN];
        let (mut dh, mut dc) = (dh_last, Tensor::zeros(&[n, hd]));
        for t in (0..CONTEXT_LEN).rev() {
            let sg = self.layer2.step_backward(&unrolled.traces2[t], &dh, &dc, true)?;
            for (acc, g) in g2.iter_mut().zip(&sg.params) {
                acc.add_assign(g)?;
            }
            dh1_out[t] = sg.dx.expect("input gradient requested");
            dh = sg.dh_prev;
            dc = sg.dc_prev;
        }
        let (mut dh, mut dc) = (Tensor::zeros(&[n, hd]), Tensor::zeros(&[n, hd]));
        for t in (0..CONTEXT_LEN).rev() {
            dh.add_assign(&dh1_out[t])?;
            let sg = self.layer1.step_backward(&unrolled.traces1[t], &dh, &dc, false)?;
            for (acc, g) in g1.iter_mut().zip(&sg.params) {
                acc.add_assign(g)?;
            }
            dh = sg.dh_prev;
            dc = sg.dc_prev;
        }
        let mut grads = g1;
        grads.extend(g2);
        grads.extend(head_grads);
        Ok((loss, grads))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.layer1.params();
        p.extend(self.layer2.params());
        p.extend([&self.head.weight, &self.head.bias]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.layer1.params_mut();
        p.extend(self.layer2.params_mut());
        p.extend([&mut self.head.weight, &mut self.head.bias]);
        p
    }

    fn layer_specs(shape: PredictorShape) -> Vec<LayerSpec> {
        vec![
            LayerSpec::LstmCell { inputs: EMBEDDING_DIM, hidden: shape.hidden },
            LayerSpec::LstmCell { inputs: shape.hidden, hidden: shape.hidden },
            LayerSpec::Dense { inputs: shape.hidden, units: EMBEDDING_DIM },
        ]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.direction.model_kind(),
            Self::layer_specs(self.shape),
            serde_json::json!({ "direction": self.direction, "shape": self.shape }),
            self.params().into_iter().cloned().collect(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let direction = match ck.model_kind.as_str() {
            "lstm_forward" => Direction::Forward,
            "lstm_backward" => Direction::Backward,
            other => return Err(Error::InvalidCheckpoint(format!("model kind {other:?} is not a predictor"))),
        };
        let shape: PredictorShape = serde_json::from_value(ck.header.meta["shape"].clone())
            .map_err(|e| Error::InvalidCheckpoint(format!("predictor shape: {e}")))?;
        if ck.header.layers != Self::layer_specs(shape) {
            return Err(Error::InvalidCheckpoint("unexpected predictor architecture".into()));
        }
        let mut model = LstmPredictor::new(direction, shape, 0)?;
        ck.restore_into(model.params_mut())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// A context window paired with the embedding it should predict.
#[derive(Clone, Debug)]
pub struct TrainingWindow {
    pub context: ContextWindow,
    pub target: Embedding,
}

/// Every 6-frame run of observed frames in `seq` (`embeddings[i]` belongs to
/// frame `i`) yields one window: `len - 5` for a clean sequence.
pub fn sequence_windows(seq: &GaitSequence, embeddings: &[Embedding], direction: Direction) -> Vec<TrainingWindow> {
    let observed = |i: usize| seq.frame(i).status() == FrameStatus::Observed;
    (0..seq.len())
        .filter(|&i| observed(i))
        .filter_map(|i| {
            let context = ContextWindow::gather(direction, i, seq.len(), |j| observed(j).then(|| &embeddings[j]))?;
            Some(TrainingWindow { context, target: embeddings[i].clone() })
        })
        .collect()
}

/// Encodes every frame of every sequence.
pub fn encode_corpus(corpus: &[GaitSequence], ae: &AutoencoderModel) -> Result<Vec<Vec<Embedding>>> {
    corpus
        .iter()
        .map(|seq| {
            let mut out = Vec::with_capacity(seq.len());
            for chunk in seq.frames().chunks(16) {
                out.extend(ae.encode_batch(&chunk.iter().collect::<Vec<_>>())?);
            }
            Ok(out)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorTrainConfig {
    pub shape: PredictorShape,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub saturation: Option<Saturation>,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            shape: PredictorShape::default(),
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            saturation: Some(Saturation::default()),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedPredictor {
    pub model: LstmPredictor,
    /// Mean embedding-space MSE of every epoch.
    pub history: Vec<f64>,
}

pub fn train_predictor(
    direction: Direction,
    corpus: &[GaitSequence],
    ae: &AutoencoderModel,
    config: &PredictorTrainConfig,
) -> Result<TrainedPredictor> {
    let embeddings = encode_corpus(corpus, ae)?;
    let windows: Vec<TrainingWindow> = corpus
        .iter()
        .zip(&embeddings)
        .flat_map(|(seq, emb)| sequence_windows(seq, emb, direction))
        .collect();
    train_predictor_on_windows(direction, &windows, config, &mut |_, _, _| ControlFlow::Continue(()))
}

pub fn train_predictor_on_windows(
    direction: Direction,
    windows: &[TrainingWindow],
    config: &PredictorTrainConfig,
    hook: EpochHook<'_, LstmPredictor>,
) -> Result<TrainedPredictor> {
    if windows.is_empty() {
        return Err(Error::Empty("no 6-frame observed windows in the corpus".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    config.adam.validate()?;
    let mut model = LstmPredictor::new(direction, config.shape, config.seed)?;
    for w in windows {
        model.check(&w.context)?;
    }
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0157);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(windows.len(), config.batch_size, &mut rng) {
            let contexts: Vec<&ContextWindow> = batch.iter().map(|&i| &windows[i].context).collect();
            let mut target = Vec::with_capacity(batch.len() * EMBEDDING_DIM);
            for &i in &batch {
                target.extend_from_slice(windows[i].target.values());
            }
            let target = Tensor::new(vec![batch.len(), EMBEDDING_DIM], target)?;
            let (loss, grads) = model.loss_and_grads(&contexts, &target)?;
            total += loss * batch.len() as f64;
            adam_step(&mut model.params_mut(), &grads, &mut state, &config.adam)?;
        }
        let mean = total / windows.len() as f64;
        history.push(mean);
        log::info!("{direction} predictor epoch {}/{}: mean MSE {mean:.6}", epoch + 1, config.epochs);
        if hook(epoch, mean, &model).is_break() {
            break;
        }
        if config.saturation.is_some_and(|s| s.reached(&history)) {
            log::info!("{direction} predictor loss saturated after {} epochs", epoch + 1);
            break;
        }
    }
    Ok(TrainedPredictor { model, history })
}
