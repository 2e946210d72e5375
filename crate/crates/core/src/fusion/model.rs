use std::ops::ControlFlow;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, bce_logit_grad, bce_loss, minibatches, AdamConfig, AdamState, Checkpoint, EpochHook, LayerSpec,
    Mode, Saturation, Sequential, Tensor,
};
use crate::silhouette::{FrameStatus, SilhouetteFrame, FRAME_HEIGHT, FRAME_PIXELS, FRAME_WIDTH};

pub const FUSION_KIND: &str = "fusion";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionShape {
    /// Channels of every hidden feature map.
    pub width: usize,
    /// Residual blocks, each followed by a plain convolution.
    pub block_count: usize,
}

impl Default for FusionShape {
    fn default() -> Self {
        FusionShape { width: 16, block_count: 3 }
    }
}

impl FusionShape {
    pub fn specs(&self) -> Vec<LayerSpec> {
        let w = self.width;
        let mut specs = vec![LayerSpec::Conv2d { in_channels: 2, out_channels: w, kernel: 3 }, LayerSpec::Relu];
        for _ in 0..self.block_count {
            specs.push(LayerSpec::ResidualBlock { channels: w, kernel: 3 });
            specs.push(LayerSpec::Conv2d { in_channels: w, out_channels: w, kernel: 3 });
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Conv2d { in_channels: w, out_channels: 1, kernel: 3 });
        specs.push(LayerSpec::Sigmoid);
        specs
    }
}

/// Residual CNN merging the binarized forward and backward predictions.
#[derive(Clone, Debug)]
pub struct FusionModel {
    shape: FusionShape,
    net: Sequential,
}

fn pair_batch(pairs: &[(&SilhouetteFrame, &SilhouetteFrame)]) -> Tensor {
    let mut data = Vec::with_capacity(pairs.len() * 2 * FRAME_PIXELS);
    for (a, b) in pairs {
        data.extend(a.pixels().iter().map(|&p| p as f64));
        data.extend(b.pixels().iter().map(|&p| p as f64));
    }
    Tensor::new(vec![pairs.len(), 2, FRAME_HEIGHT, FRAME_WIDTH], data).expect("pair batch")
}

impl FusionModel {
    pub fn new(shape: FusionShape, seed: u64) -> Result<Self> {
        if shape.width == 0 {
            return Err(Error::InvalidParameter("fusion width must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Sequential::from_specs(&shape.specs(), &mut rng)?;
        let out = net.shape_trace(&[1, 2, FRAME_HEIGHT, FRAME_WIDTH])?;
        debug_assert_eq!(out.last(), Some(&vec![1, 1, FRAME_HEIGHT, FRAME_WIDTH]));
        Ok(FusionModel { shape, net })
    }

    pub fn shape(&self) -> FusionShape {
        self.shape
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    /// Foreground probabilities for the pair, row-major 150x200.
    pub fn fuse_scores(&self, f1: &SilhouetteFrame, f2: &SilhouetteFrame) -> Result<Vec<f64>> {
        Ok(self.net.forward(&pair_batch(&[(f1, f2)]), Mode::Eval)?.into_data())
    }

    /// Fused frame thresholded at 0.5 (ties are foreground).
    pub fn fuse(&self, f1: &SilhouetteFrame, f2: &SilhouetteFrame) -> Result<SilhouetteFrame> {
        SilhouetteFrame::from_scores(&self.fuse_scores(f1, f2)?, 0.5, FrameStatus::Reconstructed)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self.net.state().into_iter().cloned().collect();
        Checkpoint::new(FUSION_KIND, self.net.specs(), serde_json::json!({ "shape": self.shape }), tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(FUSION_KIND)?;
        let shape: FusionShape = serde_json::from_value(ck.header.meta["shape"].clone())
            .map_err(|e| Error::InvalidCheckpoint(format!("fusion shape: {e}")))?;
        if ck.header.layers != shape.specs() {
            return Err(Error::InvalidCheckpoint("unexpected fusion architecture".into()));
        }
        let mut model = FusionModel::new(shape, 0)?;
        model.net.load_state(&ck.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}


/// Forward prediction, backward prediction and the true frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionTriple {
    pub forward: SilhouetteFrame,
    pub backward: SilhouetteFrame,
    pub truth: SilhouetteFrame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub saturation: Option<Saturation>,
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig {
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            saturation: Some(Saturation::default()),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedFusion {
    pub model: FusionModel,
    /// Mean per-pixel BCE of every epoch.
    pub history: Vec<f64>,
}

pub fn train_fusion(model: FusionModel, triples: &[FusionTriple], config: &FusionTrainConfig) -> Result<TrainedFusion> {
    train_fusion_with(model, triples, config, &mut |_, _, _| ControlFlow::Continue(()))
}

pub fn train_fusion_with(
    mut model: FusionModel,
    triples: &[FusionTriple],
    config: &FusionTrainConfig,
    hook: EpochHook<'_, FusionModel>,
) -> Result<TrainedFusion> {
    if triples.is_empty() {
        return Err(Error::Empty("fusion training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    config.adam.validate()?;
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f05e);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(triples.len(), config.batch_size, &mut rng) {
            let pairs: Vec<_> = batch.iter().map(|&i| (&triples[i].forward, &triples[i].backward)).collect();
            let x = pair_batch(&pairs);
            let mut truth = Vec::with_capacity(batch.len() * FRAME_PIXELS);
            for &i in &batch {
                truth.extend(triples[i].truth.pixels().iter().map(|&p| p as f64));
            }
            let truth = Tensor::new(vec![batch.len(), 1, FRAME_HEIGHT, FRAME_WIDTH], truth)?;
            let (y, acts) = model.net.forward_train(&x)?;
            total += bce_loss(&y, &truth)?;
            let grads = model.net.backward_logits_params(acts, &bce_logit_grad(&y, &truth)?)?;
            adam_step(&mut model.net.params_mut(), &grads, &mut state, &config.adam)?;
        }
        let mean = total / (triples.len() * FRAME_PIXELS) as f64;
        history.push(mean);
        log::info!("fusion epoch {}/{}: mean BCE {mean:.6}", epoch + 1, config.epochs);
        if hook(epoch, mean, &model).is_break() {
            break;
        }
        if config.saturation.is_some_and(|s| s.reached(&history)) {
            log::info!("fusion loss saturated after {} epochs", epoch + 1);
            break;
        }
    }
    Ok(TrainedFusion { model, history })
}
