//! Convolutional autoencoder: 150x200 silhouette <-> 15200-d embedding.

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

pub const EMBEDDING_DIM: usize = 15200;
pub const LATENT_SHAPE: [usize; 3] = [8, 38, 50];
pub const AUTOENCODER_KIND: &str = "autoencoder";

/// Flattened encoder feature map.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::shape(EMBEDDING_DIM, values.len()));
        }
        Ok(Embedding(values))
    }

    pub fn zeros() -> Self {
        Embedding(vec![0.0; EMBEDDING_DIM])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::fmt::Debug for Embedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let norm = self.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        write!(f, "Embedding(dim={}, l2={norm:.4})", self.0.len())
    }
}

pub fn encoder_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { in_channels: 1, out_channels: 32, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { factor: 2 },
        LayerSpec::Conv2d { in_channels: 32, out_channels: 8, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { factor: 2 },
        LayerSpec::Flatten,
    ]
}

pub fn decoder_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Reshape { shape: LATENT_SHAPE.to_vec() },
        LayerSpec::Upsample2dNearest { factor: 2 },
        LayerSpec::Conv2d { in_channels: 8, out_channels: 8, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Upsample2dNearest { factor: 2 },
        LayerSpec::Conv2d { in_channels: 8, out_channels: 32, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::CropRows { rows: 1 },
        LayerSpec::Conv2d { in_channels: 32, out_channels: 1, kernel: 3 },
        LayerSpec::Sigmoid,
    ]
}

#[derive(Clone, Debug)]
pub struct AutoencoderModel {
    encoder: Sequential,
    decoder: Sequential,
}

/// Stacks frames into an `[N, 1, 150, 200]` batch.
pub(crate) fn frame_batch(frames: &[&SilhouetteFrame]) -> Tensor {
    let mut data = Vec::with_capacity(frames.len() * FRAME_PIXELS);
    for f in frames {
        data.extend(f.pixels().iter().map(|&p| p as f64));
    }
    Tensor::new(vec![frames.len(), 1, FRAME_HEIGHT, FRAME_WIDTH], data).expect("frame batch")
}

impl AutoencoderModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = AutoencoderModel {
            encoder: Sequential::from_specs(&encoder_specs(), &mut rng)?,
            decoder: Sequential::from_specs(&decoder_specs(), &mut rng)?,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let enc = self.encoder.shape_trace(&[1, 1, FRAME_HEIGHT, FRAME_WIDTH])?;
        let latent: Vec<usize> = [1].into_iter().chain(LATENT_SHAPE).collect();
        if enc[enc.len() - 2] != latent || enc.last() != Some(&vec![1, EMBEDDING_DIM]) {
            return Err(Error::shape(format!("{latent:?} then [1, {EMBEDDING_DIM}]"), format!("{enc:?}")));
        }
        let dec = self.decoder.shape_trace(&[1, EMBEDDING_DIM])?;
        if dec.last() != Some(&vec![1, 1, FRAME_HEIGHT, FRAME_WIDTH]) {
            return Err(Error::shape("[1, 1, 150, 200]", format!("{:?}", dec.last())));
        }
        Ok(())
    }

    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn decoder(&self) -> &Sequential {
        &self.decoder
    }

    pub fn encode(&self, frame: &SilhouetteFrame) -> Result<Embedding> {
        Ok(self.encode_batch(&[frame])?.pop().expect("one embedding"))
    }

    pub fn encode_batch(&self, frames: &[&SilhouetteFrame]) -> Result<Vec<Embedding>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.encoder.forward(&frame_batch(frames), Mode::Eval)?;
        Ok(out.into_data().chunks(EMBEDDING_DIM).map(|c| Embedding(c.to_vec())).collect())
    }

    /// Per-pixel foreground probabilities, row-major 150x200.
    pub fn decode(&self, e: &Embedding) -> Result<Vec<f64>> {
        if e.0.len() != EMBEDDING_DIM {
            return Err(Error::shape(EMBEDDING_DIM, e.0.len()));
        }
        let x = Tensor::new(vec![1, EMBEDDING_DIM], e.0.clone())?;
        Ok(self.decoder.forward(&x, Mode::Eval)?.into_data())
    }

    /// Decoded grid thresholded at 0.5.
    pub fn decode_binary(&self, e: &Embedding) -> Result<SilhouetteFrame> {
        SilhouetteFrame::from_scores(&self.decode(e)?, 0.5, FrameStatus::Reconstructed)
    }

    pub fn reconstruct(&self, frame: &SilhouetteFrame) -> Result<Vec<f64>> {
        self.decode(&self.encode(frame)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut layers = self.encoder.specs();
        layers.extend(self.decoder.specs());
        let tensors = self.encoder.params().into_iter().chain(self.decoder.params()).cloned().collect();
        Checkpoint::new(AUTOENCODER_KIND, layers, serde_json::Value::Null, tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(AUTOENCODER_KIND)?;
        let mut expected = encoder_specs();
        expected.extend(decoder_specs());
        if ck.header.layers != expected {
            return Err(Error::InvalidCheckpoint("unexpected autoencoder architecture".into()));
        }
        let mut model = AutoencoderModel::new(0)?;
        let AutoencoderModel { encoder, decoder } = &mut model;
        ck.restore_into(encoder.params_mut().into_iter().chain(decoder.params_mut()).collect())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub saturation: Option<Saturation>,
    pub seed: u64,
}

impl Default for AutoencoderTrainConfig {
    fn default() -> Self {
        AutoencoderTrainConfig {
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            saturation: Some(Saturation::default()),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedAutoencoder {
    pub model: AutoencoderModel,
    /// Mean per-pixel BCE of every epoch.
    pub history: Vec<f64>,
}

pub fn train_autoencoder(corpus: &[SilhouetteFrame], config: &AutoencoderTrainConfig) -> Result<TrainedAutoencoder> {
    train_autoencoder_with(corpus, config, &mut |_, _, _| ControlFlow::Continue(()))
}

/// Like [`train_autoencoder`], calling `hook` after each epoch; the hook can
/// stop training early.
pub fn train_autoencoder_with(
    corpus: &[SilhouetteFrame],
    config: &AutoencoderTrainConfig,
    hook: EpochHook<'_, AutoencoderModel>,
) -> Result<TrainedAutoencoder> {
    if corpus.is_empty() {
        return Err(Error::Empty("autoencoder corpus".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    config.adam.validate()?;
    let mut model = AutoencoderModel::new(config.seed)?;
    let mut enc_state = AdamState::default();
    let mut dec_state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ae00);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(corpus.len(), config.batch_size, &mut rng) {
            let frames: Vec<&SilhouetteFrame> = batch.iter().map(|&i| &corpus[i]).collect();
            let x = frame_batch(&frames);
            let (z, enc_acts) = model.encoder.forward_train(&x)?;
            let (y, dec_acts) = model.decoder.forward_train(&z)?;
            total += bce_loss(&y, &x)?;
            let dlogit = bce_logit_grad(&y, &x)?;
            let (dz, dec_grads) = model.decoder.backward_logits(dec_acts, &dlogit)?;
            let enc_grads = model.encoder.backward_params(enc_acts, &dz)?;
            adam_step(&mut model.decoder.params_mut(), &dec_grads, &mut dec_state, &config.adam)?;
            adam_step(&mut model.encoder.params_mut(), &enc_grads, &mut enc_state, &config.adam)?;
        }
        let mean = total / (corpus.len() * FRAME_PIXELS) as f64;
        history.push(mean);
        log::info!("autoencoder epoch {}/{}: mean BCE {mean:.6}", epoch + 1, config.epochs);
        if hook(epoch, mean, &model).is_break() {
            break;
        }
        if config.saturation.is_some_and(|s| s.reached(&history)) {
            log::info!("autoencoder loss saturated after {} epochs", epoch + 1);
            break;
        }
    }
    Ok(TrainedAutoencoder { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_pipeline() {
        let ae = AutoencoderModel::new(1).unwrap();
        let enc = ae.encoder().shape_trace(&[1, 1, 150, 200]).unwrap();
        assert_eq!(enc[3], vec![1, 32, 75, 100]);
        assert_eq!(enc[6], vec![1, 8, 38, 50]);
        assert_eq!(enc[7], vec![1, 15200]);
        let dec = ae.decoder().shape_trace(&[1, 15200]).unwrap();
        assert_eq!(dec[7], vec![1, 32, 152, 200]);
        assert_eq!(dec[8], vec![1, 32, 150, 200]);
        assert_eq!(dec.last().unwrap(), &vec![1, 1, 150, 200]);
    }

    #[test]
    fn blank_frame_with_zero_biases_embeds_to_zero() {
        let ae = AutoencoderModel::new(2).unwrap();
        let e = ae.encode(&SilhouetteFrame::blank(FrameStatus::Observed)).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_rejects_wrong_length_and_is_deterministic() {
        let ae = AutoencoderModel::new(3).unwrap();
        assert!(Embedding::new(vec![0.0; 100]).is_err());
        let e = Embedding::new((0..EMBEDDING_DIM).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
        let a = ae.decode(&e).unwrap();
        assert_eq!(a, ae.decode(&e).unwrap());
        assert_eq!(a.len(), FRAME_PIXELS);
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            train_autoencoder(&[], &AutoencoderTrainConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let ae = AutoencoderModel::new(4).unwrap();
        let bytes = ae.to_checkpoint().to_bytes().unwrap();
        let back = AutoencoderModel::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(bytes, back.to_checkpoint().to_bytes().unwrap());
    }
}
