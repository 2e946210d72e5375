use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OcclusionMask;
use crate::error::{Error, Result};
use crate::nn::{adam_step, bce_logit_grad, bce_loss, AdamConfig, AdamState, Checkpoint, LayerSpec, Mode, Sequential, Tensor};
use crate::silhouette::{GaitSequence, SilhouetteFrame, FRAME_HEIGHT, FRAME_WIDTH};

pub const DETECTOR_KIND: &str = "occlusion_cnn";

/// Foreground-count detector: a frame is occluded when it has fewer than
/// `min_foreground` pixels or its count deviates from the median of the
/// non-blank frames by more than `max_relative_deviation` of that median.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicDetector {
    pub min_foreground: usize,
    pub max_relative_deviation: f64,
}

impl Default for HeuristicDetector {
    fn default() -> Self {
        HeuristicDetector { min_foreground: 50, max_relative_deviation: 0.5 }
    }
}

impl HeuristicDetector {
    pub fn detect(&self, seq: &GaitSequence) -> OcclusionMask {
        let counts: Vec<usize> = seq.frames().iter().map(SilhouetteFrame::foreground).collect();
        // blank frames are excluded so heavy occlusion cannot drag the median down
        let mut sorted: Vec<usize> = counts.iter().copied().filter(|&c| c >= self.min_foreground).collect();
        sorted.sort_unstable();
        let median = match sorted.len() {
            0 => 0.0,
            n if n % 2 == 1 => sorted[n / 2] as f64,
            n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
        };
        let flagged = counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| {
                c < self.min_foreground
                    || (median > 0.0 && (c as f64 - median).abs() / median > self.max_relative_deviation)
            })
            .map(|(i, _)| i)
            .collect();
        OcclusionMask::new(flagged, seq.len()).expect("indices in range")
    }
}

/// Small CNN scoring a frame's probability of being occluded.
#[derive(Clone, Debug)]
pub struct FrameClassifier {
    net: Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig { epochs: 8, batch_size: 16, adam: AdamConfig::default(), seed: 0 }
    }
}

fn classifier_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { in_channels: 1, out_channels: 4, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { factor: 2 },
        LayerSpec::Conv2d { in_channels: 4, out_channels: 4, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { factor: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 4 * 38 * 50, units: 1 },
        LayerSpec::Sigmoid,
    ]
}

fn frames_tensor(frames: &[&SilhouetteFrame]) -> Tensor {
    let mut data = Vec::with_capacity(frames.len() * FRAME_HEIGHT * FRAME_WIDTH);
    for f in frames {
        data.extend(f.pixels().iter().map(|&p| p as f64));
    }
    Tensor::new(vec![frames.len(), 1, FRAME_HEIGHT, FRAME_WIDTH], data).expect("frame batch")
}

impl FrameClassifier {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(FrameClassifier { net: Sequential::from_specs(&classifier_specs(), &mut rng)? })
    }

    pub fn probability(&self, frame: &SilhouetteFrame) -> Result<f64> {
        let out = self.net.forward(&frames_tensor(&[frame]), Mode::Eval)?;
        Ok(out.data()[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            DETECTOR_KIND,
            self.net.specs(),
            serde_json::Value::Null,
            self.net.params().into_iter().cloned().collect(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(DETECTOR_KIND)?;
        if ck.header.layers != classifier_specs() {
            return Err(Error::InvalidCheckpoint("unexpected detector architecture".into()));
        }
        let mut model = FrameClassifier::new(0)?;
        ck.restore_into(model.net.params_mut())?;
        Ok(model)
    }
}

#[derive(Clone, Debug)]
pub enum OcclusionDetector {
    Heuristic(HeuristicDetector),
    Cnn(FrameClassifier),
}

impl Default for OcclusionDetector {
    fn default() -> Self {
        OcclusionDetector::Heuristic(HeuristicDetector::default())
    }
}

impl OcclusionDetector {
    pub fn load_cnn(path: &Path) -> Result<Self> {
        Ok(OcclusionDetector::Cnn(FrameClassifier::from_checkpoint(&Checkpoint::load(path)?)?))
    }
}

/// Indices of frames the detector flags as occluded.
pub fn detect_occluded_frames(seq: &GaitSequence, detector: &OcclusionDetector) -> Result<OcclusionMask> {
    match detector {
        OcclusionDetector::Heuristic(h) => Ok(h.detect(seq)),
        OcclusionDetector::Cnn(c) => {
            let mut flagged = Vec::new();
            for (i, f) in seq.frames().iter().enumerate() {
                if c.probability(f)? >= 0.5 {
                    flagged.push(i);
                }
            }
            OcclusionMask::new(flagged, seq.len())
        }
    }
}

/// Trains the CNN detector on `(frame, is_occluded)` pairs with BCE and Adam.
pub fn train_occlusion_detector(
    labeled: &[(SilhouetteFrame, bool)],
    config: &DetectorTrainConfig,
) -> Result<OcclusionDetector> {
    if labeled.is_empty() {
        return Err(Error::Empty("detector training set".into()));
    }
    let positives = labeled.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == labeled.len() {
        return Err(Error::SingleClass);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let mut model = FrameClassifier::new(config.seed)?;
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let frames: Vec<&SilhouetteFrame> = batch.iter().map(|&i| &labeled[i].0).collect();
            let x = frames_tensor(&frames);
            let target = Tensor::new(
                vec![batch.len(), 1],
                batch.iter().map(|&i| labeled[i].1 as u8 as f64).collect(),
            )?;
            let (y, acts) = model.net.forward_train(&x)?;
            total += bce_loss(&y, &target)?;
            // the final sigmoid is folded into the logit gradient
            let dlogit = bce_logit_grad(&y, &target)?;
            let grads = model.net.backward_logits_params(acts, &dlogit)?;
            let mut params = model.net.params_mut();
            adam_step(&mut params, &grads, &mut state, &config.adam)?;
        }
        log::debug!("detector epoch {epoch}: mean BCE {:.5}", total / labeled.len() as f64);
    }
    Ok(OcclusionDetector::Cnn(model))
}
