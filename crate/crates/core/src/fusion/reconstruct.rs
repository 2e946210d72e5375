use serde::{Deserialize, Serialize};

use super::model::{FusionModel, FusionTriple};
use crate::autoencoder::{AutoencoderModel, Embedding};
use crate::error::{Error, Result};
use crate::occlusion::OcclusionMask;
use crate::predictor::{ContextWindow, Direction, LstmPredictor};
use crate::silhouette::{FrameStatus, GaitSequence, SilhouetteFrame};

/// Which predictions an occluded frame can be rebuilt from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    Both,
    ForwardOnly,
    BackwardOnly,
    Unreconstructable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub index: usize,
    pub source: FrameSource,
}

/// Schedule of a reconstruction: the forward sweep visits occluded frames in
/// ascending order, the backward sweep in descending order, and each sweep
/// may only use observed frames or its own earlier outputs as context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionPlan {
    pub len: usize,
    pub entries: Vec<PlanEntry>,
    pub forward_order: Vec<usize>,
    pub backward_order: Vec<usize>,
}

impl ReconstructionPlan {
    pub fn source(&self, index: usize) -> Option<FrameSource> {
        self.entries.iter().find(|e| e.index == index).map(|e| e.source)
    }

    pub fn unreconstructable(&self) -> Vec<usize> {
        self.entries.iter().filter(|e| e.source == FrameSource::Unreconstructable).map(|e| e.index).collect()
    }
}

/// Frames each sweep can reach, in its own visiting order.
fn reachable(len: usize, mask: &OcclusionMask, direction: Direction) -> Vec<bool> {
    let mut available: Vec<bool> = (0..len).map(|i| !mask.contains(i)).collect();
    let mut order = mask.indices().to_vec();
    if direction == Direction::Backward {
        order.reverse();
    }
    let mut reached = vec![false; len];
    for i in order {
        if let Some(ix) = direction.context_indices(i, len) {
            if ix.iter().all(|&j| available[j]) {
                available[i] = true;
                reached[i] = true;
            }
        }
    }
    reached
}

pub fn plan_reconstruction(len: usize, mask: &OcclusionMask) -> ReconstructionPlan {
    let fwd = reachable(len, mask, Direction::Forward);
    let bwd = reachable(len, mask, Direction::Backward);
    let entries = mask
        .indices()
        .iter()
        .map(|&i| PlanEntry {
            index: i,
            source: match (fwd[i], bwd[i]) {
                (true, true) => FrameSource::Both,
                (true, false) => FrameSource::ForwardOnly,
                (false, true) => FrameSource::BackwardOnly,
                (false, false) => FrameSource::Unreconstructable,
            },
        })
        .collect();
    let forward_order = mask.indices().to_vec();
    let mut backward_order = forward_order.clone();
    backward_order.reverse();
    ReconstructionPlan { len, entries, forward_order, backward_order }
}

/// How a sweep turns a prediction into context for later frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPropagation {
    /// Decode, binarize and encode the reconstructed frame again.
    #[default]
    ReEncode,
    /// Reuse the predicted embedding as is.
    ReusePrediction,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructOptions {
    pub propagation: ContextPropagation,
    /// Run only one sweep and skip fusion.
    pub single_direction: Option<Direction>,
}

/// Frozen models used by a reconstruction.
#[derive(Clone, Copy)]
pub struct ReconstructionModels<'a> {
    pub autoencoder: &'a AutoencoderModel,
    pub forward: &'a LstmPredictor,
    pub backward: &'a LstmPredictor,
    pub fusion: &'a FusionModel,
}

impl ReconstructionModels<'_> {
    fn check(&self) -> Result<()> {
        for (model, want) in [(self.forward, Direction::Forward), (self.backward, Direction::Backward)] {
            if model.direction() != want {
                return Err(Error::DirectionMismatch { model: model.direction().to_string(), context: want.to_string() });
            }
        }
        Ok(())
    }
}

/// Which estimate to place in the occluded slots of a reconstructed sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    Fused,
    Forward,
    Backward,
}

/// Result of [`reconstruct_sequence`]: the output sequence plus every
/// per-frame intermediate, so single-direction variants need no rerun.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub sequence: GaitSequence,
    pub plan: ReconstructionPlan,
    /// Binarized forward-sweep prediction per frame.
    pub forward: Vec<Option<SilhouetteFrame>>,
    pub backward: Vec<Option<SilhouetteFrame>>,
    pub fused: Vec<Option<SilhouetteFrame>>,
    source_sequence: GaitSequence,
}

impl Reconstruction {
    pub fn unreconstructable(&self) -> Vec<usize> {
        self.plan.unreconstructable()
    }

    /// The input sequence with occluded slots filled by `estimate`. A
    /// single-direction estimate falls back to the opposite direction where
    /// its own context never exists (sequence boundaries).
    pub fn assemble(&self, estimate: Estimate) -> GaitSequence {
        let mut out = self.source_sequence.clone();
        for entry in &self.plan.entries {
            let i = entry.index;
            let (f, b, fused) = (&self.forward[i], &self.backward[i], &self.fused[i]);
            let pick = match estimate {
                Estimate::Fused => fused.as_ref().or(f.as_ref()).or(b.as_ref()),
                Estimate::Forward => f.as_ref().or(b.as_ref()),
                Estimate::Backward => b.as_ref().or(f.as_ref()),
            };
            let frames = out.frames_mut();
            frames[i] = match pick {
                Some(frame) => frame.clone().with_status(FrameStatus::Reconstructed),
                None => frames[i].clone().with_status(FrameStatus::Occluded),
            };
        }
        out
    }
}

fn validate_mask(seq: &GaitSequence, mask: &OcclusionMask) -> Result<()> {
    if let Some(&last) = mask.indices().last() {
        if last >= seq.len() {
            return Err(Error::InvalidParameter(format!("mask index {last} outside sequence of {}", seq.len())));
        }
    }
    if let Some(i) = (0..seq.len()).find(|&i| !mask.contains(i) && seq.frame(i).status() == FrameStatus::Occluded) {
        return Err(Error::InvalidParameter(format!("frame {i} is occluded but not in the mask")));
    }
    Ok(())
}

/// Embeddings of every unmasked frame, computed once and shared by both sweeps.
fn observed_embeddings(seq: &GaitSequence, mask: &OcclusionMask, ae: &AutoencoderModel) -> Result<Vec<Option<Embedding>>> {
    let visible: Vec<usize> = (0..seq.len()).filter(|&i| !mask.contains(i)).collect();
    let mut out = vec![None; seq.len()];
    for chunk in visible.chunks(16) {
        let frames: Vec<&SilhouetteFrame> = chunk.iter().map(|&i| seq.frame(i)).collect();
        for (&i, e) in chunk.iter().zip(ae.encode_batch(&frames)?) {
            out[i] = Some(e);
        }
    }
    Ok(out)
}

/// Encodes every frame of `seq`, for reuse across many masks of the same
/// sequence.
pub fn encode_sequence(seq: &GaitSequence, ae: &AutoencoderModel) -> Result<Vec<Embedding>> {
    let mut out = Vec::with_capacity(seq.len());
    for chunk in seq.frames().chunks(16) {
        out.extend(ae.encode_batch(&chunk.iter().collect::<Vec<_>>())?);
    }
    Ok(out)
}

fn masked_embeddings(embeddings: &[Embedding], mask: &OcclusionMask) -> Result<Vec<Option<Embedding>>> {
    Ok(embeddings.iter().enumerate().map(|(i, e)| (!mask.contains(i)).then(|| e.clone())).collect())
}

fn check_embeddings(seq: &GaitSequence, embeddings: &[Embedding]) -> Result<()> {
    if embeddings.len() != seq.len() {
        return Err(Error::shape(format!("{} embeddings", seq.len()), embeddings.len()));
    }
    Ok(())
}

/// One independent sweep; returns the binarized prediction of every frame it reached.
fn sweep(
    len: usize,
    mask: &OcclusionMask,
    observed: &[Option<Embedding>],
    ae: &AutoencoderModel,
    model: &LstmPredictor,
    propagation: ContextPropagation,
) -> Result<Vec<Option<SilhouetteFrame>>> {
    let direction = model.direction();
    let mut context = observed.to_vec();
    let mut out = vec![None; len];
    let mut order = mask.indices().to_vec();
    if direction == Direction::Backward {
        order.reverse();
    }
    for i in order {
        let Some(ctx) = ContextWindow::gather(direction, i, len, |j| context[j].as_ref()) else {
            continue;
        };
        let predicted = model.predict(&ctx)?;
        let frame = ae.decode_binary(&predicted)?;
        context[i] = Some(match propagation {
            ContextPropagation::ReEncode => ae.encode(&frame)?,
            ContextPropagation::ReusePrediction => predicted,
        });
        out[i] = Some(frame);
    }
    Ok(out)
}

/// Rebuilds the frames listed in `mask`. Observed frames are copied
/// bit-identically; frames neither sweep can reach stay occluded.
pub fn reconstruct_sequence(
    seq: &GaitSequence,
    mask: &OcclusionMask,
    models: &ReconstructionModels<'_>,
    options: &ReconstructOptions,
) -> Result<Reconstruction> {
    reconstruct_impl(seq, mask, models, options, || observed_embeddings(seq, mask, models.autoencoder))
}

/// [`reconstruct_sequence`] with the visible frames' embeddings supplied:
/// `embeddings[i]` must encode frame `i` of the unoccluded sequence. Entries
/// under the mask are ignored.
pub fn reconstruct_with_embeddings(
    seq: &GaitSequence,
    mask: &OcclusionMask,
    embeddings: &[Embedding],
    models: &ReconstructionModels<'_>,
    options: &ReconstructOptions,
) -> Result<Reconstruction> {
    check_embeddings(seq, embeddings)?;
    reconstruct_impl(seq, mask, models, options, || masked_embeddings(embeddings, mask))
}

fn reconstruct_impl(
    seq: &GaitSequence,
    mask: &OcclusionMask,
    models: &ReconstructionModels<'_>,
    options: &ReconstructOptions,
    observed: impl FnOnce() -> Result<Vec<Option<Embedding>>>,
) -> Result<Reconstruction> {
    models.check()?;
    validate_mask(seq, mask)?;
    let len = seq.len();
    let mut source_sequence = seq.clone();
    for &i in mask.indices() {
        source_sequence.frames_mut()[i].set_status(FrameStatus::Occluded);
    }
    let mut plan = plan_reconstruction(len, mask);
    let none = || vec![None; len];
    if mask.is_empty() {
        return Ok(Reconstruction {
            sequence: source_sequence.clone(),
            plan,
            forward: none(),
            backward: none(),
            fused: none(),
            source_sequence,
        });
    }
    let observed = observed()?;
    let run = |d: Direction| -> Result<Vec<Option<SilhouetteFrame>>> {
        if options.single_direction.is_some_and(|only| only != d) {
            return Ok(none());
        }
        let model = if d == Direction::Forward { models.forward } else { models.backward };
        sweep(len, mask, &observed, models.autoencoder, model, options.propagation)
    };
    let forward = run(Direction::Forward)?;
    let backward = run(Direction::Backward)?;
    let mut fused = none();
    if options.single_direction.is_none() {
        for &i in mask.indices() {
            if let (Some(f), Some(b)) = (&forward[i], &backward[i]) {
                fused[i] = Some(models.fusion.fuse(f, b)?);
            }
        }
    } else {
        // sources reflect what this run actually produced
        for e in &mut plan.entries {
            e.source = match (forward[e.index].is_some(), backward[e.index].is_some()) {
                (true, _) => FrameSource::ForwardOnly,
                (_, true) => FrameSource::BackwardOnly,
                _ => FrameSource::Unreconstructable,
            };
        }
    }
    let mut rec = Reconstruction { sequence: source_sequence.clone(), plan, forward, backward, fused, source_sequence };
    let estimate = match options.single_direction {
        None => Estimate::Fused,
        Some(Direction::Forward) => Estimate::Forward,
        Some(Direction::Backward) => Estimate::Backward,
    };
    rec.sequence = rec.assemble(estimate);
    let missing = rec.sequence.occluded_indices();
    if !missing.is_empty() {
        log::warn!(
            "{}/{}: frames {missing:?} could not be reconstructed",
            seq.subject_id(),
            seq.sequence_id()
        );
    }
    Ok(rec)
}

/// Runs both sweeps over `seq` with `mask` and returns a triple for every
/// frame both directions reached, with the clean frame as ground truth.
pub fn fusion_triples(
    clean: &GaitSequence,
    mask: &OcclusionMask,
    models: &ReconstructionModels<'_>,
    propagation: ContextPropagation,
) -> Result<Vec<FusionTriple>> {
    triples_impl(clean, mask, models, propagation, || observed_embeddings(clean, mask, models.autoencoder))
}

/// [`fusion_triples`] with `embeddings[i]` encoding frame `i` of `clean`.
pub fn fusion_triples_with_embeddings(
    clean: &GaitSequence,
    mask: &OcclusionMask,
    embeddings: &[Embedding],
    models: &ReconstructionModels<'_>,
    propagation: ContextPropagation,
) -> Result<Vec<FusionTriple>> {
    check_embeddings(clean, embeddings)?;
    triples_impl(clean, mask, models, propagation, || masked_embeddings(embeddings, mask))
}

fn triples_impl(
    clean: &GaitSequence,
    mask: &OcclusionMask,
    models: &ReconstructionModels<'_>,
    propagation: ContextPropagation,
    observed: impl FnOnce() -> Result<Vec<Option<Embedding>>>,
) -> Result<Vec<FusionTriple>> {
    models.check()?;
    validate_mask(clean, mask)?;
    let observed = observed()?;
    let forward = sweep(clean.len(), mask, &observed, models.autoencoder, models.forward, propagation)?;
    let backward = sweep(clean.len(), mask, &observed, models.autoencoder, models.backward, propagation)?;
    Ok(mask
        .indices()
        .iter()
        .filter_map(|&i| {
            Some(FusionTriple {
                forward: forward[i].clone()?,
                backward: backward[i].clone()?,
                truth: clean.frame(i).clone(),
            })
        })
        .collect())
}
