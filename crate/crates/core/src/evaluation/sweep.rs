use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{compute_cmc, dice, CmcSeries, DiceMode, RankedQuery};
use crate::error::{Error, Result};
use crate::fusion::{encode_sequence, reconstruct_with_embeddings, Estimate, ReconstructOptions, ReconstructionModels};
use crate::autoencoder::Embedding;
use crate::occlusion::{synthesize_occlusion, OcclusionBand, OcclusionSpec};
use crate::recognition::{cycle_gei, segment_cycles, GaitEnergyImage, OccludedFrames, Recognizer};
use crate::silhouette::{FrameStatus, GaitSequence, FRAME_PIXELS};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub bands: Vec<OcclusionBand>,
    pub seed: u64,
    /// Leading cycles of each sequence reserved for the gallery; the rest are probes.
    pub gallery_cycles: usize,
    pub dice_mode: DiceMode,
    pub reconstruct: ReconstructOptions,
    pub occluded_frames: OccludedFrames,
    pub contiguous: bool,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            bands: OcclusionBand::standard(),
            seed: 0,
            gallery_cycles: 2,
            dice_mode: DiceMode::Soft,
            reconstruct: ReconstructOptions::default(),
            occluded_frames: OccludedFrames::Skip,
            contiguous: false,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: OcclusionBand,
    pub label: String,
    /// Fused reconstruction vs ground truth.
    pub mean_dice: f64,
    pub mean_dice_forward: f64,
    pub mean_dice_backward: f64,
    pub rank1_accuracy: f64,
    pub probes: usize,
    pub occluded_frames: usize,
    pub unreconstructed_frames: usize,
    pub cmc: CmcSeries,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationModel {
    #[serde(rename = "M1")]
    Forward,
    #[serde(rename = "M2")]
    Backward,
    #[serde(rename = "fused")]
    Fused,
}

impl AblationModel {
    pub fn label(&self) -> &'static str {
        match self {
            AblationModel::Forward => "M1 (forward)",
            AblationModel::Backward => "M2 (backward)",
            AblationModel::Fused => "fused",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: AblationModel,
    pub mean_dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub corpus_hash: String,
    pub sequences: usize,
    /// Checkpoint name to SHA-256 of its bytes.
    #[serde(default)]
    pub checkpoints: BTreeMap<String, String>,
    /// Resolved run configuration, stamped by the pipeline.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub dice_mode: DiceMode,
    pub bands: Vec<BandRow>,
    /// Pooled over every band with nonzero occlusion.
    pub ablation: Vec<AblationRow>,
    pub clean_rank1: f64,
    pub metadata: RunMetadata,
}

impl EvaluationReport {
    pub fn ablation_dice(&self, model: AblationModel) -> Option<f64> {
        self.ablation.iter().find(|r| r.model == model).map(|r| r.mean_dice)
    }
}

/// Stable hash of subject/sequence ids, statuses, cycles and pixels.
pub fn corpus_hash(corpus: &[GaitSequence]) -> String {
    let mut h = Sha256::new();
    for seq in corpus {
        h.update(seq.subject_id().as_bytes());
        h.update([0]);
        h.update(seq.sequence_id().as_bytes());
        h.update([0]);
        h.update((seq.len() as u64).to_le_bytes());
        for &(s, e) in seq.cycle_boundaries().unwrap_or(&[]) {
            h.update((s as u64).to_le_bytes());
            h.update((e as u64).to_le_bytes());
        }
        for f in seq.frames() {
            h.update([f.status() as u8]);
            h.update(f.pixels());
        }
    }
    format!("{:x}", h.finalize())
}

fn derive_seed(seed: u64, a: usize, b: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ ((a as u64) << 32 | b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gei_or_blank(seq: &GaitSequence, cycle: (usize, usize), occluded: OccludedFrames) -> Result<GaitEnergyImage> {
    match cycle_gei(seq, cycle, occluded) {
        Err(Error::Empty(_)) => GaitEnergyImage::new(vec![0.0; FRAME_PIXELS], 0),
        other => other,
    }
}

/// Probe cycles of a clean sequence: everything after the gallery cycles.
pub fn probe_cycles(seq: &GaitSequence, gallery_cycles: usize) -> Vec<(usize, usize)> {
    segment_cycles(seq).cycles.into_iter().skip(gallery_cycles).collect()
}

/// Clean GEIs of the first `gallery_cycles` cycles of every sequence,
/// labelled by subject: the recognizer's training set.
pub fn gallery_geis(corpus: &[GaitSequence], gallery_cycles: usize) -> Result<Vec<(GaitEnergyImage, String)>> {
    let mut out = Vec::new();
    for seq in corpus {
        for cycle in segment_cycles(seq).cycles.into_iter().take(gallery_cycles) {
            out.push((cycle_gei(seq, cycle, OccludedFrames::Skip)?, seq.subject_id().to_string()));
        }
    }
    Ok(out)
}

struct ProbeOutcome {
    dice: [f64; 3],
    query: RankedQuery,
}

struct SequenceOutcome {
    probes: Vec<ProbeOutcome>,
    occluded: usize,
    unreconstructed: usize,
}

fn evaluate_sequence(
    clean: &GaitSequence,
    encoded: &[Embedding],
    band: OcclusionBand,
    occlusion_seed: u64,
    models: &ReconstructionModels<'_>,
    recognizer: &dyn Recognizer,
    config: &SweepConfig,
) -> Result<SequenceOutcome> {
    let mut spec = OcclusionSpec::new(band, occlusion_seed);
    spec.contiguous = config.contiguous;
    let (occluded, mask) = synthesize_occlusion(clean, &spec)?;
    let options = ReconstructOptions { single_direction: None, ..config.reconstruct };
    let rec = reconstruct_with_embeddings(&occluded, &mask, encoded, models, &options)?;
    let variants = [rec.assemble(Estimate::Fused), rec.assemble(Estimate::Forward), rec.assemble(Estimate::Backward)];
    let mut probes = Vec::new();
    for cycle in probe_cycles(clean, config.gallery_cycles) {
        let truth = cycle_gei(clean, cycle, OccludedFrames::Skip)?;
        let mut scores = [0.0; 3];
        let mut fused_gei = None;
        for (k, seq) in variants.iter().enumerate() {
            let g = gei_or_blank(seq, cycle, config.occluded_frames)?;
            scores[k] = dice(&g, &truth, config.dice_mode)?.score;
            if k == 0 {
                fused_gei = Some(g);
            }
        }
        let ranked = recognizer.rank(&fused_gei.expect("fused variant evaluated"))?;
        probes.push(ProbeOutcome {
            dice: scores,
            query: (ranked.into_iter().map(|(id, _)| id).collect(), clean.subject_id().to_string()),
        });
    }
    Ok(SequenceOutcome { probes, occluded: mask.len(), unreconstructed: rec.unreconstructable().len() })
}

fn check_ground_truth(corpus: &[GaitSequence], gallery_cycles: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation corpus".into()));
    }
    for seq in corpus {
        if seq.frames().iter().any(|f| f.status() != FrameStatus::Observed) {
            return Err(Error::InvalidParameter(format!(
                "{}/{} is not clean ground truth",
                seq.subject_id(),
                seq.sequence_id()
            )));
        }
    }
    if corpus.iter().all(|s| probe_cycles(s, gallery_cycles).is_empty()) {
        return Err(Error::Empty(format!("no probe cycles after {gallery_cycles} gallery cycles")));
    }
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Occludes every clean sequence at each band, reconstructs it, and scores
/// the probe cycles by GEI Dice against ground truth and by identification
/// rank. Work is spread over threads; results are aggregated in corpus
/// order, so the report depends only on the inputs and `config.seed`.
pub fn run_band_sweep(
    corpus: &[GaitSequence],
    models: &ReconstructionModels<'_>,
    recognizer: &(dyn Recognizer + Sync),
    config: &SweepConfig,
) -> Result<EvaluationReport> {
    if config.bands.is_empty() {
        return Err(Error::Empty("band list".into()));
    }
    check_ground_truth(corpus, config.gallery_cycles)?;

    let clean_queries: Vec<RankedQuery> = corpus
        .iter()
        .flat_map(|seq| probe_cycles(seq, config.gallery_cycles).into_iter().map(move |c| (seq, c)))
        .map(|(seq, c)| {
            let ranked = recognizer.rank(&cycle_gei(seq, c, OccludedFrames::Skip)?)?;
            Ok((ranked.into_iter().map(|(id, _)| id).collect(), seq.subject_id().to_string()))
        })
        .collect::<Result<_>>()?;
    let clean_rank1 = compute_cmc(&clean_queries, 1)?.accuracies[0];
    let classes = clean_queries.iter().map(|(r, _)| r.len()).min().unwrap_or(0);

    // every band occludes the same clean frames; encode them once
    let encoded: Vec<Vec<Embedding>> =
        corpus.iter().map(|seq| encode_sequence(seq, models.autoencoder)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..config.bands.len()).flat_map(|b| (0..corpus.len()).map(move |s| (b, s))).collect();
    let results: Mutex<Vec<Option<Result<SequenceOutcome>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(b, s)) = jobs.get(j) else { break };
                let out = evaluate_sequence(
                    &corpus[s],
                    &encoded[s],
                    config.bands[b],
                    derive_seed(config.seed, b, s),
                    models,
                    recognizer,
                    config,
                );
                results.lock().expect("sweep results lock")[j] = Some(out);
            });
        }
    });
    let mut outcomes = results.into_inner().expect("sweep results lock").into_iter();

    let mut bands = Vec::with_capacity(config.bands.len());
    let mut pooled: Vec<[f64; 3]> = Vec::new();
    for &band in &config.bands {
        let mut probes = Vec::new();
        let (mut occluded, mut unreconstructed) = (0, 0);
        for _ in 0..corpus.len() {
            let out = outcomes.next().flatten().expect("every job ran")?;
            occluded += out.occluded;
            unreconstructed += out.unreconstructed;
            probes.extend(out.probes);
        }
        let queries: Vec<RankedQuery> = probes.iter().map(|p| p.query.clone()).collect();
        let cmc = compute_cmc(&queries, classes)?;
        if band.high > 0.0 {
            pooled.extend(probes.iter().map(|p| p.dice));
        }
        bands.push(BandRow {
            band,
            label: band.label(),
            mean_dice: mean(probes.iter().map(|p| p.dice[0])),
            mean_dice_forward: mean(probes.iter().map(|p| p.dice[1])),
            mean_dice_backward: mean(probes.iter().map(|p| p.dice[2])),
            rank1_accuracy: cmc.accuracies[0],
            probes: probes.len(),
            occluded_frames: occluded,
            unreconstructed_frames: unreconstructed,
            cmc,
        });
    }
    let ablation = if pooled.is_empty() {
        Vec::new()
    } else {
        [(AblationModel::Forward, 1), (AblationModel::Backward, 2), (AblationModel::Fused, 0)]
            .into_iter()
            .map(|(model, k)| AblationRow { model, mean_dice: mean(pooled.iter().map(|d| d[k])) })
            .collect()
    };
    Ok(EvaluationReport {
        version: REPORT_VERSION,
        dice_mode: config.dice_mode,
        bands,
        ablation,
        clean_rank1,
        metadata: RunMetadata {
            seed: config.seed,
            corpus_hash: corpus_hash(corpus),
            sequences: corpus.len(),
            checkpoints: BTreeMap::new(),
            config: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_job() {
        let seeds: std::collections::BTreeSet<u64> =
            (0..5).flat_map(|b| (0..20).map(move |s| derive_seed(7, b, s))).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
    }

    #[test]
    fn corpus_hash_sees_pixels() {
        let frames = vec![crate::silhouette::SilhouetteFrame::blank(FrameStatus::Observed); 3];
        let a = GaitSequence::new("s", "q", frames.clone());
        let mut b = a.clone();
        let mut px = vec![0u8; FRAME_PIXELS];
        px[5] = 1;
        b.frames_mut()[1] = crate::silhouette::SilhouetteFrame::new(px, FrameStatus::Observed).unwrap();
        assert_ne!(corpus_hash(&[a.clone()]), corpus_hash(&[b]));
        assert_eq!(corpus_hash(&[a.clone()]), corpus_hash(&[a]));
    }
}
