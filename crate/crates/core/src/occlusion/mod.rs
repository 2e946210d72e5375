//! Synthetic occlusion at controlled degrees and occluded-frame detection.

mod detector;
mod synth;

pub use detector::{
    detect_occluded_frames, train_occlusion_detector, DetectorTrainConfig, FrameClassifier, HeuristicDetector,
    OcclusionDetector, DETECTOR_KIND,
};
pub use synth::{
    occluded_count, synthesize_occlusion, OcclusionBand, OcclusionMask, OcclusionMode, OcclusionSpec,
    MIN_OCCLUSION_LEN,
};
