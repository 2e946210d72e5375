//! Silhouette frames and sequences, PGM/manifest storage, and geometric
//! normalization to the 150x200 working size.

mod frame;
mod manifest;
mod normalize;
pub mod pgm;

pub use frame::{
    validate_cycles, BinaryImage, FrameStatus, GaitSequence, SilhouetteFrame, FRAME_HEIGHT, FRAME_PIXELS,
    FRAME_WIDTH,
};
pub use manifest::{
    load_manifest, load_sequence, save_corpus, save_sequence, ManifestEntry, SequenceManifest, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use normalize::{centroid_column, normalize_frame};
