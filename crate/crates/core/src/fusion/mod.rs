//! Fusion of the two directional predictions and whole-sequence reconstruction.

mod model;
mod reconstruct;

pub use model::{train_fusion, train_fusion_with, FusionModel, FusionShape, FusionTrainConfig, FusionTriple, TrainedFusion, FUSION_KIND};
pub use reconstruct::{
    encode_sequence, fusion_triples, fusion_triples_with_embeddings, plan_reconstruction, reconstruct_sequence,
    reconstruct_with_embeddings, ContextPropagation, Estimate, FrameSource, PlanEntry,
    Reconstruction, ReconstructOptions, ReconstructionModels, ReconstructionPlan,
};
