//! Gait energy images, cycle segmentation and the forest identity classifier.

mod cycles;
mod forest;
mod gei;

pub use cycles::{segment_cycles, stride_width_signal, CycleSegmentation};
pub use forest::{
    classify, train_forest, train_forest_features, ForestConfig, ForestModel, Node, Recognizer, Tree, FOREST_MAGIC,
    FOREST_VERSION,
};
pub use gei::{
    compute_gei, compute_gei_refs, cycle_gei, downsample_gei, GaitEnergyImage, OccludedFrames, DOWNSAMPLE,
    FEATURE_DIM, FEATURE_HEIGHT, FEATURE_WIDTH,
};
