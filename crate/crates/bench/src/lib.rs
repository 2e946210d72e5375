//! Fixtures shared by the benchmarks.

use gaitrecon::silhouette::{GaitSequence, SilhouetteFrame};
use gaitrecon::synth::{synth_corpus, SynthConfig};

/// One synthetic walker, two cycles of 12 frames.
pub fn walker() -> GaitSequence {
    synth_corpus(&SynthConfig { subjects: 2, cycles_per_subject: 2, period: 12, seed: 1 })
        .expect("synthetic corpus")
        .remove(0)
}

pub fn frame() -> SilhouetteFrame {
    walker().frame(3).clone()
}
