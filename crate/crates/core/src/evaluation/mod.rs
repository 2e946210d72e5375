//! Dice and CMC metrics, occlusion-band sweeps and report emission.

mod metrics;
mod report;
mod sweep;

pub use metrics::{compute_cmc, dice, dice_values, CmcSeries, DiceMode, DiceResult, RankedQuery};
pub use report::{
    emit_report, load_report, markdown_table, report_json, EmittedFiles, CMC_PLOT_FILE, DICE_PLOT_FILE,
    RESULTS_FILE, TABLE_FILE,
};
pub use sweep::{
    corpus_hash, gallery_geis, probe_cycles, run_band_sweep, AblationModel, AblationRow, BandRow, EvaluationReport,
    RunMetadata, SweepConfig, REPORT_VERSION,
};
