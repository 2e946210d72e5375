use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaitrecon::occlusion::OcclusionBand;

#[derive(Parser, Debug)]
#[command(name = "gaitrecon", version, about = "Reconstruct occluded frames in gait silhouette sequences")]
pub struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true)]
    pub log_level: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic walker corpus
    Synth(SynthArgs),
    /// Blacken a band of frames in every sequence
    Occlude(OccludeArgs),
    /// Find occluded frames
    Detect(DetectArgs),
    /// Train the CNN occlusion detector on synthetic occlusions
    TrainDetector(TrainDetectorArgs),
    /// Train the frame autoencoder
    TrainAe(TrainAeArgs),
    /// Train a forward or backward embedding predictor
    TrainLstm(TrainLstmArgs),
    /// Train the fusion network
    TrainFusion(TrainFusionArgs),
    /// Rebuild occluded frames
    Reconstruct(ReconstructArgs),
    /// Write per-cycle gait energy images
    Gei(GeiArgs),
    /// Train the identity forest on gallery cycles
    TrainForest(TrainForestArgs),
    /// Rank subjects for each cycle of a corpus
    Classify(ClassifyArgs),
    /// Occlusion-band sweep: Dice and identification accuracy
    Evaluate(EvaluateArgs),
    /// Re-emit tables and plots from a results file
    Report(ReportArgs),
    /// Run every stage end to end
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PropagationArg {
    ReEncode,
    ReusePrediction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DiceModeArg {
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OccludedArg {
    Skip,
    Blank,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// Full-size models (1024-unit LSTMs)
    Full,
    /// Small models for a quick desk-scale run
    Toy,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub cycles: usize,
    #[arg(long, default_value_t = 12)]
    pub period: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OccludeArgs {
    /// Clean corpus manifest
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Fraction band as low:high, e.g. 0.05:0.10
    #[arg(long)]
    pub band: OcclusionBand,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Occlude one contiguous run per sequence
    #[arg(long)]
    pub contiguous: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// CNN detector checkpoint; the foreground-count heuristic when absent
    #[arg(long)]
    pub cnn: Option<PathBuf>,
    /// JSON file listing occluded indices per sequence
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainingArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Stop only after the epoch budget, ignoring loss saturation
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainDetectorArgs {
    /// Clean corpus manifest; occluded copies are synthesized from it
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "0.1:0.5")]
    pub band: OcclusionBand,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainAeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Use every n-th frame
    #[arg(long, default_value_t = 1)]
    pub frame_stride: usize,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainLstmArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ae: PathBuf,
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Feed backward contexts in temporal order instead of nearest-last
    #[arg(long)]
    pub temporal_backward: bool,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainFusionArgs {
    /// Clean corpus manifest; occluded copies are synthesized from it
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ae: PathBuf,
    #[arg(long)]
    pub m1: PathBuf,
    #[arg(long)]
    pub m2: PathBuf,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long, default_value = "0.1:0.3")]
    pub band: OcclusionBand,
    #[arg(long, default_value_t = 2)]
    pub occlusions_per_sequence: usize,
    #[arg(long)]
    pub max_triples: Option<usize>,
    #[arg(long, value_enum, default_value = "re-encode")]
    pub propagation: PropagationArg,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Manifest whose occluded frames are listed; see --detect otherwise
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ae: PathBuf,
    #[arg(long)]
    pub m1: PathBuf,
    #[arg(long)]
    pub m2: PathBuf,
    #[arg(long)]
    pub fusion: PathBuf,
    /// Run the heuristic detector instead of trusting manifest statuses
    #[arg(long)]
    pub detect: bool,
    #[arg(long, value_enum)]
    pub single_direction: Option<DirectionArg>,
    #[arg(long, value_enum, default_value = "re-encode")]
    pub propagation: PropagationArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GeiArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "skip")]
    pub occluded: OccludedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainForestArgs {
    /// Clean corpus manifest
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub gallery_cycles: usize,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub forest: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Candidates printed per cycle
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long, value_enum, default_value = "skip")]
    pub occluded: OccludedArg,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Clean corpus manifest with cycle boundaries
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated low:high bands
    #[arg(long, value_delimiter = ',', default_value = "0.05:0.10,0.10:0.20,0.20:0.30,0.30:0.40,0.40:0.50")]
    pub bands: Vec<OcclusionBand>,
    /// Directory with autoencoder.ckpt, lstm_forward.ckpt, lstm_backward.ckpt,
    /// fusion.ckpt and optionally forest.bin
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub gallery_cycles: usize,
    /// Trees for a forest trained on the fly when forest.bin is absent
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, value_enum, default_value = "soft")]
    pub dice_mode: DiceModeArg,
    #[arg(long, value_enum, default_value = "re-encode")]
    pub propagation: PropagationArg,
    #[arg(long, value_enum, default_value = "skip")]
    pub occluded: OccludedArg,
    #[arg(long)]
    pub contiguous: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Every field mirrors a key of the run config file and wins over it.
#[derive(Args, Debug, Default)]
pub struct PipelineArgs {
    /// Versioned JSON run config
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting point before the config file is applied
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Print the resolved config and exit
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = gaitrecon::pipeline::OUTPUT_ENV)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub ae_epochs: Option<usize>,
    #[arg(long)]
    pub ae_frame_stride: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lstm_epochs: Option<usize>,
    #[arg(long)]
    pub fusion_width: Option<usize>,
    #[arg(long)]
    pub fusion_blocks: Option<usize>,
    #[arg(long)]
    pub fusion_epochs: Option<usize>,
    #[arg(long)]
    pub fusion_max_triples: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub bands: Option<Vec<OcclusionBand>>,
    #[arg(long)]
    pub gallery_cycles: Option<usize>,
    #[arg(long, value_enum)]
    pub dice_mode: Option<DiceModeArg>,
    #[arg(long, value_enum)]
    pub propagation: Option<PropagationArg>,
    #[arg(long)]
    pub contiguous: Option<bool>,
    #[arg(long)]
    pub threads: Option<usize>,
}
