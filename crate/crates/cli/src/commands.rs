use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitrecon::autoencoder::{train_autoencoder, AutoencoderModel, AutoencoderTrainConfig};
use gaitrecon::evaluation::{emit_report, gallery_geis, load_report, run_band_sweep, DiceMode, SweepConfig};
use gaitrecon::fusion::{
    reconstruct_sequence, train_fusion, ContextPropagation, FusionModel, FusionShape, FusionTrainConfig,
    ReconstructOptions, ReconstructionModels,
};
use gaitrecon::nn::AdamConfig;
use gaitrecon::occlusion::{
    detect_occluded_frames, synthesize_occlusion, train_occlusion_detector, DetectorTrainConfig, HeuristicDetector,
    OcclusionDetector, OcclusionMask, OcclusionSpec,
};
use gaitrecon::pipeline::{collect_fusion_triples, run_pipeline_detailed, FusionStage, RunConfig};
use gaitrecon::predictor::{train_predictor, Direction, LstmPredictor, PredictorShape, PredictorTrainConfig};
use gaitrecon::recognition::{cycle_gei, segment_cycles, train_forest, ForestConfig, ForestModel, OccludedFrames, Recognizer};
use gaitrecon::silhouette::{load_manifest, save_corpus, FrameStatus, GaitSequence, MANIFEST_FILE};
use gaitrecon::synth::{synth_corpus, SynthConfig};
use serde::Serialize;

use crate::args::*;

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Forward => Direction::Forward,
            DirectionArg::Backward => Direction::Backward,
        }
    }
}

impl From<PropagationArg> for ContextPropagation {
    fn from(p: PropagationArg) -> Self {
        match p {
            PropagationArg::ReEncode => ContextPropagation::ReEncode,
            PropagationArg::ReusePrediction => ContextPropagation::ReusePrediction,
        }
    }
}

impl From<DiceModeArg> for DiceMode {
    fn from(m: DiceModeArg) -> Self {
        match m {
            DiceModeArg::Soft => DiceMode::Soft,
            DiceModeArg::Hard => DiceMode::Hard,
        }
    }
}

impl From<OccludedArg> for OccludedFrames {
    fn from(o: OccludedArg) -> Self {
        match o {
            OccludedArg::Skip => OccludedFrames::Skip,
            OccludedArg::Blank => OccludedFrames::Blank,
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new().parse_filters(level).format_timestamp_secs().try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Pipeline(args) = cli.command {
        return pipeline(args, cli.log_level);
    }
    init_logging(cli.log_level.as_deref().unwrap_or("info"));
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Occlude(a) => occlude(a),
        Command::Detect(a) => detect(a),
        Command::TrainDetector(a) => train_detector(a),
        Command::TrainAe(a) => train_ae(a),
        Command::TrainLstm(a) => train_lstm(a),
        Command::TrainFusion(a) => train_fusion_cmd(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Gei(a) => gei(a),
        Command::TrainForest(a) => train_forest_cmd(a),
        Command::Classify(a) => classify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::Pipeline(_) => unreachable!("handled above"),
    }
}

fn load(path: &Path) -> Result<Vec<GaitSequence>> {
    load_manifest(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn apply_training(t: &TrainingArgs, epochs: &mut usize, batch: &mut usize, adam: &mut AdamConfig) -> bool {
    if let Some(e) = t.epochs {
        *epochs = e;
    }
    if let Some(b) = t.batch_size {
        *batch = b;
    }
    if let Some(lr) = t.learning_rate {
        adam.learning_rate = lr;
    }
    !t.no_early_stop
}

fn synth(a: SynthArgs) -> Result<()> {
    let corpus = synth_corpus(&SynthConfig {
        subjects: a.subjects,
        cycles_per_subject: a.cycles,
        period: a.period,
        seed: a.seed,
    })?;
    save_corpus(&corpus, &a.out)?;
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn occlude(a: OccludeArgs) -> Result<()> {
    let corpus = load(&a.input)?;
    let mut out = Vec::with_capacity(corpus.len());
    for (i, seq) in corpus.iter().enumerate() {
        let mut spec = OcclusionSpec::new(a.band, a.seed.wrapping_add(i as u64));
        spec.contiguous = a.contiguous;
        let (occluded, mask) = synthesize_occlusion(seq, &spec)
            .with_context(|| format!("occluding {}/{}", seq.subject_id(), seq.sequence_id()))?;
        log::info!("{}/{}: {} of {} frames occluded", seq.subject_id(), seq.sequence_id(), mask.len(), seq.len());
        out.push(occluded);
    }
    save_corpus(&out, &a.out)?;
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct DetectedSequence {
    subject_id: String,
    sequence_id: String,
    occluded_indices: Vec<usize>,
}

fn detect(a: DetectArgs) -> Result<()> {
    let detector = match &a.cnn {
        Some(path) => OcclusionDetector::load_cnn(path)?,
        None => OcclusionDetector::Heuristic(HeuristicDetector::default()),
    };
    let sequences = load(&a.input)?
        .iter()
        .map(|seq| {
            Ok(DetectedSequence {
                subject_id: seq.subject_id().into(),
                sequence_id: seq.sequence_id().into(),
                occluded_indices: detect_occluded_frames(seq, &detector)?.indices().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out, &serde_json::json!({"version": 1, "sequences": sequences}))
}

fn train_detector(a: TrainDetectorArgs) -> Result<()> {
    let mut labeled = Vec::new();
    for (i, seq) in load(&a.input)?.iter().enumerate() {
        let (occluded, mask) = synthesize_occlusion(seq, &OcclusionSpec::new(a.band, a.seed.wrapping_add(i as u64)))?;
        for (j, f) in seq.frames().iter().enumerate() {
            labeled.push((f.clone(), false));
            if mask.contains(j) {
                labeled.push((occluded.frame(j).clone(), true));
            }
        }
    }
    let config = DetectorTrainConfig { epochs: a.epochs, seed: a.seed, ..DetectorTrainConfig::default() };
    match train_occlusion_detector(&labeled, &config)? {
        OcclusionDetector::Cnn(model) => model.to_checkpoint().save(&a.out)?,
        OcclusionDetector::Heuristic(_) => bail!("detector training produced no network"),
    }
    println!("{}", a.out.display());
    Ok(())
}

fn train_ae(a: TrainAeArgs) -> Result<()> {
    let corpus = load(&a.input)?;
    let frames: Vec<_> = corpus
        .iter()
        .flat_map(|s| s.frames().iter().filter(|f| f.status() == FrameStatus::Observed).step_by(a.frame_stride.max(1)).cloned())
        .collect();
    let mut config = AutoencoderTrainConfig { seed: a.training.seed, ..Default::default() };
    if !apply_training(&a.training, &mut config.epochs, &mut config.batch_size, &mut config.adam) {
        config.saturation = None;
    }
    let trained = train_autoencoder(&frames, &config)?;
    trained.model.save(&a.out)?;
    log::info!("autoencoder trained for {} epochs on {} frames", trained.history.len(), frames.len());
    println!("{}", a.out.display());
    Ok(())
}

fn train_lstm(a: TrainLstmArgs) -> Result<()> {
    let corpus = load(&a.input)?;
    let ae = AutoencoderModel::load(&a.ae)?;
    let mut config = PredictorTrainConfig { seed: a.training.seed, ..Default::default() };
    config.shape = PredictorShape {
        hidden: a.hidden.unwrap_or(config.shape.hidden),
        reverse_backward: !a.temporal_backward,
    };
    if !apply_training(&a.training, &mut config.epochs, &mut config.batch_size, &mut config.adam) {
        config.saturation = None;
    }
    let trained = train_predictor(a.direction.into(), &corpus, &ae, &config)?;
    trained.model.save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn train_fusion_cmd(a: TrainFusionArgs) -> Result<()> {
    let corpus = load(&a.input)?;
    let ae = AutoencoderModel::load(&a.ae)?;
    let fwd = LstmPredictor::load(&a.m1)?;
    let bwd = LstmPredictor::load(&a.m2)?;
    let defaults = FusionShape::default();
    let shape = FusionShape {
        width: a.width.unwrap_or(defaults.width),
        block_count: a.blocks.unwrap_or(defaults.block_count),
    };
    let mut train = FusionTrainConfig { seed: a.training.seed, ..Default::default() };
    if !apply_training(&a.training, &mut train.epochs, &mut train.batch_size, &mut train.adam) {
        train.saturation = None;
    }
    let stage = FusionStage {
        shape,
        train: train.clone(),
        band: a.band,
        occlusions_per_sequence: a.occlusions_per_sequence,
        max_triples: a.max_triples,
    };
    let init = FusionModel::new(shape, train.seed)?;
    let models = ReconstructionModels { autoencoder: &ae, forward: &fwd, backward: &bwd, fusion: &init };
    let triples = collect_fusion_triples(&corpus, &stage, &models, a.propagation.into(), train.seed)?;
    log::info!("fusion training on {} triples", triples.len());
    let trained = train_fusion(init, &triples, &train)?;
    trained.model.save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct PlanSummary {
    subject_id: String,
    sequence_id: String,
    plan: gaitrecon::fusion::ReconstructionPlan,
    unreconstructable: Vec<usize>,
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let corpus = load(&a.input)?;
    let ae = AutoencoderModel::load(&a.ae)?;
    let fwd = LstmPredictor::load(&a.m1)?;
    let bwd = LstmPredictor::load(&a.m2)?;
    let fusion = FusionModel::load(&a.fusion)?;
    let models = ReconstructionModels { autoencoder: &ae, forward: &fwd, backward: &bwd, fusion: &fusion };
    let options =
        ReconstructOptions { propagation: a.propagation.into(), single_direction: a.single_direction.map(Into::into) };
    let detector = OcclusionDetector::default();
    let mut out = Vec::with_capacity(corpus.len());
    let mut plans = Vec::with_capacity(corpus.len());
    for seq in &corpus {
        let mask = if a.detect { detect_occluded_frames(seq, &detector)? } else { OcclusionMask::from_sequence(seq) };
        let rec = reconstruct_sequence(seq, &mask, &models, &options)
            .with_context(|| format!("reconstructing {}/{}", seq.subject_id(), seq.sequence_id()))?;
        plans.push(PlanSummary {
            subject_id: seq.subject_id().into(),
            sequence_id: seq.sequence_id().into(),
            unreconstructable: rec.unreconstructable(),
            plan: rec.plan.clone(),
        });
        out.push(rec.sequence);
    }
    save_corpus(&out, &a.out)?;
    write_json(&a.out.join("plan.json"), &plans)?;
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct GeiEntry {
    subject_id: String,
    sequence_id: String,
    cycle: (usize, usize),
    heuristic_cycles: bool,
    frames: usize,
    path: String,
}

fn gei(a: GeiArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for seq in load(&a.input)? {
        let seg = segment_cycles(&seq);
        for (k, &cycle) in seg.cycles.iter().enumerate() {
            let g = cycle_gei(&seq, cycle, a.occluded.into())?;
            let name = format!("{}_{}_c{k}.png", safe_name(seq.subject_id()), safe_name(seq.sequence_id()));
            g.save_png(&a.out.join(&name))?;
            entries.push(GeiEntry {
                subject_id: seq.subject_id().into(),
                sequence_id: seq.sequence_id().into(),
                cycle,
                heuristic_cycles: seg.heuristic,
                frames: g.cycle_frame_count(),
                path: name,
            });
        }
    }
    write_json(&a.out.join("gei.json"), &entries)
}

fn train_forest_cmd(a: TrainForestArgs) -> Result<()> {
    let corpus = load(&a.input)?;
    let gallery = gallery_geis(&corpus, a.gallery_cycles)?;
    let config = ForestConfig { trees: a.trees, seed: a.seed, ..ForestConfig::default() };
    let model = train_forest(&gallery, &config)?;
    model.save(&a.out)?;
    log::info!("forest: {} trees over {} classes from {} GEIs", model.trees.len(), model.classes.len(), gallery.len());
    println!("{}", a.out.display());
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let forest = ForestModel::load(&a.forest)?;
    for seq in load(&a.input)? {
        for cycle in segment_cycles(&seq).cycles {
            let ranked = forest.rank(&cycle_gei(&seq, cycle, a.occluded.into())?)?;
            let top: Vec<_> = ranked.into_iter().take(a.top).collect();
            println!(
                "{}",
                serde_json::json!({
                    "subject_id": seq.subject_id(),
                    "sequence_id": seq.sequence_id(),
                    "cycle": cycle,
                    "ranked": top,
                })
            );
        }
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let ae = AutoencoderModel::load(&a.models.join("autoencoder.ckpt"))?;
    let fwd = LstmPredictor::load(&a.models.join("lstm_forward.ckpt"))?;
    let bwd = LstmPredictor::load(&a.models.join("lstm_backward.ckpt"))?;
    let fusion = FusionModel::load(&a.models.join("fusion.ckpt"))?;
    let forest_path = a.models.join("forest.bin");
    let forest = if forest_path.exists() {
        ForestModel::load(&forest_path)?
    } else {
        log::info!("no forest.bin in {}; training one on the gallery cycles", a.models.display());
        train_forest(
            &gallery_geis(&corpus, a.gallery_cycles)?,
            &ForestConfig { trees: a.trees, seed: a.seed, ..ForestConfig::default() },
        )?
    };
    let models = ReconstructionModels { autoencoder: &ae, forward: &fwd, backward: &bwd, fusion: &fusion };
    let config = SweepConfig {
        bands: a.bands,
        seed: a.seed,
        gallery_cycles: a.gallery_cycles,
        dice_mode: a.dice_mode.into(),
        reconstruct: ReconstructOptions { propagation: a.propagation.into(), single_direction: None },
        occluded_frames: a.occluded.into(),
        contiguous: a.contiguous,
        threads: a.threads,
    };
    let report = run_band_sweep(&corpus, &models, &forest, &config)?;
    let files = emit_report(&report, &a.out)?;
    println!("{}", files.results.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let report = load_report(&a.results)?;
    let files = emit_report(&report, &a.out)?;
    println!("{}", files.table.display());
    Ok(())
}

/// Preset, then config file, then environment (output root only), then flags.
pub fn resolve_run_config(a: &PipelineArgs) -> Result<RunConfig> {
    let mut c = match (&a.config, a.preset) {
        (Some(path), _) => {
            let base = match a.preset {
                Some(PresetArg::Toy) => RunConfig::toy(),
                _ => RunConfig::default(),
            };
            let file: serde_json::Value = serde_json::from_slice(
                &fs::read(path).with_context(|| format!("reading config {}", path.display()))?,
            )?;
            let mut merged = serde_json::to_value(base)?;
            merge(&mut merged, file);
            let c: RunConfig = serde_json::from_value(merged).with_context(|| format!("parsing {}", path.display()))?;
            if c.version != gaitrecon::pipeline::RUN_CONFIG_VERSION {
                bail!("unsupported run config version {}", c.version);
            }
            c
        }
        (None, Some(PresetArg::Toy)) => RunConfig::toy(),
        (None, _) => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(a.seed, c.seed);
    if a.corpus.is_some() {
        c.corpus = a.corpus.clone();
    }
    set!(a.output, c.output);
    if a.checkpoints.is_some() {
        c.checkpoints = a.checkpoints.clone();
    }
    set!(a.subjects, c.synth.subjects);
    set!(a.cycles, c.synth.cycles_per_subject);
    set!(a.period, c.synth.period);
    set!(a.ae_epochs, c.autoencoder.train.epochs);
    set!(a.ae_frame_stride, c.autoencoder.frame_stride);
    set!(a.hidden, c.predictor.shape.hidden);
    set!(a.lstm_epochs, c.predictor.epochs);
    set!(a.fusion_width, c.fusion.shape.width);
    set!(a.fusion_blocks, c.fusion.shape.block_count);
    set!(a.fusion_epochs, c.fusion.train.epochs);
    if a.fusion_max_triples.is_some() {
        c.fusion.max_triples = a.fusion_max_triples;
    }
    set!(a.trees, c.forest.trees);
    set!(a.bands, c.evaluation.bands);
    set!(a.gallery_cycles, c.evaluation.gallery_cycles);
    if let Some(m) = a.dice_mode {
        c.evaluation.dice_mode = m.into();
    }
    if let Some(p) = a.propagation {
        c.evaluation.reconstruct.propagation = p.into();
    }
    set!(a.contiguous, c.evaluation.contiguous);
    if a.threads.is_some() {
        c.evaluation.threads = a.threads;
    }
    Ok(c)
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn pipeline(a: PipelineArgs, log_level: Option<String>) -> Result<()> {
    let mut config = resolve_run_config(&a)?;
    if let Some(level) = log_level {
        config.log_level = level;
    }
    if a.dump_config {
        println!("{}", serde_json::to_string_pretty(&config.resolved())?);
        return Ok(());
    }
    init_logging(&config.log_level);
    let run = run_pipeline_detailed(&config)?;
    for s in &run.stages {
        log::info!("{:<20} {} {}", s.name, if s.cached { "cached" } else { "ran   " }, &s.key[..12]);
    }
    let out: PathBuf = config.output.clone();
    println!("{}", out.join(gaitrecon::evaluation::RESULTS_FILE).display());
    Ok(())
}
