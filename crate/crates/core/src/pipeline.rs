//! End-to-end run: corpus, model training, band sweep and report, with
//! content-hash stage caching.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{train_autoencoder, AutoencoderModel, AutoencoderTrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    corpus_hash, emit_report, gallery_geis, load_report, run_band_sweep, EmittedFiles, EvaluationReport, SweepConfig,
    RESULTS_FILE,
};
use crate::fusion::{
    encode_sequence, fusion_triples_with_embeddings, train_fusion, ContextPropagation, FusionModel, FusionShape, FusionTrainConfig, FusionTriple,
    ReconstructionModels,
};
use crate::occlusion::{synthesize_occlusion, OcclusionBand, OcclusionSpec};
use crate::predictor::{train_predictor, Direction, LstmPredictor, PredictorTrainConfig};
use crate::recognition::{segment_cycles, train_forest, ForestConfig, ForestModel};
use crate::silhouette::{load_manifest, save_corpus, GaitSequence, MANIFEST_FILE};
use crate::synth::{synth_corpus, SynthConfig};

pub const RUN_CONFIG_VERSION: u32 = 1;
/// Overrides the output root; no other setting is read from the environment.
pub const OUTPUT_ENV: &str = "GAITRECON_OUTPUT";
pub const STATUS_FILE: &str = "status.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderStage {
    pub train: AutoencoderTrainConfig,
    /// Train on every n-th frame of the training cycles.
    pub frame_stride: usize,
}

impl Default for AutoencoderStage {
    fn default() -> Self {
        AutoencoderStage { train: AutoencoderTrainConfig::default(), frame_stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionStage {
    pub shape: FusionShape,
    pub train: FusionTrainConfig,
    /// Occlusion applied to the training cycles to produce fusion inputs.
    pub band: OcclusionBand,
    pub occlusions_per_sequence: usize,
    /// Evenly thinned to at most this many triples.
    pub max_triples: Option<usize>,
}

impl Default for FusionStage {
    fn default() -> Self {
        FusionStage {
            shape: FusionShape::default(),
            train: FusionTrainConfig::default(),
            band: OcclusionBand { low: 0.1, high: 0.3 },
            occlusions_per_sequence: 2,
            max_triples: None,
        }
    }
}

/// Everything a run depends on. Per-stage `seed` fields are derived from
/// `seed` when the config is resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Manifest of an existing clean corpus; synthesized when absent.
    pub corpus: Option<PathBuf>,
    pub output: PathBuf,
    /// Defaults to `<output>/checkpoints`.
    pub checkpoints: Option<PathBuf>,
    pub synth: SynthConfig,
    pub autoencoder: AutoencoderStage,
    pub predictor: PredictorTrainConfig,
    pub fusion: FusionStage,
    pub forest: ForestConfig,
    pub evaluation: SweepConfig,
    pub log_level: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: RUN_CONFIG_VERSION,
            seed: 0,
            corpus: None,
            output: PathBuf::from("gaitrecon-out"),
            checkpoints: None,
            synth: SynthConfig::default(),
            autoencoder: AutoencoderStage::default(),
            predictor: PredictorTrainConfig::default(),
            fusion: FusionStage::default(),
            forest: ForestConfig::default(),
            evaluation: SweepConfig::default(),
            log_level: "info".into(),
        }
    }
}

impl RunConfig {
    /// Small models and short schedules that finish in minutes on one core.
    pub fn toy() -> Self {
        let mut c = RunConfig::default();
        c.synth.cycles_per_subject = 6;
        c.autoencoder.frame_stride = 3;
        c.autoencoder.train.epochs = 20;
        c.predictor.shape.hidden = 64;
        c.predictor.epochs = 40;
        c.fusion.shape = FusionShape { width: 8, block_count: 1 };
        c.fusion.train.epochs = 10;
        c.fusion.occlusions_per_sequence = 8;
        c.fusion.max_triples = Some(200);
        c
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let config: RunConfig = serde_json::from_slice(&fs::read(path)?)?;
        if config.version != RUN_CONFIG_VERSION {
            return Err(Error::InvalidParameter(format!(
                "run config version {} is not supported (expected {RUN_CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoints.clone().unwrap_or_else(|| self.output.join("checkpoints"))
    }

    /// Copy with every stage seed derived from the run seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.synth.seed = s;
        c.autoencoder.train.seed = s.wrapping_add(1);
        c.predictor.seed = s.wrapping_add(2);
        c.fusion.train.seed = s.wrapping_add(3);
        c.forest.seed = s.wrapping_add(4);
        c.evaluation.seed = s.wrapping_add(5);
        c
    }

    /// The resolved config without paths, log level or thread count: the
    /// part that determines results.
    pub fn fingerprint(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self.resolved()).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            for key in ["corpus", "output", "checkpoints", "log_level"] {
                obj.remove(key);
            }
            if let Some(eval) = obj.get_mut("evaluation").and_then(|e| e.as_object_mut()) {
                eval.remove("threads");
            }
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub report: EvaluationReport,
    pub stages: Vec<StageRecord>,
    pub files: EmittedFiles,
    /// Checkpoint name to path.
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub corpus: Vec<GaitSequence>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn stage_key(name: &str, parts: &[&str], config: &impl Serialize) -> Result<String> {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    for p in parts {
        h.update([0]);
        h.update(p.as_bytes());
    }
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    Ok(format!("{:x}", h.finalize()))
}

struct Cache {
    dir: PathBuf,
}

impl Cache {
    fn path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.json"))
    }

    /// True when the stage ran with this key and its outputs are untouched.
    fn hit(&self, stage: &str, key: &str) -> bool {
        let Ok(bytes) = fs::read(self.path(stage)) else { return false };
        let Ok(entry) = serde_json::from_slice::<CacheEntry>(&bytes) else { return false };
        entry.key == key
            && entry.files.iter().all(|(p, h)| file_sha256(Path::new(p)).is_ok_and(|actual| &actual == h))
    }

    fn store(&self, stage: &str, key: &str, files: &[&Path]) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let files = files
            .iter()
            .map(|p| Ok((p.to_string_lossy().into_owned(), file_sha256(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let entry = CacheEntry { key: key.to_string(), files };
        fs::write(self.path(stage), serde_json::to_vec_pretty(&entry)?)?;
        Ok(())
    }
}

/// Leading `gallery_cycles` cycles of every sequence: the data all models
/// are trained on. Later cycles stay unseen until evaluation.
pub fn training_slices(corpus: &[GaitSequence], gallery_cycles: usize) -> Result<Vec<GaitSequence>> {
    corpus
        .iter()
        .map(|seq| {
            let cycles = segment_cycles(seq).cycles;
            let take = gallery_cycles.min(cycles.len()).max(1);
            let (start, end) = (cycles[0].0, cycles[take - 1].1);
            seq.slice(start, end, format!("{}-train", seq.sequence_id()))
        })
        .collect()
}

/// Fusion training triples from occluded copies of `train`, evenly thinned
/// to `max_triples`.
pub fn collect_fusion_triples(
    train: &[GaitSequence],
    stage: &FusionStage,
    models: &ReconstructionModels<'_>,
    propagation: ContextPropagation,
    seed: u64,
) -> Result<Vec<FusionTriple>> {
    let mut triples = Vec::new();
    for (s, seq) in train.iter().enumerate() {
        let encoded = encode_sequence(seq, models.autoencoder)?;
        for k in 0..stage.occlusions_per_sequence {
            let spec = OcclusionSpec::new(stage.band, seed ^ ((s as u64) << 20 | k as u64));
            let (_, mask) = synthesize_occlusion(seq, &spec)?;
            triples.extend(fusion_triples_with_embeddings(seq, &mask, &encoded, models, propagation)?);
        }
    }
    if let Some(max) = stage.max_triples {
        if triples.len() > max && max > 0 {
            let n = triples.len();
            triples = (0..max).map(|i| triples[i * n / max].clone()).collect();
        }
    }
    Ok(triples)
}

fn write_status(output: &Path, status: serde_json::Value) {
    let _ = fs::create_dir_all(output);
    if let Ok(bytes) = serde_json::to_vec_pretty(&status) {
        let _ = fs::write(output.join(STATUS_FILE), bytes);
    }
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

pub fn run_pipeline(config: &RunConfig) -> Result<EvaluationReport> {
    run_pipeline_detailed(config).map(|r| r.report)
}

/// Runs every stage, skipping those whose inputs and settings hash to a
/// key recorded by an earlier run with intact outputs. `status.json` in the
/// output directory records success or the failing stage.
pub fn run_pipeline_detailed(config: &RunConfig) -> Result<PipelineRun> {
    let result = run_stages(config);
    match &result {
        Ok(_) => write_status(&config.output, serde_json::json!({"status": "complete"})),
        Err(e) => {
            let stage = match e {
                Error::Stage { stage, .. } => stage.clone(),
                _ => "setup".into(),
            };
            write_status(
                &config.output,
                serde_json::json!({"status": "failed", "stage": stage, "error": e.to_string(), "partial": true}),
            );
        }
    }
    result
}

fn run_stages(config: &RunConfig) -> Result<PipelineRun> {
    let cfg = config.resolved();
    let out = cfg.output.clone();
    let ckpt = cfg.checkpoint_dir();
    fs::create_dir_all(&out)?;
    fs::create_dir_all(&ckpt)?;
    fs::write(out.join(CONFIG_FILE), serde_json::to_vec_pretty(&cfg)?)?;
    let cache = Cache { dir: out.join("cache") };
    let mut stages = Vec::new();
    let mut record = |name: &str, key: &str, cached: bool| {
        if cached {
            log::info!("stage {name}: cached, skipping");
        }
        stages.push(StageRecord { name: name.into(), key: key.into(), cached });
    };
    let gallery = cfg.evaluation.gallery_cycles;

    let corpus = stage("corpus", || match &cfg.corpus {
        Some(path) => load_manifest(path),
        None => synth_corpus(&cfg.synth),
    })?;
    let corpus_key = corpus_hash(&corpus);
    let corpus_dir = out.join("corpus");
    let cached = cache.hit("corpus", &corpus_key);
    if !cached {
        stage("corpus", || {
            save_corpus(&corpus, &corpus_dir)?;
            cache.store("corpus", &corpus_key, &[&corpus_dir.join(MANIFEST_FILE)])
        })?;
    }
    record("corpus", &corpus_key, cached);
    let train = stage("corpus", || training_slices(&corpus, gallery))?;

    let ae_path = ckpt.join("autoencoder.ckpt");
    let ae_key = stage_key("train-ae", &[&corpus_key], &(&cfg.autoencoder, gallery))?;
    let ae_cached = cache.hit("train-ae", &ae_key);
    let ae = stage("train-ae", || {
        if ae_cached {
            return AutoencoderModel::load(&ae_path);
        }
        let frames: Vec<_> = train
            .iter()
            .flat_map(|s| s.frames().iter().step_by(cfg.autoencoder.frame_stride.max(1)).cloned())
            .collect();
        let model = train_autoencoder(&frames, &cfg.autoencoder.train)?.model;
        model.save(&ae_path)?;
        cache.store("train-ae", &ae_key, &[&ae_path])?;
        Ok(model)
    })?;
    record("train-ae", &ae_key, ae_cached);

    let mut lstm = Vec::new();
    for direction in [Direction::Forward, Direction::Backward] {
        let name = format!("train-lstm-{direction}");
        let path = ckpt.join(format!("{}.ckpt", direction.model_kind()));
        let key = stage_key(&name, &[&ae_key, direction.model_kind()], &cfg.predictor)?;
        let cached = cache.hit(&name, &key);
        let model = stage(&name, || {
            if cached {
                return LstmPredictor::load(&path);
            }
            let model = train_predictor(direction, &train, &ae, &cfg.predictor)?.model;
            model.save(&path)?;
            cache.store(&name, &key, &[&path])?;
            Ok(model)
        })?;
        record(&name, &key, cached);
        lstm.push((key, path, model));
    }
    let (bwd_key, bwd_path, bwd) = lstm.pop().expect("backward model");
    let (fwd_key, fwd_path, fwd) = lstm.pop().expect("forward model");

    let fusion_path = ckpt.join("fusion.ckpt");
    let fusion_key = stage_key(
        "train-fusion",
        &[&ae_key, &fwd_key, &bwd_key],
        &(&cfg.fusion, cfg.evaluation.reconstruct.propagation),
    )?;
    let fusion_cached = cache.hit("train-fusion", &fusion_key);
    let fusion = stage("train-fusion", || {
        if fusion_cached {
            return FusionModel::load(&fusion_path);
        }
        let init = FusionModel::new(cfg.fusion.shape, cfg.fusion.train.seed)?;
        let models = ReconstructionModels { autoencoder: &ae, forward: &fwd, backward: &bwd, fusion: &init };
        let triples = collect_fusion_triples(
            &train,
            &cfg.fusion,
            &models,
            cfg.evaluation.reconstruct.propagation,
            cfg.fusion.train.seed,
        )?;
        log::info!("fusion training on {} triples", triples.len());
        let model = train_fusion(init, &triples, &cfg.fusion.train)?.model;
        model.save(&fusion_path)?;
        cache.store("train-fusion", &fusion_key, &[&fusion_path])?;
        Ok(model)
    })?;
    record("train-fusion", &fusion_key, fusion_cached);

    let forest_path = ckpt.join("forest.bin");
    let forest_key = stage_key("train-forest", &[&corpus_key], &(&cfg.forest, gallery))?;
    let forest_cached = cache.hit("train-forest", &forest_key);
    let forest = stage("train-forest", || {
        if forest_cached {
            return ForestModel::load(&forest_path);
        }
        let model = train_forest(&gallery_geis(&corpus, gallery)?, &cfg.forest)?;
        model.save(&forest_path)?;
        cache.store("train-forest", &forest_key, &[&forest_path])?;
        Ok(model)
    })?;
    record("train-forest", &forest_key, forest_cached);

    let checkpoints: BTreeMap<String, PathBuf> = [
        ("autoencoder", ae_path),
        ("lstm_forward", fwd_path),
        ("lstm_backward", bwd_path),
        ("fusion", fusion_path),
        ("forest", forest_path),
    ]
    .into_iter()
    .map(|(k, p)| (k.to_string(), p))
    .collect();

    let results_path = out.join(RESULTS_FILE);
    let eval_key = stage_key(
        "evaluate",
        &[&corpus_key, &ae_key, &fwd_key, &bwd_key, &fusion_key, &forest_key],
        &cfg.fingerprint(),
    )?;
    let eval_cached = cache.hit("evaluate", &eval_key);
    let report = stage("evaluate", || {
        if eval_cached {
            return load_report(&results_path);
        }
        let models = ReconstructionModels { autoencoder: &ae, forward: &fwd, backward: &bwd, fusion: &fusion };
        let mut report = run_band_sweep(&corpus, &models, &forest, &cfg.evaluation)?;
        report.metadata.checkpoints = checkpoints
            .iter()
            .map(|(k, p)| Ok((k.clone(), file_sha256(p)?)))
            .collect::<Result<_>>()?;
        report.metadata.config = Some(cfg.fingerprint());
        Ok(report)
    })?;
    let files = stage("report", || emit_report(&report, &out))?;
    if !eval_cached {
        stage("evaluate", || cache.store("evaluate", &eval_key, &[&files.results]))?;
    }
    record("evaluate", &eval_key, eval_cached);

    Ok(PipelineRun { report, stages, files, checkpoints, corpus })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let c = RunConfig::toy();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.predictor, PredictorTrainConfig::default());
    }

    #[test]
    fn fingerprint_ignores_paths() {
        let mut a = RunConfig::toy();
        let mut b = a.clone();
        a.output = "x".into();
        b.output = "y".into();
        b.evaluation.threads = Some(3);
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn missing_corpus_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            corpus: Some(dir.path().join("nope.json")),
            output: dir.path().join("out"),
            ..RunConfig::toy()
        };
        let err = run_pipeline(&config).unwrap_err();
        assert!(matches!(&err, Error::Stage { stage, .. } if stage == "corpus"), "{err}");
        let status: serde_json::Value =
            serde_json::from_slice(&fs::read(config.output.join(STATUS_FILE)).unwrap()).unwrap();
        assert_eq!(status["status"], "failed");
        assert_eq!(status["stage"], "corpus");
    }

    #[test]
    fn training_slices_cover_gallery_cycles() {
        let corpus = synth_corpus(&SynthConfig { subjects: 2, cycles_per_subject: 4, period: 10, seed: 1 }).unwrap();
        let slices = training_slices(&corpus, 2).unwrap();
        assert!(slices.iter().all(|s| s.len() == 20));
        assert_eq!(slices[0].frames(), &corpus[0].frames()[..20]);
    }
}
