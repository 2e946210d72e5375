//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 4-7 and 10 share one toy pipeline run (plus a second run for the
//! determinism check), so their budgets are checked against the stage times
//! they actually consume.

use std::ops::ControlFlow;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gaitrecon::autoencoder::{
    decoder_specs, train_autoencoder_with, AutoencoderModel, AutoencoderTrainConfig, EMBEDDING_DIM,
};
use gaitrecon::evaluation::{compute_cmc, dice_values, AblationModel, DiceMode, EvaluationReport};
use gaitrecon::fusion::{
    reconstruct_sequence, FusionModel, FusionShape, ReconstructOptions, ReconstructionModels,
};
use gaitrecon::nn::{Conv2d, Dense, Layer, LayerSpec, LstmCell, LstmState, Mode, ResidualBlock, Tensor};
use gaitrecon::occlusion::{synthesize_occlusion, HeuristicDetector, OcclusionBand, OcclusionMask, OcclusionSpec};
use gaitrecon::pipeline::{run_pipeline_detailed, PipelineRun, RunConfig};
use gaitrecon::predictor::{
    copy_baseline, encode_corpus, sequence_windows, Direction, LstmPredictor, PredictorShape,
};
use gaitrecon::recognition::{compute_gei, segment_cycles};
use gaitrecon::silhouette::{FrameStatus, GaitSequence, SilhouetteFrame, FRAME_PIXELS};
use gaitrecon::synth::{synth_corpus, SynthConfig};

type Check = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn record(&mut self, id: usize, name: &str, budget: Duration, elapsed: Duration, outcome: Check) {
        let over = elapsed > budget;
        let (ok, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over budget")),
            Err(d) => (false, d),
        };
        if !ok {
            self.failures += 1;
        }
        println!(
            "{} [{id:>2}] {name}: {detail} ({:.1}s, budget {}s)",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }

    fn run(&mut self, id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Check) {
        let t = Instant::now();
        let outcome = f();
        self.record(id, name, budget, t.elapsed(), outcome);
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

// ---------------------------------------------------------------- 1

fn shape_contract() -> Check {
    let ae = AutoencoderModel::new(7).map_err(|e| e.to_string())?;
    let enc = ae.encoder().shape_trace(&[1, 1, 150, 200]).map_err(|e| e.to_string())?;
    ensure(enc.contains(&vec![1, 8, 38, 50]), format!("encoder never reaches 38x50x8: {enc:?}"))?;
    ensure(enc.last() == Some(&vec![1, 15200]), "encoder output is not 15200-d")?;
    let dec = ae.decoder().shape_trace(&[1, 15200]).map_err(|e| e.to_string())?;
    ensure(dec.last() == Some(&vec![1, 1, 150, 200]), "decoder output is not 150x200x1")?;
    ensure(
        decoder_specs().contains(&LayerSpec::CropRows { rows: 1 }) && dec.contains(&vec![1, 32, 152, 200]),
        "decoder lacks the 152 -> 150 row crop",
    )?;
    let frame = SilhouetteFrame::new(
        (0..FRAME_PIXELS).map(|i| ((i / 200) % 3 == 0) as u8).collect(),
        FrameStatus::Observed,
    )
    .map_err(|e| e.to_string())?;
    let e = ae.encode(&frame).map_err(|e| e.to_string())?;
    ensure(e.values().len() == EMBEDDING_DIM, "embedding length")?;
    let y = ae.decode(&e).map_err(|e| e.to_string())?;
    ensure(y.len() == FRAME_PIXELS, "decoded length")?;
    Ok("150x200x1 -> 38x50x8 -> 15200 -> 152x200 -> crop -> 150x200x1".into())
}

// ---------------------------------------------------------------- 2

const H: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn projected(layer: &Layer, x: &Tensor, r: &Tensor, mode: Mode) -> f64 {
    let y = layer.forward(x, mode).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error between analytic and central-difference gradients
/// of `<layer(x), r>` with respect to the input and every parameter.
fn layer_error(mut layer: Layer, shape: &[usize], mode: Mode, rng: &mut ChaCha8Rng) -> f64 {
    let x = random(shape, rng);
    let r = random(&layer.output_shape(shape).unwrap(), rng);
    let (dx, dp) = layer.backward(&x, &r, mode).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += H;
        xm.data_mut()[i] -= H;
        let num = (projected(&layer, &xp, &r, mode) - projected(&layer, &xm, &r, mode)) / (2.0 * H);
        worst = worst.max(rel_err(dx.data()[i], num));
    }
    for p in 0..dp.len() {
        for i in 0..layer.params()[p].len() {
            let orig = layer.params()[p].data()[i];
            layer.params_mut()[p].data_mut()[i] = orig + H;
            let fp = projected(&layer, &x, &r, mode);
            layer.params_mut()[p].data_mut()[i] = orig - H;
            let fm = projected(&layer, &x, &r, mode);
            layer.params_mut()[p].data_mut()[i] = orig;
            worst = worst.max(rel_err(dp[p].data()[i], (fp - fm) / (2.0 * H)));
        }
    }
    worst
}

fn lstm_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut cell = LstmCell::new(4, 3, rng).unwrap();
    let x = random(&[2, 4], rng);
    let state = LstmState { h: random(&[2, 3], rng), c: random(&[2, 3], rng) };
    let (rh, rc) = (random(&[2, 3], rng), random(&[2, 3], rng));
    let objective = |cell: &LstmCell, x: &Tensor, s: &LstmState| -> f64 {
        let (n, _) = cell.step(x, s).unwrap();
        n.h.data().iter().zip(rh.data()).map(|(a, b)| a * b).sum::<f64>()
            + n.c.data().iter().zip(rc.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, trace) = cell.step(&x, &state).unwrap();
    let g = cell.step_backward(&trace, &rh, &rc, true).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut a, mut b) = (x.clone(), x.clone());
        a.data_mut()[i] += H;
        b.data_mut()[i] -= H;
        let num = (objective(&cell, &a, &state) - objective(&cell, &b, &state)) / (2.0 * H);
        worst = worst.max(rel_err(g.dx.as_ref().unwrap().data()[i], num));
    }
    for i in 0..state.h.len() {
        for which in 0..2 {
            let (mut a, mut b) = (state.clone(), state.clone());
            let (ta, tb, analytic) = if which == 0 {
                (&mut a.h, &mut b.h, g.dh_prev.data()[i])
            } else {
                (&mut a.c, &mut b.c, g.dc_prev.data()[i])
            };
            ta.data_mut()[i] += H;
            tb.data_mut()[i] -= H;
            let num = (objective(&cell, &x, &a) - objective(&cell, &x, &b)) / (2.0 * H);
            worst = worst.max(rel_err(analytic, num));
        }
    }
    for p in 0..g.params.len() {
        for i in 0..cell.params()[p].len() {
            let orig = cell.params()[p].data()[i];
            cell.params_mut()[p].data_mut()[i] = orig + H;
            let fp = objective(&cell, &x, &state);
            cell.params_mut()[p].data_mut()[i] = orig - H;
            let fm = objective(&cell, &x, &state);
            cell.params_mut()[p].data_mut()[i] = orig;
            worst = worst.max(rel_err(g.params[p].data()[i], (fp - fm) / (2.0 * H)));
        }
    }
    worst
}

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bn_spec = LayerSpec::Batchnorm { channels: 3 };
    let mut bn_eval = Layer::from_spec(&bn_spec, &mut rng).unwrap();
    for t in bn_eval.buffers_mut() {
        for v in t.data_mut() {
            *v = 0.5 + v.abs();
        }
    }
    let cases: Vec<(&str, Layer, Vec<usize>, Mode)> = vec![
        ("conv2d", Layer::Conv2d(Conv2d::new(2, 3, 3, &mut rng).unwrap()), vec![2, 2, 8, 8], Mode::Train),
        ("maxpool2d", Layer::MaxPool2d { factor: 2 }, vec![2, 2, 5, 6], Mode::Train),
        ("upsample2d_nearest", Layer::Upsample2d { factor: 2 }, vec![1, 2, 3, 4], Mode::Train),
        ("dense", Layer::Dense(Dense::new(12, 5, &mut rng).unwrap()), vec![3, 12], Mode::Train),
        ("batchnorm/train", Layer::from_spec(&bn_spec, &mut rng).unwrap(), vec![3, 3, 4, 4], Mode::Train),
        ("batchnorm/eval", bn_eval, vec![2, 3, 3, 3], Mode::Eval),
        ("residual_block/train", Layer::Residual(ResidualBlock::new(2, 3, &mut rng).unwrap()), vec![2, 2, 5, 5], Mode::Train),
        ("residual_block/eval", Layer::Residual(ResidualBlock::new(2, 3, &mut rng).unwrap()), vec![1, 2, 4, 4], Mode::Eval),
        ("sigmoid", Layer::Sigmoid, vec![2, 7], Mode::Train),
        ("relu", Layer::Relu, vec![2, 7], Mode::Train),
        ("crop_rows", Layer::CropRows { rows: 1 }, vec![1, 2, 6, 3], Mode::Train),
        ("flatten", Layer::Flatten, vec![2, 2, 3, 1], Mode::Train),
        ("reshape", Layer::Reshape { shape: vec![3, 2] }, vec![2, 6], Mode::Train),
    ];
    let mut worst = ("", 0.0f64);
    for (name, layer, shape, mode) in cases {
        let e = layer_error(layer, &shape, mode, &mut rng);
        if e > worst.1 {
            worst = (name, e);
        }
        ensure(e < 1e-4, format!("{name}: relative error {e:.2e}"))?;
    }
    let e = lstm_error(&mut rng);
    ensure(e < 1e-4, format!("lstm_cell: relative error {e:.2e}"))?;
    if e > worst.1 {
        worst = ("lstm_cell", e);
    }
    Ok(format!("14 layer cases, worst {} at {:.2e} < 1e-4", worst.0, worst.1))
}

// ---------------------------------------------------------------- 3

fn hard_dice_frame(truth: &SilhouetteFrame, scores: &[f64]) -> f64 {
    let pred: Vec<f64> = scores.iter().map(|&s| (s >= 0.5) as u8 as f64).collect();
    dice_values(&truth.to_f64(), &pred, DiceMode::Hard).unwrap()
}

fn autoencoder_convergence() -> Check {
    let corpus = synth_corpus(&SynthConfig { subjects: 5, cycles_per_subject: 1, period: 10, seed: 31 })
        .map_err(|e| e.to_string())?;
    let frames: Vec<SilhouetteFrame> = corpus.iter().flat_map(|s| s.frames().iter().cloned()).collect();
    ensure(frames.len() == 50, "corpus size")?;
    let config = AutoencoderTrainConfig { epochs: 200, saturation: None, seed: 3, ..Default::default() };
    let mut reached: Option<(usize, f64, f64)> = None;
    train_autoencoder_with(&frames, &config, &mut |epoch, loss, model| {
        if loss > 0.03 {
            return ControlFlow::Continue(());
        }
        let scores: Vec<f64> = frames.iter().map(|f| hard_dice_frame(f, &model.reconstruct(f).unwrap())).collect();
        let min = scores.iter().cloned().fold(1.0, f64::min);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        if min >= 0.95 {
            reached = Some((epoch + 1, min, mean));
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })
    .map_err(|e| e.to_string())?;
    match reached {
        Some((epoch, min, mean)) => Ok(format!("every frame hard-Dice >= 0.95 at epoch {epoch} (min {min:.4}, mean {mean:.4})")),
        None => Err("hard-Dice never reached 0.95 on every frame within 200 epochs".into()),
    }
}

// ---------------------------------------------------------------- 4

fn predictor_utility(run: &PipelineRun, gallery_cycles: usize) -> Check {
    let ae = AutoencoderModel::load(&run.checkpoints["autoencoder"]).map_err(|e| e.to_string())?;
    let embeddings = encode_corpus(&run.corpus, &ae).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for (direction, key) in [(Direction::Forward, "lstm_forward"), (Direction::Backward, "lstm_backward")] {
        let model = LstmPredictor::load(&run.checkpoints[key]).map_err(|e| e.to_string())?;
        let (mut model_mse, mut copy_mse, mut n) = (0.0, 0.0, 0usize);
        for (seq, emb) in run.corpus.iter().zip(&embeddings) {
            // held out: targets in cycles no model was trained on
            let held_out_start = segment_cycles(seq).cycles[gallery_cycles].0;
            for (i, w) in sequence_windows(seq, emb, direction).into_iter().enumerate() {
                let target_index = match direction {
                    Direction::Forward => i + 5,
                    Direction::Backward => i,
                };
                if target_index < held_out_start {
                    continue;
                }
                let pred = model.predict(&w.context).map_err(|e| e.to_string())?;
                let copy = copy_baseline(&w.context);
                let mse = |a: &[f64]| {
                    a.iter().zip(w.target.values()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / EMBEDDING_DIM as f64
                };
                model_mse += mse(pred.values());
                copy_mse += mse(copy.values());
                n += 1;
            }
        }
        ensure(n > 0, "no held-out windows")?;
        let (m, c) = (model_mse / n as f64, copy_mse / n as f64);
        ensure(m < c, format!("{direction}: model MSE {m:.5} not below copy baseline {c:.5}"))?;
        detail.push(format!("{direction} {m:.5} < copy {c:.5}"));
    }
    Ok(format!("held-out embedding MSE: {}", detail.join(", ")))
}

// ---------------------------------------------------------------- 5

fn ablation_ordering(report: &EvaluationReport) -> Check {
    let get = |m| report.ablation_dice(m).ok_or_else(|| format!("missing ablation row {m:?}"));
    let (m1, m2, fused) = (get(AblationModel::Forward)?, get(AblationModel::Backward)?, get(AblationModel::Fused)?);
    let detail = format!("M1 {m1:.4}, M2 {m2:.4}, fused {fused:.4}");
    ensure(fused >= m1 - 0.02 && fused >= m2 - 0.02, format!("fused trails a single direction by > 0.02: {detail}"))?;
    ensure(fused > m1 || fused > m2, format!("fused beats neither single direction: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6

/// Non-increasing, allowing one adjacent rise of at most `slack`.
fn non_increasing(values: &[f64], slack: f64) -> Result<(), String> {
    let rises: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    match rises.as_slice() {
        [] => Ok(()),
        [d] if *d <= slack => Ok(()),
        _ => Err(format!("rises {rises:?} in {values:?}")),
    }
}

fn band_monotonicity(report: &EvaluationReport) -> Check {
    let dice: Vec<f64> = report.bands.iter().map(|b| b.mean_dice).collect();
    let rank1: Vec<f64> = report.bands.iter().map(|b| b.rank1_accuracy).collect();
    ensure(report.bands.len() == 5, "expected 5 bands")?;
    non_increasing(&dice, 0.02).map_err(|e| format!("Dice: {e}"))?;
    non_increasing(&rank1, 0.02).map_err(|e| format!("rank-1: {e}"))?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok(format!("Dice [{}], rank-1 [{}]", fmt(&dice), fmt(&rank1)))
}

// ---------------------------------------------------------------- 7

fn recognition_floor(report: &EvaluationReport) -> Check {
    let band = report.bands.first().ok_or("no bands")?;
    ensure(band.band == OcclusionBand::new(0.05, 0.10).unwrap(), "first band is not 5-10%")?;
    let (r1, r3) = (band.cmc.at(1).unwrap_or(0.0), band.cmc.at(3).unwrap_or(0.0));
    ensure(r1 >= 0.80 && r3 == 1.0, format!("rank-1 {r1:.3}, rank-3 {r3:.3}"))?;
    Ok(format!("5-10%: rank-1 {r1:.3} >= 0.80, rank-3 {r3:.3} = 1.00 over {} probes", band.probes))
}

// ---------------------------------------------------------------- 8

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (h, w) = (150, 200);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..h * w).map(|_| if rng.gen_bool(0.3) { rng.gen() } else { 0.0 }).collect();
        let b: Vec<f64> = (0..h * w).map(|_| if rng.gen_bool(0.3) { rng.gen() } else { 0.0 }).collect();
        // column-major brute force
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for x in 0..w {
            for y in 0..h {
                let (p, q) = (a[y * w + x], b[y * w + x]);
                ab += p * q;
                aa += p * p;
                bb += q * q;
            }
        }
        let oracle = 2.0 * ab / (aa + bb);
        worst = worst.max((dice_values(&a, &b, DiceMode::Soft).unwrap() - oracle).abs());
    }
    ensure(worst <= 1e-12, format!("soft Dice deviates from oracle by {worst:.2e}"))?;

    let frames: Vec<SilhouetteFrame> = (0..4)
        .map(|_| SilhouetteFrame::new((0..FRAME_PIXELS).map(|_| rng.gen_bool(0.4) as u8).collect(), FrameStatus::Observed).unwrap())
        .collect();
    let gei = compute_gei(&frames).unwrap();
    let mut gei_err: f64 = 0.0;
    for i in 0..FRAME_PIXELS {
        let count = frames.iter().filter(|f| f.pixels()[i] == 1).count();
        gei_err = gei_err.max((gei.values()[i] - count as f64 / 4.0).abs());
    }
    ensure(gei_err <= 1e-12, format!("GEI deviates from summation oracle by {gei_err:.2e}"))?;

    let classes: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
    for trial in 0..20 {
        let queries: Vec<(Vec<String>, String)> = (0..15)
            .map(|_| {
                let mut ranked = classes.clone();
                for i in (1..ranked.len()).rev() {
                    ranked.swap(i, rng.gen_range(0..=i));
                }
                (ranked, classes[rng.gen_range(0..classes.len())].clone())
            })
            .collect();
        let cmc = compute_cmc(&queries, classes.len()).unwrap();
        ensure(cmc.accuracies.windows(2).all(|w| w[0] <= w[1]), format!("CMC not monotone in trial {trial}"))?;
        ensure(cmc.at(classes.len()) == Some(1.0), format!("CMC endpoint below 1 in trial {trial}"))?;
    }
    Ok(format!("soft Dice max error {worst:.1e}, GEI max error {gei_err:.1e}, 20 CMC series monotone with endpoint 1"))
}

// ---------------------------------------------------------------- 9

fn identity_and_non_interference() -> Check {
    let corpus = synth_corpus(&SynthConfig { subjects: 3, cycles_per_subject: 2, period: 12, seed: 9 })
        .map_err(|e| e.to_string())?;
    let ae = AutoencoderModel::new(1).unwrap();
    let shape = PredictorShape { hidden: 8, reverse_backward: true };
    let fwd = LstmPredictor::new(Direction::Forward, shape, 2).unwrap();
    let bwd = LstmPredictor::new(Direction::Backward, shape, 3).unwrap();
    let fusion = FusionModel::new(FusionShape { width: 4, block_count: 1 }, 4).unwrap();
    let models = ReconstructionModels { autoencoder: &ae, forward: &fwd, backward: &bwd, fusion: &fusion };
    let options = ReconstructOptions::default();
    let mut checked = 0;
    for seq in &corpus {
        let rec = reconstruct_sequence(seq, &OcclusionMask::empty(), &models, &options).map_err(|e| e.to_string())?;
        ensure(&rec.sequence == seq, format!("{} changed without occlusion", seq.subject_id()))?;
        for (k, band) in [(0.05, 0.10), (0.20, 0.30), (0.40, 0.50)].into_iter().enumerate() {
            let spec = OcclusionSpec::new(OcclusionBand::new(band.0, band.1).unwrap(), 100 + k as u64);
            let (occluded, mask) = synthesize_occlusion(seq, &spec).map_err(|e| e.to_string())?;
            let rec = reconstruct_sequence(&occluded, &mask, &models, &options).map_err(|e| e.to_string())?;
            for i in (0..seq.len()).filter(|&i| !mask.contains(i)) {
                let (a, b) = (rec.sequence.frame(i), seq.frame(i));
                ensure(a.pixels() == b.pixels() && a.status() == FrameStatus::Observed, format!("observed frame {i} modified"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("3 clean sequences bit-identical, {checked} observed frames untouched across 9 occluded sequences"))
}

// ---------------------------------------------------------------- 10

fn determinism(first: &PipelineRun, second: &PipelineRun) -> Check {
    for (name, path) in &first.checkpoints {
        let other = &second.checkpoints[name];
        ensure(std::fs::read(path).ok() == std::fs::read(other).ok(), format!("checkpoint {name} differs"))?;
    }
    let a = std::fs::read(&first.files.results).map_err(|e| e.to_string())?;
    let b = std::fs::read(&second.files.results).map_err(|e| e.to_string())?;
    ensure(a == b, "results JSON differs")?;
    ensure(second.stages.iter().all(|s| !s.cached), "second run reused a cache")?;
    Ok(format!("{} checkpoints bit-identical, results.json byte-identical ({} bytes)", first.checkpoints.len(), a.len()))
}

// ---------------------------------------------------------------- 11

fn occlusion_detection() -> Check {
    let corpus = synth_corpus(&SynthConfig { subjects: 10, cycles_per_subject: 2, period: 12, seed: 77 })
        .map_err(|e| e.to_string())?;
    let bands = OcclusionBand::standard();
    let detector = HeuristicDetector::default();
    let (mut tp, mut fp, mut fneg, mut n) = (0usize, 0usize, 0usize, 0usize);
    for round in 0..5 {
        for (s, seq) in corpus.iter().enumerate() {
            let spec = OcclusionSpec::new(bands[(round + s) % bands.len()], (round * 100 + s) as u64);
            let (occluded, truth) = synthesize_occlusion(seq, &spec).map_err(|e| e.to_string())?;
            let unlabeled = GaitSequence::new(
                occluded.subject_id(),
                occluded.sequence_id(),
                occluded.frames().iter().map(|f| f.clone().with_status(FrameStatus::Observed)).collect(),
            );
            let found = detector.detect(&unlabeled);
            tp += found.indices().iter().filter(|&&i| truth.contains(i)).count();
            fp += found.indices().iter().filter(|&&i| !truth.contains(i)).count();
            fneg += truth.indices().iter().filter(|&&i| !found.contains(i)).count();
            n += 1;
        }
    }
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fneg).max(1) as f64;
    ensure(fp == 0 && fneg == 0 && tp > 0, format!("precision {precision:.4}, recall {recall:.4}"))?;
    Ok(format!("{n} sequences, {tp} occluded frames: precision = recall = 1.0"))
}

// ----------------------------------------------------------------

fn pipeline_config(output: &Path) -> RunConfig {
    RunConfig { seed: 20240, output: output.to_path_buf(), ..RunConfig::toy() }
}

fn main() {
    let mut suite = Suite { failures: 0 };
    suite.run(1, "shape contract", Duration::from_secs(1), shape_contract);
    suite.run(2, "gradient correctness", mins(1), gradient_checks);
    suite.run(8, "metric oracles", Duration::from_secs(10), metric_oracles);
    suite.run(9, "reconstruction identity and non-interference", mins(1), identity_and_non_interference);
    suite.run(11, "occlusion detection", Duration::from_secs(10), occlusion_detection);
    suite.run(3, "autoencoder convergence", mins(10), autoencoder_convergence);

    let dir = tempfile::tempdir().expect("temp dir");
    let config = pipeline_config(&dir.path().join("run-a"));
    let gallery_cycles = config.evaluation.gallery_cycles;
    let t = Instant::now();
    let first = run_pipeline_detailed(&config);
    let first_time = t.elapsed();
    let first = match first {
        Ok(run) => run,
        Err(e) => {
            for (id, name) in [(7, "toy recognition floor"), (4, "predictor utility"), (5, "ablation ordering"), (6, "band monotonicity"), (10, "determinism")] {
                suite.record(id, name, Duration::MAX, first_time, Err(format!("pipeline failed: {e}")));
            }
            std::process::exit(1);
        }
    };
    let report = first.report.clone();
    suite.record(7, "toy recognition floor", mins(20), first_time, recognition_floor(&report));
    suite.run(4, "predictor utility", mins(15), || predictor_utility(&first, gallery_cycles));
    suite.run(5, "ablation ordering", mins(20), || ablation_ordering(&report));
    suite.run(6, "band monotonicity", mins(30), || band_monotonicity(&report));

    let t = Instant::now();
    let second = run_pipeline_detailed(&pipeline_config(&dir.path().join("run-b")));
    let second_time = t.elapsed();
    let outcome = second.map_err(|e| e.to_string()).and_then(|s| determinism(&first, &s));
    suite.record(10, "determinism", first_time * 2, second_time, outcome);

    println!("{} of 11 criteria failed", suite.failures);
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
