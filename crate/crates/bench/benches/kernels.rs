use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gaitrecon::autoencoder::AutoencoderModel;
use gaitrecon::evaluation::{dice_values, DiceMode};
use gaitrecon::fusion::{FusionModel, FusionShape};
use gaitrecon::nn::{Conv2d, Layer, Mode, Tensor};
use gaitrecon::predictor::{ContextWindow, Direction, LstmPredictor, PredictorShape};
use gaitrecon::recognition::{compute_gei, train_forest, ForestConfig, Recognizer};
use gaitrecon_bench::{frame, walker};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = Layer::Conv2d(Conv2d::new(16, 16, 3, &mut rng).unwrap());
    let x = Tensor::new(vec![1, 16, 75, 100], vec![0.5; 16 * 75 * 100]).unwrap();
    c.bench_function("conv3x3 16->16 75x100", |b| b.iter(|| layer.forward(black_box(&x), Mode::Eval).unwrap()));
}

fn autoencoder(c: &mut Criterion) {
    let ae = AutoencoderModel::new(0).unwrap();
    let f = frame();
    let e = ae.encode(&f).unwrap();
    c.bench_function("encode frame", |b| b.iter(|| ae.encode(black_box(&f)).unwrap()));
    c.bench_function("decode embedding", |b| b.iter(|| ae.decode(black_box(&e)).unwrap()));
}

fn predictor(c: &mut Criterion) {
    let ae = AutoencoderModel::new(0).unwrap();
    let seq = walker();
    let context =
        ContextWindow::new(Direction::Forward, seq.frames()[..5].iter().map(|f| ae.encode(f).unwrap()).collect()).unwrap();
    let m = LstmPredictor::new(Direction::Forward, PredictorShape { hidden: 64, reverse_backward: true }, 0).unwrap();
    c.bench_function("lstm predict hidden 64", |b| b.iter(|| m.predict(black_box(&context)).unwrap()));
}

fn fusion(c: &mut Criterion) {
    let fusion = FusionModel::new(FusionShape::default(), 0).unwrap();
    let seq = walker();
    let (a, b2) = (seq.frame(2), seq.frame(4));
    c.bench_function("fuse pair", |b| b.iter(|| fusion.fuse(black_box(a), black_box(b2)).unwrap()));
}

fn recognition(c: &mut Criterion) {
    let seq = walker();
    let gei = compute_gei(&seq.frames()[..12]).unwrap();
    let other = compute_gei(&seq.frames()[12..]).unwrap();
    let gallery = vec![(gei.clone(), "a".to_string()), (other.clone(), "b".to_string())];
    let forest = train_forest(&gallery, &ForestConfig::default()).unwrap();
    c.bench_function("gei 12 frames", |b| b.iter(|| compute_gei(black_box(&seq.frames()[..12])).unwrap()));
    c.bench_function("forest rank 100 trees", |b| b.iter(|| forest.rank(black_box(&gei)).unwrap()));
    c.bench_function("soft dice", |b| b.iter(|| dice_values(black_box(gei.values()), other.values(), DiceMode::Soft)));
}

criterion_group!(benches, conv, autoencoder, predictor, fusion, recognition);
criterion_main!(benches);
