//! Central finite-difference checks of every layer's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Projects the layer output on fixed random weights so the loss is scalar.
fn projected(layer: &Layer, x: &Tensor, r: &Tensor, mode: Mode) -> f64 {
    let y = layer.forward(x, mode).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn check_layer(mut layer: Layer, input_shape: &[usize], mode: Mode, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(input_shape, &mut rng);
    let out_shape = layer.output_shape(x.shape()).unwrap();
    let r = random(&out_shape, &mut rng);
    let (dx, dparams) = layer.backward(&x, &r, mode).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let num = (projected(&layer, &xp, &r, mode) - projected(&layer, &xm, &r, mode)) / (2.0 * H);
        worst = worst.max(rel_err(dx.data()[i], num));
    }
    let n_params = layer.params().len();
    assert_eq!(n_params, dparams.len());
    for p in 0..n_params {
        let len = layer.params()[p].len();
        for i in 0..len {
            let orig = layer.params()[p].data()[i];
            layer.params_mut()[p].data_mut()[i] = orig + H;
            let fp = projected(&layer, &x, &r, mode);
            layer.params_mut()[p].data_mut()[i] = orig - H;
            let fm = projected(&layer, &x, &r, mode);
            layer.params_mut()[p].data_mut()[i] = orig;
            worst = worst.max(rel_err(dparams[p].data()[i], (fp - fm) / (2.0 * H)));
        }
    }
    assert!(worst < TOL, "{:?}: worst relative error {worst:e}", layer.spec());
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

#[test]
fn conv2d_gradients() {
    check_layer(Layer::Conv2d(Conv2d::new(2, 3, 3, &mut rng()).unwrap()), &[2, 2, 8, 8], Mode::Train, 1);
    check_layer(Layer::Conv2d(Conv2d::new(1, 2, 5, &mut rng()).unwrap()), &[1, 1, 6, 7], Mode::Train, 2);
}

#[test]
fn pooling_upsampling_cropping_gradients() {
    check_layer(Layer::MaxPool2d { factor: 2 }, &[2, 2, 5, 6], Mode::Train, 3);
    check_layer(Layer::Upsample2d { factor: 2 }, &[1, 2, 3, 4], Mode::Train, 4);
    check_layer(Layer::CropRows { rows: 1 }, &[1, 2, 6, 3], Mode::Train, 5);
}

#[test]
fn dense_and_activation_gradients() {
    check_layer(Layer::Dense(Dense::new(12, 5, &mut rng()).unwrap()), &[3, 3, 2, 2], Mode::Train, 6);
    check_layer(Layer::Sigmoid, &[2, 7], Mode::Train, 7);
    check_layer(Layer::Relu, &[2, 7], Mode::Train, 8);
    check_layer(Layer::Flatten, &[2, 2, 3, 1], Mode::Train, 9);
    check_layer(Layer::Reshape { shape: vec![3, 2] }, &[2, 6], Mode::Train, 10);
}

#[test]
fn batchnorm_gradients_in_both_modes() {
    let mut bn = BatchNorm2d::new(3).unwrap();
    bn.gamma = Tensor::new(vec![3], vec![0.5, 1.5, -0.7]).unwrap();
    bn.beta = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
    check_layer(Layer::BatchNorm(bn.clone()), &[3, 3, 4, 4], Mode::Train, 12);
    bn.running_mean = Tensor::new(vec![3], vec![0.2, -0.1, 0.0]).unwrap();
    bn.running_var = Tensor::new(vec![3], vec![0.5, 2.0, 1.0]).unwrap();
    check_layer(Layer::BatchNorm(bn), &[2, 3, 3, 3], Mode::Eval, 13);
}

#[test]
fn residual_block_gradients() {
    let block = ResidualBlock::new(2, 3, &mut rng()).unwrap();
    check_layer(Layer::Residual(block.clone()), &[2, 2, 5, 5], Mode::Train, 14);
    check_layer(Layer::Residual(block), &[1, 2, 4, 4], Mode::Eval, 15);
}

#[test]
fn lstm_cell_gradients() {
    let mut rng = rng();
    let mut cell = LstmCell::new(4, 3, &mut rng).unwrap();
    let x = random(&[2, 4], &mut rng);
    let state = LstmState { h: random(&[2, 3], &mut rng), c: random(&[2, 3], &mut rng) };
    let rh = random(&[2, 3], &mut rng);
    let rc = random(&[2, 3], &mut rng);
    let objective = |cell: &LstmCell, x: &Tensor, s: &LstmState| {
        let (next, _) = cell.step(x, s).unwrap();
        let a: f64 = next.h.data().iter().zip(rh.data()).map(|(p, q)| p * q).sum();
        let b: f64 = next.c.data().iter().zip(rc.data()).map(|(p, q)| p * q).sum();
        a + b
    };
    let (_, trace) = cell.step(&x, &state).unwrap();
    let g = cell.step_backward(&trace, &rh, &rc, true).unwrap();

    let mut worst: f64 = 0.0;
    let mut probe = |analytic: &[f64], perturb: &mut dyn FnMut(usize, f64) -> f64| {
        for (i, &a) in analytic.iter().enumerate() {
            let num = (perturb(i, H) - perturb(i, -H)) / (2.0 * H);
            worst = worst.max(rel_err(a, num));
        }
    };
    probe(g.dx.as_ref().unwrap().data(), &mut |i, d| {
        let mut xp = x.clone();
        xp.data_mut()[i] += d;
        objective(&cell, &xp, &state)
    });
    probe(g.dh_prev.data(), &mut |i, d| {
        let mut s = state.clone();
        s.h.data_mut()[i] += d;
        objective(&cell, &x, &s)
    });
    probe(g.dc_prev.data(), &mut |i, d| {
        let mut s = state.clone();
        s.c.data_mut()[i] += d;
        objective(&cell, &x, &s)
    });
    for p in 0..3 {
        let analytic = g.params[p].data().to_vec();
        probe(&analytic, &mut |i, d| {
            let orig = cell.params()[p].data()[i];
            cell.params_mut()[p].data_mut()[i] = orig + d;
            let v = objective(&cell, &x, &state);
            cell.params_mut()[p].data_mut()[i] = orig;
            v
        });
    }
    assert!(worst < TOL, "lstm worst relative error {worst:e}");
}

#[test]
fn relu_blocks_gradient_at_negative_input() {
    let x = Tensor::new(vec![1, 2], vec![-0.5, 0.5]).unwrap();
    let (dx, _) = Layer::Relu.backward(&x, &Tensor::filled(&[1, 2], 1.0), Mode::Train).unwrap();
    assert_eq!(dx.data(), &[0.0, 1.0]);
}

#[test]
fn dense_weight_gradient_of_output_sum_is_input() {
    let d = Dense::new(3, 2, &mut rng()).unwrap();
    let x = Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap();
    let (_, g) = d.backward(&x, &Tensor::filled(&[1, 2], 1.0)).unwrap();
    assert_eq!(g[0].data(), &[0.3, -1.2, 2.0, 0.3, -1.2, 2.0]);
    assert_eq!(g[1].data(), &[1.0, 1.0]);
}

#[test]
fn sequential_backward_matches_layerwise_chain() {
    let mut r = rng();
    let specs = vec![
        LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { factor: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 2 * 3 * 3, units: 2 },
    ];
    let mut net = Sequential::from_specs(&specs, &mut r).unwrap();
    let x = random(&[2, 1, 5, 5], &mut r);
    let g = random(&[2, 2], &mut r);
    let (y, acts) = net.forward_train(&x).unwrap();
    assert_eq!(y, net.forward(&x, Mode::Eval).unwrap());
    let (_, grads) = net.backward(acts, &g).unwrap();
    assert_eq!(grads.len(), net.params().len());
    // weight gradient of the first conv by finite differences on one entry
    let loss = |net: &Sequential| -> f64 {
        let y = net.forward(&x, Mode::Eval).unwrap();
        y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    };
    let orig = net.params()[0].data()[4];
    net.params_mut()[0].data_mut()[4] = orig + H;
    let fp = loss(&net);
    net.params_mut()[0].data_mut()[4] = orig - H;
    let fm = loss(&net);
    assert!(rel_err(grads[0].data()[4], (fp - fm) / (2.0 * H)) < TOL);
}
