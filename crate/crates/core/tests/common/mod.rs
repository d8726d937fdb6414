//! Central finite-difference gradient checking shared by integration tests.
#![allow(dead_code)]

use tsdl::layers::{Activation, Layer, LayerSpec, Mode, Padding, RecurrentCell};
use tsdl::tensor::{seeded_rng, Fill};
use tsdl::{Model, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn gaussian(shape: &[usize], seed: u64) -> Tensor {
    Tensor::make(shape, Fill::Gaussian { mean: 0.0, stdev: 1.0, seed }).unwrap()
}

/// Denominator floor for relative errors. Central differences at `STEP`
/// carry roundoff near 1e-10, so gradients that are exactly zero (a bias
/// feeding a batch norm) would otherwise read as large relative errors.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// `sum(weights * y)`, whose gradient with respect to `y` is `weights`.
fn project(y: &Tensor, weights: &Tensor) -> f64 {
    y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error between analytic and central-difference gradients
/// over every input and parameter element of a freshly built layer.
///
/// Each probe evaluates a clone of the pristine layer, so running buffers
/// and dropout generators start from the same state every time.
pub fn check_layer(spec: &LayerSpec, sample_shapes: &[Vec<usize>], batch: usize, mode: Mode, seed: u64) -> f64 {
    let layer = spec.build(sample_shapes, &mut seeded_rng(seed)).unwrap();
    let inputs: Vec<Tensor> = sample_shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut full = vec![batch];
            full.extend(s);
            gaussian(&full, seed * 31 + i as u64)
        })
        .collect();
    let eval = |layer: &dyn Layer, inputs: &[Tensor]| -> Tensor {
        let mut l = layer.clone_box();
        let refs: Vec<&Tensor> = inputs.iter().collect();
        l.forward(&refs, mode).unwrap()
    };
    let y = eval(layer.as_ref(), &inputs);
    let weights = gaussian(y.shape(), seed + 1000);

    let mut probe = layer.clone_box();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    probe.forward(&refs, mode).unwrap();
    let grads = probe.backward(&weights).unwrap();
    assert_eq!(grads.inputs.len(), inputs.len());
    assert_eq!(grads.params.len(), layer.params().len());

    let mut worst: f64 = 0.0;
    for (k, g) in grads.inputs.iter().enumerate() {
        assert_eq!(g.shape(), inputs[k].shape());
        for i in 0..g.len() {
            let mut shifted = inputs.clone();
            shifted[k].data_mut()[i] += STEP;
            let up = project(&eval(layer.as_ref(), &shifted), &weights);
            shifted[k].data_mut()[i] -= 2.0 * STEP;
            let down = project(&eval(layer.as_ref(), &shifted), &weights);
            worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * STEP)));
        }
    }
    for (p, g) in grads.params.iter().enumerate() {
        for i in 0..g.len() {
            let perturbed = |delta: f64| {
                let mut l = layer.clone_box();
                l.params_mut()[p].1.data_mut()[i] += delta;
                project(&eval(l.as_ref(), &inputs), &weights)
            };
            let numeric = (perturbed(STEP) - perturbed(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[i], numeric));
        }
    }
    worst
}

/// Same check for a whole graph through [`Model::backward`].
pub fn check_model(model: &Model, inputs: &[Tensor], mode: Mode, seed: u64) -> f64 {
    let eval = |m: &Model, xs: &[Tensor]| -> Tensor {
        let mut m = m.clone();
        let refs: Vec<&Tensor> = xs.iter().collect();
        m.forward_mode(&refs, mode).unwrap()
    };
    let y = eval(model, inputs);
    let weights = gaussian(y.shape(), seed);
    let mut probe = model.clone();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    probe.forward_mode(&refs, mode).unwrap();
    let grads = probe.backward(&weights).unwrap();

    let mut worst: f64 = 0.0;
    for (k, g) in grads.inputs.iter().enumerate() {
        for i in 0..g.len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += STEP;
            let up = project(&eval(model, &shifted), &weights);
            shifted[k].data_mut()[i] -= 2.0 * STEP;
            let down = project(&eval(model, &shifted), &weights);
            worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * STEP)));
        }
    }
    for (name, g) in &grads.params {
        for i in 0..g.len() {
            let perturbed = |delta: f64| {
                let mut m = model.clone();
                for (n, t) in m.params_mut() {
                    if &n == name {
                        t.data_mut()[i] += delta;
                    }
                }
                project(&eval(&m, inputs), &weights)
            };
            let numeric = (perturbed(STEP) - perturbed(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[i], numeric));
        }
    }
    worst
}

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// A named layer configuration together with its per-sample input shapes.
pub struct Case {
    pub name: &'static str,
    pub spec: LayerSpec,
    pub shapes: Vec<Vec<usize>>,
    pub mode: Mode,
}

fn case(name: &'static str, spec: LayerSpec, shapes: &[&[usize]]) -> Case {
    Case {
        name,
        spec,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        mode: Mode::Train,
    }
}

/// Every layer family the engine offers, at sizes small enough to probe
/// element by element.
pub fn layer_cases() -> Vec<Case> {
    let seq: &[usize] = &[7, 2];
    let conv = |padding, stride| LayerSpec::Conv1d {
        filters: 3,
        kernel: 3,
        stride,
        padding,
        activation: Activation::Tanh,
    };
    let mut bn_eval = case("batchnorm_eval", LayerSpec::batch_norm(), &[seq]);
    bn_eval.mode = Mode::Eval;
    vec![
        case("conv1d_valid", conv(Padding::Valid, 1), &[seq]),
        case("conv1d_same", conv(Padding::Same, 1), &[seq]),
        case("conv1d_full", conv(Padding::Full, 1), &[seq]),
        case("conv1d_strided", conv(Padding::Same, 2), &[seq]),
        case("max_pool", LayerSpec::max_pool(2), &[seq]),
        case("avg_pool", LayerSpec::avg_pool(3, 2), &[seq]),
        case("global_avg_pool", LayerSpec::global_avg_pool(), &[seq]),
        case("dense", LayerSpec::dense(4, Activation::Tanh), &[&[5]]),
        case("dense_softmax", LayerSpec::dense(4, Activation::Softmax), &[&[5]]),
        case("relu", LayerSpec::relu(), &[seq]),
        case("leaky_relu", LayerSpec::Activation(Activation::LeakyRelu(0.3)), &[seq]),
        case("sigmoid", LayerSpec::Activation(Activation::Sigmoid), &[seq]),
        case("tanh", LayerSpec::Activation(Activation::Tanh), &[seq]),
        case("softmax", LayerSpec::Activation(Activation::Softmax), &[seq]),
        case("batchnorm_train", LayerSpec::batch_norm(), &[seq]),
        bn_eval,
        case("dropout_frozen_mask", LayerSpec::dropout(0.3), &[seq]),
        case("lstm_sequences", LayerSpec::lstm(3, true), &[seq]),
        case("lstm_last", LayerSpec::lstm(3, false), &[seq]),
        case("gru_sequences", LayerSpec::gru(3, true), &[seq]),
        case("gru_last", LayerSpec::gru(3, false), &[seq]),
        case("bilstm", LayerSpec::bidirectional(RecurrentCell::Lstm, 2, true), &[seq]),
        case("bigru", LayerSpec::bidirectional(RecurrentCell::Gru, 2, false), &[seq]),
        case("se_block", LayerSpec::SeBlock { ratio: 2 }, &[&[7, 4]]),
        case(
            "rta_block_projected",
            LayerSpec::RtaBlock { filters: 3, kernel: 3, pool_window: 2 },
            &[seq],
        ),
        case(
            "rta_block_identity",
            LayerSpec::RtaBlock { filters: 2, kernel: 3, pool_window: 2 },
            &[seq],
        ),
        case(
            "spatiotemporal_attention",
            LayerSpec::SpatioTemporalAttention { ratio: 2, kernel: 3 },
            &[&[7, 4]],
        ),
        case("tanh_attention", LayerSpec::TanhAttention { units: 3 }, &[seq]),
        case("flatten", LayerSpec::Flatten, &[seq]),
        case("reshape", LayerSpec::Reshape { shape: vec![2, 7] }, &[seq]),
        case("add", LayerSpec::Add, &[seq, seq, seq]),
        case("multiply", LayerSpec::Multiply, &[seq, seq]),
        case("concat", LayerSpec::Concat, &[seq, &[7, 3]]),
        case("upsample", LayerSpec::Upsample1d { factor: 2 }, &[seq]),
        case("fit_time_crop", LayerSpec::FitTime { length: 5 }, &[seq]),
        case("fit_time_pad", LayerSpec::FitTime { length: 9 }, &[seq]),
        case("repeat_time", LayerSpec::RepeatTime { times: 4 }, &[&[3]]),
        case("repeat_channels", LayerSpec::RepeatChannels { times: 3 }, &[&[7, 1]]),
        case("channel_mean", LayerSpec::ChannelMean, &[seq]),
        case("reverse_time", LayerSpec::ReverseTime, &[seq]),
    ]
}

pub fn find_case(name: &str) -> Case {
    layer_cases().into_iter().find(|c| c.name == name).expect("known case")
}

/// Worst error of one case across all seeds.
pub fn run_case(c: &Case) -> f64 {
    SEEDS
        .iter()
        .map(|&s| check_layer(&c.spec, &c.shapes, 3, c.mode, s))
        .fold(0.0, f64::max)
}
