mod common;

use indexmap::IndexMap;
use proptest::prelude::*;
use tsdl::data::SeriesDataset;
use tsdl::layers::{Activation, LayerSpec};
use tsdl::train::{self, Adam, AdamConfig, EarlyStopping, Loss, Metric, TrainConfig};
use tsdl::zoo::{self, Hyper, TopModule, ENCODER_PREFIX};
use tsdl::{Error, Model, NodeSpec, Tensor};

use common::{gaussian, rel_err, STEP, TOLERANCE};

/// Hand recurrence for Adam on one scalar, written out independently of the
/// optimizer's tensor loop.
fn adam_by_hand(theta0: f64, grad: impl Fn(f64) -> f64, steps: usize, c: AdamConfig) -> Vec<f64> {
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(theta);
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g * g;
        let m_hat = m / (1.0 - c.beta1.powi(t as i32));
        let v_hat = v / (1.0 - c.beta2.powi(t as i32));
        theta -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
        out.push(theta);
    }
    out
}

#[test]
fn adam_matches_hand_recurrence_on_a_quadratic() {
    // f(x) = (x - 3)^2, f'(x) = 2 (x - 3)
    let c = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let expected = adam_by_hand(0.5, |x| 2.0 * (x - 3.0), 2, c);
    let mut opt = Adam::new(c);
    let mut p = Tensor::scalar(0.5);
    for want in expected {
        let g = IndexMap::from([("x".to_string(), Tensor::scalar(2.0 * (p.data()[0] - 3.0)))]);
        opt.step([("x".to_string(), &mut p)], &g).unwrap();
        assert!((p.data()[0] - want).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn nonzero_gradient_always_moves_the_parameter(g in -1e3f64..1e3, theta in -10f64..10.0) {
        prop_assume!(g.abs() > 1e-6);
        let mut opt = Adam::new(AdamConfig::default());
        let mut p = Tensor::scalar(theta);
        opt.step([("p".to_string(), &mut p)], &IndexMap::from([("p".to_string(), Tensor::scalar(g))])).unwrap();
        prop_assert!(p.data()[0] != theta);
        prop_assert!((p.data()[0] - theta).signum() == -g.signum());
    }

    #[test]
    fn loss_gradients_match_finite_differences(seed in 0u64..500) {
        let target = gaussian(&[3, 4], seed + 7);
        let pred = gaussian(&[3, 4], seed);
        for loss in [Loss::Mae, Loss::Mse] {
            let (_, g) = loss.evaluate(&pred, &target).unwrap();
            for i in 0..pred.len() {
                let mut up = pred.clone();
                up.data_mut()[i] += STEP;
                let mut down = pred.clone();
                down.data_mut()[i] -= STEP;
                let n = (loss.value(&up, &target).unwrap() - loss.value(&down, &target).unwrap()) / (2.0 * STEP);
                prop_assert!(rel_err(g.data()[i], n) <= TOLERANCE, "{loss} [{i}]");
            }
        }
        // cross-entropy is probed along directions that keep rows normalised
        let probs = softmax_rows(&pred);
        let onehot = tsdl::data::one_hot(&[0, 3, 1], 4).unwrap();
        let (_, g) = Loss::CategoricalCrossentropy.evaluate(&probs, &onehot).unwrap();
        for r in 0..3 {
            for (a, b) in [(0, 1), (2, 3), (1, 3)] {
                let mut up = probs.clone();
                let mut down = probs.clone();
                up.data_mut()[r * 4 + a] += STEP;
                up.data_mut()[r * 4 + b] -= STEP;
                down.data_mut()[r * 4 + a] -= STEP;
                down.data_mut()[r * 4 + b] += STEP;
                let ce = Loss::CategoricalCrossentropy;
                let n = (ce.value(&up, &onehot).unwrap() - ce.value(&down, &onehot).unwrap()) / (2.0 * STEP);
                let analytic = g.data()[r * 4 + a] - g.data()[r * 4 + b];
                prop_assert!(rel_err(analytic, n) <= TOLERANCE);
            }
        }
    }

    #[test]
    fn auc_of_independent_scores_is_near_one_half(seed in 0u64..50) {
        let s = gaussian(&[4000], seed);
        let l = gaussian(&[4000], seed + 10_000);
        let labels: Vec<bool> = l.data().iter().map(|&v| v > 0.0).collect();
        let a = train::auc(s.data(), &labels).unwrap();
        prop_assert!((a - 0.5).abs() < 0.05, "{a}");
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let k = *x.shape().last().unwrap();
    let mut out = Vec::new();
    for row in x.data().chunks(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    Tensor::new(x.shape(), out).unwrap()
}

fn linear_unit(seed: u64) -> Model {
    Model::from_nodes(
        vec![
            NodeSpec::new("x", LayerSpec::Input { shape: vec![1] }, &[]),
            NodeSpec::new("y", LayerSpec::dense(1, Activation::Linear), &["x"]),
        ],
        "y",
        seed,
    )
    .unwrap()
}

fn line_data(n: usize, seed: u64) -> SeriesDataset {
    let x = gaussian(&[n, 1], seed);
    let y = x.scale(3.0);
    SeriesDataset::new(x, y, "y = 3x").unwrap()
}

#[test]
fn least_squares_converges() {
    let mut m = linear_unit(1);
    let cfg = TrainConfig {
        loss: Loss::Mse,
        batch_size: 16,
        max_epochs: 200,
        early_stopping: None,
        optimizer: AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
        seed: 3,
    };
    let r = train::fit(&mut m, &line_data(128, 1), &line_data(32, 2), &cfg).unwrap();
    let losses: Vec<f64> = r.history.iter().map(|e| e.train_loss).collect();
    assert!(losses[..5].windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(*losses.last().unwrap() < 1e-3 * losses[0]);
    assert_eq!(r.history.len(), 200);
}

#[test]
fn one_epoch_cap_beats_patience() {
    let mut m = linear_unit(1);
    let cfg = TrainConfig {
        max_epochs: 1,
        early_stopping: Some(EarlyStopping::new(10, 0.0).unwrap()),
        batch_size: 7,
        ..TrainConfig::default()
    };
    let r = train::fit(&mut m, &line_data(20, 1), &line_data(5, 2), &cfg).unwrap();
    assert_eq!(r.history.len(), 1);
    assert!(r.to_string().starts_with("epoch 0 train_loss "));
    assert!(r.to_string().contains(" val_loss "));
}

#[test]
fn best_weights_are_restored() {
    // a huge learning rate makes validation loss bounce, so the best epoch
    // is rarely the last
    let mut m = linear_unit(4);
    let cfg = TrainConfig {
        loss: Loss::Mae,
        batch_size: 4,
        max_epochs: 40,
        early_stopping: Some(EarlyStopping::new(3, 0.0).unwrap()),
        optimizer: AdamConfig {
            lr: 2.0,
            ..AdamConfig::default()
        },
        seed: 5,
    };
    let val = line_data(16, 9);
    let r = train::fit(&mut m, &line_data(32, 8), &val, &cfg).unwrap();
    let best = r.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val_loss, best);
    assert_eq!(r.history[r.best_epoch].val_loss, best);
    let now = Loss::Mae.value(&m.predict(&[&val.inputs]).unwrap(), &val.targets).unwrap();
    assert_eq!(now, best);
}

#[test]
fn training_is_deterministic_per_seed() {
    let run = |seed| {
        let mut m = zoo::build_model_with("KhanZulfiqar", &[12, 1], &tiny(), Some(&TopModule::forecast(2, 1).unwrap()), 1).unwrap();
        let d = SeriesDataset::new(gaussian(&[20, 12, 1], 1), gaussian(&[20, 2, 1], 2), "noise").unwrap();
        let cfg = TrainConfig {
            batch_size: 6,
            max_epochs: 3,
            seed,
            ..TrainConfig::default()
        };
        train::fit(&mut m, &d, &d, &cfg).unwrap();
        m.weights_bytes()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn nan_loss_reports_divergence_with_epoch() {
    let mut m = linear_unit(1);
    let mut d = line_data(8, 1);
    d.targets.data_mut()[3] = f64::NAN;
    let err = train::fit(&mut m, &d, &line_data(4, 2), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 0, .. }), "{err}");
}

#[test]
fn mismatched_data_and_bad_config_are_rejected() {
    let mut m = linear_unit(1);
    let wrong = SeriesDataset::new(Tensor::zeros(&[4, 2]), Tensor::zeros(&[4, 1]), "").unwrap();
    assert!(matches!(train::fit(&mut m, &wrong, &wrong, &TrainConfig::default()), Err(Error::Shape(_))));
    let cfg = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(train::fit(&mut m, &line_data(4, 1), &line_data(4, 1), &cfg), Err(Error::Param(_))));
}

#[test]
fn metrics_by_name() {
    let scores = Tensor::new(&[4, 2], vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]).unwrap();
    let onehot = tsdl::data::one_hot(&[0, 1, 0, 0], 2).unwrap();
    assert_eq!(Metric::Accuracy.evaluate(&scores, &onehot).unwrap(), 0.75);
    let s = Tensor::new(&[4], vec![0.1, 0.4, 0.35, 0.8]).unwrap();
    let l = Tensor::new(&[4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(Metric::Auc.evaluate(&s, &l).unwrap(), 0.75);
    assert_eq!("mae".parse::<Metric>().unwrap(), Metric::Mae);
}

fn tiny() -> Hyper {
    let mut h = Hyper::default();
    h.filters = vec![3, 4];
    h.units = 4;
    h
}

#[test]
fn two_phase_freezes_the_pretrained_encoder() {
    let h = tiny();
    let shape = [16, 1];
    let mut ae = zoo::yildirim_autoencoder(&shape, &h, 1).unwrap();
    let mut clf = zoo::build_model_with("YildirimOzal", &shape, &h, Some(&TopModule::classify(2).unwrap()), 2).unwrap();
    let x = gaussian(&[24, 16, 1], 3);
    let ids: Vec<usize> = (0..24).map(|i| i % 2).collect();
    let d = SeriesDataset::new(x, tsdl::data::one_hot(&ids, 2).unwrap(), "noise").unwrap();
    let cfg = TrainConfig {
        loss: Loss::CategoricalCrossentropy,
        batch_size: 8,
        max_epochs: 3,
        early_stopping: None,
        ..TrainConfig::default()
    };
    let report = train::two_phase_autoencoder_fit(&mut ae, &mut clf, ENCODER_PREFIX, &d, &d, &cfg).unwrap();
    let encoder = |m: &Model| -> Vec<(String, Tensor)> {
        m.params()
            .into_iter()
            .filter(|(n, _)| n.starts_with(ENCODER_PREFIX))
            .map(|(n, t)| (n, t.clone()))
            .collect()
    };
    assert_eq!(encoder(&clf), encoder(&ae));
    assert_eq!(encoder(&clf).len(), 4);
    let text = report.to_string();
    let p1 = text.find("phase phase1").unwrap();
    let p2 = text.find("phase phase2").unwrap();
    assert!(p1 < p2);
    assert_eq!(report.phase1.history.len(), 3);
    assert_eq!(report.phase2.history.len(), 3);
}

#[test]
fn autoencoder_learns_a_constant_series() {
    let h = tiny();
    let mut ae = zoo::yildirim_autoencoder(&[16, 1], &h, 1).unwrap();
    let x = Tensor::full(&[32, 16, 1], 0.5);
    let d = SeriesDataset::new(x.clone(), x, "constant").unwrap();
    let cfg = TrainConfig {
        loss: Loss::Mse,
        batch_size: 4,
        max_epochs: 50,
        early_stopping: None,
        optimizer: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        seed: 1,
    };
    let r = train::fit(&mut ae, &d, &d, &cfg).unwrap();
    let first = r.history[0].train_loss;
    let last = r.history.last().unwrap().val_loss;
    assert!(last <= 1e-3 * first, "{first} -> {last}");
}
