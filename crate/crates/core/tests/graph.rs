mod common;

use proptest::prelude::*;
use tsdl::layers::{Activation, LayerSpec, Mode};
use tsdl::zoo::{self, Hyper, TopModule};
use tsdl::{Model, NodeSpec, Tensor};

use common::{check_model, gaussian, TOLERANCE};

fn tiny() -> Hyper {
    let mut h = Hyper::default();
    h.filters = vec![2, 3];
    h.units = 2;
    h.se_ratio = 2;
    h
}

fn check_zoo(name: &str, time: usize, top: Option<&TopModule>) {
    let d = zoo::descriptor(name).unwrap();
    let m = zoo::build_model_with(name, &[time, 1], &tiny(), top, 3).unwrap();
    let xs: Vec<Tensor> = (0..d.branches).map(|i| gaussian(&[2, time, 1], 40 + i as u64)).collect();
    for seed in [1, 2] {
        let worst = check_model(&m, &xs, Mode::Train, seed);
        assert!(worst <= TOLERANCE, "{name}: {worst:e}");
    }
}

#[test]
fn whole_graph_gradients_match_finite_differences() {
    check_zoo("KimTaeYoung", 16, Some(&TopModule::forecast(3, 1).unwrap()));
    check_zoo("ShiHaotian", 8, None);
    check_zoo("CaiWenjuan", 8, None);
    check_zoo("YiboGao", 12, None);
    check_zoo("ZhangJin", 24, None);
    check_zoo("WeiXiaoyan", 94, None);
}

fn diamond(order: &[usize], seed: u64) -> Model {
    let specs = [
        NodeSpec::new("x", LayerSpec::Input { shape: vec![4, 2] }, &[]),
        NodeSpec::new("a", LayerSpec::conv1d(3, 2), &["x"]),
        NodeSpec::new("b", LayerSpec::conv1d(3, 2), &["x"]),
        NodeSpec::new("sum", LayerSpec::Add, &["a", "b"]),
        NodeSpec::new("flat", LayerSpec::Flatten, &["sum"]),
        NodeSpec::new("out", LayerSpec::dense(2, Activation::Tanh), &["flat"]),
    ];
    let picked = order.iter().map(|&i| specs[i].clone()).collect();
    Model::from_nodes(picked, "out", seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn declaration_order_never_changes_results(order in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(), seed in 0u64..1000) {
        let reference = diamond(&[0, 1, 2, 3, 4, 5], seed);
        let shuffled = diamond(&order, seed);
        let x = gaussian(&[3, 4, 2], seed);
        prop_assert_eq!(reference.predict(&[&x]).unwrap(), shuffled.predict(&[&x]).unwrap());
    }

    #[test]
    fn predict_is_pure_and_matches_eval_forward(seed in 0u64..1000) {
        let mut m = zoo::build_model_with("KhanZulfiqar", &[12, 1], &tiny(), None, seed).unwrap();
        let x = gaussian(&[2, 12, 1], seed);
        let a = m.predict(&[&x]).unwrap();
        let b = m.predict(&[&x]).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a, m.forward_mode(&[&x], Mode::Eval).unwrap());
    }

    #[test]
    fn weights_round_trip_exactly(seed in 0u64..1000) {
        let a = zoo::build_model_with("ZhengZhenyu", &[40, 1], &tiny(), None, seed).unwrap();
        let mut b = zoo::build_model_with("ZhengZhenyu", &[40, 1], &tiny(), None, seed + 1).unwrap();
        b.load_weights_bytes(&a.weights_bytes()).unwrap();
        let x = gaussian(&[2, 40, 1], seed);
        prop_assert_eq!(a.predict(&[&x]).unwrap(), b.predict(&[&x]).unwrap());
        prop_assert_eq!(a.weights_bytes(), b.weights_bytes());
    }
}

#[test]
fn same_seed_builds_identical_weights() {
    let a = zoo::build_model("HongTan", &[100, 1], None, 9).unwrap();
    let b = zoo::build_model("HongTan", &[100, 1], None, 9).unwrap();
    let c = zoo::build_model("HongTan", &[100, 1], None, 10).unwrap();
    assert_eq!(a.weights_bytes(), b.weights_bytes());
    assert_ne!(a.weights_bytes(), c.weights_bytes());
}

#[test]
fn frozen_prefix_is_left_out_of_gradients() {
    let mut m = zoo::build_model_with("YildirimOzal", &[16, 1], &tiny(), Some(&TopModule::classify(2).unwrap()), 1).unwrap();
    m.freeze("encoder_");
    let x = gaussian(&[2, 16, 1], 5);
    let y = m.forward(&[&x]).unwrap();
    let g = m.backward(&Tensor::full(y.shape(), 0.5)).unwrap();
    assert!(g.params.keys().all(|k| !k.starts_with("encoder_")));
    assert_eq!(g.params.len(), m.params().iter().filter(|(n, _)| !n.starts_with("encoder_")).count());
}
