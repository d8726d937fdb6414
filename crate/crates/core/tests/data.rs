use proptest::prelude::*;
use tsdl::data::{self, synth, Column, SeriesDataset, DEFAULT_SPLIT};
use tsdl::layers::LayerSpec;
use tsdl::{Error, Model, NodeSpec, Tensor};

fn col(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
}

fn total_variation(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

proptest! {
    #[test]
    fn smoothing_never_adds_variation(v in prop::collection::vec(-100.0f64..100.0, 2..80), w in 2usize..10, it in 1usize..4) {
        let s = data::smooth(&col(&v), w, it).unwrap();
        prop_assert_eq!(s.len(), v.len());
        prop_assert!(total_variation(s.data()) <= total_variation(&v) + 1e-9);
    }

    #[test]
    fn constant_series_survive_smoothing(c in -5.0f64..5.0, n in 1usize..50, w in 1usize..8) {
        let s = data::smooth(&col(&vec![c; n]), w, 3).unwrap();
        prop_assert!(s.data().iter().all(|&x| (x - c).abs() < 1e-12));
    }

    #[test]
    fn windows_reassemble_the_series(v in prop::collection::vec(-10.0f64..10.0, 6..60), i in 1usize..4, o in 1usize..3) {
        prop_assume!(v.len() >= i + o);
        let d = data::windowize(&col(&v), i, o, 1).unwrap();
        prop_assert_eq!(d.len(), v.len() - i - o + 1);
        // the first step of every input window walks the series
        for j in 0..d.len() {
            prop_assert_eq!(d.inputs.data()[j * i], v[j]);
            prop_assert_eq!(d.targets.data()[j * o], v[j + i]);
        }
        let tail = &d.inputs.data()[(d.len() - 1) * i..];
        prop_assert_eq!(tail, &v[d.len() - 1..d.len() - 1 + i]);
    }

    #[test]
    fn splits_partition_in_order(n in 5usize..500) {
        let s = Tensor::new(&[n, 1], (0..n).map(|x| x as f64).collect()).unwrap();
        let (a, b, c) = data::chrono_split(&s, DEFAULT_SPLIT).unwrap();
        let joined = Tensor::concat(&[&a, &b, &c], 0).unwrap();
        prop_assert_eq!(joined, s);
        prop_assert_eq!(a.shape()[0], (n as f64 * 0.7 + 1e-9).floor() as usize);
    }

    #[test]
    fn zscore_moments(v in prop::collection::vec(-1e3f64..1e3, 3..100)) {
        prop_assume!(data::moments(&v).1 > 1e-6);
        let z = data::zscore(&v).unwrap();
        let (m, s) = data::moments(&z);
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((s - 1.0).abs() < 1e-9);
        let again = data::zscore(&z).unwrap();
        prop_assert!(again.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn top_k_labels_exactly_k(scores in prop::collection::vec(-3.0f64..3.0, 1..60), frac in 0.0f64..1.0) {
        let k = (frac * scores.len() as f64) as usize;
        let labels = data::top_k(&scores, k).unwrap();
        prop_assert_eq!(labels.iter().filter(|&&l| l).count(), k);
        let min_in = scores.iter().zip(&labels).filter(|(_, &l)| l).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        let max_out = scores.iter().zip(&labels).filter(|(_, &l)| !l).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_in >= max_out);
    }

    #[test]
    fn generators_are_reproducible(seed in 0u64..1000) {
        prop_assert_eq!(synth::sine_mix(&[7.0, 13.0], 0.1, 64, seed).unwrap(), synth::sine_mix(&[7.0, 13.0], 0.1, 64, seed).unwrap());
        prop_assert_eq!(synth::labeled_segments(3, 20, 2, seed).unwrap(), synth::labeled_segments(3, 20, 2, seed).unwrap());
        prop_assert_eq!(synth::traffic_with_anomalies(4, 100, 0.1, seed).unwrap(), synth::traffic_with_anomalies(4, 100, 0.1, seed).unwrap());
    }
}

#[test]
fn smoothing_by_hand() {
    assert_eq!(data::smooth(&col(&[0.0, 2.0, 4.0]), 2, 1).unwrap().data(), &[0.0, 1.0, 3.0]);
    // two passes of the same window compose
    let once = data::smooth(&col(&[0.0, 2.0, 4.0]), 2, 1).unwrap();
    assert_eq!(data::smooth(&once, 2, 1).unwrap(), data::smooth(&col(&[0.0, 2.0, 4.0]), 2, 2).unwrap());
}

#[test]
fn split_examples() {
    let s = Tensor::zeros(&[100, 1]);
    let (a, b, c) = data::chrono_split(&s, DEFAULT_SPLIT).unwrap();
    assert_eq!((a.shape()[0], b.shape()[0], c.shape()[0]), (70, 20, 10));
    let (a, b, c) = data::chrono_split(&Tensor::zeros(&[10, 1]), DEFAULT_SPLIT).unwrap();
    assert_eq!((a.shape()[0], b.shape()[0], c.shape()[0]), (7, 2, 1));
    // floor(0.2 * n) is zero below five steps, which would leave validation empty
    for n in 1..5 {
        assert!(matches!(data::chrono_split(&Tensor::zeros(&[n, 1]), DEFAULT_SPLIT), Err(Error::Data(_))));
    }
}

#[test]
fn segment_examples() {
    let d = synth::labeled_segments(5, 1000, 100, 1).unwrap();
    assert_eq!(d.len(), 500);
    for c in 0..5 {
        let count = d.targets.data().chunks(5).filter(|r| r[c] == 1.0).count();
        assert_eq!(count, 100);
    }
}

#[test]
fn anomaly_injection_count_is_exact() {
    let (series, labels) = synth::traffic_with_anomalies(6, 10_000, 0.05, 4).unwrap();
    assert_eq!(series.shape(), &[10_000, 6]);
    assert_eq!(labels.iter().filter(|&&l| l).count(), 500);
}

#[test]
fn noiseless_sine_autocorrelation_peaks_at_its_period() {
    let s = synth::sine_mix(&[20.0], 0.0, 400, 2).unwrap();
    let x = s.data();
    let ac = |lag: usize| -> f64 { (0..x.len() - lag).map(|t| x[t] * x[t + lag]).sum::<f64>() / (x.len() - lag) as f64 };
    let best = (5..35).max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
    assert_eq!(best, 20);
}

/// Forecasts the next steps as a copy of the first steps of the window,
/// which is exact on a constant series.
fn echo_model(window: usize, steps: usize, features: usize) -> Model {
    Model::from_nodes(
        vec![
            NodeSpec::new("x", LayerSpec::Input { shape: vec![window, features] }, &[]),
            NodeSpec::new("echo", LayerSpec::FitTime { length: steps }, &["x"]),
        ],
        "echo",
        0,
    )
    .unwrap()
}

#[test]
fn harness_separates_corrupted_windows_perfectly() {
    let series = Tensor::full(&[120, 2], 1.0);
    let windows = data::windowize(&series, 8, 2, 1).unwrap();
    let n = windows.len();
    let mut labels = vec![false; n];
    for j in [5, 40, 77, 100] {
        labels[j] = true;
    }
    let mut corrupted = windows.clone();
    for (j, &l) in labels.iter().enumerate() {
        if l {
            corrupted.targets.data_mut()[j * 4] += 3.0;
        }
    }
    let model = echo_model(8, 2, 2);
    let k = labels.iter().filter(|&&l| l).count();
    let report = data::anomaly_harness(&model, &corrupted, &labels, k).unwrap();
    assert_eq!(report.auc, 1.0);
    assert_eq!(report.predicted, labels);
    assert_eq!(report.predicted.iter().filter(|&&p| p).count(), k);
    assert!(matches!(data::anomaly_harness(&model, &corrupted, &labels, n + 1), Err(Error::Param(_))));
}

#[test]
fn csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let s = Tensor::new(&[3, 2], vec![0.1, -2.0, 1e-7, 3.5, 42.0, 0.3333333333333333]).unwrap();
    data::write_csv(&path, &s, Some(&["a", "b"])).unwrap();
    assert_eq!(data::load_csv(&path, true, &[]).unwrap(), s);
    let b = data::load_csv(&path, true, &[Column::from("b")]).unwrap();
    assert_eq!(b.data(), &[-2.0, 3.5, 0.3333333333333333]);
    assert!(matches!(data::load_csv(&path, true, &[Column::from("zzz")]), Err(Error::Format(_))));

    let single = dir.path().join("single.csv");
    std::fs::write(&single, "1\n2\n3\n").unwrap();
    assert_eq!(data::load_csv(&single, false, &[]).unwrap().shape(), &[3, 1]);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "v\n1\n2\nx\n").unwrap();
    let err = data::load_csv(&bad, true, &[]).unwrap_err().to_string();
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn dataset_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let d = synth::labeled_segments(2, 8, 3, 5).unwrap();
    let d = SeriesDataset::new(
        Tensor::new(d.inputs.shape(), d.inputs.data().iter().map(|&v| v as f32 as f64).collect()).unwrap(),
        d.targets,
        d.note,
    )
    .unwrap();
    data::save_dataset(&path, &d).unwrap();
    assert_eq!(data::load_dataset(&path).unwrap(), d);
    let mut bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..7], data::DATASET_MAGIC);
    bytes[30] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(data::load_dataset(&path), Err(Error::Format(_))));
}
