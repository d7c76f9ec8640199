use proptest::prelude::*;

use wdn_core::data::{
    generate_network, inject_anomalies, inject_missing, parse_csv, to_csv, AnomalySpec, SynthConfig, TimeFeatures,
    Timestamp,
};
use wdn_core::impute::{fit_forest, impute_series, ForestConfig};
use wdn_core::models::forecaster::cnn_emd_nodes;
use wdn_core::models::imf_matrix::fit_channel_params;
use wdn_core::models::{
    detect, forecast_pressure, prepare_imf_matrix, reconcile_channels, train_forecaster, CnnEmdConfig, DetectConfig,
};
use wdn_core::nn::layers::batch_norm_infer;
use wdn_core::nn::{GraphSpec, InputSpec, NamedTensors, NetworkModel, Tensor, TrainConfig};
use wdn_core::preprocess::{fit_minmax, one_hot_time, series_to_supervised};
use wdn_core::signal::{acf, decompose, EmdConfig};
use wdn_core::{Direction, SensorKind, SensorSeries};

fn small_network(seed: u64, noise_std: f64) -> wdn_core::Dataset {
    generate_network(&SynthConfig { days: 3, n_points: 2, noise_std, seed }).unwrap()
}

fn signal(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let f1 = rng.gen_range(0.002..0.02);
    let f2 = rng.gen_range(0.03..0.2);
    (0..len)
        .map(|t| {
            let t = t as f64;
            (std::f64::consts::TAU * f1 * t).sin()
                + 0.4 * (std::f64::consts::TAU * f2 * t).cos()
                + 0.2 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

/// The conv part of the forecaster, up to the per-time-step `mix` layer.
fn conv_stack(cfg: &CnnEmdConfig, seed: u64) -> NetworkModel {
    let (nodes, _) = cnn_emd_nodes(cfg, "imf", "");
    let keep = nodes.iter().position(|n| n.name == "last").unwrap();
    let spec = GraphSpec {
        inputs: vec![InputSpec { name: "imf".into(), shape: vec![cfg.lookback, cfg.channels] }],
        nodes: nodes[..keep].to_vec(),
        output: "mix".into(),
    };
    NetworkModel::new(spec, seed).unwrap()
}

fn one(name: &str, t: Tensor) -> NamedTensors {
    let mut m = NamedTensors::new();
    m.insert(name.into(), t);
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip(seed in 0u64..1000, rate in 0.0f64..0.3) {
        let ds = inject_missing(&small_network(seed, 0.02), rate, seed).unwrap();
        let text = to_csv(&ds);
        let back = parse_csv(&text).unwrap();
        prop_assert_eq!(&back, &ds.clone().with_labels(None));
        prop_assert_eq!(to_csv(&back), text);
    }

    #[test]
    fn injection_touches_only_its_interval(
        start in 0usize..200,
        duration in 1usize..40,
        magnitude in 0.05f64..1.0,
        spike in any::<bool>(),
    ) {
        let ds = small_network(1, 0.02);
        let spec = AnomalySpec {
            sensor_id: "inlet_pressure".into(),
            start_index: start,
            duration,
            kind: if spike { Direction::Spike } else { Direction::Drop },
            magnitude,
        };
        let out = inject_anomalies(&ds, &[spec]).unwrap();
        prop_assert_eq!(out.len(), ds.len());
        let (a, b) = (ds.inlet().values(), out.inlet().values());
        for t in (0..a.len()).filter(|&t| t < start || t >= start + duration) {
            prop_assert_eq!(a[t].to_bits(), b[t].to_bits());
        }
        for (x, y) in ds.distribution_pressure().iter().zip(out.distribution_pressure()) {
            prop_assert_eq!(x, y);
        }
        let labels = out.labels().unwrap();
        prop_assert_eq!(labels.len(), 1);
        prop_assert_eq!(labels[0].end_index, start + duration - 1);
    }

    #[test]
    fn imputation_preserves_valid_samples(seed in 0u64..500, rate in 0.02f64..0.3) {
        let ds = inject_missing(&small_network(seed, 0.02), rate, seed).unwrap();
        let series = ds.inlet();
        let model = fit_forest(series, &ForestConfig { n_trees: 5, seed, ..ForestConfig::default() }).unwrap();
        let out = impute_series(series, &model).unwrap();
        prop_assert!(out.all_valid());
        let (lo, hi) = series
            .values()
            .iter()
            .zip(series.valid())
            .filter(|(_, &ok)| ok)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (&v, _)| (l.min(v), h.max(v)));
        for t in 0..series.len() {
            if series.valid()[t] {
                prop_assert_eq!(series.values()[t].to_bits(), out.values()[t].to_bits());
            } else {
                prop_assert!(out.values()[t] >= lo && out.values()[t] <= hi);
            }
        }
    }

    #[test]
    fn minmax_maps_fitted_values_into_unit_interval(values in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let p = fit_minmax(&values, "x").unwrap();
        for &v in &values {
            let n = p.normalize(v);
            prop_assert!((0.0..=1.0).contains(&n), "{} -> {}", v, n);
        }
    }

    #[test]
    fn supervised_windows_reconstruct_source(
        len in 4usize..120,
        lookback in 1usize..20,
        seed in 0u64..100,
    ) {
        prop_assume!(lookback < len);
        let a = signal(len, seed);
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x - 1.0).collect();
        let set = series_to_supervised(&[&a, &b], lookback, 1, 0).unwrap();
        prop_assert_eq!(set.n_samples, len - lookback);
        let mut rebuilt: Vec<f64> = (0..set.n_samples).map(|s| set.input(s, 0, 0)).collect();
        rebuilt.extend((1..lookback).map(|w| set.input(set.n_samples - 1, w, 0)));
        prop_assert_eq!(&rebuilt[..], &a[..len - 1]);
        for s in 0..set.n_samples {
            prop_assert_eq!(set.targets[s], a[s + lookback]);
            prop_assert_eq!(set.input(s, lookback - 1, 1), b[s + lookback - 1]);
        }
    }

    #[test]
    fn emd_reconstructs(len in 16usize..1500, seed in 0u64..10_000) {
        let y = signal(len, seed);
        let set = decompose(&y, &EmdConfig::default()).unwrap();
        let r = set.reconstruct();
        let err: f64 = y.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(err / norm < 1e-9);
        prop_assert!(set.imfs.iter().all(|imf| imf.len() == len));
    }

    #[test]
    fn acf_is_affine_invariant(seed in 0u64..1000, a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], b in -100.0f64..100.0) {
        let y = signal(300, seed);
        let z: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let (ry, rz) = (acf(&y, 40).unwrap(), acf(&z, 40).unwrap());
        for (p, q) in ry.iter().zip(&rz) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_is_injective(
        a in (1u8..=31, 0u8..24, 0u8..4),
        b in (1u8..=31, 0u8..24, 0u8..4),
    ) {
        let f = |(d, h, m): (u8, u8, u8)| one_hot_time(TimeFeatures { day_of_month: d, hour: h, minute_slot: m }).unwrap();
        prop_assert_eq!(a == b, f(a) == f(b));
    }

    #[test]
    fn batch_norm_inference_is_affine(
        x in prop::collection::vec(-5.0f64..5.0, 12),
        y in prop::collection::vec(-5.0f64..5.0, 12),
        lambda in 0.0f64..1.0,
        gamma in prop::collection::vec(0.1f64..2.0, 3),
        beta in prop::collection::vec(-1.0f64..1.0, 3),
        mean in prop::collection::vec(-1.0f64..1.0, 3),
        var in prop::collection::vec(0.01f64..3.0, 3),
    ) {
        let t = |v: Vec<f64>, s: Vec<usize>| Tensor::new(s, v).unwrap();
        let bn = |v: &[f64]| {
            batch_norm_infer(
                &t(v.to_vec(), vec![4, 3]),
                &t(gamma.clone(), vec![3]),
                &t(beta.clone(), vec![3]),
                &t(mean.clone(), vec![3]),
                &t(var.clone(), vec![3]),
                1e-3,
            )
            .unwrap()
        };
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let (fx, fy, fm) = (bn(&x), bn(&y), bn(&mixed));
        for i in 0..12 {
            let expect = lambda * fx.data()[i] + (1.0 - lambda) * fy.data()[i];
            prop_assert!((fm.data()[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_stack_is_causal_with_bounded_receptive_field(
        seed in 0u64..1000,
        at in 0usize..48,
        delta in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0],
        kernel_size in 2usize..4,
    ) {
        let cfg = CnnEmdConfig {
            lookback: 48,
            channels: 3,
            filters: 4,
            kernel_size,
            ..CnnEmdConfig::default()
        };
        let model = conv_stack(&cfg, seed);
        let x: Vec<f64> = signal(48 * 3, seed);
        let mut bumped = x.clone();
        bumped[at * 3 + (seed as usize % 3)] += delta;
        let base = model.predict(&one("imf", Tensor::new(vec![1, 48, 3], x).unwrap())).unwrap();
        let moved = model.predict(&one("imf", Tensor::new(vec![1, 48, 3], bumped).unwrap())).unwrap();
        let f = cfg.filters;
        let field = cfg.receptive_field();
        prop_assert_eq!(field, 1 + (kernel_size - 1) * 15);
        for t in 0..48 {
            let same = base.data()[t * f..(t + 1) * f] == moved.data()[t * f..(t + 1) * f];
            if t < at || t >= at + field {
                prop_assert!(same, "output at {} moved by input at {}", t, at);
            }
        }
    }

    #[test]
    fn imf_matrix_reconstructs_series(len in 64usize..1200, seed in 0u64..1000, channels in 2usize..10) {
        let y: Vec<f64> = signal(len, seed).iter().map(|v| 4.0 + v).collect();
        let set = decompose(&y, &EmdConfig::default()).unwrap();
        let (raw, _) = reconcile_channels(&set, channels).unwrap();
        let params = fit_channel_params(&raw).unwrap();
        let m = prepare_imf_matrix(&set, &params, channels).unwrap();
        prop_assert_eq!(m.shape(), (channels, len));
        let rows = m.denormalize(&params).unwrap();
        for t in 0..len {
            let sum: f64 = rows.iter().map(|r| r[t]).sum();
            prop_assert!((sum - y[t]).abs() <= 1e-6 * y[t].abs());
        }
    }

    #[test]
    fn detected_events_are_disjoint_ordered_and_supported(
        scores in prop::collection::vec(-6.0f64..6.0, 1..300),
        threshold in 0.5f64..4.0,
        min_duration in 1usize..4,
        merge_gap in 0usize..6,
    ) {
        let cfg = DetectConfig { threshold, min_duration, merge_gap, ..DetectConfig::default() };
        let events = detect(&scores, "s", &cfg).unwrap();
        for e in &events {
            prop_assert!(e.start_index <= e.end_index && e.end_index < scores.len());
            prop_assert!(e.peak_score >= threshold);
            prop_assert!(scores[e.start_index..=e.end_index].iter().any(|s| s.abs() >= threshold));
        }
        for w in events.windows(2) {
            prop_assert!(w[0].end_index < w[1].start_index);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn forecaster_is_translation_consistent(delta in 0.5f64..5.0, seed in 0u64..100) {
        let ds = small_network(seed, 0.0);
        let base = ds.inlet();
        let shifted_values: Vec<f64> = base.values().iter().map(|v| v + delta).collect();
        let shifted = SensorSeries::from_values(base.sensor_id(), SensorKind::InletPressure, base.start(), shifted_values);
        let cnn = CnnEmdConfig {
            lookback: 32,
            filters: 4,
            dilations: vec![1, 2],
            decompose_span: 96,
            sample_stride: 8,
            ..CnnEmdConfig::default()
        };
        let train = TrainConfig { epochs: 2, seed, ..TrainConfig::default() };
        let emd = EmdConfig::default();
        let (a, _) = train_forecaster(base, &cnn, &emd, &train).unwrap();
        let (b, _) = train_forecaster(&shifted, &cnn, &emd, &train).unwrap();
        let history = |s: &SensorSeries| s.slice(0, 200).unwrap();
        let pa = forecast_pressure(&a, &history(base)).unwrap();
        let pb = forecast_pressure(&b, &history(&shifted)).unwrap();
        prop_assert!((pb - (pa + delta)).abs() < 1e-6, "{} + {} vs {}", pa, delta, pb);
    }
}

#[test]
fn timestamp_display_parses_back() {
    let t = Timestamp::new(2024, 2, 29, 23, 45).unwrap();
    assert_eq!(Timestamp::parse(&t.to_string()).unwrap(), t);
}
