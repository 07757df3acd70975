mod common;

use common::*;
use deepfactor::lrp::{explain, propagate_layer, relevance, relevance_trace, LayerRelevance};
use deepfactor::net::{Activation, Network};
use deepfactor::Error;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn propagate_layer_matches_message_oracle() {
    let mut rng = rng(21);
    let w = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
    let b = Array1::<f64>::from_shape_fn(3, |_| rng.random_range(-0.2..0.2));
    let a = Array1::from_shape_fn(4, |_| rng.random_range(0.1..2.0));
    let upper = vec![0.7, -0.4, 1.1];

    let mut want = [0.0; 4];
    for j in 0..3 {
        let mut d = b[j];
        for i in 0..4 {
            d += w[[j, i]] * a[i];
        }
        let denom = d + 1e-9 * d.signum();
        for i in 0..4 {
            want[i] += w[[j, i]] * a[i] / denom * upper[j];
        }
    }
    let (lower, leak) = propagate_layer(
        w.view(),
        b.view(),
        a.view(),
        &LayerRelevance {
            scores: upper.clone(),
        },
        1e-9,
    )
    .unwrap();
    for (g, e) in lower.scores.iter().zip(want) {
        assert!((g - e).abs() < 1e-13);
    }
    let upper_total: f64 = upper.iter().sum();
    assert!((lower.total() + leak - upper_total).abs() < 1e-13);
}

#[test]
fn full_network_matches_oracle() {
    let mut rng = rng(22);
    for widths in [vec![80, 80, 50, 10, 1], vec![6, 5, 4, 3, 1], vec![3, 1]] {
        let net = random_net(&mut rng, &widths, true);
        let x = random_vec(&mut rng, widths[0], -1.0, 1.0);
        let trace = net.forward(&x).unwrap();
        let rt = relevance_trace(&net, &trace, 1e-9).unwrap();
        let (want, leaks) = oracle_lrp(net.layers(), &x, 1e-9);
        for (got, exp) in rt.layers.iter().zip(&want) {
            for (g, e) in got.scores.iter().zip(exp) {
                assert!((g - e).abs() < 1e-10 * e.abs().max(1.0), "{g} vs {e}");
            }
        }
        for (g, e) in rt.leaks.iter().zip(&leaks) {
            assert!((g - e).abs() < 1e-10);
        }
    }
}

#[test]
fn deep_model_sized_network_conserves() {
    let mut rng = rng(23);
    let net = random_net(&mut rng, &[80, 80, 50, 10, 1], true);
    let x = random_vec(&mut rng, 80, -2.0, 2.0);
    let r = explain(&net, &x).unwrap();
    assert!(r.conservation_gap().abs() < 1e-8);
}

#[test]
fn zero_denominator_is_reported() {
    let net = Network::from_layers(
        vec![deepfactor::net::Layer {
            weights: Array2::from_shape_vec((1, 2), vec![1.0, -1.0]).unwrap(),
            bias: Array1::zeros(1),
        }],
        Activation::Relu,
    )
    .unwrap();
    // prediction is exactly zero, so nothing needs redistributing
    let trace = net.forward(&[1.0, 1.0]).unwrap();
    let r = relevance(&net, &trace, 0.0).unwrap();
    assert_eq!(r.per_input, vec![0.0, 0.0]);

    let w = Array2::from_shape_vec((1, 2), vec![1.0, -1.0]).unwrap();
    let err = propagate_layer(
        w.view(),
        Array1::zeros(1).view(),
        Array1::from(vec![1.0, 1.0]).view(),
        &LayerRelevance { scores: vec![1.0] },
        0.0,
    )
    .unwrap_err();
    assert!(matches!(err, Error::ZeroDenominator { neuron: 0, .. }));
}

fn widths_strategy() -> impl Strategy<Value = Vec<usize>> {
    (prop::collection::vec(1usize..=12, 1..=5)).prop_map(|mut v| {
        v.push(1);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conservation_with_bias_and_stabilizer(seed in any::<u64>(), widths in widths_strategy()) {
        let mut rng = rng(seed);
        let net = random_net(&mut rng, &widths, true);
        let x = random_vec(&mut rng, widths[0], -1.0, 1.0);
        let r = explain(&net, &x).unwrap();
        prop_assert!(r.conservation_gap().abs() < 1e-8);
    }

    #[test]
    fn exact_conservation_without_bias(seed in any::<u64>(), widths in widths_strategy()) {
        let mut rng = rng(seed);
        let net = random_net(&mut rng, &widths, false);
        let x = random_vec(&mut rng, widths[0], -1.0, 1.0);
        let trace = net.forward(&x).unwrap();
        let rt = relevance_trace(&net, &trace, 0.0).unwrap();
        for layer in &rt.layers {
            prop_assert!((layer.total() - trace.output()).abs() < 1e-10);
        }
    }

    #[test]
    fn scaling_last_layer_scales_relevance(seed in any::<u64>(), widths in widths_strategy(), c in 0.1f64..10.0) {
        let mut rng = rng(seed);
        let net = random_net(&mut rng, &widths, false);
        let last = net.layers().len() - 1;
        let scaled = net.map_layers(|l, layer| if l == last { layer.weights *= c }).unwrap();
        let x = random_vec(&mut rng, widths[0], -1.0, 1.0);
        let a = relevance(&net, &net.forward(&x).unwrap(), 0.0).unwrap();
        let b = relevance(&scaled, &scaled.forward(&x).unwrap(), 0.0).unwrap();
        for (u, v) in a.per_input.iter().zip(&b.per_input) {
            prop_assert!((c * u - v).abs() < 1e-10 * v.abs().max(1.0));
        }
    }

    #[test]
    fn zero_upper_relevance_stays_zero(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut rng = rng(seed);
        let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(rows, |_| rng.random_range(-1.0..1.0));
        let a = Array1::from_shape_fn(cols, |_| rng.random_range(0.0..1.0));
        let (lower, leak) = propagate_layer(
            w.view(), b.view(), a.view(), &LayerRelevance { scores: vec![0.0; rows] }, 0.0,
        ).unwrap();
        prop_assert!(lower.scores.iter().all(|&s| s == 0.0));
        prop_assert_eq!(leak, 0.0);
    }

    #[test]
    fn dead_input_gets_no_relevance(seed in any::<u64>(), widths in widths_strategy()) {
        let mut rng = rng(seed);
        let mut widths = widths;
        widths[0] = widths[0].max(2);
        let net = random_net(&mut rng, &widths, true);
        let dead = rng.random_range(0..widths[0]);
        let net = net.map_layers(|l, layer| if l == 0 { layer.weights.column_mut(dead).fill(0.0) }).unwrap();
        let x = random_vec(&mut rng, widths[0], -1.0, 1.0);
        let r = explain(&net, &x).unwrap();
        prop_assert_eq!(r.per_input[dead], 0.0);
    }

    #[test]
    fn f32_networks_conserve_loosely(seed in any::<u64>(), widths in widths_strategy()) {
        let mut rng = rng(seed);
        let net = random_net(&mut rng, &widths, true);
        let layers32 = net.layers().iter().map(|l| deepfactor::net::Layer {
            weights: l.weights.mapv(|v| v as f32),
            bias: l.bias.mapv(|v| v as f32),
        }).collect();
        let net32 = Network::<f32>::from_layers(layers32, Activation::Relu).unwrap();
        let x: Vec<f32> = random_vec(&mut rng, widths[0], -1.0, 1.0).into_iter().map(|v| v as f32).collect();
        let r = explain(&net32, &x).unwrap();
        let scale: f32 = 1.0 + r.per_input.iter().map(|v| v.abs()).sum::<f32>() + r.bias_absorbed.abs();
        prop_assert!(r.conservation_gap().abs() < 1e-4 * scale);
    }
}
