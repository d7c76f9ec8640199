//! Central finite-difference verification of backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{is_trainable_key, NamedTensors, NetworkModel};
use super::loss::mse_loss;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max of `|a − n| / (|a| + |n| + 1e-12)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±ε perturbation flipped a ReLU, where the loss is
    /// not differentiable.
    pub skipped_kinks: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs() + 1e-12)
}

fn loss_and_mask(model: &NetworkModel, inputs: &NamedTensors, targets: &Tensor) -> Result<(f64, Vec<bool>)> {
    let tape = model.forward(inputs, true)?;
    let pred = tape.value(&model.spec().output).expect("output on tape");
    let (loss, _) = mse_loss(pred, targets)?;
    let mut mask = Vec::new();
    for name in model.relu_nodes() {
        if let Some(t) = tape.value(name) {
            mask.extend(t.data().iter().map(|v| *v > 0.0));
        }
    }
    Ok((loss, mask))
}

/// Compares analytic weight gradients of the MSE loss against central
/// differences at up to `per_node` random coordinates of every layer.
pub fn grad_check(
    model: &NetworkModel,
    inputs: &NamedTensors,
    targets: &Tensor,
    epsilon: f64,
    per_node: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let tape = model.forward(inputs, true)?;
    let (_, d_out) = mse_loss(tape.value(&model.spec().output).expect("output on tape"), targets)?;
    let analytic = model.backward(&tape, &d_out)?.weights;
    let (_, base_mask) = loss_and_mask(model, inputs, targets)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };
    for node in &model.spec().nodes {
        let prefix = format!("{}/", node.name);
        let coords: Vec<(String, usize)> = model
            .weights()
            .iter()
            .filter(|(k, _)| k.starts_with(&prefix) && is_trainable_key(k))
            .flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i)))
            .collect();
        if coords.is_empty() {
            continue;
        }
        // Draw extra candidates so kinks can be replaced.
        let want = per_node.min(coords.len());
        let pool = sample(&mut rng, coords.len(), (want * 3).min(coords.len()));
        let mut done = 0;
        for j in pool.iter() {
            if done == want {
                break;
            }
            let (key, i) = &coords[j];
            let orig = model.weights()[key].data()[*i];
            probe.weights_mut().get_mut(key).expect("key").data_mut()[*i] = orig + epsilon;
            let (lp, mp) = loss_and_mask(&probe, inputs, targets)?;
            probe.weights_mut().get_mut(key).expect("key").data_mut()[*i] = orig - epsilon;
            let (lm, mm) = loss_and_mask(&probe, inputs, targets)?;
            probe.weights_mut().get_mut(key).expect("key").data_mut()[*i] = orig;
            if mp != base_mask || mm != base_mask {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic[key].data()[*i];
            report.max_rel_error = report.max_rel_error.max(rel_error(a, numeric));
            report.checked += 1;
            done += 1;
        }
    }
    Ok(report)
}

/// Same comparison for gradients with respect to graph inputs.
pub fn grad_check_inputs(
    model: &NetworkModel,
    inputs: &NamedTensors,
    targets: &Tensor,
    epsilon: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let tape = model.forward(inputs, true)?;
    let (_, d_out) = mse_loss(tape.value(&model.spec().output).expect("output on tape"), targets)?;
    let analytic = model.backward(&tape, &d_out)?.inputs;
    let (_, base_mask) = loss_and_mask(model, inputs, targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = inputs.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };
    for (name, t) in inputs {
        let want = per_input.min(t.len());
        for i in sample(&mut rng, t.len(), want).iter() {
            let orig = t.data()[i];
            probe.get_mut(name).expect("input").data_mut()[i] = orig + epsilon;
            let (lp, mp) = loss_and_mask(model, &probe, targets)?;
            probe.get_mut(name).expect("input").data_mut()[i] = orig - epsilon;
            let (lm, mm) = loss_and_mask(model, &probe, targets)?;
            probe.get_mut(name).expect("input").data_mut()[i] = orig;
            if mp != base_mask || mm != base_mask {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            report.max_rel_error = report.max_rel_error.max(rel_error(analytic[name].data()[i], numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::nn::graph::{GraphSpec, InputSpec, NodeSpec};
    use crate::nn::layers::{Activation, LayerSpec};

    fn node(name: &str, layer: LayerSpec, inputs: &[&str]) -> NodeSpec {
        NodeSpec { name: name.into(), layer, inputs: inputs.iter().map(|s| s.to_string()).collect() }
    }

    fn random_batch(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dense_only() {
        let spec = GraphSpec {
            inputs: vec![InputSpec { name: "x".into(), shape: vec![4] }],
            nodes: vec![
                node("h", LayerSpec::Dense { units: 6, activation: Activation::Tanh }, &["x"]),
                node("out", LayerSpec::Dense { units: 2, activation: Activation::Linear }, &["h"]),
            ],
            output: "out".into(),
        };
        let model = NetworkModel::new(spec, 1).unwrap();
        let mut inputs = NamedTensors::new();
        inputs.insert("x".into(), random_batch(&[5, 4], 2));
        let targets = random_batch(&[5, 2], 3);
        let r = grad_check(&model, &inputs, &targets, 1e-4, 30, 4).unwrap();
        assert!(r.checked >= 30);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn conv_lstm_concat_batchnorm() {
        let spec = GraphSpec {
            inputs: vec![
                InputSpec { name: "a".into(), shape: vec![7, 3] },
                InputSpec { name: "b".into(), shape: vec![7, 2] },
            ],
            nodes: vec![
                node(
                    "c1",
                    LayerSpec::Conv1d {
                        filters: 4,
                        kernel_size: 3,
                        dilation: 2,
                        activation: Activation::Relu,
                        causal: true,
                    },
                    &["a"],
                ),
                node("bn", LayerSpec::BatchNorm { momentum: 0.99, epsilon: 1e-3 }, &["c1"]),
                node("last", LayerSpec::LastStep, &["bn"]),
                node("l1", LayerSpec::Lstm { units: 3, return_sequences: true }, &["b"]),
                node("l2", LayerSpec::Lstm { units: 5, return_sequences: false }, &["l1"]),
                node("cat", LayerSpec::Concat, &["last", "l2"]),
                node("out", LayerSpec::Dense { units: 1, activation: Activation::Linear }, &["cat"]),
            ],
            output: "out".into(),
        };
        let model = NetworkModel::new(spec, 5).unwrap();
        let mut inputs = NamedTensors::new();
        inputs.insert("a".into(), random_batch(&[4, 7, 3], 6));
        inputs.insert("b".into(), random_batch(&[4, 7, 2], 7));
        let targets = random_batch(&[4, 1], 8);
        let r = grad_check(&model, &inputs, &targets, 1e-4, 20, 9).unwrap();
        assert_eq!(r.checked, 20 + 8 + 20 + 20 + 10, "{r:?}");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        let ri = grad_check_inputs(&model, &inputs, &targets, 1e-4, 20, 10).unwrap();
        assert!(ri.max_rel_error < 1e-4, "{ri:?}");
    }

    #[test]
    fn no_trainable_weights_is_vacuous() {
        let spec = GraphSpec {
            inputs: vec![InputSpec { name: "x".into(), shape: vec![3, 2] }],
            nodes: vec![node("out", LayerSpec::LastStep, &["x"])],
            output: "out".into(),
        };
        let model = NetworkModel::new(spec, 0).unwrap();
        let mut inputs = NamedTensors::new();
        inputs.insert("x".into(), random_batch(&[2, 3, 2], 1));
        let r = grad_check(&model, &inputs, &random_batch(&[2, 2], 2), 1e-4, 20, 0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.checked, 0);
    }
}
