//! Directed acyclic layer graphs and their weight stores.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{self, Activation, BatchNormCache, LayerSpec, LstmCache};
use super::optim::AdamState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named tensors, used for graph inputs and gradient stores.
pub type NamedTensors = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub name: String,
    /// Per-sample shape, without the batch axis.
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub layer: LayerSpec,
    /// Graph input or node names feeding this node, in order.
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub inputs: Vec<InputSpec>,
    pub nodes: Vec<NodeSpec>,
    pub output: String,
}

impl GraphSpec {
    /// Hex SHA-256 of the canonical JSON form; equal graphs share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("graph spec serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Key of a parameter in the weight store.
pub fn weight_key(node: &str, param: &str) -> String {
    format!("{node}/{param}")
}

#[derive(Clone, Debug)]
pub struct NetworkModel {
    spec: GraphSpec,
    /// Node indices in evaluation order.
    order: Vec<usize>,
    /// Per-sample shapes of every input and node output.
    shapes: HashMap<String, Vec<usize>>,
    /// Trailing time steps of each convolution output that can reach the
    /// graph output; the rest are never computed.
    conv_steps: HashMap<String, usize>,
    weights: NamedTensors,
    pub adam: AdamState,
    seed: u64,
}

enum Cache {
    None,
    Lstm(LstmCache),
    BatchNorm(BatchNormCache),
}

/// Values and caches recorded by a forward pass.
pub struct Tape {
    values: HashMap<String, Tensor>,
    caches: Vec<Cache>,
    training: bool,
}

impl Tape {
    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }
}

/// Result of a backward pass.
pub struct Gradients {
    /// Gradient for every trainable weight.
    pub weights: NamedTensors,
    /// Gradient with respect to each graph input.
    pub inputs: NamedTensors,
}

impl NetworkModel {
    /// Validates the graph, orders it topologically and initializes weights
    /// (Glorot-uniform kernels, zero biases, unit forget-gate bias).
    pub fn new(spec: GraphSpec, seed: u64) -> Result<Self> {
        let order = topo_order(&spec)?;
        let mut shapes: HashMap<String, Vec<usize>> = HashMap::new();
        for inp in &spec.inputs {
            if inp.shape.is_empty() || inp.shape.contains(&0) {
                return Err(Error::Graph(format!("input {} has an empty shape", inp.name)));
            }
            shapes.insert(inp.name.clone(), inp.shape.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = NamedTensors::new();
        for &i in &order {
            let node = &spec.nodes[i];
            node.layer.validate()?;
            let in_shapes: Vec<Vec<usize>> = node.inputs.iter().map(|n| shapes[n].clone()).collect();
            let out = node.layer.output_shape(&in_shapes)?;
            for (param, shape) in node.layer.param_shapes(&in_shapes) {
                let t = init_param(&node.layer, param, &shape, &mut rng);
                weights.insert(weight_key(&node.name, param), t);
            }
            shapes.insert(node.name.clone(), out);
        }
        let adam = AdamState::for_weights(weights.iter().filter(|(k, _)| is_trainable_key(k)));
        let conv_steps = needed_steps(&spec, &order, &shapes);
        Ok(NetworkModel { spec, order, shapes, conv_steps, weights, adam, seed })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> String {
        self.spec.fingerprint()
    }

    pub fn weights(&self) -> &NamedTensors {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut NamedTensors {
        &mut self.weights
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.shapes[&self.spec.output]
    }

    pub fn input_shape(&self, name: &str) -> Option<&[usize]> {
        self.spec.inputs.iter().find(|i| i.name == name).map(|i| i.shape.as_slice())
    }

    pub fn trainable_count(&self) -> usize {
        self.weights.iter().filter(|(k, _)| is_trainable_key(k)).map(|(_, t)| t.len()).sum()
    }

    /// Replaces the weight store; every key and shape must match.
    pub fn set_weights(&mut self, weights: NamedTensors) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::Graph("weight store has the wrong number of tensors".into()));
        }
        for (k, t) in &weights {
            match self.weights.get(k) {
                Some(old) if old.shape() == t.shape() => {}
                _ => return Err(Error::Graph(format!("weight {k} is unknown or misshapen"))),
            }
        }
        self.weights = weights;
        Ok(())
    }

    /// Rounds every weight to the nearest 32-bit float, so the in-memory
    /// model equals what a weight file stores.
    pub fn round_to_f32(&mut self) {
        for t in self.weights.values_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn w(&self, node: &str, param: &str) -> &Tensor {
        &self.weights[&weight_key(node, param)]
    }

    /// Evaluates the graph in topological order. In training mode batch
    /// norm uses batch statistics.
    pub fn forward(&self, inputs: &NamedTensors, training: bool) -> Result<Tape> {
        let mut values: HashMap<String, Tensor> = HashMap::new();
        let mut batch = None;
        for spec in &self.spec.inputs {
            let t = inputs.get(&spec.name).ok_or_else(|| Error::Graph(format!("missing input {}", spec.name)))?;
            if t.shape().len() != spec.shape.len() + 1 || t.shape()[1..] != spec.shape[..] {
                return Err(Error::shape(format!(
                    "input {} has shape {:?}, expected [batch, {:?}]",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            if *batch.get_or_insert(t.batch()) != t.batch() {
                return Err(Error::shape("graph inputs disagree on batch size"));
            }
            values.insert(spec.name.clone(), t.clone());
        }
        let mut caches = Vec::with_capacity(self.spec.nodes.len());
        caches.resize_with(self.spec.nodes.len(), || Cache::None);
        for &i in &self.order {
            let node = &self.spec.nodes[i];
            let ins: Vec<&Tensor> = node.inputs.iter().map(|n| &values[n]).collect();
            let name = node.name.as_str();
            let out = match &node.layer {
                LayerSpec::Conv1d { dilation, activation, .. } => layers::conv1d_forward_tail(
                    ins[0],
                    self.w(name, "kernel"),
                    self.w(name, "bias"),
                    *dilation,
                    *activation,
                    self.conv_steps[name],
                )?,
                LayerSpec::Dense { activation, .. } => {
                    layers::dense_forward(ins[0], self.w(name, "kernel"), self.w(name, "bias"), *activation)?
                }
                LayerSpec::Lstm { return_sequences, .. } => {
                    let (y, cache) = layers::lstm_forward(
                        ins[0],
                        self.w(name, "kernel"),
                        self.w(name, "recurrent_kernel"),
                        self.w(name, "bias"),
                        *return_sequences,
                    )?;
                    caches[i] = Cache::Lstm(cache);
                    y
                }
                LayerSpec::BatchNorm { epsilon, .. } => {
                    if training {
                        let (y, cache) =
                            layers::batch_norm_train(ins[0], self.w(name, "gamma"), self.w(name, "beta"), *epsilon)?;
                        caches[i] = Cache::BatchNorm(cache);
                        y
                    } else {
                        layers::batch_norm_infer(
                            ins[0],
                            self.w(name, "gamma"),
                            self.w(name, "beta"),
                            self.w(name, "moving_mean"),
                            self.w(name, "moving_var"),
                            *epsilon,
                        )?
                    }
                }
                LayerSpec::Concat => layers::concat_forward(&ins)?,
                LayerSpec::LastStep => layers::last_step_forward(ins[0])?,
            };
            values.insert(node.name.clone(), out);
        }
        Ok(Tape { values, caches, training })
    }

    /// Output of an inference-mode forward pass.
    pub fn predict(&self, inputs: &NamedTensors) -> Result<Tensor> {
        let mut tape = self.forward(inputs, false)?;
        Ok(tape.values.remove(&self.spec.output).expect("output evaluated"))
    }

    /// Backpropagates `d_output` (gradient of the loss with respect to the
    /// graph output) through a recorded tape.
    pub fn backward(&self, tape: &Tape, d_output: &Tensor) -> Result<Gradients> {
        let out = &tape.values[&self.spec.output];
        if out.shape() != d_output.shape() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                d_output.shape(),
                out.shape()
            )));
        }
        let mut grads: HashMap<String, Tensor> = HashMap::new();
        grads.insert(self.spec.output.clone(), d_output.clone());
        let mut wgrads = NamedTensors::new();
        for &i in self.order.iter().rev() {
            let node = &self.spec.nodes[i];
            let name = node.name.as_str();
            let Some(g) = grads.remove(name) else {
                // Node does not reach the output; its weights get zero gradient.
                for (param, shape) in self.param_shapes_of(node) {
                    if layers::is_trainable(param) {
                        wgrads.insert(weight_key(name, param), Tensor::zeros(&shape));
                    }
                }
                continue;
            };
            let ins: Vec<&Tensor> = node.inputs.iter().map(|n| &tape.values[n]).collect();
            let y = &tape.values[name];
            let d_ins: Vec<Tensor> = match &node.layer {
                LayerSpec::Conv1d { dilation, activation, .. } => {
                    let (dx, dk, db) =
                        layers::conv1d_backward(ins[0], y, self.w(name, "kernel"), *dilation, *activation, &g)?;
                    wgrads.insert(weight_key(name, "kernel"), dk);
                    wgrads.insert(weight_key(name, "bias"), db);
                    vec![dx]
                }
                LayerSpec::Dense { activation, .. } => {
                    let (dx, dk, db) = layers::dense_backward(ins[0], y, self.w(name, "kernel"), *activation, &g)?;
                    wgrads.insert(weight_key(name, "kernel"), dk);
                    wgrads.insert(weight_key(name, "bias"), db);
                    vec![dx]
                }
                LayerSpec::Lstm { return_sequences, .. } => {
                    let Cache::Lstm(cache) = &tape.caches[i] else {
                        return Err(Error::Graph(format!("no lstm cache for {name}")));
                    };
                    let (dx, dk, dr, db) = layers::lstm_backward(
                        ins[0],
                        cache,
                        self.w(name, "kernel"),
                        self.w(name, "recurrent_kernel"),
                        *return_sequences,
                        &g,
                    )?;
                    wgrads.insert(weight_key(name, "kernel"), dk);
                    wgrads.insert(weight_key(name, "recurrent_kernel"), dr);
                    wgrads.insert(weight_key(name, "bias"), db);
                    vec![dx]
                }
                LayerSpec::BatchNorm { epsilon, .. } => {
                    let (dx, dgamma, dbeta) = match &tape.caches[i] {
                        Cache::BatchNorm(cache) => layers::batch_norm_train_backward(cache, self.w(name, "gamma"), &g)?,
                        _ => layers::batch_norm_infer_backward(
                            ins[0],
                            self.w(name, "gamma"),
                            self.w(name, "moving_mean"),
                            self.w(name, "moving_var"),
                            *epsilon,
                            &g,
                        )?,
                    };
                    wgrads.insert(weight_key(name, "gamma"), dgamma);
                    wgrads.insert(weight_key(name, "beta"), dbeta);
                    vec![dx]
                }
                LayerSpec::Concat => {
                    let shapes: Vec<&[usize]> = ins.iter().map(|t| t.shape()).collect();
                    layers::concat_backward(&shapes, &g)?
                }
                LayerSpec::LastStep => vec![layers::last_step_backward(ins[0].shape(), &g)?],
            };
            for (src, d) in node.inputs.iter().zip(d_ins) {
                match grads.get_mut(src) {
                    Some(acc) => acc.add_assign(&d)?,
                    None => {
                        grads.insert(src.clone(), d);
                    }
                }
            }
        }
        let mut inputs = NamedTensors::new();
        for spec in &self.spec.inputs {
            let g = grads.remove(&spec.name).unwrap_or_else(|| Tensor::zeros(tape.values[&spec.name].shape()));
            inputs.insert(spec.name.clone(), g);
        }
        Ok(Gradients { weights: wgrads, inputs })
    }

    /// Folds the batch statistics recorded in a training tape into the
    /// batch-norm moving averages: `moving = m·moving + (1 − m)·batch`.
    pub fn update_batch_norm_stats(&mut self, tape: &Tape) {
        for (i, node) in self.spec.nodes.iter().enumerate() {
            let (LayerSpec::BatchNorm { momentum, .. }, Cache::BatchNorm(cache)) = (&node.layer, &tape.caches[i])
            else {
                continue;
            };
            for (param, batch) in [("moving_mean", &cache.mean), ("moving_var", &cache.var)] {
                let t = self.weights.get_mut(&weight_key(&node.name, param)).expect("batch norm stats exist");
                for (m, b) in t.data_mut().iter_mut().zip(batch) {
                    *m = momentum * *m + (1.0 - momentum) * b;
                }
            }
        }
    }

    fn param_shapes_of(&self, node: &NodeSpec) -> Vec<(&'static str, Vec<usize>)> {
        let in_shapes: Vec<Vec<usize>> = node.inputs.iter().map(|n| self.shapes[n].clone()).collect();
        node.layer.param_shapes(&in_shapes)
    }

    /// Names of nodes with a ReLU activation.
    pub(crate) fn relu_nodes(&self) -> Vec<&str> {
        self.spec
            .nodes
            .iter()
            .filter(|n| {
                matches!(
                    n.layer,
                    LayerSpec::Conv1d { activation: Activation::Relu, .. }
                        | LayerSpec::Dense { activation: Activation::Relu, .. }
                )
            })
            .map(|n| n.name.as_str())
            .collect()
    }
}

/// Whether a weight-store key names an optimizer-updated parameter.
pub fn is_trainable_key(key: &str) -> bool {
    key.rsplit('/').next().map(layers::is_trainable).unwrap_or(false)
}

/// For every node, how many trailing time steps of its output influence the
/// graph output. Only convolutions act on the result; batch norm and LSTM
/// consume whole sequences.
fn needed_steps(spec: &GraphSpec, order: &[usize], shapes: &HashMap<String, Vec<usize>>) -> HashMap<String, usize> {
    let time_of = |name: &str| match shapes[name].as_slice() {
        [t, _] => *t,
        _ => 0,
    };
    let mut need: HashMap<String, usize> = HashMap::new();
    need.insert(spec.output.clone(), time_of(&spec.output));
    for &i in order.iter().rev() {
        let node = &spec.nodes[i];
        let Some(&own) = need.get(&node.name) else {
            continue;
        };
        for src in &node.inputs {
            let full = time_of(src);
            let want = match &node.layer {
                LayerSpec::Conv1d { kernel_size, dilation, .. } => own + (kernel_size - 1) * dilation,
                LayerSpec::Dense { .. } | LayerSpec::Concat => own,
                LayerSpec::LastStep => 1,
                LayerSpec::BatchNorm { .. } | LayerSpec::Lstm { .. } => full,
            };
            let e = need.entry(src.clone()).or_insert(0);
            *e = (*e).max(want.min(full));
        }
    }
    spec.nodes
        .iter()
        .filter(|n| matches!(n.layer, LayerSpec::Conv1d { .. }))
        .map(|n| (n.name.clone(), need.get(&n.name).copied().unwrap_or(0)))
        .collect()
}

fn topo_order(spec: &GraphSpec) -> Result<Vec<usize>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for inp in &spec.inputs {
        if index.insert(&inp.name, usize::MAX).is_some() {
            return Err(Error::Graph(format!("duplicate name {}", inp.name)));
        }
    }
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.name.contains('/') {
            return Err(Error::Graph(format!("node name {} must not contain '/'", n.name)));
        }
        if index.insert(&n.name, i).is_some() {
            return Err(Error::Graph(format!("duplicate name {}", n.name)));
        }
    }
    if !index.contains_key(spec.output.as_str()) {
        return Err(Error::Graph(format!("output {} is not defined", spec.output)));
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; spec.nodes.len()];
    let mut order = Vec::with_capacity(spec.nodes.len());
    for start in 0..spec.nodes.len() {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some((node, next)) = stack.pop() {
            let deps = &spec.nodes[node].inputs;
            if next < deps.len() {
                stack.push((node, next + 1));
                let dep = *index.get(deps[next].as_str()).ok_or_else(|| {
                    Error::Graph(format!("unknown input {} of {}", deps[next], spec.nodes[node].name))
                })?;
                if dep == usize::MAX {
                    continue;
                }
                match state[dep] {
                    0 => {
                        state[dep] = 1;
                        stack.push((dep, 0));
                    }
                    1 => return Err(Error::Graph(format!("cycle through {}", spec.nodes[dep].name))),
                    _ => {}
                }
            } else {
                state[node] = 2;
                order.push(node);
            }
        }
    }
    Ok(order)
}

fn init_param(layer: &LayerSpec, param: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    match param {
        "kernel" | "recurrent_kernel" => {
            let (fan_in, fan_out) = match shape {
                [k, c, f] => (k * c, k * f),
                [i, o] => (*i, *o),
                _ => (1, 1),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-limit..limit) as f32 as f64;
            }
        }
        "gamma" | "moving_var" => t.data_mut().fill(1.0),
        "bias" => {
            if let LayerSpec::Lstm { units, .. } = layer {
                t.data_mut()[*units..2 * units].fill(1.0);
            }
        }
        _ => {}
    }
    t
}
