//! Dilated causal CNN over IMF matrices, forecasting the next value of a
//! pressure series.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::imf_matrix::{channel_names, reconcile_channels};
use crate::data::SensorSeries;
use crate::error::{Error, Result};
use crate::nn::{
    self, Activation, GraphSpec, History, InputSpec, LayerSpec, NamedTensors, NetworkModel, NodeSpec, Tensor,
    TrainConfig, TrainData,
};
use crate::preprocess::{fit_minmax, MinMaxEntry, MinMaxParams};
use crate::signal::{decompose, EmdConfig, MIN_DECOMPOSE_LEN};

pub const IMF_INPUT: &str = "imf";
pub const TARGET_ENTRY: &str = "target";
const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnEmdConfig {
    /// Window length `W` in samples.
    pub lookback: usize,
    /// IMF matrix height `C` (IMF slots plus the residual).
    pub channels: usize,
    /// One stacked causal convolution per entry, each tapped into the concat.
    pub dilations: Vec<usize>,
    pub filters: usize,
    pub kernel_size: usize,
    /// Batch normalization after every dilated convolution.
    pub batch_norm: bool,
    /// Trailing samples decomposed for each window; EMD only sees the past.
    pub decompose_span: usize,
    /// Spacing between consecutive training targets.
    pub sample_stride: usize,
}

impl Default for CnnEmdConfig {
    fn default() -> Self {
        CnnEmdConfig {
            lookback: 96,
            channels: 8,
            dilations: vec![1, 2, 4, 8],
            filters: 32,
            kernel_size: 3,
            batch_norm: false,
            decompose_span: 384,
            sample_stride: 1,
        }
    }
}

impl CnnEmdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.lookback == 0 || self.filters == 0 || self.kernel_size == 0 || self.sample_stride == 0 {
            return bad("lookback, filters, kernel_size and sample_stride must be >= 1".into());
        }
        if self.channels < 2 {
            return bad(format!("channels must be >= 2, got {}", self.channels));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return bad("dilations must be a non-empty list of values >= 1".into());
        }
        if self.decompose_span < self.lookback.max(MIN_DECOMPOSE_LEN) {
            return bad(format!(
                "decompose_span {} must cover the lookback {} and at least {MIN_DECOMPOSE_LEN} samples",
                self.decompose_span, self.lookback
            ));
        }
        Ok(())
    }

    /// Samples reaching the output through the full dilated stack.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * self.dilations.iter().sum::<usize>()
    }

    /// Channel extent of the concatenated taps.
    pub fn concat_extent(&self) -> usize {
        self.filters * self.dilations.len()
    }
}

/// CNN-EMD nodes reading from `input`, names prefixed with `prefix`.
/// Returns the nodes and the name of the scalar output node.
pub fn cnn_emd_nodes(cfg: &CnnEmdConfig, input: &str, prefix: &str) -> (Vec<NodeSpec>, String) {
    let name = |s: &str| format!("{prefix}{s}");
    let mut nodes = Vec::new();
    let mut prev = input.to_string();
    let mut taps = Vec::new();
    for (i, &d) in cfg.dilations.iter().enumerate() {
        let conv = name(&format!("conv_d{d}_{i}"));
        nodes.push(NodeSpec {
            name: conv.clone(),
            layer: LayerSpec::Conv1d {
                filters: cfg.filters,
                kernel_size: cfg.kernel_size,
                dilation: d,
                activation: Activation::Relu,
                causal: true,
            },
            inputs: vec![prev],
        });
        prev = conv;
        if cfg.batch_norm {
            let bn = name(&format!("bn_{i}"));
            nodes.push(NodeSpec {
                name: bn.clone(),
                layer: LayerSpec::BatchNorm { momentum: 0.99, epsilon: 1e-3 },
                inputs: vec![prev],
            });
            prev = bn;
        }
        taps.push(prev.clone());
    }
    let out = name("out");
    nodes.extend([
        NodeSpec { name: name("taps"), layer: LayerSpec::Concat, inputs: taps },
        NodeSpec {
            name: name("mix"),
            layer: LayerSpec::Conv1d {
                filters: cfg.filters,
                kernel_size: 1,
                dilation: 1,
                activation: Activation::Relu,
                causal: true,
            },
            inputs: vec![name("taps")],
        },
        NodeSpec { name: name("last"), layer: LayerSpec::LastStep, inputs: vec![name("mix")] },
        NodeSpec {
            name: out.clone(),
            layer: LayerSpec::Dense { units: 1, activation: Activation::Linear },
            inputs: vec![name("last")],
        },
    ]);
    (nodes, out)
}

pub fn cnn_emd_graph(cfg: &CnnEmdConfig) -> Result<GraphSpec> {
    cfg.validate()?;
    let (nodes, output) = cnn_emd_nodes(cfg, IMF_INPUT, "");
    Ok(GraphSpec {
        inputs: vec![InputSpec { name: IMF_INPUT.into(), shape: vec![cfg.lookback, cfg.channels] }],
        nodes,
        output,
    })
}

pub fn build_cnn_emd(cfg: &CnnEmdConfig, seed: u64) -> Result<NetworkModel> {
    NetworkModel::new(cnn_emd_graph(cfg)?, seed)
}

/// Raw channel windows, time-major `[W, C]`, one per `end`. Each window is
/// the tail of a decomposition of `values[end - span .. end]`.
pub fn causal_imf_windows(
    values: &[f64],
    ends: &[usize],
    cfg: &CnnEmdConfig,
    emd: &EmdConfig,
) -> Result<Vec<Vec<f64>>> {
    let (span, w, c) = (cfg.decompose_span, cfg.lookback, cfg.channels);
    ends.iter()
        .map(|&end| {
            if end < span || end > values.len() {
                return Err(Error::Model(format!(
                    "window ending at {end} needs {span} samples of history within {}",
                    values.len()
                )));
            }
            let set = decompose(&values[end - span..end], emd)?;
            let (raw, _) = reconcile_channels(&set, c)?;
            let mut out = Vec::with_capacity(w * c);
            for t in span - w..span {
                out.extend(raw.iter().map(|row| row[t]));
            }
            Ok(out)
        })
        .collect()
}

/// Per-channel Min-Max entries over a set of time-major windows.
pub fn fit_window_params(windows: &[Vec<f64>], channels: usize) -> Result<MinMaxParams> {
    let names = channel_names(channels);
    let mut params = MinMaxParams::new(Vec::new());
    for (ch, name) in names.iter().enumerate() {
        let column: Vec<f64> = windows.iter().flat_map(|w| w.iter().skip(ch).step_by(channels).copied()).collect();
        params.push(fit_minmax(&column, name)?);
    }
    Ok(params)
}

fn normalize_windows(windows: &[Vec<f64>], params: &MinMaxParams, channels: usize) -> Result<Vec<f64>> {
    let entries: Vec<&MinMaxEntry> = channel_names(channels).iter().map(|n| params.get(n)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(windows.len() * windows.first().map_or(0, Vec::len));
    for w in windows {
        out.extend(w.iter().enumerate().map(|(i, &v)| entries[i % channels].normalize(v)));
    }
    Ok(out)
}

pub(crate) fn require_valid(series: &SensorSeries) -> Result<()> {
    if !series.all_valid() {
        return Err(Error::Model(format!(
            "{} has {} invalid samples; impute first",
            series.column_name(),
            series.invalid_count()
        )));
    }
    Ok(())
}

/// Trained forecaster with everything needed to run it on raw history.
#[derive(Clone, Debug)]
pub struct ForecasterBundle {
    pub network: NetworkModel,
    /// Entries for every IMF channel plus [`TARGET_ENTRY`].
    pub minmax: MinMaxParams,
    pub cnn_emd: CnnEmdConfig,
    pub emd: EmdConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleConfig {
    cnn_emd: CnnEmdConfig,
    emd: EmdConfig,
}

pub fn train_forecaster(
    series: &SensorSeries,
    cnn_emd: &CnnEmdConfig,
    emd: &EmdConfig,
    train_cfg: &TrainConfig,
) -> Result<(ForecasterBundle, History)> {
    cnn_emd.validate()?;
    require_valid(series)?;
    let values = series.values();
    let ends: Vec<usize> = (cnn_emd.decompose_span..values.len()).step_by(cnn_emd.sample_stride).collect();
    if ends.len() < 2 {
        return Err(Error::Model(format!(
            "{} samples give fewer than 2 training windows with decompose_span {}",
            values.len(),
            cnn_emd.decompose_span
        )));
    }
    let windows = causal_imf_windows(values, &ends, cnn_emd, emd)?;
    let mut minmax = fit_window_params(&windows, cnn_emd.channels)?;
    let target_raw: Vec<f64> = ends.iter().map(|&t| values[t]).collect();
    let target_entry = fit_minmax(&target_raw, TARGET_ENTRY)?;
    let targets: Vec<f64> = target_raw.iter().map(|&v| target_entry.normalize(v)).collect();
    minmax.push(target_entry);

    let n = ends.len();
    let mut inputs = NamedTensors::new();
    inputs.insert(
        IMF_INPUT.into(),
        Tensor::new(
            vec![n, cnn_emd.lookback, cnn_emd.channels],
            normalize_windows(&windows, &minmax, cnn_emd.channels)?,
        )?,
    );
    let data = TrainData::new(inputs, Tensor::new(vec![n, 1], targets)?)?;
    let mut network = build_cnn_emd(cnn_emd, train_cfg.seed)?;
    let history = nn::train(&mut network, &data, train_cfg)?;
    Ok((ForecasterBundle { network, minmax, cnn_emd: cnn_emd.clone(), emd: *emd }, history))
}

impl ForecasterBundle {
    pub fn lookback(&self) -> usize {
        self.cnn_emd.lookback
    }

    /// History needed before the first prediction.
    pub fn min_history(&self) -> usize {
        self.cnn_emd.decompose_span
    }

    /// Normalized network inputs `[n, W, C]` for windows ending at `ends`.
    pub fn inputs_for(&self, values: &[f64], ends: &[usize]) -> Result<Tensor> {
        let windows = causal_imf_windows(values, ends, &self.cnn_emd, &self.emd)?;
        Tensor::new(
            vec![ends.len(), self.cnn_emd.lookback, self.cnn_emd.channels],
            normalize_windows(&windows, &self.minmax, self.cnn_emd.channels)?,
        )
    }

    /// One-step-ahead predictions of `values[t]` from `values[..t]` for every
    /// `t` in `min_history()..values.len()`, in physical units.
    pub fn predict_series(&self, values: &[f64]) -> Result<Vec<f64>> {
        let span = self.min_history();
        if values.len() <= span {
            return Err(Error::Model(format!(
                "{} samples leave nothing to predict after {span} samples of history",
                values.len()
            )));
        }
        let target = self.minmax.get(TARGET_ENTRY)?;
        let ends: Vec<usize> = (span..values.len()).collect();
        let mut out = Vec::with_capacity(ends.len());
        for chunk in ends.chunks(PREDICT_CHUNK) {
            let mut inputs = NamedTensors::new();
            inputs.insert(IMF_INPUT.into(), self.inputs_for(values, chunk)?);
            let pred = self.network.predict(&inputs)?;
            out.extend(pred.data().iter().map(|&v| target.denormalize(v)));
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        nn::save_weights(&self.network, &dir.join("network.nnw"))?;
        fs::write(dir.join("minmax.json"), self.minmax.to_json()?)?;
        let cfg = BundleConfig { cnn_emd: self.cnn_emd.clone(), emd: self.emd };
        let mut json = serde_json::to_string_pretty(&cfg)?;
        json.push('\n');
        fs::write(dir.join("config.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: BundleConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
        let minmax = MinMaxParams::from_json(&fs::read_to_string(dir.join("minmax.json"))?)?;
        let mut network = build_cnn_emd(&cfg.cnn_emd, 0)?;
        nn::load_weights(&mut network, &dir.join("network.nnw"))?;
        Ok(ForecasterBundle { network, minmax, cnn_emd: cfg.cnn_emd, emd: cfg.emd })
    }
}

/// Next-step pressure after the end of `history`, in bar.
pub fn forecast_pressure(bundle: &ForecasterBundle, history: &SensorSeries) -> Result<f64> {
    require_valid(history)?;
    let values = history.values();
    if values.len() < bundle.min_history() {
        return Err(Error::Model(format!(
            "history of {} samples is shorter than the required {}",
            values.len(),
            bundle.min_history()
        )));
    }
    let mut inputs = NamedTensors::new();
    inputs.insert(IMF_INPUT.into(), bundle.inputs_for(values, &[values.len()])?);
    let pred = bundle.network.predict(&inputs)?;
    Ok(bundle.minmax.get(TARGET_ENTRY)?.denormalize(pred.data()[0]))
}
