//! Inlet-pressure model fusing LSTM branches over distribution pressures and
//! flows with a CNN-EMD branch over the inlet's own IMFs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::forecaster::{
    causal_imf_windows, cnn_emd_nodes, fit_window_params, require_valid, CnnEmdConfig, IMF_INPUT, TARGET_ENTRY,
};
use super::imf_matrix::channel_names;
use crate::data::{Dataset, SensorSeries};
use crate::error::{Error, Result};
use crate::nn::{
    self, Activation, GraphSpec, History, InputSpec, LayerSpec, NamedTensors, NetworkModel, NodeSpec, Tensor,
    TrainConfig, TrainData,
};
use crate::preprocess::{fit_minmax, MinMaxEntry, MinMaxParams};
use crate::signal::EmdConfig;

pub const PRESSURE_INPUT: &str = "pressure";
pub const FLOW_INPUT: &str = "flow";
const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub lookback: usize,
    /// Distribution points; 0 means "take from the training data".
    pub n_points: usize,
    pub lstm_units: usize,
    pub head_units: usize,
    pub sample_stride: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { lookback: 96, n_points: 0, lstm_units: 64, head_units: 32, sample_stride: 1 }
    }
}

impl FusionConfig {
    pub fn validate(&self, cnn: &CnnEmdConfig) -> Result<()> {
        cnn.validate()?;
        if self.lookback == 0 || self.lstm_units == 0 || self.head_units == 0 || self.sample_stride == 0 {
            return Err(Error::Model("fusion sizes and stride must be >= 1".into()));
        }
        if self.n_points == 0 {
            return Err(Error::Model("fusion needs at least one distribution point".into()));
        }
        if cnn.lookback != self.lookback {
            return Err(Error::Model(format!(
                "inlet branch lookback {} differs from fusion lookback {}",
                cnn.lookback, self.lookback
            )));
        }
        Ok(())
    }

    pub fn concat_extent(&self) -> usize {
        2 * self.lstm_units + 1
    }
}

pub fn fusion_graph(cfg: &FusionConfig, cnn: &CnnEmdConfig) -> Result<GraphSpec> {
    cfg.validate(cnn)?;
    let (mut nodes, cnn_out) = cnn_emd_nodes(cnn, IMF_INPUT, "inlet_");
    let lstm = |name: &str, input: &str| NodeSpec {
        name: name.into(),
        layer: LayerSpec::Lstm { units: cfg.lstm_units, return_sequences: false },
        inputs: vec![input.into()],
    };
    nodes.push(lstm("pressure_lstm", PRESSURE_INPUT));
    nodes.push(lstm("flow_lstm", FLOW_INPUT));
    nodes.extend([
        NodeSpec {
            name: "fuse".into(),
            layer: LayerSpec::Concat,
            inputs: vec!["pressure_lstm".into(), "flow_lstm".into(), cnn_out],
        },
        NodeSpec {
            name: "head".into(),
            layer: LayerSpec::Dense { units: cfg.head_units, activation: Activation::Relu },
            inputs: vec!["fuse".into()],
        },
        NodeSpec {
            name: "out".into(),
            layer: LayerSpec::Dense { units: 1, activation: Activation::Linear },
            inputs: vec!["head".into()],
        },
    ]);
    Ok(GraphSpec {
        inputs: vec![
            InputSpec { name: PRESSURE_INPUT.into(), shape: vec![cfg.lookback, cfg.n_points] },
            InputSpec { name: FLOW_INPUT.into(), shape: vec![cfg.lookback, cfg.n_points] },
            InputSpec { name: IMF_INPUT.into(), shape: vec![cnn.lookback, cnn.channels] },
        ],
        nodes,
        output: "out".into(),
    })
}

pub fn build_fusion(cfg: &FusionConfig, cnn: &CnnEmdConfig, seed: u64) -> Result<NetworkModel> {
    NetworkModel::new(fusion_graph(cfg, cnn)?, seed)
}

#[derive(Clone, Debug)]
pub struct FusionBundle {
    pub network: NetworkModel,
    /// Entries per pressure and flow column, per inlet IMF channel, and the target.
    pub minmax: MinMaxParams,
    pub fusion: FusionConfig,
    pub cnn_emd: CnnEmdConfig,
    pub emd: EmdConfig,
    pressure_columns: Vec<String>,
    flow_columns: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleConfig {
    fusion: FusionConfig,
    cnn_emd: CnnEmdConfig,
    emd: EmdConfig,
    pressure_columns: Vec<String>,
    flow_columns: Vec<String>,
}

/// Time-major `[W, n]` window of columns `cols` ending before `end`, normalized.
fn group_window(cols: &[&[f64]], entries: &[&MinMaxEntry], end: usize, w: usize, out: &mut Vec<f64>) {
    for t in end - w..end {
        for (col, e) in cols.iter().zip(entries) {
            out.push(e.normalize(col[t]));
        }
    }
}

impl FusionBundle {
    pub fn min_history(&self) -> usize {
        self.cnn_emd.decompose_span.max(self.fusion.lookback)
    }

    fn entries(&self, names: &[String]) -> Result<Vec<&MinMaxEntry>> {
        names.iter().map(|n| self.minmax.get(n)).collect()
    }

    /// Inputs for samples whose point windows end at `point_ends[i]` and
    /// whose inlet history ends at `inlet_ends[i]`.
    fn inputs_for(
        &self,
        pressures: &[&[f64]],
        flows: &[&[f64]],
        inlet: &[f64],
        point_ends: &[usize],
        inlet_ends: &[usize],
    ) -> Result<NamedTensors> {
        let ends = point_ends;
        let w = self.fusion.lookback;
        let n = self.fusion.n_points;
        let p_entries = self.entries(&self.pressure_columns)?;
        let f_entries = self.entries(&self.flow_columns)?;
        let mut p = Vec::with_capacity(ends.len() * w * n);
        let mut f = Vec::with_capacity(ends.len() * w * n);
        for &end in ends {
            group_window(pressures, &p_entries, end, w, &mut p);
            group_window(flows, &f_entries, end, w, &mut f);
        }
        let imf_entries = self.entries(&channel_names(self.cnn_emd.channels))?;
        let c = self.cnn_emd.channels;
        let imf: Vec<f64> = causal_imf_windows(inlet, inlet_ends, &self.cnn_emd, &self.emd)?
            .into_iter()
            .flat_map(|win| {
                win.into_iter().enumerate().map(|(i, v)| imf_entries[i % c].normalize(v)).collect::<Vec<_>>()
            })
            .collect();
        let mut inputs = NamedTensors::new();
        inputs.insert(PRESSURE_INPUT.into(), Tensor::new(vec![ends.len(), w, n], p)?);
        inputs.insert(FLOW_INPUT.into(), Tensor::new(vec![ends.len(), w, n], f)?);
        inputs.insert(IMF_INPUT.into(), Tensor::new(vec![ends.len(), self.cnn_emd.lookback, c], imf)?);
        Ok(inputs)
    }

    /// One-step-ahead inlet predictions for every `t` in
    /// `min_history()..ds.len()`, in bar.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        check_dataset(ds, self.fusion.n_points)?;
        let span = self.min_history();
        if ds.len() <= span {
            return Err(Error::Model(format!(
                "{} samples leave nothing to predict after {span} samples of history",
                ds.len()
            )));
        }
        let pressures: Vec<&[f64]> = ds.distribution_pressure().iter().map(|s| s.values()).collect();
        let flows: Vec<&[f64]> = ds.distribution_flow().iter().map(|s| s.values()).collect();
        let target = self.minmax.get(TARGET_ENTRY)?;
        let ends: Vec<usize> = (span..ds.len()).collect();
        let mut out = Vec::with_capacity(ends.len());
        for chunk in ends.chunks(PREDICT_CHUNK) {
            let inputs = self.inputs_for(&pressures, &flows, ds.inlet().values(), chunk, chunk)?;
            let pred = self.network.predict(&inputs)?;
            out.extend(pred.data().iter().map(|&v| target.denormalize(v)));
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        nn::save_weights(&self.network, &dir.join("network.nnw"))?;
        fs::write(dir.join("minmax.json"), self.minmax.to_json()?)?;
        let cfg = BundleConfig {
            fusion: self.fusion.clone(),
            cnn_emd: self.cnn_emd.clone(),
            emd: self.emd,
            pressure_columns: self.pressure_columns.clone(),
            flow_columns: self.flow_columns.clone(),
        };
        let mut json = serde_json::to_string_pretty(&cfg)?;
        json.push('\n');
        fs::write(dir.join("config.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: BundleConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
        let minmax = MinMaxParams::from_json(&fs::read_to_string(dir.join("minmax.json"))?)?;
        let mut network = build_fusion(&cfg.fusion, &cfg.cnn_emd, 0)?;
        nn::load_weights(&mut network, &dir.join("network.nnw"))?;
        Ok(FusionBundle {
            network,
            minmax,
            fusion: cfg.fusion,
            cnn_emd: cfg.cnn_emd,
            emd: cfg.emd,
            pressure_columns: cfg.pressure_columns,
            flow_columns: cfg.flow_columns,
        })
    }
}

fn check_dataset(ds: &Dataset, n_points: usize) -> Result<()> {
    if ds.n_points() != n_points {
        return Err(Error::Model(format!("dataset has {} points, model expects {n_points}", ds.n_points())));
    }
    for s in ds.channels() {
        require_valid(s)?;
    }
    Ok(())
}

/// Trains the fusion graph end to end on next-step inlet pressure.
pub fn train_fusion(
    ds: &Dataset,
    fusion: &FusionConfig,
    cnn_emd: &CnnEmdConfig,
    emd: &EmdConfig,
    train_cfg: &TrainConfig,
) -> Result<(FusionBundle, History)> {
    let mut fusion = fusion.clone();
    if fusion.n_points == 0 {
        fusion.n_points = ds.n_points();
    }
    fusion.validate(cnn_emd)?;
    check_dataset(ds, fusion.n_points)?;
    let span = cnn_emd.decompose_span.max(fusion.lookback);
    let ends: Vec<usize> = (span..ds.len()).step_by(fusion.sample_stride).collect();
    if ends.len() < 2 {
        return Err(Error::Model(format!("{} samples give fewer than 2 fusion training windows", ds.len())));
    }
    let inlet = ds.inlet().values();
    let mut minmax = MinMaxParams::new(Vec::new());
    let pressure_columns: Vec<String> = ds.distribution_pressure().iter().map(|s| s.column_name()).collect();
    let flow_columns: Vec<String> = ds.distribution_flow().iter().map(|s| s.column_name()).collect();
    for s in ds.distribution_pressure().iter().chain(ds.distribution_flow()) {
        minmax.push(fit_minmax(s.values(), &s.column_name())?);
    }
    let windows = causal_imf_windows(inlet, &ends, cnn_emd, emd)?;
    for e in fit_window_params(&windows, cnn_emd.channels)?.features {
        minmax.push(e);
    }
    let target_raw: Vec<f64> = ends.iter().map(|&t| inlet[t]).collect();
    let target_entry = fit_minmax(&target_raw, TARGET_ENTRY)?;
    let targets: Vec<f64> = target_raw.iter().map(|&v| target_entry.normalize(v)).collect();
    minmax.push(target_entry);

    let mut bundle = FusionBundle {
        network: build_fusion(&fusion, cnn_emd, train_cfg.seed)?,
        minmax,
        fusion,
        cnn_emd: cnn_emd.clone(),
        emd: *emd,
        pressure_columns,
        flow_columns,
    };
    let pressures: Vec<&[f64]> = ds.distribution_pressure().iter().map(|s| s.values()).collect();
    let flows: Vec<&[f64]> = ds.distribution_flow().iter().map(|s| s.values()).collect();
    let inputs = bundle.inputs_for(&pressures, &flows, inlet, &ends, &ends)?;
    let n = ends.len();
    let data = TrainData::new(inputs, Tensor::new(vec![n, 1], targets)?)?;
    let history = nn::train(&mut bundle.network, &data, train_cfg)?;
    Ok((bundle, history))
}

/// Next-step inlet pressure from `[W]`-long windows per point and the inlet history.
pub fn predict_inlet(
    bundle: &FusionBundle,
    pressures: &[&[f64]],
    flows: &[&[f64]],
    inlet_history: &SensorSeries,
) -> Result<f64> {
    let w = bundle.fusion.lookback;
    let n = bundle.fusion.n_points;
    if pressures.len() != n || flows.len() != n {
        return Err(Error::Model(format!(
            "expected {n} pressure and flow windows, got {} and {}",
            pressures.len(),
            flows.len()
        )));
    }
    if let Some(bad) = pressures.iter().chain(flows).find(|c| c.len() != w) {
        return Err(Error::Model(format!("window of length {} where {w} is required", bad.len())));
    }
    require_valid(inlet_history)?;
    let inlet = inlet_history.values();
    if inlet.len() < bundle.cnn_emd.decompose_span {
        return Err(Error::Model(format!(
            "inlet history of {} samples is shorter than the required {}",
            inlet.len(),
            bundle.cnn_emd.decompose_span
        )));
    }
    let target = bundle.minmax.get(TARGET_ENTRY)?;
    let inputs = bundle.inputs_for(pressures, flows, inlet, &[w], &[inlet.len()])?;
    let pred = bundle.network.predict(&inputs)?;
    Ok(target.denormalize(pred.data()[0]))
}
