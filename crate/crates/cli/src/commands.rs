//! One function per subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wdn_core::data::{
    inject_anomalies, inject_missing, parse_csv, plan_anomalies, to_csv, AnomalyEvent, Dataset, SensorSeries,
};
use wdn_core::impute::impute_dataset;
use wdn_core::models::{detect, residual_scores, train_forecaster, train_fusion, ForecasterBundle, FusionBundle};
use wdn_core::nn::History;
use wdn_core::signal::{acf, decompose, hht, pacf};

use crate::config::RunConfig;
use crate::plot::{line_svg, scatter_svg, Panel, Series};
use crate::report::{eval_report, read_events, write_json, Predictions};
use crate::{failed, CliError, Command, Common};

type Outcome = Result<(Vec<PathBuf>, String), CliError>;

const DATA_FILE: &str = "data.csv";
const LABELS_FILE: &str = "labels.json";

pub fn execute(cmd: Command) -> Outcome {
    match cmd {
        Command::Simulate { days, points, common } => simulate(days, points, &common),
        Command::Inject { input, sensor, rate, common } => inject(&input, &sensor, rate, &common),
        Command::Impute { input, common } => impute(&input, &common),
        Command::Acf { input, sensor, lags, common } => acf_cmd(&input, &sensor, lags, &common),
        Command::Decompose { input, sensor, common } => decompose_cmd(&input, &sensor, &common),
        Command::Hht { input, sensor, common } => hht_cmd(&input, &sensor, &common),
        Command::TrainForecaster { input, sensor, common } => train_forecaster_cmd(&input, &sensor, &common),
        Command::TrainFusion { input, common } => train_fusion_cmd(&input, &common),
        Command::Predict { input, model, sensor, common } => predict_cmd(&input, &model, &sensor, &common),
        Command::Detect { input, sensor, threshold, common } => detect_cmd(&input, &sensor, threshold, &common),
        Command::Eval { input, events, labels, common } => {
            eval_cmd(&input, events.as_deref(), labels.as_deref(), &common)
        }
    }
}

fn setup(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    fs::create_dir_all(&common.out).map_err(failed("create output directory"))?;
    Ok(cfg)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>, artifacts: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(failed(&format!("write {}", path.display())))?;
    artifacts.push(path);
    Ok(())
}

/// Accepts a dataset file or a directory holding `data.csv`.
fn data_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(DATA_FILE)
    } else {
        input.to_path_buf()
    }
}

/// Reads a dataset plus the `labels.json` next to it, if any.
fn load_dataset(input: &Path) -> Result<Dataset, CliError> {
    let path = data_path(input);
    let text = fs::read_to_string(&path).map_err(failed(&format!("read {}", path.display())))?;
    let ds = parse_csv(&text).map_err(failed("parse dataset"))?;
    let labels_path = path.with_file_name(LABELS_FILE);
    if labels_path.is_file() {
        let labels = read_events(&labels_path, "labels")?;
        return Ok(ds.with_labels(Some(labels)));
    }
    Ok(ds)
}

fn save_dataset(ds: &Dataset, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<(), CliError> {
    write(out.join(DATA_FILE), to_csv(ds), artifacts)?;
    if let Some(labels) = ds.labels() {
        let path = out.join(LABELS_FILE);
        write_json(&path, &labels)?;
        artifacts.push(path);
    }
    Ok(())
}

fn channel<'a>(ds: &'a Dataset, sensor: &str) -> Result<&'a SensorSeries, CliError> {
    ds.channel(sensor).ok_or_else(|| {
        let known: Vec<String> = ds.channels().map(|s| s.column_name()).collect();
        CliError::Usage(format!("no column {sensor:?}; available: {}", known.join(", ")))
    })
}

/// Values of a channel that must have no missing samples.
fn complete_values<'a>(ds: &'a Dataset, sensor: &str) -> Result<&'a [f64], CliError> {
    let s = channel(ds, sensor)?;
    if !s.all_valid() {
        return Err(failed(&format!("read {sensor}"))(format!(
            "{} missing samples; run impute first",
            s.invalid_count()
        )));
    }
    Ok(s.values())
}

fn svg(result: Result<String, crate::plot::EmptyPlot>) -> Result<String, CliError> {
    result.map_err(|_| failed("plot")("nothing to draw"))
}

fn simulate(days: Option<usize>, points: Option<usize>, common: &Common) -> Outcome {
    let mut cfg = setup(common)?;
    if let Some(d) = days {
        cfg.synth.days = d;
    }
    if let Some(p) = points {
        cfg.synth.n_points = p;
    }
    cfg.validate()?;
    let ds = wdn_core::data::generate_network(&cfg.synth).map_err(failed("simulate"))?;
    let mut artifacts = Vec::new();
    save_dataset(&ds, &common.out, &mut artifacts)?;
    let summary = format!("simulated {} days, {} points, {} samples", cfg.synth.days, cfg.synth.n_points, ds.len());
    Ok((artifacts, summary))
}

fn inject(input: &Path, sensor: &str, rate: f64, common: &Common) -> Outcome {
    let cfg = setup(common)?;
    if !(0.0..1.0).contains(&rate) {
        return Err(CliError::Usage(format!("--rate must be in [0, 1), got {rate}")));
    }
    let ds = load_dataset(input)?;
    let len = channel(&ds, sensor)?.len();
    let specs = plan_anomalies(sensor, len, &cfg.anomalies, cfg.synth.seed).map_err(failed("plan anomalies"))?;
    let mut out = inject_anomalies(&ds, &specs).map_err(failed("inject anomalies"))?;
    if rate > 0.0 {
        out = inject_missing(&out, rate, cfg.synth.seed).map_err(failed("inject missing samples"))?;
    }
    let out = if out.labels().is_none() { out.with_labels(Some(Vec::new())) } else { out };
    let mut artifacts = Vec::new();
    save_dataset(&out, &common.out, &mut artifacts)?;
    let missing: usize = out.channels().map(SensorSeries::invalid_count).sum();
    Ok((artifacts, format!("injected {} anomalies into {sensor}, {missing} missing samples", specs.len())))
}

fn impute(input: &Path, common: &Common) -> Outcome {
    let cfg = setup(common)?;
    let ds = load_dataset(input)?;
    let (out, forests) = impute_dataset(&ds, &cfg.forest).map_err(failed("impute"))?;
    let mut artifacts = Vec::new();
    save_dataset(&out, &common.out, &mut artifacts)?;
    if !forests.is_empty() {
        let dir = common.out.join("forests");
        fs::create_dir_all(&dir).map_err(failed("create output directory"))?;
        for (column, model) in &forests {
            let json = model.to_json().map_err(failed("serialize forest"))?;
            write(dir.join(format!("{column}.json")), json, &mut artifacts)?;
        }
    }
    let filled: usize = ds.channels().map(SensorSeries::invalid_count).sum();
    Ok((artifacts, format!("filled {filled} samples across {} channels", forests.len())))
}

fn acf_cmd(input: &Path, sensor: &str, lags: usize, common: &Common) -> Outcome {
    setup(common)?;
    if lags == 0 {
        return Err(CliError::Usage("--lags must be at least 1".into()));
    }
    let ds = load_dataset(input)?;
    let values = complete_values(&ds, sensor)?;
    let rho = acf(values, lags).map_err(failed("acf"))?;
    let mut phi = vec![1.0];
    phi.extend(pacf(values, lags).map_err(failed("pacf"))?);
    let mut csv = String::from("lag,acf,pacf\n");
    for lag in 0..rho.len() {
        let _ = writeln!(csv, "{lag},{},{}", rho[lag], phi[lag]);
    }
    let plot = svg(line_svg(&[Panel::single("acf", rho.clone()), Panel::single("pacf", phi[1..].to_vec())]))?;
    let mut artifacts = Vec::new();
    write(common.out.join("acf.csv"), csv, &mut artifacts)?;
    write(common.out.join("acf.svg"), plot, &mut artifacts)?;
    let peak = (1..rho.len()).max_by(|&a, &b| rho[a].total_cmp(&rho[b])).unwrap_or(0);
    Ok((artifacts, format!("acf of {sensor} up to lag {lags}; peak at lag {peak}")))
}

fn decompose_cmd(input: &Path, sensor: &str, common: &Common) -> Outcome {
    let cfg = setup(common)?;
    let ds = load_dataset(input)?;
    let series = channel(&ds, sensor)?;
    let values = complete_values(&ds, sensor)?;
    let set = decompose(values, &cfg.emd).map_err(failed("decompose"))?;
    let mut csv = String::from("DateTime");
    for k in 1..=set.n_imfs() {
        let _ = write!(csv, ",imf_{k}");
    }
    csv.push_str(",residual\n");
    for t in 0..values.len() {
        let _ = write!(csv, "{}", series.timestamp(t));
        for imf in &set.imfs {
            let _ = write!(csv, ",{}", imf[t]);
        }
        let _ = writeln!(csv, ",{}", set.residual[t]);
    }
    let mut panels = vec![Panel::single(sensor, values.to_vec())];
    panels.extend(set.imfs.iter().enumerate().map(|(k, imf)| Panel::single(format!("imf_{}", k + 1), imf.clone())));
    panels.push(Panel::single("residual", set.residual.clone()));
    let mut artifacts = Vec::new();
    write(common.out.join("imfs.csv"), csv, &mut artifacts)?;
    write(common.out.join("imfs.svg"), svg(line_svg(&panels))?, &mut artifacts)?;
    Ok((artifacts, format!("{sensor}: {} IMFs plus residual", set.n_imfs())))
}

fn hht_cmd(input: &Path, sensor: &str, common: &Common) -> Outcome {
    let cfg = setup(common)?;
    let ds = load_dataset(input)?;
    let values = complete_values(&ds, sensor)?;
    let set = decompose(values, &cfg.emd).map_err(failed("decompose"))?;
    let frame = hht(&set).map_err(failed("hilbert transform"))?;
    let mut csv = String::from("imf,index,amplitude,phase,frequency\n");
    let mut points = Vec::new();
    for (k, row) in frame.rows.iter().enumerate() {
        for t in 0..row.amplitude.len() {
            let _ = writeln!(csv, "{},{t},{},{},{}", k + 1, row.amplitude[t], row.phase[t], row.frequency[t]);
            points.push((t as f64, row.frequency[t], row.amplitude[t]));
        }
    }
    let mut artifacts = Vec::new();
    write(common.out.join("hht.csv"), csv, &mut artifacts)?;
    write(
        common.out.join("hht.svg"),
        svg(scatter_svg(&format!("{sensor} Hilbert spectrum"), &points))?,
        &mut artifacts,
    )?;
    Ok((artifacts, format!("{sensor}: Hilbert spectrum of {} IMFs", frame.rows.len())))
}

fn history_summary(kind: &str, h: &History) -> String {
    format!("{kind}: {} epochs, best val mse {:.6} at epoch {}", h.epochs.len(), h.best_val_mse(), h.best_epoch)
}

fn train_forecaster_cmd(input: &Path, sensor: &str, common: &Common) -> Outcome {
    let cfg = setup(common)?;
    let ds = load_dataset(input)?;
    let series = channel(&ds, sensor)?;
    complete_values(&ds, sensor)?;
    let (bundle, history) =
        train_forecaster(series, &cfg.cnn_emd, &cfg.emd, &cfg.train).map_err(failed("train forecaster"))?;
    bundle.save(&common.out).map_err(failed("save bundle"))?;
    let mut artifacts = vec![common.out.clone()];
    write(common.out.join("history.csv"), history.to_csv(), &mut artifacts)?;
    Ok((artifacts, history_summary("forecaster", &history)))
}

fn train_fusion_cmd(input: &Path, common: &Common) -> Outcome {
    let cfg = setup(common)?;
    let ds = load_dataset(input)?;
    let (bundle, history) =
        train_fusion(&ds, &cfg.fusion, &cfg.cnn_emd, &cfg.emd, &cfg.train).map_err(failed("train fusion"))?;
    bundle.save(&common.out).map_err(failed("save bundle"))?;
    let mut artifacts = vec![common.out.clone()];
    write(common.out.join("history.csv"), history.to_csv(), &mut artifacts)?;
    Ok((artifacts, history_summary("fusion", &history)))
}

fn is_fusion_bundle(dir: &Path) -> Result<bool, CliError> {
    let text = fs::read_to_string(dir.join("config.json")).map_err(failed("read bundle"))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(failed("read bundle"))?;
    Ok(value.get("fusion").is_some())
}

fn predict_cmd(input: &Path, model: &Path, sensor: &str, common: &Common) -> Outcome {
    setup(common)?;
    let ds = load_dataset(input)?;
    let (column, from, predicted) = if is_fusion_bundle(model)? {
        let bundle = FusionBundle::load(model).map_err(failed("load bundle"))?;
        let pred = bundle.predict_dataset(&ds).map_err(failed("predict"))?;
        (ds.inlet(), bundle.min_history(), pred)
    } else {
        let bundle = ForecasterBundle::load(model).map_err(failed("load bundle"))?;
        let values = complete_values(&ds, sensor)?;
        let pred = bundle.predict_series(values).map_err(failed("predict"))?;
        (channel(&ds, sensor)?, bundle.min_history(), pred)
    };
    let index: Vec<usize> = (from..column.len()).collect();
    let p = Predictions {
        timestamps: index.iter().map(|&t| column.timestamp(t)).collect(),
        actual: index.iter().map(|&t| column.values()[t]).collect(),
        predicted,
        index,
    };
    let plot = line_svg(&[Panel {
        title: column.column_name(),
        series: vec![
            Series { name: "actual".into(), values: p.actual.clone() },
            Series { name: "predicted".into(), values: p.predicted.clone() },
        ],
    }]);
    let mut artifacts = Vec::new();
    write(common.out.join("predictions.csv"), p.to_csv(), &mut artifacts)?;
    write(common.out.join("predictions.svg"), svg(plot)?, &mut artifacts)?;
    Ok((artifacts, format!("{} predictions of {} from index {from}", p.index.len(), column.column_name())))
}

fn detect_cmd(input: &Path, sensor: &str, threshold: Option<f64>, common: &Common) -> Outcome {
    let mut cfg = setup(common)?;
    if let Some(t) = threshold {
        cfg.detect.threshold = t;
        cfg.validate()?;
    }
    let p = Predictions::read(input)?;
    let scores = residual_scores(&p.predicted, &p.actual, cfg.detect.window).map_err(failed("score residuals"))?;
    let events: Vec<AnomalyEvent> = detect(&scores, sensor, &cfg.detect)
        .map_err(failed("detect"))?
        .into_iter()
        .map(|mut e| {
            e.start_index = p.index[e.start_index];
            e.end_index = p.index[e.end_index];
            e
        })
        .collect();
    let mut csv = String::from("index,DateTime,score\n");
    for (i, s) in scores.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{s}", p.index[i], p.timestamps[i]);
    }
    let mut artifacts = Vec::new();
    let events_path = common.out.join("events.json");
    write_json(&events_path, &events)?;
    artifacts.push(events_path);
    write(common.out.join("scores.csv"), csv, &mut artifacts)?;
    Ok((artifacts, format!("{} events at threshold {}", events.len(), cfg.detect.threshold)))
}

fn eval_cmd(input: &Path, events: Option<&Path>, labels: Option<&Path>, common: &Common) -> Outcome {
    let cfg = setup(common)?;
    let (artifacts, m) = eval_report(input, events, labels, cfg.detect.tolerance, &common.out)?;
    let mut summary = format!("MAE {:.6}, RMSE {:.6}, accuracy {:.2}%", m.mae, m.rmse, m.accuracy);
    if let Some(f1) = m.f1 {
        let _ = write!(summary, ", event F1 {f1:.4}");
    }
    Ok((artifacts, summary))
}
