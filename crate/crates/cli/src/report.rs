//! Prediction files, metrics JSON and the markdown summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wdn_core::data::{AnomalyEvent, Timestamp};
use wdn_core::models::{evaluate, Metrics};

use crate::{failed, CliError};

/// Rows of `predictions.csv`: absolute sample index, timestamp, actual, predicted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub index: Vec<usize>,
    pub timestamps: Vec<Timestamp>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl Predictions {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,DateTime,actual,predicted\n");
        for i in 0..self.index.len() {
            let _ = writeln!(s, "{},{},{},{}", self.index[i], self.timestamps[i], self.actual[i], self.predicted[i]);
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let op = "read predictions";
        let mut reader = csv::Reader::from_path(path).map_err(failed(op))?;
        let headers = reader.headers().map_err(failed(op))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "DateTime", "actual", "predicted"] {
            return Err(failed(op)(format!("{} is not a predictions file (header {:?})", path.display(), headers)));
        }
        let mut p = Predictions::default();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(failed(op))?;
            let bad = |what: &str| failed(op)(format!("row {}: bad {what}", line + 2));
            p.index.push(rec[0].parse().map_err(|_| bad("index"))?);
            p.timestamps.push(Timestamp::parse(&rec[1]).map_err(|_| bad("DateTime"))?);
            p.actual.push(rec[2].parse().map_err(|_| bad("actual"))?);
            p.predicted.push(rec[3].parse().map_err(|_| bad("predicted"))?);
        }
        if p.index.is_empty() {
            return Err(failed(op)(format!("{} has no rows", path.display())));
        }
        Ok(p)
    }
}

pub fn read_events(path: &Path, what: &str) -> Result<Vec<AnomalyEvent>, CliError> {
    let op = format!("read {what}");
    let text = fs::read_to_string(path).map_err(failed(&op))?;
    serde_json::from_str(&text).map_err(failed(&op))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(failed("write json"))?;
    s.push('\n');
    fs::write(path, s).map_err(failed("write json"))
}

pub fn markdown(m: &Metrics) -> String {
    let mut s = String::from("# Evaluation\n\n| metric | value |\n|---|---|\n");
    let _ = writeln!(s, "| samples | {} |", m.n);
    let _ = writeln!(s, "| MAE | {:.6} |", m.mae);
    let _ = writeln!(s, "| RMSE | {:.6} |", m.rmse);
    let _ = writeln!(s, "| MAPE | {:.4}% |", 100.0 * m.mape);
    let _ = writeln!(s, "| forecast accuracy | {:.2}% |", m.accuracy);
    if let (Some(p), Some(r), Some(f1)) = (m.precision, m.recall, m.f1) {
        let _ = writeln!(s, "| precision | {p:.4} |");
        let _ = writeln!(s, "| recall | {r:.4} |");
        let _ = writeln!(s, "| event F1 | {f1:.4} |");
        let _ = writeln!(
            s,
            "| TP / FP / FN | {} / {} / {} |",
            m.true_positives.unwrap_or(0),
            m.false_positives.unwrap_or(0),
            m.false_negatives.unwrap_or(0)
        );
    }
    s
}

/// Writes `metrics.json` and `report.md` into `out`.
pub fn eval_report(
    predictions: &Path,
    events: Option<&Path>,
    labels: Option<&Path>,
    tolerance: usize,
    out: &Path,
) -> Result<(Vec<PathBuf>, Metrics), CliError> {
    let p = Predictions::read(predictions)?;
    let labels = match labels {
        Some(l) => read_events(l, "labels")?,
        None => Vec::new(),
    };
    let events = match events {
        Some(e) => read_events(e, "events")?,
        None if labels.is_empty() => Vec::new(),
        None => return Err(CliError::Usage("--labels needs --events".into())),
    };
    let metrics = evaluate(&p.predicted, &p.actual, &events, &labels, tolerance).map_err(failed("evaluate"))?;
    fs::create_dir_all(out).map_err(failed("create output directory"))?;
    let json = out.join("metrics.json");
    fs::write(&json, metrics.to_json().map_err(failed("evaluate"))?).map_err(failed("write metrics"))?;
    let md = out.join("report.md");
    fs::write(&md, markdown(&metrics)).map_err(failed("write report"))?;
    Ok((vec![json, md], metrics))
}
