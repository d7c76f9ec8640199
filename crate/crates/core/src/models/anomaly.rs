//! Residual scoring, event detection and evaluation against labels.

use serde::{Deserialize, Serialize};

use crate::data::{AnomalyEvent, Direction};
use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Trailing residuals used for the rolling mean and deviation.
    pub window: usize,
    pub threshold: f64,
    /// Shortest run of over-threshold scores that counts.
    pub min_duration: usize,
    /// Qualifying runs separated by at most this many samples become one event.
    pub merge_gap: usize,
    /// Matching tolerance used when evaluating against labels.
    pub tolerance: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { window: 96, threshold: 3.0, min_duration: 1, merge_gap: 0, tolerance: 2 }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || self.window < 2 || self.min_duration == 0 {
            return Err(Error::Model("detect needs threshold > 0, window >= 2 and min_duration >= 1".into()));
        }
        Ok(())
    }
}

/// Rolling z-scores of `actual − predicted` against the previous `window`
/// residuals. The first `window` samples score 0.
pub fn residual_scores(predicted: &[f64], actual: &[f64], window: usize) -> Result<Vec<f64>> {
    if predicted.len() != actual.len() {
        return Err(Error::Model(format!("{} predictions against {} actual values", predicted.len(), actual.len())));
    }
    if window < 2 {
        return Err(Error::Model("score window must be >= 2".into()));
    }
    let e: Vec<f64> = actual.iter().zip(predicted).map(|(a, p)| a - p).collect();
    let mut scores = vec![0.0; e.len()];
    for t in window..e.len() {
        let past = &e[t - window..t];
        let mean = past.iter().sum::<f64>() / window as f64;
        let var = past.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / window as f64;
        scores[t] = (e[t] - mean) / var.sqrt().max(SIGMA_FLOOR);
    }
    Ok(scores)
}

/// Maximal runs of `|score| >= threshold`. Runs shorter than `min_duration`
/// are dropped, then runs closer than `merge_gap` are joined. Direction
/// follows the sign of the mean score over the event.
pub fn detect(scores: &[f64], sensor_id: &str, cfg: &DetectConfig) -> Result<Vec<AnomalyEvent>> {
    cfg.validate()?;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut t = 0;
    while t < scores.len() {
        if scores[t].abs() >= cfg.threshold {
            let start = t;
            while t + 1 < scores.len() && scores[t + 1].abs() >= cfg.threshold {
                t += 1;
            }
            if t - start + 1 >= cfg.min_duration {
                match runs.last_mut() {
                    Some(last) if start - last.1 - 1 <= cfg.merge_gap => last.1 = t,
                    _ => runs.push((start, t)),
                }
            }
        }
        t += 1;
    }
    Ok(runs
        .into_iter()
        .map(|(start, end)| {
            let span = &scores[start..=end];
            let peak = span.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            let direction = if span.iter().sum::<f64>() > 0.0 { Direction::Spike } else { Direction::Drop };
            AnomalyEvent {
                sensor_id: sensor_id.to_string(),
                start_index: start,
                end_index: end,
                peak_score: peak,
                direction,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// One-to-one matching: events in order of decreasing peak score each take
/// the earliest unmatched label they overlap once labels are widened by
/// `tolerance` samples on both sides. Undefined ratios are reported as 0.
pub fn evaluate_events(events: &[AnomalyEvent], labels: &[AnomalyEvent], tolerance: usize) -> DetectionMetrics {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[b].peak_score.total_cmp(&events[a].peak_score).then(events[a].start_index.cmp(&events[b].start_index))
    });
    let mut label_order: Vec<usize> = (0..labels.len()).collect();
    label_order.sort_by_key(|&i| (labels[i].start_index, labels[i].end_index));
    let mut taken = vec![false; labels.len()];
    let mut tp = 0;
    for &ei in &order {
        let e = &events[ei];
        let hit = label_order.iter().copied().find(|&li| {
            let l = &labels[li];
            !taken[li]
                && l.sensor_id == e.sensor_id
                && e.start_index <= l.end_index + tolerance
                && e.end_index + tolerance >= l.start_index
        });
        if let Some(li) = hit {
            taken[li] = true;
            tp += 1;
        }
    }
    let fp = events.len() - tp;
    let fn_ = labels.len() - tp;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, events.len());
    let recall = ratio(tp, labels.len());
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    DetectionMetrics { precision, recall, f1, true_positives: tp, false_positives: fp, false_negatives: fn_ }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean absolute percentage error as a fraction.
    pub mape: f64,
    /// `100 · (1 − mape)`.
    pub accuracy: f64,
    pub n: usize,
}

/// Samples with a zero actual value are left out of the MAPE.
pub fn forecast_metrics(predicted: &[f64], actual: &[f64]) -> Result<ForecastMetrics> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::Model(format!(
            "forecast metrics need equal non-empty lengths, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    let n = predicted.len() as f64;
    let (mut abs, mut sq, mut pct, mut n_pct) = (0.0, 0.0, 0.0, 0usize);
    for (p, a) in predicted.iter().zip(actual) {
        let e = a - p;
        abs += e.abs();
        sq += e * e;
        if *a != 0.0 {
            pct += (e / a).abs();
            n_pct += 1;
        }
    }
    let mape = if n_pct == 0 { 0.0 } else { pct / n_pct as f64 };
    Ok(ForecastMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape,
        accuracy: 100.0 * (1.0 - mape),
        n: predicted.len(),
    })
}

/// Flat report: forecast metrics always, detection metrics when labels exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub accuracy: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub true_positives: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub false_positives: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub false_negatives: Option<usize>,
}

/// Forecast metrics plus detection metrics when `labels` is non-empty.
pub fn evaluate(
    predicted: &[f64],
    actual: &[f64],
    events: &[AnomalyEvent],
    labels: &[AnomalyEvent],
    tolerance: usize,
) -> Result<Metrics> {
    let f = forecast_metrics(predicted, actual)?;
    let d = (!labels.is_empty()).then(|| evaluate_events(events, labels, tolerance));
    Ok(Metrics {
        mae: f.mae,
        rmse: f.rmse,
        mape: f.mape,
        accuracy: f.accuracy,
        n: f.n,
        precision: d.as_ref().map(|d| d.precision),
        recall: d.as_ref().map(|d| d.recall),
        f1: d.as_ref().map(|d| d.f1),
        true_positives: d.as_ref().map(|d| d.true_positives),
        false_positives: d.as_ref().map(|d| d.false_positives),
        false_negatives: d.as_ref().map(|d| d.false_negatives),
    })
}

impl Metrics {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn event(start: usize, end: usize, peak: f64) -> AnomalyEvent {
        AnomalyEvent {
            sensor_id: "s".into(),
            start_index: start,
            end_index: end,
            peak_score: peak,
            direction: Direction::Drop,
        }
    }

    #[test]
    fn perfect_forecast_scores_zero() {
        let x: Vec<f64> = (0..300).map(|i| (i as f64).sin()).collect();
        assert!(residual_scores(&x, &x, 96).unwrap().iter().all(|s| *s == 0.0));
        let m = forecast_metrics(
            &x.iter().map(|v| v + 2.0).collect::<Vec<_>>(),
            &x.iter().map(|v| v + 2.0).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(m.mape, 0.0);
        assert_eq!(m.accuracy, 100.0);
    }

    #[test]
    fn gaussian_residuals_rarely_exceed_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zeros = vec![0.0; e.len()];
        let s = residual_scores(&zeros, &e, 96).unwrap();
        let frac = s.iter().filter(|v| v.abs() > 3.0).count() as f64 / s.len() as f64;
        assert!(frac < 0.01, "{frac}");
    }

    #[test]
    fn spike_after_calm_window() {
        let mut actual: Vec<f64> = (0..200).map(|i| 0.01 * ((i * 37) % 11) as f64).collect();
        actual[150] += 10.0;
        let s = residual_scores(&vec![0.0; 200], &actual, 96).unwrap();
        assert!(s[150].abs() > 5.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(residual_scores(&[0.0; 3], &[0.0; 4], 2).is_err());
    }

    #[test]
    fn detect_runs() {
        assert!(detect(&[0.0; 50], "s", &DetectConfig::default()).unwrap().is_empty());
        let mut s = vec![0.0; 30];
        s[10] = 4.0;
        s[11] = 5.0;
        s[12] = 4.0;
        let ev = detect(&s, "s", &DetectConfig::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].start_index, ev[0].end_index, ev[0].peak_score), (10, 12, 5.0));
        assert_eq!(ev[0].direction, Direction::Spike);
    }

    #[test]
    fn min_duration_and_merge() {
        let mut s = vec![0.0; 40];
        s[5] = -4.0;
        for t in [10, 11, 20, 21] {
            s[t] = -3.5;
        }
        let cfg = DetectConfig { min_duration: 2, merge_gap: 8, ..DetectConfig::default() };
        let ev = detect(&s, "s", &cfg).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].start_index, ev[0].end_index), (10, 21));
        assert_eq!(ev[0].direction, Direction::Drop);
    }

    #[test]
    fn exact_events_score_one() {
        let labels = vec![event(10, 20, 1.0), event(50, 60, 1.0)];
        let m = evaluate_events(&labels, &labels, 2);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let none = evaluate_events(&[], &labels, 2);
        assert_eq!((none.precision, none.recall), (0.0, 0.0));
    }

    #[test]
    fn tolerance_and_one_to_one() {
        let labels = vec![event(10, 20, 1.0)];
        // Both touch the label only through the tolerance; one is a duplicate.
        let events = vec![event(22, 23, 4.0), event(7, 8, 6.0)];
        let m = evaluate_events(&events, &labels, 2);
        assert_eq!((m.true_positives, m.false_positives), (1, 1));
        assert_eq!(evaluate_events(&[event(23, 24, 4.0)], &labels, 2).true_positives, 0);
    }

    #[test]
    fn empty_labels_omit_detection_fields() {
        let x = vec![3.0; 10];
        let m = evaluate(&x, &x, &[], &[], 2).unwrap();
        let json = m.to_json().unwrap();
        assert!(!json.contains("precision"));
        assert!(json.contains("\"accuracy\": 100.0"));
    }
}
