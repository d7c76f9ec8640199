use serde::{Deserialize, Serialize};

use super::timestamp::{Timestamp, DEFAULT_CADENCE_MINUTES};
use crate::error::{Error, Result};

/// Upper physical bound for any pressure reading, in bar.
pub const MAX_PRESSURE_BAR: f64 = 16.0;

/// Column name of the inlet channel.
pub const INLET_COLUMN: &str = "inlet_pressure";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    /// Distribution-point pressure, bar.
    Pressure,
    /// Distribution-point flow, m³/h.
    Flow,
    /// Inlet pressure, bar.
    InletPressure,
}

impl SensorKind {
    /// Physical validity check used when ingesting or modifying readings.
    pub fn is_physical(self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self {
            SensorKind::Pressure | SensorKind::InletPressure => (0.0..=MAX_PRESSURE_BAR).contains(&value),
            SensorKind::Flow => value >= 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Drop,
    Spike,
}

/// A detected or injected anomaly interval. `end_index` is inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub sensor_id: String,
    pub start_index: usize,
    pub end_index: usize,
    pub peak_score: f64,
    pub direction: Direction,
}

/// Fixed-cadence readings for one sensor channel.
///
/// Missing or out-of-bounds samples carry the placeholder `0.0` and
/// `valid == false`; the validity mask is the only source of truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSeries {
    sensor_id: String,
    kind: SensorKind,
    start: Timestamp,
    cadence: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl SensorSeries {
    pub fn new(
        sensor_id: impl Into<String>,
        kind: SensorKind,
        start: Timestamp,
        cadence: u32,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != valid.len() {
            return Err(Error::invalid(format!(
                "values ({}) and validity mask ({}) differ in length",
                values.len(),
                valid.len()
            )));
        }
        if cadence == 0 {
            return Err(Error::invalid("cadence must be positive"));
        }
        let mut series = SensorSeries { sensor_id: sensor_id.into(), kind, start, cadence, values, valid };
        series.enforce_bounds();
        Ok(series)
    }

    /// All-valid series at the default cadence; out-of-bounds values are still flagged.
    pub fn from_values(sensor_id: impl Into<String>, kind: SensorKind, start: Timestamp, values: Vec<f64>) -> Self {
        let valid = vec![true; values.len()];
        Self::new(sensor_id, kind, start, DEFAULT_CADENCE_MINUTES, values, valid)
            .expect("lengths agree by construction")
    }

    fn enforce_bounds(&mut self) {
        for (v, ok) in self.values.iter_mut().zip(self.valid.iter_mut()) {
            if !*ok || !self.kind.is_physical(*v) {
                *ok = false;
                *v = 0.0;
            }
        }
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    /// CSV column name, e.g. `p1_pressure` or `inlet_pressure`.
    pub fn column_name(&self) -> String {
        column_name(&self.sensor_id, self.kind)
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn cadence(&self) -> u32 {
        self.cadence
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> Timestamp {
        self.start.add_minutes(index as i64 * i64::from(self.cadence))
    }

    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    /// Same metadata, new samples. Bounds are re-applied.
    pub fn with_samples(&self, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        Self::new(self.sensor_id.clone(), self.kind, self.start, self.cadence, values, valid)
    }

    /// Contiguous sub-range `[from, to)` as a new series.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from > to || to > self.len() {
            return Err(Error::invalid(format!("slice [{from}, {to}) outside series of length {}", self.len())));
        }
        Self::new(
            self.sensor_id.clone(),
            self.kind,
            self.timestamp(from),
            self.cadence,
            self.values[from..to].to_vec(),
            self.valid[from..to].to_vec(),
        )
    }
}

pub fn column_name(sensor_id: &str, kind: SensorKind) -> String {
    match kind {
        SensorKind::InletPressure => INLET_COLUMN.to_string(),
        SensorKind::Pressure => format!("{sensor_id}_pressure"),
        SensorKind::Flow => format!("{sensor_id}_flow"),
    }
}

/// Inlet channel plus per-point pressure and flow channels on one time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inlet: SensorSeries,
    distribution_pressure: Vec<SensorSeries>,
    distribution_flow: Vec<SensorSeries>,
    labels: Option<Vec<AnomalyEvent>>,
}

impl Dataset {
    pub fn new(
        inlet: SensorSeries,
        distribution_pressure: Vec<SensorSeries>,
        distribution_flow: Vec<SensorSeries>,
        labels: Option<Vec<AnomalyEvent>>,
    ) -> Result<Self> {
        if inlet.kind() != SensorKind::InletPressure {
            return Err(Error::invalid("inlet series must have kind inlet_pressure"));
        }
        for s in distribution_pressure.iter().chain(&distribution_flow) {
            if s.start() != inlet.start() || s.cadence() != inlet.cadence() || s.len() != inlet.len() {
                return Err(Error::invalid(format!(
                    "series {} does not share the inlet's start, cadence and length",
                    s.column_name()
                )));
            }
        }
        if distribution_pressure.iter().any(|s| s.kind() != SensorKind::Pressure)
            || distribution_flow.iter().any(|s| s.kind() != SensorKind::Flow)
        {
            return Err(Error::invalid("distribution series have the wrong kind"));
        }
        let p_ids: Vec<&str> = distribution_pressure.iter().map(|s| s.sensor_id()).collect();
        let f_ids: Vec<&str> = distribution_flow.iter().map(|s| s.sensor_id()).collect();
        if p_ids != f_ids {
            return Err(Error::invalid(format!("pressure sensors {p_ids:?} and flow sensors {f_ids:?} do not match")));
        }
        Ok(Dataset { inlet, distribution_pressure, distribution_flow, labels })
    }

    pub fn inlet(&self) -> &SensorSeries {
        &self.inlet
    }

    pub fn distribution_pressure(&self) -> &[SensorSeries] {
        &self.distribution_pressure
    }

    pub fn distribution_flow(&self) -> &[SensorSeries] {
        &self.distribution_flow
    }

    pub fn labels(&self) -> Option<&[AnomalyEvent]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inlet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inlet.is_empty()
    }

    pub fn start(&self) -> Timestamp {
        self.inlet.start()
    }

    pub fn cadence(&self) -> u32 {
        self.inlet.cadence()
    }

    pub fn n_points(&self) -> usize {
        self.distribution_pressure.len()
    }

    /// Every series in CSV column order: point pressures, point flows, inlet.
    pub fn channels(&self) -> impl Iterator<Item = &SensorSeries> {
        self.distribution_pressure.iter().chain(&self.distribution_flow).chain(std::iter::once(&self.inlet))
    }

    /// Looks up a series by column name.
    pub fn channel(&self, column: &str) -> Option<&SensorSeries> {
        self.channels().find(|s| s.column_name() == column)
    }

    /// Rebuilds the dataset with every series passed through `f`, in column order.
    pub fn map_channels<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(&SensorSeries) -> Result<SensorSeries>,
    {
        let pressures = self.distribution_pressure.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        let flows = self.distribution_flow.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        let inlet = f(&self.inlet)?;
        Dataset::new(inlet, pressures, flows, self.labels.clone())
    }

    pub fn with_labels(mut self, labels: Option<Vec<AnomalyEvent>>) -> Self {
        self.labels = labels;
        self
    }

    /// Restricts every series to `[from, to)`. Labels are shifted and clipped.
    pub fn slice(&self, from: usize, to: usize) -> Result<Dataset> {
        let ds = self.map_channels(|s| s.slice(from, to))?;
        let labels = self.labels.as_ref().map(|ls| {
            ls.iter()
                .filter(|l| l.end_index >= from && l.start_index < to)
                .map(|l| AnomalyEvent {
                    start_index: l.start_index.max(from) - from,
                    end_index: l.end_index.min(to - 1) - from,
                    ..l.clone()
                })
                .collect()
        });
        Ok(ds.with_labels(labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> Timestamp {
        Timestamp::parse("2024-01-01T00:00").unwrap()
    }

    #[test]
    fn out_of_bounds_values_flagged() {
        let s = SensorSeries::from_values("x", SensorKind::Pressure, ts(), vec![1.0, 17.0, -0.1, f64::NAN]);
        assert_eq!(s.valid(), &[true, false, false, false]);
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 0.0]);
        let f = SensorSeries::from_values("x", SensorKind::Flow, ts(), vec![100.0, -1.0]);
        assert_eq!(f.valid(), &[true, false]);
    }

    #[test]
    fn mask_length_checked() {
        assert!(SensorSeries::new("x", SensorKind::Flow, ts(), 15, vec![1.0], vec![]).is_err());
    }

    #[test]
    fn dataset_rejects_mismatched_ids() {
        let inlet = SensorSeries::from_values("inlet", SensorKind::InletPressure, ts(), vec![3.0; 4]);
        let p = SensorSeries::from_values("a", SensorKind::Pressure, ts(), vec![2.0; 4]);
        let f = SensorSeries::from_values("b", SensorKind::Flow, ts(), vec![2.0; 4]);
        assert!(Dataset::new(inlet.clone(), vec![p.clone()], vec![f], None).is_err());
        let short = SensorSeries::from_values("a", SensorKind::Flow, ts(), vec![2.0; 3]);
        assert!(Dataset::new(inlet, vec![p], vec![short], None).is_err());
    }

    #[test]
    fn slice_shifts_labels() {
        let inlet = SensorSeries::from_values("inlet", SensorKind::InletPressure, ts(), vec![3.0; 10]);
        let label = AnomalyEvent {
            sensor_id: INLET_COLUMN.into(),
            start_index: 3,
            end_index: 6,
            peak_score: 1.0,
            direction: Direction::Drop,
        };
        let ds = Dataset::new(inlet, vec![], vec![], Some(vec![label])).unwrap();
        let sub = ds.slice(5, 10).unwrap();
        assert_eq!(sub.len(), 5);
        assert_eq!(sub.start().to_string(), "2024-01-01T01:15");
        let l = &sub.labels().unwrap()[0];
        assert_eq!((l.start_index, l.end_index), (0, 1));
    }
}
