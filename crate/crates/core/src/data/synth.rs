//! Synthetic SCADA network: an inlet with daily and weekly cycles feeding
//! distribution points whose pressure is an affine function of the inlet
//! minus a local demand cycle.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::series::{AnomalyEvent, Dataset, Direction, SensorKind, SensorSeries};
use super::timestamp::{Timestamp, DEFAULT_CADENCE_MINUTES};
use crate::error::{Error, Result};

pub const SAMPLES_PER_DAY: usize = 96;
pub const SAMPLES_PER_WEEK: usize = 7 * SAMPLES_PER_DAY;

const INLET_BASE_BAR: f64 = 3.6;
const INLET_DAILY_BAR: f64 = 0.5;
const INLET_WEEKLY_BAR: f64 = 0.03;
const FLOW_NOISE_SCALE: f64 = 20.0;
/// Samples on each edge of an injected anomaly that ramp linearly to full magnitude.
pub const RAMP_SAMPLES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub days: usize,
    pub n_points: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { days: 60, n_points: 5, noise_std: 0.02, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    /// Column name of the affected series, e.g. `inlet_pressure`.
    pub sensor_id: String,
    pub start_index: usize,
    pub duration: usize,
    pub kind: Direction,
    pub magnitude: f64,
}

/// Daily demand shape over a phase in `[0, 1)`: low at night, morning and evening peaks.
fn demand_shape(phase: f64) -> f64 {
    0.7 - 0.5 * (TAU * phase).cos() + 0.2 * (2.0 * TAU * phase).sin()
}

fn daily_phase(t: usize) -> f64 {
    (t % SAMPLES_PER_DAY) as f64 / SAMPLES_PER_DAY as f64
}

fn weekly_phase(t: usize) -> f64 {
    (t % SAMPLES_PER_WEEK) as f64 / SAMPLES_PER_WEEK as f64
}

struct PointParams {
    gain: f64,
    offset: f64,
    demand_scale: f64,
    lag: usize,
    base_flow: f64,
}

/// Generates a labelled-free synthetic network; deterministic per seed.
pub fn generate_network(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.days < 2 {
        return Err(Error::invalid(format!("days must be >= 2, got {}", cfg.days)));
    }
    if cfg.n_points < 1 {
        return Err(Error::invalid("n_points must be >= 1"));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::invalid(format!("noise_std must be >= 0, got {}", cfg.noise_std)));
    }
    let n = cfg.days * SAMPLES_PER_DAY;
    let start = Timestamp::new(2024, 1, 1, 0, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let points: Vec<PointParams> = (0..cfg.n_points)
        .map(|_| PointParams {
            gain: rng.gen_range(0.55..0.85),
            offset: rng.gen_range(0.1..0.5),
            demand_scale: rng.gen_range(0.2..0.5),
            lag: rng.gen_range(0..8),
            base_flow: rng.gen_range(40.0..120.0),
        })
        .collect();

    let inlet: Vec<f64> = (0..n)
        .map(|t| {
            INLET_BASE_BAR
                + INLET_DAILY_BAR * demand_shape(daily_phase(t))
                + INLET_WEEKLY_BAR * (TAU * weekly_phase(t)).sin()
                + cfg.noise_std * noise.sample(&mut rng)
        })
        .collect();

    let mut pressures = Vec::with_capacity(cfg.n_points);
    let mut flows = Vec::with_capacity(cfg.n_points);
    for (i, p) in points.iter().enumerate() {
        let id = format!("p{}", i + 1);
        let mut pv = Vec::with_capacity(n);
        let mut fv = Vec::with_capacity(n);
        for (t, &inlet_t) in inlet.iter().enumerate() {
            let demand = demand_shape(daily_phase(t + p.lag));
            pv.push(p.gain * inlet_t + p.offset - p.demand_scale * demand + cfg.noise_std * noise.sample(&mut rng));
            let flow = p.base_flow * (0.3 + 0.7 * demand) + cfg.noise_std * FLOW_NOISE_SCALE * noise.sample(&mut rng);
            fv.push(flow.max(0.0));
        }
        pressures.push(SensorSeries::from_values(&id, SensorKind::Pressure, start, pv));
        flows.push(SensorSeries::from_values(&id, SensorKind::Flow, start, fv));
    }
    let inlet = SensorSeries::from_values("inlet", SensorKind::InletPressure, start, inlet);
    debug_assert_eq!(inlet.cadence(), DEFAULT_CADENCE_MINUTES);
    Dataset::new(inlet, pressures, flows, Some(Vec::new()))
}

/// Offset profile factor in `(0, 1]` for position `k` of an interval of `duration` samples.
fn ramp_factor(k: usize, duration: usize) -> f64 {
    let ramp = (RAMP_SAMPLES + 1) as f64;
    let rise = (k + 1) as f64 / ramp;
    let fall = (duration - k) as f64 / ramp;
    rise.min(fall).min(1.0)
}

/// Adds spikes or subtracts drops over each interval, ramping over the
/// first and last two samples, and records a ground-truth label per spec.
pub fn inject_anomalies(ds: &Dataset, specs: &[AnomalySpec]) -> Result<Dataset> {
    for (i, s) in specs.iter().enumerate() {
        let series =
            ds.channel(&s.sensor_id).ok_or_else(|| Error::invalid(format!("unknown sensor {:?}", s.sensor_id)))?;
        if s.duration == 0 || s.start_index + s.duration > series.len() {
            return Err(Error::invalid(format!(
                "anomaly [{}, {}) outside series of length {}",
                s.start_index,
                s.start_index + s.duration,
                series.len()
            )));
        }
        if !(s.magnitude > 0.0 && s.magnitude.is_finite()) {
            return Err(Error::invalid(format!("magnitude must be > 0, got {}", s.magnitude)));
        }
        for other in &specs[..i] {
            let overlap = other.sensor_id == s.sensor_id
                && other.start_index < s.start_index + s.duration
                && s.start_index < other.start_index + other.duration;
            if overlap {
                return Err(Error::invalid(format!(
                    "overlapping anomalies on {} at {} and {}",
                    s.sensor_id, other.start_index, s.start_index
                )));
            }
        }
    }

    let out = ds.map_channels(|series| {
        let column = series.column_name();
        let mine: Vec<&AnomalySpec> = specs.iter().filter(|s| s.sensor_id == column).collect();
        if mine.is_empty() {
            return Ok(series.clone());
        }
        let mut values = series.values().to_vec();
        let valid = series.valid().to_vec();
        for s in mine {
            let sign = match s.kind {
                Direction::Spike => 1.0,
                Direction::Drop => -1.0,
            };
            for k in 0..s.duration {
                let t = s.start_index + k;
                if valid[t] {
                    values[t] += sign * s.magnitude * ramp_factor(k, s.duration);
                }
            }
        }
        series.with_samples(values, valid)
    })?;

    let mut labels = ds.labels().map(<[AnomalyEvent]>::to_vec).unwrap_or_default();
    labels.extend(specs.iter().map(|s| AnomalyEvent {
        sensor_id: s.sensor_id.clone(),
        start_index: s.start_index,
        end_index: s.start_index + s.duration - 1,
        peak_score: s.magnitude,
        direction: s.kind,
    }));
    if specs.is_empty() {
        return Ok(out.with_labels(ds.labels().map(<[AnomalyEvent]>::to_vec)));
    }
    Ok(out.with_labels(Some(labels)))
}

/// Marks an i.i.d. Bernoulli(`rate`) subset of samples in every series as missing.
pub fn inject_missing(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("missing rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ds.map_channels(|series| {
        let mut values = series.values().to_vec();
        let mut valid = series.valid().to_vec();
        for (v, ok) in values.iter_mut().zip(valid.iter_mut()) {
            if rng.gen::<f64>() < rate {
                *ok = false;
                *v = 0.0;
            }
        }
        series.with_samples(values, valid)
    })
}

/// Placement rules for randomly planned anomalies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyPlan {
    pub count: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub min_magnitude: f64,
    pub max_magnitude: f64,
    /// Samples at the start of the series kept anomaly-free.
    pub warmup: usize,
}

impl Default for AnomalyPlan {
    fn default() -> Self {
        AnomalyPlan {
            count: 20,
            min_duration: 8,
            max_duration: 24,
            min_magnitude: 0.3,
            max_magnitude: 0.6,
            warmup: 2 * SAMPLES_PER_DAY,
        }
    }
}

/// Spreads `plan.count` anomalies over `sensor_id`, one per equal-width slot
/// after the warmup, with random duration, magnitude and direction.
pub fn plan_anomalies(sensor_id: &str, series_len: usize, plan: &AnomalyPlan, seed: u64) -> Result<Vec<AnomalySpec>> {
    if plan.count == 0 {
        return Ok(Vec::new());
    }
    if plan.min_duration == 0 || plan.min_duration > plan.max_duration {
        return Err(Error::invalid("anomaly durations must satisfy 0 < min <= max"));
    }
    if !(plan.min_magnitude > 0.0 && plan.min_magnitude <= plan.max_magnitude) {
        return Err(Error::invalid("anomaly magnitudes must satisfy 0 < min <= max"));
    }
    let span = series_len.saturating_sub(plan.warmup);
    let slot = span / plan.count;
    if slot < 2 * plan.max_duration {
        return Err(Error::invalid(format!(
            "{} anomalies of up to {} samples do not fit in {span} samples",
            plan.count, plan.max_duration
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..plan.count)
        .map(|i| {
            let duration = rng.gen_range(plan.min_duration..=plan.max_duration);
            let magnitude = if plan.min_magnitude == plan.max_magnitude {
                plan.min_magnitude
            } else {
                rng.gen_range(plan.min_magnitude..plan.max_magnitude)
            };
            let kind = if rng.gen_bool(0.5) { Direction::Spike } else { Direction::Drop };
            let slot_start = plan.warmup + i * slot;
            let jitter = rng.gen_range(0..=(slot - duration) / 2);
            AnomalySpec {
                sensor_id: sensor_id.to_string(),
                start_index: slot_start + slot / 4 + jitter / 2,
                duration,
                kind,
                magnitude,
            }
        })
        .collect();
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::series::INLET_COLUMN;

    fn small() -> SynthConfig {
        SynthConfig { days: 14, n_points: 3, noise_std: 0.02, seed: 7 }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_network(&small()).unwrap();
        let b = generate_network(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_network(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sixty_days_is_5760_samples() {
        let ds = generate_network(&SynthConfig { days: 60, ..small() }).unwrap();
        assert!(ds.channels().all(|s| s.len() == 5760));
        assert_eq!(ds.labels(), Some(&[][..]));
    }

    #[test]
    fn noiseless_is_weekly_periodic() {
        let ds = generate_network(&SynthConfig { noise_std: 0.0, ..small() }).unwrap();
        for s in ds.channels() {
            let v = s.values();
            for t in 0..v.len() - SAMPLES_PER_WEEK {
                assert_eq!(v[t].to_bits(), v[t + SAMPLES_PER_WEEK].to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_network(&SynthConfig { days: 1, ..small() }).is_err());
        assert!(generate_network(&SynthConfig { n_points: 0, ..small() }).is_err());
        assert!(generate_network(&SynthConfig { noise_std: -1.0, ..small() }).is_err());
    }

    #[test]
    fn ramp_profile() {
        let f: Vec<f64> = (0..6).map(|k| ramp_factor(k, 6)).collect();
        assert_eq!(f, vec![1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn empty_spec_list_is_identity() {
        let ds = generate_network(&small()).unwrap();
        assert_eq!(inject_anomalies(&ds, &[]).unwrap(), ds);
    }

    #[test]
    fn drop_lowers_interval_mean() {
        let ds = generate_network(&small()).unwrap();
        let spec = AnomalySpec {
            sensor_id: INLET_COLUMN.into(),
            start_index: 100,
            duration: 20,
            kind: Direction::Drop,
            magnitude: 0.5,
        };
        let out = inject_anomalies(&ds, &[spec]).unwrap();
        let before: f64 = ds.inlet().values()[102..118].iter().sum::<f64>() / 16.0;
        let after: f64 = out.inlet().values()[102..118].iter().sum::<f64>() / 16.0;
        assert!((before - after - 0.5).abs() < 1e-9);
        for t in (0..100).chain(120..ds.len()) {
            assert_eq!(ds.inlet().values()[t].to_bits(), out.inlet().values()[t].to_bits());
        }
        let label = &out.labels().unwrap()[0];
        assert_eq!((label.start_index, label.end_index), (100, 119));
        assert_eq!(label.direction, Direction::Drop);
    }

    #[test]
    fn anomaly_errors() {
        let ds = generate_network(&small()).unwrap();
        let mk = |start, duration| AnomalySpec {
            sensor_id: INLET_COLUMN.into(),
            start_index: start,
            duration,
            kind: Direction::Spike,
            magnitude: 0.3,
        };
        assert!(inject_anomalies(&ds, &[mk(ds.len() - 5, 10)]).is_err());
        assert!(inject_anomalies(&ds, &[mk(10, 10), mk(15, 10)]).is_err());
        let mut bad = mk(10, 5);
        bad.magnitude = 0.0;
        assert!(inject_anomalies(&ds, &[bad]).is_err());
        let mut unknown = mk(10, 5);
        unknown.sensor_id = "zz_pressure".into();
        assert!(inject_anomalies(&ds, &[unknown]).is_err());
    }

    #[test]
    fn missing_rate_zero_is_identity_and_seeded() {
        let ds = generate_network(&small()).unwrap();
        assert_eq!(inject_missing(&ds, 0.0, 1).unwrap(), ds);
        let a = inject_missing(&ds, 0.2, 3).unwrap();
        let b = inject_missing(&ds, 0.2, 3).unwrap();
        assert_eq!(a, b);
        assert!(inject_missing(&ds, 1.0, 3).is_err());
    }

    #[test]
    fn missing_count_within_binomial_bounds() {
        // 10000 inlet samples at rate 0.1: mean 1000, sd 30, so [900, 1100] is over 3 sd.
        let ds = generate_network(&SynthConfig { days: 105, n_points: 1, noise_std: 0.0, seed: 1 })
            .unwrap()
            .slice(0, 10_000)
            .unwrap();
        for seed in 0..20 {
            let out = inject_missing(&ds, 0.1, seed).unwrap();
            let count = out.inlet().invalid_count();
            assert!((900..=1100).contains(&count), "seed {seed}: {count}");
        }
    }

    #[test]
    fn planned_anomalies_fit_and_do_not_overlap() {
        let specs = plan_anomalies(INLET_COLUMN, 5760, &AnomalyPlan::default(), 5).unwrap();
        assert_eq!(specs.len(), 20);
        for w in specs.windows(2) {
            assert!(w[0].start_index + w[0].duration < w[1].start_index);
        }
        assert!(specs.last().map_or(0, |s| s.start_index + s.duration) <= 5760);
        let ds = generate_network(&SynthConfig { days: 60, ..small() }).unwrap();
        assert_eq!(inject_anomalies(&ds, &specs).unwrap().labels().unwrap().len(), 20);
    }
}
