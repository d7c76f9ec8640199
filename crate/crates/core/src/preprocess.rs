//! Min-Max scaling with persisted parameters, one-hot calendar encoding and
//! lag windowing of aligned channels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TimeFeatures;
use crate::error::{Error, Result};

pub const ONE_HOT_DAYS: usize = 31;
pub const ONE_HOT_HOURS: usize = 24;
pub const ONE_HOT_SLOTS: usize = 4;
pub const ONE_HOT_LEN: usize = ONE_HOT_DAYS + ONE_HOT_HOURS + ONE_HOT_SLOTS;

const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinMaxEntry {
    pub name: String,
    pub x_min: f64,
    pub x_max: f64,
    pub degenerate: bool,
}

impl MinMaxEntry {
    fn check(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite()) {
            return Err(Error::Preprocess(format!("{}: non-finite bounds", self.name)));
        }
        if self.x_min > self.x_max {
            return Err(Error::Preprocess(format!("{}: x_min {} exceeds x_max {}", self.name, self.x_min, self.x_max)));
        }
        if self.degenerate != (self.x_min == self.x_max) {
            return Err(Error::Preprocess(format!("{}: degenerate flag disagrees with bounds", self.name)));
        }
        Ok(())
    }

    /// `(x - x_min) / (x_max - x_min)`; `0.0` for a degenerate entry. Not clamped.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (x - self.x_min) / (self.x_max - self.x_min)
        }
    }

    /// Inverse of [`normalize`](Self::normalize); a degenerate entry maps back to `x_min`.
    pub fn denormalize(&self, x_norm: f64) -> f64 {
        if self.degenerate {
            self.x_min
        } else {
            x_norm * (self.x_max - self.x_min) + self.x_min
        }
    }

    pub fn normalize_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.normalize(x)).collect()
    }
}

pub fn fit_minmax(values: &[f64], name: &str) -> Result<MinMaxEntry> {
    if values.is_empty() {
        return Err(Error::Preprocess(format!("{name}: cannot fit an empty sequence")));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        if !v.is_finite() {
            return Err(Error::Preprocess(format!("{name}: non-finite value {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(MinMaxEntry { name: name.to_string(), x_min: lo, x_max: hi, degenerate: lo == hi })
}

pub fn normalize(x: f64, p: &MinMaxEntry) -> f64 {
    p.normalize(x)
}

pub fn denormalize(x_norm: f64, p: &MinMaxEntry) -> f64 {
    p.denormalize(x_norm)
}

/// Named collection of Min-Max entries, persisted as versioned JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinMaxParams {
    pub features: Vec<MinMaxEntry>,
    pub version: u32,
}

impl MinMaxParams {
    pub fn new(features: Vec<MinMaxEntry>) -> Self {
        MinMaxParams { features, version: PARAMS_VERSION }
    }

    pub fn get(&self, name: &str) -> Result<&MinMaxEntry> {
        self.features
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Preprocess(format!("no normalization entry named {name:?}")))
    }

    pub fn push(&mut self, entry: MinMaxEntry) {
        self.features.push(entry);
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: MinMaxParams = serde_json::from_str(text)?;
        if p.version != PARAMS_VERSION {
            return Err(Error::Preprocess(format!("unsupported params version {}", p.version)));
        }
        for e in &p.features {
            e.check()?;
        }
        Ok(p)
    }
}

pub fn save_params(p: &MinMaxParams, path: &Path) -> Result<()> {
    fs::write(path, p.to_json()?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<MinMaxParams> {
    MinMaxParams::from_json(&fs::read_to_string(path)?)
}

/// 59-element encoding: 31 day slots, 24 hour slots, 4 quarter-hour slots.
pub fn one_hot_time(feats: TimeFeatures) -> Result<[f64; ONE_HOT_LEN]> {
    let TimeFeatures { day_of_month, hour, minute_slot } = feats;
    if !(1..=31).contains(&day_of_month) || hour > 23 || minute_slot > 3 {
        return Err(Error::Preprocess(format!(
            "time features out of range: day {day_of_month}, hour {hour}, slot {minute_slot}"
        )));
    }
    let mut v = [0.0; ONE_HOT_LEN];
    v[usize::from(day_of_month) - 1] = 1.0;
    v[ONE_HOT_DAYS + usize::from(hour)] = 1.0;
    v[ONE_HOT_DAYS + ONE_HOT_HOURS + usize::from(minute_slot)] = 1.0;
    Ok(v)
}

/// Lag windows over aligned channels.
///
/// `inputs` is `[sample][lag][channel]` flattened row-major; sample `s` covers
/// absolute times `s..s + lookback` and its target is at `s + lookback + horizon - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedSet {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub n_samples: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub n_channels: usize,
}

impl SupervisedSet {
    pub fn input(&self, sample: usize, lag: usize, channel: usize) -> f64 {
        self.inputs[(sample * self.lookback + lag) * self.n_channels + channel]
    }

    pub fn window(&self, sample: usize) -> &[f64] {
        let w = self.lookback * self.n_channels;
        &self.inputs[sample * w..(sample + 1) * w]
    }
}

pub fn series_to_supervised(
    channels: &[&[f64]],
    lookback: usize,
    horizon: usize,
    target_channel: usize,
) -> Result<SupervisedSet> {
    if channels.is_empty() {
        return Err(Error::Preprocess("no channels".into()));
    }
    if lookback == 0 || horizon == 0 {
        return Err(Error::Preprocess("lookback and horizon must be >= 1".into()));
    }
    if target_channel >= channels.len() {
        return Err(Error::Preprocess(format!("target channel {target_channel} out of {} channels", channels.len())));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::Preprocess("channels differ in length".into()));
    }
    if len < lookback + horizon {
        return Err(Error::Preprocess(format!(
            "series of length {len} is shorter than lookback {lookback} + horizon {horizon}"
        )));
    }
    let n_samples = len - lookback - horizon + 1;
    let n_channels = channels.len();
    let mut inputs = Vec::with_capacity(n_samples * lookback * n_channels);
    for s in 0..n_samples {
        for t in s..s + lookback {
            inputs.extend(channels.iter().map(|c| c[t]));
        }
    }
    let target = channels[target_channel];
    let targets = (0..n_samples).map(|s| target[s + lookback + horizon - 1]).collect();
    Ok(SupervisedSet { inputs, targets, n_samples, lookback, horizon, n_channels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_examples() {
        let p = fit_minmax(&[2.0, 4.0, 6.0], "a").unwrap();
        assert_eq!((p.x_min, p.x_max, p.degenerate), (2.0, 6.0, false));
        let p = fit_minmax(&[5.0, 5.0, 5.0], "a").unwrap();
        assert_eq!((p.x_min, p.x_max, p.degenerate), (5.0, 5.0, true));
        let p = fit_minmax(&[-1.0, 0.0, 3.0], "a").unwrap();
        assert_eq!((p.x_min, p.x_max), (-1.0, 3.0));
        assert!(fit_minmax(&[], "a").is_err());
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let p = fit_minmax(&[2.0, 6.0], "a").unwrap();
        assert_eq!(normalize(2.0, &p), 0.0);
        assert_eq!(normalize(6.0, &p), 1.0);
        assert_eq!(normalize(4.0, &p), 0.5);
        // unseen values are not clamped
        assert_eq!(normalize(8.0, &p), 1.5);
        let d = fit_minmax(&[5.0], "d").unwrap();
        assert_eq!(normalize(7.0, &d), 0.0);
    }

    #[test]
    fn one_hot_positions() {
        let ones = |d, h, m| -> Vec<usize> {
            let v = one_hot_time(TimeFeatures { day_of_month: d, hour: h, minute_slot: m }).unwrap();
            v.iter().enumerate().filter(|(_, x)| **x == 1.0).map(|(i, _)| i).collect()
        };
        assert_eq!(ones(1, 0, 0), vec![0, 31, 55]);
        assert_eq!(ones(7, 23, 3), vec![6, 54, 58]);
        for bad in [(0, 0, 0), (32, 0, 0), (1, 24, 0), (1, 0, 4)] {
            let f = TimeFeatures { day_of_month: bad.0, hour: bad.1, minute_slot: bad.2 };
            assert!(one_hot_time(f).is_err());
        }
    }

    #[test]
    fn windows_small_example() {
        let c = [1.0, 2.0, 3.0, 4.0, 5.0];
        let set = series_to_supervised(&[&c], 2, 1, 0).unwrap();
        assert_eq!(set.n_samples, 3);
        assert_eq!(set.inputs, vec![1.0, 2.0, 2.0, 3.0, 3.0, 4.0]);
        assert_eq!(set.targets, vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn window_counts() {
        let c = vec![0.0; 5760];
        assert_eq!(series_to_supervised(&[&c], 96, 1, 0).unwrap().n_samples, 5664);
        let short = vec![0.0; 96];
        assert!(series_to_supervised(&[&short], 96, 1, 0).is_err());
    }

    #[test]
    fn channels_stack_in_order() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        let set = series_to_supervised(&[&a, &b], 2, 2, 1).unwrap();
        assert_eq!(set.n_samples, 1);
        assert_eq!(set.window(0), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(set.targets, vec![40.0]);
    }

    #[test]
    fn params_schema_is_strict() {
        let ok = r#"{"features":[{"name":"a","x_min":1.0,"x_max":2.0,"degenerate":false}],"version":1}"#;
        assert!(MinMaxParams::from_json(ok).is_ok());
        let inverted = r#"{"features":[{"name":"a","x_min":3.0,"x_max":2.0,"degenerate":false}],"version":1}"#;
        assert!(MinMaxParams::from_json(inverted).is_err());
        let missing = r#"{"features":[{"name":"a","x_min":1.0,"x_max":2.0}],"version":1}"#;
        assert!(MinMaxParams::from_json(missing).is_err());
        let version = r#"{"features":[],"version":2}"#;
        assert!(MinMaxParams::from_json(version).is_err());
        assert!(MinMaxParams::from_json("{not json").is_err());
    }

    #[test]
    fn save_load_save_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("minmax.json");
        let p =
            MinMaxParams::new(vec![fit_minmax(&[0.1, 0.7, 1.0 / 3.0], "x").unwrap(), fit_minmax(&[2.0], "y").unwrap()]);
        save_params(&p, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(back, p);
        save_params(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }
}
