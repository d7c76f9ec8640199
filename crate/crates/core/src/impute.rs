//! Random-forest regression on calendar features for filling missing readings.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SensorSeries, Timestamp};
use crate::error::{Error, Result};

const N_FEATURES: usize = 3;
/// ⌈√3⌉ candidate features examined per split.
const FEATURES_PER_SPLIT: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeNode {
    Split { feature_index: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { mean_value: f64 },
}

impl TreeNode {
    pub fn predict(&self, features: &[f64; N_FEATURES]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { mean_value } => return *mean_value,
                TreeNode::Split { feature_index, threshold, left, right } => {
                    node = if features[*feature_index] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 50, max_depth: 8, min_leaf: 5, bootstrap: true, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_layout: Vec<String>,
    pub seed: u64,
}

fn feature_layout() -> Vec<String> {
    ["day_of_month", "hour", "minute_slot"].iter().map(|s| s.to_string()).collect()
}

impl ForestModel {
    /// Builds a forest from explicit trees.
    pub fn from_trees(trees: Vec<TreeNode>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Impute("a forest needs at least one tree".into()));
        }
        let max_depth = trees.iter().map(TreeNode::depth).max().unwrap_or(0);
        Ok(ForestModel {
            n_trees: trees.len(),
            trees,
            max_depth,
            min_leaf: 1,
            feature_layout: feature_layout(),
            seed: 0,
        })
    }

    pub fn predict_features(&self, features: &[f64; N_FEATURES]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        sum / self.trees.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(text)?;
        if model.trees.is_empty() || model.trees.len() != model.n_trees {
            return Err(Error::Impute(format!(
                "forest declares {} trees but holds {}",
                model.n_trees,
                model.trees.len()
            )));
        }
        if model.feature_layout != feature_layout() {
            return Err(Error::Impute(format!("unsupported feature layout {:?}", model.feature_layout)));
        }
        Ok(model)
    }
}

struct Sample {
    features: [f64; N_FEATURES],
    target: f64,
}

fn training_samples(series: &SensorSeries) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, (&value, &ok)) in series.values().iter().zip(series.valid()).enumerate() {
        if ok {
            out.push(Sample { features: series.timestamp(i).time_features()?.as_array(), target: value });
        }
    }
    Ok(out)
}

/// Fits a regression forest on the valid samples of `series`.
///
/// Tree `i` draws from a ChaCha stream derived from `(seed, i)`, so the result
/// does not depend on the order in which trees are fitted.
pub fn fit_forest(series: &SensorSeries, cfg: &ForestConfig) -> Result<ForestModel> {
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::Impute("n_trees and min_leaf must be >= 1".into()));
    }
    let samples = training_samples(series)?;
    if samples.len() < 2 * cfg.min_leaf {
        return Err(Error::Impute(format!(
            "{} valid samples in {}; need at least {}",
            samples.len(),
            series.column_name(),
            2 * cfg.min_leaf
        )));
    }
    let trees = (0..cfg.n_trees)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..samples.len()).map(|_| rng.gen_range(0..samples.len())).collect()
            } else {
                (0..samples.len()).collect()
            };
            let mut builder = TreeBuilder { samples: &samples, max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, rng };
            builder.build(idx, 0)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_trees: cfg.n_trees,
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        feature_layout: feature_layout(),
        seed: cfg.seed,
    })
}

struct TreeBuilder<'a> {
    samples: &'a [Sample],
    max_depth: usize,
    min_leaf: usize,
    rng: ChaCha8Rng,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    sse: f64,
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let sum: f64 = idx.iter().map(|&i| self.samples[i].target).sum();
        TreeNode::Leaf { mean_value: sum / idx.len() as f64 }
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> TreeNode {
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return self.leaf(&idx);
        }
        let candidates = sample(&mut self.rng, N_FEATURES, FEATURES_PER_SPLIT);
        let mut best: Option<BestSplit> = None;
        for feature in candidates.iter() {
            if let Some(split) = self.best_split(&idx, feature) {
                if best.as_ref().map_or(true, |b| split.sse < b.sse) {
                    best = Some(split);
                }
            }
        }
        let Some(best) = best else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.samples[i].features[best.feature] <= best.threshold);
        TreeNode::Split {
            feature_index: best.feature,
            threshold: best.threshold,
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }

    /// Lowest post-split SSE over thresholds between distinct values of `feature`.
    /// Returns `None` when no split reduces the parent SSE.
    fn best_split(&self, idx: &[usize], feature: usize) -> Option<BestSplit> {
        let mut order: Vec<(f64, f64)> =
            idx.iter().map(|&i| (self.samples[i].features[feature], self.samples[i].target)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = order.len();
        let total: f64 = order.iter().map(|p| p.1).sum();
        let total_sq: f64 = order.iter().map(|p| p.1 * p.1).sum();
        let parent_sse = total_sq - total * total / n as f64;

        let mut best: Option<BestSplit> = None;
        let (mut left_sum, mut left_sq) = (0.0, 0.0);
        for k in 0..n - 1 {
            left_sum += order[k].1;
            left_sq += order[k].1 * order[k].1;
            let n_left = k + 1;
            let n_right = n - n_left;
            if order[k].0 == order[k + 1].0 || n_left < self.min_leaf || n_right < self.min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let sse =
                (left_sq - left_sum * left_sum / n_left as f64) + (right_sq - right_sum * right_sum / n_right as f64);
            if sse < parent_sse - 1e-12 * parent_sse.abs().max(1e-300) && best.as_ref().map_or(true, |b| sse < b.sse) {
                best = Some(BestSplit { feature, threshold: 0.5 * (order[k].0 + order[k + 1].0), sse });
            }
        }
        best
    }
}

/// Mean of the per-tree predictions for the calendar features of `ts`.
pub fn predict_pressure(model: &ForestModel, ts: Timestamp) -> Result<f64> {
    Ok(model.predict_features(&ts.time_features()?.as_array()))
}

/// Replaces every invalid sample with the forest prediction; valid samples are untouched.
pub fn impute_series(series: &SensorSeries, model: &ForestModel) -> Result<SensorSeries> {
    if series.all_valid() {
        return Ok(series.clone());
    }
    let mut values = series.values().to_vec();
    for (i, v) in values.iter_mut().enumerate() {
        if !series.valid()[i] {
            *v = predict_pressure(model, series.timestamp(i))?;
        }
    }
    let out = series.with_samples(values, vec![true; series.len()])?;
    if !out.all_valid() {
        return Err(Error::Impute(format!("forest produced out-of-bounds values for {}", series.column_name())));
    }
    Ok(out)
}

/// Imputes every channel of `ds` that has invalid samples. Returns the
/// repaired dataset and the forest fitted for each such channel, by column name.
pub fn impute_dataset(ds: &Dataset, cfg: &ForestConfig) -> Result<(Dataset, Vec<(String, ForestModel)>)> {
    let mut forests = Vec::new();
    let out = ds.map_channels(|s| {
        if s.all_valid() {
            return Ok(s.clone());
        }
        let model = fit_forest(s, cfg)?;
        let repaired = impute_series(s, &model)?;
        forests.push((s.column_name(), model));
        Ok(repaired)
    })?;
    Ok((out, forests))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SensorKind, Timestamp};

    fn start() -> Timestamp {
        Timestamp::parse("2024-01-01T00:00").unwrap()
    }

    fn step_series(days: usize) -> SensorSeries {
        let values = (0..days * 96).map(|t| if (t % 96) / 4 < 12 { 2.0 } else { 3.0 }).collect();
        SensorSeries::from_values("a", SensorKind::Pressure, start(), values)
    }

    #[test]
    fn learns_hour_step() {
        let forest = fit_forest(&step_series(14), &ForestConfig::default()).unwrap();
        // held-out grid: every quarter hour of a day not in the training range
        let probe = Timestamp::parse("2024-02-20T00:00").unwrap();
        for k in 0..96 {
            let ts = probe.add_minutes(15 * k);
            let p = predict_pressure(&forest, ts).unwrap();
            let expected = if k / 4 < 12 { 2.0 } else { 3.0 };
            assert!((p - expected).abs() < 0.01, "slot {k}: {p}");
        }
    }

    #[test]
    fn constant_targets_predict_exactly() {
        let s = SensorSeries::from_values("a", SensorKind::Pressure, start(), vec![5.0; 200]);
        let forest = fit_forest(&s, &ForestConfig { n_trees: 5, ..Default::default() }).unwrap();
        for k in 0..200 {
            assert_eq!(predict_pressure(&forest, start().add_minutes(15 * k)).unwrap(), 5.0);
        }
    }

    #[test]
    fn too_few_valid_samples() {
        let s = SensorSeries::new(
            "a",
            SensorKind::Pressure,
            start(),
            15,
            vec![1.0, 2.0, 3.0, 0.0],
            vec![true, true, true, false],
        )
        .unwrap();
        assert!(matches!(fit_forest(&s, &ForestConfig::default()), Err(Error::Impute(_))));
    }

    #[test]
    fn single_leaf_and_two_tree_means() {
        let one = ForestModel::from_trees(vec![TreeNode::Leaf { mean_value: 4.2 }]).unwrap();
        assert_eq!(predict_pressure(&one, start()).unwrap(), 4.2);
        let two = ForestModel::from_trees(vec![TreeNode::Leaf { mean_value: 4.0 }, TreeNode::Leaf { mean_value: 5.0 }])
            .unwrap();
        assert_eq!(predict_pressure(&two, start().add_minutes(600)).unwrap(), 4.5);
    }

    #[test]
    fn impute_replaces_only_invalid() {
        let one = ForestModel::from_trees(vec![TreeNode::Leaf { mean_value: 4.2 }]).unwrap();
        let s = SensorSeries::new(
            "a",
            SensorKind::Pressure,
            start(),
            15,
            vec![3.0; 30],
            (0..30).map(|i| i != 24).collect(),
        )
        .unwrap();
        assert_eq!(s.timestamp(24).to_string(), "2024-01-01T06:00");
        let out = impute_series(&s, &one).unwrap();
        assert!(out.all_valid());
        assert_eq!(out.values()[24], 4.2);
        assert_eq!(out.values()[23], 3.0);

        let clean = SensorSeries::from_values("a", SensorKind::Pressure, start(), vec![3.0; 30]);
        assert_eq!(impute_series(&clean, &one).unwrap(), clean);
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let forest = fit_forest(&step_series(3), &ForestConfig { n_trees: 3, ..Default::default() }).unwrap();
        let a = forest.to_json().unwrap();
        let back = ForestModel::from_json(&a).unwrap();
        assert_eq!(back, forest);
        assert_eq!(back.to_json().unwrap(), a);
        assert!(a.contains("\"feature_index\"") && a.contains("\"mean_value\""));
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let cfg = ForestConfig { n_trees: 4, seed: 11, ..Default::default() };
        let s = step_series(3);
        assert_eq!(fit_forest(&s, &cfg).unwrap(), fit_forest(&s, &cfg).unwrap());
    }
}
