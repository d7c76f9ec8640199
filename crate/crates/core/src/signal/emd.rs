//! Empirical mode decomposition by envelope-mean sifting.

use serde::{Deserialize, Serialize};

use super::spline::NaturalSpline;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiftConfig {
    pub max_iter: usize,
    /// Upper bound on `Σm² / Σh²` for an accepted IMF.
    pub sd_threshold: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        SiftConfig { max_iter: 50, sd_threshold: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmdConfig {
    pub max_imfs: usize,
    pub sift: SiftConfig,
}

impl Default for EmdConfig {
    fn default() -> Self {
        EmdConfig { max_imfs: 10, sift: SiftConfig::default() }
    }
}

/// Intrinsic mode functions plus residual; `Σ imfs + residual` reproduces the input.
#[derive(Clone, Debug, PartialEq)]
pub struct ImfSet {
    pub imfs: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    pub source_length: usize,
    pub sift_counts: Vec<usize>,
    /// Whether sifting met both IMF criteria (rather than stopping at `max_iter`).
    pub converged: Vec<bool>,
}

impl ImfSet {
    pub fn n_imfs(&self) -> usize {
        self.imfs.len()
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residual.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopePair {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvelopeSide {
    Upper,
    Lower,
}

/// Interior local maxima and minima. A flat run bordered on both sides by
/// lower (higher) values counts once, at its midpoint rounded down. Endpoints
/// are never extrema.
pub fn find_extrema(series: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = series.len();
    if n < 3 {
        return Err(Error::Signal(format!("extrema need length >= 3, got {n}")));
    }
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        let prev = series[i - 1];
        let here = series[i];
        if here == prev {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && series[j + 1] == here {
            j += 1;
        }
        if j + 1 < n {
            let next = series[j + 1];
            if here > prev && here > next {
                maxima.push((i + j) / 2);
            } else if here < prev && here < next {
                minima.push((i + j) / 2);
            }
        }
        i = j + 1;
    }
    Ok((maxima, minima))
}

fn zero_crossings(series: &[f64]) -> usize {
    series.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count()
}

/// Natural cubic spline through the extrema of one side, evaluated at every
/// sample. The first and last two extrema are mirrored across the series
/// endpoints to tame end swings.
pub fn spline_envelope(series: &[f64], extrema: &[usize], side: EnvelopeSide) -> Result<Vec<f64>> {
    let n = series.len();
    if extrema.is_empty() {
        return Err(Error::Signal("fewer than 2 envelope knots".into()));
    }
    if extrema.iter().any(|&e| e == 0 || e >= n - 1) || extrema.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Signal("envelope knots must be increasing interior indices".into()));
    }
    let wrong_side = extrema.iter().any(|&e| {
        let (prev, here, next) = (series[e - 1], series[e], series[e + 1]);
        match side {
            EnvelopeSide::Upper => here < prev || here < next,
            EnvelopeSide::Lower => here > prev || here > next,
        }
    });
    if wrong_side {
        return Err(Error::Signal(format!("knots are not {side:?} extrema")));
    }
    let last = (n - 1) as f64;
    let mut xs = Vec::with_capacity(extrema.len() + 4);
    let mut ys = Vec::with_capacity(extrema.len() + 4);
    for &e in extrema.iter().take(2).rev() {
        xs.push(-(e as f64));
        ys.push(series[e]);
    }
    for &e in extrema {
        xs.push(e as f64);
        ys.push(series[e]);
    }
    for &e in extrema.iter().rev().take(2) {
        xs.push(2.0 * last - e as f64);
        ys.push(series[e]);
    }
    if xs.len() < 2 {
        return Err(Error::Signal("fewer than 2 envelope knots".into()));
    }
    Ok(NaturalSpline::fit(&xs, &ys)?.eval_grid(n))
}

pub fn envelopes(series: &[f64]) -> Result<EnvelopePair> {
    let (maxima, minima) = find_extrema(series)?;
    envelopes_from(series, &maxima, &minima)
}

fn envelopes_from(series: &[f64], maxima: &[usize], minima: &[usize]) -> Result<EnvelopePair> {
    let upper = spline_envelope(series, maxima, EnvelopeSide::Upper)?;
    let lower = spline_envelope(series, minima, EnvelopeSide::Lower)?;
    let mean = upper.iter().zip(&lower).map(|(u, l)| (u + l) / 2.0).collect();
    Ok(EnvelopePair { upper, lower, mean })
}

fn has_two_of_each(maxima: &[usize], minima: &[usize]) -> bool {
    maxima.len() >= 2 && minima.len() >= 2
}

/// The two IMF criteria as applied during sifting.
pub fn imf_criteria_hold(candidate: &[f64], envelope_mean: &[f64], sd_threshold: f64) -> Result<bool> {
    let (maxima, minima) = find_extrema(candidate)?;
    let extrema = (maxima.len() + minima.len()) as i64;
    let crossings = zero_crossings(candidate) as i64;
    if (extrema - crossings).abs() > 1 {
        return Ok(false);
    }
    let energy: f64 = candidate.iter().map(|v| v * v).sum();
    let mean_energy: f64 = envelope_mean.iter().map(|v| v * v).sum();
    Ok(energy == 0.0 || mean_energy / energy < sd_threshold)
}

/// Extracts one IMF candidate; returns it with the number of subtractions made
/// and whether both criteria were met.
pub fn sift(series: &[f64], cfg: &SiftConfig) -> Result<(Vec<f64>, usize, bool)> {
    let (maxima, minima) = find_extrema(series)?;
    if !has_two_of_each(&maxima, &minima) {
        return Err(Error::Signal(format!(
            "sifting needs >= 2 maxima and >= 2 minima, found {} and {}",
            maxima.len(),
            minima.len()
        )));
    }
    let env = envelopes_from(series, &maxima, &minima)?;
    let mut h: Vec<f64> = series.iter().zip(&env.mean).map(|(y, m)| y - m).collect();
    let mut iterations = 1;
    loop {
        let (maxima, minima) = find_extrema(&h)?;
        if !has_two_of_each(&maxima, &minima) {
            return Ok((h, iterations, false));
        }
        let mean = envelopes_from(&h, &maxima, &minima)?.mean;
        if imf_criteria_hold(&h, &mean, cfg.sd_threshold)? {
            return Ok((h, iterations, true));
        }
        if iterations >= cfg.max_iter {
            return Ok((h, iterations, false));
        }
        for (v, m) in h.iter_mut().zip(&mean) {
            *v -= m;
        }
        iterations += 1;
    }
}

/// Minimum series length accepted by [`decompose`].
pub const MIN_DECOMPOSE_LEN: usize = 8;

pub fn decompose(series: &[f64], cfg: &EmdConfig) -> Result<ImfSet> {
    let n = series.len();
    if n < MIN_DECOMPOSE_LEN {
        return Err(Error::Signal(format!("decompose needs length >= {MIN_DECOMPOSE_LEN}, got {n}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Signal("decompose input contains non-finite values".into()));
    }
    let mut residual = series.to_vec();
    let mut imfs = Vec::new();
    let mut sift_counts = Vec::new();
    let mut converged = Vec::new();
    while imfs.len() < cfg.max_imfs {
        let (maxima, minima) = find_extrema(&residual)?;
        if !has_two_of_each(&maxima, &minima) {
            break;
        }
        let (imf, iterations, ok) = sift(&residual, &cfg.sift)?;
        for (r, d) in residual.iter_mut().zip(&imf) {
            *r -= d;
        }
        imfs.push(imf);
        sift_counts.push(iterations);
        converged.push(ok);
    }
    Ok(ImfSet { imfs, residual, source_length: n, sift_counts, converged })
}
