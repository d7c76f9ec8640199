//! Fixed-height IMF matrices: EMD output reconciled to `C` channels and
//! Min-Max normalized per channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{fit_minmax, MinMaxEntry, MinMaxParams};
use crate::signal::ImfSet;

pub const DEFAULT_IMF_CHANNELS: usize = 8;

/// How EMD output was forced into the configured channel count.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddingReport {
    /// Zero-based channels filled with zeros because EMD produced too few IMFs.
    pub padded: Vec<usize>,
    /// Zero-based IMF indices summed into channel `C − 2`.
    pub merged: Vec<usize>,
}

impl PaddingReport {
    pub fn is_exact(&self) -> bool {
        self.padded.is_empty() && self.merged.is_empty()
    }
}

/// Channel names used for Min-Max entries: `imf_1 .. imf_{C-1}`, `residual`.
pub fn channel_names(channels: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..channels).map(|i| format!("imf_{i}")).collect();
    names.push("residual".into());
    names
}

/// Raw (unnormalized) channels: IMFs in order, surplus IMFs summed into the
/// last IMF slot, missing ones zero, residual last.
pub fn reconcile_channels(imfs: &ImfSet, channels: usize) -> Result<(Vec<Vec<f64>>, PaddingReport)> {
    if channels < 2 {
        return Err(Error::Model(format!("IMF matrix needs at least 2 channels, got {channels}")));
    }
    let len = imfs.residual.len();
    let slots = channels - 1;
    let mut out = vec![vec![0.0; len]; channels];
    let mut report = PaddingReport::default();
    for (i, imf) in imfs.imfs.iter().enumerate() {
        let slot = i.min(slots - 1);
        if i >= slots - 1 && imfs.n_imfs() > slots {
            report.merged.push(i);
        }
        for (o, v) in out[slot].iter_mut().zip(imf) {
            *o += v;
        }
    }
    report.padded = (imfs.n_imfs()..slots).collect();
    out[slots].copy_from_slice(&imfs.residual);
    Ok((out, report))
}

/// Fits one Min-Max entry per channel, named by [`channel_names`].
pub fn fit_channel_params(channels: &[Vec<f64>]) -> Result<MinMaxParams> {
    let names = channel_names(channels.len());
    let entries = channels.iter().zip(&names).map(|(c, n)| fit_minmax(c, n)).collect::<Result<Vec<_>>>()?;
    Ok(MinMaxParams::new(entries))
}

/// `[C, L]` matrix, row-major by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ImfMatrix {
    data: Vec<f64>,
    channel_count: usize,
    len: usize,
    pub padding_report: PaddingReport,
}

impl ImfMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.channel_count, self.len)
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.data[channel * self.len..(channel + 1) * self.len]
    }

    /// Columns `[from, from + width)` laid out time-major as `[width, C]`.
    pub fn window(&self, from: usize, width: usize) -> Result<Vec<f64>> {
        if from + width > self.len {
            return Err(Error::Model(format!("window [{from}, {}) exceeds matrix length {}", from + width, self.len)));
        }
        let mut out = Vec::with_capacity(width * self.channel_count);
        for t in from..from + width {
            for c in 0..self.channel_count {
                out.push(self.data[c * self.len + t]);
            }
        }
        Ok(out)
    }

    /// Rows mapped back to physical units.
    pub fn denormalize(&self, params: &MinMaxParams) -> Result<Vec<Vec<f64>>> {
        let names = channel_names(self.channel_count);
        (0..self.channel_count)
            .map(|c| {
                let e = params.get(&names[c])?;
                Ok(self.row(c).iter().map(|&v| e.denormalize(v)).collect())
            })
            .collect()
    }
}

/// Reconciles `imfs` to `channels` rows and normalizes each row with the
/// matching entry of `params`.
pub fn prepare_imf_matrix(imfs: &ImfSet, params: &MinMaxParams, channels: usize) -> Result<ImfMatrix> {
    let (raw, report) = reconcile_channels(imfs, channels)?;
    let names = channel_names(channels);
    let len = imfs.residual.len();
    let mut data = Vec::with_capacity(channels * len);
    for (row, name) in raw.iter().zip(&names) {
        let e: &MinMaxEntry = params.get(name)?;
        data.extend(row.iter().map(|&v| e.normalize(v)));
    }
    Ok(ImfMatrix { data, channel_count: channels, len, padding_report: report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(n_imfs: usize, len: usize) -> ImfSet {
        let imfs: Vec<Vec<f64>> = (0..n_imfs)
            .map(|k| (0..len).map(|t| ((t * (k + 2)) as f64 * 0.3).sin() / (k + 1) as f64).collect())
            .collect();
        ImfSet {
            residual: (0..len).map(|t| 3.0 + 0.001 * t as f64).collect(),
            source_length: len,
            sift_counts: vec![1; n_imfs],
            converged: vec![true; n_imfs],
            imfs,
        }
    }

    fn reconstruct(m: &ImfMatrix, p: &MinMaxParams) -> Vec<f64> {
        let rows = m.denormalize(p).unwrap();
        (0..m.len()).map(|t| rows.iter().map(|r| r[t]).sum()).collect()
    }

    #[test]
    fn seven_imfs_fill_exactly() {
        let s = set(7, 50);
        let (raw, report) = reconcile_channels(&s, 8).unwrap();
        assert!(report.is_exact());
        assert_eq!(raw[6], s.imfs[6]);
        assert_eq!(raw[7], s.residual);
    }

    #[test]
    fn three_imfs_padded() {
        let s = set(3, 40);
        let (raw, _) = reconcile_channels(&s, 8).unwrap();
        let p = fit_channel_params(&raw).unwrap();
        let m = prepare_imf_matrix(&s, &p, 8).unwrap();
        assert_eq!(m.padding_report.padded, vec![3, 4, 5, 6]);
        for c in 3..7 {
            assert!(m.row(c).iter().all(|v| *v == 0.0));
        }
        assert_eq!(m.row(7), p.get("residual").unwrap().normalize_all(&s.residual).as_slice());
    }

    #[test]
    fn nine_imfs_merge_and_reconstruct() {
        let s = set(9, 64);
        let (raw, report) = reconcile_channels(&s, 8).unwrap();
        assert_eq!(report.merged, vec![6, 7, 8]);
        for t in 0..64 {
            let want = s.imfs[6][t] + s.imfs[7][t] + s.imfs[8][t];
            assert!((raw[6][t] - want).abs() < 1e-15);
        }
        let p = fit_channel_params(&raw).unwrap();
        let m = prepare_imf_matrix(&s, &p, 8).unwrap();
        let orig = s.reconstruct();
        for (a, b) in reconstruct(&m, &p).iter().zip(&orig) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
    }

    #[test]
    fn window_is_time_major() {
        let s = set(2, 10);
        let (raw, _) = reconcile_channels(&s, 3).unwrap();
        let m = prepare_imf_matrix(&s, &fit_channel_params(&raw).unwrap(), 3).unwrap();
        let w = m.window(4, 3).unwrap();
        assert_eq!(w.len(), 9);
        assert_eq!(w[3 + 1], m.row(1)[5]);
        assert!(m.window(8, 3).is_err());
    }

    #[test]
    fn too_few_channels_rejected() {
        assert!(reconcile_channels(&set(2, 10), 1).is_err());
    }
}
