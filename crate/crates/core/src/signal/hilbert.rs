//! Analytic signal and instantaneous amplitude / phase / frequency.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use super::emd::ImfSet;
use crate::error::{Error, Result};

/// In-place iterative radix-2 FFT. `inverse` applies the `1/N` scaling.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles computed directly per index keep the error from accumulating.
        let twiddles: Vec<Complex64> =
            (0..half).map(|k| Complex64::from_polar(1.0, sign * TAU * k as f64 / len as f64)).collect();
        for chunk in buf.chunks_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for k in 0..half {
                let t = hi[k] * twiddles[k];
                hi[k] = lo[k] - t;
                lo[k] += t;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// FFT-based analytic signal. Inputs are zero-padded to the next power of two
/// and the result truncated back to the input length.
pub fn analytic_signal(series: &[f64]) -> Result<Vec<Complex64>> {
    let n = series.len();
    if n < 4 {
        return Err(Error::Signal(format!("analytic signal needs length >= 4, got {n}")));
    }
    let padded = n.next_power_of_two();
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(padded)
        .collect();
    fft_in_place(&mut buf, false);
    let nyquist = padded / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || k == nyquist {
            continue;
        }
        if k < nyquist {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_in_place(&mut buf, true);
    buf.truncate(n);
    Ok(buf)
}

/// Instantaneous amplitude, unwrapped phase (radians) and frequency (cycles per sample).
#[derive(Clone, Debug, PartialEq)]
pub struct HhtRow {
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub frequency: Vec<f64>,
}

/// One [`HhtRow`] per IMF.
#[derive(Clone, Debug, PartialEq)]
pub struct HhtFrame {
    pub rows: Vec<HhtRow>,
}

fn unwrap_phase(wrapped: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(wrapped.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in wrapped {
        if let Some(q) = prev {
            let d = p - q;
            if d > PI {
                offset -= TAU * ((d + PI) / TAU).floor();
            } else if d < -PI {
                offset += TAU * ((-d + PI) / TAU).floor();
            }
        }
        out.push(p + offset);
        prev = Some(p);
    }
    out
}

pub fn instantaneous(imf: &[f64], analytic: &[Complex64]) -> Result<HhtRow> {
    let n = imf.len();
    if analytic.len() != n {
        return Err(Error::Signal(format!("analytic signal length {} differs from IMF length {n}", analytic.len())));
    }
    let amplitude = analytic.iter().map(|z| z.norm()).collect();
    let wrapped: Vec<f64> = analytic.iter().map(|z| z.arg()).collect();
    let phase = unwrap_phase(&wrapped);
    let frequency = (0..n)
        .map(|i| {
            let d = match (i, n) {
                (_, 1) => 0.0,
                (0, _) => phase[1] - phase[0],
                (i, n) if i == n - 1 => phase[i] - phase[i - 1],
                (i, _) => (phase[i + 1] - phase[i - 1]) / 2.0,
            };
            d / TAU
        })
        .collect();
    Ok(HhtRow { amplitude, phase, frequency })
}

/// Hilbert spectral frame of every IMF in `set`.
pub fn hht(set: &ImfSet) -> Result<HhtFrame> {
    let rows = set.imfs.iter().map(|imf| instantaneous(imf, &analytic_signal(imf)?)).collect::<Result<Vec<_>>>()?;
    Ok(HhtFrame { rows })
}
