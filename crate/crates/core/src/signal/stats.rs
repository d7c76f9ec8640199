use crate::error::{Error, Result};

/// Biased sample autocorrelation `ρ(0..=max_lag)`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::Signal(format!("max_lag {max_lag} must be below the series length {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let denom: f64 = centered.iter().map(|x| x * x).sum();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::Signal("autocorrelation of a zero-variance series".into()));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for k in 1..=max_lag {
        let num: f64 = centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum();
        out.push(num / denom);
    }
    Ok(out)
}

/// Partial autocorrelation `φ_kk` for `k = 1..=max_lag` by Durbin–Levinson.
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 {
        return Err(Error::Signal("pacf needs max_lag >= 1".into()));
    }
    let rho = acf(series, max_lag)?;
    pacf_from_acf(&rho)
}

/// Durbin–Levinson recursion over `rho[0..=K]` with `rho[0] == 1`.
pub fn pacf_from_acf(rho: &[f64]) -> Result<Vec<f64>> {
    let max_lag = rho.len().saturating_sub(1);
    let mut out = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::with_capacity(max_lag);
    let mut variance = 1.0;
    for k in 1..=max_lag {
        let num = rho[k] - phi.iter().enumerate().map(|(j, p)| p * rho[k - 1 - j]).sum::<f64>();
        let phi_kk = num / variance;
        let shrink = 1.0 - phi_kk * phi_kk;
        if k < max_lag && shrink <= 0.0 {
            return Err(Error::Degenerate(format!("Durbin-Levinson breakdown at lag {k} (phi = {phi_kk})")));
        }
        let prev = phi.clone();
        for j in 0..phi.len() {
            phi[j] = prev[j] - phi_kk * prev[prev.len() - 1 - j];
        }
        phi.push(phi_kk);
        variance *= shrink;
        out.push(phi_kk);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(n: usize, coef: f64, seed: u64) -> Vec<f64> {
        let eps = white(n + 500, seed);
        let mut x = vec![0.0; n + 500];
        for t in 1..x.len() {
            x[t] = coef * x[t - 1] + eps[t];
        }
        x.split_off(500)
    }

    #[test]
    fn lag_zero_is_one() {
        let r = acf(&[1.0, 4.0, 2.0, 8.0, 5.0], 3).unwrap();
        assert_eq!(r[0], 1.0);
        assert_eq!(r.len(), 4);
    }

    #[test]
    fn constant_series_rejected() {
        assert!(matches!(acf(&[2.0; 10], 2), Err(Error::Signal(_))));
        assert!(acf(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn white_noise_acf_inside_band() {
        let n = 10_000;
        let r = acf(&white(n, 1), 20).unwrap();
        let band = 2.0 / (n as f64).sqrt();
        let inside = r[1..].iter().filter(|v| v.abs() < band).count();
        assert!(inside >= 19, "{inside} of 20 lags inside the band");
    }

    #[test]
    fn ar1_pacf_cuts_off() {
        let x = ar1(20_000, 0.7, 3);
        let p = pacf(&x, 5).unwrap();
        assert!((p[0] - 0.7).abs() < 0.03, "phi_11 = {}", p[0]);
        for (k, v) in p.iter().enumerate().skip(1) {
            assert!(v.abs() < 0.03, "phi_{0}{0} = {v}", k + 1);
        }
    }

    #[test]
    fn white_noise_pacf_inside_band() {
        let n = 10_000;
        let p = pacf(&white(n, 9), 10).unwrap();
        let band = 2.0 / (n as f64).sqrt();
        assert!(p.iter().filter(|v| v.abs() < band).count() >= 9);
    }

    #[test]
    fn first_pacf_equals_first_acf() {
        let x = ar1(300, -0.4, 5);
        let r = acf(&x, 4).unwrap();
        let p = pacf(&x, 4).unwrap();
        assert_eq!(p[0], r[1]);
    }

    #[test]
    fn breakdown_reported() {
        // |rho(1)| = 1 leaves no innovation variance for lag 2
        assert!(matches!(pacf_from_acf(&[1.0, 1.0, 0.5]), Err(Error::Degenerate(_))));
    }
}
