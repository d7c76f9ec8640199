use crate::error::{Error, Result};

/// Natural cubic spline (zero second derivative at both end knots).
#[derive(Clone, Debug)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    /// Fits through strictly increasing `xs`.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Signal(format!("spline needs at least 2 knots with matching values, got {n}")));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Signal("spline knots must be strictly increasing".into()));
        }
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior rows of the tridiagonal system.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            let mut upper = vec![0.0; m];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let r = i - 1;
                diag[r] = 2.0 * (h0 + h1);
                upper[r] = h1;
                rhs[r] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            for r in 1..m {
                let lower = xs[r + 1] - xs[r];
                let w = lower / diag[r - 1];
                diag[r] -= w * upper[r - 1];
                rhs[r] -= w * rhs[r - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for r in (0..m - 1).rev() {
                second[r + 1] = (rhs[r] - upper[r] * second[r + 2]) / diag[r];
            }
        }
        Ok(NaturalSpline { xs: xs.to_vec(), ys: ys.to_vec(), second })
    }

    fn segment_value(&self, i: usize, x: f64) -> f64 {
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let h = x1 - x0;
        let a = x1 - x;
        let b = x - x0;
        m0 * a * a * a / (6.0 * h)
            + m1 * b * b * b / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * a
            + (y1 / h - m1 * h / 6.0) * b
    }

    fn segment_of(&self, x: f64) -> usize {
        let last = self.xs.len() - 2;
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.segment_value(self.segment_of(x), x)
    }

    /// Values at `0, 1, ..., len - 1`.
    pub fn eval_grid(&self, len: usize) -> Vec<f64> {
        let last = self.xs.len() - 2;
        let mut seg = self.segment_of(0.0);
        (0..len)
            .map(|t| {
                let x = t as f64;
                while seg < last && x >= self.xs[seg + 1] {
                    seg += 1;
                }
                self.segment_value(seg, x)
            })
            .collect()
    }
}
