//! Straight-line least squares.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub rss: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let w = vec![1.0; x.len()];
    wls_inner(x, y, &w, false)
}

/// Weighted least squares with weights `1/sigma²`. The reported slope error is
/// rescaled by the reduced chi-square, so it stays honest when the supplied
/// sigmas are too small.
pub fn wls(x: &[f64], y: &[f64], sigma: &[f64]) -> Option<LineFit> {
    let w: Vec<f64> = sigma
        .iter()
        .map(|s| if *s > 0.0 && s.is_finite() { 1.0 / (s * s) } else { 0.0 })
        .collect();
    if w.iter().all(|v| *v == 0.0) {
        return ols(x, y);
    }
    // zero sigmas get the largest finite weight instead of infinity
    let wmax = w.iter().cloned().fold(0.0, f64::max);
    let w: Vec<f64> = sigma
        .iter()
        .zip(&w)
        .map(|(s, v)| if *s <= 0.0 { wmax } else { *v })
        .collect();
    wls_inner(x, y, &w, true)
}

fn wls_inner(x: &[f64], y: &[f64], w: &[f64], weighted: bool) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - xm;
        let dy = y[i] - ym;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let mut rss = 0.0;
    let mut wrss = 0.0;
    for i in 0..n {
        let r = y[i] - intercept - slope * x[i];
        rss += r * r;
        wrss += w[i] * r * r;
    }
    let dof = (n as f64 - 2.0).max(1.0);
    let s2 = wrss / dof;
    let (slope_var, icpt_var) = if weighted {
        let scale = s2.max(1.0);
        (scale / sxx, scale * (1.0 / sw + xm * xm / sxx))
    } else {
        (s2 / sxx, s2 * (1.0 / sw + xm * xm / sxx))
    };
    let r_squared = if syy > 0.0 { 1.0 - wrss / syy } else { 1.0 };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr: slope_var.sqrt(),
        intercept_stderr: icpt_var.sqrt(),
        rss,
        r_squared,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!(f.rss < 1e-28);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_pull_toward_precise_points() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 1.0, 2.0, 10.0];
        let loose = wls(&x, &y, &[0.01, 0.01, 0.01, 100.0]).unwrap();
        assert!((loose.slope - 1.0).abs() < 1e-3);
    }
}
