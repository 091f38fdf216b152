//! Monte Carlo volumes of the shells `{k : |e(k)| ≤ M^j}` and of their
//! intersections with small balls, plus scaling fits across `j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit;
use crate::geometry::{ball_volume, sample_ball, DispersionModel};
use crate::mc;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShellError {
    #[error("invalid shell spec: {0}")]
    InvalidSpec(String),
    #[error("scaling fit needs at least 4 scales, got {0}")]
    TooFewScales(usize),
    #[error("nonpositive values at scales {0:?}")]
    NonPositive(Vec<i32>),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallRestriction {
    pub center: Vec<f64>,
    /// Radius is `M^{εj}`.
    pub epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct ShellSpec<'a> {
    pub model: &'a DispersionModel,
    pub base: f64,
    pub j: i32,
    pub ball: Option<BallRestriction>,
}

impl<'a> ShellSpec<'a> {
    pub fn new(
        model: &'a DispersionModel,
        base: f64,
        j: i32,
        ball: Option<BallRestriction>,
    ) -> Result<Self, ShellError> {
        if !(base > 1.0) || !base.is_finite() {
            return Err(ShellError::InvalidSpec(format!("M = {base} must be > 1")));
        }
        if j > -1 {
            return Err(ShellError::InvalidSpec(format!("j = {j} must be ≤ -1")));
        }
        if let Some(b) = &ball {
            if !(b.epsilon > 0.0 && b.epsilon < 0.5) {
                return Err(ShellError::InvalidSpec(format!("ε = {} not in (0, 1/2)", b.epsilon)));
            }
            if b.center.len() != model.dim() {
                return Err(ShellError::InvalidSpec("ball center has wrong dimension".into()));
            }
            if !model.contains(&b.center) {
                return Err(ShellError::InvalidSpec("ball center outside the domain".into()));
            }
        }
        Ok(ShellSpec { model, base, j, ball })
    }

    pub fn threshold(&self) -> f64 {
        self.base.powi(self.j)
    }

    pub fn ball_radius(&self) -> Option<f64> {
        self.ball.as_ref().map(|b| self.base.powf(b.epsilon * self.j as f64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mc,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub method: Method,
    /// Set when there were no hits: the 95% one-sided upper bound `3V/n`.
    pub note: Option<String>,
}

impl VolumeEstimate {
    pub fn from_hits(region_volume: f64, hits: u64, n: u64) -> Self {
        let p = hits as f64 / n as f64;
        let note = (hits == 0).then(|| {
            format!("no hits; 95% upper bound {:.3e}", 3.0 * region_volume / n as f64)
        });
        VolumeEstimate {
            value: region_volume * p,
            stderr: region_volume * (p * (1.0 - p) / n as f64).sqrt(),
            n_samples: n,
            method: Method::Mc,
            note,
        }
    }
}

fn in_ball(k: &[f64], center: &[f64], r: f64) -> bool {
    k.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= r * r
}

/// Uniform sampling over the model domain.
pub fn estimate_shell_volume(spec: &ShellSpec, n_samples: u64, seed: u64) -> Result<VolumeEstimate, ShellError> {
    if n_samples == 0 {
        return Err(ShellError::InvalidSpec("n_samples must be positive".into()));
    }
    let model = spec.model;
    let d = model.dim();
    let h = spec.threshold();
    let ball = spec.ball.as_ref().map(|b| (b.center.clone(), spec.ball_radius().unwrap()));
    let hits: u64 = mc::run_shards(seed, n_samples, |_, budget, rng| {
        let mut k = vec![0.0; d];
        let mut c = 0u64;
        for _ in 0..budget {
            model.sample_domain(rng, &mut k);
            if model.energy(&k).abs() <= h && ball.as_ref().is_none_or(|(q, r)| in_ball(&k, q, *r)) {
                c += 1;
            }
        }
        c
    })
    .into_iter()
    .sum();
    Ok(VolumeEstimate::from_hits(model.domain_volume(), hits, n_samples))
}

/// Uniform sampling inside the ball `|k − q| ≤ M^{εj}`.
pub fn estimate_ball_shell_volume(
    spec: &ShellSpec,
    n_samples: u64,
    seed: u64,
) -> Result<VolumeEstimate, ShellError> {
    let b = spec
        .ball
        .as_ref()
        .ok_or_else(|| ShellError::InvalidSpec("ball restriction required".into()))?;
    if n_samples == 0 {
        return Err(ShellError::InvalidSpec("n_samples must be positive".into()));
    }
    let model = spec.model;
    let d = model.dim();
    let h = spec.threshold();
    let r = spec.ball_radius().unwrap();
    let hits: u64 = mc::run_shards(seed, n_samples, |_, budget, rng| {
        let mut k = vec![0.0; d];
        let mut c = 0u64;
        for _ in 0..budget {
            sample_ball(rng, &b.center, r, &mut k);
            if model.contains(&k) && model.energy(&k).abs() <= h {
                c += 1;
            }
        }
        c
    })
    .into_iter()
    .sum();
    Ok(VolumeEstimate::from_hits(ball_volume(d, r), hits, n_samples))
}

/// Midpoint-rule volume on a `per_axis^d` grid over the domain's bounding box.
pub fn grid_shell_volume(spec: &ShellSpec, per_axis: usize) -> VolumeEstimate {
    let model = spec.model;
    let d = model.dim();
    let (lo, hi) = model.bounding_box();
    let h = spec.threshold();
    let ball = spec.ball.as_ref().map(|b| (b.center.clone(), spec.ball_radius().unwrap()));
    let cell: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a) / per_axis as f64).product();
    let total = per_axis.pow(d as u32) as u64;
    let mut k = vec![0.0; d];
    let mut hits = 0u64;
    for idx in 0..total {
        let mut r = idx as usize;
        for i in 0..d {
            let c = r % per_axis;
            r /= per_axis;
            k[i] = lo[i] + (hi[i] - lo[i]) * (c as f64 + 0.5) / per_axis as f64;
        }
        if model.contains(&k)
            && model.energy(&k).abs() <= h
            && ball.as_ref().is_none_or(|(q, rr)| in_ball(&k, q, *rr))
        {
            hits += 1;
        }
    }
    VolumeEstimate { value: cell * hits as f64, stderr: 0.0, n_samples: total, method: Method::Grid, note: None }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitForm {
    /// `value = C M^{αj}`.
    Power,
    /// `value = M^j (a + b|j|)`.
    LogCorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub j_min: i32,
    pub j_max: i32,
    pub form: FitForm,
    /// `(α, ln C)` for the power form, `(a, b)` for the log-corrected form.
    pub params: (f64, f64),
    pub param_stderr: (f64, f64),
    pub rss: f64,
    /// RMS residual relative to the mean of the fitted quantity.
    pub relative_residual: f64,
}

impl ScalingFit {
    pub fn exponent(&self) -> f64 {
        self.params.0
    }
}

pub fn fit_scaling_exponent(
    estimates: &[(i32, VolumeEstimate)],
    base: f64,
    form: FitForm,
) -> Result<ScalingFit, ShellError> {
    if estimates.len() < 4 {
        return Err(ShellError::TooFewScales(estimates.len()));
    }
    let j_min = estimates.iter().map(|e| e.0).min().unwrap();
    let j_max = estimates.iter().map(|e| e.0).max().unwrap();
    let lnm = base.ln();
    let (x, y): (Vec<f64>, Vec<f64>) = match form {
        FitForm::Power => {
            let bad: Vec<i32> = estimates.iter().filter(|e| !(e.1.value > 0.0)).map(|e| e.0).collect();
            if !bad.is_empty() {
                return Err(ShellError::NonPositive(bad));
            }
            estimates.iter().map(|(j, v)| (*j as f64 * lnm, v.value.ln())).unzip()
        }
        FitForm::LogCorrected => estimates
            .iter()
            .map(|(j, v)| ((-j) as f64, v.value / base.powi(*j)))
            .unzip(),
    };
    let f = fit::ols(&x, &y).ok_or_else(|| ShellError::Degenerate("all scales identical".into()))?;
    let n = x.len() as f64;
    let rms = (f.rss / n).sqrt();
    let mean = y.iter().map(|v| v.abs()).sum::<f64>() / n;
    let (params, param_stderr, relative_residual) = match form {
        FitForm::Power => ((f.slope, f.intercept), (f.slope_stderr, f.intercept_stderr), rms),
        FitForm::LogCorrected => ((f.intercept, f.slope), (f.intercept_stderr, f.slope_stderr), rms / mean),
    };
    Ok(ScalingFit { j_min, j_max, form, params, param_stderr, rss: f.rss, relative_residual })
}
