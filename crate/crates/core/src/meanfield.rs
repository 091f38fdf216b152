//! Density of states and the BCS gap equation.

use serde::Serialize;
use thiserror::Error;

use crate::fit::ols;
use crate::geometry::DispersionModel;
use crate::mc::run_shards;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("bisection did not converge after {iters} steps, bracket [{lo:e}, {hi:e}]")]
    NoConvergence { iters: usize, lo: f64, hi: f64 },
    #[error("too few usable couplings: {0}")]
    TooFew(usize),
}

type Result<T> = std::result::Result<T, MeanFieldError>;

pub const DELTA_TOL: f64 = 1e-10;
pub const TC_REL_TOL: f64 = 1e-6;
const MAX_ITER: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum DosSource {
    MonteCarlo { n_samples: u64, seed: u64 },
    /// Midpoint grid with this many points per axis.
    Grid { per_axis: usize },
}

/// Piecewise-constant density of states, normalized so that its integral equals
/// the domain volume over `(2π)^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DosHistogram {
    pub edges: Vec<f64>,
    pub rho: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_samples: u64,
    pub total: f64,
    pub bandwidth: f64,
}

impl DosHistogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Standard error of each bin (binomial counting); zero for analytic tables.
    pub fn bin_stderr(&self) -> Vec<f64> {
        if self.n_samples == 0 {
            return vec![0.0; self.rho.len()];
        }
        let n = self.n_samples as f64;
        self.rho
            .iter()
            .zip(&self.counts)
            .map(|(r, c)| {
                if *c == 0 {
                    0.0
                } else {
                    let p = *c as f64 / n;
                    r * ((1.0 - p) / (*c as f64)).sqrt()
                }
            })
            .collect()
    }

    fn from_rho(edges: Vec<f64>, rho: Vec<f64>) -> Self {
        let total = edges.windows(2).zip(&rho).map(|(w, r)| r * (w[1] - w[0])).sum();
        let bandwidth = edges[edges.len() - 1] - edges[0];
        let counts = vec![0; rho.len()];
        DosHistogram { edges, rho, counts, n_samples: 0, total, bandwidth }
    }

    /// `ρ(E) = ρ₀` on the given edges (which should span the band).
    pub fn constant(rho0: f64, edges: Vec<f64>) -> Result<Self> {
        check_edges(&edges)?;
        let n = edges.len() - 1;
        Ok(Self::from_rho(edges, vec![rho0; n]))
    }

    /// `ρ(E) = K ln(W/|E − E₀|)` clipped at zero, with exact bin averages.
    pub fn log_singular(k: f64, w: f64, e0: f64, edges: Vec<f64>) -> Result<Self> {
        check_edges(&edges)?;
        if !(k > 0.0 && w > 0.0) {
            return Err(MeanFieldError::Argument("K and W must be positive".into()));
        }
        // antiderivative of ln(W/x) on x > 0, clipped where x > W
        let prim = |x: f64| {
            let x = x.min(w);
            if x <= 0.0 {
                0.0
            } else {
                x * ((w / x).ln() + 1.0)
            }
        };
        let signed = |e: f64| {
            let x = e - e0;
            if x >= 0.0 {
                prim(x)
            } else {
                -prim(-x)
            }
        };
        let rho = edges
            .windows(2)
            .map(|b| k * (signed(b[1]) - signed(b[0])) / (b[1] - b[0]))
            .collect();
        Ok(Self::from_rho(edges, rho))
    }
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(MeanFieldError::Argument("need at least two bin edges".into()));
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(MeanFieldError::Argument("bin edges must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Uniform bin edges.
pub fn uniform_edges(lo: f64, hi: f64, n_bins: usize) -> Vec<f64> {
    (0..=n_bins).map(|i| lo + (hi - lo) * i as f64 / n_bins as f64).collect()
}

/// Edges symmetric about `center`: a central bin of half-width `inner`, then
/// `per_side` log-spaced bins out to `center ± outer`.
pub fn log_edges(center: f64, inner: f64, outer: f64, per_side: usize) -> Vec<f64> {
    let r = (outer / inner).powf(1.0 / per_side as f64);
    let side: Vec<f64> = (0..=per_side).map(|i| inner * r.powi(i as i32)).collect();
    let mut e: Vec<f64> = side.iter().rev().map(|x| center - x).collect();
    e.extend(side.iter().map(|x| center + x));
    e
}

fn energy_range(model: &DispersionModel) -> (f64, f64) {
    // coarse scan for the band edges
    let d = model.dim();
    let (lo, hi) = model.bounding_box();
    let per: usize = match d {
        1 => 4001,
        2 => 201,
        3 => 41,
        _ => 9,
    };
    let total = per.pow(d as u32);
    let mut k = vec![0.0; d];
    let (mut emin, mut emax) = (f64::INFINITY, f64::NEG_INFINITY);
    for idx in 0..total {
        let mut r = idx;
        for i in 0..d {
            let c = r % per;
            r /= per;
            k[i] = lo[i] + (hi[i] - lo[i]) * c as f64 / (per - 1) as f64;
        }
        if !model.contains(&k) {
            continue;
        }
        let e = model.energy(&k);
        emin = emin.min(e);
        emax = emax.max(e);
    }
    let pad = 1e-6 * (emax - emin).max(1e-12);
    (emin - pad, emax + pad)
}

/// Histogram of `∫ δ(E − e(k)) dk/(2π)^d` over `n_bins` uniform bins spanning
/// the band.
pub fn compute_dos(model: &DispersionModel, n_bins: usize, source: &DosSource) -> Result<DosHistogram> {
    if n_bins == 0 {
        return Err(MeanFieldError::Argument("need at least one bin".into()));
    }
    let (lo, hi) = energy_range(model);
    compute_dos_with_edges(model, uniform_edges(lo, hi, n_bins), source)
}

/// Histogram on caller-supplied edges. Samples outside the edges are dropped,
/// so the total integral is reduced accordingly.
pub fn compute_dos_with_edges(
    model: &DispersionModel,
    edges: Vec<f64>,
    source: &DosSource,
) -> Result<DosHistogram> {
    check_edges(&edges)?;
    let d = model.dim();
    let nb = edges.len() - 1;
    let bin_of = |e: f64| -> Option<usize> {
        if e < edges[0] || e >= edges[nb] {
            return None;
        }
        let i = edges.partition_point(|x| *x <= e);
        Some(i - 1)
    };
    let (counts, n_total) = match *source {
        DosSource::MonteCarlo { n_samples, seed } => {
            if n_samples == 0 {
                return Err(MeanFieldError::Argument("need at least one sample".into()));
            }
            let parts = run_shards(seed, n_samples, |_, budget, rng| {
                let mut c = vec![0u64; nb];
                let mut k = vec![0.0; d];
                for _ in 0..budget {
                    model.sample_domain(rng, &mut k);
                    if let Some(b) = bin_of(model.energy(&k)) {
                        c[b] += 1;
                    }
                }
                c
            });
            let mut c = vec![0u64; nb];
            for p in parts {
                for (a, b) in c.iter_mut().zip(p) {
                    *a += b;
                }
            }
            (c, n_samples)
        }
        DosSource::Grid { per_axis } => {
            if per_axis == 0 {
                return Err(MeanFieldError::Argument("grid needs points".into()));
            }
            let (lo, hi) = model.bounding_box();
            let total = (per_axis as u64).pow(d as u32);
            let mut c = vec![0u64; nb];
            let mut k = vec![0.0; d];
            let mut inside = 0u64;
            for idx in 0..total {
                let mut r = idx;
                for i in 0..d {
                    let ci = r % per_axis as u64;
                    r /= per_axis as u64;
                    k[i] = lo[i] + (hi[i] - lo[i]) * (ci as f64 + 0.5) / per_axis as f64;
                }
                if !model.contains(&k) {
                    continue;
                }
                inside += 1;
                if let Some(b) = bin_of(model.energy(&k)) {
                    c[b] += 1;
                }
            }
            // grid cells outside the domain carry no weight
            let _ = inside;
            (c, total)
        }
    };
    let norm = match *source {
        DosSource::MonteCarlo { .. } => model.domain_volume(),
        DosSource::Grid { .. } => {
            let (lo, hi) = model.bounding_box();
            lo.iter().zip(&hi).map(|(a, b)| b - a).product()
        }
    } / (2.0 * std::f64::consts::PI).powi(d as i32);
    let rho = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(c, w)| norm * *c as f64 / (n_total as f64 * (w[1] - w[0])))
        .collect();
    let mut h = DosHistogram::from_rho(edges, rho);
    h.counts = counts;
    h.n_samples = n_total;
    Ok(h)
}

// five-point Gauss-Legendre on [-1, 1]
const GL_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// `tanh(βx/2)/(2x)` with `x = √(ξ² + Δ²)`; at `T = 0` the tanh is 1.
fn kernel(xi: f64, delta: f64, t: f64) -> f64 {
    let x = xi.hypot(delta);
    if t == 0.0 {
        return if x == 0.0 { f64::INFINITY } else { 0.5 / x };
    }
    if x < 1e-300 {
        return 0.25 / t;
    }
    (0.5 * x / t).tanh() / (2.0 * x)
}

/// `I(Δ, T) = ∫ ρ(E) tanh(β√(ξ²+Δ²)/2)/(2√(ξ²+Δ²)) dE` with `ξ = E − E_F`.
pub fn gap_integral(dos: &DosHistogram, e_f: f64, delta: f64, t: f64) -> f64 {
    let mut s = 0.0;
    for (w, r) in dos.edges.windows(2).zip(&dos.rho) {
        if *r == 0.0 {
            continue;
        }
        let (a, b) = (w[0] - e_f, w[1] - e_f);
        let seg = |lo: f64, hi: f64| {
            let (m, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            GL_X.iter().zip(&GL_W).map(|(x, wt)| wt * kernel(m + h * x, delta, t)).sum::<f64>() * h
        };
        // split at the Fermi level so the peak of the kernel is an endpoint
        let v = if a < 0.0 && b > 0.0 { seg(a, 0.0) + seg(0.0, b) } else { seg(a, b) };
        s += r * v;
    }
    s
}

fn check_gap_args(dos: &DosHistogram, g: f64, e_f: f64) -> Result<()> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(MeanFieldError::Argument(format!("coupling {g} must be positive")));
    }
    let (lo, hi) = (dos.edges[0], dos.edges[dos.edges.len() - 1]);
    if !(e_f >= lo && e_f <= hi) {
        return Err(MeanFieldError::Argument(format!("Fermi energy {e_f} outside the band [{lo}, {hi}]")));
    }
    Ok(())
}

/// Gap `Δ` solving `1 = g I(Δ, T)`, or 0 when `g I(0⁺, T) ≤ 1`.
pub fn solve_gap_equation(dos: &DosHistogram, g: f64, e_f: f64, t: f64) -> Result<f64> {
    check_gap_args(dos, g, e_f)?;
    if !(t >= 0.0) {
        return Err(MeanFieldError::Argument(format!("temperature {t} must be non-negative")));
    }
    let f = |d: f64| g * gap_integral(dos, e_f, d, t) - 1.0;
    let tiny = DELTA_TOL * 1e-3;
    if f(tiny) <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = dos.bandwidth.max(1e-12);
    let mut n = 0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        n += 1;
        if n > 200 {
            return Err(MeanFieldError::NoConvergence { iters: n, lo: tiny, hi });
        }
    }
    let mut lo = tiny;
    for _ in 0..MAX_ITER {
        if hi - lo <= DELTA_TOL {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(MeanFieldError::NoConvergence { iters: MAX_ITER, lo, hi })
}

/// Largest temperature with a nonzero gap, by bisection in `ln T` on
/// `g I(0, T) = 1`. Returns 0 when no solution exists above `1e-14 W`.
pub fn critical_temperature(dos: &DosHistogram, g: f64, e_f: f64) -> Result<f64> {
    check_gap_args(dos, g, e_f)?;
    let f = |t: f64| g * gap_integral(dos, e_f, 0.0, t) - 1.0;
    let w = dos.bandwidth;
    let (mut lo, mut hi) = (1e-14 * w, w);
    if f(lo) <= 0.0 {
        return Ok(0.0);
    }
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 * w {
            return Err(MeanFieldError::NoConvergence { iters: 0, lo, hi });
        }
    }
    for _ in 0..MAX_ITER {
        if hi / lo - 1.0 <= TC_REL_TOL {
            return Ok((lo * hi).sqrt());
        }
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(MeanFieldError::NoConvergence { iters: MAX_ITER, lo, hi })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapSolution {
    pub g: f64,
    pub e_f: f64,
    pub temperatures: Vec<f64>,
    pub deltas: Vec<f64>,
    pub t_c: f64,
}

pub fn solve_gap_curve(dos: &DosHistogram, g: f64, e_f: f64, temperatures: &[f64]) -> Result<GapSolution> {
    let deltas = temperatures
        .iter()
        .map(|t| solve_gap_equation(dos, g, e_f, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(GapSolution {
        g,
        e_f,
        temperatures: temperatures.to_vec(),
        deltas,
        t_c: critical_temperature(dos, g, e_f)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcLaw {
    InvG,
    InvSqrtG,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TcFit {
    pub law: TcLaw,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub used: usize,
    pub dropped: usize,
}

/// Least squares of `ln T_c` on `−1/g` or `−1/√g`; pairs with `T_c = 0` are
/// dropped and counted.
pub fn fit_tc_asymptotics(pairs: &[(f64, f64)], law: TcLaw) -> Result<TcFit> {
    let kept: Vec<(f64, f64)> = pairs.iter().copied().filter(|(g, t)| *g > 0.0 && *t > 0.0).collect();
    let dropped = pairs.len() - kept.len();
    if kept.len() < 6 {
        return Err(MeanFieldError::TooFew(kept.len()));
    }
    let x: Vec<f64> = kept
        .iter()
        .map(|(g, _)| match law {
            TcLaw::InvG => -1.0 / g,
            TcLaw::InvSqrtG => -1.0 / g.sqrt(),
        })
        .collect();
    let y: Vec<f64> = kept.iter().map(|(_, t)| t.ln()).collect();
    let f = ols(&x, &y).ok_or(MeanFieldError::TooFew(kept.len()))?;
    Ok(TcFit {
        law,
        slope: f.slope,
        intercept: f.intercept,
        r_squared: f.r_squared,
        used: kept.len(),
        dropped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogDivergenceFit {
    /// `K` in `ρ(E) ≈ −K ln|E − E₀| + c`.
    pub strength: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub used: usize,
}

/// Regresses bin densities on `−ln|E − E₀|` over bins whose centers satisfy
/// `inner ≤ |E − E₀| ≤ outer`.
pub fn fit_log_divergence(dos: &DosHistogram, e0: f64, inner: f64, outer: f64) -> Result<LogDivergenceFit> {
    if !(inner > 0.0 && outer > inner) {
        return Err(MeanFieldError::Argument(format!("fit window [{inner}, {outer}] is empty")));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = dos
        .centers()
        .iter()
        .zip(&dos.rho)
        .filter(|(c, _)| (inner..=outer).contains(&(*c - e0).abs()))
        .map(|(c, r)| (-(c - e0).abs().ln(), *r))
        .unzip();
    if x.len() < 4 {
        return Err(MeanFieldError::TooFew(x.len()));
    }
    let f = ols(&x, &y).ok_or(MeanFieldError::TooFew(x.len()))?;
    Ok(LogDivergenceFit { strength: f.slope, intercept: f.intercept, r_squared: f.r_squared, used: x.len() })
}
