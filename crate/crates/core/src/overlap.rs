//! Overlapping-loop volumes: the triple-shell integral
//! `I₂ = sup_q ∫∫ 1(|e(k)| ≤ ε₁) 1(|e(p)| ≤ ε₂) 1(|e(v₁k + v₂p + q)| ≤ ε₃) dk dp`
//! and its surface analogue `W(ζ)`, with exponent fits.

use serde::Serialize;
use thiserror::Error;

use crate::fit::{self, LineFit};
use crate::geometry::{
    find_singular_points, norm, sample_fermi_surface, sin_angle_unit_norms, DispersionModel, GeometryError,
    SurfaceOptions,
};
use crate::mc;
use crate::shellvol::{Method, VolumeEstimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OverlapError {
    #[error("invalid overlap spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("shell {0} is empty after {1} draws")]
    EmptyShell(usize, u64),
    #[error("exponent fit needs at least 3 positive points, got {0}")]
    TooFewPoints(usize),
}

type Result<T> = std::result::Result<T, OverlapError>;

/// `δ ≥ C_δ max(√ε₁, √ε₂)` is the regime where the improved bound is asserted.
pub const C_DELTA: f64 = 4.0;
/// Size of the default q set.
pub const N_Q: usize = 32;

#[derive(Clone, Debug)]
pub struct OverlapSpec<'a> {
    pub model: &'a DispersionModel,
    pub v1: i8,
    pub v2: i8,
    pub eps1: f64,
    pub eps2: f64,
    /// Third-shell thresholds, all evaluated on the same draws.
    pub eps3: Vec<f64>,
    /// Points with `|∇e| < δ` are excised from all three shells.
    pub delta: f64,
    pub q_set: Vec<Vec<f64>>,
}

impl OverlapSpec<'_> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OverlapError::InvalidSpec(m));
        if ![self.v1, self.v2].iter().all(|v| *v == 1 || *v == -1) {
            return bad(format!("signs ({}, {}) must be ±1", self.v1, self.v2));
        }
        let unit = |e: f64| e > 0.0 && e <= 1.0;
        if !unit(self.eps1) || !unit(self.eps2) {
            return bad("ε₁, ε₂ must lie in (0, 1]".into());
        }
        if self.eps3.is_empty() {
            return bad("no ε₃ values".into());
        }
        let floor = self.eps1.max(self.eps2);
        if let Some(e) = self.eps3.iter().find(|e| !unit(**e) || **e < floor) {
            return bad(format!("ε₃ = {e} must lie in [max(ε₁, ε₂), 1]"));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return bad(format!("δ = {} must be non-negative", self.delta));
        }
        let d = self.model.dim();
        if self.q_set.is_empty() || self.q_set.iter().any(|q| q.len() != d) {
            return bad(format!("q set must be nonempty with {d}-vectors"));
        }
        Ok(())
    }

    /// Whether `δ` is large enough for the improved bound to be claimed.
    pub fn bound_regime(&self) -> bool {
        self.delta >= C_DELTA * self.eps1.max(self.eps2).sqrt()
    }
}

/// `q = 0`, twice each singular point, then uniform draws from the domain.
pub fn default_q_set(model: &DispersionModel, seed: u64) -> Vec<Vec<f64>> {
    let d = model.dim();
    let mut qs = vec![vec![0.0; d]];
    for s in find_singular_points(model).points {
        let mut q: Vec<f64> = s.location.iter().map(|x| 2.0 * x).collect();
        model.canonicalize(&mut q);
        if model.contains(&q) && qs.iter().all(|p| model.distance(p, &q) > 1e-9) {
            qs.push(q);
        }
    }
    qs.truncate(N_Q);
    let mut rng = mc::shard_rng(seed, 0);
    let mut q = vec![0.0; d];
    while qs.len() < N_Q {
        model.sample_domain(&mut rng, &mut q);
        qs.push(q.clone());
    }
    qs
}

fn grad_ok(model: &DispersionModel, k: &[f64], g: &mut [f64], delta: f64) -> (f64, bool) {
    let e = model.energy_gradient(k, g);
    (e, norm(g) >= delta)
}

/// Uniform draws kept when `|e| ≤ eps` and `|∇e| ≥ δ`; returns the pool and the
/// estimated shell volume.
fn shell_pool(
    model: &DispersionModel,
    eps: f64,
    delta: f64,
    size: usize,
    rng: &mut mc::Rng,
    which: usize,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let d = model.dim();
    let mut k = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut pool = Vec::with_capacity(size);
    let mut draws = 0u64;
    let cap = 2_000u64.max(size as u64) * 100_000;
    while pool.len() < size {
        if draws >= cap {
            return Err(OverlapError::EmptyShell(which, draws));
        }
        draws += 1;
        model.sample_domain(rng, &mut k);
        let (e, ok) = grad_ok(model, &k, &mut g, delta);
        if ok && e.abs() <= eps {
            pool.push(k.clone());
        }
    }
    Ok((pool, model.domain_volume() * size as f64 / draws as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct I2Estimate {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: Vec<f64>,
    pub delta: f64,
    /// Max over the q set, one per `ε₃`.
    pub values: Vec<VolumeEstimate>,
    pub q_argmax: Vec<usize>,
    /// `[ε₃][q]` means over shards.
    pub per_q: Vec<Vec<f64>>,
    pub shell_volumes: (f64, f64),
}

/// Each shard draws its own pools from the first two shells and evaluates the
/// third indicator on every pair. `n_pairs` is the total pair budget.
pub fn estimate_i2(spec: &OverlapSpec, n_pairs: u64, seed: u64) -> Result<I2Estimate> {
    spec.validate()?;
    let model = spec.model;
    let d = model.dim();
    let per_shard = (n_pairs / mc::SHARDS as u64).max(1);
    let pool = ((per_shard as f64).sqrt().ceil() as usize).max(1);
    let (v1, v2) = (f64::from(spec.v1), f64::from(spec.v2));
    let ne = spec.eps3.len();
    let nq = spec.q_set.len();
    let eps_max = spec.eps3.iter().copied().fold(0.0, f64::max);
    let shards = mc::run_shards(seed, n_pairs, |_, _, rng| -> Result<(Vec<f64>, f64, f64)> {
        let (ks, vk) = shell_pool(model, spec.eps1, spec.delta, pool, rng, 1)?;
        let (ps, vp) = shell_pool(model, spec.eps2, spec.delta, pool, rng, 2)?;
        let mut hits = vec![0u64; ne * nq];
        let mut t = vec![0.0; d];
        let mut g = vec![0.0; d];
        for (qi, q) in spec.q_set.iter().enumerate() {
            for k in &ks {
                for p in &ps {
                    for c in 0..d {
                        t[c] = v1 * k[c] + v2 * p[c] + q[c];
                    }
                    model.canonicalize(&mut t);
                    if !model.contains(&t) {
                        continue;
                    }
                    let (e, ok) = grad_ok(model, &t, &mut g, spec.delta);
                    let e = e.abs();
                    if !ok || e > eps_max {
                        continue;
                    }
                    for (ei, eps) in spec.eps3.iter().enumerate() {
                        if e <= *eps {
                            hits[ei * nq + qi] += 1;
                        }
                    }
                }
            }
        }
        let pairs = (ks.len() * ps.len()) as f64;
        Ok((hits.iter().map(|h| vk * vp * *h as f64 / pairs).collect(), vk, vp))
    });
    let shards: Vec<(Vec<f64>, f64, f64)> = shards.into_iter().collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(ne);
    let mut q_argmax = Vec::with_capacity(ne);
    let mut per_q = vec![vec![0.0; nq]; ne];
    let mut col = vec![0.0; shards.len()];
    for ei in 0..ne {
        let mut best = (f64::NEG_INFINITY, f64::NAN, 0);
        for qi in 0..nq {
            for (s, sh) in shards.iter().enumerate() {
                col[s] = sh.0[ei * nq + qi];
            }
            let (m, se) = mc::shard_mean_stderr(&col);
            per_q[ei][qi] = m;
            if m > best.0 {
                best = (m, se, qi);
            }
        }
        let note = (best.0 == 0.0).then(|| "no hits at any q".to_string());
        values.push(VolumeEstimate {
            value: best.0,
            stderr: best.1,
            n_samples: (pool * pool * mc::SHARDS) as u64,
            method: Method::Mc,
            note,
        });
        q_argmax.push(best.2);
    }
    let vk = shards.iter().map(|s| s.1).sum::<f64>() / shards.len() as f64;
    let vp = shards.iter().map(|s| s.2).sum::<f64>() / shards.len() as f64;
    Ok(I2Estimate {
        eps1: spec.eps1,
        eps2: spec.eps2,
        eps3: spec.eps3.clone(),
        delta: spec.delta,
        values,
        q_argmax,
        per_q,
        shell_volumes: (vk, vp),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub exponent: f64,
    /// Two standard errors.
    pub half_width: f64,
    pub prefactor: f64,
    /// Smallest and largest abscissa used.
    pub window: (f64, f64),
    pub used: usize,
}

/// Weighted log-log fit of `value ≈ C x^a`, weights from the standard errors.
/// Points with zero value are skipped.
pub fn fit_exponent(x: &[f64], est: &[VolumeEstimate]) -> Result<ExponentFit> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut sd = Vec::new();
    for (xi, e) in x.iter().zip(est) {
        if e.value > 0.0 && *xi > 0.0 {
            lx.push(xi.ln());
            ly.push(e.value.ln());
            let rel = e.stderr / e.value;
            sd.push(if rel.is_finite() && rel > 0.0 { rel } else { 1.0 });
        }
    }
    if lx.len() < 3 {
        return Err(OverlapError::TooFewPoints(lx.len()));
    }
    let f: LineFit = fit::wls(&lx, &ly, &sd).ok_or(OverlapError::TooFewPoints(lx.len()))?;
    let lo = lx.iter().copied().fold(f64::INFINITY, f64::min).exp();
    let hi = lx.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
    Ok(ExponentFit {
        exponent: f.slope,
        half_width: 2.0 * f.slope_stderr,
        prefactor: f.intercept.exp(),
        window: (lo, hi),
        used: lx.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WEstimate {
    pub zetas: Vec<f64>,
    pub values: Vec<VolumeEstimate>,
    pub q_argmax: Vec<usize>,
    /// `(Σ m)²` over the kept samples; `W` never exceeds it.
    pub mass_squared: f64,
    pub gamma: f64,
    /// Mass fraction of pairs with `sin θ(ω₁, ω₂) < ζ^{1−γ}`.
    pub exceptional_fraction: Vec<f64>,
    pub n_surface: usize,
}

/// Surface-surface analogue of `I₂`: `sup_q Σ m₁ m₂ 1(|e(v₁ω₁ + v₂ω₂ + q)| ≤ ζ)`.
/// Samples with `|∇e| < δ` are dropped. Shard `s` pairs samples `i ≡ s` with all
/// samples, so the shard mean is the full double sum.
#[allow(clippy::too_many_arguments)]
pub fn estimate_w(
    model: &DispersionModel,
    zetas: &[f64],
    q_set: &[Vec<f64>],
    signs: (i8, i8),
    delta: f64,
    kappa: f64,
    n_surface: usize,
    seed: u64,
) -> Result<WEstimate> {
    if zetas.is_empty() || zetas.iter().any(|z| !(*z > 0.0)) {
        return Err(OverlapError::InvalidSpec("ζ values must be positive".into()));
    }
    if q_set.is_empty() || q_set.iter().any(|q| q.len() != model.dim()) {
        return Err(OverlapError::InvalidSpec("bad q set".into()));
    }
    if ![signs.0, signs.1].iter().all(|v| *v == 1 || *v == -1) {
        return Err(OverlapError::InvalidSpec("signs must be ±1".into()));
    }
    if !(kappa > 0.0) {
        return Err(OverlapError::InvalidSpec("κ must be positive".into()));
    }
    let opts = SurfaceOptions { excision_radius: 0.0, singular_points: Some(Vec::new()), ..SurfaceOptions::default() };
    let set = sample_fermi_surface(model, n_surface, seed, &opts)?;
    let kept: Vec<_> = set
        .samples
        .into_iter()
        .filter(|s| delta == 0.0 || s.coarea_weight <= 1.0 / delta)
        .collect();
    if kept.is_empty() {
        return Err(OverlapError::EmptyShell(1, set.draws));
    }
    let mass: f64 = kept.iter().map(|s| s.measure).sum();
    let d = model.dim();
    let (v1, v2) = (f64::from(signs.0), f64::from(signs.1));
    let nz = zetas.len();
    let nq = q_set.len();
    let zmax = zetas.iter().copied().fold(0.0, f64::max);
    let gamma = kappa / (1.0 + kappa);
    let cuts: Vec<f64> = zetas.iter().map(|z| z.powf(1.0 - gamma)).collect();
    let ns = mc::SHARDS;
    let shards = mc::run_shards(seed, ns as u64, |s, _, _| {
        let mut acc = vec![0.0; nz * nq];
        let mut exc = vec![0.0; nz];
        let mut t = vec![0.0; d];
        for a in kept.iter().skip(s).step_by(ns) {
            for b in &kept {
                let w = a.measure * b.measure * ns as f64;
                let sn = sin_angle_unit_norms(&a.normal, &b.normal, 1.0, 1.0);
                for (zi, c) in cuts.iter().enumerate() {
                    if sn < *c {
                        exc[zi] += w;
                    }
                }
                for (qi, q) in q_set.iter().enumerate() {
                    for c in 0..d {
                        t[c] = v1 * a.point[c] + v2 * b.point[c] + q[c];
                    }
                    model.canonicalize(&mut t);
                    if !model.contains(&t) {
                        continue;
                    }
                    let e = model.energy(&t).abs();
                    if e > zmax {
                        continue;
                    }
                    for (zi, z) in zetas.iter().enumerate() {
                        if e <= *z {
                            acc[zi * nq + qi] += w;
                        }
                    }
                }
            }
        }
        (acc, exc)
    });
    let mut values = Vec::with_capacity(nz);
    let mut q_argmax = Vec::with_capacity(nz);
    let mut col = vec![0.0; ns];
    for zi in 0..nz {
        let mut best = (f64::NEG_INFINITY, f64::NAN, 0);
        for qi in 0..nq {
            for (s, sh) in shards.iter().enumerate() {
                col[s] = sh.0[zi * nq + qi];
            }
            let (m, se) = mc::shard_mean_stderr(&col);
            if m > best.0 {
                best = (m, se, qi);
            }
        }
        values.push(VolumeEstimate {
            value: best.0,
            stderr: best.1,
            n_samples: (kept.len() * kept.len()) as u64,
            method: Method::Mc,
            note: None,
        });
        q_argmax.push(best.2);
    }
    let exceptional_fraction = (0..nz)
        .map(|zi| shards.iter().map(|s| s.1[zi]).sum::<f64>() / ns as f64 / (mass * mass))
        .collect();
    Ok(WEstimate {
        zetas: zetas.to_vec(),
        values,
        q_argmax,
        mass_squared: mass * mass,
        gamma,
        exceptional_fraction,
        n_surface: kept.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverlapExponent {
    pub d: usize,
    pub kappa: f64,
    /// `κ/(1+κ)`.
    pub epsilon: f64,
    /// `(d−2)/(d+2) · κ/(1+κ)`.
    pub epsilon_final: f64,
}

pub fn epsilon_from_kappa(d: usize, kappa: f64) -> Result<OverlapExponent> {
    if d < 3 {
        return Err(OverlapError::InvalidSpec(format!("dimension {d} < 3 is not covered")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(OverlapError::InvalidSpec(format!("κ = {kappa} must be positive")));
    }
    let epsilon = kappa / (1.0 + kappa);
    Ok(OverlapExponent {
        d,
        kappa,
        epsilon,
        epsilon_final: (d as f64 - 2.0) / (d as f64 + 2.0) * epsilon,
    })
}

/// A q for which `v₁k + v₂p + q` always leaves a non-periodic domain.
pub fn far_q(model: &DispersionModel) -> Vec<f64> {
    let (lo, hi) = model.bounding_box();
    lo.iter().zip(&hi).map(|(a, b)| 3.0 * (b - a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;

    fn cone() -> DispersionModel {
        DispersionModel::quadratic(1, vec![1.0; 3], Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] }).unwrap()
    }

    fn spec(m: &DispersionModel, e1: f64, e2: f64, e3: Vec<f64>, v: (i8, i8), q: Vec<f64>) -> OverlapSpec<'_> {
        OverlapSpec { model: m, v1: v.0, v2: v.1, eps1: e1, eps2: e2, eps3: e3, delta: 0.0, q_set: vec![q] }
    }

    #[test]
    fn kappa_to_epsilon() {
        let e = epsilon_from_kappa(3, 1.0).unwrap();
        assert!((e.epsilon - 0.5).abs() < 1e-15 && (e.epsilon_final - 0.1).abs() < 1e-15);
        let e = epsilon_from_kappa(4, 2.0).unwrap();
        assert!((e.epsilon - 2.0 / 3.0).abs() < 1e-15 && (e.epsilon_final - 2.0 / 9.0).abs() < 1e-15);
        assert!(epsilon_from_kappa(3, 1e-12).unwrap().epsilon_final < 1e-12);
        assert!(epsilon_from_kappa(2, 1.0).is_err());
    }

    #[test]
    fn validation() {
        let m = cone();
        assert!(spec(&m, 0.1, 0.1, vec![0.05], (1, 1), vec![0.0; 3]).validate().is_err());
        assert!(spec(&m, 0.1, 0.1, vec![0.2], (2, 1), vec![0.0; 3]).validate().is_err());
        assert!(spec(&m, 0.1, 0.1, vec![0.2], (1, 1), vec![0.0; 2]).validate().is_err());
        assert!(spec(&m, 0.1, 0.1, vec![0.2], (1, -1), vec![0.0; 3]).validate().is_ok());
    }

    #[test]
    fn everything_on_the_torus() {
        let m = DispersionModel::new(crate::geometry::ModelKind::TightBinding2D { t: 0.25, tprime: 0.0, mu: 0.0 })
            .unwrap();
        let s = spec(&m, 1.0, 1.0, vec![1.0], (1, 1), vec![0.3, -0.2]);
        let r = estimate_i2(&s, 1600, 1).unwrap();
        let v = m.domain_volume();
        assert!((r.values[0].value - v * v).abs() < 1e-9 * v * v);
    }

    #[test]
    fn unreachable_third_shell() {
        let m = cone();
        let s = spec(&m, 0.1, 0.1, vec![0.1, 1.0], (1, 1), far_q(&m));
        let r = estimate_i2(&s, 1600, 2).unwrap();
        assert!(r.values.iter().all(|v| v.value == 0.0));
    }

    #[test]
    fn default_q_has_origin() {
        let m = cone();
        let qs = default_q_set(&m, 3);
        assert_eq!(qs.len(), N_Q);
        assert!(qs[0].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn w_ceiling() {
        let m = DispersionModel::new(crate::geometry::ModelKind::TightBinding2D { t: 0.25, tprime: 0.0, mu: 0.1 })
            .unwrap();
        let w = estimate_w(&m, &[0.05, 10.0], &[vec![0.0, 0.0]], (1, 1), 0.0, 1.0, 2000, 4).unwrap();
        assert!((w.values[1].value - w.mass_squared).abs() < 1e-9 * w.mass_squared);
        assert!(w.values[0].value <= w.mass_squared);
    }
}
