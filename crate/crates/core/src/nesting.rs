//! Flatness of the Fermi surface: the exponent `κ` in
//! `vol{ω′ : sin θ(ω, ω′) ≤ β} ≤ Z₀ β^κ` and the transversality floor
//! `sin θ(ω, ω′) ≥ z₁ β^{ρ′}` away from the parallel-normal set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::fit::{ols, wls};
use crate::geometry::{
    norm, sample_fermi_surface, sin_angle_unit_norms, DispersionModel, GeometryError, SurfaceOptions,
    SurfaceSample, R_EXC,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NestingError {
    #[error("invalid nesting spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("too few usable β values for a fit ({0})")]
    TooFewBetas(usize),
}

type Result<T> = std::result::Result<T, NestingError>;

/// Fewest samples a β must see at the extremal reference to enter the fit.
pub const MIN_CONTRIBUTING: usize = 10;

/// Sixteen log-spaced values in `[1e-3, 0.3]`, decreasing.
pub fn default_betas() -> Vec<f64> {
    let (lo, hi) = (1e-3f64.ln(), 0.3f64.ln());
    (0..16).map(|i| (hi + (lo - hi) * i as f64 / 15.0).exp()).collect()
}

#[derive(Clone, Debug)]
pub struct NestingSpec<'a> {
    pub model: &'a DispersionModel,
    pub betas: Vec<f64>,
    pub n_refs: usize,
    pub n_surface: usize,
    pub excision_radius: f64,
    /// Largest RMS residual of the log-log fit before nesting is suspected.
    pub fit_tol: f64,
    /// Smallest slope accepted as a genuine power law.
    pub kappa_floor: f64,
}

impl<'a> NestingSpec<'a> {
    pub fn new(model: &'a DispersionModel) -> Self {
        NestingSpec {
            model,
            betas: default_betas(),
            n_refs: 64,
            n_surface: 200_000,
            excision_radius: R_EXC,
            fit_tol: 0.15,
            kappa_floor: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(NestingError::InvalidSpec("β values must lie in (0, 1)".into()));
        }
        if self.n_surface < 1000 {
            return Err(NestingError::InvalidSpec(format!(
                "surface budget {} is below 1000",
                self.n_surface
            )));
        }
        if self.n_refs == 0 {
            return Err(NestingError::InvalidSpec("need at least one reference point".into()));
        }
        if !(self.excision_radius >= 0.0) {
            return Err(NestingError::InvalidSpec("excision radius must be non-negative".into()));
        }
        Ok(())
    }

    fn surface(&self, seed: u64) -> Result<Vec<SurfaceSample>> {
        self.validate()?;
        let opts = SurfaceOptions { excision_radius: self.excision_radius, ..SurfaceOptions::default() };
        let set = sample_fermi_surface(self.model, self.n_surface, seed, &opts)?;
        let kept: Vec<SurfaceSample> = set.samples.into_iter().filter(|s| !s.excised).collect();
        if kept.len() < 2 {
            return Err(NestingError::InvalidSpec("every surface sample was excised".into()));
        }
        Ok(kept)
    }
}

/// Evenly spread indices into a sample list.
fn reference_indices(n: usize, refs: usize) -> Vec<usize> {
    let r = refs.min(n);
    (0..r).map(|i| i * n / r).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    /// Two standard errors of the slope.
    pub half_width: f64,
    pub z0: f64,
    pub betas: Vec<f64>,
    pub measure_max: Vec<f64>,
    /// Samples behind each maximum.
    pub contributing: Vec<usize>,
    pub dropped_betas: Vec<f64>,
    pub rms_residual: f64,
    pub total_mass: f64,
    pub nesting_suspected: bool,
}

/// Relative error of a measure built from `count` samples, i.e. the error of its log.
fn count_sigma(count: usize) -> f64 {
    1.0 / (count as f64).sqrt()
}

/// Max over reference points of the measure of `{ω′ : sin θ ≤ β}`, fitted as a
/// power of `β`.
pub fn estimate_kappa(spec: &NestingSpec, seed: u64) -> Result<KappaEstimate> {
    let samples = spec.surface(seed)?;
    let total_mass: f64 = samples.iter().map(|s| s.measure).sum();
    let nb = spec.betas.len();
    // The maximizing reference is picked on one half of the samples and measured on
    // the other, so the max does not select for upward noise.
    let mut half_mass = [0.0f64; 2];
    for (i, s) in samples.iter().enumerate() {
        half_mass[i % 2] += s.measure;
    }
    let mut pick = [vec![f64::NEG_INFINITY; nb], vec![f64::NEG_INFINITY; nb]];
    let mut eval = [vec![(0.0f64, 0usize); nb], vec![(0.0f64, 0usize); nb]];
    let mut sins: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut cums: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for r in reference_indices(samples.len(), spec.n_refs) {
        let n0 = &samples[r].normal;
        for h in 0..2 {
            let v = &mut sins[h];
            v.clear();
            v.extend(samples.iter().skip(h).step_by(2).map(|s| (sin_angle_unit_norms(n0, &s.normal, 1.0, 1.0), s.measure)));
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            let c = &mut cums[h];
            c.clear();
            let mut acc = 0.0;
            for (_, m) in v.iter() {
                acc += m;
                c.push(acc);
            }
        }
        for (i, b) in spec.betas.iter().enumerate() {
            let mut m = [(0.0, 0); 2];
            for h in 0..2 {
                let c = sins[h].partition_point(|x| x.0 <= *b);
                m[h] = (if c == 0 { 0.0 } else { cums[h][c - 1] }, c);
            }
            for h in 0..2 {
                if m[h].0 > pick[h][i] {
                    pick[h][i] = m[h].0;
                    eval[h][i] = m[1 - h];
                }
            }
        }
    }
    let mut best = vec![0.0f64; nb];
    let mut best_count = vec![0usize; nb];
    for i in 0..nb {
        // eval[h] was measured on half 1 - h
        best[i] = 0.5 * (eval[0][i].0 * total_mass / half_mass[1] + eval[1][i].0 * total_mass / half_mass[0]);
        best_count[i] = eval[0][i].1 + eval[1][i].1;
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut sigma = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..nb {
        if best_count[i] < MIN_CONTRIBUTING {
            dropped.push(spec.betas[i]);
        } else {
            x.push(spec.betas[i].ln());
            y.push(best[i].ln());
            sigma.push(count_sigma(best_count[i]));
        }
    }
    if x.len() < 3 {
        return Err(NestingError::TooFewBetas(x.len()));
    }
    let f = wls(&x, &y, &sigma).ok_or(NestingError::TooFewBetas(x.len()))?;
    let rms = (f.rss / x.len() as f64).sqrt();
    Ok(KappaEstimate {
        kappa: f.slope,
        half_width: 2.0 * f.slope_stderr,
        z0: f.intercept.exp(),
        betas: spec.betas.clone(),
        measure_max: best,
        contributing: best_count,
        dropped_betas: dropped,
        rms_residual: rms,
        total_mass,
        nesting_suspected: f.slope < spec.kappa_floor || rms > spec.fit_tol,
    })
}

/// Candidates for the parallel-normal set are samples with `sin θ` below this.
const CANDIDATE_SIN: f64 = 0.02;
/// Spacing of the refined parallel-normal point set.
const D_SPACING: f64 = 0.002;
/// Longest segment tried between parallel-normal points.
const MAX_LINK: f64 = 0.1;
/// References used for the transversality floor.
const FLOOR_REFS: usize = 16;

/// Gauss-Newton onto `{e = 0, n(x) ∥ n₀}` from `x`.
fn refine_parallel(model: &DispersionModel, n0: &[f64], x: &mut [f64]) -> bool {
    let d = model.dim();
    let mut g = vec![0.0; d];
    let resid = |x: &[f64], g: &mut [f64]| -> Option<DVector<f64>> {
        let e = model.energy_gradient(x, g);
        let gn = norm(g);
        if gn < 1e-12 {
            return None;
        }
        let dot: f64 = g.iter().zip(n0).map(|(a, b)| a * b).sum::<f64>() / gn;
        let sign = if dot >= 0.0 { 1.0 } else { -1.0 };
        let mut r = DVector::zeros(d + 1);
        r[0] = e;
        for i in 0..d {
            r[i + 1] = g[i] / gn - sign * n0[i];
        }
        Some(r)
    };
    for _ in 0..30 {
        let Some(r0) = resid(x, &mut g) else { return false };
        if r0.norm() < 1e-11 {
            return model.contains(x);
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(d + 1, d);
        let mut xp = x.to_vec();
        for c in 0..d {
            xp[c] = x[c] + h;
            let Some(rp) = resid(&xp, &mut g) else { return false };
            xp[c] = x[c];
            for r in 0..=d {
                jac[(r, c)] = (rp[r] - r0[r]) / h;
            }
        }
        let svd = jac.svd(true, true);
        let cut = 1e-6 * svd.singular_values.max();
        let Ok(step) = svd.solve(&r0, cut) else { return false };
        for i in 0..d {
            x[i] -= step[i];
        }
        model.canonicalize(x);
    }
    let r = resid(x, &mut g);
    r.is_some_and(|r| r.norm() < 1e-7) && model.contains(x)
}

/// Refined, deduplicated points of `D(ω)` and the segments joining neighbours.
/// Two points are joined when the refined midpoint stays on the chord.
fn parallel_set(
    model: &DispersionModel,
    samples: &[SurfaceSample],
    reference: &SurfaceSample,
) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let n0 = &reference.normal;
    let mut pts: Vec<Vec<f64>> = vec![reference.point.clone()];
    for s in samples {
        if sin_angle_unit_norms(n0, &s.normal, 1.0, 1.0) > CANDIDATE_SIN {
            continue;
        }
        let mut x = s.point.clone();
        if !refine_parallel(model, n0, &mut x) {
            continue;
        }
        if pts.iter().all(|p| model.distance(p, &x) > 0.5 * D_SPACING) {
            pts.push(x);
        }
    }
    let d = model.dim();
    let mut segs = Vec::new();
    for i in 0..pts.len() {
        let mut near: Vec<(f64, usize)> = (0..pts.len())
            .filter(|j| *j != i)
            .map(|j| (model.distance(&pts[i], &pts[j]), j))
            .filter(|x| x.0 <= MAX_LINK)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(len, j) in near.iter().take(8) {
            let mid: Vec<f64> = (0..d).map(|c| 0.5 * (pts[i][c] + pts[j][c])).collect();
            if !model.contains(&mid) {
                continue;
            }
            let mut y = mid.clone();
            if refine_parallel(model, n0, &mut y) && model.distance(&mid, &y) < 1e-3 + 0.05 * len {
                segs.push((i.min(j), i.max(j)));
            }
        }
    }
    segs.sort_unstable();
    segs.dedup();
    (pts, segs)
}

fn dist_to_set(model: &DispersionModel, x: &[f64], pts: &[Vec<f64>], segs: &[(usize, usize)]) -> f64 {
    let pd: Vec<f64> = pts.iter().map(|p| model.distance(p, x)).collect();
    let mut best = pd.iter().copied().fold(f64::INFINITY, f64::min);
    let d = x.len();
    for &(i, j) in segs {
        let (a, b) = (&pts[i], &pts[j]);
        let mut ab = vec![0.0; d];
        let mut ax = vec![0.0; d];
        let mut l2 = 0.0;
        for c in 0..d {
            ab[c] = b[c] - a[c];
            l2 += ab[c] * ab[c];
        }
        if l2 == 0.0 || pd[i].min(pd[j]) - 0.5 * l2.sqrt() >= best {
            continue;
        }
        for c in 0..d {
            ax[c] = x[c] - a[c];
        }
        let t = (ab.iter().zip(&ax).map(|(u, v)| u * v).sum::<f64>() / l2).clamp(0.0, 1.0);
        let dd: f64 = (0..d).map(|c| (ax[c] - t * ab[c]).powi(2)).sum::<f64>().sqrt();
        best = best.min(dd);
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransversalityRecord {
    pub z1: f64,
    pub rho_prime: f64,
    pub rho_prime_half_width: f64,
    /// Exponent of the measure within distance `β` of the parallel-normal set.
    pub kappa_prime: f64,
    pub kappa_prime_half_width: f64,
    pub kappa_from_parts: f64,
    pub betas: Vec<f64>,
    /// `min sin θ` over samples at distance at least `β`, minimized over references.
    pub envelope: Vec<f64>,
    pub near_measure: Vec<f64>,
    /// β values with nothing at distance at least β.
    pub no_data: Vec<f64>,
    pub nonmonotone: bool,
    pub parallel_points: usize,
}

/// Fits `min{sin θ : dist(ω′, D(ω)) ≥ β} ≈ z₁ β^{ρ′}` and the measure of the
/// complementary tube `≈ β^{κ′}`.
pub fn check_transversality_floor(spec: &NestingSpec, seed: u64) -> Result<TransversalityRecord> {
    let samples = spec.surface(seed)?;
    let model = spec.model;
    let nb = spec.betas.len();
    let mut envelope = vec![f64::INFINITY; nb];
    let mut near = vec![0.0f64; nb];
    let mut near_count = vec![0usize; nb];
    let mut dp = 0;
    let mut dists: Vec<(f64, f64, f64)> = Vec::with_capacity(samples.len());
    for r in reference_indices(samples.len(), FLOOR_REFS.min(spec.n_refs)) {
        let n0 = samples[r].normal.clone();
        let (pts, segs) = parallel_set(model, &samples, &samples[r]);
        if pts.is_empty() {
            continue;
        }
        dp = dp.max(pts.len());
        dists.clear();
        for s in &samples {
            let dd = dist_to_set(model, &s.point, &pts, &segs);
            dists.push((dd, sin_angle_unit_norms(&n0, &s.normal, 1.0, 1.0), s.measure));
        }
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        // suffix minima of sin θ and prefix sums of measure
        let mut suffix = vec![f64::INFINITY; dists.len() + 1];
        for i in (0..dists.len()).rev() {
            suffix[i] = suffix[i + 1].min(dists[i].1);
        }
        let mut cum = Vec::with_capacity(dists.len());
        let mut acc = 0.0;
        for x in &dists {
            acc += x.2;
            cum.push(acc);
        }
        for (i, b) in spec.betas.iter().enumerate() {
            let c = dists.partition_point(|x| x.0 < *b);
            envelope[i] = envelope[i].min(suffix[c]);
            let c2 = dists.partition_point(|x| x.0 <= *b);
            let m = if c2 == 0 { 0.0 } else { cum[c2 - 1] };
            if m > near[i] {
                near[i] = m;
                near_count[i] = c2;
            }
        }
    }
    if dp == 0 {
        return Err(NestingError::InvalidSpec("no parallel-normal points were found".into()));
    }
    let no_data: Vec<f64> = (0..nb).filter(|i| !envelope[*i].is_finite()).map(|i| spec.betas[i]).collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let (mut xk, mut yk, mut sk) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..nb {
        let b = spec.betas[i].ln();
        if envelope[i].is_finite() && envelope[i] > 0.0 {
            x.push(b);
            y.push(envelope[i].ln());
        }
        if near_count[i] >= MIN_CONTRIBUTING {
            xk.push(b);
            yk.push(near[i].ln());
            sk.push(count_sigma(near_count[i]));
        }
    }
    if x.len() < 3 || xk.len() < 3 {
        return Err(NestingError::TooFewBetas(x.len().min(xk.len())));
    }
    let f = ols(&x, &y).ok_or(NestingError::TooFewBetas(x.len()))?;
    let fk = wls(&xk, &yk, &sk).ok_or(NestingError::TooFewBetas(xk.len()))?;
    // β decreasing should give a nonincreasing envelope, up to 10%
    let mut order: Vec<usize> = (0..nb).filter(|i| envelope[*i].is_finite()).collect();
    order.sort_by(|a, b| spec.betas[*a].total_cmp(&spec.betas[*b]));
    let nonmonotone = order.windows(2).any(|w| envelope[w[1]] < 0.9 * envelope[w[0]]);
    Ok(TransversalityRecord {
        z1: f.intercept.exp(),
        rho_prime: f.slope,
        rho_prime_half_width: 2.0 * f.slope_stderr,
        kappa_prime: fk.slope,
        kappa_prime_half_width: 2.0 * fk.slope_stderr,
        kappa_from_parts: fk.slope / f.slope,
        betas: spec.betas.clone(),
        envelope,
        near_measure: near,
        no_data,
        nonmonotone,
        parallel_points: dp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, ModelKind};

    #[test]
    fn beta_grid() {
        let b = default_betas();
        assert_eq!(b.len(), 16);
        assert!((b[0] - 0.3).abs() < 1e-12 && (b[15] - 1e-3).abs() < 1e-12);
        assert!(b.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn spec_checks() {
        let m = DispersionModel::quadratic(1, vec![1.0; 3], Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] })
            .unwrap();
        let mut s = NestingSpec::new(&m);
        s.n_surface = 10;
        assert!(s.validate().is_err());
        let mut s = NestingSpec::new(&m);
        s.betas = vec![1.5];
        assert!(s.validate().is_err());
    }

    #[test]
    fn refine_lands_on_cone_ray() {
        let m = DispersionModel::quadratic(1, vec![1.0; 3], Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] })
            .unwrap();
        let w = [0.5, 0.3, 0.4];
        let n0: Vec<f64> = {
            let v = [0.5, -0.3, -0.4];
            let l = norm(&v);
            v.iter().map(|x| x / l).collect()
        };
        let mut x = vec![0.52, 0.31, 0.39];
        assert!(refine_parallel(&m, &n0, &mut x));
        // the parallel set of a cone is the line through ω
        let t = x[0] / w[0];
        for i in 0..3 {
            assert!((x[i] - t * w[i]).abs() < 1e-8);
        }
    }

    fn cone(d: usize, m: usize) -> DispersionModel {
        DispersionModel::quadratic(m, vec![1.0; d], Domain::Box { lo: vec![-1.0; d], hi: vec![1.0; d] }).unwrap()
    }

    #[test]
    fn cone_kappa_is_one() {
        let m = cone(3, 1);
        let mut s = NestingSpec::new(&m);
        s.n_surface = 40_000;
        let k = estimate_kappa(&s, 7).unwrap();
        assert!((k.kappa - 1.0).abs() < 0.15, "{k:?}");
        assert!(!k.nesting_suspected);
    }

    #[test]
    fn flat_surface_is_flagged() {
        let m = DispersionModel::new(ModelKind::Linear {
            coefficients: vec![1.0, 0.0, 0.0],
            offset: 0.0,
            domain: Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] },
        })
        .unwrap();
        let mut s = NestingSpec::new(&m);
        s.n_surface = 5_000;
        let k = estimate_kappa(&s, 1).unwrap();
        assert!(k.nesting_suspected);
        for v in &k.measure_max {
            assert!((v / k.total_mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cone_floor_is_linear() {
        let m = cone(3, 1);
        let mut s = NestingSpec::new(&m);
        s.n_surface = 20_000;
        let r = check_transversality_floor(&s, 3).unwrap();
        assert!((r.rho_prime - 1.0).abs() < 0.15, "{r:?}");
    }
}
