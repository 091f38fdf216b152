//! Scale-decomposed propagators and a numerical probe of the second-order
//! self-energy.
//!
//! The cutoff is written in `y = log_M |u| − j` with `u = i k₀ − e(k)`. A smooth
//! step `ψ` equals 1 for `y ≤ −0.75` and 0 for `y ≥ −0.25`, built from
//! `S(t) = g(t)/(g(t) + g(1−t))`, `g(t) = exp(−1/t)`. Scale `j < −1` carries
//! `φ(y) = ψ(y) − ψ(y+1)`, supported in `[−1.75, −0.25]` with plateau
//! `[−1.25, −0.75]`. The top scale `j = −1` carries `1 − ψ(y + 1)` cut sharply
//! at `|u| = M⁻¹`, which is where the ultraviolet truncation sits. The sum over
//! `j_0 ≤ j ≤ −1` telescopes to exactly 1 on `M^{j_0−1.25} ≤ |u| ≤ M⁻¹`.

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DispersionModel, Domain};
use crate::mc::{run_shards, shard_mean_stderr, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiscaleError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("variance looks divergent: {0}")]
    DivergentVariance(String),
}

type Result<T> = std::result::Result<T, MultiscaleError>;

fn smooth_unit(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// Smooth step: 1 for `y ≤ −0.75`, 0 for `y ≥ −0.25`.
pub fn psi(y: f64) -> f64 {
    1.0 - smooth_unit(2.0 * (y + 0.75))
}

/// Bump for interior scales, `ψ(y) − ψ(y + 1)`.
pub fn phi(y: f64) -> f64 {
    psi(y) - psi(y + 1.0)
}

fn check_base(base: f64) -> Result<()> {
    if base > 1.0 && base.is_finite() {
        Ok(())
    } else {
        Err(MultiscaleError::Argument(format!("scale base {base} must exceed 1")))
    }
}

/// Cutoff weight of scale `j` at `|u|`.
pub fn scale_cutoff(base: f64, j: i32, u_abs: f64) -> f64 {
    if !(u_abs > 0.0) {
        return 0.0;
    }
    let y = u_abs.ln() / base.ln() - f64::from(j);
    if j == -1 {
        if y > 0.0 {
            0.0
        } else {
            1.0 - psi(y + 1.0)
        }
    } else {
        phi(y)
    }
}

/// `Σ_{j_floor ≤ j ≤ −1}` of the scale cutoffs, in telescoped form.
pub fn cutoff_sum(base: f64, j_floor: i32, u_abs: f64) -> f64 {
    if !(u_abs > 0.0) {
        return 0.0;
    }
    let l = u_abs.ln() / base.ln();
    let top = if l <= -1.0 { 1.0 } else { 0.0 };
    top - psi(l - f64::from(j_floor) + 1.0)
}

/// Lower end of the range where the scales `j_floor..=−1` sum to one.
pub fn covered_lower(base: f64, j_floor: i32) -> f64 {
    base.powf(f64::from(j_floor) - 1.25)
}

#[derive(Clone, Copy, Debug)]
pub struct ScalePropagator<'a> {
    pub model: &'a DispersionModel,
    pub base: f64,
    pub j: i32,
}

impl<'a> ScalePropagator<'a> {
    pub fn new(model: &'a DispersionModel, base: f64, j: i32) -> Result<Self> {
        check_base(base)?;
        if j >= 0 {
            return Err(MultiscaleError::Argument(format!("scale {j} must be negative")));
        }
        Ok(ScalePropagator { model, base, j })
    }

    /// `f_j(|u|)/u` with `u = i k₀ − e(k)`; zero outside the annulus.
    pub fn eval(&self, k0: f64, k: &[f64]) -> Complex64 {
        let u = Complex64::new(-self.model.energy(k), k0);
        let f = scale_cutoff(self.base, self.j, u.norm());
        if f == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            f / u
        }
    }

    /// Closed annulus outside which the propagator vanishes.
    pub fn support(&self) -> (f64, f64) {
        let j = f64::from(self.j);
        (self.base.powf(j - 2.0), self.base.powf(j))
    }
}

/// Interaction kernel entering the sunset as `|v̂|²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Interaction {
    Constant { value: f64 },
    /// `A · exp(−(|k|² + |p|² + |r|²)/(2 range²))` in the spatial momenta.
    Gaussian { amplitude: f64, range: f64 },
}

impl Interaction {
    fn squared(&self, k: &[f64], p: &[f64], r: &[f64]) -> f64 {
        match *self {
            Interaction::Constant { value } => value * value,
            Interaction::Gaussian { amplitude, range } => {
                let s: f64 = k.iter().chain(p).chain(r).map(|x| x * x).sum();
                let v = amplitude * (-s / (2.0 * range * range)).exp();
                v * v
            }
        }
    }

    fn is_zero(&self) -> bool {
        match *self {
            Interaction::Constant { value } => value == 0.0,
            Interaction::Gaussian { amplitude, .. } => amplitude == 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SelfEnergyOptions {
    pub base: f64,
    pub j_floor: i32,
}

impl Default for SelfEnergyOptions {
    fn default() -> Self {
        SelfEnergyOptions { base: 2.0, j_floor: -8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfEnergyEstimate {
    pub value: Complex64,
    /// Standard error of the complex mean, `sqrt(se_re² + se_im²)`.
    pub stderr: f64,
    pub shards: Vec<Complex64>,
}

impl SelfEnergyEstimate {
    fn from_shards(shards: Vec<Complex64>) -> Self {
        let re: Vec<f64> = shards.iter().map(|z| z.re).collect();
        let im: Vec<f64> = shards.iter().map(|z| z.im).collect();
        let (mr, sr) = shard_mean_stderr(&re);
        let (mi, si) = shard_mean_stderr(&im);
        SelfEnergyEstimate { value: Complex64::new(mr, mi), stderr: sr.hypot(si), shards }
    }
}

/// Frequencies are drawn from an equal mixture of the uniform law on `[−1, 1]`
/// and the law with density `∝ 1/|k₀|` on `a ≤ |k₀| ≤ 1`. That second part
/// cancels the `1/|u| ≤ 1/|k₀|` growth of each propagator.
struct FreqSampler {
    a: f64,
    log_span: f64,
}

impl FreqSampler {
    fn new(a: f64) -> Self {
        FreqSampler { a, log_span: -a.ln() }
    }
    fn draw(&self, rng: &mut Rng) -> f64 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        if rng.random::<bool>() {
            rng.random_range(-1.0..1.0)
        } else {
            sign * (-(self.log_span * rng.random::<f64>())).exp()
        }
    }
    fn density(&self, x: f64) -> f64 {
        let t = x.abs();
        let log_part = if t >= self.a && t <= 1.0 { 1.0 / (2.0 * t * self.log_span) } else { 0.0 };
        0.25 + 0.5 * log_part
    }
}

/// Sunset values at several external momenta `q = (q₀, q⃗)` and infrared floors,
/// all from the same samples. Output is indexed `[floor][q]`.
pub fn self_energy_batch(
    model: &DispersionModel,
    vhat: &Interaction,
    qs: &[Vec<f64>],
    j_floors: &[i32],
    base: f64,
    n_samples: u64,
    seed: u64,
) -> Result<Vec<Vec<SelfEnergyEstimate>>> {
    check_base(base)?;
    let d = model.dim();
    if j_floors.is_empty() || j_floors.iter().any(|j| *j > -4) {
        return Err(MultiscaleError::Argument("infrared floors must be at most -4".into()));
    }
    for q in qs {
        if q.len() != d + 1 {
            return Err(MultiscaleError::Argument(format!("q needs {} components", d + 1)));
        }
        if !model.contains(&q[1..]) {
            return Err(MultiscaleError::Argument(format!("q = {q:?} is outside the domain")));
        }
    }
    let (nf, nq) = (j_floors.len(), qs.len());
    if vhat.is_zero() {
        let zero = SelfEnergyEstimate::from_shards(vec![Complex64::new(0.0, 0.0); crate::mc::SHARDS]);
        return Ok(vec![vec![zero; nq]; nf]);
    }
    let lowest = *j_floors.iter().min().unwrap();
    let sampler = FreqSampler::new(base.powf(f64::from(lowest) - 2.0));
    let vol = model.domain_volume();
    let torus = matches!(model.domain(), Domain::Torus);

    let shard_out = run_shards(seed, n_samples, |_, budget, rng| {
        let mut sums = vec![Complex64::new(0.0, 0.0); nf * nq];
        let mut sq = 0.0;
        let mut max_sq: f64 = 0.0;
        let mut k = vec![0.0; d];
        let mut p = vec![0.0; d];
        let mut r = vec![0.0; d];
        for _ in 0..budget {
            model.sample_domain(rng, &mut k);
            model.sample_domain(rng, &mut p);
            let k0 = sampler.draw(rng);
            let p0 = sampler.draw(rng);
            let w0 = vol * vol / (sampler.density(k0) * sampler.density(p0));
            let (ek, ep) = (model.energy(&k), model.energy(&p));
            for (iq, q) in qs.iter().enumerate() {
                for i in 0..d {
                    r[i] = q[i + 1] - k[i] - p[i];
                }
                if !torus && !model.contains(&r) {
                    continue;
                }
                let er = model.energy(&r);
                let wv = 0.5 * w0 * vhat.squared(&k, &p, &r);
                for (jf_i, &jf) in j_floors.iter().enumerate() {
                    // antithetic pair (k₀, p₀) and (−k₀, −p₀); the frequency density is even
                    let mut v = Complex64::new(0.0, 0.0);
                    for sg in [1.0, -1.0] {
                        let uk = Complex64::new(-ek, sg * k0);
                        let up = Complex64::new(-ep, sg * p0);
                        let ur = Complex64::new(-er, q[0] - sg * (k0 + p0));
                        let c = cutoff_sum(base, jf, uk.norm())
                            * cutoff_sum(base, jf, up.norm())
                            * cutoff_sum(base, jf, ur.norm());
                        if c != 0.0 {
                            v += wv * c / (uk * up * ur);
                        }
                    }
                    if v == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    sums[jf_i * nq + iq] += v;
                    if jf_i == 0 && iq == 0 {
                        let s = v.norm_sqr();
                        sq += s;
                        max_sq = max_sq.max(s);
                    }
                }
            }
        }
        let n = budget.max(1) as f64;
        (sums.into_iter().map(|s| s / n).collect::<Vec<_>>(), sq, max_sq)
    });

    let total_sq: f64 = shard_out.iter().map(|s| s.1).sum();
    let max_sq = shard_out.iter().map(|s| s.2).fold(0.0, f64::max);
    if n_samples >= 10_000 && total_sq > 0.0 && max_sq > 0.5 * total_sq {
        return Err(MultiscaleError::DivergentVariance(format!(
            "one sample carries {:.0}% of the second moment",
            100.0 * max_sq / total_sq
        )));
    }
    Ok((0..nf)
        .map(|fi| {
            (0..nq)
                .map(|qi| {
                    SelfEnergyEstimate::from_shards(shard_out.iter().map(|s| s.0[fi * nq + qi]).collect())
                })
                .collect()
        })
        .collect())
}

/// Second-order (sunset) self-energy
/// `∫∫ C(k) C(p) C(q − k − p) |v̂|² dk dp`, with `C = Σ_{j_floor ≤ j < 0} C_j`,
/// frequencies in `[−1, 1]` and momenta in the model domain.
pub fn second_order_self_energy(
    model: &DispersionModel,
    vhat: &Interaction,
    q: &[f64],
    n_samples: u64,
    seed: u64,
    opts: SelfEnergyOptions,
) -> Result<SelfEnergyEstimate> {
    let mut out = self_energy_batch(model, vhat, &[q.to_vec()], &[opts.j_floor], opts.base, n_samples, seed)?;
    Ok(out.remove(0).remove(0))
}

/// Value at a point as per-shard estimates (a deterministic function repeats
/// one value).
pub type ShardedValue = Vec<Complex64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProbeStatus {
    Bounded,
    Growth,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityProbe {
    pub s: f64,
    pub displacements: Vec<f64>,
    pub quotients: Vec<f64>,
    pub quotient_stderr: Vec<f64>,
    pub sup_abs: f64,
    /// Central difference in `q₀` at the smallest displacement.
    pub d_q0: f64,
    pub growth: bool,
    pub status: ProbeStatus,
}

/// Octaves the growth test looks back over.
pub const PROBE_OCTAVES: usize = 4;

/// Hölder quotients `|G(q + p_i) − G(q)|/|p_i|^s` for `|p_i| = 2^{−i}` along
/// `direction` (a spatial unit vector), from an evaluator returning per-shard
/// values at a list of points. Growth is flagged when the quotient rises at
/// every step of the last four octaves and by more than a factor 2 overall.
pub fn holder_probe_with<F>(
    q: &[f64],
    direction: &[f64],
    s: f64,
    octaves: std::ops::RangeInclusive<u32>,
    domain_reach: f64,
    mut eval: F,
) -> Result<RegularityProbe>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<ShardedValue>>,
{
    if !(s > 0.0 && s < 1.0) {
        return Err(MultiscaleError::Argument(format!("exponent {s} must lie in (0, 1)")));
    }
    if q.len() != direction.len() + 1 {
        return Err(MultiscaleError::Argument("direction must be spatial".into()));
    }
    let dn = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (dn - 1.0).abs() > 1e-9 {
        return Err(MultiscaleError::Argument("direction must be a unit vector".into()));
    }
    let steps: Vec<u32> = octaves.collect();
    if steps.len() < PROBE_OCTAVES + 1 {
        return Err(MultiscaleError::Argument(format!("need at least {} displacements", PROBE_OCTAVES + 1)));
    }
    let disp: Vec<f64> = steps.iter().map(|i| 2f64.powi(-(*i as i32))).collect();
    let largest = disp.iter().cloned().fold(0.0, f64::max);
    if largest > domain_reach {
        return Err(MultiscaleError::Argument(format!(
            "displacement {largest} exceeds the domain reach {domain_reach}"
        )));
    }
    let hmin = disp.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut pts = vec![q.to_vec()];
    for h in &disp {
        let mut x = q.to_vec();
        for (i, di) in direction.iter().enumerate() {
            x[i + 1] += h * di;
        }
        pts.push(x);
    }
    let mut up = q.to_vec();
    up[0] += hmin;
    let mut dn_pt = q.to_vec();
    dn_pt[0] -= hmin;
    pts.push(up);
    pts.push(dn_pt);
    let vals = eval(&pts)?;
    let mean = |v: &ShardedValue| v.iter().sum::<Complex64>() / v.len() as f64;
    let base = &vals[0];
    let mut quotients = Vec::new();
    let mut qerr = Vec::new();
    for (i, h) in disp.iter().enumerate() {
        let diffs: Vec<Complex64> = vals[i + 1].iter().zip(base).map(|(a, b)| a - b).collect();
        let re: Vec<f64> = diffs.iter().map(|z| z.re).collect();
        let im: Vec<f64> = diffs.iter().map(|z| z.im).collect();
        let (_, sr) = shard_mean_stderr(&re);
        let (_, si) = shard_mean_stderr(&im);
        let scale = h.powf(s);
        quotients.push(mean(&diffs).norm() / scale);
        let se = sr.hypot(si);
        qerr.push(if se.is_finite() { se / scale } else { 0.0 });
    }
    let sup_abs = vals[..=disp.len()].iter().map(|v| mean(v).norm()).fold(0.0, f64::max);
    let n = vals.len();
    let d_q0 = (mean(&vals[n - 2]) - mean(&vals[n - 1])).norm() / (2.0 * hmin);

    // displacements are ordered by decreasing size
    let mut order: Vec<usize> = (0..disp.len()).collect();
    order.sort_by(|a, b| disp[*b].total_cmp(&disp[*a]));
    let tail: Vec<usize> = order[order.len() - PROBE_OCTAVES - 1..].to_vec();
    let tq: Vec<f64> = tail.iter().map(|i| quotients[*i]).collect();
    let growth = tq.windows(2).all(|w| w[1] > w[0]) && tq[PROBE_OCTAVES] > 2.0 * tq[0];
    let noisy = tail.iter().any(|i| qerr[*i] > 0.5 * quotients[*i]);
    let status = if noisy {
        ProbeStatus::Inconclusive
    } else if growth {
        ProbeStatus::Growth
    } else {
        ProbeStatus::Bounded
    };
    Ok(RegularityProbe {
        s,
        displacements: disp,
        quotients,
        quotient_stderr: qerr,
        sup_abs,
        d_q0,
        growth,
        status,
    })
}

/// Hölder probe of the sunset with common random numbers across all points.
#[allow(clippy::too_many_arguments)]
pub fn holder_probe(
    model: &DispersionModel,
    vhat: &Interaction,
    q: &[f64],
    direction: &[f64],
    s: f64,
    octaves: std::ops::RangeInclusive<u32>,
    n_samples: u64,
    seed: u64,
    opts: SelfEnergyOptions,
) -> Result<RegularityProbe> {
    let (lo, hi) = model.bounding_box();
    let reach = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    holder_probe_with(q, direction, s, octaves, reach, |pts| {
        let est = self_energy_batch(model, vhat, pts, &[opts.j_floor], opts.base, n_samples, seed)?;
        Ok(est.into_iter().next().unwrap().into_iter().map(|e| e.shards).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;

    fn cone() -> DispersionModel {
        DispersionModel::quadratic(1, vec![1.0, 1.0, 1.0], Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] })
            .unwrap()
    }

    #[test]
    fn step_shape() {
        assert_eq!(psi(-0.75), 1.0);
        assert_eq!(psi(-0.25), 0.0);
        assert_eq!(phi(-1.0), 1.0);
        assert_eq!(phi(-1.8), 0.0);
        assert_eq!(phi(-0.2), 0.0);
        assert!(phi(-0.5) > 0.0 && phi(-0.5) < 1.0);
    }

    #[test]
    fn propagator_support() {
        let m = cone();
        let c = ScalePropagator::new(&m, 2.0, -3).unwrap();
        // |u| = M^{j+1}
        assert_eq!(c.eval(0.25, &[0.0; 3]), Complex64::new(0.0, 0.0));
        // |u| = M^{j−1}: plateau
        let z = c.eval(1.0 / 16.0, &[0.0; 3]);
        assert_eq!(z, 1.0 / Complex64::new(0.0, 1.0 / 16.0));
        assert_eq!(c.eval(0.0, &[0.0; 3]), Complex64::new(0.0, 0.0));
        assert!(ScalePropagator::new(&m, 2.0, 0).is_err());
        assert!(ScalePropagator::new(&m, 1.0, -1).is_err());
    }

    #[test]
    fn telescoped_sum_matches_terms() {
        for &u in &[1.1e-4, 3e-3, 0.1, 0.3, 0.5] {
            let direct: f64 = (-12..=-1).map(|j| scale_cutoff(2.0, j, u)).sum();
            assert!((direct - cutoff_sum(2.0, -12, u)).abs() < 1e-14);
            assert!((direct - 1.0).abs() < 1e-12);
        }
        assert_eq!(cutoff_sum(2.0, -12, 0.6), 0.0);
    }

    #[test]
    fn zero_interaction() {
        let m = cone();
        let e = second_order_self_energy(
            &m,
            &Interaction::Constant { value: 0.0 },
            &[0.0, 0.5, 0.0, 0.5],
            100,
            1,
            SelfEnergyOptions::default(),
        )
        .unwrap();
        assert_eq!(e.value, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn step_function_flags_growth() {
        let p = holder_probe_with(&[0.0, 0.0], &[1.0], 0.5, 2..=10, 1.0, |pts| {
            Ok(pts
                .iter()
                .map(|x| vec![Complex64::new(if x[1] > 0.0 { 1.0 } else { 0.0 }, 0.0); 4])
                .collect())
        })
        .unwrap();
        assert!(p.growth);
        assert_eq!(p.status, ProbeStatus::Growth);
    }

    #[test]
    fn probe_rejects_large_displacement() {
        let r = holder_probe_with(&[0.0, 0.0], &[1.0], 0.5, 0..=6, 0.5, |pts| {
            Ok(pts.iter().map(|_| vec![Complex64::new(0.0, 0.0)]).collect())
        });
        assert!(r.is_err());
    }
}
