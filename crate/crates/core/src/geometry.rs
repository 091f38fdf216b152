//! Dispersion models, singular points and Fermi-surface sampling.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mc;

pub const NEWTON_TOL: f64 = 1e-10;
pub const SURF_TOL: f64 = 1e-8;
pub const HESS_TOL: f64 = 1e-6;
pub const DEDUP_RADIUS: f64 = 1e-4;
pub const H_SURF: f64 = 1e-3;
pub const R_EXC: f64 = 0.05;
pub const MAX_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("point {0:?} lies outside the model domain")]
    OutsideDomain(Vec<f64>),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("the Fermi surface is empty on the model domain")]
    EmptySurface,
    #[error("root finder failed: {0}")]
    RootFinding(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// Brillouin zone `[-π, π)^d`, periodic.
    Torus,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { radius: f64 },
}

/// One monomial `c · k_a k_b k_c` of the cubic perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubicTerm {
    pub indices: [usize; 3],
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    #[serde(rename = "tight_binding_2d")]
    TightBinding2D {
        t: f64,
        #[serde(default)]
        tprime: f64,
        #[serde(default)]
        mu: f64,
    },
    #[serde(rename = "tight_binding_3d")]
    TightBinding3D {
        t: f64,
        #[serde(default)]
        mu: f64,
    },
    QuadraticForm {
        m: usize,
        lambdas: Vec<f64>,
        domain: Domain,
        /// Row-major orthogonal matrix `R`; the model is `e(R k)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation: Option<Vec<Vec<f64>>>,
    },
    PerturbedCone {
        m: usize,
        lambdas: Vec<f64>,
        cubic: Vec<CubicTerm>,
        domain: Domain,
    },
    /// `e(k) = a·k − offset`; a flat Fermi surface.
    Linear {
        coefficients: Vec<f64>,
        #[serde(default)]
        offset: f64,
        domain: Domain,
    },
}

/// A single band `e(k)` with analytic derivatives on a bounded domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelKind", into = "ModelKind")]
pub struct DispersionModel {
    kind: ModelKind,
    dim: usize,
    domain: Domain,
    rotation: Option<Vec<f64>>,
    g0: f64,
    g1: f64,
}

impl From<DispersionModel> for ModelKind {
    fn from(m: DispersionModel) -> Self {
        m.kind
    }
}

impl TryFrom<ModelKind> for DispersionModel {
    type Error = GeometryError;
    fn try_from(kind: ModelKind) -> Result<Self, Self::Error> {
        DispersionModel::new(kind)
    }
}

fn check_domain(domain: &Domain, d: usize) -> Result<(), GeometryError> {
    match domain {
        Domain::Torus => Ok(()),
        Domain::Box { lo, hi } => {
            if lo.len() != d || hi.len() != d {
                return Err(GeometryError::InvalidModel(format!(
                    "domain box needs {d} bounds per side"
                )));
            }
            if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                return Err(GeometryError::InvalidModel("domain box has empty side".into()));
            }
            Ok(())
        }
        Domain::Ball { radius } => {
            if !(*radius > 0.0) || !radius.is_finite() {
                return Err(GeometryError::InvalidModel("ball radius must be > 0".into()));
            }
            Ok(())
        }
    }
}

fn check_form(m: usize, lambdas: &[f64]) -> Result<usize, GeometryError> {
    let d = lambdas.len();
    if !(2..=MAX_DIM).contains(&d) {
        return Err(GeometryError::InvalidModel(format!("dimension {d} not in 2..={MAX_DIM}")));
    }
    if m == 0 || m >= d {
        return Err(GeometryError::InvalidModel(format!("m = {m} must lie in 1..{d}")));
    }
    if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(GeometryError::InvalidModel("eigenvalues must be > 0".into()));
    }
    Ok(d)
}

impl DispersionModel {
    pub fn new(kind: ModelKind) -> Result<Self, GeometryError> {
        let mut rotation = None;
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        let (dim, domain) = match &kind {
            ModelKind::TightBinding2D { t, tprime, mu } => {
                if ![t, tprime, mu].iter().all(|v| v.is_finite()) {
                    return Err(GeometryError::InvalidModel("non-finite hopping".into()));
                }
                (2, Domain::Torus)
            }
            ModelKind::TightBinding3D { t, mu } => {
                if !t.is_finite() || !mu.is_finite() {
                    return Err(GeometryError::InvalidModel("non-finite hopping".into()));
                }
                (3, Domain::Torus)
            }
            ModelKind::QuadraticForm { m, lambdas, domain, rotation: r } => {
                let d = check_form(*m, lambdas)?;
                if let Some(r) = r {
                    rotation = Some(check_rotation(r, d)?);
                }
                (d, domain.clone())
            }
            ModelKind::PerturbedCone { m, lambdas, cubic, domain } => {
                let d = check_form(*m, lambdas)?;
                for c in cubic {
                    if c.indices.iter().any(|i| *i >= d) || !c.coefficient.is_finite() {
                        return Err(GeometryError::InvalidModel(format!(
                            "cubic term {:?} out of range",
                            c.indices
                        )));
                    }
                }
                let (a, b) = cubic_bounds(lambdas, cubic);
                g0 = a;
                g1 = b;
                (d, domain.clone())
            }
            ModelKind::Linear { coefficients, offset, domain } => {
                let d = coefficients.len();
                if !(1..=MAX_DIM).contains(&d) {
                    return Err(GeometryError::InvalidModel(format!("dimension {d} unsupported")));
                }
                if coefficients.iter().all(|c| *c == 0.0) || !offset.is_finite() {
                    return Err(GeometryError::InvalidModel("linear band needs a nonzero slope".into()));
                }
                (d, domain.clone())
            }
        };
        check_domain(&domain, dim)?;
        if matches!(domain, Domain::Torus)
            && !matches!(kind, ModelKind::TightBinding2D { .. } | ModelKind::TightBinding3D { .. })
        {
            return Err(GeometryError::InvalidModel(
                "periodic domain only for tight-binding bands".into(),
            ));
        }
        Ok(DispersionModel { kind, dim, domain, rotation, g0, g1 })
    }

    pub fn quadratic(m: usize, lambdas: Vec<f64>, domain: Domain) -> Result<Self, GeometryError> {
        Self::new(ModelKind::QuadraticForm { m, lambdas, domain, rotation: None })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn is_periodic(&self) -> bool {
        matches!(self.domain, Domain::Torus)
    }
    /// Bound `|G(k)| ≤ g0 R(k)³` of the cubic perturbation.
    pub fn g0(&self) -> f64 {
        self.g0
    }
    /// Bound `|∇G(k)| ≤ g1 R(k)²`.
    pub fn g1(&self) -> f64 {
        self.g1
    }

    /// Short identifier used in CSV rows.
    pub fn id(&self) -> String {
        match &self.kind {
            ModelKind::TightBinding2D { .. } => "tb2d".into(),
            ModelKind::TightBinding3D { .. } => "tb3d".into(),
            ModelKind::QuadraticForm { m, .. } => format!("quad_d{}_m{}", self.dim, m),
            ModelKind::PerturbedCone { m, .. } => format!("pcone_d{}_m{}", self.dim, m),
            ModelKind::Linear { .. } => format!("linear_d{}", self.dim),
        }
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        if k.len() != self.dim || k.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.domain {
            Domain::Torus => true,
            Domain::Box { lo, hi } => k.iter().zip(lo.iter().zip(hi)).all(|(x, (a, b))| x >= a && x <= b),
            Domain::Ball { radius } => norm(k) <= *radius,
        }
    }

    pub fn domain_volume(&self) -> f64 {
        match &self.domain {
            Domain::Torus => (2.0 * PI).powi(self.dim as i32),
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Domain::Ball { radius } => ball_volume(self.dim, *radius),
        }
    }

    /// Axis-aligned bounding box of the domain.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.domain {
            Domain::Torus => (vec![-PI; self.dim], vec![PI; self.dim]),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Ball { radius } => (vec![-radius; self.dim], vec![*radius; self.dim]),
        }
    }

    /// Uniform draw from the domain.
    pub fn sample_domain(&self, rng: &mut mc::Rng, out: &mut [f64]) {
        match &self.domain {
            Domain::Torus => {
                for x in out.iter_mut() {
                    *x = rng.random_range(-PI..PI);
                }
            }
            Domain::Box { lo, hi } => {
                for (i, x) in out.iter_mut().enumerate() {
                    *x = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
                }
            }
            Domain::Ball { radius } => sample_ball(rng, &vec![0.0; self.dim], *radius, out),
        }
    }

    /// Distance in the domain metric: torus for periodic bands, Euclidean otherwise.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.is_periodic() {
            a.iter()
                .zip(b)
                .map(|(x, y)| wrap_angle(x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        }
    }

    /// Maps a point back into the fundamental domain (identity for non-periodic models).
    pub fn canonicalize(&self, k: &mut [f64]) {
        if self.is_periodic() {
            for x in k.iter_mut() {
                *x = wrap_angle(*x);
            }
        }
    }

    fn rotate<'a>(&self, k: &'a [f64], buf: &'a mut [f64; MAX_DIM]) -> &'a [f64] {
        match &self.rotation {
            None => k,
            Some(r) => {
                let d = self.dim;
                for i in 0..d {
                    buf[i] = (0..d).map(|j| r[i * d + j] * k[j]).sum();
                }
                &buf[..d]
            }
        }
    }

    /// `e(k)` without a domain check.
    pub fn energy(&self, k: &[f64]) -> f64 {
        let mut buf = [0.0; MAX_DIM];
        let k = self.rotate(k, &mut buf);
        match &self.kind {
            ModelKind::TightBinding2D { t, tprime, mu } => {
                let (cx, cy) = (k[0].cos(), k[1].cos());
                -2.0 * t * (cx + cy) - 4.0 * tprime * cx * cy - mu
            }
            ModelKind::TightBinding3D { t, mu } => {
                -2.0 * t * (k[0].cos() + k[1].cos() + k[2].cos()) - mu
            }
            ModelKind::QuadraticForm { m, lambdas, .. } => quad_energy(*m, lambdas, k),
            ModelKind::PerturbedCone { m, lambdas, cubic, .. } => {
                quad_energy(*m, lambdas, k) + cubic_energy(cubic, k)
            }
            ModelKind::Linear { coefficients, offset, .. } => {
                coefficients.iter().zip(k).map(|(a, x)| a * x).sum::<f64>() - offset
            }
        }
    }

    /// Writes `∇e(k)` into `g` and returns `e(k)`.
    pub fn energy_gradient(&self, k: &[f64], g: &mut [f64]) -> f64 {
        let mut buf = [0.0; MAX_DIM];
        let kr = self.rotate(k, &mut buf);
        let mut gl = [0.0; MAX_DIM];
        let d = self.dim;
        let e = match &self.kind {
            ModelKind::TightBinding2D { t, tprime, mu } => {
                let (cx, cy) = (kr[0].cos(), kr[1].cos());
                let (sx, sy) = (kr[0].sin(), kr[1].sin());
                gl[0] = 2.0 * t * sx + 4.0 * tprime * sx * cy;
                gl[1] = 2.0 * t * sy + 4.0 * tprime * cx * sy;
                -2.0 * t * (cx + cy) - 4.0 * tprime * cx * cy - mu
            }
            ModelKind::TightBinding3D { t, mu } => {
                let mut s = 0.0;
                for i in 0..3 {
                    gl[i] = 2.0 * t * kr[i].sin();
                    s += kr[i].cos();
                }
                -2.0 * t * s - mu
            }
            ModelKind::QuadraticForm { m, lambdas, .. } => {
                quad_gradient(*m, lambdas, kr, &mut gl);
                quad_energy(*m, lambdas, kr)
            }
            ModelKind::PerturbedCone { m, lambdas, cubic, .. } => {
                quad_gradient(*m, lambdas, kr, &mut gl);
                cubic_gradient(cubic, kr, &mut gl);
                quad_energy(*m, lambdas, kr) + cubic_energy(cubic, kr)
            }
            ModelKind::Linear { coefficients, offset, .. } => {
                gl[..d].copy_from_slice(coefficients);
                coefficients.iter().zip(kr).map(|(a, x)| a * x).sum::<f64>() - offset
            }
        };
        match &self.rotation {
            None => g[..d].copy_from_slice(&gl[..d]),
            Some(r) => {
                for j in 0..d {
                    g[j] = (0..d).map(|i| r[i * d + j] * gl[i]).sum();
                }
            }
        }
        e
    }

    /// Row-major Hessian.
    pub fn hessian(&self, k: &[f64]) -> Vec<f64> {
        let mut buf = [0.0; MAX_DIM];
        let kr = self.rotate(k, &mut buf);
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        match &self.kind {
            ModelKind::TightBinding2D { t, tprime, .. } => {
                let (cx, cy) = (kr[0].cos(), kr[1].cos());
                let (sx, sy) = (kr[0].sin(), kr[1].sin());
                h[0] = 2.0 * t * cx + 4.0 * tprime * cx * cy;
                h[3] = 2.0 * t * cy + 4.0 * tprime * cx * cy;
                h[1] = -4.0 * tprime * sx * sy;
                h[2] = h[1];
            }
            ModelKind::TightBinding3D { t, .. } => {
                for i in 0..3 {
                    h[i * 3 + i] = 2.0 * t * kr[i].cos();
                }
            }
            ModelKind::QuadraticForm { m, lambdas, .. } => quad_hessian(*m, lambdas, &mut h),
            ModelKind::PerturbedCone { m, lambdas, cubic, .. } => {
                quad_hessian(*m, lambdas, &mut h);
                for c in cubic {
                    let [a, b, cc] = c.indices;
                    // each ordered pair of distinct positions contributes c·k_other
                    let idx = [a, b, cc];
                    for p in 0..3 {
                        for q in 0..3 {
                            if p != q {
                                let r = 3 - p - q;
                                h[idx[p] * d + idx[q]] += c.coefficient * kr[idx[r]];
                            }
                        }
                    }
                }
            }
            ModelKind::Linear { .. } => {}
        }
        if let Some(r) = &self.rotation {
            // Rᵀ H R
            let mut tmp = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    tmp[i * d + j] = (0..d).map(|l| h[i * d + l] * r[l * d + j]).sum();
                }
            }
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] = (0..d).map(|l| r[l * d + i] * tmp[l * d + j]).sum();
                }
            }
        }
        h
    }
}

fn check_rotation(r: &[Vec<f64>], d: usize) -> Result<Vec<f64>, GeometryError> {
    if r.len() != d || r.iter().any(|row| row.len() != d) {
        return Err(GeometryError::InvalidModel(format!("rotation must be {d}x{d}")));
    }
    let flat: Vec<f64> = r.iter().flatten().cloned().collect();
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|l| flat[i * d + l] * flat[j * d + l]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-9 {
                return Err(GeometryError::InvalidModel("rotation is not orthogonal".into()));
            }
        }
    }
    Ok(flat)
}

fn quad_energy(m: usize, lambdas: &[f64], k: &[f64]) -> f64 {
    let mut e = 0.0;
    for (i, l) in lambdas.iter().enumerate() {
        let t = l * k[i] * k[i];
        if i < m {
            e += t;
        } else {
            e -= t;
        }
    }
    e
}

fn quad_gradient(m: usize, lambdas: &[f64], k: &[f64], g: &mut [f64]) {
    for (i, l) in lambdas.iter().enumerate() {
        let s = if i < m { 2.0 } else { -2.0 };
        g[i] = s * l * k[i];
    }
}

fn quad_hessian(m: usize, lambdas: &[f64], h: &mut [f64]) {
    let d = lambdas.len();
    for (i, l) in lambdas.iter().enumerate() {
        h[i * d + i] = if i < m { 2.0 * l } else { -2.0 * l };
    }
}

fn cubic_energy(cubic: &[CubicTerm], k: &[f64]) -> f64 {
    cubic
        .iter()
        .map(|c| c.coefficient * k[c.indices[0]] * k[c.indices[1]] * k[c.indices[2]])
        .sum()
}

fn cubic_gradient(cubic: &[CubicTerm], k: &[f64], g: &mut [f64]) {
    for c in cubic {
        let [a, b, cc] = c.indices;
        g[a] += c.coefficient * k[b] * k[cc];
        g[b] += c.coefficient * k[a] * k[cc];
        g[cc] += c.coefficient * k[a] * k[b];
    }
}

/// Rigorous constants from `|k_i| ≤ R/√λ_i`.
fn cubic_bounds(lambdas: &[f64], cubic: &[CubicTerm]) -> (f64, f64) {
    let s = |i: usize| lambdas[i].sqrt();
    let mut g0 = 0.0;
    let mut per_axis = vec![0.0; lambdas.len()];
    for c in cubic {
        let [a, b, cc] = c.indices;
        let w = c.coefficient.abs();
        g0 += w / (s(a) * s(b) * s(cc));
        per_axis[a] += w / (s(b) * s(cc));
        per_axis[b] += w / (s(a) * s(cc));
        per_axis[cc] += w / (s(a) * s(b));
    }
    let g1 = per_axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    (g0, g1)
}

pub fn wrap_angle(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    if y >= PI {
        y - 2.0 * PI
    } else {
        y
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn ball_volume(d: usize, r: f64) -> f64 {
    // V_d = π^{d/2} / Γ(d/2 + 1) r^d via the two-step recursion V_d = 2π/d V_{d-2}
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v * r.powi(d as i32)
}

/// Uniform point in the ball of the given center and radius.
pub fn sample_ball(rng: &mut mc::Rng, center: &[f64], radius: f64, out: &mut [f64]) {
    let d = center.len();
    let mut n2 = 0.0;
    for x in out.iter_mut().take(d) {
        let z: f64 = rng.sample(StandardNormal);
        *x = z;
        n2 += z * z;
    }
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64) / n2.sqrt();
    for i in 0..d {
        out[i] = center[i] + r * out[i];
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelEval {
    pub e: f64,
    pub grad: Vec<f64>,
    /// Row-major `d × d`.
    pub hess: Vec<f64>,
}

pub fn evaluate_model(model: &DispersionModel, k: &[f64]) -> Result<ModelEval, GeometryError> {
    if !model.contains(k) {
        return Err(GeometryError::OutsideDomain(k.to_vec()));
    }
    let mut grad = vec![0.0; model.dim()];
    let e = model.energy_gradient(k, &mut grad);
    Ok(ModelEval { e, grad, hess: model.hessian(k) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularPoint {
    pub location: Vec<f64>,
    pub gradient_residual: f64,
    /// Ascending.
    pub hessian_eigenvalues: Vec<f64>,
    /// Number of positive Hessian eigenvalues.
    pub m: usize,
}

impl SingularPoint {
    pub fn signature(&self) -> (usize, usize) {
        (self.m, self.hessian_eigenvalues.len() - self.m)
    }
}

/// Critical points on F that were not returned as saddles.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalDiagnostic {
    pub location: Vec<f64>,
    pub hessian_eigenvalues: Vec<f64>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SingularSearch {
    pub points: Vec<SingularPoint>,
    pub diagnostics: Vec<CriticalDiagnostic>,
}

fn sym_eigenvalues(h: &[f64], d: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(d, d, h);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

fn newton_critical(model: &DispersionModel, start: &[f64], scale: f64) -> Option<Vec<f64>> {
    let d = model.dim();
    let mut k = start.to_vec();
    let mut g = vec![0.0; d];
    for _ in 0..60 {
        model.energy_gradient(&k, &mut g);
        if norm(&g) < NEWTON_TOL {
            return Some(k);
        }
        let h = DMatrix::from_row_slice(d, d, &model.hessian(&k));
        let step = h.lu().solve(&DVector::from_column_slice(&g))?;
        let mut sn = step.norm();
        let cap = 0.25 * scale;
        let f = if sn > cap { cap / sn } else { 1.0 };
        for i in 0..d {
            k[i] -= f * step[i];
        }
        sn *= f;
        if !sn.is_finite() {
            return None;
        }
        model.canonicalize(&mut k);
    }
    model.energy_gradient(&k, &mut g);
    (norm(&g) < NEWTON_TOL).then_some(k)
}

/// Multi-start Newton on `∇e = 0`, keeping roots on the Fermi surface.
pub fn find_singular_points(model: &DispersionModel) -> SingularSearch {
    let d = model.dim();
    let per_axis = if 32usize.pow(d as u32) <= 32768 {
        32
    } else {
        (32768f64.powf(1.0 / d as f64)).floor() as usize
    };
    let (lo, hi) = model.bounding_box();
    let scale = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let total = per_axis.pow(d as u32);
    let mut roots: Vec<Vec<f64>> = Vec::new();
    let mut seed = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for i in 0..d {
            let c = r % per_axis;
            r /= per_axis;
            seed[i] = lo[i] + (hi[i] - lo[i]) * (c as f64 + 0.5) / per_axis as f64;
        }
        if !model.contains(&seed) {
            continue;
        }
        if let Some(k) = newton_critical(model, &seed, scale) {
            if !model.contains(&k) || model.energy(&k).abs() >= SURF_TOL {
                continue;
            }
            if roots.iter().all(|p| model.distance(p, &k) > DEDUP_RADIUS) {
                roots.push(k);
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = SingularSearch::default();
    let mut g = vec![0.0; d];
    for k in roots {
        let ev = sym_eigenvalues(&model.hessian(&k), d);
        model.energy_gradient(&k, &mut g);
        let m = ev.iter().filter(|v| **v > 0.0).count();
        if ev.iter().any(|v| v.abs() < HESS_TOL) {
            out.diagnostics.push(CriticalDiagnostic {
                location: k,
                hessian_eigenvalues: ev,
                reason: "degenerate Hessian".into(),
            });
        } else if m == 0 || m == d {
            out.diagnostics.push(CriticalDiagnostic {
                location: k,
                hessian_eigenvalues: ev,
                reason: "extremum on the Fermi surface".into(),
            });
        } else {
            out.points.push(SingularPoint {
                location: k,
                gradient_residual: norm(&g),
                hessian_eigenvalues: ev,
                m,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfaceSample {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
    /// `1/|∇e(ω)|`.
    pub coarea_weight: f64,
    /// Share of `vol_{d-1}(F)` this sample stands for; these sum to the surface mass.
    pub measure: f64,
    pub excised: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceOptions {
    pub h_surf: f64,
    pub grad_floor: f64,
    pub excision_radius: f64,
    /// Singular points to excise around; `None` runs `find_singular_points`.
    pub singular_points: Option<Vec<Vec<f64>>>,
    /// Cap on shell draws per accepted sample.
    pub max_draws_per_sample: u64,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        SurfaceOptions {
            h_surf: H_SURF,
            grad_floor: 1e-9,
            excision_radius: R_EXC,
            singular_points: None,
            max_draws_per_sample: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSampleSet {
    pub samples: Vec<SurfaceSample>,
    pub draws: u64,
    pub rejected_grad: u64,
    pub rejected_projection: u64,
}

impl SurfaceSampleSet {
    pub fn total_mass(&self) -> f64 {
        self.samples.iter().map(|s| s.measure).sum()
    }
}

/// Coarse scan for a sign change of `e`.
pub fn surface_nonempty(model: &DispersionModel) -> bool {
    let d = model.dim();
    let per_axis = ((1usize << 18) as f64).powf(1.0 / d as f64).floor().max(4.0) as usize;
    let (lo, hi) = model.bounding_box();
    let mut k = vec![0.0; d];
    let (mut neg, mut pos) = (false, false);
    for idx in 0..per_axis.pow(d as u32) {
        let mut r = idx;
        for i in 0..d {
            let c = r % per_axis;
            r /= per_axis;
            k[i] = lo[i] + (hi[i] - lo[i]) * c as f64 / (per_axis - 1) as f64;
        }
        if !model.contains(&k) {
            continue;
        }
        let e = model.energy(&k);
        if e == 0.0 {
            return true;
        }
        neg |= e < 0.0;
        pos |= e > 0.0;
        if neg && pos {
            return true;
        }
    }
    false
}

/// Newton projection onto `e = 0` along `∇e`.
pub fn project_to_surface(model: &DispersionModel, k: &mut [f64], grad_floor: f64) -> bool {
    let mut g = [0.0; MAX_DIM];
    let d = model.dim();
    let mut polish = 0;
    let mut prev = f64::INFINITY;
    for _ in 0..16 {
        let e = model.energy_gradient(k, &mut g[..d]);
        if e.abs() < SURF_TOL {
            // a couple of extra steps take e down to rounding level
            if polish == 2 || e == 0.0 || e.abs() >= prev {
                return model.contains(k);
            }
            polish += 1;
        }
        prev = e.abs();
        let g2: f64 = g[..d].iter().map(|x| x * x).sum();
        if g2.sqrt() < grad_floor {
            return false;
        }
        let mut saved = [0.0; MAX_DIM];
        saved[..d].copy_from_slice(k);
        for i in 0..d {
            k[i] -= e * g[i] / g2;
        }
        model.canonicalize(k);
        if polish > 0 && model.energy(k).abs() >= prev {
            k.copy_from_slice(&saved[..d]);
            return model.contains(k);
        }
    }
    model.energy(k).abs() < SURF_TOL && model.contains(k)
}

/// Thin-shell sampling of the Fermi surface with coarea weights.
pub fn sample_fermi_surface(
    model: &DispersionModel,
    n_samples: usize,
    seed: u64,
    opts: &SurfaceOptions,
) -> Result<SurfaceSampleSet, GeometryError> {
    if n_samples == 0 {
        return Err(GeometryError::Argument("n_samples must be positive".into()));
    }
    if !(opts.h_surf > 0.0) {
        return Err(GeometryError::Argument("h_surf must be positive".into()));
    }
    if !surface_nonempty(model) {
        return Err(GeometryError::EmptySurface);
    }
    let singular: Vec<Vec<f64>> = match &opts.singular_points {
        Some(p) => p.clone(),
        None => find_singular_points(model).points.into_iter().map(|p| p.location).collect(),
    };
    let d = model.dim();
    let h = opts.h_surf;
    struct Shard {
        raw: Vec<(Vec<f64>, f64, Vec<f64>, f64)>,
        draws: u64,
        rej_grad: u64,
        rej_proj: u64,
        exhausted: bool,
    }
    let shards = mc::run_shards(seed, n_samples as u64, |_, budget, rng| {
        let mut s = Shard { raw: Vec::with_capacity(budget as usize), draws: 0, rej_grad: 0, rej_proj: 0, exhausted: false };
        let mut k = vec![0.0; d];
        let mut g = vec![0.0; d];
        let cap = budget.saturating_mul(opts.max_draws_per_sample).max(opts.max_draws_per_sample);
        while (s.raw.len() as u64) < budget {
            if s.draws >= cap {
                s.exhausted = true;
                break;
            }
            s.draws += 1;
            model.sample_domain(rng, &mut k);
            if model.energy(&k).abs() > h {
                continue;
            }
            model.energy_gradient(&k, &mut g);
            let gk = norm(&g);
            if gk < opts.grad_floor {
                s.rej_grad += 1;
                continue;
            }
            let mut w = k.clone();
            if !project_to_surface(model, &mut w, opts.grad_floor) {
                s.rej_proj += 1;
                continue;
            }
            model.energy_gradient(&w, &mut g);
            let gw = norm(&g);
            if gw < opts.grad_floor {
                s.rej_grad += 1;
                continue;
            }
            let n: Vec<f64> = g.iter().map(|x| x / gw).collect();
            s.raw.push((w, gw, n, gk));
        }
        s
    });
    if shards.iter().any(|s| s.exhausted) {
        return Err(GeometryError::EmptySurface);
    }
    let draws: u64 = shards.iter().map(|s| s.draws).sum();
    let vol = model.domain_volume();
    let mut samples = Vec::with_capacity(n_samples);
    let (mut rg, mut rp) = (0, 0);
    for s in shards {
        rg += s.rej_grad;
        rp += s.rej_proj;
        for (w, gw, n, gk) in s.raw {
            let excised = singular.iter().any(|p| model.distance(p, &w) < opts.excision_radius);
            samples.push(SurfaceSample {
                point: w,
                normal: n,
                coarea_weight: 1.0 / gw,
                measure: vol * gk / (2.0 * h * draws as f64),
                excised,
            });
        }
    }
    Ok(SurfaceSampleSet { samples, draws, rejected_grad: rg, rejected_projection: rp })
}

/// Sine of the angle between two nonzero vectors.
pub fn sin_angle(a: &[f64], b: &[f64]) -> Result<f64, GeometryError> {
    if a.len() != b.len() {
        return Err(GeometryError::Argument("length mismatch".into()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(GeometryError::Argument("zero vector".into()));
    }
    Ok(sin_angle_unit_norms(a, b, na, nb))
}

/// Lagrange identity on normalized vectors: `|â ∧ b̂|`.
pub(crate) fn sin_angle_unit_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        let ai = a[i] / na;
        let bi = b[i] / nb;
        for j in (i + 1)..n {
            let c = ai * (b[j] / nb) - (a[j] / na) * bi;
            s += c * c;
        }
    }
    s.sqrt().min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RayPoint {
    pub r1: f64,
    pub r2: f64,
    pub residual: f64,
}

/// Intersects F with the two-parameter ray `(r1 θ1, r2 θ2)`, `r1² + r2² = r²`.
///
/// `θ1`, `θ2` lie on the λ-weighted unit spheres of the first `m` and last
/// `d − m` coordinates.
pub fn ray_intersection(
    model: &DispersionModel,
    theta1: &[f64],
    theta2: &[f64],
    r: f64,
) -> Result<RayPoint, GeometryError> {
    let (m, lambdas) = match model.kind() {
        ModelKind::PerturbedCone { m, lambdas, .. } => (*m, lambdas),
        ModelKind::QuadraticForm { m, lambdas, rotation: None, .. } => (*m, lambdas),
        _ => return Err(GeometryError::Argument("ray_intersection needs a cone model".into())),
    };
    let d = model.dim();
    if theta1.len() != m || theta2.len() != d - m {
        return Err(GeometryError::Argument("direction lengths do not match m".into()));
    }
    let q1: f64 = theta1.iter().zip(lambdas).map(|(t, l)| l * t * t).sum();
    let q2: f64 = theta2.iter().zip(&lambdas[m..]).map(|(t, l)| l * t * t).sum();
    if (q1 - 1.0).abs() > 1e-9 || (q2 - 1.0).abs() > 1e-9 {
        return Err(GeometryError::Argument("directions must have unit λ-norm".into()));
    }
    if !(r > 0.0) {
        return Err(GeometryError::Argument("r must be positive".into()));
    }
    let lmin = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let reach = r / lmin.sqrt();
    match model.domain() {
        Domain::Ball { radius } if reach <= *radius => {}
        Domain::Box { lo, hi } if lo.iter().zip(hi).all(|(a, b)| -a >= reach && *b >= reach) => {}
        _ => {
            return Err(GeometryError::Precondition(format!(
                "ellipsoid of radius {r} leaves the domain"
            )))
        }
    }
    let mut k = vec![0.0; d];
    let mut f = |s: f64| {
        let root = (2.0 * r * r - s * s).max(0.0).sqrt();
        let r1 = 0.5 * (root + s);
        let r2 = 0.5 * (root - s);
        for i in 0..m {
            k[i] = r1 * theta1[i];
        }
        for i in m..d {
            k[i] = r2 * theta2[i - m];
        }
        (model.energy(&k), r1, r2)
    };
    let (mut a, mut b) = (-r, r);
    let (fa, _, _) = f(a);
    let (fb, _, _) = f(b);
    if !(fa < 0.0 && fb > 0.0) {
        return Err(GeometryError::RootFinding(format!(
            "no sign change on [-r, r]: e(-r)={fa:.3e}, e(r)={fb:.3e}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let (fm, _, _) = f(mid);
        if fm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if fm < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let (e, r1, r2) = f(0.5 * (a + b));
    Ok(RayPoint { r1, r2, residual: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tb2(tp: f64, mu: f64) -> DispersionModel {
        DispersionModel::new(ModelKind::TightBinding2D { t: 1.0, tprime: tp, mu }).unwrap()
    }

    #[test]
    fn tb2d_at_saddle() {
        let ev = evaluate_model(&tb2(0.0, 0.0), &[PI - 1e-15, 0.0]).unwrap();
        assert!(ev.e.abs() < 1e-12);
        assert!(norm(&ev.grad) < 1e-12);
        assert_relative_eq!(ev.hess[0], -2.0, epsilon = 1e-12);
        assert_relative_eq!(ev.hess[3], 2.0, epsilon = 1e-12);
        assert_eq!(ev.hess[1], ev.hess[2]);
        let vh = tb2(-0.3, 4.0 * -0.3);
        assert!(vh.energy(&[PI, 0.0]).abs() < 1e-14);
        assert_relative_eq!(tb2(-0.3, 1.0).energy(&[PI, 0.0]), -1.2 - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn quadratic_form_values() {
        let q = DispersionModel::quadratic(1, vec![1.0; 3], Domain::Ball { radius: 2.0 }).unwrap();
        let ev = evaluate_model(&q, &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(ev.e, 0.0);
        assert_eq!(ev.grad, vec![2.0, -2.0, 0.0]);
        assert!(matches!(evaluate_model(&q, &[3.0, 0.0, 0.0]), Err(GeometryError::OutsideDomain(_))));
    }

    #[test]
    fn saddles_of_square_lattice() {
        let s = find_singular_points(&tb2(0.0, 0.0));
        assert_eq!(s.points.len(), 2);
        let mut locs: Vec<(f64, f64)> = s
            .points
            .iter()
            .map(|p| (p.location[0].abs(), p.location[1].abs()))
            .collect();
        locs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(locs[0].0 < 1e-9 && (locs[0].1 - PI).abs() < 1e-9);
        assert!((locs[1].0 - PI).abs() < 1e-9 && locs[1].1 < 1e-9);
        for p in &s.points {
            assert_eq!(p.signature(), (1, 1));
            assert!(p.gradient_residual < NEWTON_TOL);
        }
        assert!(find_singular_points(&tb2(-0.3, 1.0)).points.is_empty());
    }

    #[test]
    fn saddle_of_quadratic_form() {
        let q = DispersionModel::quadratic(1, vec![1.0, 2.0, 0.5], Domain::Ball { radius: 1.0 }).unwrap();
        let s = find_singular_points(&q);
        assert_eq!(s.points.len(), 1);
        assert!(norm(&s.points[0].location) < 1e-12);
        assert_eq!(s.points[0].signature(), (1, 2));
    }

    #[test]
    fn degenerate_critical_point_is_reported() {
        // t' = t/2 flattens the saddle at (π, 0) along k_y
        let s = find_singular_points(&tb2(0.5, 2.0));
        assert!(s.points.iter().all(|p| p.hessian_eigenvalues.iter().all(|v| v.abs() >= HESS_TOL)));
        assert!(s.diagnostics.iter().any(|d| d.reason == "degenerate Hessian"));
    }

    #[test]
    fn sin_angle_examples() {
        assert_eq!(sin_angle(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(sin_angle(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(sin_angle(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(sin_angle(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn pure_cone_ray() {
        let q = DispersionModel::quadratic(1, vec![1.0; 3], Domain::Ball { radius: 1.0 }).unwrap();
        let p = ray_intersection(&q, &[1.0], &[0.6, 0.8], 0.5).unwrap();
        assert_relative_eq!(p.r1, 0.5 / 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(p.r2, 0.5 / 2f64.sqrt(), epsilon = 1e-12);
        assert!(matches!(
            ray_intersection(&q, &[1.0], &[0.6, 0.8], 1.5),
            Err(GeometryError::Precondition(_))
        ));
    }

    #[test]
    fn empty_surface_is_an_error() {
        let l = DispersionModel::new(ModelKind::Linear {
            coefficients: vec![1.0, 0.0],
            offset: 5.0,
            domain: Domain::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] },
        })
        .unwrap();
        let r = sample_fermi_surface(&l, 100, 1, &SurfaceOptions::default());
        assert_eq!(r.unwrap_err(), GeometryError::EmptySurface);
    }

    #[test]
    fn ball_volumes() {
        assert_relative_eq!(ball_volume(2, 1.0), PI, epsilon = 1e-14);
        assert_relative_eq!(ball_volume(3, 2.0), 4.0 / 3.0 * PI * 8.0, epsilon = 1e-12);
        assert_relative_eq!(ball_volume(4, 1.0), PI * PI / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_relative_eq!(wrap_angle(PI), -PI);
        assert_relative_eq!(wrap_angle(-PI), -PI);
        assert_relative_eq!(wrap_angle(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
    }
}
