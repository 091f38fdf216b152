//! Typed parameter blocks, one per experiment id, and their runners.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::table::{Cell, Table};
use crate::diagrams::{self, FeynmanGraph, GnForest, Label, ScaleAssignment, ScaleSum};
use crate::geometry::{find_singular_points, DispersionModel, R_EXC};
use crate::meanfield::{self, DosHistogram, DosSource, TcLaw};
use crate::multiscale::{self, Interaction, ProbeStatus, SelfEnergyOptions};
use crate::nesting::{self, NestingSpec};
use crate::overlap::{self, OverlapSpec};
use crate::shellvol::{self, BallRestriction, FitForm, ShellSpec, VolumeEstimate};

/// Result of one experiment before it is written out.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub inconclusive: Option<String>,
    pub text: Option<String>,
}

impl Outcome {
    fn metric(&mut self, k: &str, v: f64) {
        self.metrics.insert(k.to_string(), v);
    }
}

pub(crate) type Check = Result<(), String>;

fn two() -> f64 {
    2.0
}
fn one_i8() -> i8 {
    1
}
fn default_samples() -> u64 {
    1_000_000
}
fn default_form() -> FitForm {
    FitForm::Power
}

/// Sub-seeds leave room for the 16 shard streams of each call.
fn sub_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(0x1000 * k as u64)
}

fn need_model(m: Option<&DispersionModel>) -> Result<&DispersionModel, String> {
    m.ok_or_else(|| "model: this experiment needs a [model] table".to_string())
}

fn check_base(base: f64) -> Check {
    if base > 1.0 && base.is_finite() {
        Ok(())
    } else {
        Err(format!("params.base: M = {base} must be a finite number > 1"))
    }
}

fn check_window(j_min: i32, j_max: i32) -> Check {
    if j_max > -1 {
        return Err(format!("params.j_max: {j_max} must be ≤ -1"));
    }
    if j_max - j_min < 3 {
        return Err(format!("params.j_min: window [{j_min}, {j_max}] needs at least 4 scales"));
    }
    Ok(())
}

fn check_positive(name: &str, v: u64) -> Check {
    if v == 0 {
        Err(format!("params.{name}: must be positive"))
    } else {
        Ok(())
    }
}

fn check_q_set(qs: &Option<Vec<Vec<f64>>>, d: usize) -> Check {
    if let Some(qs) = qs {
        if qs.is_empty() || qs.iter().any(|q| q.len() != d || q.iter().any(|x| !x.is_finite())) {
            return Err(format!("params.q_set: needs finite {d}-vectors"));
        }
    }
    Ok(())
}

fn q_set_for(model: &DispersionModel, qs: &Option<Vec<Vec<f64>>>, n_q: usize, seed: u64) -> Vec<Vec<f64>> {
    match qs {
        Some(q) => q.clone(),
        None => {
            let mut q = overlap::default_q_set(model, seed);
            q.truncate(n_q.max(1));
            q
        }
    }
}

fn check_signs(v1: i8, v2: i8) -> Check {
    if [v1, v2].iter().all(|v| *v == 1 || *v == -1) {
        Ok(())
    } else {
        Err(format!("params.v1: signs ({v1}, {v2}) must be ±1"))
    }
}

fn check_n_q(n_q: usize) -> Check {
    if (1..=overlap::N_Q).contains(&n_q) {
        Ok(())
    } else {
        Err(format!("params.n_q: {n_q} not in 1..={}", overlap::N_Q))
    }
}

fn scale_row(model: &DispersionModel, base: f64, j: i32, eps: Option<f64>, v: &VolumeEstimate, seed: u64) -> Vec<Cell> {
    vec![
        model.id().into(),
        base.into(),
        j.into(),
        eps.map_or(Cell::Empty, Cell::Float),
        v.value.into(),
        v.stderr.into(),
        v.n_samples.into(),
        seed.into(),
    ]
}

const SCALE_HEADER: [&str; 8] = ["model_id", "M", "j", "epsilon_ball", "value", "stderr", "n_samples", "seed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellParams {
    #[serde(default = "two")]
    pub base: f64,
    pub j_min: i32,
    pub j_max: i32,
    /// Samples per scale.
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_form")]
    pub form: FitForm,
}

impl ShellParams {
    fn check(&self, _: &DispersionModel) -> Check {
        check_base(self.base)?;
        check_window(self.j_min, self.j_max)?;
        check_positive("samples", self.samples)
    }

    fn run(&self, model: &DispersionModel, seed: u64) -> Result<Outcome, String> {
        let mut table = Table::new("", &SCALE_HEADER);
        let mut est = Vec::new();
        for (i, j) in (self.j_min..=self.j_max).enumerate() {
            let spec = ShellSpec::new(model, self.base, j, None).map_err(|e| e.to_string())?;
            let s = sub_seed(seed, i);
            let v = shellvol::estimate_shell_volume(&spec, self.samples, s).map_err(|e| e.to_string())?;
            table.push(scale_row(model, self.base, j, None, &v, s));
            est.push((j, v));
        }
        let mut out = Outcome { tables: vec![table], ..Outcome::default() };
        match shellvol::fit_scaling_exponent(&est, self.base, self.form) {
            Ok(f) => match self.form {
                FitForm::Power => {
                    out.metric("exponent", f.params.0);
                    out.metric("exponent_stderr", f.param_stderr.0);
                    out.metric("log_prefactor", f.params.1);
                    out.metric("relative_residual", f.relative_residual);
                }
                FitForm::LogCorrected => {
                    out.metric("a", f.params.0);
                    out.metric("b", f.params.1);
                    out.metric("b_stderr", f.param_stderr.1);
                    out.metric("relative_residual", f.relative_residual);
                }
            },
            Err(e) => out.inconclusive = Some(format!("scaling fit failed: {e}")),
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallShellParams {
    #[serde(default = "two")]
    pub base: f64,
    pub j_min: i32,
    pub j_max: i32,
    #[serde(default = "default_samples")]
    pub samples: u64,
    pub epsilon: f64,
    /// Defaults to the first singular point found on the model.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

impl BallShellParams {
    fn check(&self, model: &DispersionModel) -> Check {
        check_base(self.base)?;
        check_window(self.j_min, self.j_max)?;
        check_positive("samples", self.samples)?;
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(format!("params.epsilon: {} not in (0, 1/2)", self.epsilon));
        }
        if let Some(c) = &self.center {
            if c.len() != model.dim() || !model.contains(c) {
                return Err("params.center: must be a point of the model domain".into());
            }
        }
        Ok(())
    }

    fn run(&self, model: &DispersionModel, seed: u64) -> Result<Outcome, String> {
        let center = match &self.center {
            Some(c) => c.clone(),
            None => find_singular_points(model)
                .points
                .first()
                .map(|p| p.location.clone())
                .ok_or("params.center: model has no singular point; give a center")?,
        };
        let d = model.dim() as f64;
        let predicted = 1.0 + (d - 2.0) * self.epsilon;
        let mut table = Table::new("", &SCALE_HEADER);
        let mut est = Vec::new();
        for (i, j) in (self.j_min..=self.j_max).enumerate() {
            let ball = BallRestriction { center: center.clone(), epsilon: self.epsilon };
            let spec = ShellSpec::new(model, self.base, j, Some(ball)).map_err(|e| e.to_string())?;
            let s = sub_seed(seed, i);
            let v = shellvol::estimate_ball_shell_volume(&spec, self.samples, s).map_err(|e| e.to_string())?;
            table.push(scale_row(model, self.base, j, Some(self.epsilon), &v, s));
            est.push((j, v));
        }
        let mut out = Outcome { tables: vec![table], ..Outcome::default() };
        out.metric("predicted_exponent", predicted);
        let cs: Vec<f64> = est.iter().map(|(j, v)| v.value / self.base.powf(f64::from(*j) * predicted)).collect();
        let mean = cs.iter().sum::<f64>() / cs.len() as f64;
        let dev = cs.iter().map(|c| (c / mean - 1.0).abs()).fold(0.0, f64::max);
        out.metric("c_mean", mean);
        out.metric("c_max_rel_dev", dev);
        match shellvol::fit_scaling_exponent(&est, self.base, FitForm::Power) {
            Ok(f) => {
                out.metric("exponent", f.exponent());
                out.metric("exponent_stderr", f.param_stderr.0);
            }
            Err(e) => out.inconclusive = Some(format!("scaling fit failed: {e}")),
        }
        Ok(out)
    }
}

fn n_refs() -> usize {
    64
}
fn n_surface_nesting() -> usize {
    200_000
}
fn r_exc() -> f64 {
    R_EXC
}
fn fit_tol() -> f64 {
    0.15
}
fn kappa_floor() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestingParams {
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default = "n_refs")]
    pub n_refs: usize,
    #[serde(default = "n_surface_nesting")]
    pub n_surface: usize,
    #[serde(default = "r_exc")]
    pub excision_radius: f64,
    #[serde(default = "fit_tol")]
    pub fit_tol: f64,
    #[serde(default = "kappa_floor")]
    pub kappa_floor: f64,
    #[serde(default = "yes")]
    pub transversality: bool,
}

impl NestingParams {
    fn spec<'a>(&self, model: &'a DispersionModel) -> NestingSpec<'a> {
        let mut s = NestingSpec::new(model);
        if let Some(b) = &self.betas {
            s.betas = b.clone();
        }
        s.n_refs = self.n_refs;
        s.n_surface = self.n_surface;
        s.excision_radius = self.excision_radius;
        s.fit_tol = self.fit_tol;
        s.kappa_floor = self.kappa_floor;
        s
    }

    fn check(&self, model: &DispersionModel) -> Check {
        if !(self.fit_tol > 0.0) {
            return Err("params.fit_tol: must be positive".into());
        }
        self.spec(model).validate().map_err(|e| format!("params: {e}"))
    }

    fn run(&self, model: &DispersionModel, seed: u64) -> Result<Outcome, String> {
        let spec = self.spec(model);
        let k = nesting::estimate_kappa(&spec, seed).map_err(|e| e.to_string())?;
        let mut out = Outcome::default();
        out.metric("kappa", k.kappa);
        out.metric("kappa_half_width", k.half_width);
        out.metric("z0", k.z0);
        out.metric("rms_residual", k.rms_residual);
        out.metric("nesting_suspected", f64::from(u8::from(k.nesting_suspected)));
        out.metric("dropped_betas", k.dropped_betas.len() as f64);
        if k.nesting_suspected {
            out.notes.push("nesting suspected: fit residual or slope out of range".into());
        }
        if !k.dropped_betas.is_empty() {
            out.notes.push(format!("β values with too few samples: {:?}", k.dropped_betas));
        }
        let floor = if self.transversality {
            Some(nesting::check_transversality_floor(&spec, sub_seed(seed, 1)).map_err(|e| e.to_string())?)
        } else {
            None
        };
        let mut table = Table::new("", &["model_id", "beta", "measure_max", "kappa_fit", "z1", "rho_prime"]);
        for (i, b) in k.betas.iter().enumerate() {
            table.push(vec![
                model.id().into(),
                (*b).into(),
                k.measure_max[i].into(),
                k.kappa.into(),
                floor.as_ref().map_or(Cell::Empty, |f| f.z1.into()),
                floor.as_ref().map_or(Cell::Empty, |f| f.rho_prime.into()),
            ]);
        }
        out.tables.push(table);
        if let Some(f) = floor {
            out.metric("rho_prime", f.rho_prime);
            out.metric("rho_prime_half_width", f.rho_prime_half_width);
            out.metric("z1", f.z1);
            out.metric("kappa_prime", f.kappa_prime);
            out.metric("kappa_from_parts", f.kappa_from_parts);
            let rel = ((f.kappa_prime_half_width / f.kappa_prime).powi(2)
                + (f.rho_prime_half_width / f.rho_prime).powi(2))
            .sqrt();
            let hw_parts = f.kappa_from_parts.abs() * rel;
            let combined = hw_parts.hypot(k.half_width);
            out.metric("kappa_consistency", (f.kappa_from_parts - k.kappa).abs() / combined);
            out.metric("envelope_nonmonotone", f64::from(u8::from(f.nonmonotone)));
            if f.nonmonotone {
                out.notes.push("transversality envelope is nonmonotone".into());
            }
            if !f.no_data.is_empty() {
                out.notes.push(format!("β values with empty complement: {:?}", f.no_data));
            }
            let mut t = Table::new("floor", &["model_id", "beta", "envelope", "near_measure"]);
            for (i, b) in f.betas.iter().enumerate() {
                let env = if f.envelope[i].is_finite() { Cell::Float(f.envelope[i]) } else { Cell::Empty };
                t.push(vec![model.id().into(), (*b).into(), env, f.near_measure[i].into()]);
            }
            out.tables.push(t);
        }
        Ok(out)
    }
}

fn n_q() -> usize {
    overlap::N_Q
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapI2Params {
    #[serde(default = "one_i8")]
    pub v1: i8,
    #[serde(default = "one_i8")]
    pub v2: i8,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: Vec<f64>,
    pub delta: f64,
    /// Total (k, p) pair budget.
    #[serde(default = "default_samples")]
    pub pairs: u64,
    #[serde(default)]
    pub q_set: Option<Vec<Vec<f64>>>,
    #[serde(default = "n_q")]
    pub n_q: usize,
    /// Optional κ for the theoretical exponents.
    #[serde(default)]
    pub kappa: Option<f64>,
}

impl OverlapI2Params {
    fn spec<'a>(&self, model: &'a DispersionModel, q_set: Vec<Vec<f64>>) -> OverlapSpec<'a> {
        OverlapSpec {
            model,
            v1: self.v1,
            v2: self.v2,
            eps1: self.eps1,
            eps2: self.eps2,
            eps3: self.eps3.clone(),
            delta: self.delta,
            q_set,
        }
    }

    fn check(&self, model: &DispersionModel) -> Check {
        check_signs(self.v1, self.v2)?;
        check_positive("pairs", self.pairs)?;
        check_n_q(self.n_q)?;
        check_q_set(&self.q_set, model.dim())?;
        if let Some(k) = self.kappa {
            overlap::epsilon_from_kappa(model.dim(), k).map_err(|e| format!("params.kappa: {e}"))?;
        }
        self.spec(model, vec![vec![0.0; model.dim()]]).validate().map_err(|e| format!("params: {e}"))
    }

    fn run(&self, model: &DispersionModel, seed: u64) -> Result<Outcome, String> {
        let qs = q_set_for(model, &self.q_set, self.n_q, seed);
        let spec = self.spec(model, qs);
        let r = overlap::estimate_i2(&spec, self.pairs, sub_seed(seed, 1)).map_err(|e| e.to_string())?;
        let mut t = Table::new("", &["model_id", "eps1", "eps2", "eps3", "delta", "I2", "stderr"]);
        for (e3, v) in r.eps3.iter().zip(&r.values) {
            t.push(vec![
                model.id().into(),
                self.eps1.into(),
                self.eps2.into(),
                (*e3).into(),
                self.delta.into(),
                v.value.into(),
                v.stderr.into(),
            ]);
        }
        let mut out = Outcome { tables: vec![t], ..Outcome::default() };
        out.metric("bound_regime", f64::from(u8::from(spec.bound_regime())));
        out.metric("shell_volume_k", r.shell_volumes.0);
        out.metric("shell_volume_p", r.shell_volumes.1);
        if let Some(k) = self.kappa {
            let e = overlap::epsilon_from_kappa(model.dim(), k).map_err(|e| e.to_string())?;
            out.metric("epsilon_theory", e.epsilon);
            out.metric("epsilon_final", e.epsilon_final);
        }
        if self.eps3.len() >= 3 {
            match overlap::fit_exponent(&self.eps3, &r.values) {
                Ok(f) => {
                    out.metric("eps3_exponent", f.exponent);
                    out.metric("eps3_exponent_half_width", f.half_width);
                }
                Err(e) => out.inconclusive = Some(format!("ε₃ fit failed: {e}")),
            }
        }
        Ok(out)
    }
}

fn n_surface_w() -> usize {
    3000
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapWParams {
    pub zetas: Vec<f64>,
    #[serde(default = "one_i8")]
    pub v1: i8,
    #[serde(default = "one_i8")]
    pub v2: i8,
    #[serde(default)]
    pub delta: f64,
    /// κ used for the transversal/exceptional split.
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "n_surface_w")]
    pub n_surface: usize,
    #[serde(default)]
    pub q_set: Option<Vec<Vec<f64>>>,
    #[serde(default = "n_q")]
    pub n_q: usize,
}

impl OverlapWParams {
    fn check(&self, model: &DispersionModel) -> Check {
        check_signs(self.v1, self.v2)?;
        check_n_q(self.n_q)?;
        check_q_set(&self.q_set, model.dim())?;
        if self.zetas.is_empty() || self.zetas.iter().any(|z| !(*z > 0.0) || !z.is_finite()) {
            return Err("params.zetas: must be nonempty and positive".into());
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err("params.delta: must be non-negative".into());
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err("params.kappa: must be positive".into());
        }
        if self.n_surface < 16 {
            return Err("params.n_surface: must be at least 16".into());
        }
        Ok(())
    }

    fn run(&self, model: &DispersionModel, seed: u64) -> Result<Outcome, String> {
        let qs = q_set_for(model, &self.q_set, self.n_q, seed);
        let w = overlap::estimate_w(
            model,
            &self.zetas,
            &qs,
            (self.v1, self.v2),
            self.delta,
            self.kappa,
            self.n_surface,
            sub_seed(seed, 1),
        )
        .map_err(|e| e.to_string())?;
        let mut t = Table::new("", &["model_id", "zeta", "W", "stderr"]);
        let mut x = Table::new("exceptional", &["model_id", "zeta", "fraction"]);
        for (i, z) in w.zetas.iter().enumerate() {
            t.push(vec![model.id().into(), (*z).into(), w.values[i].value.into(), w.values[i].stderr.into()]);
            x.push(vec![model.id().into(), (*z).into(), w.exceptional_fraction[i].into()]);
        }
        let mut out = Outcome { tables: vec![t, x], ..Outcome::default() };
        let ceiling = w.values.iter().map(|v| v.value / w.mass_squared).fold(0.0, f64::max);
        out.metric("ceiling_ratio", ceiling);
        out.metric("mass_squared", w.mass_squared);
        out.metric("gamma", w.gamma);
        out.metric("exceptional_exponent_expected", self.kappa * (1.0 - w.gamma));
        if self.zetas.len() >= 3 {
            match overlap::fit_exponent(&self.zetas, &w.values) {
                Ok(f) => {
                    out.metric("zeta_exponent", f.exponent);
                    out.metric("zeta_exponent_half_width", f.half_width);
                }
                Err(e) => out.inconclusive = Some(format!("ζ fit failed: {e}")),
            }
            let frac: Vec<VolumeEstimate> = w
                .exceptional_fraction
                .iter()
                .map(|f| VolumeEstimate {
                    value: *f,
                    stderr: 0.0,
                    n_samples: 0,
                    method: shellvol::Method::Mc,
                    note: None,
                })
                .collect();
            if let Ok(f) = overlap::fit_exponent(&self.zetas, &frac) {
                out.metric("exceptional_exponent", f.exponent);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramsParams {
    /// Graph text: one `u v` line per internal line, `X v` per external leg.
    pub graph: String,
    #[serde(default)]
    pub scales: Option<Vec<i32>>,
    /// Uniform scale for every line, instead of `scales`.
    #[serde(default)]
    pub j: Option<i32>,
    #[serde(default = "two")]
    pub base: f64,
    #[serde(default)]
    pub s0: u32,
    #[serde(default)]
    pub s1: u32,
    /// Improvement exponent for derivative bounds.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl DiagramsParams {
    fn prepare(&self) -> Result<(FeynmanGraph, ScaleAssignment), String> {
        check_base(self.base)?;
        let g = FeynmanGraph::parse(&self.graph).map_err(|e| format!("params.graph: {e}"))?;
        let scales = match (&self.scales, self.j) {
            (Some(s), None) => {
                if s.len() != g.n_lines() {
                    return Err(format!("params.scales: {} scales for {} lines", s.len(), g.n_lines()));
                }
                ScaleAssignment::new(s.clone()).map_err(|e| format!("params.scales: {e}"))?
            }
            (None, Some(j)) => ScaleAssignment::uniform(g.n_lines(), j).map_err(|e| format!("params.j: {e}"))?,
            _ => return Err("params.scales: give exactly one of `scales` and `j`".into()),
        };
        if self.s0 > 2 || self.s1 > 2 {
            return Err("params.s0: derivative orders must be 0, 1 or 2".into());
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return Err(format!("params.epsilon: {e} not in (0, 1)"));
            }
        }
        Ok((g, scales))
    }

    fn check(&self) -> Check {
        self.prepare().map(|_| ())
    }

    fn run(&self) -> Result<Outcome, String> {
        let (g, scales) = self.prepare()?;
        let forest = diagrams::build_forest(&g, &scales).map_err(|e| e.to_string())?;
        let rep = match self.epsilon {
            Some(eps) => diagrams::derivative_bound_report(&g, &forest, self.base, self.s0, self.s1, eps),
            None => diagrams::power_count_bound(&g, &forest, self.base, self.s0, self.s1),
        }
        .map_err(|e| e.to_string())?;
        let mut t = Table::new(
            "",
            &["fork", "lines", "scale", "parent_scale", "external_legs", "n_vertices", "label", "exponent", "scale_sum"],
        );
        for f in &rep.forks {
            t.push(vec![
                f.fork.into(),
                line_list(&forest, f.fork).into(),
                f.scale.into(),
                f.parent_scale.into(),
                f.external_legs.into(),
                f.n_vertices.into(),
                label_text(f.label).into(),
                f.exponent.into(),
                sum_text(f.sum).into(),
            ]);
        }
        let mut out = Outcome { tables: vec![t], ..Outcome::default() };
        out.metric("n_vertices", rep.n_vertices as f64);
        out.metric("external_legs", rep.external_legs as f64);
        out.metric("root_scale", f64::from(rep.root_scale));
        out.metric("abs_j_power", f64::from(rep.abs_j_power));
        out.metric("abs_j_power_sharp", f64::from(rep.abs_j_power_sharp));
        out.metric("m_power_coefficient", rep.m_power_coefficient);
        out.metric("m_power_exponent", rep.m_power_exponent);
        if rep.external_legs == 2 {
            let expected = 3 * rep.n_vertices as i64 - 2;
            out.metric("abs_j_power_expected", expected as f64);
            out.metric("abs_j_power_gap", i64::from(rep.abs_j_power) as f64 - expected as f64);
        }
        out.text = Some(report_text(&g, &forest, &rep));
        Ok(out)
    }
}

fn line_list(forest: &GnForest, f: usize) -> String {
    forest.fork(f).lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}

fn label_text(l: Option<Label>) -> &'static str {
    match l {
        Some(Label::R) => "R",
        Some(Label::C) => "C",
        None => "",
    }
}

fn sum_text(s: ScaleSum) -> String {
    match s {
        ScaleSum::AbsJ => "abs_j".into(),
        ScaleSum::Constant(c) => format!("constant:{c:.16e}"),
        ScaleSum::Inserted => "inserted".into(),
    }
}

fn report_text(g: &FeynmanGraph, forest: &GnForest, rep: &diagrams::PowerCountingReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "graph: {} vertices, {} lines, {} legs", g.n_vertices(), g.n_lines(), g.n_legs());
    let _ = writeln!(s, "classification: {:?}", rep.classification);
    let _ = writeln!(s, "root scale: {}", rep.root_scale);
    let _ = writeln!(s, "M-power: {} * j = {}", rep.m_power_coefficient, rep.m_power_exponent);
    let _ = writeln!(s, "|j|-power: {} (sharp {})", rep.abs_j_power, rep.abs_j_power_sharp);
    if let Some(imp) = &rep.improvement {
        let _ = writeln!(
            s,
            "improvement: epsilon {} from tree line {} with loop lines {} {}",
            imp.epsilon, imp.triple.tree_line, imp.triple.loop_lines.0, imp.triple.loop_lines.1
        );
    }
    let _ = writeln!(s, "forks:");
    for f in &rep.forks {
        let _ = writeln!(
            s,
            "  {} [{}] j={} parent={} E={} n={} {} exponent={} sum={}",
            f.fork,
            line_list(forest, f.fork),
            f.scale,
            f.parent_scale,
            f.external_legs,
            f.n_vertices,
            label_text(f.label),
            f.exponent,
            sum_text(f.sum)
        );
    }
    s
}

fn se_samples() -> u64 {
    100_000
}
fn half() -> f64 {
    0.5
}
fn oct_lo() -> u32 {
    2
}
fn oct_hi() -> u32 {
    8
}
fn floor_default() -> i32 {
    -8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeParams {
    pub q: Vec<f64>,
    pub direction: Vec<f64>,
    #[serde(default = "half")]
    pub s: f64,
    #[serde(default = "oct_lo")]
    pub octave_lo: u32,
    #[serde(default = "oct_hi")]
    pub octave_hi: u32,
    #[serde(default = "floor_default")]
    pub j_floor: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfEnergyParams {
    pub interaction: Interaction,
    /// External points `(q₀, q⃗)`.
    #[serde(default)]
    pub qs: Vec<Vec<f64>>,
    #[serde(default)]
    pub j_floors: Vec<i32>,
    #[serde(default = "two")]
    pub base: f64,
    #[serde(default = "se_samples")]
    pub samples: u64,
    #[serde(default)]
    pub probe: Option<ProbeParams>,
}

impl SelfEnergyParams {
    fn check(&self, model: &DispersionModel) -> Check {
        check_base(self.base)?;
        check_positive("samples", self.samples)?;
        let d = model.dim();
        if self.qs.iter().any(|q| q.len() != d + 1 || q.iter().any(|x| !x.is_finite())) {
            return Err(format!("params.qs: points need {} finite components", d + 1));
        }
        if self.qs.is_empty() != self.j_floors.is_empty() {
            return Err("params.j_floors: give both `qs` and `j_floors`, or neither".into());
        }
        if self.j_floors.iter().any(|j| *j > -4) {
            return Err("params.j_floors: floors must be at most -4".into());
        }
        if self.qs.is_empty() && self.probe.is_none() {
            return Err("params.qs: nothing to compute without `qs` or `probe`".into());
        }
        if let Some(p) = &self.probe {
            if p.q.len() != d + 1 {
                return Err(format!("params.probe.q: needs {} components", d + 1));
            }
            let n = p.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            if p.direction.len() != d || (n - 1.0).abs() > 1e-9 {
                return Err("params.probe.direction: must be a spatial unit vector".into());
            }
            if !(p.s > 0.0 && p.s < 1.0) {
                return Err("params.probe.s: must lie in (0, 1)".into());
            }
            if p.octave_hi < p.octave_lo + multiscale::PROBE_OCTAVES as u32 {
                return Err("params.probe.octave_hi: window too short".into());
            }
            if p.j_floor > -4 {
                return Err("params.probe.j_floor: must be at most -4".into());
            }
        }
        if let Interaction::Gaussian { range, .. } = self.interaction {
            if !(range > 0.0) {
                return Err("params.interaction.range: must be positive".into());
            }
        }
        Ok(())
    }

    fn run(&self, model: &DispersionModel, seed: u64) -> Result<Outcome, String> {
        let d = model.dim();
        let mut header = vec!["model_id".to_string(), "q0".to_string()];
        header.extend((1..=d).map(|i| format!("q{i}")));
        header.extend(["j_floor", "re_value", "im_value", "stderr"].map(String::from));
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = Table::new("", &hdr);
        let mut out = Outcome::default();
        if !self.qs.is_empty() {
            let est = multiscale::self_energy_batch(model, &self.interaction, &self.qs, &self.j_floors, self.base, self.samples, seed)
                .map_err(|e| e.to_string())?;
            let mut max_abs: f64 = 0.0;
            let mut max_rel: f64 = 0.0;
            for (fi, jf) in self.j_floors.iter().enumerate() {
                for (qi, q) in self.qs.iter().enumerate() {
                    let e = &est[fi][qi];
                    let mut row: Vec<Cell> = vec![model.id().into()];
                    row.extend(q.iter().map(|x| Cell::Float(*x)));
                    row.extend([(*jf).into(), e.value.re.into(), e.value.im.into(), e.stderr.into()]);
                    t.push(row);
                    max_abs = max_abs.max(e.value.norm());
                    if e.value.norm() > 0.0 {
                        max_rel = max_rel.max(e.stderr / e.value.norm());
                    }
                }
            }
            out.metric("max_abs_value", max_abs);
            out.metric("max_rel_stderr", max_rel);
        }
        out.tables.push(t);
        if let Some(p) = &self.probe {
            let opts = SelfEnergyOptions { base: self.base, j_floor: p.j_floor };
            let r = multiscale::holder_probe(
                model,
                &self.interaction,
                &p.q,
                &p.direction,
                p.s,
                p.octave_lo..=p.octave_hi,
                self.samples,
                sub_seed(seed, 1),
                opts,
            )
            .map_err(|e| e.to_string())?;
            let mut pt = Table::new("probe", &["displacement", "quotient", "stderr"]);
            for i in 0..r.displacements.len() {
                pt.push(vec![r.displacements[i].into(), r.quotients[i].into(), r.quotient_stderr[i].into()]);
            }
            out.tables.push(pt);
            out.metric("probe_growth", f64::from(u8::from(r.growth)));
            out.metric("probe_sup_abs", r.sup_abs);
            out.metric("probe_d_q0", r.d_q0);
            if r.status == ProbeStatus::Inconclusive {
                out.inconclusive = Some("probe standard errors exceed half the quotients".into());
            }
            out.text = Some(format!(
                "probe s={} status={:?}\n{}",
                r.s,
                r.status,
                r.displacements
                    .iter()
                    .zip(&r.quotients)
                    .zip(&r.quotient_stderr)
                    .map(|((h, q), e)| format!("  h={h:e} quotient={q:e} stderr={e:e}\n"))
                    .collect::<String>()
            ));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bins {
    Uniform { n_bins: usize },
    Log { center: f64, inner: f64, outer: f64, per_side: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Mc { samples: u64 },
    Grid { per_axis: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogFitWindow {
    pub center: f64,
    pub inner: f64,
    pub outer: f64,
}

fn check_bins(b: &Bins) -> Check {
    match b {
        Bins::Uniform { n_bins } if *n_bins == 0 => Err("params.bins.n_bins: must be positive".into()),
        Bins::Log { inner, outer, per_side, center } => {
            if !(*inner > 0.0 && outer > inner && center.is_finite()) || *per_side == 0 {
                Err("params.bins: need 0 < inner < outer and per_side > 0".into())
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

fn check_source(s: &Source) -> Check {
    match s {
        Source::Mc { samples } => check_positive("source.samples", *samples),
        Source::Grid { per_axis } if *per_axis == 0 => Err("params.source.per_axis: must be positive".into()),
        _ => Ok(()),
    }
}

fn model_dos(model: &DispersionModel, bins: &Bins, source: &Source, seed: u64) -> Result<DosHistogram, String> {
    let src = match source {
        Source::Mc { samples } => DosSource::MonteCarlo { n_samples: *samples, seed },
        Source::Grid { per_axis } => DosSource::Grid { per_axis: *per_axis },
    };
    match bins {
        Bins::Uniform { n_bins } => meanfield::compute_dos(model, *n_bins, &src),
        Bins::Log { center, inner, outer, per_side } => {
            meanfield::compute_dos_with_edges(model, meanfield::log_edges(*center, *inner, *outer, *per_side), &src)
        }
    }
    .map_err(|e| e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosParams {
    pub bins: Bins,
    pub source: Source,
    #[serde(default)]
    pub fit: Option<LogFitWindow>,
}

impl DosParams {
    fn check(&self) -> Check {
        check_bins(&self.bins)?;
        check_source(&self.source)?;
        if let Some(f) = &self.fit {
            if !(f.inner > 0.0 && f.outer > f.inner) {
                return Err("params.fit: need 0 < inner < outer".into());
            }
        }
        Ok(())
    }

    fn run(&self, model: &DispersionModel, seed: u64) -> Result<Outcome, String> {
        let dos = model_dos(model, &self.bins, &self.source, seed)?;
        let mut t = Table::new("", &["E", "rho"]);
        for (c, r) in dos.centers().iter().zip(&dos.rho) {
            t.push(vec![(*c).into(), (*r).into()]);
        }
        let mut out = Outcome { tables: vec![t], ..Outcome::default() };
        out.metric("total", dos.total);
        out.metric("bandwidth", dos.bandwidth);
        if let Some(w) = &self.fit {
            let f = meanfield::fit_log_divergence(&dos, w.center, w.inner, w.outer).map_err(|e| e.to_string())?;
            out.metric("log_strength", f.strength);
            out.metric("log_r_squared", f.r_squared);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BcsDos {
    /// Histogram of the configured model.
    Model { bins: Bins, source: Source },
    Constant { rho0: f64, lo: f64, hi: f64, n_bins: usize },
    /// `K ln(W/|E − E₀|)` on log-spaced bins out to `W`.
    LogSingular { strength: f64, w: f64, e0: f64, inner: f64, per_side: usize },
}

fn law_default() -> TcLaw {
    TcLaw::InvG
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcsParams {
    pub dos: BcsDos,
    pub couplings: Vec<f64>,
    pub e_f: f64,
    #[serde(default = "law_default")]
    pub law: TcLaw,
    /// Temperatures for gap curves, solved at every coupling.
    #[serde(default)]
    pub temperatures: Vec<f64>,
}

impl BcsParams {
    fn check(&self, model: Option<&DispersionModel>) -> Check {
        match &self.dos {
            BcsDos::Model { bins, source } => {
                need_model(model)?;
                check_bins(bins)?;
                check_source(source)?;
            }
            BcsDos::Constant { rho0, lo, hi, n_bins } => {
                if !(*rho0 > 0.0 && lo < hi) || *n_bins == 0 {
                    return Err("params.dos: need rho0 > 0, lo < hi, n_bins > 0".into());
                }
            }
            BcsDos::LogSingular { strength, w, inner, per_side, e0 } => {
                if !(*strength > 0.0 && *inner > 0.0 && w > inner && e0.is_finite()) || *per_side == 0 {
                    return Err("params.dos: need strength > 0 and 0 < inner < w".into());
                }
            }
        }
        if self.couplings.is_empty() || self.couplings.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err("params.couplings: must be nonempty and positive".into());
        }
        if !self.e_f.is_finite() {
            return Err("params.e_f: must be finite".into());
        }
        if self.temperatures.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err("params.temperatures: must be non-negative".into());
        }
        Ok(())
    }

    fn run(&self, model: Option<&DispersionModel>, seed: u64) -> Result<Outcome, String> {
        let dos = match &self.dos {
            BcsDos::Model { bins, source } => model_dos(need_model(model)?, bins, source, seed)?,
            BcsDos::Constant { rho0, lo, hi, n_bins } => {
                DosHistogram::constant(*rho0, meanfield::uniform_edges(*lo, *hi, *n_bins)).map_err(|e| e.to_string())?
            }
            BcsDos::LogSingular { strength, w, e0, inner, per_side } => {
                let edges = meanfield::log_edges(*e0, *inner, *w, *per_side);
                DosHistogram::log_singular(*strength, *w, *e0, edges).map_err(|e| e.to_string())?
            }
        };
        let mut tc_t = Table::new("", &["g", "t_c"]);
        let mut gap_t = Table::new("gap", &["g", "T", "delta"]);
        let mut pairs = Vec::new();
        for g in &self.couplings {
            let sol = meanfield::solve_gap_curve(&dos, *g, self.e_f, &self.temperatures).map_err(|e| e.to_string())?;
            tc_t.push(vec![(*g).into(), sol.t_c.into()]);
            for (t, d) in sol.temperatures.iter().zip(&sol.deltas) {
                gap_t.push(vec![(*g).into(), (*t).into(), (*d).into()]);
            }
            pairs.push((*g, sol.t_c));
        }
        let mut out = Outcome { tables: vec![tc_t, gap_t], ..Outcome::default() };
        out.metric("zero_tc", pairs.iter().filter(|p| p.1 == 0.0).count() as f64);
        let other = match self.law {
            TcLaw::InvG => TcLaw::InvSqrtG,
            TcLaw::InvSqrtG => TcLaw::InvG,
        };
        match meanfield::fit_tc_asymptotics(&pairs, self.law) {
            Ok(f) => {
                out.metric("tc_slope", f.slope);
                out.metric("tc_intercept", f.intercept);
                out.metric("tc_r_squared", f.r_squared);
                if let Ok(o) = meanfield::fit_tc_asymptotics(&pairs, other) {
                    out.metric("other_law_r_squared", o.r_squared);
                }
            }
            Err(e) => out.inconclusive = Some(format!("T_c fit failed: {e}")),
        }
        Ok(out)
    }
}

/// Parameters for each experiment id.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Shellvol(ShellParams),
    BallShellvol(BallShellParams),
    Nesting(NestingParams),
    OverlapI2(OverlapI2Params),
    OverlapW(OverlapWParams),
    DiagramsReport(DiagramsParams),
    Selfenergy(SelfEnergyParams),
    Dos(DosParams),
    Bcs(BcsParams),
}

impl Params {
    pub(crate) fn needs_model(&self) -> bool {
        !matches!(self, Params::DiagramsReport(_) | Params::Bcs(_))
    }

    pub(crate) fn check(&self, model: Option<&DispersionModel>) -> Check {
        match self {
            Params::DiagramsReport(p) => p.check(),
            Params::Bcs(p) => p.check(model),
            Params::Dos(p) => {
                need_model(model)?;
                p.check()
            }
            _ => {
                let m = need_model(model)?;
                match self {
                    Params::Shellvol(p) => p.check(m),
                    Params::BallShellvol(p) => p.check(m),
                    Params::Nesting(p) => p.check(m),
                    Params::OverlapI2(p) => p.check(m),
                    Params::OverlapW(p) => p.check(m),
                    Params::Selfenergy(p) => p.check(m),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Replaces the primary sample budget; returns false when the experiment has
    /// none.
    pub(crate) fn set_budget(&mut self, n: u64) -> bool {
        match self {
            Params::Shellvol(p) => p.samples = n,
            Params::BallShellvol(p) => p.samples = n,
            Params::Nesting(p) => p.n_surface = n as usize,
            Params::OverlapI2(p) => p.pairs = n,
            Params::OverlapW(p) => p.n_surface = n as usize,
            Params::Selfenergy(p) => p.samples = n,
            Params::Dos(p) => match &mut p.source {
                Source::Mc { samples } => *samples = n,
                Source::Grid { .. } => return false,
            },
            Params::Bcs(p) => match &mut p.dos {
                BcsDos::Model { source: Source::Mc { samples }, .. } => *samples = n,
                _ => return false,
            },
            Params::DiagramsReport(_) => return false,
        }
        true
    }

    pub(crate) fn run(&self, model: Option<&DispersionModel>, seed: u64) -> Result<Outcome, String> {
        match self {
            Params::DiagramsReport(p) => p.run(),
            Params::Bcs(p) => p.run(model, seed),
            _ => {
                let m = need_model(model)?;
                match self {
                    Params::Shellvol(p) => p.run(m, seed),
                    Params::BallShellvol(p) => p.run(m, seed),
                    Params::Nesting(p) => p.run(m, seed),
                    Params::OverlapI2(p) => p.run(m, seed),
                    Params::OverlapW(p) => p.run(m, seed),
                    Params::Selfenergy(p) => p.run(m, seed),
                    Params::Dos(p) => p.run(m, seed),
                    _ => unreachable!(),
                }
            }
        }
    }
}
