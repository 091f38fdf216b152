//! Experiment runner: TOML configs, pass/fail thresholds, CSV and JSON output.
//!
//! A config names one experiment, a seed, an optional `[model]`, a `[params]`
//! block specific to the experiment and a `[thresholds]` table mapping metric
//! names to `{ min, max }` bounds. Everything is validated before any sampling.

mod experiments;
mod table;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use experiments::{
    BallShellParams, BcsDos, BcsParams, Bins, DiagramsParams, DosParams, LogFitWindow, NestingParams, Outcome,
    OverlapI2Params, OverlapWParams, Params, ProbeParams, SelfEnergyParams, ShellParams, Source,
};
pub use table::{emit_csv, Cell, Table};

use crate::geometry::{DispersionModel, ModelKind};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{experiment} failed: {message}")]
    Module { experiment: ExperimentId, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Shellvol,
    BallShellvol,
    Nesting,
    OverlapI2,
    OverlapW,
    DiagramsReport,
    Selfenergy,
    Dos,
    Bcs,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        ExperimentId::Shellvol,
        ExperimentId::BallShellvol,
        ExperimentId::Nesting,
        ExperimentId::OverlapI2,
        ExperimentId::OverlapW,
        ExperimentId::DiagramsReport,
        ExperimentId::Selfenergy,
        ExperimentId::Dos,
        ExperimentId::Bcs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Shellvol => "shellvol",
            ExperimentId::BallShellvol => "ball_shellvol",
            ExperimentId::Nesting => "nesting",
            ExperimentId::OverlapI2 => "overlap_i2",
            ExperimentId::OverlapW => "overlap_w",
            ExperimentId::DiagramsReport => "diagrams_report",
            ExperimentId::Selfenergy => "selfenergy",
            ExperimentId::Dos => "dos",
            ExperimentId::Bcs => "bcs",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentId,
    seed: u64,
    #[serde(default)]
    out: Option<String>,
    #[serde(default)]
    model: Option<toml::Table>,
    #[serde(default)]
    params: Option<toml::Table>,
    #[serde(default)]
    thresholds: BTreeMap<String, Bound>,
}

/// Validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub out: Option<String>,
    pub model: Option<DispersionModel>,
    pub params: Params,
    pub thresholds: BTreeMap<String, Bound>,
    /// Set when `--samples` named a budget the experiment does not have.
    pub budget_ignored: bool,
}

/// What the hash covers: everything except the output prefix.
#[derive(Serialize)]
struct Canonical<'a> {
    experiment: ExperimentId,
    seed: u64,
    model: Option<&'a ModelKind>,
    params: &'a Params,
    thresholds: &'a BTreeMap<String, Bound>,
}

fn cfg_err(m: impl Into<String>) -> HarnessError {
    HarnessError::Config(m.into())
}

fn parse_params<T: serde::de::DeserializeOwned>(t: toml::Table) -> Result<T, HarnessError> {
    T::deserialize(t).map_err(|e| cfg_err(format!("params: {}", e.message())))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| cfg_err(e.message().to_string()))?;
        let model = match raw.model {
            Some(t) => {
                let kind = ModelKind::deserialize(t).map_err(|e| cfg_err(format!("model: {}", e.message())))?;
                Some(DispersionModel::new(kind).map_err(|e| cfg_err(format!("model: {e}")))?)
            }
            None => None,
        };
        let p = raw.params.ok_or_else(|| cfg_err("params: missing [params] table"))?;
        let params = match raw.experiment {
            ExperimentId::Shellvol => Params::Shellvol(parse_params(p)?),
            ExperimentId::BallShellvol => Params::BallShellvol(parse_params(p)?),
            ExperimentId::Nesting => Params::Nesting(parse_params(p)?),
            ExperimentId::OverlapI2 => Params::OverlapI2(parse_params(p)?),
            ExperimentId::OverlapW => Params::OverlapW(parse_params(p)?),
            ExperimentId::DiagramsReport => Params::DiagramsReport(parse_params(p)?),
            ExperimentId::Selfenergy => Params::Selfenergy(parse_params(p)?),
            ExperimentId::Dos => Params::Dos(parse_params(p)?),
            ExperimentId::Bcs => Params::Bcs(parse_params(p)?),
        };
        let cfg = ExperimentConfig {
            experiment: raw.experiment,
            seed: raw.seed,
            out: raw.out,
            model,
            params,
            thresholds: raw.thresholds,
            budget_ignored: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.model.is_some() && !self.params.needs_model() && !matches!(self.params, Params::Bcs(_)) {
            return Err(cfg_err(format!("model: {} takes no [model] table", self.experiment)));
        }
        self.params.check(self.model.as_ref()).map_err(cfg_err)?;
        for (k, b) in &self.thresholds {
            if b.min.is_none() && b.max.is_none() {
                return Err(cfg_err(format!("thresholds.{k}: give `min`, `max` or both")));
            }
            if b.min.is_some_and(|x| x.is_nan()) || b.max.is_some_and(|x| x.is_nan()) {
                return Err(cfg_err(format!("thresholds.{k}: bounds must be numbers")));
            }
            if let (Some(lo), Some(hi)) = (b.min, b.max) {
                if lo > hi {
                    return Err(cfg_err(format!("thresholds.{k}: min {lo} exceeds max {hi}")));
                }
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_budget(mut self, n: u64) -> Result<Self, HarnessError> {
        if n == 0 {
            return Err(cfg_err("samples: budget must be positive"));
        }
        self.budget_ignored = !self.params.set_budget(n);
        self.validate()?;
        Ok(self)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let c = Canonical {
            experiment: self.experiment,
            seed: self.seed,
            model: self.model.as_ref().map(|m| m.kind()),
            params: &self.params,
            thresholds: &self.thresholds,
        };
        let v = serde_json::to_value(&c).expect("config serializes");
        let text = serde_json::to_string(&v).expect("json value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 3,
        }
    }
}

/// Exit code for a run that never produced a status.
pub const EXIT_ERROR: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdCheck {
    pub metric: String,
    pub value: Option<f64>,
    pub bound: Bound,
    pub ok: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: &'static str,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<ThresholdCheck>,
    pub notes: Vec<String>,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub summary: Summary,
    pub tables: Vec<Table>,
    pub text: Option<String>,
}

/// Pass when every bound holds, fail when one is violated, inconclusive when a
/// bounded metric is missing or not finite, or the experiment says so.
pub fn evaluate(
    metrics: &BTreeMap<String, f64>,
    thresholds: &BTreeMap<String, Bound>,
    inconclusive: bool,
) -> (Status, Vec<ThresholdCheck>) {
    let mut checks = Vec::new();
    let mut failed = false;
    let mut unknown = inconclusive;
    for (k, b) in thresholds {
        let v = metrics.get(k).copied().filter(|v| v.is_finite());
        let ok = v.map(|v| b.min.is_none_or(|lo| v >= lo) && b.max.is_none_or(|hi| v <= hi));
        match ok {
            Some(false) => failed = true,
            None => unknown = true,
            _ => {}
        }
        checks.push(ThresholdCheck { metric: k.clone(), value: v, bound: *b, ok });
    }
    let status = if failed {
        Status::Fail
    } else if unknown {
        Status::Inconclusive
    } else {
        Status::Pass
    };
    (status, checks)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

/// Runs the experiment inside a thread pool of its own.
pub fn run_experiment(config: &ExperimentConfig, opts: RunOptions) -> Result<ResultBundle, HarnessError> {
    config.validate()?;
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let outcome = pool
        .install(|| config.params.run(config.model.as_ref(), config.seed))
        .map_err(|message| HarnessError::Module { experiment: config.experiment, message })?;
    let (status, checks) = evaluate(&outcome.metrics, &config.thresholds, outcome.inconclusive.is_some());
    let mut notes = outcome.notes;
    if let Some(why) = outcome.inconclusive {
        notes.push(format!("inconclusive: {why}"));
    }
    if config.budget_ignored {
        notes.push("sample override ignored: experiment has no sampling budget".into());
    }
    Ok(ResultBundle {
        summary: Summary {
            experiment: config.experiment,
            config_hash: config.hash(),
            seed: config.seed,
            code_version: CODE_VERSION,
            metrics: outcome.metrics,
            checks,
            notes,
            status,
        },
        tables: outcome.tables,
        text: outcome.text,
    })
}

fn table_path(prefix: &str, t: &Table) -> PathBuf {
    if t.name.is_empty() {
        PathBuf::from(format!("{prefix}.csv"))
    } else {
        PathBuf::from(format!("{prefix}_{}.csv", t.name))
    }
}

/// Writes `{prefix}.csv`, `{prefix}_{name}.csv` for extra tables,
/// `{prefix}.json` and `{prefix}.txt` when there is a text report. On failure
/// every file written so far is removed.
pub fn write_bundle(bundle: &ResultBundle, prefix: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written: Vec<PathBuf> = Vec::new();
    let res = (|| -> Result<(), HarnessError> {
        if let Some(dir) = Path::new(prefix).parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
        }
        for t in &bundle.tables {
            let p = table_path(prefix, t);
            written.push(p.clone());
            emit_csv(t, &p).map_err(|source| HarnessError::Io { path: p.clone(), source })?;
        }
        let p = PathBuf::from(format!("{prefix}.json"));
        written.push(p.clone());
        let mut json = serde_json::to_string_pretty(&bundle.summary).expect("summary serializes");
        json.push('\n');
        fs::write(&p, json).map_err(|source| HarnessError::Io { path: p.clone(), source })?;
        if let Some(text) = &bundle.text {
            let p = PathBuf::from(format!("{prefix}.txt"));
            written.push(p.clone());
            fs::write(&p, text).map_err(|source| HarnessError::Io { path: p.clone(), source })?;
        }
        Ok(())
    })();
    match res {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

/// Output prefix: the override, else the config's `out`, else the experiment id.
pub fn output_prefix(config: &ExperimentConfig, over: Option<&str>) -> String {
    over.map(str::to_string)
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| config.experiment.as_str().to_string())
}
