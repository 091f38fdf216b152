//! End-to-end acceptance run. Each criterion prints one line; the test fails
//! if any criterion fails. Inconclusive results are reported but do not fail.
//!
//! The bounds being reproduced hold up to unspecified constants, so every
//! criterion checks a scaling form (a fitted exponent or an affine law in
//! `|j|`), never the constants themselves.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use vanhove::harness::*;
use vanhove::multiscale::{holder_probe_with, ProbeStatus};

mod common;

enum Verdict {
    Pass(String),
    Fail(String),
    Inconclusive(String),
}

fn config(name: &str) -> ExperimentConfig {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    ExperimentConfig::load(&dir.join(format!("{name}.toml"))).unwrap()
}

fn run(name: &str) -> Summary {
    run_experiment(&config(name), RunOptions::default()).unwrap().summary
}

fn metric(s: &Summary, k: &str) -> f64 {
    *s.metrics.get(k).unwrap_or_else(|| panic!("{:?} has no metric {k}", s.experiment))
}

fn within(t: Duration, secs: u64) -> bool {
    t <= Duration::from_secs(secs)
}

/// Runs one criterion and writes its line straight to stderr so it shows up
/// even when the harness captures output.
fn criterion(n: u32, what: &str, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Verdict::Fail(msg)
    });
    let (tag, detail) = match &v {
        Verdict::Pass(d) => ("PASS", d),
        Verdict::Fail(d) => ("FAIL", d),
        Verdict::Inconclusive(d) => ("INCONCLUSIVE", d),
    };
    let line = format!("criterion {n:>2} {tag:<12} {what}: {detail} [{:.1} s]\n", start.elapsed().as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
    v
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn saddle_2d() -> Verdict {
    let t = Instant::now();
    let s = run("shellvol_saddle2d");
    let (b, res) = (metric(&s, "b"), metric(&s, "relative_residual"));
    let ok = s.status == Status::Pass && b > 0.0 && res < 0.05 && within(t.elapsed(), 120);
    verdict(ok, format!("slope in |j| {b:.4}, relative residual {res:.4}"))
}

fn shells_3d() -> Verdict {
    let t = Instant::now();
    let cone = metric(&run("shellvol_cone3d"), "exponent");
    let tb = metric(&run("shellvol_tb3d"), "exponent");
    let ok = (cone - 1.0).abs() <= 0.05 && (tb - 1.0).abs() <= 0.05 && within(t.elapsed(), 180);
    verdict(ok, format!("exponent cone {cone:.4}, cubic lattice {tb:.4}"))
}

fn ball_shells() -> Verdict {
    let s = run("ball_shellvol_cone3d");
    let dev = metric(&s, "c_max_rel_dev");
    verdict(dev <= 0.25, format!("max relative deviation of C {dev:.4}"))
}

fn nesting() -> Verdict {
    let s = run("nesting_cone3d");
    let (k, r, c) = (metric(&s, "kappa"), metric(&s, "rho_prime"), metric(&s, "kappa_consistency"));
    let ok = (k - 1.0).abs() <= 0.15 && (r - 1.0).abs() <= 0.15 && c <= 1.0;
    verdict(ok, format!("kappa {k:.4}, rho' {r:.4}, kappa'/rho' vs kappa {c:.3} combined se"))
}

fn overlap_w() -> Verdict {
    let s = run("overlap_w_cone3d");
    let e = metric(&s, "zeta_exponent");
    verdict(e >= 0.4, format!("zeta exponent {e:.4}"))
}

fn overlap_i2() -> Verdict {
    let t = Instant::now();
    let s = run("overlap_i2_cone3d");
    let e = metric(&s, "eps3_exponent");
    verdict(e >= 0.08 && within(t.elapsed(), 600), format!("eps3 exponent {e:.4}"))
}

fn combinatorics() -> Verdict {
    let t = Instant::now();
    let forests = common::check_forest_exhaustive();
    common::check_tree_restriction(10_000, 17);
    common::check_two_legged_power(200, 23);
    common::check_ladder_truth();
    verdict(within(t.elapsed(), 60), format!("{forests} forests, 10000 trees, 200 two-legged graphs, 5 labelled"))
}

fn partition() -> Verdict {
    let worst = common::check_partition_of_unity(10_000, 8);
    Verdict::Pass(format!("worst |sum - 1| {worst:.1e}, support zeros exact"))
}

fn probe() -> Verdict {
    let t = Instant::now();
    let calib = holder_probe_with(&[0.0, 0.0], &[1.0], 0.5, 1..=5, 1.0, |pts| {
        Ok(pts.iter().map(|x| vec![Complex64::new(if x[1] > 0.0 { 1.0 } else { 0.0 }, 0.0); 16]).collect())
    })
    .unwrap();
    if calib.status != ProbeStatus::Growth {
        return Verdict::Fail("calibration step not flagged".into());
    }
    let s = run("selfenergy_cone3d");
    let growth = metric(&s, "probe_growth");
    let detail = format!("growth flag {growth}, calibration step flagged");
    if !within(t.elapsed(), 900) {
        return Verdict::Fail(format!("{detail}, over the time limit"));
    }
    match s.status {
        Status::Inconclusive => Verdict::Inconclusive(format!("{detail}; {}", s.notes.join("; "))),
        st => verdict(st == Status::Pass && growth == 0.0, detail),
    }
}

fn mean_field() -> Verdict {
    let t = Instant::now();
    let dos = metric(&run("dos_tb2d"), "log_r_squared");
    let flat = run("bcs_constant");
    let vh = run("bcs_vanhove");
    let (rf, rv) = (metric(&flat, "tc_r_squared"), metric(&vh, "tc_r_squared"));
    let used = |s: &Summary| 8.0 - metric(s, "zero_tc");
    let ok = dos > 0.99 && rf > 0.99 && rv > 0.99 && used(&flat) == 8.0 && used(&vh) == 8.0 && within(t.elapsed(), 120);
    verdict(ok, format!("log fit R2 {dos:.5}, 1/g law R2 {rf:.5}, 1/sqrt(g) law R2 {rv:.5}"))
}

fn files(dir: &Path, cfg: &ExperimentConfig) -> BTreeMap<String, Vec<u8>> {
    let bundle = run_experiment(cfg, RunOptions { threads: Some(1) }).unwrap();
    let prefix = dir.join("run").to_string_lossy().into_owned();
    write_bundle(&bundle, &prefix)
        .unwrap()
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn reproducibility() -> Verdict {
    // reduced budgets; the code path is the same at any budget
    let budgets = [
        ("ball_shellvol_cone3d", Some(100_000)),
        ("bcs_constant", None),
        ("bcs_vanhove", None),
        ("diagrams_sunset", None),
        ("dos_tb2d", Some(200_000)),
        ("nesting_cone3d", Some(4_000)),
        ("overlap_i2_cone3d", Some(200_000)),
        ("overlap_w_cone3d", Some(1_000)),
        ("selfenergy_cone3d", Some(20_000)),
        ("shellvol_cone3d", Some(100_000)),
        ("shellvol_saddle2d", Some(100_000)),
        ("shellvol_tb3d", Some(100_000)),
    ];
    let mut differ = Vec::new();
    for (name, budget) in budgets {
        let mut cfg = config(name);
        if let Some(n) = budget {
            cfg = cfg.with_budget(n).unwrap();
        }
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = files(a.path(), &cfg);
        assert!(!first.is_empty(), "{name} wrote no CSV");
        if first != files(b.path(), &cfg) {
            differ.push(name);
        }
    }
    verdict(differ.is_empty(), format!("{} experiments rerun, differing: {differ:?}", budgets.len()))
}

#[test]
fn acceptance() {
    let verdicts = [
        criterion(1, "saddle shell volumes affine in |j|", saddle_2d),
        criterion(2, "d=3 shell volume exponents", shells_3d),
        criterion(3, "ball-restricted volume constant", ball_shells),
        criterion(4, "cone flatness exponents", nesting),
        criterion(5, "exceptional set W(zeta)", overlap_w),
        criterion(6, "overlapping volume improvement", overlap_i2),
        criterion(7, "forest and graph combinatorics", combinatorics),
        criterion(8, "partition of unity", partition),
        criterion(9, "sunset Holder probe", probe),
        criterion(10, "density of states and critical temperature", mean_field),
        criterion(11, "byte-identical reruns", reproducibility),
    ];
    let failed = verdicts.iter().filter(|v| matches!(v, Verdict::Fail(_))).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
