use proptest::prelude::*;
use vanhove::geometry::{DispersionModel, Domain, ModelKind};
use vanhove::shellvol::*;

fn slab() -> DispersionModel {
    DispersionModel::new(ModelKind::Linear {
        coefficients: vec![1.0, 0.0, 0.0],
        offset: 0.0,
        domain: Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] },
    })
    .unwrap()
}

fn saddle() -> DispersionModel {
    DispersionModel::quadratic(1, vec![1.0, 1.0], Domain::Box { lo: vec![-1.0; 2], hi: vec![1.0; 2] }).unwrap()
}

fn cone() -> DispersionModel {
    DispersionModel::quadratic(1, vec![1.0; 3], Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] }).unwrap()
}

#[test]
fn slab_volume_is_unbiased() {
    let m = slab();
    let spec = ShellSpec::new(&m, 2.0, -3, None).unwrap();
    let exact = 8.0 * 2f64.powi(-3);
    let inside = (0..100u64)
        .filter(|seed| {
            let v = estimate_shell_volume(&spec, 20_000, 1000 + seed).unwrap();
            (v.value - exact).abs() <= 3.0 * v.stderr
        })
        .count();
    assert!(inside >= 99, "{inside}/100 within 3 standard errors");
}

#[test]
fn grid_oracle_on_the_slab() {
    let m = slab();
    for j in -6..=-1 {
        let spec = ShellSpec::new(&m, 2.0, j, None).unwrap();
        let g = grid_shell_volume(&spec, 128);
        let exact = 8.0 * 2f64.powi(j);
        assert!((g.value - exact).abs() < 1e-12, "j={j} {}", g.value);
    }
}

fn model_by_index(i: usize) -> DispersionModel {
    match i {
        0 => saddle(),
        1 => cone(),
        _ => DispersionModel::new(ModelKind::TightBinding2D { t: 1.0, tprime: -0.2, mu: -0.8 }).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shells_nest(which in 0usize..3, base in 1.5f64..4.0, seed in 0u64..1_000_000) {
        let m = model_by_index(which);
        let per_axis = if m.dim() == 2 { 256 } else { 48 };
        let mut prev_grid = f64::INFINITY;
        let mut prev_mc: Option<VolumeEstimate> = None;
        for j in -5..=-1 {
            let spec = ShellSpec::new(&m, base, j, None).unwrap();
            let g = grid_shell_volume(&spec, per_axis);
            prop_assert!(g.value >= 0.0);
            // j increases so the shell widens
            if prev_grid.is_finite() {
                prop_assert!(g.value >= prev_grid);
            }
            prev_grid = g.value;
            let v = estimate_shell_volume(&spec, 20_000, seed).unwrap();
            if let Some(p) = &prev_mc {
                prop_assert!(v.value + 3.0 * v.stderr.hypot(p.stderr) >= p.value);
            }
            prev_mc = Some(v);
        }
    }
}

#[test]
fn ball_restricted_volume_stays_inside_the_ball() {
    let m = cone();
    let ball = BallRestriction { center: vec![0.0; 3], epsilon: 0.25 };
    for j in [-8, -6, -4] {
        let spec = ShellSpec::new(&m, 2.0, j, Some(ball.clone())).unwrap();
        let r = spec.ball_radius().unwrap();
        let v = estimate_ball_shell_volume(&spec, 200_000, 3).unwrap();
        let full = estimate_shell_volume(&ShellSpec::new(&m, 2.0, j, None).unwrap(), 200_000, 3).unwrap();
        assert!(v.value <= vanhove::geometry::ball_volume(3, r));
        assert!(v.value <= full.value + 3.0 * full.stderr.hypot(v.stderr));
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let m = cone();
    assert!(ShellSpec::new(&m, 1.0, -3, None).is_err());
    assert!(ShellSpec::new(&m, 2.0, 0, None).is_err());
    let bad = BallRestriction { center: vec![0.0; 2], epsilon: 0.25 };
    assert!(ShellSpec::new(&m, 2.0, -3, Some(bad)).is_err());
    let bad = BallRestriction { center: vec![0.0; 3], epsilon: 0.5 };
    assert!(ShellSpec::new(&m, 2.0, -3, Some(bad)).is_err());
}
