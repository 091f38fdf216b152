use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vanhove::geometry::*;

fn cube(d: usize, c: f64) -> Domain {
    Domain::Box { lo: vec![-c; d], hi: vec![c; d] }
}

fn perturbed_cone(d: usize, m: usize, c: f64) -> DispersionModel {
    let cubic = vec![
        CubicTerm { indices: [0, 0, d - 1], coefficient: c },
        CubicTerm { indices: [0, 1, 1], coefficient: -0.5 * c },
    ];
    DispersionModel::new(ModelKind::PerturbedCone { m, lambdas: vec![1.0; d], cubic, domain: Domain::Ball { radius: 0.4 } })
        .unwrap()
}

fn models() -> Vec<DispersionModel> {
    let (c, s) = (0.6f64.cos(), 0.6f64.sin());
    let rot = vec![
        vec![c, -s, 0.0, 0.0],
        vec![s, c, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ];
    vec![
        DispersionModel::new(ModelKind::TightBinding2D { t: 1.0, tprime: -0.3, mu: -1.2 }).unwrap(),
        DispersionModel::new(ModelKind::TightBinding3D { t: 1.0, mu: -2.0 }).unwrap(),
        DispersionModel::quadratic(1, vec![1.0, 2.0, 0.5], cube(3, 1.0)).unwrap(),
        DispersionModel::new(ModelKind::QuadraticForm {
            m: 2,
            lambdas: vec![1.0, 0.7, 1.3, 2.0],
            domain: cube(4, 1.0),
            rotation: Some(rot),
        })
        .unwrap(),
        perturbed_cone(3, 1, 0.3),
        DispersionModel::new(ModelKind::Linear { coefficients: vec![1.0, -2.0, 0.5], offset: 0.1, domain: cube(3, 1.0) })
            .unwrap(),
    ]
}

fn point_in(model: &DispersionModel, u: &[f64]) -> Vec<f64> {
    let (lo, hi) = model.bounding_box();
    (0..model.dim()).map(|i| lo[i] + (hi[i] - lo[i]) * u[i]).collect()
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

const FD_STEP: f64 = 1e-4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivatives_match_finite_differences(u in prop::collection::vec(0.02f64..0.98, 4)) {
        for model in models() {
            let d = model.dim();
            let k = point_in(&model, &u);
            if !model.contains(&k) {
                continue;
            }
            let ev = evaluate_model(&model, &k).unwrap();
            let mut fd_grad = vec![0.0; d];
            let mut fd_hess = vec![0.0; d * d];
            let (mut gp, mut gm) = (vec![0.0; d], vec![0.0; d]);
            for i in 0..d {
                let mut kp = k.clone();
                let mut km = k.clone();
                kp[i] += FD_STEP;
                km[i] -= FD_STEP;
                let ep = model.energy_gradient(&kp, &mut gp);
                let em = model.energy_gradient(&km, &mut gm);
                fd_grad[i] = (ep - em) / (2.0 * FD_STEP);
                for j in 0..d {
                    fd_hess[j * d + i] = (gp[j] - gm[j]) / (2.0 * FD_STEP);
                }
            }
            prop_assert!(rel_close(&fd_grad, &ev.grad, 1e-5), "{} grad {:?} vs {:?}", model.id(), fd_grad, ev.grad);
            prop_assert!(rel_close(&fd_hess, &ev.hess, 1e-5), "{} hess {:?} vs {:?}", model.id(), fd_hess, ev.hess);
            for i in 0..d {
                for j in 0..d {
                    prop_assert_eq!(ev.hess[i * d + j], ev.hess[j * d + i]);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn sin_angle_below_chord_ratio(
        a in prop::collection::vec(-10.0f64..10.0, 3),
        b in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
        let s = sin_angle(&a, &b).unwrap();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(s <= norm(&diff) / norm(&a) * (1.0 + 1e-12) + 1e-15);
    }
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 0.1 && r <= 1.0 {
            return v.iter().map(|x| x / r).collect();
        }
    }
}

#[test]
fn perturbed_cone_rays_stay_near_the_diagonal() {
    let model = perturbed_cone(3, 1, 0.3);
    let g0 = model.g0();
    assert!(g0 > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let t1 = if rng.random::<bool>() { vec![1.0] } else { vec![-1.0] };
        let t2 = unit(&mut rng, 2);
        let r = rng.random_range(0.01..0.4);
        let p = ray_intersection(&model, &t1, &t2, r).unwrap();
        assert!(p.r1 >= 0.0 && p.r2 >= 0.0);
        assert!((p.r1 * p.r1 + p.r2 * p.r2 - r * r).abs() < 1e-12);
        assert!((p.r1 - p.r2).abs() <= g0 * r * r, "r={r} r1={} r2={}", p.r1, p.r2);
    }
}

#[test]
fn pure_cone_rays_are_symmetric() {
    let model = DispersionModel::quadratic(1, vec![1.0; 3], Domain::Ball { radius: 1.0 }).unwrap();
    let p = ray_intersection(&model, &[1.0], &[0.6, 0.8], 0.5).unwrap();
    assert!((p.r1 - 0.5 / 2f64.sqrt()).abs() < 1e-12);
    assert!((p.r2 - 0.5 / 2f64.sqrt()).abs() < 1e-12);
    assert!(ray_intersection(&model, &[1.0], &[0.6, 0.8], 1.5).is_err());
}

/// Ratio bound between projected and full angles; the largest ratio seen when
/// this was set was about 1.47 on both cones below.
const G2: f64 = 2.0;

#[test]
fn projected_angles_are_controlled() {
    for (d, m) in [(3, 1), (4, 2)] {
        let model = perturbed_cone(d, m, 0.3);
        let set = sample_fermi_surface(&model, 20_000, 3, &SurfaceOptions::default()).unwrap();
        let kept: Vec<_> = set.samples.iter().filter(|s| !s.excised).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..1000 {
            let w = kept[rng.random_range(0..kept.len())];
            let spread = rng.random_range(0.01..0.3);
            let a: Vec<f64> = w.normal.iter().map(|x| x + spread * rng.random_range(-1.0..1.0)).collect();
            let beta = sin_angle(&w.normal, &a).unwrap();
            if beta < 1e-9 {
                continue;
            }
            for (lo, hi) in [(0, m), (m, d)] {
                let (pn, pa) = (&w.normal[lo..hi], &a[lo..hi]);
                if norm(pn) < 1e-12 || norm(pa) < 1e-12 {
                    continue;
                }
                assert!(sin_angle(pn, pa).unwrap() <= G2 * beta, "d={d} block {lo}..{hi} beta={beta}");
            }
            checked += 1;
        }
        assert!(checked > 900);
    }
}

#[test]
fn cone_surface_area_in_unit_ball() {
    let model = DispersionModel::quadratic(1, vec![1.0; 3], Domain::Ball { radius: 1.0 }).unwrap();
    let set = sample_fermi_surface(&model, 1_000_000, 5, &SurfaceOptions::default()).unwrap();
    let exact = 2f64.sqrt() * std::f64::consts::PI;
    assert!((set.total_mass() / exact - 1.0).abs() < 0.02, "{}", set.total_mass());
    assert!(set.samples.iter().all(|s| model.energy(&s.point).abs() < SURF_TOL));
    assert!(set.samples.iter().all(|s| (norm(&s.normal) - 1.0).abs() < 1e-12 && s.coarea_weight > 0.0));
}

#[test]
fn singular_point_completeness() {
    let tb = DispersionModel::new(ModelKind::TightBinding2D { t: 1.0, tprime: 0.0, mu: 0.0 }).unwrap();
    let found = find_singular_points(&tb);
    assert_eq!(found.points.len(), 2);
    for p in &found.points {
        let on_axis = p.location.iter().filter(|x| x.abs() < 1e-8).count();
        let at_pi = p.location.iter().filter(|x| (x.abs() - std::f64::consts::PI).abs() < 1e-8).count();
        assert_eq!((on_axis, at_pi), (1, 1));
        assert_eq!(p.signature(), (1, 1));
    }
    let q = DispersionModel::quadratic(2, vec![1.0, 3.0, 0.5, 2.0], cube(4, 1.0)).unwrap();
    let found = find_singular_points(&q);
    assert_eq!(found.points.len(), 1);
    assert!(norm(&found.points[0].location) < 1e-8);
    assert_eq!(found.points[0].signature(), (2, 2));
}
