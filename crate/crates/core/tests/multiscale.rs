use num_complex::Complex64;
use proptest::prelude::*;
use vanhove::geometry::{DispersionModel, Domain};
use vanhove::multiscale::*;

fn cone() -> DispersionModel {
    DispersionModel::quadratic(1, vec![1.0; 3], Domain::Box { lo: vec![-1.0; 3], hi: vec![1.0; 3] }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn cutoffs_form_a_partition_of_unity(base in 1.2f64..4.0, j_floor in -14i32..=-4, t in 0.0f64..1.0) {
        let lo = covered_lower(base, j_floor).ln();
        let hi = (1.0 / base).ln();
        let u = (lo + t * (hi - lo)).exp();
        let sum: f64 = (j_floor..=-1).map(|j| scale_cutoff(base, j, u)).sum();
        prop_assert!((sum - 1.0).abs() < 1e-10, "sum {sum} at {u}");
        prop_assert!((sum - cutoff_sum(base, j_floor, u)).abs() < 1e-10);
        for j in j_floor..=-1 {
            let w = scale_cutoff(base, j, u);
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn propagator_vanishes_off_its_annulus(j in -10i32..=-1, k0 in -1.0f64..1.0, k in prop::collection::vec(-1.0f64..1.0, 3)) {
        let m = cone();
        let c = ScalePropagator::new(&m, 2.0, j).unwrap();
        let (lo, hi) = c.support();
        let u = Complex64::new(-m.energy(&k), k0).norm();
        let z = c.eval(k0, &k);
        if u < lo || u > hi {
            prop_assert_eq!(z, Complex64::new(0.0, 0.0));
        }
        prop_assert!(z.norm() <= 1.0 / u + 1e-12);
    }
}

#[test]
fn exact_zeros_at_the_edges() {
    let m = cone();
    for j in [-6, -3, -1] {
        let c = ScalePropagator::new(&m, 2.0, j).unwrap();
        let (lo, hi) = c.support();
        assert_eq!(c.eval(hi * 1.0000001, &[0.0; 3]), Complex64::new(0.0, 0.0));
        assert_eq!(c.eval(lo * 0.9999999, &[0.0; 3]), Complex64::new(0.0, 0.0));
    }
    // the top scale has no upper cutoff below 1/M
    assert_eq!(scale_cutoff(2.0, -1, 1e-3), 0.0);
    assert_eq!(scale_cutoff(2.0, -1, 0.3), 1.0);
}

#[test]
fn self_energy_is_bit_reproducible() {
    let m = cone();
    let v = Interaction::Gaussian { amplitude: 1.0, range: 0.8 };
    let q = [0.05, 0.2, 0.1, 0.0];
    let opts = SelfEnergyOptions { base: 2.0, j_floor: -6 };
    let a = second_order_self_energy(&m, &v, &q, 20_000, 9, opts).unwrap();
    let b = second_order_self_energy(&m, &v, &q, 20_000, 9, opts).unwrap();
    assert_eq!(a, b);
    let c = second_order_self_energy(&m, &v, &q, 20_000, 10, opts).unwrap();
    assert_ne!(a.value, c.value);
}

#[test]
fn batch_agrees_with_single_evaluations() {
    let m = cone();
    let v = Interaction::Constant { value: 1.0 };
    let qs = vec![vec![0.0, 0.1, 0.0, 0.0], vec![0.1, 0.0, 0.3, 0.0]];
    let batch = self_energy_batch(&m, &v, &qs, &[-5, -6], 2.0, 10_000, 4).unwrap();
    for (fi, jf) in [-5, -6].into_iter().enumerate() {
        for (qi, q) in qs.iter().enumerate() {
            let one = second_order_self_energy(&m, &v, q, 10_000, 4, SelfEnergyOptions { base: 2.0, j_floor: jf })
                .unwrap();
            if jf == -6 {
                // the frequency law is tuned to the lowest floor, so only that one repeats exactly
                assert_eq!(one, batch[fi][qi]);
            } else {
                let se = one.stderr.hypot(batch[fi][qi].stderr);
                assert!((one.value - batch[fi][qi].value).norm() <= 4.0 * se);
            }
        }
    }
}

#[test]
fn constant_interaction_scales_quadratically() {
    let m = cone();
    let q = [0.0, 0.2, 0.0, 0.1];
    let opts = SelfEnergyOptions { base: 2.0, j_floor: -5 };
    let one = second_order_self_energy(&m, &Interaction::Constant { value: 1.0 }, &q, 10_000, 2, opts).unwrap();
    let three = second_order_self_energy(&m, &Interaction::Constant { value: 3.0 }, &q, 10_000, 2, opts).unwrap();
    assert!((three.value - 9.0 * one.value).norm() <= 1e-9 * three.value.norm());
}

fn probe_of(f: impl Fn(f64) -> f64) -> RegularityProbe {
    holder_probe_with(&[0.0, 0.0], &[1.0], 0.5, 2..=12, 1.0, |pts| {
        Ok(pts.iter().map(|x| vec![Complex64::new(f(x[1]), 0.0); 4]).collect())
    })
    .unwrap()
}

#[test]
fn probe_separates_steps_from_smooth_functions() {
    let step = probe_of(|x| if x > 0.0 { 1.0 } else { 0.0 });
    assert_eq!(step.status, ProbeStatus::Growth);
    let lipschitz = probe_of(|x| 3.0 * x);
    assert_eq!(lipschitz.status, ProbeStatus::Bounded);
    // Hölder with exponent above s
    let rough = probe_of(|x| x.abs().powf(0.7));
    assert_eq!(rough.status, ProbeStatus::Bounded);
    // exponent below s: quotients grow like h^{−0.3}
    let worse = probe_of(|x| x.abs().powf(0.2));
    assert_eq!(worse.status, ProbeStatus::Growth);
}

#[test]
fn probe_reports_noise_as_inconclusive() {
    let p = holder_probe_with(&[0.0, 0.0], &[1.0], 0.5, 2..=8, 1.0, |pts| {
        Ok(pts
            .iter()
            .enumerate()
            .map(|(i, _)| (0..16).map(|s| Complex64::new(if (s + i) % 2 == 0 { 1.0 } else { -1.0 }, 0.0)).collect())
            .collect())
    })
    .unwrap();
    assert_eq!(p.status, ProbeStatus::Inconclusive);
}
