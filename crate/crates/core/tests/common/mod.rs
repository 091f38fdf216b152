#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vanhove::diagrams::gen::{enumerate_graphs, random_graph};
use vanhove::diagrams::*;
use vanhove::geometry::{DispersionModel, Domain};
use vanhove::multiscale::{covered_lower, cutoff_sum, scale_cutoff, ScalePropagator};

/// Every connected graph of four-vertices with at most six internal lines.
pub fn small_graphs() -> Vec<FeynmanGraph> {
    let mut out = Vec::new();
    for n in 1..=7usize {
        for legs in (0..=4 * n).step_by(2) {
            let lines = (4 * n - legs) / 2;
            if (1..=6).contains(&lines) {
                out.extend(enumerate_graphs(n, legs));
            }
        }
    }
    out
}

pub fn all_assignments(n_lines: usize, scales: &[i32]) -> Vec<Vec<i32>> {
    let mut out = vec![vec![]];
    for _ in 0..n_lines {
        out = out
            .into_iter()
            .flat_map(|p: Vec<i32>| {
                scales.iter().map(move |s| {
                    let mut q = p.clone();
                    q.push(*s);
                    q
                })
            })
            .collect();
    }
    out
}

/// Connected components, as line sets, of the lines with scale at least `j`, for every `j`.
pub fn components_by_definition(g: &FeynmanGraph, js: &[i32]) -> BTreeSet<LineSet> {
    let levels: BTreeSet<i32> = js.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &j in &levels {
        let mut label: Vec<usize> = (0..g.n_vertices()).collect();
        // relabel until stable; the graphs are tiny
        loop {
            let mut changed = false;
            for l in (0..g.n_lines()).filter(|l| js[*l] >= j) {
                let (a, b) = g.line(l);
                let m = label[a].min(label[b]);
                if label[a] != m || label[b] != m {
                    label[a] = m;
                    label[b] = m;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut comps: BTreeMap<usize, LineSet> = BTreeMap::new();
        for l in (0..g.n_lines()).filter(|l| js[*l] >= j) {
            comps.entry(label[g.line(l).0]).or_default().insert(l);
        }
        out.extend(comps.into_values());
    }
    out
}

pub fn legs_by_convention(g: &FeynmanGraph, s: LineSet) -> usize {
    let verts = g.vertices_of(s);
    let mut e: usize = verts.iter().map(|v| g.legs_at(*v)).sum();
    for l in (0..g.n_lines()).filter(|l| !s.contains(*l)) {
        let (a, b) = g.line(l);
        e += usize::from(verts.contains(&a)) + usize::from(verts.contains(&b));
    }
    e
}

/// Compares every forest against the components definition; returns the number of cases.
pub fn check_forest_exhaustive() -> usize {
    let graphs = small_graphs();
    assert_eq!(graphs.len(), 118);
    let mut checked = 0;
    for g in &graphs {
        for js in all_assignments(g.n_lines(), &[-3, -2, -1]) {
            let f = build_forest(g, &ScaleAssignment::new(js.clone()).unwrap()).unwrap();
            let got: BTreeSet<LineSet> = f.forks().iter().map(|k| k.lines).collect();
            assert_eq!(got.len(), f.len(), "repeated fork in {}", g.to_text());
            assert_eq!(got, components_by_definition(g, &js), "{} with {js:?}", g.to_text());
            for (i, k) in f.forks().iter().enumerate() {
                let min = k.lines.iter().map(|l| js[l]).min().unwrap();
                assert_eq!(k.scale, Some(min));
                assert_eq!(k.n_vertices, g.vertices_of(k.lines).len());
                assert_eq!(k.external_legs, legs_by_convention(g, k.lines));
                let parent = f
                    .forks()
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| k.lines != p.lines && k.lines.is_subset(p.lines))
                    .min_by_key(|(_, p)| p.lines.len())
                    .map(|(pi, _)| pi);
                assert_eq!(k.parent, parent, "fork {i}");
                if let Some(p) = parent {
                    assert!(k.scale > f.fork(p).scale);
                }
                for o in f.forks() {
                    let meet = k.lines.intersection(o.lines);
                    assert!(meet.is_empty() || meet == k.lines || meet == o.lines);
                }
            }
            checked += 1;
        }
    }
    assert!(checked > 10_000);
    checked
}

pub fn random_case(rng: &mut ChaCha8Rng, legs: usize) -> (FeynmanGraph, Vec<i32>) {
    loop {
        let n = rng.random_range(2..=6);
        if let Some(g) = random_graph(n, legs, rng, 1000) {
            let js: Vec<i32> = (0..g.n_lines()).map(|_| rng.random_range(-6..=-1)).collect();
            return (g, js);
        }
    }
}

pub fn check_tree_restriction(cases: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let legs = [2, 4, 6][case % 3];
        let (g, js) = random_case(&mut rng, legs);
        let f = build_forest(&g, &ScaleAssignment::new(js.clone()).unwrap()).unwrap();
        let tree = choose_spanning_tree(&g, &f).unwrap();
        assert_eq!(tree.lines.len() + 1, g.n_vertices());
        assert!(verify_restriction(&g, &f, &tree), "{} {js:?}", g.to_text());
        for k in f.forks() {
            // every vertex has four legs counted with its internal line ends
            assert_eq!(2 * k.lines.len(), 4 * k.n_vertices - k.external_legs);
            assert_eq!(tree.lines.intersection(k.lines).len(), k.n_vertices - 1);
        }
    }
}

pub fn check_two_legged_power(count: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    while done < count {
        let (g, js) = random_case(&mut rng, 2);
        if !g.is_one_particle_irreducible() {
            continue;
        }
        let f = build_forest(&g, &ScaleAssignment::new(js).unwrap()).unwrap();
        let n = g.n_four() as u32;
        let r = power_count_bound(&g, &f, 2.0, 0, 0).unwrap();
        assert_eq!(r.abs_j_power, 3 * n - 2, "{}", g.to_text());
        assert_eq!(r.m_power_coefficient, 1.0);
        assert_eq!(r.classification, Classification::TwoLegged);
        let d = derivative_bound_report(&g, &f, 2.0, 1, 0, 0.1).unwrap();
        assert!((d.m_power_coefficient - 0.1).abs() < 1e-12);
        assert!(d.improvement.is_some());
        done += 1;
    }
}

pub fn check_ladder_truth() {
    use FourLegClass::*;
    // labelled by hand: (vertex count, lines, legs, class)
    let truth: Vec<(usize, Vec<(usize, usize)>, Vec<usize>, FourLegClass)> = vec![
        // bare vertex
        (1, vec![], vec![0, 0, 0, 0], Ladder),
        // single bubble
        (2, vec![(0, 1), (0, 1)], vec![0, 0, 1, 1], Ladder),
        // sunset self-energy on one leg of a bare vertex
        (3, vec![(0, 1), (0, 1), (0, 1), (0, 2)], vec![1, 2, 2, 2], Ladder),
        // chain of two bubbles
        (3, vec![(0, 1), (0, 1), (0, 2), (0, 2)], vec![1, 1, 2, 2], Ladder),
        // bubble closed into a triangle: two loops share a line
        (3, vec![(0, 1), (0, 1), (0, 2), (1, 2)], vec![0, 1, 2, 2], Overlapping),
    ];
    let mut seen = Vec::new();
    for n in 1..=3 {
        for g in enumerate_graphs(n, 4) {
            seen.push((n, g.lines().to_vec(), g.legs().to_vec()));
        }
    }
    assert_eq!(seen.len(), truth.len());
    for (n, lines, legs, class) in truth {
        assert!(seen.contains(&(n, lines.clone(), legs.clone())), "{lines:?} not enumerated");
        let g = FeynmanGraph::new(n, lines, legs).unwrap();
        assert_eq!(classify_four_legged(&g).unwrap(), class, "{}", g.to_text());
    }
}

/// Sum of the scale cutoffs at `n` random points of the covered range, for
/// random bases and floors; also checks exact zeros just outside each support.
pub fn check_partition_of_unity(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let base = rng.random_range(1.2..4.0);
        let j_floor = rng.random_range(-14..=-4);
        let (lo, hi) = (covered_lower(base, j_floor).ln(), (1.0 / base).ln());
        let u = rng.random_range(lo..=hi).exp();
        let sum: f64 = (j_floor..=-1).map(|j| scale_cutoff(base, j, u)).sum();
        assert!((sum - cutoff_sum(base, j_floor, u)).abs() < 1e-10);
        worst = worst.max((sum - 1.0).abs());
    }
    assert!(worst < 1e-10, "worst deviation {worst}");
    let m = DispersionModel::quadratic(1, vec![1.0; 3], Domain::Ball { radius: 1.0 }).unwrap();
    for j in -12..=-1 {
        let c = ScalePropagator::new(&m, 2.0, j).unwrap();
        let (a, b) = c.support();
        let zero = Complex64::new(0.0, 0.0);
        assert_eq!(c.eval(b * (1.0 + 1e-9), &[0.0; 3]), zero);
        assert_eq!(c.eval(a * (1.0 - 1e-9), &[0.0; 3]), zero);
        assert_ne!(c.eval(0.5 * (a + b), &[0.0; 3]), zero);
    }
    worst
}
