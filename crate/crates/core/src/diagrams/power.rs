use serde::Serialize;

use super::classify::contract_vertex_groups;
use super::tree::kruskal;
use super::{
    classify_four_legged, find_overlapping_triple, DiagramError, FeynmanGraph, FourLegClass,
    GnForest, Label, OverlapTriple,
};

/// Bound on the sum over a fork's scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ScaleSum {
    /// Four-legged fork: the sum grows like `|j|`.
    AbsJ,
    /// More than four legs: a geometric series bounded by this constant.
    Constant(f64),
    /// Two-legged fork, counted as an inserted subgraph.
    Inserted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForkEntry {
    pub fork: usize,
    pub scale: i32,
    pub parent_scale: i32,
    pub external_legs: usize,
    pub n_vertices: usize,
    pub label: Option<Label>,
    /// `½(j_f − j_π)(4 − E_f)`, the power of `M` carried by this fork.
    pub exponent: f64,
    pub sum: ScaleSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Classification {
    TwoLegged,
    Ladder,
    OverlappingFourLegged,
    Higher,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerCountingReport {
    pub n_vertices: usize,
    pub external_legs: usize,
    pub root_scale: i32,
    /// `½ j (4 − E_φ)`.
    pub root_exponent: f64,
    /// Coefficient `c` of the bound `M^{c j}` at the root scale.
    pub m_power_coefficient: f64,
    /// `c · j_root`.
    pub m_power_exponent: f64,
    /// Power of `|j|` from the inductive bound.
    pub abs_j_power: u32,
    /// Power of `|j|` actually produced by the loop and scale sums.
    pub abs_j_power_sharp: u32,
    pub forks: Vec<ForkEntry>,
    /// Minimal two-legged forks directly below the root.
    pub inserted: Vec<usize>,
    pub classification: Classification,
    pub improvement: Option<Improvement>,
}

/// Volume improvement from an overlapping loop pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Improvement {
    pub epsilon: f64,
    pub triple: OverlapTriple,
}

/// `Σ_{j=j_π+1}^{-1} M^{½(j−j_π)(4−E_f)}`.
pub fn truncated_scale_sum(external_legs: usize, base: f64, j_parent: i32) -> f64 {
    let a = 0.5 * (4.0 - external_legs as f64);
    ((j_parent + 1)..=-1).map(|j| base.powf(a * f64::from(j - j_parent))).sum()
}

struct Sub {
    bound: i64,
    sharp: i64,
}

fn scales_of(forest: &GnForest, g: &FeynmanGraph) -> Result<Vec<i32>, DiagramError> {
    let js = forest
        .line_scales()
        .ok_or_else(|| DiagramError::Mismatch("forest carries no scales".into()))?;
    if js.len() != g.n_lines() || forest.root().lines != g.all_lines() {
        return Err(DiagramError::Mismatch(format!(
            "forest covers {} lines, graph has {}",
            js.len(),
            g.n_lines()
        )));
    }
    Ok(js.to_vec())
}

/// Minimal two-legged forks below `r` and the non-two-legged forks between.
fn split_below(forest: &GnForest, r: usize) -> (Vec<usize>, Vec<usize>) {
    let mut inserted = Vec::new();
    let mut between = Vec::new();
    let mut stack: Vec<usize> = forest.fork(r).children.iter().rev().copied().collect();
    while let Some(c) = stack.pop() {
        let f = forest.fork(c);
        if f.external_legs == 2 {
            inserted.push(c);
        } else {
            between.push(c);
            stack.extend(f.children.iter().rev());
        }
    }
    (inserted, between)
}

fn count(
    forest: &GnForest,
    r: usize,
    base: f64,
    entries: &mut Vec<ForkEntry>,
) -> Sub {
    let fr = forest.fork(r);
    let (inserted, between) = split_below(forest, r);
    for &c in between.iter().chain(&inserted) {
        let f = forest.fork(c);
        let js = f.scale.unwrap();
        let jp = forest.fork(f.parent.unwrap()).scale.unwrap();
        let e = f.external_legs;
        entries.push(ForkEntry {
            fork: c,
            scale: js,
            parent_scale: jp,
            external_legs: e,
            n_vertices: f.n_vertices,
            label: f.label,
            exponent: 0.5 * f64::from(js - jp) * (4.0 - e as f64),
            sum: match e {
                2 => ScaleSum::Inserted,
                4 => ScaleSum::AbsJ,
                _ => ScaleSum::Constant(1.0 / (base - 1.0)),
            },
        });
    }
    let lines_in: usize = inserted.iter().map(|c| forest.fork(*c).lines.len()).sum();
    let verts_in: usize = inserted.iter().map(|c| forest.fork(*c).n_vertices).sum();
    let l_t = (fr.lines.len() - lines_in) as i64;
    let n_t = (fr.n_vertices - verts_in + inserted.len()) as i64;
    let loops = l_t - (n_t - 1);
    let mut bound = loops + (l_t - 1).max(0);
    let mut sharp = loops + between.iter().filter(|c| forest.fork(**c).external_legs == 4).count() as i64;
    for &c in &inserted {
        let s = count(forest, c, base, entries);
        bound += s.bound + 1;
        sharp += s.sharp + 1;
    }
    Sub { bound, sharp }
}

/// Inductive power counting for the value of `G` with `s0` frequency and `s`
/// momentum derivatives.
pub fn power_count_bound(
    g: &FeynmanGraph,
    forest: &GnForest,
    base: f64,
    s0: u32,
    s: u32,
) -> Result<PowerCountingReport, DiagramError> {
    if !(base > 1.0) || !base.is_finite() {
        return Err(DiagramError::Argument(format!("scale base {base} must exceed 1")));
    }
    scales_of(forest, g)?;
    let mut forks = Vec::new();
    let sub = count(forest, 0, base, &mut forks);
    forks.sort_by_key(|e| e.fork);
    let e_root = forest.root().external_legs;
    let j_root = forest.root().scale.unwrap();
    let coef = 0.5 * (4.0 - e_root as f64) - f64::from(s0) - f64::from(s);
    let classification = match g.n_legs() {
        2 => Classification::TwoLegged,
        4 => match classify_four_legged(g)? {
            FourLegClass::Ladder => Classification::Ladder,
            FourLegClass::Overlapping => Classification::OverlappingFourLegged,
        },
        _ => Classification::Higher,
    };
    Ok(PowerCountingReport {
        n_vertices: g.n_four(),
        external_legs: e_root,
        root_scale: j_root,
        root_exponent: 0.5 * f64::from(j_root) * (4.0 - e_root as f64),
        m_power_coefficient: coef,
        m_power_exponent: coef * f64::from(j_root),
        abs_j_power: sub.bound.max(0) as u32,
        abs_j_power_sharp: sub.sharp.max(0) as u32,
        forks,
        inserted: split_below(forest, 0).0,
        classification,
        improvement: None,
    })
}

/// Power counting for a derivative of a two-legged graph. With at least one
/// derivative the bound gains `M^{ε j}` from an overlapping triple of the graph
/// with its minimal two-legged subgraphs contracted.
pub fn derivative_bound_report(
    g: &FeynmanGraph,
    forest: &GnForest,
    base: f64,
    s0: u32,
    s1: u32,
    epsilon: f64,
) -> Result<PowerCountingReport, DiagramError> {
    if g.n_legs() != 2 {
        return Err(DiagramError::LegCount { expected: 2, found: g.n_legs() });
    }
    if s0 > 2 || s1 > 2 {
        return Err(DiagramError::Argument("derivative orders must be 0, 1 or 2".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(DiagramError::Argument(format!("epsilon {epsilon} must lie in (0, 1)")));
    }
    let mut rep = power_count_bound(g, forest, base, s0, s1)?;
    if s0 + s1 == 0 {
        return Ok(rep);
    }
    let js = scales_of(forest, g)?;
    let groups: Vec<Vec<usize>> = rep
        .inserted
        .iter()
        .map(|c| g.vertices_of(forest.fork(*c).lines))
        .collect();
    let (pruned, origin) = contract_vertex_groups(g, &groups)?;
    let pjs: Vec<i32> = origin.iter().map(|l| js[*l]).collect();
    let tree = kruskal(&pruned, &pjs);
    let t = find_overlapping_triple(&pruned, &tree, &pjs).ok_or(DiagramError::NoOverlappingTriple)?;
    let triple = OverlapTriple {
        tree_line: origin[t.tree_line],
        loop_lines: (origin[t.loop_lines.0], origin[t.loop_lines.1]),
    };
    rep.m_power_coefficient += epsilon;
    rep.m_power_exponent = rep.m_power_coefficient * f64::from(rep.root_scale);
    rep.improvement = Some(Improvement { epsilon, triple });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::super::{build_forest, sunset, ScaleAssignment};
    use super::*;

    #[test]
    fn sunset_at_one_scale() {
        let g = sunset();
        let f = build_forest(&g, &ScaleAssignment::uniform(3, -4).unwrap()).unwrap();
        let r = power_count_bound(&g, &f, 2.0, 0, 0).unwrap();
        assert_eq!(r.abs_j_power, 4);
        assert_eq!(r.m_power_coefficient, 1.0);
        assert_eq!(r.m_power_exponent, -4.0);
        let r = power_count_bound(&g, &f, 2.0, 1, 0).unwrap();
        assert_eq!(r.m_power_coefficient, 0.0);
        let d = derivative_bound_report(&g, &f, 2.0, 1, 0, 0.25).unwrap();
        assert_eq!(d.m_power_coefficient, 0.25);
        assert!(d.improvement.is_some());
        let d0 = derivative_bound_report(&g, &f, 2.0, 0, 0, 0.25).unwrap();
        assert_eq!(d0, power_count_bound(&g, &f, 2.0, 0, 0).unwrap());
    }

    #[test]
    fn six_legged_sum() {
        assert!((truncated_scale_sum(6, 2.0, -5) - 15.0 / 16.0).abs() < 1e-15);
        assert!((truncated_scale_sum(4, 2.0, -5) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn scale_sum_kinds() {
        let g = sunset();
        let f = build_forest(&g, &ScaleAssignment::new(vec![-1, -3, -2]).unwrap()).unwrap();
        let r = power_count_bound(&g, &f, 2.0, 0, 0).unwrap();
        assert_eq!(r.forks[0].sum, ScaleSum::AbsJ);
        assert_eq!(r.forks[0].exponent, 0.0);
        assert_eq!(r.forks[1].sum, ScaleSum::Constant(1.0));
        assert_eq!(r.forks[1].exponent, -1.0);
    }

    #[test]
    fn rejects_mismatched_forest() {
        let g = sunset();
        let other = FeynmanGraph::parse("a b\na b\nX a\nX a\nX b\nX b\n").unwrap();
        let f = build_forest(&other, &ScaleAssignment::uniform(2, -1).unwrap()).unwrap();
        assert!(matches!(power_count_bound(&g, &f, 2.0, 0, 0), Err(DiagramError::Mismatch(_))));
    }
}
