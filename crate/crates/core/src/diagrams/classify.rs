use std::collections::BTreeMap;

use serde::Serialize;

use super::{DiagramError, FeynmanGraph, LineId, VertexId, VertexKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FourLegClass {
    /// Chain of four-vertices joined pairwise by exactly two lines.
    Ladder,
    Overlapping,
}

const MAX_SUBSET_VERTICES: usize = 20;

/// Merges each vertex group into a single vertex. Lines inside a group vanish;
/// a group with two outgoing half-edges becomes a two-vertex. Returns the new
/// graph and, for each new line, the original line index.
pub(crate) fn contract_vertex_groups(
    g: &FeynmanGraph,
    groups: &[Vec<VertexId>],
) -> Result<(FeynmanGraph, Vec<LineId>), DiagramError> {
    let n = g.n_vertices();
    let mut map = vec![usize::MAX; n];
    let mut kinds = Vec::new();
    for grp in groups {
        let id = kinds.len();
        for &v in grp {
            if map[v] != usize::MAX {
                return Err(DiagramError::Argument("vertex groups overlap".into()));
            }
            map[v] = id;
        }
        kinds.push(VertexKind::Two);
    }
    for v in 0..n {
        if map[v] == usize::MAX {
            map[v] = kinds.len();
            kinds.push(g.kinds()[v]);
        }
    }
    let mut lines = Vec::new();
    let mut origin = Vec::new();
    for (l, &(a, b)) in g.lines().iter().enumerate() {
        if map[a] != map[b] {
            lines.push((map[a], map[b]));
            origin.push(l);
        }
    }
    let legs = g.legs().iter().map(|v| map[*v]).collect();
    Ok((FeynmanGraph::with_kinds(kinds, lines, legs)?, origin))
}

/// Removes two-vertices: one joining two lines becomes a single line, one
/// carrying a leg passes the leg to its neighbour. Two-vertices whose removal
/// would create a self-loop are kept.
pub(crate) fn dissolve_two_vertices(g: &FeynmanGraph) -> FeynmanGraph {
    let mut kinds = g.kinds().to_vec();
    let mut lines: Vec<Option<(VertexId, VertexId)>> = g.lines().iter().map(|l| Some(*l)).collect();
    let mut legs = g.legs().to_vec();
    let mut alive = vec![true; kinds.len()];
    loop {
        let mut changed = false;
        for v in 0..kinds.len() {
            if !alive[v] || kinds[v] != VertexKind::Two {
                continue;
            }
            let at: Vec<usize> = (0..lines.len())
                .filter(|&l| lines[l].is_some_and(|(a, b)| a == v || b == v))
                .collect();
            let other = |l: usize| {
                let (a, b) = lines[l].unwrap();
                if a == v { b } else { a }
            };
            match at.len() {
                2 => {
                    let (u, w) = (other(at[0]), other(at[1]));
                    if u == w {
                        continue;
                    }
                    lines[at[0]] = Some((u, w));
                    lines[at[1]] = None;
                }
                1 => {
                    let u = other(at[0]);
                    lines[at[0]] = None;
                    for x in legs.iter_mut().filter(|x| **x == v) {
                        *x = u;
                    }
                }
                _ => continue,
            }
            alive[v] = false;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    let mut map = vec![usize::MAX; kinds.len()];
    let mut nk = Vec::new();
    for v in 0..kinds.len() {
        if alive[v] {
            map[v] = nk.len();
            nk.push(kinds[v]);
        }
    }
    kinds = nk;
    let lines = lines.into_iter().flatten().map(|(a, b)| (map[a], map[b])).collect();
    let legs = legs.into_iter().map(|v| map[v]).collect();
    FeynmanGraph::with_kinds(kinds, lines, legs).expect("dissolving two-vertices keeps the graph valid")
}

/// Contracts maximal proper two-legged subgraphs to two-vertices, then removes
/// the two-vertices.
pub fn reduce_two_legged(g: &FeynmanGraph) -> Result<FeynmanGraph, DiagramError> {
    let n = g.n_vertices();
    if n > MAX_SUBSET_VERTICES {
        return Err(DiagramError::Argument(format!("{n} vertices is too many for subset search")));
    }
    let mut cands: Vec<u32> = Vec::new();
    let full = (1u32 << n) - 1;
    for mask in 1..full {
        let mut deg = 0;
        let mut inside = 0;
        for v in (0..n).filter(|v| mask >> v & 1 == 1) {
            deg += g.degree(v);
        }
        let mut inner = super::LineSet::default();
        for (l, &(a, b)) in g.lines().iter().enumerate() {
            if mask >> a & 1 == 1 && mask >> b & 1 == 1 {
                inside += 1;
                inner.insert(l);
            }
        }
        if inside == 0 || deg - 2 * inside != 2 {
            continue;
        }
        // every vertex of the subset must be reached by its inner lines
        let reached = g.vertices_of(inner);
        if reached.len() == mask.count_ones() as usize && g.is_connected_lines(inner) {
            cands.push(mask);
        }
    }
    cands.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
    let mut taken: Vec<u32> = Vec::new();
    for m in cands {
        if taken.iter().all(|t| t & m == 0) {
            taken.push(m);
        }
    }
    let groups: Vec<Vec<VertexId>> = taken
        .iter()
        .map(|m| (0..n).filter(|v| m >> v & 1 == 1).collect())
        .collect();
    let (c, _) = contract_vertex_groups(g, &groups)?;
    Ok(dissolve_two_vertices(&c))
}

/// Ladder test for four-legged graphs, after two-legged insertions are removed.
pub fn classify_four_legged(g: &FeynmanGraph) -> Result<FourLegClass, DiagramError> {
    if g.n_legs() != 4 {
        return Err(DiagramError::LegCount { expected: 4, found: g.n_legs() });
    }
    let r = reduce_two_legged(g)?;
    Ok(if is_chain(&r) { FourLegClass::Ladder } else { FourLegClass::Overlapping })
}

fn is_chain(g: &FeynmanGraph) -> bool {
    let n = g.n_vertices();
    if g.kinds().iter().any(|k| *k != VertexKind::Four) {
        return false;
    }
    if n == 1 {
        return true;
    }
    let mut mult: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(a, b) in g.lines() {
        *mult.entry((a.min(b), a.max(b))).or_default() += 1;
    }
    if mult.len() != n - 1 || mult.values().any(|m| *m != 2) {
        return false;
    }
    let mut nbrs = vec![0usize; n];
    for &(a, b) in mult.keys() {
        nbrs[a] += 1;
        nbrs[b] += 1;
    }
    // connected with n-1 simple edges is a tree; degree at most 2 makes it a path
    nbrs.iter().all(|d| *d <= 2)
}
