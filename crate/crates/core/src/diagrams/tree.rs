use std::collections::VecDeque;

use serde::Serialize;

use super::{DiagramError, FeynmanGraph, GnForest, LineId, LineSet, VertexId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SpanningTree {
    pub lines: LineSet,
}

impl SpanningTree {
    pub fn contains(&self, l: LineId) -> bool {
        self.lines.contains(l)
    }

    /// Tree lines on the path between two vertices.
    pub fn path(&self, g: &FeynmanGraph, from: VertexId, to: VertexId) -> LineSet {
        let n = g.n_vertices();
        let mut via: Vec<Option<(VertexId, LineId)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[from] = true;
        let mut q = VecDeque::from([from]);
        while let Some(v) = q.pop_front() {
            if v == to {
                break;
            }
            for l in g.lines_at(v) {
                if !self.lines.contains(l) {
                    continue;
                }
                let (a, b) = g.line(l);
                let w = if a == v { b } else { a };
                if !seen[w] {
                    seen[w] = true;
                    via[w] = Some((v, l));
                    q.push_back(w);
                }
            }
        }
        let mut out = LineSet::default();
        let mut v = to;
        while let Some((u, l)) = via[v] {
            out.insert(l);
            v = u;
        }
        out
    }
}

/// Kruskal with lines taken by decreasing scale, ties by index.
pub(crate) fn kruskal(g: &FeynmanGraph, scales: &[i32]) -> SpanningTree {
    let mut order: Vec<LineId> = (0..g.n_lines()).collect();
    order.sort_by_key(|&l| (std::cmp::Reverse(scales[l]), l));
    let mut parent: Vec<usize> = (0..g.n_vertices()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut lines = LineSet::default();
    for l in order {
        let (a, b) = g.line(l);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            lines.insert(l);
        }
    }
    SpanningTree { lines }
}

/// Spanning tree whose restriction to every fork is a spanning tree of that fork.
pub fn choose_spanning_tree(g: &FeynmanGraph, forest: &GnForest) -> Result<SpanningTree, DiagramError> {
    let scales = forest
        .line_scales()
        .ok_or_else(|| DiagramError::Mismatch("forest carries no scales".into()))?;
    if scales.len() != g.n_lines() {
        return Err(DiagramError::Mismatch("scale count differs from line count".into()));
    }
    Ok(kruskal(g, scales))
}

/// Checks that `tree` restricted to each fork spans that fork.
pub fn verify_restriction(g: &FeynmanGraph, forest: &GnForest, tree: &SpanningTree) -> bool {
    forest.forks().iter().all(|f| {
        let t = tree.lines.intersection(f.lines);
        t.len() + 1 == f.n_vertices && (t.is_empty() || g.is_connected_lines(t))
    })
}

/// Loop closed by a non-tree line: the line plus its tree path.
pub fn loop_of_line(g: &FeynmanGraph, tree: &SpanningTree, l: LineId) -> Result<LineSet, DiagramError> {
    if l >= g.n_lines() {
        return Err(DiagramError::Argument(format!("no line {l}")));
    }
    if tree.contains(l) {
        return Err(DiagramError::Argument(format!("line {l} is a tree line")));
    }
    let (a, b) = g.line(l);
    Ok(tree.path(g, a, b).union(LineSet::single(l)))
}

/// Tree path joining the two external legs.
pub fn external_path(g: &FeynmanGraph, tree: &SpanningTree) -> Result<LineSet, DiagramError> {
    if g.n_legs() != 2 {
        return Err(DiagramError::LegCount { expected: 2, found: g.n_legs() });
    }
    Ok(tree.path(g, g.legs()[0], g.legs()[1]))
}

/// A tree line shared by the loops of two loop lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct OverlapTriple {
    pub tree_line: LineId,
    pub loop_lines: (LineId, LineId),
}

/// First tree line (by decreasing scale, then index) lying on two loops, with the
/// first such pair of loop lines by index.
pub fn find_overlapping_triple(
    g: &FeynmanGraph,
    tree: &SpanningTree,
    scales: &[i32],
) -> Option<OverlapTriple> {
    let loops: Vec<(LineId, LineSet)> = (0..g.n_lines())
        .filter(|l| !tree.contains(*l))
        .map(|l| (l, loop_of_line(g, tree, l).unwrap()))
        .collect();
    let mut tree_lines: Vec<LineId> = tree.lines.iter().collect();
    tree_lines.sort_by_key(|&l| (std::cmp::Reverse(scales[l]), l));
    for b in tree_lines {
        let through: Vec<LineId> = loops.iter().filter(|(_, s)| s.contains(b)).map(|(l, _)| *l).collect();
        if through.len() >= 2 {
            return Some(OverlapTriple { tree_line: b, loop_lines: (through[0], through[1]) });
        }
    }
    None
}
