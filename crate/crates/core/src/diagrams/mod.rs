//! Combinatorics of the multiscale expansion: graphs, forests of
//! scale-connected subgraphs, spanning trees and power counting.

mod classify;
mod forest;
pub mod gen;
mod power;
mod tree;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use classify::{classify_four_legged, reduce_two_legged, FourLegClass};
pub use forest::{build_forest, enumerate_labelings, Fork, GnForest, Label, LabelingStream};
pub use power::{
    derivative_bound_report, power_count_bound, truncated_scale_sum, Classification, ForkEntry, Improvement,
    PowerCountingReport, ScaleSum,
};
pub use tree::{
    choose_spanning_tree, external_path, find_overlapping_triple, loop_of_line, verify_restriction,
    OverlapTriple, SpanningTree,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagramError {
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scale assignment: {0}")]
    Scales(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("forest does not match graph: {0}")]
    Mismatch(String),
    #[error("expected {expected} external legs, found {found}")]
    LegCount { expected: usize, found: usize },
    #[error("no overlapping triple in a two-legged graph; input is not 1PI")]
    NoOverlappingTriple,
}

pub type VertexId = usize;
pub type LineId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum VertexKind {
    /// Interaction vertex.
    Four,
    /// Generalized vertex standing for a contracted two-legged subgraph.
    Two,
}

impl VertexKind {
    pub fn degree(self) -> usize {
        match self {
            VertexKind::Four => 4,
            VertexKind::Two => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Attachment {
    /// Internal line and which end (0 or 1).
    Line(LineId, u8),
    Leg(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct HalfEdge {
    pub vertex: VertexId,
    pub attachment: Attachment,
}

/// Bit set of line indices; graphs are limited to 64 internal lines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LineSet(pub u64);

impl LineSet {
    pub fn full(n: usize) -> Self {
        if n == 64 {
            LineSet(u64::MAX)
        } else {
            LineSet((1u64 << n) - 1)
        }
    }
    pub fn single(l: LineId) -> Self {
        LineSet(1 << l)
    }
    pub fn contains(self, l: LineId) -> bool {
        self.0 >> l & 1 == 1
    }
    pub fn insert(&mut self, l: LineId) {
        self.0 |= 1 << l;
    }
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
    pub fn is_subset(self, other: LineSet) -> bool {
        self.0 & !other.0 == 0
    }
    pub fn union(self, o: LineSet) -> LineSet {
        LineSet(self.0 | o.0)
    }
    pub fn intersection(self, o: LineSet) -> LineSet {
        LineSet(self.0 & o.0)
    }
    pub fn difference(self, o: LineSet) -> LineSet {
        LineSet(self.0 & !o.0)
    }
    pub fn iter(self) -> impl Iterator<Item = LineId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let l = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(l)
            }
        })
    }
    pub fn first(self) -> Option<LineId> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }
}

impl FromIterator<LineId> for LineSet {
    fn from_iter<I: IntoIterator<Item = LineId>>(it: I) -> Self {
        let mut s = LineSet::default();
        for l in it {
            s.insert(l);
        }
        s
    }
}

/// Vertices, internal lines and external legs, stored with explicit half-edges.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeynmanGraph {
    kinds: Vec<VertexKind>,
    lines: Vec<(VertexId, VertexId)>,
    legs: Vec<VertexId>,
    half_edges: Vec<HalfEdge>,
    incidence: Vec<Vec<usize>>,
    names: Vec<String>,
}

impl FeynmanGraph {
    /// Vertex kinds are inferred from degree (4 or 2).
    pub fn new(
        n_vertices: usize,
        lines: Vec<(VertexId, VertexId)>,
        legs: Vec<VertexId>,
    ) -> Result<Self, DiagramError> {
        let mut deg = vec![0usize; n_vertices];
        for &(a, b) in &lines {
            if a >= n_vertices || b >= n_vertices {
                return Err(DiagramError::Malformed(format!("line ({a},{b}) names a missing vertex")));
            }
            deg[a] += 1;
            deg[b] += 1;
        }
        for &v in &legs {
            if v >= n_vertices {
                return Err(DiagramError::Malformed(format!("leg on missing vertex {v}")));
            }
            deg[v] += 1;
        }
        let kinds = deg
            .iter()
            .enumerate()
            .map(|(v, d)| match d {
                4 => Ok(VertexKind::Four),
                2 => Ok(VertexKind::Two),
                _ => Err(DiagramError::Malformed(format!("vertex {v} has degree {d}, expected 4 or 2"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_kinds(kinds, lines, legs)
    }

    pub fn with_kinds(
        kinds: Vec<VertexKind>,
        lines: Vec<(VertexId, VertexId)>,
        legs: Vec<VertexId>,
    ) -> Result<Self, DiagramError> {
        let n = kinds.len();
        if n == 0 {
            return Err(DiagramError::Malformed("no vertices".into()));
        }
        if lines.len() > 64 {
            return Err(DiagramError::Malformed("more than 64 internal lines".into()));
        }
        let mut half_edges = Vec::with_capacity(2 * lines.len() + legs.len());
        let mut incidence = vec![Vec::new(); n];
        for (l, &(a, b)) in lines.iter().enumerate() {
            if a >= n || b >= n {
                return Err(DiagramError::Malformed(format!("line {l} names a missing vertex")));
            }
            if a == b {
                return Err(DiagramError::Malformed(format!("line {l} is a self-loop at vertex {a}")));
            }
            for (end, v) in [(0u8, a), (1u8, b)] {
                incidence[v].push(half_edges.len());
                half_edges.push(HalfEdge { vertex: v, attachment: Attachment::Line(l, end) });
            }
        }
        for (x, &v) in legs.iter().enumerate() {
            if v >= n {
                return Err(DiagramError::Malformed(format!("leg {x} on missing vertex")));
            }
            incidence[v].push(half_edges.len());
            half_edges.push(HalfEdge { vertex: v, attachment: Attachment::Leg(x) });
        }
        for v in 0..n {
            if incidence[v].len() != kinds[v].degree() {
                return Err(DiagramError::Malformed(format!(
                    "vertex {v} has degree {}, its kind needs {}",
                    incidence[v].len(),
                    kinds[v].degree()
                )));
            }
        }
        let g = FeynmanGraph {
            kinds,
            lines,
            legs,
            half_edges,
            incidence,
            names: (0..n).map(|v| v.to_string()).collect(),
        };
        if !g.is_connected() {
            return Err(DiagramError::Disconnected);
        }
        Ok(g)
    }

    /// Parses `u v` lines for internal lines and `X v` for external legs.
    pub fn parse(text: &str) -> Result<Self, DiagramError> {
        let mut ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut names: Vec<String> = Vec::new();
        let mut lines = Vec::new();
        let mut legs = Vec::new();
        let mut id = |s: &str, names: &mut Vec<String>| {
            *ids.entry(s.to_string()).or_insert_with(|| {
                names.push(s.to_string());
                names.len() - 1
            })
        };
        for (i, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let tok: Vec<&str> = body.split_whitespace().collect();
            if tok.len() != 2 {
                return Err(DiagramError::Parse { line: i + 1, msg: format!("expected two tokens, got {}", tok.len()) });
            }
            if tok[0] == "X" {
                if tok[1] == "X" {
                    return Err(DiagramError::Parse { line: i + 1, msg: "leg needs a vertex".into() });
                }
                legs.push(id(tok[1], &mut names));
            } else {
                if tok[1] == "X" {
                    return Err(DiagramError::Parse { line: i + 1, msg: "write external legs as `X v`".into() });
                }
                let a = id(tok[0], &mut names);
                let b = id(tok[1], &mut names);
                lines.push((a, b));
            }
        }
        let mut g = Self::new(names.len(), lines, legs)?;
        g.names = names;
        Ok(g)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &(a, b) in &self.lines {
            s.push_str(&format!("{} {}\n", self.names[a], self.names[b]));
        }
        for &v in &self.legs {
            s.push_str(&format!("X {}\n", self.names[v]));
        }
        s
    }

    pub fn n_vertices(&self) -> usize {
        self.kinds.len()
    }
    /// Number of interaction (four-legged) vertices.
    pub fn n_four(&self) -> usize {
        self.kinds.iter().filter(|k| **k == VertexKind::Four).count()
    }
    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }
    pub fn n_legs(&self) -> usize {
        self.legs.len()
    }
    pub fn kinds(&self) -> &[VertexKind] {
        &self.kinds
    }
    pub fn lines(&self) -> &[(VertexId, VertexId)] {
        &self.lines
    }
    pub fn line(&self, l: LineId) -> (VertexId, VertexId) {
        self.lines[l]
    }
    pub fn legs(&self) -> &[VertexId] {
        &self.legs
    }
    pub fn half_edges(&self) -> &[HalfEdge] {
        &self.half_edges
    }
    pub fn vertex_name(&self, v: VertexId) -> &str {
        &self.names[v]
    }
    pub fn degree(&self, v: VertexId) -> usize {
        self.incidence[v].len()
    }
    pub fn all_lines(&self) -> LineSet {
        LineSet::full(self.lines.len())
    }

    /// Internal lines at `v`, with multiplicity.
    pub fn lines_at(&self, v: VertexId) -> impl Iterator<Item = LineId> + '_ {
        self.incidence[v].iter().filter_map(|&h| match self.half_edges[h].attachment {
            Attachment::Line(l, _) => Some(l),
            Attachment::Leg(_) => None,
        })
    }

    pub fn legs_at(&self, v: VertexId) -> usize {
        self.legs.iter().filter(|&&x| x == v).count()
    }

    /// Endpoints of the lines in `s`, sorted.
    pub fn vertices_of(&self, s: LineSet) -> Vec<VertexId> {
        let mut seen = vec![false; self.n_vertices()];
        for l in s.iter() {
            let (a, b) = self.lines[l];
            seen[a] = true;
            seen[b] = true;
        }
        (0..self.n_vertices()).filter(|v| seen[*v]).collect()
    }

    /// External legs of the subgraph `s`: graph legs at its vertices plus ends of
    /// lines outside `s` that land on its vertices.
    pub fn external_legs_of(&self, s: LineSet) -> usize {
        let deg: usize = self.vertices_of(s).iter().map(|v| self.degree(*v)).sum();
        deg - 2 * s.len()
    }

    /// Whether the lines in `s` form a connected subgraph.
    pub fn is_connected_lines(&self, s: LineSet) -> bool {
        let Some(first) = s.first() else { return false };
        let mut reached = LineSet::single(first);
        let mut frontier = vec![first];
        while let Some(l) = frontier.pop() {
            let (a, b) = self.lines[l];
            for v in [a, b] {
                for m in self.lines_at(v) {
                    if s.contains(m) && !reached.contains(m) {
                        reached.insert(m);
                        frontier.push(m);
                    }
                }
            }
        }
        reached == s
    }

    fn is_connected(&self) -> bool {
        self.components_without(None).iter().all(|c| *c == 0)
    }

    /// Component label of each vertex with line `skip` removed.
    fn components_without(&self, skip: Option<LineId>) -> Vec<usize> {
        let n = self.n_vertices();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            let mut q = VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for l in self.lines_at(v) {
                    if Some(l) == skip {
                        continue;
                    }
                    let (a, b) = self.lines[l];
                    let w = if a == v { b } else { a };
                    if comp[w] == usize::MAX {
                        comp[w] = next;
                        q.push_back(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// True when no single internal line separates the external legs.
    pub fn is_one_particle_irreducible(&self) -> bool {
        (0..self.n_lines()).all(|l| {
            let comp = self.components_without(Some(l));
            let (a, b) = self.lines[l];
            if comp[a] == comp[b] {
                return true;
            }
            let side = |c: usize| self.legs.iter().any(|&v| comp[v] == c);
            !(side(comp[a]) && side(comp[b]))
        })
    }
}

impl fmt::Display for FeynmanGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Map from internal line to a negative scale.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ScaleAssignment(Vec<i32>);

impl ScaleAssignment {
    pub fn new(scales: Vec<i32>) -> Result<Self, DiagramError> {
        if let Some((l, j)) = scales.iter().enumerate().find(|(_, j)| **j >= 0) {
            return Err(DiagramError::Scales(format!("line {l} has scale {j}, scales must be negative")));
        }
        Ok(ScaleAssignment(scales))
    }
    pub fn uniform(n_lines: usize, j: i32) -> Result<Self, DiagramError> {
        Self::new(vec![j; n_lines])
    }
    pub fn scales(&self) -> &[i32] {
        &self.0
    }
    pub fn get(&self, l: LineId) -> i32 {
        self.0[l]
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
pub(crate) fn sunset() -> FeynmanGraph {
    FeynmanGraph::new(2, vec![(0, 1), (0, 1), (0, 1)], vec![0, 1]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sunset() {
        let g = FeynmanGraph::parse("# sunset\na b\na b\na b\nX a\nX b\n").unwrap();
        assert_eq!(g, {
            let mut s = sunset();
            s.names = vec!["a".into(), "b".into()];
            s
        });
        assert_eq!(g.n_four(), 2);
        assert!(g.is_one_particle_irreducible());
        assert_eq!(FeynmanGraph::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(matches!(FeynmanGraph::parse("a b\nX a\n"), Err(DiagramError::Malformed(_))));
        assert!(matches!(FeynmanGraph::parse("a a\nX a\nX a\n"), Err(DiagramError::Malformed(_))));
        assert!(matches!(FeynmanGraph::parse("a b c\n"), Err(DiagramError::Parse { line: 1, .. })));
        let two = "a b\na b\nX a\nX a\nX b\nX b\nc d\nc d\nX c\nX c\nX d\nX d\n";
        assert_eq!(FeynmanGraph::parse(two).unwrap_err(), DiagramError::Disconnected);
    }

    #[test]
    fn one_particle_reducible() {
        // sunset on an external leg of a bare vertex
        let g = FeynmanGraph::parse("a b\na b\na b\nb c\nX a\nX c\nX c\nX c\n").unwrap();
        assert!(!g.is_one_particle_irreducible());
    }

    #[test]
    fn external_leg_counting() {
        let g = sunset();
        assert_eq!(g.external_legs_of(LineSet::single(2)), 6);
        assert_eq!(g.external_legs_of(g.all_lines()), 2);
    }

    #[test]
    fn scales_must_be_negative() {
        assert!(ScaleAssignment::new(vec![-1, 0]).is_err());
    }
}
