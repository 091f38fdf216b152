use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{DiagramError, FeynmanGraph, LineId, LineSet, ScaleAssignment};

/// Label carried by a two-legged fork: renormalized (`R`) or counterterm (`C`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Label {
    R,
    C,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fork {
    pub lines: LineSet,
    /// Scale at which the subgraph becomes connected; `None` for a bare shape.
    pub scale: Option<i32>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub external_legs: usize,
    pub n_vertices: usize,
    pub label: Option<Label>,
}

/// Forest of scale-connected subgraphs. Fork 0 is the root (all lines); parents
/// always precede their children.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GnForest {
    forks: Vec<Fork>,
    line_scales: Option<Vec<i32>>,
    owner: Vec<usize>,
}

impl GnForest {
    /// Builds a forest from explicit line sets. The sets must be laminar and
    /// connected, include the full line set, and siblings must not share vertices.
    pub fn from_parts(
        g: &FeynmanGraph,
        parts: &[(LineSet, Option<Label>)],
    ) -> Result<Self, DiagramError> {
        let mut map: BTreeMap<LineSet, Option<Label>> = BTreeMap::new();
        for (s, lab) in parts {
            if map.insert(*s, *lab).is_some() {
                return Err(DiagramError::Mismatch("repeated subgraph".into()));
            }
        }
        Self::assemble(g, map, None)
    }

    fn assemble(
        g: &FeynmanGraph,
        map: BTreeMap<LineSet, Option<Label>>,
        line_scales: Option<&[i32]>,
    ) -> Result<Self, DiagramError> {
        let all = g.all_lines();
        if !map.contains_key(&all) {
            return Err(DiagramError::Mismatch("root must contain every line".into()));
        }
        let mut sets: Vec<(LineSet, Option<Label>)> = map.into_iter().collect();
        sets.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        let mut forks: Vec<Fork> = Vec::with_capacity(sets.len());
        for (i, (s, label)) in sets.iter().enumerate() {
            if s.is_empty() || !s.is_subset(all) {
                return Err(DiagramError::Mismatch("subgraph lines out of range".into()));
            }
            if !g.is_connected_lines(*s) {
                return Err(DiagramError::Mismatch(format!("subgraph {:#x} is not connected", s.0)));
            }
            let mut parent = None;
            for (k, f) in forks.iter().enumerate() {
                let inter = f.lines.intersection(*s);
                if inter.is_empty() {
                    continue;
                }
                if !s.is_subset(f.lines) {
                    return Err(DiagramError::Mismatch("subgraphs overlap without nesting".into()));
                }
                if parent.is_none_or(|p: usize| f.lines.len() <= forks[p].lines.len()) {
                    parent = Some(k);
                }
            }
            if i > 0 && parent.is_none() {
                return Err(DiagramError::Mismatch("subgraph outside the root".into()));
            }
            let scale = line_scales.map(|js| s.iter().map(|l| js[l]).min().unwrap());
            forks.push(Fork {
                lines: *s,
                scale,
                parent,
                children: Vec::new(),
                external_legs: g.external_legs_of(*s),
                n_vertices: g.vertices_of(*s).len(),
                label: *label,
            });
            if let Some(p) = parent {
                forks[p].children.push(i);
            }
        }
        for f in &forks {
            let covered = f.children.iter().fold(LineSet::default(), |a, c| a.union(forks[*c].lines));
            if covered == f.lines {
                return Err(DiagramError::Mismatch("a subgraph has no lines of its own".into()));
            }
            for (a, &c1) in f.children.iter().enumerate() {
                let v1 = g.vertices_of(forks[c1].lines);
                for &c2 in &f.children[a + 1..] {
                    let v2 = g.vertices_of(forks[c2].lines);
                    if v1.iter().any(|v| v2.contains(v)) {
                        return Err(DiagramError::Mismatch("sibling subgraphs share a vertex".into()));
                    }
                }
            }
        }
        let owner = (0..g.n_lines())
            .map(|l| {
                (0..forks.len())
                    .filter(|&k| forks[k].lines.contains(l))
                    .min_by_key(|&k| forks[k].lines.len())
                    .unwrap()
            })
            .collect();
        Ok(GnForest { forks, line_scales: line_scales.map(<[i32]>::to_vec), owner })
    }

    pub fn forks(&self) -> &[Fork] {
        &self.forks
    }
    pub fn fork(&self, f: usize) -> &Fork {
        &self.forks[f]
    }
    pub fn root(&self) -> &Fork {
        &self.forks[0]
    }
    pub fn len(&self) -> usize {
        self.forks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.forks.is_empty()
    }
    pub fn line_scales(&self) -> Option<&[i32]> {
        self.line_scales.as_deref()
    }
    pub fn n_lines(&self) -> usize {
        self.owner.len()
    }
    /// Smallest fork containing line `l`.
    pub fn owner(&self, l: LineId) -> usize {
        self.owner[l]
    }

    /// The set of subgraphs, sorted, ignoring scales and labels.
    pub fn shape(&self) -> Vec<LineSet> {
        let mut v: Vec<LineSet> = self.forks.iter().map(|f| f.lines).collect();
        v.sort();
        v
    }

    /// Same forks with labels attached, keyed by line set.
    pub fn with_labels(mut self, labels: &BTreeMap<LineSet, Label>) -> Result<Self, DiagramError> {
        for s in labels.keys() {
            if !self.forks.iter().any(|f| f.lines == *s) {
                return Err(DiagramError::Mismatch(format!("no subgraph {:#x} to label", s.0)));
            }
        }
        for f in &mut self.forks {
            f.label = labels.get(&f.lines).copied();
        }
        Ok(self)
    }

    /// Labels every non-root two-legged fork with `label`.
    pub fn label_two_legged(mut self, label: Label) -> Self {
        for f in self.forks.iter_mut().skip(1) {
            if f.external_legs == 2 {
                f.label = Some(label);
            }
        }
        self
    }
}

/// Forest of connected components of `{ℓ : J(ℓ) ≥ j}` over all scales `j`.
pub fn build_forest(g: &FeynmanGraph, scales: &ScaleAssignment) -> Result<GnForest, DiagramError> {
    if scales.len() != g.n_lines() {
        return Err(DiagramError::Scales(format!(
            "{} scales for {} lines",
            scales.len(),
            g.n_lines()
        )));
    }
    let js = scales.scales();
    let levels: BTreeSet<i32> = js.iter().copied().collect();
    let mut parent: Vec<usize> = (0..g.n_vertices()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut added = LineSet::default();
    let mut sets: BTreeMap<LineSet, Option<Label>> = BTreeMap::new();
    for &j in levels.iter().rev() {
        for l in (0..g.n_lines()).filter(|&l| js[l] == j) {
            let (a, b) = g.line(l);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
            added.insert(l);
        }
        let mut comps: BTreeMap<usize, LineSet> = BTreeMap::new();
        for l in added.iter() {
            let r = find(&mut parent, g.line(l).0);
            comps.entry(r).or_default().insert(l);
        }
        for s in comps.into_values() {
            sets.insert(s, None);
        }
    }
    GnForest::assemble(g, sets, Some(js))
}

/// Scale assignments compatible with a labelled forest, in lexicographic order
/// of fork scales. `inconsistent` is set (and nothing is yielded) when the
/// labels or the scale window cannot be honoured.
#[derive(Clone, Debug)]
pub struct LabelingStream {
    pub inconsistent: Option<String>,
    parents: Vec<Option<usize>>,
    labels: Vec<Option<Label>>,
    owner: Vec<usize>,
    j_root: i32,
    j_floor: i32,
    vals: Vec<i32>,
    pending: bool,
}

impl LabelingStream {
    fn range(&self, i: usize) -> (i32, i32) {
        match self.parents[i] {
            None => (self.j_root, self.j_root),
            Some(p) => {
                let x = self.vals[p];
                match self.labels[i] {
                    Some(Label::C) => (self.j_floor, x),
                    _ => (x + 1, -1),
                }
            }
        }
    }

    /// Sets positions `i..` to their lowest values, backtracking if needed.
    fn fill(&mut self, mut i: usize) -> bool {
        let n = self.vals.len();
        while i < n {
            let (lo, hi) = self.range(i);
            if lo <= hi {
                self.vals[i] = lo;
                i += 1;
            } else {
                match self.backtrack(i) {
                    Some(k) => i = k,
                    None => return false,
                }
            }
        }
        true
    }

    /// Increments the last position before `i` that has room; returns the
    /// position after it.
    fn backtrack(&mut self, mut i: usize) -> Option<usize> {
        while i > 0 {
            i -= 1;
            let (_, hi) = self.range(i);
            if self.vals[i] < hi {
                self.vals[i] += 1;
                return Some(i + 1);
            }
        }
        None
    }
}

impl Iterator for LabelingStream {
    type Item = ScaleAssignment;

    fn next(&mut self) -> Option<ScaleAssignment> {
        if !self.pending {
            return None;
        }
        let out = ScaleAssignment(self.owner.iter().map(|&f| self.vals[f]).collect());
        let n = self.vals.len();
        self.pending = match self.backtrack(n) {
            Some(k) => self.fill(k),
            None => false,
        };
        Some(out)
    }
}

/// Enumerates scale assignments `J` with root scale `j_root` and all scales in
/// `[j_floor, -1]` whose forest has the shape of `t`. Ordinary and `R` forks sit
/// strictly above their parent, `C` forks at or below it.
pub fn enumerate_labelings(
    g: &FeynmanGraph,
    t: &GnForest,
    j_root: i32,
    j_floor: i32,
) -> LabelingStream {
    let mut s = LabelingStream {
        inconsistent: None,
        parents: t.forks.iter().map(|f| f.parent).collect(),
        labels: t.forks.iter().map(|f| f.label).collect(),
        owner: t.owner.clone(),
        j_root,
        j_floor,
        vals: vec![0; t.len()],
        pending: false,
    };
    let mut why = None;
    if t.n_lines() != g.n_lines() || t.root().lines != g.all_lines() {
        why = Some("forest does not belong to this graph".to_string());
    } else if j_root >= 0 {
        why = Some(format!("root scale {j_root} is not negative"));
    } else if j_floor > j_root {
        why = Some(format!("floor {j_floor} lies above the root scale {j_root}"));
    } else if t.root().label.is_some() {
        why = Some("the root cannot carry a label".to_string());
    } else {
        for (i, f) in t.forks.iter().enumerate().skip(1) {
            match (f.external_legs == 2, f.label) {
                (false, Some(_)) => why = Some(format!("fork {i} is labelled but has {} legs", f.external_legs)),
                (true, None) => why = Some(format!("two-legged fork {i} has no label")),
                // a C fork sits at or below its parent, so it can never be a
                // separate component of the forest it is drawn in
                (true, Some(Label::C)) => {
                    why = Some(format!("fork {i} is labelled C but the shape needs j_f > j_parent"))
                }
                _ => {}
            }
            if why.is_some() {
                break;
            }
        }
    }
    if why.is_some() {
        s.inconsistent = why;
        return s;
    }
    s.pending = s.fill(0);
    s
}

#[cfg(test)]
mod tests {
    use super::super::sunset;
    use super::*;

    #[test]
    fn sunset_forests() {
        let g = sunset();
        let f = build_forest(&g, &ScaleAssignment::uniform(3, -2).unwrap()).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.root().scale, Some(-2));
        assert_eq!(f.root().external_legs, 2);

        let f = build_forest(&g, &ScaleAssignment::new(vec![-1, -3, -2]).unwrap()).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.fork(1).lines, LineSet(0b101));
        assert_eq!(f.fork(1).scale, Some(-2));
        assert_eq!(f.fork(1).external_legs, 4);
        assert_eq!(f.fork(2).lines, LineSet(0b001));
        assert_eq!(f.fork(2).external_legs, 6);
        assert_eq!(f.fork(2).parent, Some(1));
        assert_eq!(f.owner(1), 0);
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let g = sunset();
        let t = build_forest(&g, &ScaleAssignment::new(vec![-1, -3, -2]).unwrap()).unwrap();
        let got: Vec<_> = enumerate_labelings(&g, &t, -3, -4).collect();
        // root -3, fork {0,2} in {-2,-1}, fork {0} above it
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].scales(), &[-1, -3, -2]);
    }

    #[test]
    fn inconsistent_labels_are_flagged() {
        let g = sunset();
        let t = build_forest(&g, &ScaleAssignment::uniform(3, -2).unwrap()).unwrap();
        let mut labels = BTreeMap::new();
        labels.insert(g.all_lines(), Label::R);
        let t = t.with_labels(&labels).unwrap();
        let s = enumerate_labelings(&g, &t, -2, -5);
        assert!(s.inconsistent.is_some());
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn crossing_parts_rejected() {
        let g = sunset();
        let parts = [(g.all_lines(), None), (LineSet(0b011), None), (LineSet(0b110), None)];
        assert!(GnForest::from_parts(&g, &parts).is_err());
    }
}
