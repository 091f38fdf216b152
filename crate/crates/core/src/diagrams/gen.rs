//! Generators for small graphs: exhaustive enumeration up to isomorphism and
//! random pairings of half-edges.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::FeynmanGraph;

type Canon = (Vec<usize>, Vec<usize>);

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn rec(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == p.len() {
            out.push(p.clone());
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, out);
            p.swap(k, i);
        }
    }
    rec(0, &mut p, &mut out);
    out
}

/// Smallest `(legs, upper-triangular adjacency)` over relabellings. The leg
/// vector is minimal only when sorted, so only permutations inside groups of
/// equal leg count are tried.
fn canonical(legs: &[usize], adj: &[Vec<usize>]) -> Canon {
    let n = legs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|v| legs[*v]);
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || legs[order[i]] != legs[order[start]] {
            groups.push((start, i));
            start = i;
        }
    }
    let group_perms: Vec<Vec<Vec<usize>>> = groups.iter().map(|(a, b)| permutations(b - a)).collect();
    let l: Vec<usize> = order.iter().map(|v| legs[*v]).collect();
    let mut best: Option<Vec<usize>> = None;
    let mut pick = vec![0usize; groups.len()];
    let mut p = vec![0usize; n];
    loop {
        for (g, (a, _)) in groups.iter().enumerate() {
            for (i, x) in group_perms[g][pick[g]].iter().enumerate() {
                p[a + i] = order[a + x];
            }
        }
        let mut cand = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in i + 1..n {
                cand.push(adj[p[i]][p[j]]);
            }
        }
        if best.as_ref().is_none_or(|b| cand < *b) {
            best = Some(cand);
        }
        // odometer over the per-group permutations
        let mut g = 0;
        while g < groups.len() {
            pick[g] += 1;
            if pick[g] < group_perms[g].len() {
                break;
            }
            pick[g] = 0;
            g += 1;
        }
        if g == groups.len() {
            break;
        }
    }
    (l, best.unwrap())
}

/// All connected graphs with `n` four-vertices and `legs` external legs, no
/// self-loops, one representative per isomorphism class. Practical for `n ≤ 5`.
pub fn enumerate_graphs(n: usize, legs: usize) -> Vec<FeynmanGraph> {
    if n == 0 || legs > 4 * n || (4 * n - legs) % 2 == 1 {
        return Vec::new();
    }
    let mut seen: BTreeSet<Canon> = BTreeSet::new();
    let mut out = Vec::new();
    let mut leg_counts = vec![0usize; n];
    distribute(0, legs, &mut leg_counts, &mut |lc| {
        let rem: Vec<usize> = lc.iter().map(|x| 4 - x).collect();
        let mut adj = vec![vec![0usize; n]; n];
        fill(0, 1, &mut rem.clone(), &mut adj, &mut |adj| {
            let c = canonical(lc, adj);
            if seen.contains(&c) {
                return;
            }
            let mut lines = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    lines.extend(std::iter::repeat_n((i, j), adj[i][j]));
                }
            }
            let lg: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, lc[v])).collect();
            if let Ok(g) = FeynmanGraph::new(n, lines, lg) {
                seen.insert(c);
                out.push(g);
            }
        });
    });
    out
}

fn distribute(v: usize, left: usize, lc: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if v == lc.len() {
        if left == 0 {
            f(lc);
        }
        return;
    }
    for k in 0..=left.min(4) {
        lc[v] = k;
        distribute(v + 1, left - k, lc, f);
    }
    lc[v] = 0;
}

fn fill(i: usize, j: usize, rem: &mut Vec<usize>, adj: &mut Vec<Vec<usize>>, f: &mut dyn FnMut(&[Vec<usize>])) {
    let n = rem.len();
    if i == n {
        f(adj);
        return;
    }
    if j == n {
        if rem[i] == 0 {
            fill(i + 1, i + 2, rem, adj, f);
        }
        return;
    }
    let max = rem[i].min(rem[j]);
    for k in 0..=max {
        adj[i][j] = k;
        adj[j][i] = k;
        rem[i] -= k;
        rem[j] -= k;
        fill(i, j + 1, rem, adj, f);
        rem[i] += k;
        rem[j] += k;
    }
    adj[i][j] = 0;
    adj[j][i] = 0;
}

/// Random connected graph with `n` four-vertices and `legs` legs, drawn by
/// pairing half-edges uniformly and rejecting self-loops and disconnected
/// results. Returns `None` after `tries` failures.
pub fn random_graph<R: Rng + ?Sized>(n: usize, legs: usize, rng: &mut R, tries: usize) -> Option<FeynmanGraph> {
    if n == 0 || legs > 4 * n || (4 * n - legs) % 2 == 1 {
        return None;
    }
    for _ in 0..tries {
        let mut stubs: Vec<usize> = (0..n).flat_map(|v| [v; 4]).collect();
        stubs.shuffle(rng);
        let lg = stubs[..legs].to_vec();
        let lines: Vec<(usize, usize)> = stubs[legs..].chunks(2).map(|c| (c[0], c[1])).collect();
        if lines.iter().any(|(a, b)| a == b) {
            continue;
        }
        if let Ok(g) = FeynmanGraph::new(n, lines, lg) {
            return Some(g);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_legged_counts() {
        // the only connected two-vertex, two-leg graph without self-loops is the sunset
        assert_eq!(enumerate_graphs(2, 2).len(), 1);
        assert_eq!(enumerate_graphs(1, 4).len(), 1);
        assert_eq!(enumerate_graphs(1, 2).len(), 0);
        assert_eq!(enumerate_graphs(2, 4).len(), 1);
    }
}
