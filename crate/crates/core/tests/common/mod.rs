//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use enas_lab::cellspace::{Activation, Architecture, NodeDecision, SearchSpace};

/// Every architecture of the space, built node by node from first principles.
pub fn enumerate(n: usize) -> Vec<Architecture> {
    let mut partial: Vec<Vec<NodeDecision>> = Activation::ALL
        .iter()
        .map(|&act| vec![NodeDecision { prev: None, act }])
        .collect();
    for i in 2..=n {
        let mut next = Vec::new();
        for p in &partial {
            for prev in 1..i {
                for &act in &Activation::ALL {
                    let mut q = p.clone();
                    q.push(NodeDecision { prev: Some(prev), act });
                    next.push(q);
                }
            }
        }
        partial = next;
    }
    partial
        .into_iter()
        .map(|nodes| Architecture { n_nodes: n, nodes })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum unit-cost edit distance over all node bijections (equal sizes).
pub fn exhaustive_ged(a: &Architecture, b: &Architecture) -> f64 {
    assert_eq!(a.n_nodes, b.n_nodes);
    let n = a.n_nodes;
    let ea: BTreeSet<(usize, usize)> = a.edge_set();
    let eb: BTreeSet<(usize, usize)> = b.edge_set();
    permutations(n)
        .into_iter()
        .map(|pi| {
            let map = |u: usize| pi[u - 1] + 1;
            let subst = (1..=n).filter(|&u| a.activation(u) != b.activation(map(u))).count();
            let mapped: BTreeSet<(usize, usize)> = ea.iter().map(|&(u, v)| (map(u), map(v))).collect();
            let del = mapped.difference(&eb).count();
            let ins = eb.difference(&mapped).count();
            subst + del + ins
        })
        .min()
        .unwrap() as f64
}

/// Whether some bijection preserves labels and edges exactly.
pub fn isomorphic(a: &Architecture, b: &Architecture) -> bool {
    exhaustive_ged(a, b) == 0.0
}

/// Average ranks by counting, then the textbook Pearson formula.
pub fn rank_then_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let below = v.iter().filter(|&&y| y < x).count() as f64;
                let ties = v.iter().filter(|&&y| y == x).count() as f64;
                below + (ties + 1.0) / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let num: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den = (rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>() * ry.iter().map(|b| (b - my).powi(2)).sum::<f64>()).sqrt();
    num / den
}

/// Population standard deviation; any infinite value makes the spread infinite.
pub fn spread(xs: &[f64]) -> f64 {
    if xs.iter().any(|x| x.is_infinite()) {
        return f64::INFINITY;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        (xs[k / 2 - 1] + xs[k / 2]) / 2.0
    }
}

pub fn space(n: usize) -> SearchSpace {
    SearchSpace::new(n).unwrap()
}
