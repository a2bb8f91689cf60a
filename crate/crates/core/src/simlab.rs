//! Architecture similarity metrics and controller-embedding diagnostics.
//!
//! Graph edit distance treats a cell as a node-labelled directed graph
//! (label = activation, edges = predecessor links). Costs: label
//! substitution 1, edge insertion 1, edge deletion 1, node insertion or
//! deletion 1. Unequal sizes are handled by padding the smaller graph with
//! unlabelled isolated nodes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cellspace::Architecture;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const GED_EXACT_LIMIT: usize = 8;

fn same_size(a: &Architecture, b: &Architecture) -> Result<()> {
    if a.n_nodes != b.n_nodes {
        return Err(Error::Shape {
            op: "architecture comparison",
            lhs: (1, a.n_nodes),
            rhs: (1, b.n_nodes),
        });
    }
    Ok(())
}

/// Node positions with the same activation.
pub fn common_activations(a: &Architecture, b: &Architecture) -> Result<usize> {
    same_size(a, b)?;
    Ok((1..=a.n_nodes).filter(|&i| a.activation(i) == b.activation(i)).count())
}

/// Size of the intersection of the directed edge sets.
pub fn common_connections(a: &Architecture, b: &Architecture) -> Result<usize> {
    same_size(a, b)?;
    Ok(a.edge_set().intersection(&b.edge_set()).count())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GedOptions {
    pub exact_limit: usize,
    /// Above the limit, fall back to the identity-mapping upper bound.
    pub allow_heuristic: bool,
}

impl Default for GedOptions {
    fn default() -> Self {
        GedOptions {
            exact_limit: GED_EXACT_LIMIT,
            allow_heuristic: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GedValue {
    pub cost: f64,
    pub exact: bool,
}

/// Padded graph: `labels[k]` is `None` for padding; `adj[u][v]` marks `u -> v`.
struct Graph {
    labels: Vec<Option<usize>>,
    adj: Vec<Vec<bool>>,
    edges: usize,
}

impl Graph {
    fn new(a: &Architecture, size: usize) -> Self {
        let mut labels = vec![None; size];
        let mut adj = vec![vec![false; size]; size];
        for i in 1..=a.n_nodes {
            labels[i - 1] = Some(a.activation(i).ordinal());
        }
        for (p, i) in a.edge_set() {
            adj[p - 1][i - 1] = true;
        }
        Graph {
            labels,
            adj,
            edges: a.n_nodes.saturating_sub(1),
        }
    }

    /// Edges among nodes with index `< k`.
    fn edges_within(&self, k: usize) -> usize {
        (0..k).map(|u| (0..k).filter(|&v| self.adj[u][v]).count()).sum()
    }
}

/// Cost of the full mapping `pi` (node `u` of `ga` to node `pi[u]` of `gb`).
fn mapping_cost(ga: &Graph, gb: &Graph, pi: &[usize]) -> usize {
    let labels = (0..pi.len()).filter(|&u| ga.labels[u] != gb.labels[pi[u]]).count();
    let mut kept = 0;
    for u in 0..pi.len() {
        for v in 0..pi.len() {
            if ga.adj[u][v] && gb.adj[pi[u]][pi[v]] {
                kept += 1;
            }
        }
    }
    labels + ga.edges + gb.edges - 2 * kept
}

struct Search<'g> {
    ga: &'g Graph,
    gb: &'g Graph,
    n: usize,
    pi: Vec<usize>,
    used: Vec<bool>,
    best: usize,
}

impl Search<'_> {
    /// Label-multiset bound over unassigned nodes plus edge-count bound.
    fn lower_bound(&self, depth: usize) -> usize {
        let mut ca = [0usize; 5];
        let mut cb = [0usize; 5];
        let slot = |l: Option<usize>| l.map_or(4, |x| x);
        for u in depth..self.n {
            ca[slot(self.ga.labels[u])] += 1;
        }
        for w in 0..self.n {
            if !self.used[w] {
                cb[slot(self.gb.labels[w])] += 1;
            }
        }
        let matched: usize = ca.iter().zip(&cb).map(|(x, y)| x.min(y)).sum();
        let labels = (self.n - depth) - matched;
        let ea_rem = self.ga.edges - self.ga.edges_within(depth);
        let mut eb_in = 0;
        for u in 0..depth {
            for v in 0..depth {
                if self.gb.adj[self.pi[u]][self.pi[v]] {
                    eb_in += 1;
                }
            }
        }
        let eb_rem = self.gb.edges - eb_in;
        labels + ea_rem.abs_diff(eb_rem)
    }

    /// Cost added by mapping node `u` to `w` given nodes `< u` are mapped.
    fn step_cost(&self, u: usize, w: usize) -> usize {
        let mut c = usize::from(self.ga.labels[u] != self.gb.labels[w]);
        for v in 0..u {
            let pv = self.pi[v];
            c += usize::from(self.ga.adj[v][u] != self.gb.adj[pv][w]);
            c += usize::from(self.ga.adj[u][v] != self.gb.adj[w][pv]);
        }
        c
    }

    fn run(&mut self, depth: usize, cost: usize) {
        if depth == self.n {
            self.best = self.best.min(cost);
            return;
        }
        if cost + self.lower_bound(depth) >= self.best {
            return;
        }
        let mut order: Vec<usize> = (0..self.n).filter(|&w| !self.used[w]).collect();
        order.sort_by_key(|&w| self.ga.labels[depth] != self.gb.labels[w]);
        for w in order {
            let c = cost + self.step_cost(depth, w);
            if c >= self.best {
                continue;
            }
            self.used[w] = true;
            self.pi[depth] = w;
            self.run(depth + 1, c);
            self.used[w] = false;
        }
    }
}

/// Graph edit distance under the unit cost model, exact up to
/// `opts.exact_limit` nodes.
pub fn ged_with(a: &Architecture, b: &Architecture, opts: &GedOptions) -> Result<GedValue> {
    let n = a.n_nodes.max(b.n_nodes);
    let ga = Graph::new(a, n);
    let gb = Graph::new(b, n);
    let identity: Vec<usize> = (0..n).collect();
    let upper = mapping_cost(&ga, &gb, &identity);
    if n > opts.exact_limit {
        if !opts.allow_heuristic {
            return Err(Error::GedLimit {
                n,
                limit: opts.exact_limit,
            });
        }
        return Ok(GedValue {
            cost: upper as f64,
            exact: false,
        });
    }
    let mut s = Search {
        ga: &ga,
        gb: &gb,
        n,
        pi: vec![0; n],
        used: vec![false; n],
        best: upper + 1,
    };
    s.run(0, 0);
    Ok(GedValue {
        cost: s.best.min(upper) as f64,
        exact: true,
    })
}

/// Exact graph edit distance with the default size limit.
pub fn ged(a: &Architecture, b: &Architecture) -> Result<f64> {
    Ok(ged_with(a, b, &GedOptions::default())?.cost)
}

/// Fractional ranks starting at 1; ties share the mean of their range.
pub fn average_ranks(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN rank input".into()));
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    Ok(ranks)
}

/// Spearman's ρ as the Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape {
            op: "spearman",
            lhs: (1, xs.len()),
            rhs: (1, ys.len()),
        });
    }
    if xs.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("{} points, need at least 3", xs.len())));
    }
    let rx = average_ranks(xs)?;
    let ry = average_ranks(ys)?;
    let mean = (xs.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mean, b - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero rank variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean over columns of the population standard deviation across rows.
pub fn collapse_score(hiddens: &Matrix) -> Result<f64> {
    let (k, d) = hiddens.shape();
    if k < 2 || d == 0 {
        return Err(Error::Insufficient {
            needed: 2,
            available: k,
        });
    }
    let mut total = 0.0;
    for c in 0..d {
        let mean = (0..k).map(|r| hiddens.get(r, c)).sum::<f64>() / k as f64;
        let var = (0..k).map(|r| (hiddens.get(r, c) - mean).powi(2)).sum::<f64>() / k as f64;
        total += var.sqrt();
    }
    Ok(total / d as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainType {
    Random,
    Supervised,
    Unsupervised,
    Uniform,
}

impl TrainType {
    pub fn name(self) -> &'static str {
        match self {
            TrainType::Random => "random",
            TrainType::Supervised => "supervised",
            TrainType::Unsupervised => "unsupervised",
            TrainType::Uniform => "uniform",
        }
    }
}

impl fmt::Display for TrainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(TrainType::Random),
            "supervised" => Ok(TrainType::Supervised),
            "unsupervised" => Ok(TrainType::Unsupervised),
            "uniform" => Ok(TrainType::Uniform),
            _ => Err(Error::Parse(format!("unknown train type {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityRecord {
    pub pair_a: usize,
    pub pair_b: usize,
    pub hidden_l2: f64,
    pub common_act: usize,
    pub common_conn: usize,
    pub ged: f64,
    pub ged_exact: bool,
    pub perf_diff: f64,
}

pub const RECORD_HEADER: [&str; 8] = [
    "pair_a",
    "pair_b",
    "hidden_l2",
    "common_act",
    "common_conn",
    "ged",
    "ged_exact",
    "perf_diff",
];

/// `|a - b|`, with two diverged (infinite) perplexities counted as equal.
pub fn perf_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// All pairs `a < b` in lexicographic order. Row `i` of `hiddens` and
/// `ppls[i]` belong to `archs[i]`.
pub fn similarity_records(
    archs: &[Architecture],
    hiddens: &Matrix,
    ppls: &[f64],
    opts: &GedOptions,
) -> Result<Vec<SimilarityRecord>> {
    if hiddens.rows() != archs.len() || ppls.len() != archs.len() {
        return Err(Error::Shape {
            op: "similarity_records",
            lhs: (archs.len(), ppls.len()),
            rhs: hiddens.shape(),
        });
    }
    let mut out = Vec::with_capacity(archs.len() * archs.len().saturating_sub(1) / 2);
    for a in 0..archs.len() {
        for b in a + 1..archs.len() {
            let hidden_l2 = hiddens
                .row(a)
                .iter()
                .zip(hiddens.row(b))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let g = ged_with(&archs[a], &archs[b], opts)?;
            out.push(SimilarityRecord {
                pair_a: a,
                pair_b: b,
                hidden_l2,
                common_act: common_activations(&archs[a], &archs[b])?,
                common_conn: common_connections(&archs[a], &archs[b])?,
                ged: g.cost,
                ged_exact: g.exact,
                perf_diff: perf_diff(ppls[a], ppls[b]),
            });
        }
    }
    Ok(out)
}

pub fn write_records_csv(path: &Path, records: &[SimilarityRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.pair_a.to_string(),
            r.pair_b.to_string(),
            r.hidden_l2.to_string(),
            r.common_act.to_string(),
            r.common_conn.to_string(),
            r.ged.to_string(),
            r.ged_exact.to_string(),
            r.perf_diff.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec[i]
        .parse()
        .map_err(|_| Error::Parse(format!("bad {} value {:?}", RECORD_HEADER[i], &rec[i])))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<SimilarityRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()? != RECORD_HEADER.as_slice() {
        return Err(Error::Parse(format!("{}: unexpected records header", path.display())));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SimilarityRecord {
                pair_a: field(&rec, 0)?,
                pair_b: field(&rec, 1)?,
                hidden_l2: field(&rec, 2)?,
                common_act: field(&rec, 3)?,
                common_conn: field(&rec, 4)?,
                ged: field(&rec, 5)?,
                ged_exact: field(&rec, 6)?,
                perf_diff: field(&rec, 7)?,
            })
        })
        .collect()
}

/// ρ(hidden_l2, metric) for one train type, columns in
/// [`TABLE_HEADER`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationRow {
    pub train_type: TrainType,
    pub common_act: f64,
    pub common_conn: f64,
    pub ged: f64,
    pub perf_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
}

pub const TABLE_HEADER: [&str; 5] = ["train_type", "common_act", "common_conn", "ged", "perf_diff"];

/// Rows sorted random, supervised, unsupervised (then uniform).
pub fn correlation_table(groups: &[(TrainType, Vec<SimilarityRecord>)]) -> Result<CorrelationTable> {
    let mut rows = Vec::with_capacity(groups.len());
    for (tt, recs) in groups {
        let l2: Vec<f64> = recs.iter().map(|r| r.hidden_l2).collect();
        let col = |f: &dyn Fn(&SimilarityRecord) -> f64| -> Result<f64> {
            let ys: Vec<f64> = recs.iter().map(f).collect();
            spearman(&l2, &ys).map_err(|e| e.context(format!("{tt} correlations")))
        };
        rows.push(CorrelationRow {
            train_type: *tt,
            common_act: col(&|r| r.common_act as f64)?,
            common_conn: col(&|r| r.common_conn as f64)?,
            ged: col(&|r| r.ged)?,
            perf_diff: col(&|r| r.perf_diff)?,
        });
    }
    rows.sort_by_key(|r| r.train_type);
    if rows.windows(2).any(|w| w[0].train_type == w[1].train_type) {
        return Err(Error::Config("duplicate train type in correlation table".into()));
    }
    Ok(CorrelationTable { rows })
}

impl CorrelationTable {
    pub fn row(&self, tt: TrainType) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.train_type == tt)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(TABLE_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.train_type.to_string(),
                r.common_act.to_string(),
                r.common_conn.to_string(),
                r.ged.to_string(),
                r.perf_diff.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()? != TABLE_HEADER.as_slice() {
            return Err(Error::Parse(format!("{}: unexpected table header", path.display())));
        }
        let num = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad {} value {:?}", TABLE_HEADER[i], &rec[i])))
        };
        let rows = r
            .records()
            .map(|rec| {
                let rec = rec?;
                Ok(CorrelationRow {
                    train_type: rec[0].parse()?,
                    common_act: num(&rec, 1)?,
                    common_conn: num(&rec, 2)?,
                    ged: num(&rec, 3)?,
                    perf_diff: num(&rec, 4)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CorrelationTable { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellspace::{Activation::*, SearchSpace};

    #[test]
    fn common_counts() {
        let a = Architecture::chain(&[Tanh, Relu, Relu]);
        let b = Architecture::chain(&[Tanh, Sigmoid, Relu]);
        assert_eq!(common_activations(&a, &b).unwrap(), 2);
        assert_eq!(common_activations(&a, &a).unwrap(), 3);
        let t = Architecture::chain(&[Tanh; 3]);
        let r = Architecture::chain(&[Relu; 3]);
        assert_eq!(common_activations(&t, &r).unwrap(), 0);
        assert_eq!(common_connections(&a, &a).unwrap(), 2);
        let star = Architecture::star(&[Tanh; 3]);
        assert_eq!(common_connections(&t, &star).unwrap(), 1);
        let one = Architecture::chain(&[Tanh]);
        assert_eq!(common_connections(&one, &Architecture::chain(&[Relu])).unwrap(), 0);
        assert!(common_activations(&one, &a).is_err());
    }

    #[test]
    fn ged_small_cases() {
        let a = Architecture::chain(&[Tanh, Relu]);
        assert_eq!(ged(&a, &a).unwrap(), 0.0);
        assert_eq!(ged(&a, &Architecture::chain(&[Tanh, Sigmoid])).unwrap(), 1.0);
        // chain vs star on 3 nodes: one edge moves (delete + insert).
        let chain = Architecture::chain(&[Tanh; 3]);
        let star = Architecture::star(&[Tanh; 3]);
        assert_eq!(ged(&chain, &star).unwrap(), 2.0);
        // relabelling nodes 2 and 3 of a star is free
        let s1 = Architecture::star(&[Tanh, Relu, Sigmoid]);
        let s2 = Architecture::star(&[Tanh, Sigmoid, Relu]);
        assert_eq!(ged(&s1, &s2).unwrap(), 0.0);
    }

    #[test]
    fn ged_limit_and_heuristic() {
        let space = SearchSpace::new(9).unwrap();
        let a = Architecture::parse("tanh 1:relu 2:relu 3:relu 4:relu 5:relu 6:relu 7:relu 8:relu", &space).unwrap();
        assert!(matches!(ged(&a, &a), Err(Error::GedLimit { n: 9, limit: 8 })));
        let opts = GedOptions {
            allow_heuristic: true,
            ..GedOptions::default()
        };
        let v = ged_with(&a, &a, &opts).unwrap();
        assert_eq!((v.cost, v.exact), (0.0, false));
    }

    #[test]
    fn ged_unequal_sizes_pads() {
        let a = Architecture::chain(&[Tanh, Relu]);
        let b = Architecture::chain(&[Tanh, Relu, Relu]);
        // insert one node and one edge
        assert_eq!(ged(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]).unwrap(), vec![1.0, 2.5, 2.5, 4.0]);
        // ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): cov 4.5, var 4.5 and 5
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn collapse_examples() {
        let same = Matrix::from_vec(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(collapse_score(&same).unwrap(), 0.0);
        let alt = Matrix::from_vec(4, 2, vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(collapse_score(&alt).unwrap(), 0.5);
    }

    #[test]
    fn table_from_monotone_records() {
        let recs: Vec<SimilarityRecord> = (0..6)
            .map(|i| SimilarityRecord {
                pair_a: 0,
                pair_b: i + 1,
                hidden_l2: (i as f64).powi(2),
                common_act: 6 - i,
                common_conn: i % 2,
                ged: i as f64,
                ged_exact: true,
                perf_diff: (i * 7 % 5) as f64,
            })
            .collect();
        let t = correlation_table(&[
            (TrainType::Unsupervised, recs.clone()),
            (TrainType::Random, recs.clone()),
        ])
        .unwrap();
        assert_eq!(t.rows[0].train_type, TrainType::Random);
        assert!((t.rows[0].ged - 1.0).abs() < 1e-15);
        assert!((t.rows[0].common_act + 1.0).abs() < 1e-15);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(CorrelationTable::read_csv(&p).unwrap(), t);
        let rp = dir.path().join("r.csv");
        write_records_csv(&rp, &recs).unwrap();
        assert_eq!(read_records_csv(&rp).unwrap(), recs);
    }
}
