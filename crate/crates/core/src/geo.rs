//! County clustering on commute flows and cluster-level aggregation.
//!
//! Counties are joined into self-contained geo-units by running Louvain
//! modularity optimization over the symmetrized residence-to-workplace
//! commute graph. Modularity is computed in matrix form,
//! `Q = 1/2m * sum_ij (W_ij - gamma * k_i k_j / 2m) * [c_i == c_j]`,
//! where a self-loop contributes its diagonal weight to the node strength.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::CommuteEdge;
use crate::series::TimeSeries;

/// Undirected weighted graph over county ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommuteGraph {
    nodes: Vec<String>,
    index: BTreeMap<String, usize>,
    /// Off-diagonal weights, keyed with `i < j`.
    edges: BTreeMap<(usize, usize), f64>,
    /// Diagonal entries of the symmetric weight matrix.
    self_loops: Vec<f64>,
}

impl CommuteGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Symmetric weight between two county ids (0 when absent).
    pub fn weight(&self, a: &str, b: &str) -> f64 {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) if i == j => self.self_loops[i],
            (Some(&i), Some(&j)) => {
                let key = (i.min(j), i.max(j));
                self.edges.get(&key).copied().unwrap_or(0.0)
            }
            _ => 0.0,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Insert an isolated node if missing. Node ids stay sorted.
    pub fn add_node(&mut self, id: &str) {
        if self.index.contains_key(id) {
            return;
        }
        let mut ids: BTreeSet<String> = self.nodes.iter().cloned().collect();
        ids.insert(id.to_string());
        let old = std::mem::take(self);
        let mut g = CommuteGraph::with_nodes(ids);
        for ((i, j), w) in old.edges {
            let (a, b) = (g.index[&old.nodes[i]], g.index[&old.nodes[j]]);
            g.edges.insert((a.min(b), a.max(b)), w);
        }
        for (i, w) in old.self_loops.into_iter().enumerate() {
            let a = g.index[&old.nodes[i]];
            g.self_loops[a] = w;
        }
        *self = g;
    }

    fn with_nodes(ids: BTreeSet<String>) -> Self {
        let nodes: Vec<String> = ids.into_iter().collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let self_loops = vec![0.0; nodes.len()];
        Self {
            nodes,
            index,
            edges: BTreeMap::new(),
            self_loops,
        }
    }

    fn weighted(&self) -> WeightedGraph {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for (&(i, j), &w) in &self.edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for list in &mut adj {
            list.sort_by_key(|e| e.0);
        }
        WeightedGraph::new(adj, self.self_loops.clone())
    }
}

/// Build the commute graph.
///
/// With `symmetrize`, `weight(i, j) = flow(i -> j) + flow(j -> i)`, i.e. the
/// matrix `A + A^T` (so a self-loop flow counts twice on the diagonal).
/// Without it the matrix `(A + A^T) / 2` is used, which leaves already
/// symmetric input unchanged. When a state map is given, edges between
/// counties of different states are dropped; a county missing from the map is
/// treated as its own state.
pub fn build_graph(
    edges: &[CommuteEdge],
    symmetrize: bool,
    states: Option<&BTreeMap<String, String>>,
) -> CommuteGraph {
    let ids: BTreeSet<String> = edges
        .iter()
        .flat_map(|e| [e.home.clone(), e.work.clone()])
        .collect();
    let mut g = CommuteGraph::with_nodes(ids);
    let scale = if symmetrize { 1.0 } else { 0.5 };
    let same_state = |a: &str, b: &str| match states {
        None => true,
        Some(map) => a == b || matches!((map.get(a), map.get(b)), (Some(x), Some(y)) if x == y),
    };
    for e in edges {
        if e.workers <= 0.0 || !same_state(&e.home, &e.work) {
            continue;
        }
        let (i, j) = (g.index[&e.home], g.index[&e.work]);
        if i == j {
            g.self_loops[i] += 2.0 * scale * e.workers;
        } else {
            *g.edges.entry((i.min(j), i.max(j))).or_insert(0.0) += scale * e.workers;
        }
    }
    g
}

/// Adjacency-list graph used internally by Louvain, one level at a time.
#[derive(Debug, Clone)]
struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_w: Vec<f64>,
    strength: Vec<f64>,
    total: f64,
}

impl WeightedGraph {
    fn new(adj: Vec<Vec<(usize, f64)>>, self_w: Vec<f64>) -> Self {
        let strength: Vec<f64> = adj
            .iter()
            .zip(&self_w)
            .map(|(l, s)| s + l.iter().map(|e| e.1).sum::<f64>())
            .collect();
        let total = strength.iter().sum();
        Self {
            adj,
            self_w,
            strength,
            total,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, comm: &[usize], resolution: f64) -> f64 {
        if self.total <= 0.0 {
            return 0.0;
        }
        let k = comm.iter().copied().max().map_or(0, |m| m + 1);
        let mut inner = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for i in 0..self.len() {
            let c = comm[i];
            tot[c] += self.strength[i];
            inner[c] += self.self_w[i];
            for &(j, w) in &self.adj[i] {
                if comm[j] == c {
                    inner[c] += w;
                }
            }
        }
        inner
            .iter()
            .zip(&tot)
            .map(|(a, t)| a / self.total - resolution * (t / self.total).powi(2))
            .sum()
    }

    /// Local-move phase. Returns community labels renumbered by first
    /// appearance in node order.
    fn local_moves(&self, order: &[usize], resolution: f64) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        if self.total <= 0.0 {
            return (comm, false);
        }
        let mut tot = self.strength.clone();
        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any_move = false;
        for _sweep in 0..1000 {
            let mut moved = false;
            for &i in order {
                let ki = self.strength[i];
                let own = comm[i];
                tot[own] -= ki;
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if link[c] == 0.0 {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                let gain = |c: usize, link_c: f64| link_c - resolution * tot[c] * ki / self.total;
                let mut best = own;
                let mut best_gain = gain(own, link[own]);
                touched.sort_unstable();
                for &c in &touched {
                    let g = gain(c, link[c]);
                    if g > best_gain + 1e-12 * self.total {
                        best = c;
                        best_gain = g;
                    }
                }
                for &c in &touched {
                    link[c] = 0.0;
                }
                touched.clear();
                tot[best] += ki;
                if best != own {
                    comm[i] = best;
                    moved = true;
                    any_move = true;
                }
            }
            if !moved {
                break;
            }
        }
        (renumber(&comm), any_move)
    }

    fn coarsen(&self, comm: &[usize]) -> WeightedGraph {
        let k = comm.iter().copied().max().map_or(0, |m| m + 1);
        let mut self_w = vec![0.0; k];
        let mut links: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        for i in 0..self.len() {
            let ci = comm[i];
            self_w[ci] += self.self_w[i];
            for &(j, w) in &self.adj[i] {
                let cj = comm[j];
                if ci == cj {
                    self_w[ci] += w;
                } else {
                    *links[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        let adj = links.into_iter().map(|m| m.into_iter().collect()).collect();
        WeightedGraph::new(adj, self_w)
    }
}

fn renumber(comm: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    comm.iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// One cluster of counties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub counties: Vec<String>,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clustering {
    pub assignment: BTreeMap<String, String>,
    pub clusters: BTreeMap<String, Cluster>,
}

/// On-disk form: `{ "clusters": [ { "id", "counties", "population" } ] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClustersFile {
    pub clusters: Vec<Cluster>,
}

impl Clustering {
    fn from_labels(nodes: &[String], labels: &[usize]) -> Self {
        let mut clusters: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (node, &c) in nodes.iter().zip(labels) {
            clusters.entry(c).or_default().push(node.clone());
        }
        let mut out = Clustering::default();
        for (c, counties) in clusters {
            let id = format!("c{c}");
            for county in &counties {
                out.assignment.insert(county.clone(), id.clone());
            }
            out.clusters.insert(
                id.clone(),
                Cluster {
                    id,
                    counties,
                    population: 0.0,
                },
            );
        }
        out
    }

    /// Every county in its own cluster, named after the county.
    pub fn singletons<'a>(counties: impl IntoIterator<Item = &'a String>) -> Self {
        let mut out = Clustering::default();
        for c in counties {
            out.assignment.insert(c.clone(), c.clone());
            out.clusters.insert(
                c.clone(),
                Cluster {
                    id: c.clone(),
                    counties: vec![c.clone()],
                    population: 0.0,
                },
            );
        }
        out
    }

    /// Fill cluster populations as sums of member populations; returns the
    /// counties that had no population entry.
    pub fn assign_population(&mut self, population: &BTreeMap<String, f64>) -> Vec<String> {
        let mut missing = Vec::new();
        for cluster in self.clusters.values_mut() {
            cluster.population = 0.0;
            for county in &cluster.counties {
                match population.get(county) {
                    Some(p) => cluster.population += p,
                    None => missing.push(county.clone()),
                }
            }
        }
        missing
    }

    pub fn to_file(&self) -> ClustersFile {
        ClustersFile {
            clusters: self.clusters.values().cloned().collect(),
        }
    }

    pub fn from_file(file: ClustersFile) -> Self {
        let mut out = Clustering::default();
        for c in file.clusters {
            for county in &c.counties {
                out.assignment.insert(county.clone(), c.id.clone());
            }
            out.clusters.insert(c.id.clone(), c);
        }
        out
    }

    /// Modularity of this partition on `graph`.
    pub fn modularity(&self, graph: &CommuteGraph, resolution: f64) -> f64 {
        let ids: BTreeMap<&String, usize> = self
            .clusters
            .keys()
            .enumerate()
            .map(|(i, k)| (k, i))
            .collect();
        let next = ids.len();
        let mut extra = 0;
        let labels: Vec<usize> = graph
            .nodes
            .iter()
            .map(|n| match self.assignment.get(n) {
                Some(c) => ids[c],
                None => {
                    extra += 1;
                    next + extra - 1
                }
            })
            .collect();
        graph.weighted().modularity(&labels, resolution)
    }
}

/// Modularity of an arbitrary labelling of `graph.nodes()`.
pub fn modularity(graph: &CommuteGraph, labels: &[usize], resolution: f64) -> f64 {
    graph.weighted().modularity(labels, resolution)
}

/// Two-phase Louvain (local moves, then coarsening) until no node moves.
///
/// Nodes are visited in ascending id order when `seed == 0`; any other seed
/// visits them in a ChaCha-shuffled order. Each node joins the neighbouring
/// community with the largest modularity gain, ties going to the node's own
/// community and then to the lowest community label.
pub fn louvain(graph: &CommuteGraph, resolution: f64, seed: u64) -> Clustering {
    let n = graph.node_count();
    if n == 0 {
        return Clustering::default();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = graph.weighted();
    let mut membership: Vec<usize> = (0..n).collect();
    loop {
        let mut order: Vec<usize> = (0..level.len()).collect();
        if seed != 0 {
            order.shuffle(&mut rng);
        }
        let (labels, moved) = level.local_moves(&order, resolution);
        if !moved {
            break;
        }
        for m in membership.iter_mut() {
            *m = labels[*m];
        }
        level = level.coarsen(&labels);
    }
    Clustering::from_labels(&graph.nodes, &renumber(&membership))
}

/// How member values combine into a cluster value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    /// Sum; a member contributes 0 before its first date and its last known
    /// value after its last date.
    Cumulative,
    /// Sum; a member contributes 0 outside its date range.
    Daily,
    /// Population-weighted mean over members observed on that date.
    Index,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub series: BTreeMap<String, TimeSeries>,
    /// Counties that had a series but no cluster assignment.
    pub unassigned: Vec<String>,
}

/// Aggregate county series to cluster level over the union of member dates.
/// `population` weights [`SeriesKind::Index`]; members without a population
/// entry get weight 1.
pub fn aggregate(
    clustering: &Clustering,
    series: &BTreeMap<String, TimeSeries>,
    kind: SeriesKind,
    population: Option<&BTreeMap<String, f64>>,
) -> Aggregated {
    let mut members: BTreeMap<&String, Vec<&TimeSeries>> = BTreeMap::new();
    let mut unassigned = Vec::new();
    for (county, ts) in series {
        if ts.is_empty() {
            continue;
        }
        match clustering.assignment.get(county) {
            Some(c) => members.entry(c).or_default().push(ts),
            None => unassigned.push(county.clone()),
        }
    }
    let mut out = BTreeMap::new();
    for (cluster, list) in members {
        let start: NaiveDate = list.iter().map(|s| s.start).min().expect("non-empty");
        let end: NaiveDate = list.iter().map(|s| s.end()).max().expect("non-empty");
        let len = (end - start).num_days() as usize + 1;
        let mut values = vec![0.0; len];
        let mut weights = vec![0.0; len];
        for ts in &list {
            let off = (ts.start - start).num_days() as usize;
            let w = population
                .and_then(|p| p.get(&ts.geo_id).copied())
                .unwrap_or(1.0);
            for (t, slot) in values.iter_mut().enumerate() {
                let v = if t < off {
                    None
                } else {
                    ts.values.get(t - off).copied()
                };
                match (kind, v) {
                    (SeriesKind::Cumulative, Some(v)) | (SeriesKind::Daily, Some(v)) => *slot += v,
                    (SeriesKind::Cumulative, None) if t >= off => {
                        *slot += ts.values.last().copied().unwrap_or(0.0)
                    }
                    (SeriesKind::Index, Some(v)) => {
                        *slot += w * v;
                        weights[t] += w;
                    }
                    _ => {}
                }
            }
        }
        if kind == SeriesKind::Index {
            for (v, w) in values.iter_mut().zip(&weights) {
                if *w > 0.0 {
                    *v /= w;
                }
            }
        }
        out.insert(cluster.clone(), TimeSeries::new(cluster.clone(), start, values));
    }
    Aggregated {
        series: out,
        unassigned,
    }
}
