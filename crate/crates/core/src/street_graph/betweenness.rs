//! Edge betweenness centrality over length-weighted, undirected street graphs.
//!
//! Single-source passes follow Brandes' accumulation with Dijkstra ordering;
//! parallel edges between the same pair of nodes are distinct paths. Values are
//! summed over unordered node pairs and then divided by `n(n-1)/2`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EdgeId, GraphError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BetweennessMode {
    Exact,
    /// `k` distinct source nodes drawn uniformly with the given seed.
    Sampled { k: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweennessResult {
    /// Normalized centrality indexed by edge id.
    pub values: Vec<f64>,
    /// Unnormalized sums over unordered pairs.
    pub raw: Vec<f64>,
    pub mode: BetweennessMode,
    /// Divisor applied to `raw` to obtain `values`.
    pub normalization: f64,
}

impl BetweennessResult {
    pub fn get(&self, edge: EdgeId) -> Option<f64> {
        self.values.get(edge as usize).copied()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "edge_id,beta")?;
        for (id, beta) in self.values.iter().enumerate() {
            writeln!(out, "{id},{beta}")?;
        }
        Ok(())
    }

    /// Reads an `edge_id,beta` file. Only normalized values survive the round
    /// trip, so `raw` is reconstructed from `normalization` when supplied.
    pub fn read_csv(path: impl AsRef<Path>, mode: BetweennessMode, normalization: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut pairs = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let id: usize = row
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GraphError::BetweennessFormat(format!("bad edge id in {row:?}")))?;
            let beta: f64 = row
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GraphError::BetweennessFormat(format!("bad beta in {row:?}")))?;
            pairs.push((id, beta));
        }
        pairs.sort_by_key(|p| p.0);
        if pairs.iter().enumerate().any(|(i, p)| p.0 != i) {
            return Err(GraphError::BetweennessFormat("edge ids must be 0..n without gaps".into()));
        }
        let values: Vec<f64> = pairs.into_iter().map(|p| p.1).collect();
        let raw = values.iter().map(|v| v * normalization).collect();
        Ok(Self { values, raw, mode, normalization })
    }
}

/// Undirected multigraph on dense indices `0..n` with positive edge weights.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, usize, f64)>>,
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sources per parallel work unit. Fixed so the reduction order does not
/// depend on the thread count.
const SOURCE_CHUNK: usize = 32;

impl WeightedGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (id, &(u, v, w)) in edges.iter().enumerate() {
            if u == v {
                continue;
            }
            adjacency[u].push((v, id, w));
            adjacency[v].push((u, id, w));
        }
        Self { n, edges, adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_betweenness(&self, mode: BetweennessMode) -> Result<BetweennessResult> {
        let (sources, scale): (Vec<usize>, f64) = match mode {
            BetweennessMode::Exact => ((0..self.n).collect(), 1.0),
            BetweennessMode::Sampled { k, seed } => {
                if k == 0 {
                    return Err(GraphError::InvalidSampleSize(0));
                }
                let k = k.min(self.n);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picked = sample(&mut rng, self.n, k).into_vec();
                picked.sort_unstable();
                (picked, self.n as f64 / k.max(1) as f64)
            }
        };

        let partials: Vec<Vec<f64>> = sources
            .par_chunks(SOURCE_CHUNK)
            .map(|chunk| {
                let mut acc = vec![0.0; self.edges.len()];
                let mut scratch = Scratch::new(self.n);
                for &s in chunk {
                    self.accumulate_from(s, &mut scratch, &mut acc);
                }
                acc
            })
            .collect();
        let mut raw = vec![0.0; self.edges.len()];
        for part in &partials {
            for (r, p) in raw.iter_mut().zip(part) {
                *r += p;
            }
        }
        // every unordered pair was visited from both ends
        for r in &mut raw {
            *r *= scale / 2.0;
        }

        let n = self.n as f64;
        let normalization = if self.n >= 2 { n * (n - 1.0) / 2.0 } else { 1.0 };
        let values = raw.iter().map(|r| r / normalization).collect();
        Ok(BetweennessResult { values, raw, mode, normalization })
    }

    fn accumulate_from(&self, source: usize, s: &mut Scratch, acc: &mut [f64]) {
        s.reset();
        s.dist[source] = 0.0;
        s.sigma[source] = 1.0;
        let mut heap = BinaryHeap::new();
        heap.push(Frontier(0.0, source));

        while let Some(Frontier(d, u)) = heap.pop() {
            if s.done[u] || d > s.dist[u] {
                continue;
            }
            s.done[u] = true;
            s.order.push(u);
            for &(w, edge, len) in &self.adjacency[u] {
                if s.done[w] {
                    continue;
                }
                let alt = d + len;
                let tol = 1e-12 * alt.max(1.0);
                if alt < s.dist[w] - tol {
                    s.dist[w] = alt;
                    s.sigma[w] = s.sigma[u];
                    s.preds[w].clear();
                    s.preds[w].push((u, edge));
                    heap.push(Frontier(alt, w));
                } else if (alt - s.dist[w]).abs() <= tol {
                    s.sigma[w] += s.sigma[u];
                    s.preds[w].push((u, edge));
                }
            }
        }

        while let Some(w) = s.order.pop() {
            for &(v, edge) in &s.preds[w] {
                let c = s.sigma[v] / s.sigma[w] * (1.0 + s.delta[w]);
                acc[edge] += c;
                s.delta[v] += c;
            }
        }
    }
}

struct Scratch {
    dist: Vec<f64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    done: Vec<bool>,
    preds: Vec<Vec<(usize, usize)>>,
    order: Vec<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            dist: vec![f64::INFINITY; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
            done: vec![false; n],
            preds: vec![Vec::new(); n],
            order: Vec::with_capacity(n),
        }
    }

    fn reset(&mut self) {
        self.dist.fill(f64::INFINITY);
        self.sigma.fill(0.0);
        self.delta.fill(0.0);
        self.done.fill(false);
        self.preds.iter_mut().for_each(Vec::clear);
        self.order.clear();
    }
}
