//! Independent oracles shared by property and acceptance tests.
#![allow(dead_code)]

use rand::Rng;

/// Raw edge betweenness by enumerating every shortest path between every
/// unordered node pair. Distances come from Floyd-Warshall; an edge (u, w)
/// lies on a shortest s-t path iff d(s,u) + len + d(w,t) = d(s,t).
pub fn brute_force_edge_betweenness(n: usize, edges: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(u, v, w) in edges {
        if u != v {
            d[u][v] = d[u][v].min(w);
            d[v][u] = d[v][u].min(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let on_path = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.max(1.0);
    let mut out = vec![0.0; edges.len()];
    for s in 0..n {
        for t in (s + 1)..n {
            if !d[s][t].is_finite() {
                continue;
            }
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![(s, Vec::new())];
            while let Some((u, path)) = stack.pop() {
                if u == t {
                    paths.push(path);
                    continue;
                }
                for (id, &(a, b, w)) in edges.iter().enumerate() {
                    if a == b {
                        continue;
                    }
                    for (from, to) in [(a, b), (b, a)] {
                        if from == u && on_path(d[s][u] + w + d[to][t], d[s][t]) && on_path(d[s][u] + w, d[s][to]) {
                            let mut p = path.clone();
                            p.push(id);
                            stack.push((to, p));
                        }
                    }
                }
            }
            let total = paths.len() as f64;
            for p in &paths {
                for &e in p {
                    out[e] += 1.0 / total;
                }
            }
        }
    }
    out
}

/// Random connected multigraph: a random spanning tree plus extra edges,
/// including occasional parallel edges. Integer lengths force ties.
pub fn random_connected_graph<R: Rng>(rng: &mut R, max_nodes: usize, integer_lengths: bool) -> (usize, Vec<(usize, usize, f64)>) {
    let n = rng.gen_range(2..=max_nodes);
    let len = |rng: &mut R| if integer_lengths { rng.gen_range(1..4) as f64 } else { rng.gen_range(0.5..10.0) };
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        let w = len(rng);
        edges.push((u, v, w));
    }
    let extra = rng.gen_range(0..=n);
    for _ in 0..extra {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            let w = len(rng);
            edges.push((u, v, w));
        }
    }
    if rng.gen_bool(0.3) {
        let (u, v, w) = edges[rng.gen_range(0..edges.len())];
        edges.push((v, u, w));
    }
    (n, edges)
}
