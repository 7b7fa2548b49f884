//! Second-order biased random walks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ETypeGraph;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WalkConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walk_len: usize,
    pub walks_per_node: usize,
}

/// Normalized next-step distribution from `cur`, having arrived from `prev`.
pub fn transition_probabilities(
    graph: &ETypeGraph,
    prev: Option<usize>,
    cur: usize,
    p: f64,
    q: f64,
) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = graph
        .neighbors(cur)
        .iter()
        .map(|&(x, w)| {
            let bias = match prev {
                None => 1.0,
                Some(t) if x == t => 1.0 / p,
                Some(t) if graph.weight(t, x) > 0.0 => 1.0,
                Some(_) => 1.0 / q,
            };
            (x, w * bias)
        })
        .collect();
    let total: f64 = out.iter().map(|e| e.1).sum();
    for e in &mut out {
        e.1 /= total;
    }
    out
}

fn sample(dist: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(x, pr) in dist {
        acc += pr;
        if u < acc {
            return x;
        }
    }
    dist.last().expect("non-empty distribution").0
}

/// Seed of walk number `walk` (counting across all start nodes).
fn walk_seed(seed: u64, walk: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ walk.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// `walks_per_node` walks from every node, rounds over all nodes in index
/// order. A node without neighbors yields a walk repeating itself.
pub fn node2vec_walks(graph: &ETypeGraph, config: &WalkConfig, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(config.p > 0.0 && config.q > 0.0) {
        return Err(Error::Config("node2vec p and q must be positive".into()));
    }
    let n = graph.len();
    let mut walks = Vec::with_capacity(n * config.walks_per_node);
    for round in 0..config.walks_per_node {
        for start in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(seed, (round * n + start) as u64));
            walks.push(single_walk(graph, start, config, &mut rng));
        }
    }
    Ok(walks)
}

fn single_walk(graph: &ETypeGraph, start: usize, config: &WalkConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(config.walk_len);
    if config.walk_len == 0 {
        return walk;
    }
    walk.push(start);
    let mut prev = None;
    while walk.len() < config.walk_len {
        let cur = *walk.last().expect("walk has a start");
        if graph.neighbors(cur).is_empty() {
            walk.push(cur);
            continue;
        }
        let next = sample(&transition_probabilities(graph, prev, cur, config.p, config.q), rng);
        prev = Some(cur);
        walk.push(next);
    }
    walk
}
