//! Event-type co-occurrence graph and node2vec embeddings.

mod skipgram;
mod walks;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, ImpressionLog, NewsItem};
use crate::error::{Error, Result};

pub use skipgram::{skipgram_train, SkipGramConfig, SkipGramResult};
pub use walks::{node2vec_walks, transition_probabilities, WalkConfig};

/// Undirected weighted graph over event types; no self-loops.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ETypeGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    /// Neighbors of each node sorted by index, with edge weights.
    adj: Vec<Vec<(usize, f64)>>,
}

impl ETypeGraph {
    /// A graph with the given nodes (sorted, deduplicated) and no edges.
    pub fn with_nodes<I, S>(nodes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = nodes.into_iter().map(Into::into).collect();
        let nodes: Vec<String> = set.into_iter().collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let adj = vec![Vec::new(); nodes.len()];
        Self { nodes, index, adj }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adj[node]
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.adj[a]
            .binary_search_by_key(&b, |&(n, _)| n)
            .map_or(0.0, |i| self.adj[a][i].1)
    }

    pub fn weight_by_name(&self, a: &str, b: &str) -> f64 {
        match (self.node_index(a), self.node_index(b)) {
            (Some(x), Some(y)) => self.weight(x, y),
            _ => 0.0,
        }
    }

    /// Adds `w` to the undirected edge `a–b`; self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        if a == b {
            return;
        }
        for (x, y) in [(a, b), (b, a)] {
            match self.adj[x].binary_search_by_key(&y, |&(n, _)| n) {
                Ok(i) => self.adj[x][i].1 += w,
                Err(i) => self.adj[x].insert(i, (y, w)),
            }
        }
    }

    /// Edges `(a, b, weight)` with `a < b` by name order.
    pub fn edges(&self) -> Vec<(&str, &str, f64)> {
        let mut out = Vec::new();
        for (a, ns) in self.adj.iter().enumerate() {
            for &(b, w) in ns {
                if a < b {
                    out.push((self.nodes[a].as_str(), self.nodes[b].as_str(), w));
                }
            }
        }
        out
    }

    /// Tab-separated edge list, one `typeA<TAB>typeB<TAB>weight` per line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (a, b, w) in self.edges() {
            let _ = writeln!(s, "{a}\t{b}\t{w}");
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [a, b, w] = parts[..] else {
                return Err(Error::Data(format!("edge list line {}: expected 3 fields", i + 1)));
            };
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("edge list line {}: bad weight {w:?}", i + 1)))?;
            edges.push((a.to_owned(), b.to_owned(), w));
        }
        let mut g = Self::with_nodes(edges.iter().flat_map(|(a, b, _)| [a.clone(), b.clone()]));
        for (a, b, w) in edges {
            let (x, y) = (g.index[&a], g.index[&b]);
            g.add_edge(x, y, w);
        }
        Ok(g)
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

/// Builds the co-occurrence graph: within each time-ordered sequence, every
/// pair of distinct types at most `window` positions apart adds 1 to their
/// edge. Nodes are every type seen in the sequences.
pub fn build_graph<'a, I>(histories: I, window: usize) -> ETypeGraph
where
    I: IntoIterator<Item = &'a [String]>,
{
    let seqs: Vec<&[String]> = histories.into_iter().collect();
    let mut g = ETypeGraph::with_nodes(seqs.iter().flat_map(|s| s.iter().cloned()));
    for seq in seqs {
        let ids: Vec<usize> = seq.iter().map(|t| g.index[t]).collect();
        for i in 0..ids.len() {
            for d in 1..=window {
                if i + d < ids.len() {
                    g.add_edge(ids[i], ids[i + d], 1.0);
                }
            }
        }
    }
    g
}

/// Each user's event-type sequence over their clicks, in time order.
///
/// Impressions are taken in stable timestamp order; within an impression,
/// clicks follow candidate order and each clicked news contributes its
/// distinct event types in order.
pub fn event_type_histories(news: &[NewsItem], logs: &[ImpressionLog]) -> BTreeMap<String, Vec<String>> {
    let types: HashMap<&str, Vec<&str>> = news
        .iter()
        .map(|n| (n.news_id.as_str(), n.event_types()))
        .collect();
    let mut order: Vec<&ImpressionLog> = logs.iter().collect();
    order.sort_by_key(|l| l.timestamp);
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for l in order {
        let seq = out.entry(l.user_id.clone()).or_default();
        for c in &l.candidates {
            if l.is_clicked(c) {
                if let Some(ts) = types.get(c.as_str()) {
                    seq.extend(ts.iter().map(|t| (*t).to_owned()));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub dim: usize,
    pub p: f64,
    pub q: f64,
    pub walk_len: usize,
    pub walks_per_node: usize,
    /// Skip-gram context window.
    pub window: usize,
    pub epochs: usize,
    pub n_negatives: usize,
    pub learning_rate: f64,
    /// Co-occurrence distance that creates an edge.
    pub cooccurrence_window: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            dim: 50,
            p: 1.0,
            q: 1.0,
            walk_len: 10,
            walks_per_node: 20,
            window: 3,
            epochs: 5,
            n_negatives: 5,
            learning_rate: 0.025,
            cooccurrence_window: 1,
        }
    }
}

/// Event type → vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ETypeEmbedding {
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl ETypeEmbedding {
    pub fn dim(&self) -> Option<usize> {
        self.vectors.values().next().map(Vec::len)
    }

    pub fn get(&self, event_type: &str) -> Option<&[f64]> {
        self.vectors.get(event_type).map(Vec::as_slice)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let e: Self = read_json(path)?;
        let dims: BTreeSet<usize> = e.vectors.values().map(Vec::len).collect();
        if dims.len() > 1 {
            return Err(Error::Data(format!("embedding vectors have mixed dimensions {dims:?}")));
        }
        Ok(e)
    }

    /// Gives every type in `types` lacking a vector a random one.
    pub fn fill_cold_start<'a>(&mut self, types: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC01D);
        let bound = 0.5 / dim.max(1) as f64;
        for t in types {
            if !self.vectors.contains_key(t) {
                let v = eenr_tensor::Tensor::uniform(&[dim], bound, &mut rng).into_data();
                self.vectors.insert(t.to_owned(), v);
            }
        }
    }
}

/// The trained embedding together with what produced it.
pub struct GraphEmbedding {
    pub graph: ETypeGraph,
    pub embedding: ETypeEmbedding,
    pub epoch_losses: Vec<f64>,
}

/// Walks the graph and trains skip-gram vectors for its nodes, then gives
/// every type of `all_types` missing from the graph a cold-start vector.
pub fn embed_graph<'a>(
    graph: ETypeGraph,
    all_types: impl IntoIterator<Item = &'a str>,
    config: &GraphConfig,
    seed: u64,
) -> Result<GraphEmbedding> {
    if config.dim == 0 {
        return Err(Error::Config("embedding dim must be positive".into()));
    }
    let mut embedding = ETypeEmbedding::default();
    let mut epoch_losses = Vec::new();
    if !graph.is_empty() {
        let walk_cfg = WalkConfig {
            p: config.p,
            q: config.q,
            walk_len: config.walk_len,
            walks_per_node: config.walks_per_node,
        };
        let walks = node2vec_walks(&graph, &walk_cfg, seed)?;
        let sg = SkipGramConfig {
            dim: config.dim,
            window: config.window,
            epochs: config.epochs,
            n_negatives: config.n_negatives,
            learning_rate: config.learning_rate,
        };
        let result = skipgram_train(&walks, graph.len(), &sg, seed)?;
        epoch_losses = result.epoch_losses;
        for (name, v) in graph.nodes().iter().zip(result.vectors) {
            embedding.vectors.insert(name.clone(), v);
        }
    }
    embedding.fill_cold_start(all_types, config.dim, seed);
    Ok(GraphEmbedding {
        graph,
        embedding,
        epoch_losses,
    })
}
