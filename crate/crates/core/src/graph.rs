//! Bipartite user-item interaction graph in compressed adjacency form.

use std::io::Write;

use rand::seq::index;
use rand::Rng;

use crate::data::{ItemId, SplitDataset, UserId};
use crate::error::{Error, Result};

/// Compressed sparse rows: `neighbors[offsets[v]..offsets[v + 1]]` are the
/// sorted neighbors of `v`, with `weights` parallel to `neighbors`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl Adjacency {
    /// `edges` must be sorted by (row, neighbor).
    fn from_sorted_edges(rows: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut offsets = vec![0usize; rows + 1];
        for &(r, _, _) in edges {
            offsets[r + 1] += 1;
        }
        for v in 0..rows {
            offsets[v + 1] += offsets[v];
        }
        Adjacency {
            offsets,
            neighbors: edges.iter().map(|e| e.1).collect(),
            weights: edges.iter().map(|e| e.2).collect(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn weights(&self, v: usize) -> &[f64] {
        &self.weights[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn range(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn contains(&self, v: usize, neighbor: usize) -> bool {
        self.neighbors(v).binary_search(&neighbor).is_ok()
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.weights(v).iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_adj: Adjacency,
    item_adj: Adjacency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector {
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

/// How training interactions become edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeWeighting {
    /// Every interaction has weight 1.
    #[default]
    Binary,
    /// Weight is rating / 5.
    Rating,
}

/// Binarized graph over deduplicated training pairs.
pub fn build_graph(
    train: &[(UserId, ItemId)],
    num_users: usize,
    num_items: usize,
) -> Result<InteractionGraph> {
    let edges: Vec<_> = train.iter().map(|&(u, i)| (u, i, 1.0)).collect();
    build_weighted_graph(&edges, num_users, num_items)
}

pub fn build_weighted_graph(
    edges: &[(UserId, ItemId, f64)],
    num_users: usize,
    num_items: usize,
) -> Result<InteractionGraph> {
    let mut by_user = Vec::with_capacity(edges.len());
    for &(u, i, w) in edges {
        if u >= num_users {
            return Err(Error::Graph(format!(
                "user {u} out of range ({num_users} users)"
            )));
        }
        if i >= num_items {
            return Err(Error::Graph(format!(
                "item {i} out of range ({num_items} items)"
            )));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Graph(format!(
                "edge ({u}, {i}) has invalid weight {w}"
            )));
        }
        by_user.push((u, i, w));
    }
    by_user.sort_by_key(|a| (a.0, a.1));
    if let Some(w) = by_user
        .windows(2)
        .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
    {
        return Err(Error::Graph(format!(
            "duplicate edge ({}, {})",
            w[0].0, w[0].1
        )));
    }
    let mut by_item: Vec<_> = by_user.iter().map(|&(u, i, w)| (i, u, w)).collect();
    by_item.sort_by_key(|a| (a.0, a.1));

    Ok(InteractionGraph {
        num_users,
        num_items,
        user_adj: Adjacency::from_sorted_edges(num_users, &by_user),
        item_adj: Adjacency::from_sorted_edges(num_items, &by_item),
    })
}

/// Graph over the training pairs of a split.
pub fn graph_from_split(
    split: &SplitDataset,
    weighting: EdgeWeighting,
) -> Result<InteractionGraph> {
    match weighting {
        EdgeWeighting::Binary => build_graph(&split.train, split.num_users(), split.num_items()),
        EdgeWeighting::Rating => {
            let edges: Vec<_> = split
                .train
                .iter()
                .zip(&split.train_ratings)
                .map(|(&(u, i), &r)| (u, i, r / crate::data::MAX_RATING))
                .collect();
            build_weighted_graph(&edges, split.num_users(), split.num_items())
        }
    }
}

/// Row-normalized weights, parallel to each side's adjacency arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

impl InteractionGraph {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.num_edges()
    }

    pub fn user_adj(&self) -> &Adjacency {
        &self.user_adj
    }

    pub fn item_adj(&self) -> &Adjacency {
        &self.item_adj
    }

    pub fn user_items(&self, user: UserId) -> &[ItemId] {
        self.user_adj.neighbors(user)
    }

    pub fn item_users(&self, item: ItemId) -> &[UserId] {
        self.item_adj.neighbors(item)
    }

    pub fn degrees(&self) -> DegreeVector {
        DegreeVector {
            users: (0..self.num_users)
                .map(|u| self.user_adj.degree(u))
                .collect(),
            items: (0..self.num_items)
                .map(|i| self.item_adj.degree(i))
                .collect(),
        }
    }

    /// Unified node space (users `0..U`, items `U..U+I`) for message passing.
    pub fn node_adjacency(&self, normalized: bool) -> NodeAdjacency {
        let norm = normalized.then(|| normalize_rows(self));
        let mut offsets = Vec::with_capacity(self.num_nodes() + 1);
        let mut neighbors = Vec::with_capacity(2 * self.num_edges());
        let mut weights = Vec::with_capacity(2 * self.num_edges());
        offsets.push(0);
        for u in 0..self.num_users {
            neighbors.extend(
                self.user_adj
                    .neighbors(u)
                    .iter()
                    .map(|&i| i + self.num_users),
            );
            match &norm {
                Some(n) => weights.extend_from_slice(&n.users[self.user_adj.range(u)]),
                None => weights.extend_from_slice(self.user_adj.weights(u)),
            }
            offsets.push(neighbors.len());
        }
        for i in 0..self.num_items {
            neighbors.extend_from_slice(self.item_adj.neighbors(i));
            match &norm {
                Some(n) => weights.extend_from_slice(&n.items[self.item_adj.range(i)]),
                None => weights.extend_from_slice(self.item_adj.weights(i)),
            }
            offsets.push(neighbors.len());
        }
        NodeAdjacency {
            inner: Adjacency {
                offsets,
                neighbors,
                weights,
            },
        }
    }

    /// Debug dump: `user<TAB>item<TAB>weight` per edge.
    pub fn write_edge_list(&self, mut out: impl Write) -> std::io::Result<()> {
        for u in 0..self.num_users {
            for (&i, &w) in self
                .user_adj
                .neighbors(u)
                .iter()
                .zip(self.user_adj.weights(u))
            {
                writeln!(out, "{u}\t{i}\t{w}")?;
            }
        }
        Ok(())
    }
}

/// Symmetric weighted adjacency over the unified node index space.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAdjacency {
    inner: Adjacency,
}

impl NodeAdjacency {
    /// Builds from arbitrary weighted directed edges `(from, to, w)`; used for
    /// small hand-made graphs.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = edges.to_vec();
        if let Some(e) = sorted.iter().find(|e| e.0 >= num_nodes || e.1 >= num_nodes) {
            return Err(Error::Graph(format!(
                "edge ({}, {}) out of range",
                e.0, e.1
            )));
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        Ok(NodeAdjacency {
            inner: Adjacency::from_sorted_edges(num_nodes, &sorted),
        })
    }

    /// Undirected unit-weight edges.
    pub fn undirected(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let directed: Vec<_> = edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
            .collect();
        Self::from_edges(num_nodes, &directed)
    }

    /// Same structure, each row rescaled to sum to one.
    pub fn row_normalized(&self) -> Self {
        let mut out = self.clone();
        for v in 0..out.inner.num_rows() {
            let range = out.inner.range(v);
            let degree: f64 = out.inner.weights[range.clone()].iter().sum();
            if degree > 0.0 {
                for w in &mut out.inner.weights[range] {
                    *w /= degree;
                }
            }
        }
        out
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.num_rows()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.inner.neighbors(v)
    }

    pub fn weights(&self, v: usize) -> &[f64] {
        self.inner.weights(v)
    }
}

/// Divides each incident edge weight by the node's degree, from that node's side.
pub fn normalize_rows(graph: &InteractionGraph) -> NormalizedWeights {
    fn side(adj: &Adjacency) -> Vec<f64> {
        let mut out = adj.weights.clone();
        for v in 0..adj.num_rows() {
            let degree = adj.degree(v);
            if degree > 0.0 {
                for w in &mut out[adj.range(v)] {
                    *w /= degree;
                }
            }
        }
        out
    }
    NormalizedWeights {
        users: side(&graph.user_adj),
        items: side(&graph.item_adj),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub items: Vec<ItemId>,
    /// Fewer than the requested count were available.
    pub truncated: bool,
}

/// `k` items the user has no training edge to, distinct within the call.
pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    user: UserId,
    k: usize,
    rng: &mut R,
) -> NegativeSample {
    sample_excluding(graph.num_items(), graph.user_items(user), k, rng)
}

/// Uniform draw of `k` distinct ids from `0..num_items` minus `excluded`
/// (sorted, unique). Returns the whole pool, flagged, when it is too small.
pub fn sample_excluding<R: Rng + ?Sized>(
    num_items: usize,
    excluded: &[ItemId],
    k: usize,
    rng: &mut R,
) -> NegativeSample {
    debug_assert!(excluded.windows(2).all(|w| w[0] < w[1]));
    let pool = num_items - excluded.len();
    if pool <= k {
        return NegativeSample {
            items: complement(num_items, excluded),
            truncated: pool < k,
        };
    }
    // Dense exclusion: materialize the pool. Sparse: rejection sampling.
    if pool < 4 * k {
        let candidates = complement(num_items, excluded);
        let items = index::sample(rng, pool, k)
            .into_iter()
            .map(|p| candidates[p])
            .collect();
        return NegativeSample {
            items,
            truncated: false,
        };
    }
    let mut items = Vec::with_capacity(k);
    while items.len() < k {
        let candidate = rng.random_range(0..num_items);
        if excluded.binary_search(&candidate).is_err() && !items.contains(&candidate) {
            items.push(candidate);
        }
    }
    NegativeSample {
        items,
        truncated: false,
    }
}

fn complement(num_items: usize, excluded: &[ItemId]) -> Vec<ItemId> {
    (0..num_items)
        .filter(|i| excluded.binary_search(i).is_err())
        .collect()
}
