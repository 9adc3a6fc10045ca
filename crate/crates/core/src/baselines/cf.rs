use std::collections::HashMap;

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::graph::InteractionGraph;

pub const DEFAULT_K_NN: usize = 50;

/// `|x ∩ y| / (√|x| · √|y|)` over sorted id lists; 0 if either is empty.
pub fn cosine_similarity(x: &[usize], y: &[usize]) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    cosine_from_counts(intersection_len(x, y), x.len(), y.len())
}

fn cosine_from_counts(shared: usize, nx: usize, ny: usize) -> f64 {
    if shared == 0 {
        return 0.0;
    }
    // one rounding in the root keeps self-similarity exactly 1
    shared as f64 / ((nx * ny) as f64).sqrt()
}

fn intersection_len(x: &[usize], y: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn check_user(graph: &InteractionGraph, user: UserId) -> Result<()> {
    if user >= graph.num_users() {
        return Err(Error::contract(format!("user {user} out of range")));
    }
    Ok(())
}

fn check_items(graph: &InteractionGraph, items: &[ItemId]) -> Result<()> {
    if let Some(&i) = items.iter().find(|&&i| i >= graph.num_items()) {
        return Err(Error::contract(format!("item {i} out of range")));
    }
    Ok(())
}

/// Item-based CF: an item scores the summed similarity to the user's
/// training items. Similarities are stored only for co-interacted pairs.
#[derive(Debug, Clone)]
pub struct ItemCf {
    graph: InteractionGraph,
    /// Per item, `(other item, similarity)` sorted by item id.
    similar: Vec<Vec<(ItemId, f64)>>,
}

impl ItemCf {
    pub fn new(graph: &InteractionGraph) -> Self {
        let ni = graph.num_items();
        let mut counts: Vec<HashMap<ItemId, usize>> = vec![HashMap::new(); ni];
        for u in 0..graph.num_users() {
            let items = graph.user_items(u);
            for &a in items {
                for &b in items {
                    *counts[a].entry(b).or_default() += 1;
                }
            }
        }
        let similar = counts
            .into_iter()
            .enumerate()
            .map(|(a, row)| {
                let na = graph.item_users(a).len();
                let mut row: Vec<(ItemId, f64)> = row
                    .into_iter()
                    .map(|(b, n)| (b, cosine_from_counts(n, na, graph.item_users(b).len())))
                    .collect();
                row.sort_by_key(|&(b, _)| b);
                row
            })
            .collect();
        ItemCf {
            graph: graph.clone(),
            similar,
        }
    }

    pub fn similarity(&self, a: ItemId, b: ItemId) -> f64 {
        let row = &self.similar[a];
        row.binary_search_by_key(&b, |&(j, _)| j)
            .map_or(0.0, |k| row[k].1)
    }

    pub fn score_one(&self, user: UserId, item: ItemId) -> f64 {
        self.graph
            .user_items(user)
            .iter()
            .map(|&j| self.similarity(item, j))
            .sum()
    }
}

impl Scorer for ItemCf {
    fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        check_user(&self.graph, user)?;
        check_items(&self.graph, items)?;
        Ok(items.iter().map(|&i| self.score_one(user, i)).collect())
    }
}

/// User-based CF over the `k_nn` most similar other users.
#[derive(Debug, Clone)]
pub struct UserCf {
    graph: InteractionGraph,
    k_nn: usize,
}

impl UserCf {
    pub fn new(graph: &InteractionGraph, k_nn: usize) -> Self {
        UserCf {
            graph: graph.clone(),
            k_nn,
        }
    }

    pub fn k_nn(&self) -> usize {
        self.k_nn
    }

    pub fn similarity(&self, a: UserId, b: UserId) -> f64 {
        cosine_similarity(self.graph.user_items(a), self.graph.user_items(b))
    }

    /// Up to `k_nn` other users with positive similarity, most similar first,
    /// ties by ascending id.
    pub fn neighbors(&self, user: UserId) -> Vec<(UserId, f64)> {
        let mine = self.graph.user_items(user);
        let mut shared: HashMap<UserId, usize> = HashMap::new();
        for &i in mine {
            for &v in self.graph.item_users(i) {
                if v != user {
                    *shared.entry(v).or_default() += 1;
                }
            }
        }
        let mut out: Vec<(UserId, f64)> = shared
            .into_iter()
            .map(|(v, n)| {
                (
                    v,
                    cosine_from_counts(n, mine.len(), self.graph.user_items(v).len()),
                )
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.truncate(self.k_nn);
        out
    }

    fn score_with(&self, neighbors: &[(UserId, f64)], item: ItemId) -> f64 {
        neighbors
            .iter()
            .filter(|&&(v, _)| self.graph.user_adj().contains(v, item))
            .map(|&(_, s)| s)
            .sum()
    }

    pub fn score_one(&self, user: UserId, item: ItemId) -> f64 {
        self.score_with(&self.neighbors(user), item)
    }
}

impl Scorer for UserCf {
    fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        check_user(&self.graph, user)?;
        check_items(&self.graph, items)?;
        let neighbors = self.neighbors(user);
        Ok(items
            .iter()
            .map(|&i| self.score_with(&neighbors, i))
            .collect())
    }
}
