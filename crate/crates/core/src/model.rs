//! CrossGR: learned user and item embeddings refined by a stack of GIN
//! layers over the merged interaction graph, then scored pairwise by an MLP
//! over the concatenated user and item representations.
//!
//! One GIN layer computes
//!
//! ```text
//! H' = MLP((1 + ε) · H + Σ_{u ∈ N(v)} w(v, u) · H_u)
//! ```
//!
//! with a two-layer MLP (`d → hidden → d`, ReLU between) and a learnable scalar
//! ε per layer. Users occupy node ids `0..U` and items `U..U+I`. A ReLU (and
//! dropout, when enabled) follows every layer.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::graph::{InteractionGraph, NodeAdjacency};
use crate::kernel::{sigmoid, Gradients, Matrix, ParamId, ParamStore, Tape, Var};
use crate::train::{Batch, Trainable};

/// Standard deviation of the Gaussian every parameter is drawn from.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Plain neighbor sum.
    #[default]
    Sum,
    /// Neighbor mean, i.e. weights from `D⁻¹A`.
    RowNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossGrConfig {
    pub latent_dim: usize,
    pub num_gin_layers: usize,
    pub gin_mlp_hidden: usize,
    pub epsilon_init: f64,
    pub aggregation: Aggregation,
    pub scorer_hidden: usize,
    pub dropout: f64,
}

impl Default for CrossGrConfig {
    fn default() -> Self {
        Self::with_latent_dim(8)
    }
}

impl CrossGrConfig {
    /// Defaults with every width derived from `d`: GIN hidden `d`, scorer
    /// hidden `4d` (twice the concatenated width).
    pub fn with_latent_dim(d: usize) -> Self {
        CrossGrConfig {
            latent_dim: d,
            num_gin_layers: 2,
            gin_mlp_hidden: d,
            epsilon_init: 0.0,
            aggregation: Aggregation::Sum,
            scorer_hidden: 4 * d,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.gin_mlp_hidden == 0 || self.scorer_hidden == 0 {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !self.epsilon_init.is_finite() {
            return Err(Error::Config("epsilon_init must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GinLayerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub eps: ParamId,
}

/// Two-layer pairwise head: `2d → hidden → 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossGrParams {
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    pub layers: Vec<GinLayerParams>,
    pub scorer: ScorerParams,
}

/// Draws every weight and bias from `N(0, 0.1²)`; ε starts at `epsilon_init`.
pub fn init_params(
    config: &CrossGrConfig,
    num_users: usize,
    num_items: usize,
    seed: u64,
) -> Result<(ParamStore, CrossGrParams)> {
    config.validate()?;
    if num_users == 0 || num_items == 0 {
        return Err(Error::Config(
            "model needs at least one user and one item".into(),
        ));
    }
    let d = config.latent_dim;
    let h = config.gin_mlp_hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut gauss = |store: &mut ParamStore, name: String, r, c| {
        store.add(name, Matrix::gaussian(r, c, INIT_STD, &mut rng))
    };

    let user_emb = gauss(&mut store, "user_embedding".into(), num_users, d);
    let item_emb = gauss(&mut store, "item_embedding".into(), num_items, d);
    let mut layers = Vec::with_capacity(config.num_gin_layers);
    for k in 0..config.num_gin_layers {
        let w1 = gauss(&mut store, format!("gin{k}.w1"), d, h);
        let b1 = gauss(&mut store, format!("gin{k}.b1"), 1, h);
        let w2 = gauss(&mut store, format!("gin{k}.w2"), h, d);
        let b2 = gauss(&mut store, format!("gin{k}.b2"), 1, d);
        let eps = store.add(format!("gin{k}.eps"), Matrix::scalar(config.epsilon_init));
        layers.push(GinLayerParams {
            w1,
            b1,
            w2,
            b2,
            eps,
        });
    }
    let s = config.scorer_hidden;
    let scorer = ScorerParams {
        w1: gauss(&mut store, "scorer.w1".into(), 2 * d, s),
        b1: gauss(&mut store, "scorer.b1".into(), 1, s),
        w2: gauss(&mut store, "scorer.w2".into(), s, 1),
        b2: gauss(&mut store, "scorer.b2".into(), 1, 1),
    };
    Ok((
        store,
        CrossGrParams {
            user_emb,
            item_emb,
            layers,
            scorer,
        },
    ))
}

/// Optional dropout source; `None` disables dropout regardless of rate.
pub type DropoutRng<'r> = Option<&'r mut ChaCha8Rng>;

fn maybe_dropout(tape: &mut Tape<'_>, x: Var, p: f64, rng: &mut DropoutRng<'_>) -> Result<Var> {
    match rng {
        Some(rng) if p > 0.0 => tape.dropout(x, p, *rng),
        _ => Ok(x),
    }
}

/// One GIN layer. `adj` already carries the aggregation weights.
pub fn gin_layer(
    tape: &mut Tape<'_>,
    h: Var,
    adj: &Arc<NodeAdjacency>,
    layer: &GinLayerParams,
    dropout: f64,
    rng: &mut DropoutRng<'_>,
) -> Result<Var> {
    let self_term = tape.scale_one_plus(h, layer.eps)?;
    let neighbors = tape.neighbor_sum(h, adj)?;
    let z = tape.add(self_term, neighbors)?;
    let hidden = tape.affine(z, layer.w1, Some(layer.b1))?;
    let hidden = tape.relu(hidden);
    let hidden = maybe_dropout(tape, hidden, dropout, rng)?;
    tape.affine(hidden, layer.w2, Some(layer.b2))
}

/// Final node representations, `(U + I) × d`.
pub fn encode(
    tape: &mut Tape<'_>,
    adj: &Arc<NodeAdjacency>,
    params: &CrossGrParams,
    config: &CrossGrConfig,
    rng: &mut DropoutRng<'_>,
) -> Result<Var> {
    let users = tape.param(params.user_emb);
    let items = tape.param(params.item_emb);
    let mut h = tape.stack_rows(users, items)?;
    for layer in &params.layers {
        h = gin_layer(tape, h, adj, layer, config.dropout, rng)?;
        h = tape.relu(h);
        h = maybe_dropout(tape, h, config.dropout, rng)?;
    }
    Ok(h)
}

/// Logits (`n × 1`) for `(users[k], items[k])` pairs, read from node
/// representations `h`. Item ids are offset by `num_users` into node space.
#[allow(clippy::too_many_arguments)]
pub fn score_pairs(
    tape: &mut Tape<'_>,
    h: Var,
    num_users: usize,
    users: &[UserId],
    items: &[ItemId],
    scorer: &ScorerParams,
    dropout: f64,
    rng: &mut DropoutRng<'_>,
) -> Result<Var> {
    if users.len() != items.len() {
        return Err(Error::contract(format!(
            "score_pairs: {} users for {} items",
            users.len(),
            items.len()
        )));
    }
    let nodes = tape.value(h).rows();
    if let Some(&u) = users.iter().find(|&&u| u >= num_users) {
        return Err(Error::contract(format!("user {u} out of range")));
    }
    if let Some(&i) = items.iter().find(|&&i| num_users + i >= nodes) {
        return Err(Error::contract(format!("item {i} out of range")));
    }
    let item_nodes: Vec<usize> = items.iter().map(|&i| i + num_users).collect();
    let hu = tape.select_rows(h, users)?;
    let hi = tape.select_rows(h, &item_nodes)?;
    let pair = tape.concat_cols(hu, hi)?;
    let hidden = tape.affine(pair, scorer.w1, Some(scorer.b1))?;
    let hidden = tape.relu(hidden);
    let hidden = maybe_dropout(tape, hidden, dropout, rng)?;
    tape.affine(hidden, scorer.w2, Some(scorer.b2))
}

/// A CrossGR model bound to the training graph it propagates over.
#[derive(Debug, Clone)]
pub struct CrossGr {
    config: CrossGrConfig,
    num_users: usize,
    num_items: usize,
    store: ParamStore,
    ids: CrossGrParams,
    adjacency: Arc<NodeAdjacency>,
}

impl CrossGr {
    pub fn new(config: CrossGrConfig, graph: &InteractionGraph, seed: u64) -> Result<Self> {
        let (store, ids) = init_params(&config, graph.num_users(), graph.num_items(), seed)?;
        let adjacency =
            Arc::new(graph.node_adjacency(config.aggregation == Aggregation::RowNormalized));
        Ok(CrossGr {
            config,
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            store,
            ids,
            adjacency,
        })
    }

    pub fn config(&self) -> &CrossGrConfig {
        &self.config
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn ids(&self) -> &CrossGrParams {
        &self.ids
    }

    pub fn adjacency(&self) -> &Arc<NodeAdjacency> {
        &self.adjacency
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Loss and gradients for one batch; encodes the whole graph once.
    pub fn loss_on_batch(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        batch.check()?;
        let mut tape = Tape::new(&self.store);
        let mut dropout_rng = Some(rng);
        let h = encode(
            &mut tape,
            &self.adjacency,
            &self.ids,
            &self.config,
            &mut dropout_rng,
        )?;
        let logits = score_pairs(
            &mut tape,
            h,
            self.num_users,
            &batch.users,
            &batch.items,
            &self.ids.scorer,
            self.config.dropout,
            &mut dropout_rng,
        )?;
        let loss = tape.bce_mean(logits, &batch.labels)?;
        let value = tape.value(loss).as_slice()[0];
        Ok((value, tape.backward(loss)?))
    }

    /// Node representations in inference mode.
    pub fn node_embeddings(&self) -> Result<Matrix> {
        let mut tape = Tape::inference(&self.store);
        let h = encode(
            &mut tape,
            &self.adjacency,
            &self.ids,
            &self.config,
            &mut None,
        )?;
        Ok(tape.value(h).clone())
    }

    /// Interaction probability for one pair.
    pub fn predict(&self, user: UserId, item: ItemId) -> Result<f64> {
        let frozen = self.freeze()?;
        Ok(sigmoid(frozen.logits(user, &[item])?[0]))
    }

    /// Snapshot of encoded nodes for repeated scoring.
    pub fn freeze(&self) -> Result<FrozenCrossGr<'_>> {
        Ok(FrozenCrossGr {
            model: self,
            nodes: self.node_embeddings()?,
        })
    }
}

pub struct FrozenCrossGr<'m> {
    model: &'m CrossGr,
    nodes: Matrix,
}

impl FrozenCrossGr<'_> {
    pub fn logits(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.model.store);
        let h = tape.constant(self.nodes.clone());
        let users = vec![user; items.len()];
        let out = score_pairs(
            &mut tape,
            h,
            self.model.num_users,
            &users,
            items,
            &self.model.ids.scorer,
            0.0,
            &mut None,
        )?;
        Ok(tape.value(out).as_slice().to_vec())
    }
}

impl Scorer for FrozenCrossGr<'_> {
    fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        self.logits(user, items)
    }
}

impl Trainable for CrossGr {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_gradients(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        self.loss_on_batch(batch, rng)
    }

    fn scorer(&self) -> Result<Box<dyn Scorer + '_>> {
        Ok(Box::new(self.freeze()?))
    }
}
