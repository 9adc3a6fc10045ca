//! Negative-sampled mini-batch training with validation-driven early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, SplitDataset, UserId};
use crate::error::{Error, Result};
use crate::eval::{build_candidates, evaluate_model, CandidateMode, EvalSplit, Scorer};
use crate::graph::{sample_negatives, InteractionGraph};
use crate::kernel::{AdamConfig, Gradients, ParamStore};

/// Rows of `(user, item, label)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub users: Vec<UserId>,
    pub items: Vec<ItemId>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn push(&mut self, user: UserId, item: ItemId, label: f64) {
        self.users.push(user);
        self.items.push(item);
        self.labels.push(label);
    }

    pub fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if self.users.len() != self.labels.len() || self.items.len() != self.labels.len() {
            return Err(Error::contract("batch columns differ in length"));
        }
        Ok(())
    }
}

/// A model optimized by gradient descent on BCE over sampled pairs.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Mean batch loss and its gradients; `rng` drives dropout.
    fn batch_gradients(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)>;
    /// Inference-mode scorer over the current parameters.
    fn scorer(&self) -> Result<Box<dyn Scorer + '_>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub negatives_per_positive: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Sampled negatives per validation user.
    pub eval_negatives: usize,
    /// Cutoff for the selection metric (NDCG@k) and the logged HR@k.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 1024,
            weight_decay: 1e-7,
            negatives_per_positive: 4,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            eval_every: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            eval_negatives: 99,
            eval_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("negatives_per_positive", self.negatives_per_positive),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("eval_every", self.eval_every),
            ("eval_k", self.eval_k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience exceeds max_epochs".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(
                "weight_decay must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One epoch of shuffled positives, each followed by its fresh negatives,
/// chunked into `batch_size` rows.
pub fn make_batches(
    train: &[(UserId, ItemId)],
    graph: &InteractionGraph,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current = Batch::default();
    for idx in order {
        let (user, item) = train[idx];
        current.push(user, item, 1.0);
        let negatives = sample_negatives(graph, user, config.negatives_per_positive, rng);
        for neg in negatives.items {
            current.push(user, neg, 0.0);
        }
        if current.len() >= config.batch_size {
            let rest = split_off_rows(&mut current, config.batch_size);
            batches.push(std::mem::replace(&mut current, rest));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Truncates `batch` to `n` rows and returns the overflow.
fn split_off_rows(batch: &mut Batch, n: usize) -> Batch {
    Batch {
        users: batch.users.split_off(n),
        items: batch.items.split_off(n),
        labels: batch.labels.split_off(n),
    }
}

/// Forward, backward and Adam step per batch; returns the row-weighted mean loss.
pub fn train_epoch(
    model: &mut dyn Trainable,
    batches: &[Batch],
    adam: &AdamConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for (b, batch) in batches.iter().enumerate() {
        let (loss, grads) = model.batch_gradients(batch, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: b,
                loss,
            });
        }
        let params = model.params_mut();
        params.accumulate(&grads);
        params.adam_step(adam);
        if !params.all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: b,
                loss,
            });
        }
        total += loss * batch.len() as f64;
        rows += batch.len();
    }
    Ok(if rows == 0 { 0.0 } else { total / rows as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` for the pre-training evaluation at epoch 0.
    pub loss: Option<f64>,
    pub valid_hr: Option<f64>,
    pub valid_ndcg: Option<f64>,
    #[serde(skip)]
    pub elapsed_ms: u128,
}

impl EpochRecord {
    /// Deterministic JSON line (no timing).
    pub fn log_line(&self) -> String {
        serde_json::to_string(self).expect("epoch record serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_ndcg: f64,
    pub best_params: ParamStore,
    pub history: Vec<EpochRecord>,
}

fn validate_model(
    model: &dyn Trainable,
    candidates: &[crate::eval::CandidateSet],
    k: usize,
) -> Result<(f64, f64)> {
    let scorer = model.scorer()?;
    let summary = evaluate_model(scorer.as_ref(), candidates, &[k])?;
    Ok((summary.hr[0], summary.ndcg[0]))
}

/// Trains up to `max_epochs`, evaluating on the validation split every
/// `eval_every` epochs (and once before training as epoch 0). Keeps the
/// parameters with the highest validation NDCG@k, stops after `patience`
/// evaluations without strict improvement, and leaves the best parameters
/// loaded in `model`.
pub fn fit(
    model: &mut dyn Trainable,
    split: &SplitDataset,
    graph: &InteractionGraph,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainState> {
    config.validate()?;
    if split.valid.is_empty() {
        return Err(Error::contract("fit: empty validation split"));
    }
    let candidates = build_candidates(
        split,
        EvalSplit::Valid,
        CandidateMode::Sampled(config.eval_negatives),
        config.seed,
    );
    let adam = config.adam();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let start = Instant::now();
    let (hr0, ndcg0) = validate_model(model, &candidates, config.eval_k)?;
    let first = EpochRecord {
        epoch: 0,
        loss: None,
        valid_hr: Some(hr0),
        valid_ndcg: Some(ndcg0),
        elapsed_ms: start.elapsed().as_millis(),
    };
    on_epoch(&first);
    let mut state = TrainState {
        epochs_run: 0,
        best_epoch: 0,
        best_valid_ndcg: ndcg0,
        best_params: model.params().clone(),
        history: vec![first],
    };

    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let batches = make_batches(&split.train, graph, config, &mut batch_rng);
        let loss = train_epoch(model, &batches, &adam, epoch, &mut dropout_rng)?;
        state.epochs_run = epoch;

        let evaluate = epoch % config.eval_every == 0 || epoch == config.max_epochs;
        let mut record = EpochRecord {
            epoch,
            loss: Some(loss),
            valid_hr: None,
            valid_ndcg: None,
            elapsed_ms: 0,
        };
        if evaluate {
            let (hr, ndcg) = validate_model(model, &candidates, config.eval_k)?;
            record.valid_hr = Some(hr);
            record.valid_ndcg = Some(ndcg);
            if ndcg > state.best_valid_ndcg {
                state.best_valid_ndcg = ndcg;
                state.best_epoch = epoch;
                state.best_params = model.params().clone();
                stale = 0;
            } else {
                stale += 1;
            }
        }
        record.elapsed_ms = start.elapsed().as_millis();
        on_epoch(&record);
        state.history.push(record);
        if stale >= config.patience {
            break;
        }
    }
    model.params_mut().load_from(&state.best_params)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::model::{CrossGr, CrossGrConfig};

    fn config() -> TrainConfig {
        TrainConfig {
            batch_size: 1024,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batches_have_positive_plus_negatives() {
        let train: Vec<_> = (0..100).map(|u| (u, u % 7)).collect();
        let graph = build_graph(&train, 100, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = make_batches(&train, &graph, &config(), &mut rng);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 500);
        assert_eq!(batches[0].labels.iter().filter(|&&y| y == 1.0).count(), 100);
        for b in &batches {
            for ((&u, &i), &y) in b.users.iter().zip(&b.items).zip(&b.labels) {
                if y == 0.0 {
                    assert!(!graph.user_items(u).contains(&i));
                }
            }
        }
    }

    #[test]
    fn batches_split_at_batch_size_and_are_deterministic() {
        let train: Vec<_> = (0..30).map(|u| (u, 0)).collect();
        let graph = build_graph(&train, 30, 20).unwrap();
        let cfg = TrainConfig {
            batch_size: 64,
            ..config()
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_batches(&train, &graph, &cfg, &mut rng)
        };
        let batches = run(4);
        assert_eq!(
            batches.iter().map(Batch::len).collect::<Vec<_>>(),
            vec![64, 64, 22]
        );
        assert_eq!(batches, run(4));
        assert_ne!(batches, run(5));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 200,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn separable() -> (Vec<(usize, usize)>, InteractionGraph) {
        // users 0,1 like items 0,1; users 2,3 like items 2,3
        let train = vec![
            (0, 0),
            (0, 1),
            (1, 0),
            (1, 1),
            (2, 2),
            (2, 3),
            (3, 2),
            (3, 3),
        ];
        let graph = build_graph(&train, 4, 4).unwrap();
        (train, graph)
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let (train, graph) = separable();
        let mut model = CrossGr::new(CrossGrConfig::default(), &graph, 1).unwrap();
        let before = model.store().clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = make_batches(&train, &graph, &cfg, &mut rng);
        let loss = train_epoch(&mut model, &batches, &cfg.adam(), 1, &mut rng).unwrap();
        for (a, b) in model.store().params().iter().zip(before.params()) {
            assert_eq!(a.value, b.value);
        }
        let (eval_loss, _) = model.loss_on_batch(&batches[0], &mut rng).unwrap();
        assert_eq!(loss, eval_loss);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (train, graph) = separable();
        let run = || {
            let mut model = CrossGr::new(CrossGrConfig::default(), &graph, 2).unwrap();
            let cfg = TrainConfig {
                negatives_per_positive: 2,
                ..config()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (1..=50)
                .map(|epoch| {
                    let batches = make_batches(&train, &graph, &cfg, &mut rng);
                    train_epoch(&mut model, &batches, &cfg.adam(), epoch, &mut rng).unwrap()
                })
                .collect::<Vec<_>>()
        };
        let losses = run();
        assert!(losses.iter().all(|l| l.is_finite()));
        assert!(losses[49] < losses[0], "{} vs {}", losses[49], losses[0]);
        assert_eq!(losses, run());
    }
}
