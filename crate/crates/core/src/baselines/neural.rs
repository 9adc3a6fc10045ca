use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::kernel::{Gradients, Matrix, ParamId, ParamStore, Tape, Var};
use crate::model::INIT_STD;
use crate::train::{Batch, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuralKind {
    /// `h · (p_u ⊙ q_i)`
    Gmf,
    /// `concat(p_u, q_i) → affine(2d→4d) → ReLU → affine(4d→1)`
    Mlp,
    /// `affine(5d→1)` over `concat(p_u ⊙ q_i, MLP hidden)`
    Nmf,
}

/// Parameter handles; which heads exist depends on the kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuralParams {
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    /// GMF output vector, `d × 1`.
    pub h: Option<ParamId>,
    /// MLP tower: `2d × 4d`, `1 × 4d`.
    pub w1: Option<(ParamId, ParamId)>,
    /// Output affine: `4d × 1` (MLP) or `5d × 1` (NMF), plus bias.
    pub out: Option<(ParamId, ParamId)>,
}

/// Embedding-based baseline sharing the CrossGR trainer and loss.
#[derive(Debug, Clone)]
pub struct NeuralBaseline {
    kind: NeuralKind,
    latent_dim: usize,
    num_users: usize,
    num_items: usize,
    store: ParamStore,
    ids: NeuralParams,
}

impl NeuralBaseline {
    pub fn new(
        kind: NeuralKind,
        latent_dim: usize,
        num_users: usize,
        num_items: usize,
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 || num_users == 0 || num_items == 0 {
            return Err(Error::Config(
                "baseline needs a positive latent_dim, users and items".into(),
            ));
        }
        let d = latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut gauss = |store: &mut ParamStore, name: &str, r, c| {
            store.add(name, Matrix::gaussian(r, c, INIT_STD, &mut rng))
        };
        let user_emb = gauss(&mut store, "user_embedding", num_users, d);
        let item_emb = gauss(&mut store, "item_embedding", num_items, d);
        let mut ids = NeuralParams {
            user_emb,
            item_emb,
            h: None,
            w1: None,
            out: None,
        };
        match kind {
            NeuralKind::Gmf => ids.h = Some(gauss(&mut store, "gmf.h", d, 1)),
            NeuralKind::Mlp | NeuralKind::Nmf => {
                ids.w1 = Some((
                    gauss(&mut store, "mlp.w1", 2 * d, 4 * d),
                    gauss(&mut store, "mlp.b1", 1, 4 * d),
                ));
                let fan_in = if kind == NeuralKind::Mlp {
                    4 * d
                } else {
                    5 * d
                };
                ids.out = Some((
                    gauss(&mut store, "out.w", fan_in, 1),
                    gauss(&mut store, "out.b", 1, 1),
                ));
            }
        }
        Ok(NeuralBaseline {
            kind,
            latent_dim,
            num_users,
            num_items,
            store,
            ids,
        })
    }

    pub fn kind(&self) -> NeuralKind {
        self.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn ids(&self) -> &NeuralParams {
        &self.ids
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Logits `n × 1` for `(users[k], items[k])`.
    pub fn forward(&self, tape: &mut Tape<'_>, users: &[UserId], items: &[ItemId]) -> Result<Var> {
        if users.len() != items.len() {
            return Err(Error::contract(format!(
                "forward: {} users for {} items",
                users.len(),
                items.len()
            )));
        }
        if let Some(&u) = users.iter().find(|&&u| u >= self.num_users) {
            return Err(Error::contract(format!("user {u} out of range")));
        }
        if let Some(&i) = items.iter().find(|&&i| i >= self.num_items) {
            return Err(Error::contract(format!("item {i} out of range")));
        }
        let p = tape.gather_rows(self.ids.user_emb, users)?;
        let q = tape.gather_rows(self.ids.item_emb, items)?;
        let tower = |tape: &mut Tape<'_>| -> Result<Var> {
            let (w, b) = self.ids.w1.expect("tower weights");
            let pq = tape.concat_cols(p, q)?;
            let hidden = tape.affine(pq, w, Some(b))?;
            Ok(tape.relu(hidden))
        };
        match self.kind {
            NeuralKind::Gmf => {
                let prod = tape.mul(p, q)?;
                tape.affine(prod, self.ids.h.expect("gmf head"), None)
            }
            NeuralKind::Mlp => {
                let hidden = tower(tape)?;
                let (w, b) = self.ids.out.expect("output head");
                tape.affine(hidden, w, Some(b))
            }
            NeuralKind::Nmf => {
                let prod = tape.mul(p, q)?;
                let hidden = tower(tape)?;
                let fused = tape.concat_cols(prod, hidden)?;
                let (w, b) = self.ids.out.expect("output head");
                tape.affine(fused, w, Some(b))
            }
        }
    }

    pub fn loss_on_batch(&self, batch: &Batch) -> Result<(f64, Gradients)> {
        batch.check()?;
        let mut tape = Tape::new(&self.store);
        let logits = self.forward(&mut tape, &batch.users, &batch.items)?;
        let loss = tape.bce_mean(logits, &batch.labels)?;
        let value = tape.value(loss).as_slice()[0];
        Ok((value, tape.backward(loss)?))
    }

    pub fn logits(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.store);
        let users = vec![user; items.len()];
        let out = self.forward(&mut tape, &users, items)?;
        Ok(tape.value(out).as_slice().to_vec())
    }
}

impl Scorer for NeuralBaseline {
    fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        self.logits(user, items)
    }
}

impl Trainable for NeuralBaseline {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_gradients(&self, batch: &Batch, _rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        self.loss_on_batch(batch)
    }

    fn scorer(&self) -> Result<Box<dyn Scorer + '_>> {
        Ok(Box::new(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{grad_check, sigmoid, GradCheckOptions};

    const KINDS: [NeuralKind; 3] = [NeuralKind::Gmf, NeuralKind::Mlp, NeuralKind::Nmf];

    #[test]
    fn gmf_examples() {
        let mut m = NeuralBaseline::new(NeuralKind::Gmf, 2, 1, 1, 0).unwrap();
        let ids = m.ids().clone();
        *m.store_mut().value_mut(ids.user_emb) = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        *m.store_mut().value_mut(ids.item_emb) = Matrix::from_rows(&[&[3.0, 4.0]]).unwrap();
        *m.store_mut().value_mut(ids.h.unwrap()) = Matrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        assert_eq!(m.logits(0, &[0]).unwrap(), vec![11.0]);
        m.store_mut().value_mut(ids.h.unwrap()).fill(0.0);
        assert_eq!(m.logits(0, &[0]).unwrap(), vec![0.0]);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn nmf_without_tower_is_gmf_plus_bias() {
        let mut m = NeuralBaseline::new(NeuralKind::Nmf, 3, 4, 5, 7).unwrap();
        let ids = m.ids().clone();
        let (w1, b1) = ids.w1.unwrap();
        m.store_mut().value_mut(w1).fill(0.0);
        m.store_mut().value_mut(b1).fill(0.0);
        let (w, b) = ids.out.unwrap();
        let s = m.store();
        let (p, q, wv, bias) = (
            s.value(ids.user_emb),
            s.value(ids.item_emb),
            s.value(w),
            s.value(b)[(0, 0)],
        );
        let logits = m.logits(2, &[0, 4]).unwrap();
        for (k, &i) in [0usize, 4].iter().enumerate() {
            let gmf: f64 = (0..3).map(|c| wv[(c, 0)] * p[(2, c)] * q[(i, c)]).sum();
            assert!((logits[k] - (gmf + bias)).abs() < 1e-15);
        }
    }

    #[test]
    fn shapes_and_determinism() {
        for kind in KINDS {
            let a = NeuralBaseline::new(kind, 8, 6, 9, 3).unwrap();
            let b = NeuralBaseline::new(kind, 8, 6, 9, 3).unwrap();
            assert_eq!(a.store(), b.store());
            assert_eq!(a.logits(5, &[0, 8]).unwrap().len(), 2);
            assert!(a.logits(6, &[0]).is_err());
            assert!(a.logits(0, &[9]).is_err());
        }
        assert!(NeuralBaseline::new(NeuralKind::Gmf, 0, 1, 1, 0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let batch = Batch {
            users: vec![0, 1, 2, 3, 1],
            items: vec![0, 2, 4, 1, 3],
            labels: vec![1.0, 0.0, 1.0, 0.0, 1.0],
        };
        for kind in KINDS {
            for seed in 0..5 {
                let m = NeuralBaseline::new(kind, 4, 4, 5, seed).unwrap();
                let report = grad_check(
                    m.store(),
                    |tape| {
                        let logits = m.forward(tape, &batch.users, &batch.items)?;
                        tape.bce_mean(logits, &batch.labels)
                    },
                    GradCheckOptions::default(),
                )
                .unwrap();
                assert!(report.passed(), "{kind:?} seed {seed}: {report:?}");
            }
        }
    }
}
