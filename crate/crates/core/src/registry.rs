//! Model-name tokens, construction, fitting and the checkpoint sidecar that
//! ties saved parameters to the data they were trained on.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{ItemCf, NeuralBaseline, NeuralKind, UserCf, DEFAULT_K_NN};
use crate::data::{ItemId, SplitDataset, UserId};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::graph::InteractionGraph;
use crate::kernel::ParamStore;
use crate::model::{CrossGr, CrossGrConfig};
use crate::train::{fit, EpochRecord, TrainConfig, TrainState, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gmf,
    Mlp,
    Nmf,
    ItemCf,
    UserCf,
    CrossGr,
    /// Uniform pseudo-random scores; a calibration aid, not a recommender.
    Random,
}

impl ModelKind {
    /// The comparison suite, in report order.
    pub const SUITE: [ModelKind; 6] = [
        ModelKind::Gmf,
        ModelKind::Mlp,
        ModelKind::Nmf,
        ModelKind::ItemCf,
        ModelKind::UserCf,
        ModelKind::CrossGr,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Gmf => "gmf",
            ModelKind::Mlp => "mlp",
            ModelKind::Nmf => "nmf",
            ModelKind::ItemCf => "itemcf",
            ModelKind::UserCf => "usercf",
            ModelKind::CrossGr => "crossgr",
            ModelKind::Random => "random",
        }
    }

    /// Whether the model has parameters fitted by gradient descent.
    pub fn is_trainable(self) -> bool {
        matches!(
            self,
            ModelKind::Gmf | ModelKind::Mlp | ModelKind::Nmf | ModelKind::CrossGr
        )
    }

    fn neural(self) -> Option<NeuralKind> {
        match self {
            ModelKind::Gmf => Some(NeuralKind::Gmf),
            ModelKind::Mlp => Some(NeuralKind::Mlp),
            ModelKind::Nmf => Some(NeuralKind::Nmf),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim().to_ascii_lowercase().as_str() {
            "gmf" | "gmf++" => ModelKind::Gmf,
            "mlp" => ModelKind::Mlp,
            "nmf" | "neumf" => ModelKind::Nmf,
            "itemcf" => ModelKind::ItemCf,
            "usercf" => ModelKind::UserCf,
            "crossgr" => ModelKind::CrossGr,
            "random" => ModelKind::Random,
            other => {
                return Err(Error::Config(format!(
                    "unknown model {other:?}; expected one of gmf, mlp, nmf, itemcf, usercf, crossgr, random"
                )))
            }
        };
        Ok(kind)
    }
}

/// Architecture settings for every kind. Neural baselines reuse
/// `crossgr.latent_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub crossgr: CrossGrConfig,
    pub k_nn: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            crossgr: CrossGrConfig::default(),
            k_nn: DEFAULT_K_NN,
        }
    }
}

/// Scores from a hash of `(seed, user, item)`, uniform on `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomScorer {
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Scorer for RandomScorer {
    fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        let base = splitmix64(self.seed ^ splitmix64(user as u64));
        Ok(items
            .iter()
            .map(|&i| (splitmix64(base ^ i as u64) >> 11) as f64 / (1u64 << 53) as f64)
            .collect())
    }
}

/// A constructed model of any kind.
#[derive(Debug, Clone)]
pub enum Model {
    CrossGr(CrossGr),
    Neural(NeuralBaseline),
    ItemCf(ItemCf),
    UserCf(UserCf),
    Random(RandomScorer),
}

impl Model {
    /// Initializes (neural) or fits (similarity) a model on `graph`.
    pub fn build(
        kind: ModelKind,
        settings: &ModelSettings,
        graph: &InteractionGraph,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            ModelKind::CrossGr => {
                Model::CrossGr(CrossGr::new(settings.crossgr.clone(), graph, seed)?)
            }
            ModelKind::ItemCf => Model::ItemCf(ItemCf::new(graph)),
            ModelKind::UserCf => {
                if settings.k_nn == 0 {
                    return Err(Error::Config("k_nn must be positive".into()));
                }
                Model::UserCf(UserCf::new(graph, settings.k_nn))
            }
            ModelKind::Random => Model::Random(RandomScorer { seed }),
            neural => Model::Neural(NeuralBaseline::new(
                neural.neural().expect("neural kind"),
                settings.crossgr.latent_dim,
                graph.num_users(),
                graph.num_items(),
                seed,
            )?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::CrossGr(_) => ModelKind::CrossGr,
            Model::Neural(m) => match m.kind() {
                NeuralKind::Gmf => ModelKind::Gmf,
                NeuralKind::Mlp => ModelKind::Mlp,
                NeuralKind::Nmf => ModelKind::Nmf,
            },
            Model::ItemCf(_) => ModelKind::ItemCf,
            Model::UserCf(_) => ModelKind::UserCf,
            Model::Random(_) => ModelKind::Random,
        }
    }

    pub fn trainable(&mut self) -> Option<&mut dyn Trainable> {
        match self {
            Model::CrossGr(m) => Some(m),
            Model::Neural(m) => Some(m),
            _ => None,
        }
    }

    /// Learned parameters; similarity and random models have none.
    pub fn params(&self) -> ParamStore {
        match self {
            Model::CrossGr(m) => m.store().clone(),
            Model::Neural(m) => m.store().clone(),
            _ => ParamStore::new(),
        }
    }

    /// Replaces parameters after checking names and shapes match.
    pub fn load_params(&mut self, store: &ParamStore) -> Result<()> {
        match self {
            Model::CrossGr(m) => m.store_mut().load_from(store),
            Model::Neural(m) => m.store_mut().load_from(store),
            _ if store.is_empty() => Ok(()),
            _ => Err(Error::Checkpoint(format!(
                "{} has no parameters but the checkpoint holds {}",
                self.kind(),
                store.len()
            ))),
        }
    }

    pub fn scorer(&self) -> Result<Box<dyn Scorer + '_>> {
        match self {
            Model::CrossGr(m) => Ok(Box::new(m.freeze()?)),
            Model::Neural(m) => Ok(Box::new(m)),
            Model::ItemCf(m) => Ok(Box::new(m)),
            Model::UserCf(m) => Ok(Box::new(m)),
            Model::Random(m) => Ok(Box::new(*m)),
        }
    }
}

/// Builds a model and, for trainable kinds, fits it with early stopping.
/// The returned model holds the best validation parameters.
pub fn train_model(
    kind: ModelKind,
    settings: &ModelSettings,
    split: &SplitDataset,
    graph: &InteractionGraph,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model, Option<TrainState>)> {
    let mut model = Model::build(kind, settings, graph, config.seed)?;
    let state = match model.trainable() {
        Some(t) => Some(fit(t, split, graph, config, on_epoch)?),
        None => None,
    };
    Ok((model, state))
}

/// Hex SHA-256 of a configuration snapshot, for tagging reports.
pub fn config_digest(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub const SIDECAR_VERSION: u32 = 1;

/// Everything needed to rebuild a model around a checkpoint and to refuse
/// data it was not trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub version: u32,
    pub kind: ModelKind,
    pub settings: ModelSettings,
    pub train: TrainConfig,
    pub target_market: String,
    pub source_markets: Vec<String>,
    pub vocab_digest: String,
    pub num_users: usize,
    pub num_items: usize,
    pub split_seed: u64,
    pub best_epoch: Option<usize>,
    pub best_valid_ndcg: Option<f64>,
}

impl ModelSidecar {
    /// Errors with [`Error::Checkpoint`] unless `split` has the same
    /// vocabulary, target market and split seed.
    pub fn check_compatible(&self, split: &SplitDataset, split_seed: u64) -> Result<()> {
        let digest = split.vocab.digest();
        if digest != self.vocab_digest {
            return Err(Error::Checkpoint(format!(
                "checkpoint/data mismatch: vocabulary digest {} != {}",
                self.vocab_digest, digest
            )));
        }
        if self.num_users != split.num_users() || self.num_items != split.num_items() {
            return Err(Error::Checkpoint(
                "checkpoint/data mismatch: vocabulary size".into(),
            ));
        }
        if self.target_market != split.target_market {
            return Err(Error::Checkpoint(format!(
                "checkpoint/data mismatch: trained for market {}, data targets {}",
                self.target_market, split.target_market
            )));
        }
        if self.split_seed != split_seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint/data mismatch: split seed {} != {}",
                self.split_seed, split_seed
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar: ModelSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if sidecar.version != SIDECAR_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported sidecar version {}",
                sidecar.version
            )));
        }
        Ok(sidecar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    #[test]
    fn tokens_round_trip() {
        for kind in ModelKind::SUITE.into_iter().chain([ModelKind::Random]) {
            assert_eq!(kind.token().parse::<ModelKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.token()));
        }
        assert!("lightgbm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn random_scores_are_uniform_and_stable() {
        let r = RandomScorer { seed: 3 };
        let items: Vec<usize> = (0..20_000).collect();
        let s = r.score(1, &items).unwrap();
        assert_eq!(s, r.score(1, &items).unwrap());
        assert_ne!(s, r.score(2, &items).unwrap());
        assert!(s.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn every_kind_builds_and_scores() {
        let g = build_graph(&[(0, 0), (0, 1), (1, 1), (2, 2)], 3, 4).unwrap();
        for kind in ModelKind::SUITE.into_iter().chain([ModelKind::Random]) {
            let mut m = Model::build(kind, &ModelSettings::default(), &g, 0).unwrap();
            assert_eq!(m.kind(), kind);
            assert_eq!(m.trainable().is_some(), kind.is_trainable());
            let s = m.scorer().unwrap().score(0, &[0, 1, 2, 3]).unwrap();
            assert_eq!(s.len(), 4);
            let params = m.params();
            m.load_params(&params).unwrap();
        }
        let mut cf = Model::build(ModelKind::ItemCf, &ModelSettings::default(), &g, 0).unwrap();
        let gmf = Model::build(ModelKind::Gmf, &ModelSettings::default(), &g, 0).unwrap();
        assert!(cf.load_params(&gmf.params()).is_err());
    }
}
