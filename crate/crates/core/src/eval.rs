//! Leave-one-out ranking evaluation: candidate construction, rank of the
//! held-out item, HR@K and NDCG@K, and the cross-model comparison report.
//!
//! With a single relevant item per user,
//!
//! ```text
//! HR@K   = (1/|U|) Σ_u 1[p_u ≤ K]
//! NDCG@K = (1/|U|) Σ_u 1[p_u ≤ K] / log2(p_u + 1)
//! ```
//!
//! where `p_u` is the 1-based rank of the held-out item among its candidates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, SplitDataset, UserId};
use crate::error::{Error, Result};
use crate::graph::sample_excluding;

/// Anything that can score candidate items for a user; higher is better.
pub trait Scorer {
    fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, user: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        (**self).score(user, items)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    /// Held-out item plus this many sampled unseen items.
    Sampled(usize),
    /// Held-out item plus every unseen item.
    FullCatalog,
}

impl Default for CandidateMode {
    fn default() -> Self {
        CandidateMode::Sampled(99)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub user: UserId,
    pub positive: ItemId,
    pub negatives: Vec<ItemId>,
    /// Fewer negatives than requested were available.
    pub truncated: bool,
    pub seed: u64,
}

impl CandidateSet {
    /// Positive first, then negatives.
    pub fn items(&self) -> Vec<ItemId> {
        let mut items = Vec::with_capacity(self.negatives.len() + 1);
        items.push(self.positive);
        items.extend_from_slice(&self.negatives);
        items
    }
}

/// One candidate set per user of the chosen held-out split, negatives drawn
/// uniformly without replacement from items the user never interacted with.
pub fn build_candidates(
    split: &SplitDataset,
    which: EvalSplit,
    mode: CandidateMode,
    seed: u64,
) -> Vec<CandidateSet> {
    let held_out = match which {
        EvalSplit::Valid => &split.valid,
        EvalSplit::Test => &split.test,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_items = split.num_items();
    held_out
        .iter()
        .map(|(&user, &positive)| {
            let seen = split
                .evaluable_positives
                .get(&user)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let want = match mode {
                CandidateMode::Sampled(n) => n,
                CandidateMode::FullCatalog => num_items,
            };
            let sample = sample_excluding(num_items, seen, want, &mut rng);
            CandidateSet {
                user,
                positive,
                negatives: sample.items,
                truncated: matches!(mode, CandidateMode::Sampled(_)) && sample.truncated,
                seed,
            }
        })
        .collect()
}

/// 1 + items scored strictly higher + equal-scored items with a smaller id.
pub fn rank_of_positive(scores: &[(ItemId, f64)], positive: ItemId) -> Result<usize> {
    let &(_, target) = scores
        .iter()
        .find(|(item, _)| *item == positive)
        .ok_or_else(|| Error::contract(format!("positive item {positive} not among candidates")))?;
    let ahead = scores
        .iter()
        .filter(|&&(item, s)| item != positive && (s > target || (s == target && item < positive)))
        .count();
    Ok(1 + ahead)
}

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::contract("no ranks to aggregate"));
    }
    if ranks.contains(&0) {
        return Err(Error::contract("ranks are 1-based"));
    }
    Ok(())
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks)?;
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks)?;
    // fold from +0.0: `Sum` for f64 starts at -0.0
    let gain = ranks
        .iter()
        .filter(|&&r| r <= k)
        .fold(0.0, |acc, &r| acc + 1.0 / ((r + 1) as f64).log2());
    Ok(gain / ranks.len() as f64)
}

/// Metrics of one model over one candidate collection; `hr[j]` and `ndcg[j]`
/// belong to `ks[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub ranks: Vec<usize>,
    pub truncated_users: usize,
}

pub fn evaluate_model(
    scorer: &dyn Scorer,
    candidates: &[CandidateSet],
    ks: &[usize],
) -> Result<MetricSummary> {
    let mut ranks = Vec::with_capacity(candidates.len());
    for c in candidates {
        let items = c.items();
        let scores = scorer.score(c.user, &items).map_err(|e| Error::Scoring {
            user: c.user,
            message: e.to_string(),
        })?;
        if scores.len() != items.len() {
            return Err(Error::Scoring {
                user: c.user,
                message: format!("{} scores for {} candidates", scores.len(), items.len()),
            });
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Scoring {
                user: c.user,
                message: format!("non-finite score {s}"),
            });
        }
        let scored: Vec<(ItemId, f64)> = items.into_iter().zip(scores).collect();
        ranks.push(rank_of_positive(&scored, c.positive)?);
    }
    Ok(MetricSummary {
        ks: ks.to_vec(),
        hr: ks
            .iter()
            .map(|&k| hr_at_k(&ranks, k))
            .collect::<Result<_>>()?,
        ndcg: ks
            .iter()
            .map(|&k| ndcg_at_k(&ranks, k))
            .collect::<Result<_>>()?,
        ranks,
        truncated_users: candidates.iter().filter(|c| c.truncated).count(),
    })
}

/// One row of the comparison: a model on a market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub model: String,
    pub market: String,
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
    pub excluded_users: usize,
    pub truncated_users: usize,
    pub seed: u64,
    pub config_digest: String,
    pub wall_clock_ms: u128,
}

impl EvalEntry {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.hr[j])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.ndcg[j])
    }
}

/// Scores one model on a candidate collection and packages the entry.
pub fn evaluate_entry(
    name: &str,
    scorer: &dyn Scorer,
    split: &SplitDataset,
    candidates: &[CandidateSet],
    ks: &[usize],
    seed: u64,
    config_digest: &str,
) -> Result<EvalEntry> {
    let start = Instant::now();
    let summary = evaluate_model(scorer, candidates, ks)?;
    Ok(EvalEntry {
        model: name.to_string(),
        market: split.target_market.clone(),
        ks: summary.ks,
        hr: summary.hr,
        ndcg: summary.ndcg,
        users: candidates.len(),
        excluded_users: split.excluded_users.len(),
        truncated_users: summary.truncated_users,
        seed,
        config_digest: config_digest.to_string(),
        wall_clock_ms: start.elapsed().as_millis(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
}

/// A (market, metric, k) column of the comparison table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Column {
    pub market: String,
    pub metric: &'static str,
    pub k: usize,
}

impl EvalReport {
    /// Scores every model on the same candidates.
    pub fn compare(
        models: &[(&str, &dyn Scorer)],
        split: &SplitDataset,
        candidates: &[CandidateSet],
        ks: &[usize],
        seed: u64,
        config_digest: &str,
    ) -> Result<Self> {
        let entries = models
            .iter()
            .map(|(name, scorer)| {
                evaluate_entry(name, *scorer, split, candidates, ks, seed, config_digest)
            })
            .collect::<Result<_>>()?;
        Ok(EvalReport { entries })
    }

    pub fn push(&mut self, entry: EvalEntry) {
        self.entries.push(entry);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Model names in first-seen order.
    pub fn models(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.model.as_str()) {
                seen.push(e.model.as_str());
            }
        }
        seen
    }

    /// Columns grouped by market (first-seen order), NDCG before HR per k.
    pub fn columns(&self) -> Vec<Column> {
        let mut markets: Vec<&str> = Vec::new();
        let mut ks_by_market: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for e in &self.entries {
            if !markets.contains(&e.market.as_str()) {
                markets.push(&e.market);
            }
            let ks = ks_by_market.entry(&e.market).or_default();
            for &k in &e.ks {
                if !ks.contains(&k) {
                    ks.push(k);
                }
            }
        }
        let mut cols = Vec::new();
        for m in markets {
            for &k in &ks_by_market[m] {
                for metric in ["NDCG", "HR"] {
                    cols.push(Column {
                        market: m.to_string(),
                        metric,
                        k,
                    });
                }
            }
        }
        cols
    }

    pub fn cell(&self, model: &str, col: &Column) -> Option<f64> {
        let e = self
            .entries
            .iter()
            .find(|e| e.model == model && e.market == col.market)?;
        match col.metric {
            "NDCG" => e.ndcg_at(col.k),
            _ => e.hr_at(col.k),
        }
    }

    /// Number of populated metric cells in the table.
    pub fn cell_count(&self) -> usize {
        let cols = self.columns();
        self.models()
            .iter()
            .map(|m| cols.iter().filter(|c| self.cell(m, c).is_some()).count())
            .sum()
    }

    /// Aligned table, one row per model; the best value in each column is
    /// marked with `*`.
    pub fn to_table(&self) -> String {
        let cols = self.columns();
        let models = self.models();
        let best: Vec<Option<f64>> = cols
            .iter()
            .map(|c| {
                models
                    .iter()
                    .filter_map(|m| self.cell(m, c))
                    .fold(None, |acc: Option<f64>, v| {
                        Some(acc.map_or(v, |a| a.max(v)))
                    })
            })
            .collect();
        let name_w = models
            .iter()
            .map(|m| m.len())
            .max()
            .unwrap_or(0)
            .max("Method".len());
        let headers: Vec<String> = cols
            .iter()
            .map(|c| format!("{} {}@{}", c.market, c.metric, c.k))
            .collect();
        let col_w: Vec<usize> = headers.iter().map(|h| h.len().max(7)).collect();

        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "Method");
        for (h, w) in headers.iter().zip(&col_w) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for m in &models {
            let _ = write!(out, "{m:<name_w$}");
            for ((c, w), b) in cols.iter().zip(&col_w).zip(&best) {
                let text = match self.cell(m, c) {
                    Some(v) if Some(v) == *b => format!("{v:.4}*"),
                    Some(v) => format!("{v:.4} "),
                    None => "- ".to_string(),
                };
                let _ = write!(out, "  {text:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let mut scores: Vec<(ItemId, f64)> = vec![(0, 0.9)];
        scores.extend((1..100).map(|i| (i, 0.5 * (i as f64 / 100.0))));
        assert_eq!(rank_of_positive(&scores, 0).unwrap(), 1);
        assert_eq!(
            rank_of_positive(&[(3, 0.4), (5, 0.4), (9, 0.1)], 5).unwrap(),
            2
        );
        assert_eq!(rank_of_positive(&[(3, 0.4), (5, 0.4)], 3).unwrap(), 1);
        let lowest: Vec<_> = (0..100).map(|i| (i, i as f64)).collect();
        assert_eq!(rank_of_positive(&lowest, 0).unwrap(), 100);
        assert!(rank_of_positive(&lowest, 500).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(hr_at_k(&[1], 10).unwrap(), 1.0);
        assert_eq!(hr_at_k(&[11], 10).unwrap(), 0.0);
        assert_eq!(hr_at_k(&[2, 12], 10).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&[1], 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[3], 10).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&[11], 10).unwrap().to_bits(), 0f64.to_bits());
        assert!(hr_at_k(&[], 10).is_err());
        assert!(ndcg_at_k(&[0], 10).is_err());
    }

    struct Oracle;
    impl Scorer for Oracle {
        fn score(&self, _: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
            // positive is always first
            Ok((0..items.len())
                .map(|j| if j == 0 { 1.0 } else { 0.0 })
                .collect())
        }
    }

    struct Broken;
    impl Scorer for Broken {
        fn score(&self, _: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
            Ok(vec![f64::NAN; items.len()])
        }
    }

    fn sets() -> Vec<CandidateSet> {
        (0..5)
            .map(|u| CandidateSet {
                user: u,
                positive: u,
                negatives: (10..19).collect(),
                truncated: false,
                seed: 0,
            })
            .collect()
    }

    #[test]
    fn oracle_scorer_is_perfect() {
        let s = evaluate_model(&Oracle, &sets(), &[1, 10]).unwrap();
        assert_eq!(s.hr, vec![1.0, 1.0]);
        assert_eq!(s.ndcg, vec![1.0, 1.0]);
    }

    #[test]
    fn scoring_failures_name_the_user() {
        let err = evaluate_model(&Broken, &sets(), &[10]).unwrap_err();
        assert!(matches!(err, Error::Scoring { user: 0, .. }), "{err}");
    }

    fn entry(model: &str, market: &str, v: f64) -> EvalEntry {
        EvalEntry {
            model: model.into(),
            market: market.into(),
            ks: vec![10],
            hr: vec![v],
            ndcg: vec![v / 2.0],
            users: 1,
            excluded_users: 0,
            truncated_users: 0,
            seed: 0,
            config_digest: String::new(),
            wall_clock_ms: 0,
        }
    }

    #[test]
    fn report_shape_and_best_marks() {
        let mut report = EvalReport::default();
        let names = ["gmf", "mlp", "nmf", "itemcf", "usercf", "crossgr"];
        for (j, m) in names.iter().enumerate() {
            for market in ["t1", "t2"] {
                report.push(entry(m, market, 0.1 * (j + 1) as f64));
            }
        }
        assert_eq!(report.columns().len(), 4);
        assert_eq!(report.cell_count(), 24);
        let table = report.to_table();
        assert_eq!(table.lines().count(), 7);
        let crossgr = table.lines().last().unwrap();
        assert!(crossgr.starts_with("crossgr") && crossgr.matches('*').count() == 4);
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back.entries.len(), 12);
    }
}
