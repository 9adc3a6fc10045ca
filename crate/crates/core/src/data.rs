//! Per-market interaction ingestion, vocabularies, cross-market merging,
//! leave-one-out splitting and dataset statistics.
//!
//! Input files are UTF-8, tab separated: `user<TAB>item<TAB>rating[<TAB>extra...]`.
//! A header row is skipped when the third field of the first non-empty line is
//! not numeric. Users are namespaced by market (`s1::u42`) because markets never
//! share users; item tokens are shared across markets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type UserId = usize;
pub type ItemId = usize;

/// Separator between the market label and the raw user token.
pub const MARKET_SEPARATOR: &str = "::";

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    /// Market-qualified user token, e.g. `s1::u42`.
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub market: String,
    /// Trailing columns (timestamps and the like); kept but unused.
    pub extra: Vec<String>,
}

impl InteractionRecord {
    pub fn raw_user(&self) -> &str {
        self.user_id
            .split_once(MARKET_SEPARATOR)
            .map_or(self.user_id.as_str(), |(_, raw)| raw)
    }
}

pub fn qualify_user(market: &str, user: &str) -> String {
    format!("{market}{MARKET_SEPARATOR}{user}")
}

/// All interactions of one market, deduplicated on (user, item) and sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSet {
    pub market: String,
    pub records: Vec<InteractionRecord>,
}

impl InteractionSet {
    /// Builds a set from in-memory `(raw user, item, rating)` triples, applying the
    /// same dedup and ordering as the file parser. Ratings are not range-checked.
    pub fn from_triples<'a, I>(market: &str, triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, f64)>,
    {
        let mut dedup = BTreeMap::new();
        for (user, item, rating) in triples {
            dedup.insert(
                (qualify_user(market, user), item.to_string()),
                (rating, Vec::new()),
            );
        }
        Self::from_dedup(market, dedup)
    }

    fn from_dedup(market: &str, dedup: BTreeMap<(String, String), (f64, Vec<String>)>) -> Self {
        let records = dedup
            .into_iter()
            .map(|((user_id, item_id), (rating, extra))| InteractionRecord {
                user_id,
                item_id,
                rating,
                market: market.to_string(),
                extra,
            })
            .collect();
        InteractionSet {
            market: market.to_string(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn parse_interactions(path: impl AsRef<Path>, market: &str) -> Result<InteractionSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions_str(&text, market, path)
}

/// Parses TSV text already in memory. `origin` only labels error messages.
pub fn parse_interactions_str(
    text: &str,
    market: &str,
    origin: impl AsRef<Path>,
) -> Result<InteractionSet> {
    let origin = origin.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut dedup: BTreeMap<(String, String), (f64, Vec<String>)> = BTreeMap::new();
    let mut seen_content = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(line_no, "expected 3 fields".to_string()));
        }
        let first = !seen_content;
        seen_content = true;

        let rating_field = fields[2].trim();
        let rating: f64 = match rating_field.parse() {
            Ok(r) => r,
            Err(_) if first => {
                log::debug!("{}: skipping header row", origin.display());
                continue;
            }
            Err(_) => {
                return Err(parse_err(
                    line_no,
                    format!("non-numeric rating {rating_field:?}"),
                ))
            }
        };
        if !rating.is_finite() || !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(parse_err(
                line_no,
                format!("rating {rating_field} outside [{MIN_RATING}, {MAX_RATING}]"),
            ));
        }
        let user = fields[0].trim();
        let item = fields[1].trim();
        if user.is_empty() || item.is_empty() {
            return Err(parse_err(line_no, "empty user or item id".to_string()));
        }
        let extra = fields[3..].iter().map(|s| s.to_string()).collect();
        dedup.insert(
            (qualify_user(market, user), item.to_string()),
            (rating, extra),
        );
    }

    if dedup.is_empty() {
        log::warn!("{}: no interactions for market {market}", origin.display());
    }
    Ok(InteractionSet::from_dedup(market, dedup))
}

/// Dense bijections between tokens and integer ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, UserId>,
    item_index: HashMap<String, ItemId>,
}

impl Vocab {
    fn from_sorted(users: Vec<String>, items: Vec<String>) -> Self {
        let user_index = users
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let item_index = items
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            users,
            items,
            user_index,
            item_index,
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_index(&self, qualified: &str) -> Option<UserId> {
        self.user_index.get(qualified).copied()
    }

    pub fn item_index(&self, token: &str) -> Option<ItemId> {
        self.item_index.get(token).copied()
    }

    pub fn user_token(&self, id: UserId) -> Option<&str> {
        self.users.get(id).map(String::as_str)
    }

    pub fn item_token(&self, id: ItemId) -> Option<&str> {
        self.items.get(id).map(String::as_str)
    }

    /// Hex SHA-256 over both token lists; checkpoints record it so they can
    /// refuse to load against a different dataset.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for u in &self.users {
            hasher.update(b"u\t");
            hasher.update(u.as_bytes());
            hasher.update(b"\n");
        }
        for i in &self.items {
            hasher.update(b"i\t");
            hasher.update(i.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

pub fn build_vocab(sets: &[InteractionSet]) -> Result<Vocab> {
    let mut users = BTreeSet::new();
    let mut items = BTreeSet::new();
    for rec in sets.iter().flat_map(|s| &s.records) {
        users.insert(rec.user_id.clone());
        items.insert(rec.item_id.clone());
    }
    if users.is_empty() {
        return Err(Error::NoInteractions);
    }
    Ok(Vocab::from_sorted(
        users.into_iter().collect(),
        items.into_iter().collect(),
    ))
}

/// One interaction mapped to dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedInteraction {
    pub user: UserId,
    pub item: ItemId,
    pub rating: f64,
    pub market: Arc<str>,
}

/// Maps the target and every source market into the shared id space. Output is
/// deduplicated on (user, item), keeping the last occurrence, and sorted.
pub fn merge_markets(
    target: &InteractionSet,
    sources: &[InteractionSet],
    vocab: &Vocab,
) -> Result<Vec<MergedInteraction>> {
    let mut merged: BTreeMap<(UserId, ItemId), (f64, Arc<str>)> = BTreeMap::new();
    for set in std::iter::once(target).chain(sources) {
        let market: Arc<str> = Arc::from(set.market.as_str());
        for rec in &set.records {
            let user = vocab.user_index(&rec.user_id).ok_or_else(|| {
                Error::VocabMismatch(format!("user {} not in vocabulary", rec.user_id))
            })?;
            let item = vocab.item_index(&rec.item_id).ok_or_else(|| {
                Error::VocabMismatch(format!("item {} not in vocabulary", rec.item_id))
            })?;
            merged.insert((user, item), (rec.rating, market.clone()));
        }
    }
    Ok(merged
        .into_iter()
        .map(|((user, item), (rating, market))| MergedInteraction {
            user,
            item,
            rating,
            market,
        })
        .collect())
}

/// Train/valid/test partition of the merged pool for one target market.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub target_market: String,
    /// Sorted (user, item) training pairs from every market.
    pub train: Vec<(UserId, ItemId)>,
    /// Ratings parallel to `train`.
    pub train_ratings: Vec<f64>,
    pub valid: BTreeMap<UserId, ItemId>,
    pub test: BTreeMap<UserId, ItemId>,
    pub excluded_users: BTreeSet<UserId>,
    pub vocab: Vocab,
    /// All observed items (train, valid and test) per evaluable user, sorted.
    pub evaluable_positives: BTreeMap<UserId, Vec<ItemId>>,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.vocab.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.vocab.num_items()
    }

    pub fn total_pairs(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

/// Minimum target-market interactions a user needs to contribute a valid and
/// a test item while keeping at least one for training.
pub const MIN_EVALUABLE_INTERACTIONS: usize = 3;

pub fn split_leave_one_out(
    merged: &[MergedInteraction],
    vocab: &Vocab,
    target_market: &str,
    seed: u64,
) -> Result<SplitDataset> {
    let mut dedup: BTreeMap<(UserId, ItemId), &MergedInteraction> = BTreeMap::new();
    for m in merged {
        dedup.insert((m.user, m.item), m);
    }

    let mut train: Vec<(UserId, ItemId, f64)> = Vec::with_capacity(dedup.len());
    let mut per_target_user: BTreeMap<UserId, Vec<(ItemId, f64)>> = BTreeMap::new();
    for (&(user, item), m) in &dedup {
        if &*m.market == target_market {
            per_target_user
                .entry(user)
                .or_default()
                .push((item, m.rating));
        } else {
            train.push((user, item, m.rating));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut valid = BTreeMap::new();
    let mut test = BTreeMap::new();
    let mut excluded_users = BTreeSet::new();
    let mut evaluable_positives = BTreeMap::new();

    for (user, items) in per_target_user {
        if items.len() < MIN_EVALUABLE_INTERACTIONS {
            excluded_users.insert(user);
            train.extend(items.into_iter().map(|(i, r)| (user, i, r)));
            continue;
        }
        let n = items.len();
        let test_pos = rng.random_range(0..n);
        let mut valid_pos = rng.random_range(0..n - 1);
        if valid_pos >= test_pos {
            valid_pos += 1;
        }
        evaluable_positives.insert(user, items.iter().map(|&(i, _)| i).collect::<Vec<_>>());
        test.insert(user, items[test_pos].0);
        valid.insert(user, items[valid_pos].0);
        for (pos, (item, rating)) in items.into_iter().enumerate() {
            if pos != test_pos && pos != valid_pos {
                train.push((user, item, rating));
            }
        }
    }

    if test.is_empty() {
        return Err(Error::NoEvaluableUsers(target_market.to_string()));
    }

    train.sort_by_key(|a| (a.0, a.1));
    let (pairs, ratings) = train.into_iter().map(|(u, i, r)| ((u, i), r)).unzip();

    Ok(SplitDataset {
        target_market: target_market.to_string(),
        train: pairs,
        train_ratings: ratings,
        valid,
        test,
        excluded_users,
        vocab: vocab.clone(),
        evaluable_positives,
    })
}

/// Vocabulary over every market, merge, then leave-one-out on the target.
pub fn prepare_split(
    target: &InteractionSet,
    sources: &[InteractionSet],
    seed: u64,
) -> Result<SplitDataset> {
    let all: Vec<InteractionSet> = std::iter::once(target).chain(sources).cloned().collect();
    let vocab = build_vocab(&all)?;
    let merged = merge_markets(target, sources, &vocab)?;
    split_leave_one_out(&merged, &vocab, &target.market, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketStats {
    pub market: String,
    pub users: usize,
    pub items: usize,
    /// Deduplicated (user, item) pairs.
    pub interactions: usize,
    pub rating_mean: f64,
    /// Counts of ratings rounded to the nearest star, index 0 is one star.
    pub rating_histogram: [usize; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapCell {
    pub a: String,
    pub b: String,
    pub shared_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub markets: Vec<MarketStats>,
    /// Unordered market pairs, each listed once with `a` before `b` in input order.
    pub overlaps: Vec<OverlapCell>,
    pub rating_mean: f64,
}

impl StatsReport {
    /// Shared item count; on the diagonal this is the market's own item count.
    pub fn overlap(&self, a: &str, b: &str) -> Option<usize> {
        if a == b {
            return self.markets.iter().find(|m| m.market == a).map(|m| m.items);
        }
        self.overlaps
            .iter()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
            .map(|c| c.shared_items)
    }

    pub fn market(&self, name: &str) -> Option<&MarketStats> {
        self.markets.iter().find(|m| m.market == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats report serializes")
    }

    /// Aligned text: one row per market with counts, then an overlap matrix
    /// whose `Total` column is the market's own item count.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .markets
            .iter()
            .map(|m| m.market.len())
            .max()
            .unwrap_or(0)
            .max("Market".len());
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>8}  {:>8}  {:>14}  {:>11}",
            "Market", "# Users", "# Items", "# Interactions", "Mean rating"
        );
        for m in &self.markets {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>8}  {:>8}  {:>14}  {:>11.4}",
                m.market, m.users, m.items, m.interactions, m.rating_mean
            );
        }
        if self.markets.len() > 1 {
            out.push('\n');
            let col_w = name_w.max(6);
            let _ = write!(out, "{:<name_w$}  {:>col_w$}", "Market", "Total");
            for m in &self.markets {
                let _ = write!(out, "  {:>col_w$}", m.market);
            }
            out.push('\n');
            for row in &self.markets {
                let _ = write!(out, "{:<name_w$}  {:>col_w$}", row.market, row.items);
                for col in &self.markets {
                    if col.market == row.market {
                        let _ = write!(out, "  {:>col_w$}", "-");
                    } else {
                        let v = self.overlap(&row.market, &col.market).unwrap_or(0);
                        let _ = write!(out, "  {:>col_w$}", v);
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn compute_stats(sets: &[InteractionSet]) -> StatsReport {
    let item_sets: Vec<BTreeSet<&str>> = sets
        .iter()
        .map(|s| s.records.iter().map(|r| r.item_id.as_str()).collect())
        .collect();

    let mut total_rating = 0.0;
    let mut total_count = 0usize;
    let markets = sets
        .iter()
        .zip(&item_sets)
        .map(|(set, items)| {
            let users: BTreeSet<&str> = set.records.iter().map(|r| r.user_id.as_str()).collect();
            let mut histogram = [0usize; 5];
            let mut sum = 0.0;
            for r in &set.records {
                sum += r.rating;
                let star = (r.rating.round() as usize).clamp(1, 5);
                histogram[star - 1] += 1;
            }
            total_rating += sum;
            total_count += set.records.len();
            MarketStats {
                market: set.market.clone(),
                users: users.len(),
                items: items.len(),
                interactions: set.records.len(),
                rating_mean: if set.records.is_empty() {
                    0.0
                } else {
                    sum / set.records.len() as f64
                },
                rating_histogram: histogram,
            }
        })
        .collect();

    let mut overlaps = Vec::new();
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            overlaps.push(OverlapCell {
                a: sets[a].market.clone(),
                b: sets[b].market.clone(),
                shared_items: item_sets[a].intersection(&item_sets[b]).count(),
            });
        }
    }

    StatsReport {
        markets,
        overlaps,
        rating_mean: if total_count == 0 {
            0.0
        } else {
            total_rating / total_count as f64
        },
    }
}
