use crossgr::data::{ItemId, UserId};
use crossgr::eval::{evaluate_model, hr_at_k, ndcg_at_k, rank_of_positive, CandidateSet, Scorer};
use crossgr::registry::RandomScorer;
use crossgr::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_hr(ranks: &[usize], k: usize) -> f64 {
    let mut hits = 0usize;
    for &r in ranks {
        if r <= k {
            hits += 1;
        }
    }
    hits as f64 / ranks.len() as f64
}

fn brute_ndcg(ranks: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for &r in ranks {
        if r <= k {
            total += 1.0 / ((r + 1) as f64).log2();
        }
    }
    total / ranks.len() as f64
}

#[test]
fn closed_forms_match_brute_force_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(1..=100)).collect();
        for k in [1, 5, 10, 20, 100] {
            assert_eq!(
                hr_at_k(&ranks, k).unwrap().to_bits(),
                brute_hr(&ranks, k).to_bits()
            );
            assert_eq!(
                ndcg_at_k(&ranks, k).unwrap().to_bits(),
                brute_ndcg(&ranks, k).to_bits()
            );
        }
    }
    assert_eq!(ndcg_at_k(&[1], 10).unwrap(), 1.0);
    assert_eq!(ndcg_at_k(&[3], 10).unwrap(), 0.5);
}

fn random_candidates(users: usize, seed: u64) -> Vec<CandidateSet> {
    (0..users)
        .map(|u| CandidateSet {
            user: u,
            positive: 0,
            negatives: (1..100).collect(),
            truncated: false,
            seed,
        })
        .collect()
}

#[test]
fn random_scorer_is_calibrated() {
    let candidates = random_candidates(4000, 0);
    let s = evaluate_model(&RandomScorer { seed: 5 }, &candidates, &[10]).unwrap();
    assert!((s.hr[0] - 0.10).abs() <= 0.02, "{}", s.hr[0]);
    // E[NDCG@10] = (1/100) Σ_{r≤10} 1/log2(r+1)
    let expected: f64 = (1..=10).map(|r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / 100.0;
    assert!(
        (s.ndcg[0] - expected).abs() <= 0.01,
        "{} vs {expected}",
        s.ndcg[0]
    );
}

struct Fixed(Vec<f64>);

impl Scorer for Fixed {
    fn score(&self, _: UserId, items: &[ItemId]) -> Result<Vec<f64>> {
        Ok(items.iter().map(|&i| self.0[i]).collect())
    }
}

proptest! {
    #[test]
    fn ndcg_never_exceeds_hr(ranks in prop::collection::vec(1usize..200, 1..100), k in 1usize..50) {
        let hr = hr_at_k(&ranks, k).unwrap();
        let ndcg = ndcg_at_k(&ranks, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&hr));
        prop_assert!(0.0 <= ndcg && ndcg <= hr);
        prop_assert!(hr_at_k(&ranks, k + 1).unwrap() >= hr);
    }

    #[test]
    fn rank_ignores_candidate_order(scores in prop::collection::vec(0u8..6, 2..40), pos in 0usize..40, seed in 0u64..1000) {
        let pos = pos % scores.len();
        let mut scored: Vec<(usize, f64)> = scores.iter().enumerate().map(|(i, &s)| (i, s as f64)).collect();
        let r = rank_of_positive(&scored, pos).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        scored.shuffle(&mut rng);
        prop_assert_eq!(rank_of_positive(&scored, pos).unwrap(), r);
        // brute force: count strictly better plus tied with smaller id
        let target = scores[pos];
        let ahead = scores.iter().enumerate().filter(|&(i, &s)| s > target || (s == target && i < pos)).count();
        prop_assert_eq!(r, ahead + 1);
    }

    #[test]
    fn evaluation_matches_per_user_ranks(table in prop::collection::vec(-3i32..3, 100)) {
        let scorer = Fixed(table.iter().map(|&x| x as f64).collect());
        let candidates: Vec<CandidateSet> = (0..5)
            .map(|u| CandidateSet { user: u, positive: u * 7, negatives: (50..60).collect(), truncated: false, seed: 0 })
            .collect();
        let s = evaluate_model(&scorer, &candidates, &[1, 5, 10]).unwrap();
        for (j, c) in candidates.iter().enumerate() {
            let scored: Vec<_> = c.items().into_iter().map(|i| (i, table[i] as f64)).collect();
            prop_assert_eq!(s.ranks[j], rank_of_positive(&scored, c.positive).unwrap());
        }
        for (j, &k) in s.ks.iter().enumerate() {
            prop_assert!(s.ndcg[j] <= s.hr[j]);
            prop_assert_eq!(s.hr[j], brute_hr(&s.ranks, k));
        }
    }
}
