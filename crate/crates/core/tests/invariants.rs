use crossgr::graph::{
    build_graph, normalize_rows, sample_excluding, sample_negatives, InteractionGraph,
};
use crossgr::kernel::Matrix;
use crossgr::model::{Aggregation, CrossGr, CrossGrConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(
    rng: &mut ChaCha8Rng,
    nu: usize,
    ni: usize,
    density: f64,
) -> (Vec<(usize, usize)>, InteractionGraph) {
    let mut edges = Vec::new();
    for u in 0..nu {
        for i in 0..ni {
            if rng.random_bool(density) {
                edges.push((u, i));
            }
        }
    }
    let graph = build_graph(&edges, nu, ni).unwrap();
    (edges, graph)
}

#[test]
fn normalized_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (_, g) = random_graph(&mut rng, 30, 40, 0.15);
        let w = normalize_rows(&g);
        for (adj, rows) in [(g.user_adj(), &w.users), (g.item_adj(), &w.items)] {
            for v in 0..adj.num_rows() {
                let r = &rows[adj.range(v)];
                if !r.is_empty() {
                    assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
        let nodes = g.node_adjacency(true);
        for v in 0..nodes.num_nodes() {
            let s: f64 = nodes.weights(v).iter().sum();
            assert!(nodes.weights(v).is_empty() || (s - 1.0).abs() <= 1e-12);
        }
    }
}

/// Dyadic parameters keep every sum exact, so reordering neighbors cannot
/// change a single bit.
fn dyadic(model: &mut CrossGr, rng: &mut ChaCha8Rng) {
    let store = model.store_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (r, c) = store.value(id).shape();
        let data = (0..r * c)
            .map(|_| rng.random_range(-4i32..=4) as f64 / 8.0)
            .collect();
        *store.value_mut(id) = Matrix::from_vec(r, c, data).unwrap();
    }
}

fn assert_equivariant(
    edges: &[(usize, usize)],
    nu: usize,
    ni: usize,
    aggregation: Aggregation,
    rng: &mut ChaCha8Rng,
) {
    let g = build_graph(edges, nu, ni).unwrap();
    let mut pu: Vec<usize> = (0..nu).collect();
    let mut pi: Vec<usize> = (0..ni).collect();
    pu.shuffle(rng);
    pi.shuffle(rng);
    let permuted: Vec<_> = edges.iter().map(|&(u, i)| (pu[u], pi[i])).collect();
    let gp = build_graph(&permuted, nu, ni).unwrap();

    let config = CrossGrConfig {
        aggregation,
        ..CrossGrConfig::with_latent_dim(4)
    };
    let mut a = CrossGr::new(config.clone(), &g, 0).unwrap();
    dyadic(&mut a, rng);
    let mut b = CrossGr::new(config, &gp, 0).unwrap();
    b.store_mut().load_from(a.store()).unwrap();
    let (ue, ie) = (a.ids().user_emb, a.ids().item_emb);
    for (emb, perm) in [(ue, &pu), (ie, &pi)] {
        let src = a.store().value(emb).clone();
        let dst = b.store_mut().value_mut(emb);
        for (v, &p) in perm.iter().enumerate() {
            dst.row_mut(p).copy_from_slice(src.row(v));
        }
    }
    let ha = a.node_embeddings().unwrap();
    let hb = b.node_embeddings().unwrap();
    for (u, &pu) in pu.iter().enumerate() {
        assert_eq!(ha.row(u), hb.row(pu));
    }
    for (i, &pi) in pi.iter().enumerate() {
        assert_eq!(ha.row(nu + i), hb.row(nu + pi));
    }
}

#[test]
fn sum_encode_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (edges, _) = random_graph(&mut rng, 7, 9, 0.3);
        assert_equivariant(&edges, 7, 9, Aggregation::Sum, &mut rng);
    }
}

/// Mean weights are dyadic only when degrees are powers of two, so the
/// normalized case uses blocks K(1,1), K(2,2), K(4,4) and K(1,2).
#[test]
fn normalized_encode_is_permutation_equivariant() {
    let mut edges = vec![(0, 0)];
    for (users, items) in [(1..3, 1..3), (3..7, 3..7)] {
        for u in users {
            for i in items.clone() {
                edges.push((u, i));
            }
        }
    }
    edges.extend([(7, 7), (7, 8)]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        assert_equivariant(&edges, 9, 10, Aggregation::RowNormalized, &mut rng);
    }
}

#[test]
fn negatives_never_hit_train_positives() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let nu = rng.random_range(1..8);
        let ni = rng.random_range(1..12);
        let (_, g) = random_graph(&mut rng, nu, ni, 0.4);
        for u in 0..nu {
            for k in 0..=ni + 1 {
                let s = sample_negatives(&g, u, k, &mut rng);
                let pool = ni - g.user_items(u).len();
                assert_eq!(s.items.len(), k.min(pool));
                assert_eq!(s.truncated, k > pool);
                let mut seen = s.items.clone();
                seen.sort_unstable();
                seen.dedup();
                assert_eq!(seen.len(), s.items.len());
                assert!(s
                    .items
                    .iter()
                    .all(|i| *i < ni && !g.user_items(u).contains(i)));
            }
        }
    }
}

#[test]
fn sparse_exclusion_uses_rejection_path_correctly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let excluded: Vec<usize> = (0..1000).step_by(7).collect();
    for _ in 0..100 {
        let s = sample_excluding(1000, &excluded, 99, &mut rng);
        assert_eq!(s.items.len(), 99);
        assert!(s.items.iter().all(|i| excluded.binary_search(i).is_err()));
    }
}
