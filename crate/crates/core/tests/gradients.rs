use std::sync::Arc;

use crossgr::graph::{build_graph, NodeAdjacency};
use crossgr::kernel::{grad_check, GradCheckOptions, Matrix, ParamStore};
use crossgr::model::{encode, score_pairs, Aggregation, CrossGr, CrossGrConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 4 users + 4 items.
fn fixture_edges() -> Vec<(usize, usize)> {
    vec![
        (0, 0),
        (0, 1),
        (1, 1),
        (1, 2),
        (2, 2),
        (2, 3),
        (3, 0),
        (3, 3),
        (1, 3),
    ]
}

fn check_model(config: CrossGrConfig, seed: u64) {
    let graph = build_graph(&fixture_edges(), 4, 4).unwrap();
    let model = CrossGr::new(config, &graph, seed).unwrap();
    let users = [0, 1, 2, 3, 0, 2];
    let items = [0, 2, 1, 3, 3, 0];
    let labels = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
    let report = grad_check(
        model.store(),
        |tape| {
            let h = encode(
                tape,
                model.adjacency(),
                model.ids(),
                model.config(),
                &mut None,
            )?;
            let logits = score_pairs(
                tape,
                h,
                4,
                &users,
                &items,
                &model.ids().scorer,
                0.0,
                &mut None,
            )?;
            tape.bce_mean(logits, &labels)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "seed {seed}: {report:?}");
    assert_eq!(report.checked, model.store().num_scalars());
}

#[test]
fn full_model_gradients_over_twenty_seeds() {
    for seed in 0..20 {
        check_model(CrossGrConfig::default(), seed);
    }
}

#[test]
fn normalized_and_deeper_variants() {
    let normalized = CrossGrConfig {
        aggregation: Aggregation::RowNormalized,
        ..CrossGrConfig::default()
    };
    let deeper = CrossGrConfig {
        num_gin_layers: 3,
        epsilon_init: 0.25,
        ..CrossGrConfig::with_latent_dim(4)
    };
    for seed in 0..3 {
        check_model(normalized.clone(), seed);
        check_model(deeper.clone(), seed);
    }
}

#[test]
fn neighbor_sum_is_linear() {
    let adj = Arc::new(
        NodeAdjacency::from_edges(
            5,
            &[
                (0, 1, 1.0),
                (1, 0, 0.5),
                (2, 4, 2.0),
                (4, 2, 1.0),
                (3, 3, 1.0),
            ],
        )
        .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let store = ParamStore::new();
    let x = Matrix::gaussian(5, 3, 1.0, &mut rng);
    let y = Matrix::gaussian(5, 3, 1.0, &mut rng);
    let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));

    let mut tape = crossgr::kernel::Tape::inference(&store);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let sx = tape.neighbor_sum(xv, &adj).unwrap();
    let sy = tape.neighbor_sum(yv, &adj).unwrap();
    let mut mixed = x.map(|v| a * v);
    mixed.add_assign(&y.map(|v| b * v));
    let combo = tape.constant(mixed);
    let sc = tape.neighbor_sum(combo, &adj).unwrap();
    let lhs = tape.value(sc).clone();
    let mut rhs = tape.value(sx).map(|v| a * v);
    rhs.add_assign(&tape.value(sy).map(|v| b * v));
    for (l, r) in lhs.as_slice().iter().zip(rhs.as_slice()) {
        assert!((l - r).abs() < 1e-12, "{l} vs {r}");
    }
}
