use std::collections::BTreeSet;

use proptest::prelude::*;
use taudis::model::{ingest_predictions, write_predictions, ImagePrediction, InstancePrediction, Pool, PoolState};
use taudis::sim::{generate_pool, mock_predictor, SyntheticPoolSpec};
use taudis::strategies::{select, taudis_trace, unlabeled_images};
use taudis::{SelectionConfig, Strategy as Selector};

fn instance_strategy(dim: usize) -> impl proptest::strategy::Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
    (
        prop::collection::vec(0.01f64..1.0, 3),
        prop::collection::vec(0.1f64..1.0, dim),
        0.01f64..1.0,
        0.0f64..0.69,
    )
}

prop_compose! {
    fn pool_strategy(min_instances: usize)(
        shapes in prop::collection::vec(prop::collection::vec(instance_strategy(4), min_instances..4), 1..12),
    ) -> Pool {
        let images = shapes
            .into_iter()
            .enumerate()
            .map(|(i, insts)| {
                let instances = insts
                    .into_iter()
                    .enumerate()
                    .map(|(j, (raw, emb, size, se))| {
                        let total: f64 = raw.iter().sum();
                        InstancePrediction {
                            instance_id: format!("i{i}-{j}"),
                            image_id: String::new(),
                            class_probs: raw.iter().map(|p| p / total).collect(),
                            embedding: emb,
                            size_ratio: size,
                            mask: None,
                            seg_entropy: Some(se),
                        }
                    })
                    .collect();
                ImagePrediction::new(format!("img{i:02}"), instances)
            })
            .collect();
        Pool::new(images).unwrap()
    }
}

fn dump(pool: &Pool) -> String {
    let mut buf = Vec::new();
    write_predictions(pool, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn parse(text: String) -> Pool {
    ingest_predictions(std::io::Cursor::new(text.into_bytes())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialization_round_trips(pool in pool_strategy(0)) {
        prop_assert_eq!(parse(dump(&pool)), pool);
    }

    #[test]
    fn ingestion_ignores_line_order(pool in pool_strategy(0), rot in 0usize..12) {
        let text = dump(&pool);
        let mut lines: Vec<&str> = text.lines().collect();
        let n = lines.len();
        lines.rotate_left(rot % n);
        lines.reverse();
        prop_assert_eq!(parse(lines.join("\n")), pool);
    }

    #[test]
    // Every image needs an embedding for the image-level strategies.
    fn every_strategy_is_exact_and_deterministic(
        pool in pool_strategy(1),
        labeled_mask in prop::collection::vec(any::<bool>(), 12),
        budget in 1usize..8,
        seed in any::<u64>(),
    ) {
        let labeled: Vec<String> = pool
            .image_ids()
            .zip(&labeled_mask)
            .filter(|(_, &l)| l)
            .map(|(id, _)| id.to_owned())
            .collect();
        let state = PoolState::from_pool(&pool, labeled);
        for strategy in Selector::ALL {
            let mut cfg = SelectionConfig::new(strategy, budget);
            cfg.alpha = 3.0;
            cfg.beta = 1.5;
            cfg.seed = seed;
            let out = select(&pool, &state, &cfg).unwrap();
            let expected = budget.min(state.unlabeled.len());
            prop_assert_eq!(out.selected_images.len(), expected);
            let uniq: BTreeSet<&String> = out.selected_images.iter().collect();
            prop_assert_eq!(uniq.len(), expected);
            prop_assert!(uniq.iter().all(|id| state.unlabeled.contains(*id)));
            prop_assert_eq!(&select(&pool, &state, &cfg).unwrap(), &out);

            let next = state.apply_round(&out.selected_images).unwrap();
            prop_assert_eq!(next.labeled.len() + next.unlabeled.len(), state.total());
            prop_assert!(next.labeled.is_disjoint(&next.unlabeled));
        }
    }

    #[test]
    fn mock_predictor_never_raises_uncertainty(seed in 0u64..200, take in 0usize..40, decay in 0.05f64..0.95) {
        let spec = SyntheticPoolSpec { num_images: 40, num_clusters: 5, embedding_dim: 8, seed, ..Default::default() };
        let sp = generate_pool(&spec).unwrap();
        let labeled: BTreeSet<String> = sp.pool.image_ids().take(take).map(str::to_owned).collect();
        let after = mock_predictor(&sp.pool, &sp.truth, &labeled, decay);
        for (a, b) in sp.pool.images().zip(after.images()) {
            prop_assert_eq!(&a.image_id, &b.image_id);
            for (x, y) in a.instances.iter().zip(&b.instances) {
                prop_assert!(y.segmentation_entropy() <= x.segmentation_entropy() + 1e-12);
                prop_assert_eq!(&x.embedding, &y.embedding);
            }
        }
    }
}

/// Distinct planted clusters among the diverse representatives are never
/// fewer than among the same number of top-SE instances.
#[test]
fn representatives_span_at_least_as_many_clusters() {
    for seed in 0..12u64 {
        let spec = SyntheticPoolSpec {
            num_images: 120,
            num_clusters: 10,
            embedding_dim: 16,
            seed,
            ..Default::default()
        };
        let sp = generate_pool(&spec).unwrap();
        let state = PoolState::from_pool(&sp.pool, []);
        let images = unlabeled_images(&sp.pool, &state).unwrap();
        let mut cfg = SelectionConfig::new(Selector::Taudis, 5);
        cfg.alpha = 20.0;
        cfg.beta = 2.0;
        let trace = taudis_trace(&images, &cfg).unwrap();
        let k = trace.representatives.len();
        let clusters = |ids: &[String]| -> BTreeSet<usize> { ids.iter().map(|id| sp.truth.cluster_of[id]).collect() };
        let diverse = clusters(&trace.representatives);
        let top = clusters(&trace.candidates[..k]);
        assert!(
            diverse.len() >= top.len(),
            "seed {seed}: {} < {}",
            diverse.len(),
            top.len()
        );
    }
}
