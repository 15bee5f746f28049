mod common;

use common::*;
use fedmr::checkpoint;
use fedmr::data::synthetic::apportion;
use fedmr::data::{partition, PartitionScheme, PartitionSpec};
use fedmr::fed::{fedavg_aggregate, model_recombine, ModelList};
use fedmr::nn::ArchSpec;
use fedmr::orchestrator::{sample_clients, Algorithm, ExperimentConfig, Stage};
use fedmr::structure::{decompose, reassemble};
use proptest::prelude::*;

fn mlp_list(k: usize, hidden: Vec<usize>, seed: u64) -> Vec<fedmr::nn::LayeredModel> {
    (0..k)
        .map(|i| ArchSpec::Mlp { hidden: hidden.clone() }.build(&[3], 3, seed + i as u64).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decompose_then_reassemble_is_identity(
        k in 1usize..6, hidden in prop::collection::vec(1usize..6, 0..3), seed in any::<u64>()
    ) {
        let ms = mlp_list(k, hidden, seed >> 8);
        let back = reassemble(&decompose(&ms).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&ms) {
            prop_assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn recombination_preserves_layer_multisets(
        k in 1usize..8, hidden in prop::collection::vec(1usize..6, 0..3), seed in any::<u64>()
    ) {
        let ms = mlp_list(k, hidden, seed >> 8);
        let out = model_recombine(&ModelList::new(ms.clone(), 0).unwrap(), seed).unwrap();
        for layer in 0..ms[0].layers().len() {
            let mut a: Vec<_> = ms.iter().map(|m| layer_key(&m.layers()[layer])).collect();
            let mut b: Vec<_> = out.models.entries().iter().map(|m| layer_key(&m.layers()[layer])).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
        let g_in = fedavg_aggregate(&ms, None).unwrap().flat_params();
        let g_out = fedavg_aggregate(out.models.entries(), None).unwrap().flat_params();
        for (x, y) in g_in.iter().zip(&g_out) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn averaging_copies_of_one_model_returns_it(k in 1usize..9, seed in any::<u64>()) {
        let m = ArchSpec::Mlp { hidden: vec![4] }.build(&[3], 2, seed).unwrap();
        let g = fedavg_aggregate(&vec![m.clone(); k], None).unwrap();
        for (a, b) in g.flat_params().iter().zip(m.flat_params()) {
            prop_assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn partitions_cover_exactly(
        n in 20usize..300, clients in 1usize..10, alpha in 0.05f64..5.0, iid in any::<bool>(), seed in any::<u64>()
    ) {
        let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 5).collect();
        let data = fedmr::data::Dataset::new(vec![1], vec![0.0; n], labels, 5).unwrap();
        let spec = PartitionSpec {
            scheme: if iid { PartitionScheme::Iid } else { PartitionScheme::Dirichlet },
            alpha,
            num_clients: clients,
            min_samples_per_client: 2,
        };
        let shards = partition(&data, &spec, seed).unwrap();
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(shards.iter().all(|s| s.len() >= 2));
    }

    #[test]
    fn apportion_is_exact(total in 0usize..10_000, weights in prop::collection::vec(0.01f64..10.0, 1..12)) {
        let counts = apportion(total, &weights);
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
        let sum: f64 = weights.iter().sum();
        for (c, w) in counts.iter().zip(&weights) {
            prop_assert!((*c as f64 - total as f64 * w / sum).abs() < 1.0);
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>()) {
        let (m, _) = random_model(&mut rng(seed));
        let back = checkpoint::read_model(&checkpoint::to_bytes(&m)[..]).unwrap();
        prop_assert!(back.bit_eq(&m));
    }

    #[test]
    fn sampled_clients_are_distinct_and_sorted(n in 1usize..50, frac in 0.0f64..1.0, seed in any::<u64>(), round in 1usize..1000) {
        let k = ((frac * n as f64) as usize).max(1);
        let ids = sample_clients(n, k, seed, round).unwrap();
        prop_assert_eq!(ids.len(), k);
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ids.iter().all(|&i| i < n));
        prop_assert_eq!(ids, sample_clients(n, k, seed, round).unwrap());
    }

    #[test]
    fn stages_switch_once(rounds in 0usize..50, frac in 0.0f64..=1.0) {
        let n = (frac * rounds as f64) as usize;
        let cfg = ExperimentConfig { rounds, pretrain_rounds: n, ..Default::default() };
        let stages: Vec<Stage> = (1..=rounds).map(|r| cfg.stage(r)).collect();
        prop_assert!(stages[..n].iter().all(|s| *s == Stage::Pretrain));
        prop_assert!(stages[n..].iter().all(|s| *s == Stage::Recombine));
        let avg = ExperimentConfig { algorithm: Algorithm::Fedavg, ..cfg };
        prop_assert!((1..=rounds).all(|r| avg.stage(r) == Stage::Pretrain));
    }
}
