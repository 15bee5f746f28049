//! Final accuracy of fedmr / fedavg / fedmr_no_mr over several seeds on a
//! skewed synthetic task.
//!
//! usage: directional [noise] [dim] [hidden] [rounds] [seeds] [separation] [spiral]

use fedmr::data::{generate_synthetic, partition, SyntheticKind, SyntheticSpec};
use fedmr::nn::ArchSpec;
use fedmr::orchestrator::{run_experiment, Algorithm, ExperimentConfig, PartitionSettings, Seeds};
use fedmr::data::PartitionScheme;

fn main() -> fedmr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (noise, dim, hidden, rounds, seeds, sep) =
        (arg(0, 1.0), arg(1, 16.0) as usize, arg(2, 32.0) as usize, arg(3, 200.0) as usize, arg(4, 5.0) as u64, arg(5, 1.0));

    for s in 0..seeds {
        let spec = SyntheticSpec {
            kind: if arg(6, 0.0) > 0.5 { SyntheticKind::Spiral } else { SyntheticKind::Blobs },
            num_classes: 8,
            num_samples: 5000,
            dim,
            noise,
            separation: sep,
            proportions: None,
            seed: 100 + s,
        };
        let (train, test) = generate_synthetic(&spec)?.split_at(4000);
        let mut line = format!("seed {s}:");
        for alg in [Algorithm::Fedmr, Algorithm::Fedavg, Algorithm::FedmrNoMr] {
            let cfg = ExperimentConfig {
                algorithm: alg,
                num_clients: 20,
                participation_fraction: 0.1,
                rounds,
                model: ArchSpec::Mlp { hidden: vec![hidden, hidden] },
                partition: PartitionSettings { scheme: PartitionScheme::Dirichlet, alpha: 0.1, min_samples_per_client: 2 },
                seeds: Seeds { init: s, data: s, sampling: s, recombine: s },
                ..Default::default()
            };
            let shards = partition(&train, &cfg.partition_spec(), cfg.seeds.partition())?;
            let t = std::time::Instant::now();
            let out = run_experiment(&cfg, &shards, &test)?;
            let accs: Vec<f64> = out.records.iter().filter_map(|r| r.accuracy).collect();
            let last = *accs.last().unwrap();
            let tail: f64 = accs[accs.len() - 10..].iter().sum::<f64>() / 10.0;
            line += &format!("  {}={:.3} (tail10 {:.3}, {:.1}s)", alg.name(), last, tail, t.elapsed().as_secs_f64());
        }
        println!("{line}");
    }
    Ok(())
}
