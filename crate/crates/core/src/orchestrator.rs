//! The federated round loop.
//!
//! Each round samples K clients, dispatches `L_m[i]` to the `i`-th selected
//! client, trains locally, and applies the round operator to the K uploaded
//! models:
//!
//! | stage       | fedmr / fedmr_no_mr            | fedavg / fedprox |
//! |-------------|--------------------------------|------------------|
//! | `pretrain`  | aggregate, replicate K times   | (always)         |
//! | `recombine` | recombine / random dispatch    | -                |
//!
//! Learning curves are scored on the intermediate global model, the uniform
//! average of the current model list.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, Dataset, PartitionScheme, PartitionSpec};
use crate::error::{Error, Result};
use crate::fed::{
    client_update, dispatch_no_recombine, fedavg_aggregate, global_model_gen, model_recombine,
    LocalTrainConfig, LocalUpdate, ModelList,
};
use crate::nn::{evaluate, ArchSpec, LayeredModel};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fedmr,
    Fedavg,
    Fedprox,
    FedmrNoMr,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fedmr => "fedmr",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedprox => "fedprox",
            Algorithm::FedmrNoMr => "fedmr_no_mr",
        }
    }

    fn aggregates_only(self) -> bool {
        matches!(self, Algorithm::Fedavg | Algorithm::Fedprox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Aggregation round.
    Pretrain,
    /// Recombination (or random dispatch) round.
    Recombine,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Recombine => "recombine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    /// Dataset generation, partitioning and local data order.
    pub data: u64,
    pub sampling: u64,
    pub recombine: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            init: 1,
            data: 2,
            sampling: 3,
            recombine: 4,
        }
    }
}

impl Seeds {
    /// Data-order seed for the client trained in `slot` of `round`.
    pub fn local(&self, round: usize, slot: usize) -> u64 {
        seed::derive(self.data, &[0x6c_6f63_616c, round as u64, slot as u64])
    }

    pub fn recombination(&self, round: usize) -> u64 {
        seed::derive(self.recombine, &[round as u64])
    }

    pub fn model_init(&self, slot: usize, identical: bool) -> u64 {
        seed::derive(self.init, &[if identical { 0 } else { slot as u64 }])
    }

    pub fn partition(&self) -> u64 {
        seed::derive(self.data, &[0x7061_7274])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSettings {
    pub scheme: PartitionScheme,
    pub alpha: f64,
    pub min_samples_per_client: usize,
}

impl Default for PartitionSettings {
    fn default() -> Self {
        Self {
            scheme: PartitionScheme::Dirichlet,
            alpha: 0.5,
            min_samples_per_client: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub num_clients: usize,
    pub participation_fraction: f64,
    pub rounds: usize,
    /// Aggregation rounds before recombination starts (0 = pure recombination).
    pub pretrain_rounds: usize,
    /// Start all K models from one initialization instead of K distinct ones.
    pub identical_init: bool,
    /// Evaluate every n-th round (the last round is always evaluated).
    pub eval_every: usize,
    /// Train the selected clients of a round on the rayon pool.
    pub parallel: bool,
    /// Weight aggregation by client sample counts instead of uniformly.
    pub weighted_aggregation: bool,
    pub local: LocalTrainConfig,
    pub partition: PartitionSettings,
    pub model: ArchSpec,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fedmr,
            num_clients: 100,
            participation_fraction: 0.1,
            rounds: 100,
            pretrain_rounds: 0,
            identical_init: false,
            eval_every: 1,
            parallel: true,
            weighted_aggregation: true,
            local: LocalTrainConfig::default(),
            partition: PartitionSettings::default(),
            model: ArchSpec::default(),
            seeds: Seeds::default(),
        }
    }
}

impl ExperimentConfig {
    /// `max(1, round(participation_fraction * num_clients))`.
    pub fn clients_per_round(&self) -> usize {
        ((self.participation_fraction * self.num_clients as f64).round() as usize).max(1)
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            scheme: self.partition.scheme,
            alpha: self.partition.alpha,
            num_clients: self.num_clients,
            min_samples_per_client: self.partition.min_samples_per_client,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients", "must be at least 1"));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::config(
                "participation_fraction",
                format!("{} is outside (0, 1]", self.participation_fraction),
            ));
        }
        if self.pretrain_rounds > self.rounds {
            return Err(Error::config(
                "pretrain_rounds",
                format!("{} exceeds rounds = {}", self.pretrain_rounds, self.rounds),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.local.prox_mu > 0.0 && self.algorithm != Algorithm::Fedprox {
            return Err(Error::config("local.prox_mu", "only applies to algorithm = \"fedprox\""));
        }
        self.local.validate()?;
        self.partition_spec().validate()?;
        Ok(())
    }

    pub fn stage(&self, round: usize) -> Stage {
        if self.algorithm.aggregates_only() || round <= self.pretrain_rounds {
            Stage::Pretrain
        } else {
            Stage::Recombine
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub stage: Stage,
    /// Selected client ids; client `clients[i]` trained `L_m[i]`.
    pub clients: Vec<usize>,
    /// Per-layer source maps of a recombination round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutations: Option<Vec<Vec<usize>>>,
    /// Whole-model source map of a random-dispatch round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispatch: Option<Vec<usize>>,
    pub local_losses: Vec<f64>,
    pub accuracy: Option<f64>,
    pub loss: Option<f64>,
    /// Models sent down plus models sent up.
    pub transfers: usize,
    pub wall_time_ms: f64,
}

impl RoundRecord {
    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &RoundRecord) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let obits = |v: Option<f64>| v.map(f64::to_bits);
        self.round == other.round
            && self.stage == other.stage
            && self.clients == other.clients
            && self.permutations == other.permutations
            && self.dispatch == other.dispatch
            && bits(&self.local_losses) == bits(&other.local_losses)
            && obits(self.accuracy) == obits(other.accuracy)
            && obits(self.loss) == obits(other.loss)
            && self.transfers == other.transfers
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub final_models: ModelList,
    pub global_model: LayeredModel,
}

/// K distinct client ids drawn uniformly without replacement, sorted
/// ascending. Deterministic per `(seed, round)`.
pub fn sample_clients(num_clients: usize, k: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    if k == 0 || k > num_clients {
        return Err(Error::config(
            "participation_fraction",
            format!("cannot select {k} of {num_clients} clients"),
        ));
    }
    let mut rng = seed::rng(seed, &[round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, num_clients, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Initial model list: K seeded initializations.
pub fn initial_models(cfg: &ExperimentConfig, input_shape: &[usize], num_classes: usize) -> Result<ModelList> {
    let k = cfg.clients_per_round();
    let entries = (0..k)
        .map(|slot| {
            cfg.model
                .build(input_shape, num_classes, cfg.seeds.model_init(slot, cfg.identical_init))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelList::new(entries, 0)
}

pub fn run_experiment(cfg: &ExperimentConfig, shards: &[ClientShard], test: &Dataset) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, shards, test, |_| Ok(()))
}

/// Like [`run_experiment`], calling `on_round` after every round.
pub fn run_experiment_with<F>(
    cfg: &ExperimentConfig,
    shards: &[ClientShard],
    test: &Dataset,
    mut on_round: F,
) -> Result<ExperimentOutcome>
where
    F: FnMut(&RoundRecord) -> Result<()>,
{
    cfg.validate()?;
    if shards.len() != cfg.num_clients {
        return Err(Error::config(
            "num_clients",
            format!("{} shards supplied for {} clients", shards.len(), cfg.num_clients),
        ));
    }
    let input_shape = shards[0].data.sample_shape().to_vec();
    for (i, s) in shards.iter().enumerate() {
        if s.client_id != i {
            return Err(Error::InvalidSpec(format!("shard {i} has client id {}", s.client_id)));
        }
        if s.is_empty() {
            return Err(Error::InvalidSpec(format!("client {i} holds no samples")));
        }
        if s.data.sample_shape() != input_shape.as_slice() {
            return Err(Error::Shape(format!("client {i} has a different sample shape")));
        }
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if test.sample_shape() != input_shape.as_slice() {
        return Err(Error::Shape("test set sample shape differs from training data".into()));
    }
    let num_classes = shards
        .iter()
        .map(|s| s.data.num_classes())
        .chain([test.num_classes()])
        .max()
        .unwrap_or(0);

    let k = cfg.clients_per_round();
    let mut models = initial_models(cfg, &input_shape, num_classes)?;
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let clients = sample_clients(cfg.num_clients, k, cfg.seeds.sampling, round)?;
        let stage = cfg.stage(round);

        let train = |slot: usize| -> Result<LocalUpdate> {
            let model = &models.entries()[slot];
            client_update(model, &shards[clients[slot]], &cfg.local, cfg.seeds.local(round, slot))
        };
        let updates: Vec<LocalUpdate> = if cfg.parallel {
            (0..k).into_par_iter().map(train).collect::<Result<_>>()?
        } else {
            (0..k).map(train).collect::<Result<_>>()?
        };
        let downloads = updates.len();
        let local_losses: Vec<f64> = updates.iter().map(|u| u.loss).collect();
        let uploaded = ModelList::new(updates.into_iter().map(|u| u.model).collect(), round)?;
        let uploads = uploaded.len();

        let (mut permutations, mut dispatch) = (None, None);
        models = match (stage, cfg.algorithm) {
            (Stage::Pretrain, _) => {
                let weights: Option<Vec<f64>> = cfg
                    .weighted_aggregation
                    .then(|| clients.iter().map(|&c| shards[c].len() as f64).collect());
                let global = fedavg_aggregate(uploaded.entries(), weights.as_deref())?;
                ModelList::new(vec![global; k], round)?
            }
            (Stage::Recombine, Algorithm::FedmrNoMr) => {
                let (list, perm) = dispatch_no_recombine(&uploaded, cfg.seeds.recombination(round))?;
                dispatch = Some(perm);
                list
            }
            (Stage::Recombine, _) => {
                let r = model_recombine(&uploaded, cfg.seeds.recombination(round))?;
                permutations = Some(r.permutations);
                r.models
            }
        };

        let (accuracy, loss) = if round % cfg.eval_every == 0 || round == cfg.rounds {
            let e = evaluate(&global_model_gen(models.entries())?, test)?;
            (Some(e.accuracy), Some(e.loss))
        } else {
            (None, None)
        };

        let record = RoundRecord {
            round,
            stage,
            clients,
            permutations,
            dispatch,
            local_losses,
            accuracy,
            loss,
            transfers: downloads + uploads,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_round(&record)?;
        records.push(record);
    }

    let global_model = global_model_gen(models.entries())?;
    Ok(ExperimentOutcome {
        records,
        final_models: models,
        global_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clients_per_round_rounds_and_clamps() {
        let mut cfg = ExperimentConfig { num_clients: 20, ..Default::default() };
        assert_eq!(cfg.clients_per_round(), 2);
        cfg.num_clients = 4;
        assert_eq!(cfg.clients_per_round(), 1);
        cfg.num_clients = 15;
        assert_eq!(cfg.clients_per_round(), 2);
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        for (bad, field) in [
            (ExperimentConfig { participation_fraction: 1.5, ..ok.clone() }, "participation_fraction"),
            (ExperimentConfig { pretrain_rounds: 101, ..ok.clone() }, "pretrain_rounds"),
            (ExperimentConfig { eval_every: 0, ..ok.clone() }, "eval_every"),
        ] {
            match bad.validate() {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error, got {other:?}"),
            }
        }
        let mut prox = ok.clone();
        prox.local.prox_mu = 0.1;
        assert!(prox.validate().is_err());
        prox.algorithm = Algorithm::Fedprox;
        assert!(prox.validate().is_ok());
    }

    #[test]
    fn sampling_edge_cases() {
        assert_eq!(sample_clients(5, 5, 9, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_clients(50, 7, 9, 3).unwrap(), sample_clients(50, 7, 9, 3).unwrap());
        assert!(sample_clients(3, 4, 0, 1).is_err());
        let ids = sample_clients(50, 7, 9, 4).unwrap();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn stage_schedule() {
        let cfg = ExperimentConfig { pretrain_rounds: 3, rounds: 6, ..Default::default() };
        let stages: Vec<Stage> = (1..=6).map(|r| cfg.stage(r)).collect();
        assert_eq!(stages[..3], [Stage::Pretrain; 3]);
        assert_eq!(stages[3..], [Stage::Recombine; 3]);
        let avg = ExperimentConfig { algorithm: Algorithm::Fedavg, ..cfg };
        assert!((1..=6).all(|r| avg.stage(r) == Stage::Pretrain));
    }
}
