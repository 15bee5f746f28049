//! Federated round operators: local training on a client, layer-wise model
//! recombination, parameter averaging and whole-model random dispatch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::{sgd_step, LayeredModel, OptimizerState};
use crate::seed;
use crate::structure::{check_compatible, decompose, reassemble};

/// Local SGD settings. Defaults: 5 epochs, batch 50, lr 0.01, momentum 0.9,
/// no proximal term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// FedProx coefficient; 0 disables the proximal term.
    pub prox_mu: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 50,
            learning_rate: 0.01,
            momentum: 0.9,
            prox_mu: 0.0,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("local.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("local.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("local.learning_rate", "must be a non-negative number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("local.momentum", "must lie in [0, 1)"));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::config("local.prox_mu", "must be a non-negative number"));
        }
        Ok(())
    }
}

/// The server-side list of K models between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelList {
    entries: Vec<LayeredModel>,
    pub round: usize,
}

impl ModelList {
    pub fn new(entries: Vec<LayeredModel>, round: usize) -> Result<Self> {
        check_compatible(&entries)?;
        Ok(Self { entries, round })
    }

    pub fn entries(&self) -> &[LayeredModel] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<LayeredModel> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub model: LayeredModel,
    /// Mean mini-batch loss over all local steps.
    pub loss: f64,
}

/// Trains a copy of `model_in` on the shard for `cfg.epochs` passes of
/// shuffled mini-batch SGD with momentum. Velocity starts at zero. With
/// `prox_mu > 0` each gradient gains `prox_mu * (w - model_in)`.
pub fn client_update(
    model_in: &LayeredModel,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<LocalUpdate> {
    cfg.validate()?;
    let data = &shard.data;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.sample_shape() != model_in.input_shape() {
        return Err(Error::Shape(format!(
            "client {} samples are {:?}, model expects {:?}",
            shard.client_id,
            data.sample_shape(),
            model_in.input_shape()
        )));
    }

    let mut model = model_in.clone();
    let anchor: Vec<Vec<f64>> = model_in.param_tensors().map(|t| t.data().to_vec()).collect();
    let mut opt = OptimizerState::new(&model, cfg.learning_rate, cfg.momentum)?;
    let mut rng = seed::rng(seed, &[]);
    let batch = cfg.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut steps) = (0.0, 0usize);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let (x, y) = data.batch(chunk)?;
            let (loss, mut grads) = model.loss_and_grad(&x, &y)?;
            if cfg.prox_mu > 0.0 {
                let params = model.param_tensors();
                for ((g, p), w0) in grads.layers.iter_mut().flatten().zip(params).zip(&anchor) {
                    for ((gi, &pi), &ai) in g.data_mut().iter_mut().zip(p.data()).zip(w0) {
                        *gi += cfg.prox_mu * (pi - ai);
                    }
                }
            }
            sgd_step(&mut model, &grads, &mut opt)?;
            loss_sum += loss;
            steps += 1;
        }
    }
    Ok(LocalUpdate {
        model,
        loss: loss_sum / steps as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recombined {
    pub models: ModelList,
    /// `permutations[k][j]`: input model whose layer `k` went to output model `j`.
    pub permutations: Vec<Vec<usize>>,
}

/// Shuffles every layer index independently across the K models.
///
/// Each list is permuted with its own uniform Fisher-Yates draw, so every
/// input layer block is used by exactly one output model.
pub fn model_recombine(models: &ModelList, rng_seed: u64) -> Result<Recombined> {
    let mut table = decompose(models.entries())?;
    let k = table.num_models();
    let mut rng = seed::rng(rng_seed, &[]);
    for layer in 0..table.num_layers() {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        table.permute_list(layer, &perm)?;
    }
    let permutations = table.source_map();
    Ok(Recombined {
        models: ModelList::new(reassemble(&table)?, models.round)?,
        permutations,
    })
}

/// Random whole-model dispatch with neither mixing nor averaging. Output
/// slot `j` receives input model `perm[j]`.
pub fn dispatch_no_recombine(models: &ModelList, rng_seed: u64) -> Result<(ModelList, Vec<usize>)> {
    let mut perm: Vec<usize> = (0..models.len()).collect();
    perm.shuffle(&mut seed::rng(rng_seed, &[]));
    let entries = perm.iter().map(|&i| models.entries[i].clone()).collect();
    Ok((ModelList::new(entries, models.round)?, perm))
}

/// Parameter-wise weighted mean. Weights are normalized to sum to one;
/// `None` means uniform `1/K`. Terms are accumulated in model order.
pub fn fedavg_aggregate(models: &[LayeredModel], weights: Option<&[f64]>) -> Result<LayeredModel> {
    check_compatible(models)?;
    let k = models.len();
    let coeffs: Vec<f64> = match weights {
        None => vec![1.0 / k as f64; k],
        Some(w) => {
            if w.len() != k {
                return Err(Error::Shape(format!("{} weights for {k} models", w.len())));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidSpec("aggregation weights must be non-negative".into()));
            }
            let sum: f64 = w.iter().sum();
            if sum <= 0.0 {
                return Err(Error::InvalidSpec("aggregation weights sum to zero".into()));
            }
            w.iter().map(|v| v / sum).collect()
        }
    };

    let mut out = models[0].clone();
    let sources: Vec<Vec<&[f64]>> = models
        .iter()
        .map(|m| m.param_tensors().map(|t| t.data()).collect())
        .collect();
    for (p, dst) in out.param_data_mut().into_iter().enumerate() {
        for (e, v) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (src, &c) in sources.iter().zip(&coeffs) {
                acc += c * src[p][e];
            }
            *v = acc;
        }
    }
    Ok(out)
}

/// Uniform average of the final K models, used for inference only.
pub fn global_model_gen(models: &[LayeredModel]) -> Result<LayeredModel> {
    if models.is_empty() {
        return Err(Error::MalformedTable("cannot average an empty model list".into()));
    }
    fedavg_aggregate(models, None)
}
