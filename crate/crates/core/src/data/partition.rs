//! Splitting a training set across clients.
//!
//! `Dirichlet` partitioning draws, for every class, a proportion vector over
//! clients from `Dir(alpha * 1_N)` and deals that class's samples accordingly.
//! Small `alpha` concentrates each class on few clients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Full redraws attempted before falling back to the donation repair.
const MAX_REDRAWS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub alpha: f64,
    pub num_clients: usize,
    pub min_samples_per_client: usize,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients", "must be at least 1"));
        }
        if self.min_samples_per_client == 0 {
            return Err(Error::config("partition.min_samples_per_client", "must be at least 1"));
        }
        if self.scheme == PartitionScheme::Dirichlet && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("partition.alpha", "must be a positive finite number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    /// Ascending indices into the partitioned dataset.
    pub indices: Vec<usize>,
    pub data: Dataset,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// JSON-exportable record of which samples each client received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub scheme: PartitionScheme,
    pub alpha: Option<f64>,
    pub seed: u64,
    /// How Dirichlet proportions are drawn.
    pub convention: String,
    pub clients: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl PartitionManifest {
    pub fn new(spec: &PartitionSpec, seed: u64, shards: &[ClientShard]) -> Self {
        Self {
            scheme: spec.scheme,
            alpha: (spec.scheme == PartitionScheme::Dirichlet).then_some(spec.alpha),
            seed,
            convention: "per-class proportions over clients".into(),
            clients: shards
                .iter()
                .map(|s| ManifestEntry {
                    client_id: s.client_id,
                    indices: s.indices.clone(),
                })
                .collect(),
        }
    }
}

pub fn partition(dataset: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientShard>> {
    Ok(partition_indices(dataset, spec, seed)?
        .into_iter()
        .enumerate()
        .map(|(client_id, indices)| ClientShard {
            client_id,
            data: dataset.subset(&indices),
            indices,
        })
        .collect())
}

/// Per-client sample indices, each list sorted ascending.
pub fn partition_indices(dataset: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let needed = spec.num_clients * spec.min_samples_per_client;
    if dataset.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            available: dataset.len(),
        });
    }
    let mut lists = match spec.scheme {
        PartitionScheme::Iid => iid(dataset.len(), spec.num_clients, seed),
        PartitionScheme::Dirichlet => dirichlet(dataset, spec, seed)?,
    };
    for list in &mut lists {
        list.sort_unstable();
    }
    Ok(lists)
}

fn iid(len: usize, clients: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed::rng(seed, &[0]));
    let (base, extra) = (len / clients, len % clients);
    let mut out = Vec::with_capacity(clients);
    let mut rest = order.as_slice();
    for c in 0..clients {
        let (head, tail) = rest.split_at(base + usize::from(c < extra));
        out.push(head.to_vec());
        rest = tail;
    }
    out
}

/// A point on the `n`-simplex from `Dir(alpha, ..., alpha)` via normalized
/// Gamma draws.
fn dirichlet_sample<R: Rng>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidSpec(format!("gamma: {e}")))?;
    loop {
        let draws: Vec<f64> = (0..n).map(|_| rng.sample(gamma)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|d| d / sum).collect());
        }
    }
}

fn dirichlet(dataset: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = spec.num_clients;
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for (i, &label) in dataset.labels().iter().enumerate() {
        by_class[label].push(i);
    }

    let mut lists = Vec::new();
    for attempt in 0..MAX_REDRAWS {
        let mut rng = seed::rng(seed, &[1, attempt]);
        lists = vec![Vec::new(); n];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let props = dirichlet_sample(spec.alpha, n, &mut rng)?;
            let total = members.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (client, p) in props.iter().enumerate() {
                cum += p;
                let end = if client + 1 == n {
                    total
                } else {
                    ((cum * total as f64) as usize).clamp(start, total)
                };
                lists[client].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if lists.iter().all(|l| l.len() >= spec.min_samples_per_client) {
            return Ok(lists);
        }
    }

    // Deficient clients take turns pulling one sample from the current
    // largest client until every client meets the minimum.
    loop {
        let mut changed = false;
        for client in 0..n {
            if lists[client].len() >= spec.min_samples_per_client {
                continue;
            }
            let donor = (0..n)
                .max_by(|&a, &b| lists[a].len().cmp(&lists[b].len()).then(b.cmp(&a)))
                .expect("at least one client");
            let sample = lists[donor].pop().expect("donor holds surplus samples");
            lists[client].push(sample);
            changed = true;
        }
        if !changed {
            return Ok(lists);
        }
    }
}
