//! End-to-end runs: dataset preparation, experiment execution and the run
//! directory layout.
//!
//! A run directory contains `metrics.csv`, `rounds.jsonl`, `model.ckpt`,
//! `partition.json` and `manifest.json`. Outputs are written to
//! `<dir>.partial` and renamed into place only after every file is
//! complete; a failed run leaves nothing behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{DataSource, ResolvedConfig};
use crate::data::{generate_synthetic, load_idx, partition, ClientShard, Dataset, PartitionManifest, SyntheticSpec};
use crate::error::{Error, Result};
use crate::orchestrator::{run_experiment_with, ExperimentOutcome, RoundRecord, Seeds};
use crate::report;

pub struct PreparedData {
    pub shards: Vec<ClientShard>,
    pub test: Dataset,
    pub manifest: PartitionManifest,
}

/// Loads or generates the data and partitions the training split.
pub fn prepare_data(cfg: &ResolvedConfig) -> Result<PreparedData> {
    let seeds = &cfg.experiment.seeds;
    let d = &cfg.data;
    let (train, test) = match d.source {
        DataSource::Synthetic => {
            let spec = SyntheticSpec {
                kind: d.kind,
                num_classes: d.num_classes,
                num_samples: d.train_samples + d.test_samples,
                dim: d.dim,
                noise: d.noise,
                separation: d.separation,
                proportions: None,
                seed: seeds.data,
            };
            generate_synthetic(&spec)?.split_at(d.train_samples)
        }
        DataSource::Idx => {
            let [ti, tl, vi, vl] = d.idx_paths()?;
            let train = load_idx(ti, tl)?;
            let test = load_idx(vi, vl)?;
            let classes = train.num_classes().max(test.num_classes());
            (train.with_num_classes(classes)?, test.with_num_classes(classes)?)
        }
    };
    let spec = cfg.experiment.partition_spec();
    let seed = seeds.partition();
    let shards = partition(&train, &spec, seed)?;
    let manifest = PartitionManifest::new(&spec, seed, &shards);
    Ok(PreparedData { shards, test, manifest })
}

pub fn execute<F>(cfg: &ResolvedConfig, on_round: F) -> Result<(PreparedData, ExperimentOutcome)>
where
    F: FnMut(&RoundRecord) -> Result<()>,
{
    let data = prepare_data(cfg)?;
    let outcome = run_experiment_with(&cfg.experiment, &data.shards, &data.test, on_round)?;
    Ok((data, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub metrics: String,
    pub rounds: String,
    pub model: String,
    pub partition: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            metrics: "metrics.csv".into(),
            rounds: "rounds.jsonl".into(),
            model: "model.ckpt".into(),
            partition: "partition.json".into(),
        }
    }
}

/// Everything needed to re-execute a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Canonical resolved config; replaying parses exactly this text.
    pub config: String,
    pub seeds: Seeds,
    pub content_hash: String,
    pub outputs: OutputPaths,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        ResolvedConfig::from_toml_str(&self.config, &[])
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub outcome: ExperimentOutcome,
}

/// `<algorithm>-<first 12 hex digits of the content hash>`.
pub fn run_dir_name(cfg: &ResolvedConfig) -> Result<String> {
    Ok(format!(
        "{}-{}",
        cfg.experiment.algorithm.name(),
        &cfg.content_hash()?[..12]
    ))
}

/// Runs `cfg` into a content-addressed directory under `out_root`.
/// An existing completed directory is only replaced when `force` is set.
pub fn run_to_dir(cfg: &ResolvedConfig, out_root: &Path, force: bool) -> Result<RunResult> {
    let dir = out_root.join(run_dir_name(cfg)?);
    run_into(cfg, &dir, force)
}

pub fn run_into(cfg: &ResolvedConfig, dir: &Path, force: bool) -> Result<RunResult> {
    if dir.exists() && !force {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} already exists (pass --force to replace it)", dir.display()),
        )));
    }
    let mut partial = dir.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    if partial.exists() {
        fs::remove_dir_all(&partial)?;
    }
    fs::create_dir_all(&partial)?;

    let result = write_outputs(cfg, &partial);
    match result {
        Ok((manifest, outcome)) => {
            if dir.exists() {
                fs::remove_dir_all(dir)?;
            }
            fs::rename(&partial, dir)?;
            Ok(RunResult {
                dir: dir.to_path_buf(),
                manifest,
                outcome,
            })
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&partial);
            Err(e)
        }
    }
}

fn write_outputs(cfg: &ResolvedConfig, dir: &Path) -> Result<(RunManifest, ExperimentOutcome)> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let paths = OutputPaths::default();
    let mut rounds = std::io::BufWriter::new(fs::File::create(dir.join(&paths.rounds))?);
    let (data, outcome) = execute(cfg, |record| {
        rounds.write_all(report::round_jsonl(record)?.as_bytes())?;
        Ok(())
    })?;
    rounds.flush()?;
    drop(rounds);

    fs::write(dir.join(&paths.metrics), report::metrics_csv(&outcome.records))?;
    checkpoint::save(&outcome.global_model, dir.join(&paths.model))?;
    fs::write(
        dir.join(&paths.partition),
        serde_json::to_string_pretty(&data.manifest)?,
    )?;

    let manifest = RunManifest {
        config: cfg.to_toml_string(),
        seeds: cfg.experiment.seeds,
        content_hash: cfg.content_hash()?,
        outputs: paths,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok((manifest, outcome))
}

#[derive(Debug)]
pub struct ComparisonResult {
    pub dir: PathBuf,
    pub runs: Vec<RunResult>,
    pub summaries: Vec<report::MethodSummary>,
}

/// Runs several labelled configs over identical client data and writes
/// `compare.csv` (round x method accuracy) and `summary.csv`.
pub fn run_comparison(
    configs: &[(String, ResolvedConfig)],
    out_root: &Path,
    force: bool,
) -> Result<ComparisonResult> {
    if configs.len() < 2 {
        return Err(Error::config("configs", "compare needs at least two configs"));
    }
    let reference = configs[0].1.data_fingerprint();
    for (name, cfg) in &configs[1..] {
        if cfg.data_fingerprint() != reference {
            return Err(Error::config(
                "seeds.data",
                format!(
                    "`{name}` uses different data, partition or data seed than `{}`; \
                     the comparison would be confounded",
                    configs[0].0
                ),
            ));
        }
    }

    let mut hasher_input = String::new();
    for (name, cfg) in configs {
        hasher_input.push_str(name);
        hasher_input.push_str(&cfg.content_hash()?);
    }
    let digest = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(hasher_input.as_bytes()))
    };
    let dir = out_root.join(format!("compare-{}", &digest[..12]));
    if dir.exists() && !force {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} already exists (pass --force to replace it)", dir.display()),
        )));
    }
    fs::create_dir_all(&dir)?;

    let mut runs = Vec::with_capacity(configs.len());
    for (name, cfg) in configs {
        runs.push(run_into(cfg, &dir.join(name), force)?);
    }
    let curves: Vec<(String, Vec<RoundRecord>)> = configs
        .iter()
        .zip(&runs)
        .map(|((name, _), run)| (name.clone(), run.outcome.records.clone()))
        .collect();
    let summaries: Vec<report::MethodSummary> = curves
        .iter()
        .map(|(name, records)| report::summarize(name, records))
        .collect();
    fs::write(dir.join("compare.csv"), report::compare_csv(&curves))?;
    fs::write(dir.join("summary.csv"), report::summary_csv(&summaries))?;
    Ok(ComparisonResult { dir, runs, summaries })
}
