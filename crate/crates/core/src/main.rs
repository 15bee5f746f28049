use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedmr::config::{parse_override, ResolvedConfig};
use fedmr::runner::{self, RunManifest};
use fedmr::{report, Error};

/// Federated-learning simulator with layer-wise model recombination.
#[derive(Parser)]
#[command(name = "fedmr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its outputs into a run directory.
    Run {
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// Re-execute the config recorded in a previous run's manifest.json.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several configs on the same client data and tabulate accuracy.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the fully resolved config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Override a config key, e.g. `--set rounds=5` or `--set local.epochs=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_sampling: Option<u64>,
    #[arg(long)]
    seed_recombine: Option<u64>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn overrides(&self) -> fedmr::Result<Vec<(String, toml::Value)>> {
        let mut out = overrides(&self.set)?;
        for (key, value) in [
            ("seeds.init", self.seed_init),
            ("seeds.data", self.seed_data),
            ("seeds.sampling", self.seed_sampling),
            ("seeds.recombine", self.seed_recombine),
        ] {
            if let Some(v) = value {
                let v = i64::try_from(v)
                    .map_err(|_| Error::Config { field: key.into(), reason: "exceeds i64::MAX".into() })?;
                out.push((key.to_string(), toml::Value::Integer(v)));
            }
        }
        Ok(out)
    }
}

fn overrides(set: &[String]) -> fedmr::Result<Vec<(String, toml::Value)>> {
    set.iter().map(|s| parse_override(s)).collect()
}

fn method_name(path: &Path, taken: &[(String, ResolvedConfig)]) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let mut name = stem.clone();
    let mut n = 2;
    while taken.iter().any(|(t, _)| *t == name) {
        name = format!("{stem}-{n}");
        n += 1;
    }
    name
}

fn run(command: Command) -> fedmr::Result<()> {
    match command {
        Command::Run { config, manifest, common } => {
            let sets = common.overrides()?;
            let cfg = match (config, manifest) {
                (Some(path), _) => ResolvedConfig::from_file(&path, &sets)?,
                (None, Some(path)) => {
                    let m = RunManifest::load(&path)?;
                    ResolvedConfig::from_toml_str(&m.config, &sets)?
                }
                (None, None) => unreachable!("clap requires one of --config / --manifest"),
            };
            let result = runner::run_to_dir(&cfg, &common.out, common.force)?;
            let summary = report::summarize(cfg.experiment.algorithm.name(), &result.outcome.records);
            print!("{}", report::summary_table(&[summary]));
            println!("outputs: {}", result.dir.display());
        }
        Command::Compare { configs, common } => {
            let sets = common.overrides()?;
            let mut resolved: Vec<(String, ResolvedConfig)> = Vec::new();
            for path in &configs {
                let cfg = ResolvedConfig::from_file(path, &sets)?;
                let name = method_name(path, &resolved);
                resolved.push((name, cfg));
            }
            let result = runner::run_comparison(&resolved, &common.out, common.force)?;
            print!("{}", report::summary_table(&result.summaries));
            println!("outputs: {}", result.dir.display());
        }
        Command::Validate { config, set } => {
            let cfg = ResolvedConfig::from_file(&config, &overrides(&set)?)?;
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::ConfigParse(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
