//! `smoothlime`: train a model, explain a point, or run an experiment suite.
//! Payloads go to stdout, diagnostics to stderr; any failure exits with 1.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use smoothlime::experiments::{git_describe, run_experiment, write_report, ExperimentKind, Manifest};
use smoothlime::explainers::explain;
use smoothlime::model::{load_model, save_model, train};
use smoothlime::{AnyModel, Method, Model, PerturbationConfig};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "smoothlime", version, about = "SmoothGrad and C-LIME attributions for black-box models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an MLP on the configured dataset; writes model.json and metrics.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training seed (overrides `train.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Explain one point and print the attribution as JSON.
    Explain {
        /// Saved model (overrides `model` in the config).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated point in the model's input space.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "row")]
        x: Option<String>,
        /// Row of the configured dataset, after splitting and normalization.
        #[arg(long)]
        row: Option<usize>,
        /// smoothgrad, clime, clime_ridge or oracle.
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Ridge penalty, required by clime_ridge.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment and write its curves plus a manifest.
    Experiment {
        /// equivalence, robustness, sigma-sweep, accuracy-sweep or convergence.
        kind: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides `experiment.base_seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Single perturbation count replacing `experiment.n_grid`.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn parse_point(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .with_context(|| format!("--x: {v:?} is not a finite number"))
        })
        .collect()
}

fn output_dir(out: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    out.or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set \"output_dir\" in the config")
}

fn write_new(path: &Path, text: &str, created: &mut Vec<PathBuf>) -> Result<()> {
    created.push(path.to_path_buf());
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = output_dir(out, &cfg)?;
    let mut train_cfg = cfg.train.clone();
    if let Some(seed) = seed {
        train_cfg.seed = seed;
    }
    let data = cfg.dataset()?;
    let (model, metrics) = train(&data, &train_cfg)?;
    eprintln!(
        "trained {} epochs: train accuracy {:.4}, test accuracy {:.4}",
        metrics.epochs, metrics.train_acc, metrics.test_acc
    );

    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let metrics_json = serde_json::to_string_pretty(&metrics)? + "\n";
    let mut created = Vec::new();
    let written = (|| {
        let model_path = dir.join("model.json");
        created.push(model_path.clone());
        save_model(&AnyModel::from(model), &model_path)?;
        write_new(&dir.join("metrics.json"), &metrics_json, &mut created)
    })();
    if let Err(e) = written {
        created.iter().for_each(|p| drop(fs::remove_file(p)));
        return Err(e);
    }
    print!("{metrics_json}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_explain(
    model: Option<PathBuf>,
    config: Option<PathBuf>,
    x: Option<String>,
    row: Option<usize>,
    method: Method,
    sigma2: f64,
    n: usize,
    lambda: Option<f64>,
    seed: u64,
) -> Result<()> {
    let cfg = config.as_deref().map(RunConfig::load).transpose()?;
    let model_path = model
        .or_else(|| cfg.as_ref().and_then(|c| c.model.clone()))
        .context("no model: pass --model or set \"model\" in the config")?;
    let model = load_model(&model_path).with_context(|| format!("loading model {}", model_path.display()))?;

    let point = match (x, row) {
        (Some(text), _) => parse_point(&text)?,
        (None, Some(row)) => {
            let cfg = cfg.as_ref().context("--row needs --config with a dataset")?;
            let data = cfg.dataset()?;
            anyhow::ensure!(row < data.len(), "--row {row} out of range for {} rows", data.len());
            data.features().row(row).to_vec()
        }
        (None, None) => bail!("pass the point with --x or --row"),
    };

    let lambda = match (method, lambda) {
        (Method::ClimeRidge, Some(l)) => l,
        (Method::ClimeRidge, None) => bail!("clime_ridge needs --lambda"),
        (_, Some(_)) => bail!("--lambda only applies to clime_ridge"),
        (_, None) => 0.0,
    };
    anyhow::ensure!(
        point.len() == model.input_dim(),
        "point has {} features but the model expects {}",
        point.len(),
        model.input_dim()
    );
    let pc = PerturbationConfig::new(point, sigma2, n, seed)?;
    let mut attribution = explain(&model, method, &pc, lambda)?;
    if method == Method::ClimeRidge {
        attribution.lambda = Some(lambda);
    }
    println!("{}", serde_json::to_string(&attribution)?);
    Ok(())
}

fn cmd_experiment(kind: &str, config: &Path, out: Option<PathBuf>, seed: Option<u64>, n: Option<usize>) -> Result<()> {
    let kind: ExperimentKind = kind.parse().map_err(anyhow::Error::msg)?;
    let cfg = RunConfig::load(config)?;
    let dir = output_dir(out, &cfg)?;
    let mut exp = cfg.experiment.clone();
    if let Some(seed) = seed {
        exp.base_seed = seed;
    }
    if let Some(n) = n {
        exp.n_grid = vec![n];
    }
    exp.validate()?;

    let mut timings = BTreeMap::new();
    let start = Instant::now();
    let data = cfg.dataset()?;
    let model: Option<AnyModel> = match (&cfg.model, kind.needs_model()) {
        (_, false) => None,
        (Some(path), true) => {
            Some(load_model(path).with_context(|| format!("loading model {}", path.display()))?)
        }
        (None, true) => {
            let (model, metrics) = train(&data, &cfg.train)?;
            eprintln!("trained model: test accuracy {:.4}", metrics.test_acc);
            Some(model.into())
        }
    };
    timings.insert("setup".to_string(), start.elapsed().as_millis() as u64);

    let start = Instant::now();
    let outcome = run_experiment(kind, model.as_ref(), &data, &exp, &cfg.train)?;
    timings.insert("run".to_string(), start.elapsed().as_millis() as u64);

    let manifest = Manifest {
        kind: kind.to_string(),
        config: serde_json::to_value(&exp)?,
        base_seed: exp.base_seed,
        git_describe: git_describe(),
        timings_ms: timings,
        summary: outcome.summary,
        files: vec![],
    };
    let path = write_report(&outcome.curves, &manifest, &dir)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, seed } => cmd_train(&config, out, seed),
        Command::Explain {
            model,
            config,
            x,
            row,
            method,
            sigma2,
            n,
            lambda,
            seed,
        } => cmd_explain(model, config, x, row, method, sigma2, n, lambda, seed),
        Command::Experiment {
            kind,
            config,
            out,
            seed,
            n,
        } => cmd_experiment(&kind, &config, out, seed, n),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
