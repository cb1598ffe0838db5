//! `pairlearn` command line: gen-data, train, eval and landscape.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{DataConfig, ExperimentConfig, Paradigm};
use crate::data::{generate_blobs, load_csv_dataset, save_labeled_csv, LabeledDataset, LoadedDataset};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_model;
use crate::landscape::{evaluate_mutual_surface, evaluate_surface, random_directions, DatasetLoss, ProjectionMethod};
use crate::model::Mlp;
use crate::report::{write_metrics_csv, write_surface_csv, MetricsReport};
use crate::similarity::{LabelOracle, NoiseSpec};
use crate::train::{train_semi_supervised, train_supervised, train_transfer, Monitor, Objective, SemiOptions};

/// Environment variable capping the worker threads used for landscape grids.
pub const THREADS_ENV: &str = "PAIRLEARN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pairlearn", version, about = "Train classifiers from pairwise similarity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a blob dataset CSV.
    GenData(RunArgs),
    /// Train a model and write its checkpoint and per-epoch metrics.
    Train(RunArgs),
    /// Score a checkpoint on a labeled dataset CSV.
    Eval(EvalArgs),
    /// Write a loss surface around one or three checkpoints.
    Landscape(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving every output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Expected number of output nodes.
    #[arg(long)]
    pub k: Option<usize>,
    /// Also print the dataset loss under this objective.
    #[arg(long, value_parser = ["ce", "mcl", "kcl"])]
    pub loss: Option<String>,
    #[arg(long, default_value_t = crate::losses::DEFAULT_KCL_MARGIN)]
    pub sigma: f64,
}

/// Parses the process arguments, runs the command and maps failures to a nonzero exit code.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let stdout = std::io::stdout();
    let result = configure_threads().and_then(|_| execute(&cli.command, &mut stdout.lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

pub fn execute(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData(args) => gen_data(args, out),
        Command::Train(args) => train(args, out),
        Command::Eval(args) => eval(args, out),
        Command::Landscape(args) => landscape(args, out),
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.override_seed(seed);
    }
    Ok(config)
}

fn output_path(dir: &Path, file: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.join(file))
}

fn say(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn labeled_data(data: &DataConfig) -> Result<LabeledDataset> {
    if let Some(blobs) = &data.blobs {
        return generate_blobs(blobs);
    }
    let path = data.path.as_ref().expect("checked by ExperimentConfig::data");
    if !data.has_labels {
        return Err(Error::config("this command needs a dataset with a label column"));
    }
    match load_csv_dataset(path, true)? {
        LoadedDataset::Labeled(d) => Ok(d),
        LoadedDataset::Unlabeled(_) => unreachable!("label column requested"),
    }
}

fn gen_data(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args)?;
    let blobs = config
        .data
        .as_ref()
        .and_then(|d| d.blobs.as_ref())
        .ok_or_else(|| Error::config("gen-data needs data.blobs"))?;
    let dataset = generate_blobs(blobs)?;
    let path = output_path(&args.out, &config.output.dataset)?;
    save_labeled_csv(&dataset, &path)?;
    say(
        out,
        format!(
            "wrote {}: N={} d={} C={}",
            path.display(),
            dataset.len(),
            dataset.features().dim(),
            dataset.num_classes()
        ),
    )
}

fn train(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args)?;
    config.validate_training()?;
    let data = labeled_data(config.data()?)?;
    let model = Mlp::build(config.model()?.clone())?;
    if let Some(k) = config.eval.k {
        check_k(k, &model)?;
    }
    let (outcome, scored) = match config.paradigm {
        Paradigm::Supervised => (train_supervised(model, &data, &config.train)?, data),
        Paradigm::Transfer => {
            let noise = config
                .similarity
                .noise
                .clone()
                .unwrap_or_else(|| NoiseSpec::noiseless(config.train.seed));
            let mut oracle = LabelOracle::new(data.labels().to_vec(), noise)?;
            let unlabeled = data.clone().into_unlabeled();
            let outcome = train_transfer(model, &unlabeled, &mut oracle, &config.train, Some(&Monitor::of(&data)))?;
            (outcome, data)
        }
        Paradigm::Semi => {
            let fraction = config.similarity.labeled_fraction.expect("validated");
            let (labeled, rest) = data.stratified_split(fraction, config.train.seed)?;
            let options = SemiOptions {
                augmentation_scale: config.similarity.augmentation_scale,
                warm_start_epochs: config.similarity.warm_start_epochs,
            };
            let unlabeled = rest.clone().into_unlabeled();
            let outcome = train_semi_supervised(
                model,
                &labeled,
                &unlabeled,
                &config.train,
                &options,
                Some(&Monitor::of(&rest)),
            )?;
            (outcome, rest)
        }
    };
    let checkpoint = output_path(&args.out, &config.output.checkpoint)?;
    outcome.model.save_checkpoint(&checkpoint)?;
    let metrics = output_path(&args.out, &config.output.metrics)?;
    write_metrics_csv(&MetricsReport::new(outcome.history), &metrics)?;
    say(out, format!("wrote {} and {}", checkpoint.display(), metrics.display()))?;
    let e = evaluate_model(
        &outcome.model,
        scored.features().as_slice(),
        scored.labels(),
        scored.num_classes(),
    )?;
    let ndc = if config.eval.report_ndc {
        format!(" ndc={}", e.ndc)
    } else {
        String::new()
    };
    say(out, format!("accuracy={} nmi={}{ndc}", e.accuracy, e.nmi))
}

fn check_k(k: usize, model: &Mlp) -> Result<()> {
    if k != model.num_outputs() {
        return Err(Error::contract(format!(
            "K = {k} but the checkpoint has {} output nodes",
            model.num_outputs()
        )));
    }
    Ok(())
}

fn parse_objective(name: &str) -> Objective {
    match name {
        "ce" => Objective::Ce,
        "kcl" => Objective::Kcl,
        _ => Objective::Mcl,
    }
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = Mlp::load_checkpoint(&args.checkpoint)?;
    if let Some(k) = args.k {
        check_k(k, &model)?;
    }
    let data = match load_csv_dataset(&args.data, true)? {
        LoadedDataset::Labeled(d) => d,
        LoadedDataset::Unlabeled(_) => unreachable!("label column requested"),
    };
    let e = evaluate_model(&model, data.features().as_slice(), data.labels(), data.num_classes())?;
    say(out, format!("accuracy={} nmi={} ndc={}", e.accuracy, e.nmi, e.ndc))?;
    let sizes: Vec<String> = e.cluster_sizes.iter().map(u64::to_string).collect();
    say(out, format!("cluster_sizes={}", sizes.join(",")))?;
    if let Some(name) = &args.loss {
        let loss = DatasetLoss::new(&data, parse_objective(name), args.sigma)?;
        say(out, format!("loss={}", loss.evaluate(&model)?))?;
    }
    Ok(())
}

fn landscape(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args)?;
    let lc = &config.landscape;
    let data = labeled_data(config.data()?)?;
    let loss = DatasetLoss::new(&data, lc.loss, lc.sigma)?;
    let models: Vec<Mlp> = lc.checkpoints.iter().map(Mlp::load_checkpoint).collect::<Result<_>>()?;
    let surface = match (lc.method, models.as_slice()) {
        (ProjectionMethod::Random, [m]) => {
            let (delta, eta) = random_directions(m.params(), lc.seed)?;
            evaluate_surface(m, m.params(), &delta, &eta, &lc.grid, &loss, Some(lc.seed))?
        }
        (ProjectionMethod::Mutual, [o, a, b]) => {
            if o.spec().layer_sizes != a.spec().layer_sizes || o.spec().layer_sizes != b.spec().layer_sizes {
                return Err(Error::contract("mutual projection needs checkpoints of identical architecture"));
            }
            evaluate_mutual_surface(o, o.params(), a.params(), b.params(), &lc.grid, &loss)?
        }
        (method, found) => {
            return Err(Error::config(format!(
                "{method:?} projection needs {} checkpoint(s), got {}",
                if method == ProjectionMethod::Random { 1 } else { 3 },
                found.len()
            )))
        }
    };
    let surface = if lc.log_scale { surface.log_transformed() } else { surface };
    let path = output_path(&args.out, &config.output.surface)?;
    write_surface_csv(&surface, &path)?;
    say(
        out,
        format!(
            "wrote {}: {}x{} cells",
            path.display(),
            surface.alphas.len(),
            surface.betas.len()
        ),
    )
}
