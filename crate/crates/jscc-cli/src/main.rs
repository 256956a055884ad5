//! `jscc` — train and evaluate the SNR-adaptive JSCC models.
//!
//! Subcommands: `train`, `sweep`, `compare`, `multiuser`, `fetch-data`.
//! Every subcommand is driven by a `key = value` config file plus `--set`
//! overrides; the effective configuration is persisted next to the outputs
//! so any run can be reproduced exactly.
//!
//! Exit codes: 0 success, 2 config error, 3 training divergence, 4 missing
//! checkpoint.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jscc::config::{RunConfig, REGISTRY};
use jscc::data::{cifar, synthetic, Dataset};
use jscc::error::Error;
use jscc::eval::{compare_models, multiuser_eval, sweep_snr, Estimator, EvalReport, Provenance};
use jscc::model::{checkpoint, Model};
use jscc::train::Trainer;

fn config_keys_help() -> String {
    let mut s = String::from("Config keys (key = default  — description):\n");
    for (key, default, help) in REGISTRY {
        s.push_str(&format!("  {key} = {default}\n      {help}\n"));
    }
    s
}

#[derive(Parser)]
#[command(name = "jscc", version, about = "SNR-adaptive deep JSCC for wireless image transmission")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a `key = value` config file (defaults apply if omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.c=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for spec in &self.overrides {
            cfg.apply_override(spec)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model per the config's schedule; prints the best test PSNR.
    #[command(after_long_help = config_keys_help())]
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Resume from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// PSNR-vs-SNR sweep over the testing SNR list for one checkpoint.
    #[command(after_long_help = config_keys_help())]
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Label for the report rows (defaults to the checkpoint stem).
        #[arg(long)]
        model_id: Option<String>,
        /// Variance (dB^2) of the SNR-estimation noise at the decoder.
        #[arg(long)]
        est_noise_var: Option<f64>,
        /// Comma-separated testing SNRs in dB (overrides eval.test_snr_list).
        #[arg(long)]
        snrs: Option<String>,
        /// Report path (default <out_dir>/sweep.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a single-curve SVG plot next to the report.
        #[arg(long)]
        plot: bool,
    },
    /// Merge sweep reports into a comparison table and plot.
    Compare {
        /// Report files produced by `sweep` or `multiuser`.
        reports: Vec<PathBuf>,
        /// Output table path (default comparison.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output SVG path (default alongside the table).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Broadcast one encoded stream to several users at different SNRs.
    #[command(after_long_help = config_keys_help())]
    Multiuser {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        model_id: Option<String>,
        /// Comma-separated per-user SNRs in dB, e.g. `0,10,20`.
        #[arg(long)]
        snrs: String,
        /// oracle | noisy-oracle | pilot
        #[arg(long, default_value = "oracle")]
        pilot_mode: String,
        /// Report path (default <out_dir>/multiuser.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Download (or ingest) and verify the CIFAR-10 binary archive.
    FetchData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Ingest a local copy of cifar-10-binary.tar.gz instead of
        /// downloading.
        #[arg(long)]
        from_file: Option<PathBuf>,
    },
}

fn parse_snr_list(raw: &str) -> Result<Vec<f64>, Error> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("'{s}' is not a number in SNR list")))
        })
        .collect()
}

fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset), Error> {
    let (mut train, mut test) = match cfg.get("data.source")? {
        "cifar10" => cifar::load_cifar10(Path::new(cfg.get("data.cache_dir")?))?,
        "synthetic" => synthetic::generate_splits(
            cfg.usize_value("data.synthetic_train")?,
            cfg.usize_value("data.synthetic_test")?,
            cfg.seed()?,
        )?,
        other => return Err(Error::Config(format!("data.source must be cifar10|synthetic, got '{other}'"))),
    };
    let train_subset = cfg.usize_value("data.train_subset")?;
    if train_subset > 0 {
        train = train.subset(train_subset);
    }
    let test_subset = cfg.usize_value("data.test_subset")?;
    if test_subset > 0 {
        test = test.subset(test_subset);
    }
    Ok((train, test))
}

fn load_checkpoint(path: &Path) -> Result<(Model, Provenance), Error> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("checkpoint {} does not exist", path.display())));
    }
    let ckpt = checkpoint::load(path, &jscc::Device::Cpu)?;
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    let prov = Provenance {
        model_id,
        checkpoint_hash: checkpoint::file_sha256(path)?,
        config_hash: checkpoint::config_sha256(ckpt.model.config())?,
    };
    Ok((ckpt.model, prov))
}

fn cmd_train(config: ConfigArgs, resume: Option<PathBuf>) -> Result<(), Error> {
    let cfg = config.load()?;
    let out_dir = cfg.out_dir()?;
    cfg.persist(&out_dir, "effective_config.cfg")?;
    let schedule = cfg.train_schedule()?;
    let (train_set, test_set) = load_datasets(&cfg)?;
    log::info!(
        "training on {} images, evaluating on {} (source: {})",
        train_set.len(),
        test_set.len(),
        cfg.get("data.source")?
    );
    let mut trainer = match resume {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Checkpoint(format!("checkpoint {} does not exist", path.display())));
            }
            Trainer::resume(checkpoint::load(&path, &jscc::Device::Cpu)?, schedule)?
        }
        None => {
            let model_cfg = cfg.model_config()?;
            let model = Model::new(&model_cfg, jscc::DType::F32, &jscc::Device::Cpu, cfg.seed()?)?;
            Trainer::new(model, schedule)?
        }
    };
    let outcome = trainer.train(&train_set, &test_set, &out_dir)?;
    println!(
        "best test PSNR: {:.3} dB after {} epochs{} -> {}",
        outcome.best_metric,
        outcome.epochs_run,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_checkpoint.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: ConfigArgs,
    checkpoint_path: PathBuf,
    model_id: Option<String>,
    est_noise_var: Option<f64>,
    snrs: Option<String>,
    out: Option<PathBuf>,
    plot: bool,
) -> Result<(), Error> {
    let cfg = config.load()?;
    let out_dir = cfg.out_dir()?;
    let (model, mut prov) = load_checkpoint(&checkpoint_path)?;
    if let Some(id) = model_id {
        prov.model_id = id;
    }
    let (_, test_set) = load_datasets(&cfg)?;
    let snr_list = match snrs {
        Some(raw) => parse_snr_list(&raw)?,
        None => cfg.f64_list("eval.test_snr_list")?,
    };
    let est_var = est_noise_var.unwrap_or(cfg.f64_value("eval.est_noise_var")?);
    let opts = cfg.eval_options()?;
    let report = sweep_snr(&model, &test_set, &snr_list, est_var, &opts, &prov)?;
    let path = out.unwrap_or_else(|| out_dir.join("sweep.tsv"));
    report.write(&path)?;
    cfg.persist(path.parent().unwrap_or(Path::new(".")), "effective_config.cfg")?;
    println!("{}", report.to_tsv().trim_end());
    println!("report -> {}", path.display());
    if plot {
        let table = compare_models(&[report])?;
        let svg_path = path.with_extension("svg");
        std::fs::write(&svg_path, table.to_svg())?;
        println!("plot -> {}", svg_path.display());
    }
    Ok(())
}

fn cmd_compare(reports: Vec<PathBuf>, out: Option<PathBuf>, plot: Option<PathBuf>) -> Result<(), Error> {
    if reports.is_empty() {
        return Err(Error::Config("compare: give at least one report file".into()));
    }
    let loaded: Vec<EvalReport> = reports.iter().map(|p| EvalReport::read(p)).collect::<Result<_, _>>()?;
    let table = compare_models(&loaded)?;
    let out = out.unwrap_or_else(|| PathBuf::from("comparison.tsv"));
    std::fs::write(&out, table.to_tsv())?;
    let svg_path = plot.unwrap_or_else(|| out.with_extension("svg"));
    std::fs::write(&svg_path, table.to_svg())?;
    println!("{}", table.to_tsv().trim_end());
    println!("table -> {} ; plot -> {}", out.display(), svg_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_multiuser(
    config: ConfigArgs,
    checkpoint_path: PathBuf,
    model_id: Option<String>,
    snrs: String,
    pilot_mode: String,
    out: Option<PathBuf>,
) -> Result<(), Error> {
    let cfg = config.load()?;
    let out_dir = cfg.out_dir()?;
    let (model, mut prov) = load_checkpoint(&checkpoint_path)?;
    if let Some(id) = model_id {
        prov.model_id = id;
    }
    let (_, test_set) = load_datasets(&cfg)?;
    let user_snrs = parse_snr_list(&snrs)?;
    let estimator = match pilot_mode.as_str() {
        "oracle" => Estimator::NoisyOracle { var_db2: 0.0 },
        "noisy-oracle" => Estimator::NoisyOracle {
            var_db2: cfg.f64_value("eval.est_noise_var")?,
        },
        "pilot" => Estimator::Pilot {
            len: cfg.usize_value("eval.pilot_len")?,
        },
        other => {
            return Err(Error::Config(format!(
                "pilot_mode must be oracle|noisy-oracle|pilot, got '{other}'"
            )))
        }
    };
    let opts = cfg.eval_options()?;
    let report = multiuser_eval(&model, &test_set, &user_snrs, estimator, &opts, &prov)?;
    let path = out.unwrap_or_else(|| out_dir.join("multiuser.tsv"));
    report.write(&path)?;
    println!("{}", report.to_tsv().trim_end());
    println!("report -> {}", path.display());
    Ok(())
}

fn cmd_fetch_data(config: ConfigArgs, from_file: Option<PathBuf>) -> Result<(), Error> {
    let cfg = config.load()?;
    let cache_dir = PathBuf::from(cfg.get("data.cache_dir")?);
    std::fs::create_dir_all(&cache_dir)?;
    let archive_path = cache_dir.join("cifar-10-binary.tar.gz");
    match from_file {
        Some(src) => {
            if src != archive_path {
                std::fs::copy(&src, &archive_path)?;
            }
        }
        None => {
            println!("downloading {} ...", cifar::CIFAR10_URL);
            let mut response = ureq::get(cifar::CIFAR10_URL)
                .call()
                .map_err(|e| Error::Fetch(format!("download failed: {e}")))?;
            let mut bytes = Vec::new();
            std::io::copy(&mut response.body_mut().as_reader(), &mut bytes)
                .map_err(|e| Error::Fetch(format!("download interrupted: {e}")))?;
            std::fs::write(&archive_path, &bytes)?;
        }
    }
    cifar::ingest_archive(&archive_path, &cache_dir, None)?;
    let (train, test) = cifar::load_cifar10(&cache_dir)?;
    println!(
        "verified CIFAR-10: {} train / {} test images under {}",
        train.len(),
        test.len(),
        cache_dir.display()
    );
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Divergence(_) => 3,
        Error::Checkpoint(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, resume } => cmd_train(config, resume),
        Command::Sweep {
            config,
            checkpoint,
            model_id,
            est_noise_var,
            snrs,
            out,
            plot,
        } => cmd_sweep(config, checkpoint, model_id, est_noise_var, snrs, out, plot),
        Command::Compare { reports, out, plot } => cmd_compare(reports, out, plot),
        Command::Multiuser {
            config,
            checkpoint,
            model_id,
            snrs,
            pilot_mode,
            out,
        } => cmd_multiuser(config, checkpoint, model_id, snrs, pilot_mode, out),
        Command::FetchData { config, from_file } => cmd_fetch_data(config, from_file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
