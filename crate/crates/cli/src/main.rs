use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iscit::data::{write_corpus, DataConfig};
use iscit::separator::SeparatorConfig;
use iscit::train::diagnostics::{model_check, primitive_checks, CheckOutcome};
use iscit::train::{evaluate_checkpoint, load_checkpoint, separate_file, ExperimentConfig, Trainer, SEED_ENV};
use iscit::{Error, Result};

#[derive(Parser)]
#[command(name = "iscit", version, about = "Train, evaluate and run a two-path speech separation model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory (defaults to `train.out_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the mixtures listed in a manifest.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Separate one mono wav file into `spk1.wav ... spkC.wav`.
    Separate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    GradCheck {
        /// Experiment config for the whole-model check (tiny model by default).
        #[arg(long)]
        tiny_config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Write a synthetic evaluation corpus (wav files plus manifests).
    MakeData {
        /// A data config, or an experiment config whose `data` section is used.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn seed_override() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    cfg.apply_seed_override(seed_override().as_deref())?;
    Ok(cfg)
}

fn train(config: &Path, resume: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = load_experiment(config)?;
    let mut trainer = match resume {
        Some(ckpt) => {
            let mut ck = load_checkpoint(ckpt)?;
            if ck.config.model != cfg.model {
                return Err(Error::Config(format!("{} was trained with a different model config", ckpt.display())));
            }
            ck.config = cfg;
            Trainer::from_checkpoint(ck)?
        }
        None => Trainer::new(cfg)?,
    };
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| trainer.cfg.train.out_dir.clone());
    log::info!("training into {} from step {}", out_dir.display(), trainer.state.step);
    let summary = trainer.run(&out_dir, |m| {
        println!(
            "epoch {:>3}  step {:>5}  lr {:.2e}  train {:>8.3}  val {:>8.3}  val SI-SNRi {:>6.2} dB",
            m.epoch, m.step, m.lr, m.train_loss, m.val_loss, m.val_si_snri
        );
    })?;
    println!("metrics: {}", summary.metrics.display());
    println!("best checkpoint: {}", summary.best_checkpoint.display());
    println!("last checkpoint: {}", summary.last_checkpoint.display());
    Ok(())
}

fn evaluate(ckpt: &Path, manifest: &Path, json: Option<&Path>) -> Result<()> {
    let report = evaluate_checkpoint(ckpt, manifest)?;
    print!("{}", report.table());
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::Io { path: path.into(), source: e })?;
    }
    if report.missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} referenced file(s) were missing", report.missing.len())))
    }
}

fn grad_check(tiny_config: Option<&Path>, seeds: u64) -> Result<()> {
    let cfg = match tiny_config {
        Some(p) => load_experiment(p)?,
        None => {
            let mut cfg = ExperimentConfig { model: SeparatorConfig::tiny(), ..Default::default() };
            cfg.data.mix.num_speakers = cfg.model.num_speakers;
            cfg
        }
    };
    let mut failed = 0;
    let mut show = |o: &CheckOutcome, seed: u64| {
        let ok = o.passed();
        failed += usize::from(!ok);
        println!(
            "{:<4} {:<22} seed {seed}  max rel err {:.3e} (tol {:.0e}, {} coords, worst #{})",
            if ok { "ok" } else { "FAIL" },
            o.report.op_name,
            o.report.max_rel_error,
            o.tolerance,
            o.report.checked,
            o.report.worst_index
        );
    };
    for seed in 0..seeds {
        for o in primitive_checks(seed)? {
            show(&o, seed);
        }
    }
    for seed in 0..seeds {
        show(&model_check(&cfg, seed, 400, 2)?, seed);
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Error::NonFinite { op: format!("gradient check ({failed} failing)") })
    }
}

fn make_data(config: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::Io { path: config.into(), source: e })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
    let is_experiment = ["data", "model", "train", "embedder"].iter().any(|k| value.get(k).is_some());
    let mut data: DataConfig = if is_experiment {
        ExperimentConfig::from_json(&text)?.data
    } else {
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?
    };
    if let Some(v) = seed_override() {
        data.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
    }
    let summary = write_corpus(&data, out)?;
    println!("wrote {} validation and {} test mixtures to {}", summary.val, summary.test, out.display());
    println!(
        "embedder cosine: same family {:.3}, cross family {:.3}",
        summary.family_similarity.same_family, summary.family_similarity.cross_family
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume, out } => train(&config, resume.as_deref(), out.as_deref()),
        Command::Evaluate { ckpt, manifest, json } => evaluate(&ckpt, &manifest, json.as_deref()),
        Command::Separate { ckpt, input, out } => {
            for p in separate_file(&ckpt, &input, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::GradCheck { tiny_config, seeds } => grad_check(tiny_config.as_deref(), seeds),
        Command::MakeData { config, out } => make_data(&config, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
