use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use procl::checkpoint::Checkpoint;
use procl::config::{parse_thresholds, RunConfig};
use procl::data::{load_ground_truth, save_dataset, save_ground_truth, SyntheticSpec};
use procl::evaluation::map_table;
use procl::experiments::{ablation_csv, run_ablation};
use procl::inference::{load_proposals, localize_all, save_proposals};
use procl::losses::LossFlags;
use procl::model::ModelParams;
use procl::trainer::{label_audit, Trainer, AUDIT_HEADER};
use procl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "procl",
    version,
    about = "Weakly-supervised temporal action localisation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated optional losses, e.g. `cl,fbd,mpcl`.
    #[arg(long)]
    flags: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(flags) = &self.flags {
            cfg.train.flags = flags.parse::<LossFlags>()?;
        }
        if let Some(iters) = self.iters {
            cfg.train.iterations = iters;
        }
        if let Some(theta) = self.theta {
            cfg.train.theta = theta;
        }
        if let Some(rho) = self.rho {
            cfg.inference.rho = rho;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        /// Synthetic spec (TOML); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes logs, audits and checkpoints.
    Train {
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write proposals for one split as JSON lines.
    Localize {
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// mAP table of a proposals file against ground truth.
    Eval {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// `start:step:end` or a comma list.
        #[arg(long, default_value = "0.1:0.1:0.7")]
        thresholds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label precision of a checkpoint on one split.
    LabelAudit {
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the loss ablation matrix.
    Ablate {
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_params(path: &Path) -> Result<ModelParams> {
    ModelParams::from_checkpoint("model.", &Checkpoint::load(path)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { spec, out, seed } => {
            let mut spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    toml::from_str::<SyntheticSpec>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let data = spec.generate()?;
            save_dataset(&out, &data)?;
            write(
                &out.join("spec.toml"),
                &toml::to_string(&spec).expect("spec serialises"),
            )?;
            println!(
                "{} train / {} test videos in {}",
                data.train.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Train { over, out, resume } => {
            let cfg = over.resolve()?;
            cfg.echo(&out)?;
            let data = cfg.dataset()?;
            let mut trainer = match resume {
                Some(path) => Trainer::resume(&Checkpoint::load(&path)?, &cfg.train, cfg.seed)?,
                None => Trainer::new(
                    data.feature_dim,
                    data.num_classes,
                    &cfg.model,
                    &cfg.train,
                    cfg.seed,
                )?,
            };
            let outcome = trainer.run(&data, Some(&out))?;
            if let Some((it, last)) = outcome.losses.last() {
                println!("iteration {it}: l_total {:.6}", last.l_total);
            }
        }
        Command::Localize {
            over,
            checkpoint,
            split,
            out,
        } => {
            let cfg = over.resolve()?;
            cfg.echo(&out)?;
            let data = cfg.dataset()?;
            let params = load_params(&checkpoint)?;
            let records = localize_all(
                data.split(&split)?,
                &params,
                &cfg.inference,
                cfg.train.gamma,
            )?;
            let path = out.join("proposals.jsonl");
            save_proposals(&path, &records)?;
            save_ground_truth(&out.join("ground_truth.jsonl"), data.split(&split)?)?;
            println!("{} proposals in {}", records.len(), path.display());
        }
        Command::Eval {
            proposals,
            ground_truth,
            thresholds,
            out,
        } => {
            let thresholds = parse_thresholds(&thresholds)?;
            let report = map_table(
                &load_proposals(&proposals)?,
                &load_ground_truth(&ground_truth)?,
                &thresholds,
            )?;
            print!("{}", report.to_csv());
            if let Some(dir) = out {
                create_dir(&dir)?;
                write(&dir.join("map.csv"), &report.to_csv())?;
                write(&dir.join("per_class.csv"), &report.per_class_csv())?;
            }
        }
        Command::LabelAudit {
            over,
            checkpoint,
            split,
            out,
        } => {
            let cfg = over.resolve()?;
            cfg.echo(&out)?;
            let data = cfg.dataset()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let params = ModelParams::from_checkpoint("model.", &ckpt)?;
            let iteration = ckpt.meta("iteration").unwrap_or(0);
            let rows = label_audit(&params, data.split(&split)?, &cfg.train, iteration)?;
            let mut text = format!("{AUDIT_HEADER}\n");
            for row in &rows {
                text.push_str(&row.csv_line());
                text.push('\n');
            }
            write(&out.join("label_audit.csv"), &text)?;
            print!("{text}");
        }
        Command::Ablate { over, out } => {
            let cfg = over.resolve()?;
            cfg.echo(&out)?;
            let rows = run_ablation(&cfg, Some(&out))?;
            let table = ablation_csv(&rows);
            write(&out.join("ablation.csv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("warn,procl::losses=error"),
    )
    .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::NumericalAbort { .. } | Error::NonFinite(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
