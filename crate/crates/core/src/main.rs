use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use normfree::experiment::{
    load_checkpoint, load_or_run, parse_config, run, write_comparison, ExperimentConfig, RunRecord, RunStatus,
    TensorGroup,
};
use normfree::Result;

#[derive(Parser)]
#[command(
    version,
    about = "Train and compare residual networks with and without batch normalization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override the number of epochs (the schedule is stretched to match).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Table format for diagnostics and `inspect` output.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run { config: PathBuf },
    /// Run (or load finished run directories for) two configurations and compare them.
    Compare { a: PathBuf, b: PathBuf },
    /// Summarize a checkpoint directory.
    Inspect { checkpoint: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl Cli {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            if config.schedule.total == Some(config.epochs as f64) {
                config.schedule.total = Some(epochs as f64);
            }
            config.epochs = epochs;
        }
        if let Some(format) = self.format {
            config.output.format = format.as_str().into();
        }
    }
}

fn print_run(record: &RunRecord) {
    for m in &record.epochs {
        println!(
            "epoch {:>3}  lr {:.5}  train loss {:.4} acc {:6.2}%  val loss {:.4} acc {:6.2}%  clipped {}  {:.1}s  peak {} B",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_accuracy,
            m.val_loss,
            m.val_accuracy,
            m.clip_events,
            m.wall_seconds,
            m.peak_bytes
        );
    }
    match (record.failed_epoch, &record.message) {
        (Some(e), Some(msg)) => println!("status: {} at epoch {e}: {msg}", record.status.as_str()),
        _ => println!("status: {}", record.status.as_str()),
    }
}

fn exit_code(status: RunStatus) -> ExitCode {
    match status {
        RunStatus::Completed => ExitCode::SUCCESS,
        RunStatus::Diverged => ExitCode::from(2),
        RunStatus::Error => ExitCode::from(1),
    }
}

fn inspect(dir: &Path, format: Format) -> Result<()> {
    let ckpt = load_checkpoint(dir)?;
    let m = &ckpt.manifest;
    match format {
        Format::Json => {
            let summary = serde_json::json!({
                "epochs_completed": m.epochs_completed,
                "seed": m.seed,
                "network": m.network,
                "prev_lr": m.prev_lr,
                "initial_loss": m.initial_loss,
                "high_loss_streak": m.high_loss_streak,
                "tensors": m.tensors.iter().zip(&ckpt.tensors).map(|(e, t)| serde_json::json!({
                    "name": e.name,
                    "group": e.group,
                    "shape": e.shape,
                    "l2_norm": t.sum_squares().sqrt(),
                })).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Format::Csv => {
            println!("# epochs_completed = {}", m.epochs_completed);
            println!("# seed = {}", m.seed);
            println!("# block_kind = {}", m.network.kind);
            println!("# prev_lr = {}", m.prev_lr.map_or("none".into(), |v| v.to_string()));
            let params: usize = m
                .tensors
                .iter()
                .filter(|e| e.group == TensorGroup::Param)
                .map(|e| e.shape.iter().product::<usize>())
                .sum();
            println!("# parameters = {params}");
            println!("group,name,shape,l2_norm");
            for (e, t) in m.tensors.iter().zip(&ckpt.tensors) {
                let shape: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
                let group = match e.group {
                    TensorGroup::Param => "param",
                    TensorGroup::Velocity => "velocity",
                    TensorGroup::Buffer => "buffer",
                };
                println!("{group},{},{},{}", e.name, shape.join("x"), t.sum_squares().sqrt());
            }
        }
    }
    Ok(())
}

fn main_inner(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run { config } => {
            let mut config = parse_config(config)?;
            cli.apply(&mut config);
            if let Some(dir) = &cli.out_dir {
                config.output.dir = dir.clone();
            }
            let record = run(&config)?;
            print_run(&record);
            println!("artifacts: {}", config.output.dir.display());
            Ok(exit_code(record.status))
        }
        Command::Compare { a, b } => {
            let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs/compare"));
            let ra = load_or_run(a, &out.join("a"), |c| cli.apply(c))?;
            let rb = load_or_run(b, &out.join("b"), |c| cli.apply(c))?;
            let (cmp, files) = write_comparison(&out, &ra, &rb)?;
            for s in [&cmp.a, &cmp.b] {
                println!(
                    "{} {:<24} {:<9} val top-1 {}",
                    s.label,
                    s.regime,
                    s.status,
                    s.final_val_accuracy.map_or("-".into(), |v| format!("{v:.2}%"))
                );
            }
            println!("{:<28} {:>12} {:>12} {:>10}", "layer", "mean Δ", "std Δ", "skew Δ");
            for l in &cmp.layers {
                println!(
                    "{:<28} {:>12.3e} {:>12.3e} {:>10.3}",
                    l.layer,
                    l.mean_delta(),
                    l.std_delta(),
                    l.skew_delta()
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Inspect { checkpoint } => {
            inspect(checkpoint, cli.format.unwrap_or(Format::Csv))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
