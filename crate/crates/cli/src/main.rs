use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mid_cli::commands::{self, Metric, Mode};
use mid_cli::{CliError, CliResult, Config};
use mid_core::trainer::EpochReport;

#[derive(Parser)]
#[command(name = "mid", version, about = "Self-supervised iterative denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both networks on a corpus written by `synth`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise one input (`.midt` tensor or `.csv` point set).
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "iterative")]
        mode: Mode,
        /// Supplies `[denoise] threshold` for point inputs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write every intermediate state.
        #[arg(long)]
        trace: bool,
    },
    /// Compute metrics over a JSON list of file pairs.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        metrics: Vec<Metric>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare iterative and one-shot denoising on held-out inputs.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_epoch(r: &EpochReport) {
    println!(
        "epoch {:>4}  loss_step {:.6e}  loss_noise {:.6e}  loss_total {:.6e}",
        r.epoch, r.loss_step, r.loss_noise, r.loss_total
    );
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("MID_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("MID_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Synth { config, seed, out } => {
            let cfg = Config::load(&config, seed)?;
            let o = commands::cmd_synth(&cfg, &out)?;
            println!(
                "wrote {} items, manifest {:016x}",
                o.manifest.items.len(),
                o.manifest_hash
            );
        }
        Command::Train {
            config,
            data,
            seed,
            out,
        } => {
            let cfg = Config::load(&config, seed)?;
            let o = commands::cmd_train(&cfg, &data, &out, &mut print_epoch)?;
            println!("checkpoint {}", o.checkpoint.display());
        }
        Command::Denoise {
            ckpt,
            input,
            out,
            mode,
            config,
            trace,
        } => {
            let threshold = match config {
                Some(p) => Config::load(&p, None)?.denoise.threshold,
                None => mid_core::denoiser::DEFAULT_THRESHOLD,
            };
            let o = commands::cmd_denoise(&ckpt, &input, &out, mode, threshold, trace)?;
            println!(
                "t_hat {} after {} steps, wrote {}",
                o.t_hat,
                o.steps,
                o.output.display()
            );
        }
        Command::Eval {
            config,
            data,
            metrics,
            seed,
            out,
        } => {
            let cfg = Config::load(&config, seed)?;
            let o = commands::cmd_eval(&cfg, &data, &metrics, &out)?;
            println!("evaluated {} pairs", o.rows.len());
        }
        Command::Ablate {
            config,
            ckpt,
            seed,
            out,
        } => {
            let cfg = Config::load(&config, seed)?;
            let o = commands::cmd_ablate(&cfg, ckpt.as_deref(), &out, &mut print_epoch)?;
            println!("{} samples, mean PSNR delta {:.3} dB", o.rows.len(), o.mean_delta);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
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
