use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::UsageError;

/// Single-view voxel shape completion with a learned shape prior.
#[derive(Parser)]
#[command(name = "voxprior", version)]
struct Cli {
    /// Maximum worker threads (falls back to VOXPRIOR_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lr=0` or `--set completion.latent_dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural shape dataset with views and a split.
    Synth(Common),
    /// Render depth, normal and silhouette maps for dataset views.
    Render(Common),
    /// Pre-train the completion network or the GAN (`stage` key).
    Train(Common),
    /// Fine-tune the completion network with the frozen critic.
    Finetune(Common),
    /// Evaluate a checkpoint on a dataset split.
    Eval(Common),
    /// Per-row differences between two metric reports.
    Compare(Common),
    /// Write predicted and ground-truth meshes plus the inputs for one view.
    ExportMesh(Common),
    /// Rank validation inputs by encoder unit activation.
    Activations(Common),
}

fn thread_cap(flag: Option<usize>) -> Result<Option<usize>, UsageError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("VOXPRIOR_THREADS") {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("VOXPRIOR_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = thread_cap(cli.threads)? {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Synth(c) => commands::synth(&c),
        Command::Render(c) => commands::render(&c),
        Command::Train(c) => commands::train(&c, false),
        Command::Finetune(c) => commands::train(&c, true),
        Command::Eval(c) => commands::eval(&c),
        Command::Compare(c) => commands::compare(&c),
        Command::ExportMesh(c) => commands::export_mesh(&c),
        Command::Activations(c) => commands::activations(&c),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || matches!(
                e.downcast_ref::<voxprior_core::Error>(),
                Some(voxprior_core::Error::MissingKey(_) | voxprior_core::Error::UnknownKey(_))
            )
    })
}

/// Joins the cause chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            if is_usage(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
