use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qrefine::FilterMode;
use qrefine_cli::{
    cmd_eval, cmd_fixture, cmd_train, summary_path, with_workers, Command, Overrides, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "qrefine",
    version,
    about = "Q-learning test-time refinement for image classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Train the secondary classifier on extracted features.
    Train(Common),
    /// Evaluate baseline and refined accuracy on the test split.
    Eval(Common),
    /// Write the synthetic glyph dataset as PNG folders.
    Fixture(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// JSONL file receiving one line per episode iteration.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// oracle-misclassified, dispersion-threshold, always or never.
    #[arg(long)]
    filter: Option<FilterMode>,
    /// Named action bank.
    #[arg(long)]
    bank: Option<String>,
    /// Model (train), report (eval) or directory (fixture).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cmd: Command, args: Common) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(
        cmd,
        &Overrides {
            seed: args.seed,
            workers: args.workers,
            trace: args.trace,
            filter: args.filter,
            bank: args.bank,
            out: args.out,
        },
    );
    match cmd {
        Command::Train => {
            let s = with_workers(&cfg, || cmd_train(&cfg))??;
            println!(
                "trained {:?} on {} samples ({} classes, dim {}): train accuracy {:.4}",
                s.classifier, s.samples, s.classes, s.dim, s.train_accuracy
            );
            println!("model: {}", s.model.display());
            println!("summary: {}", summary_path(&cfg).display());
        }
        Command::Eval => {
            let r = with_workers(&cfg, || cmd_eval(&cfg))??;
            println!("baseline accuracy: {:.4}", r.baseline_accuracy);
            println!("refined accuracy:  {:.4}", r.refined_accuracy);
            println!(
                "hard: {}  corrected: {}  broken: {}  refinement errors: {}",
                r.counts.hard, r.counts.corrected, r.counts.broken, r.counts.refinement_errors
            );
            println!("report: {}", cfg.output.report.display());
        }
        Command::Fixture => {
            let s = with_workers(&cfg, || cmd_fixture(&cfg))??;
            println!(
                "wrote {} train and {} test images ({} half-turned) to {}",
                s.train,
                s.test,
                s.rotated_from.len(),
                cfg.output.fixture_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Sub::Train(a) => (Command::Train, a),
        Sub::Eval(a) => (Command::Eval, a),
        Sub::Fixture(a) => (Command::Fixture, a),
    };
    match run(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
