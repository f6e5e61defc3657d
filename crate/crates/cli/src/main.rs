use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crae_core::data::{write_pgm, DataConfig};
use crae_core::experiment::{parse_config, run_with_progress, Overrides};
use crae_core::methods::Method;

#[derive(Parser)]
#[command(name = "crae", about = "Semi-supervised rotation-head experiments on synthetic glyphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (method, seed) pair and write metrics CSVs plus a summary.
    Run(RunArgs),
    /// Write a few generated examples per class as PGM images.
    Dump(DumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method names, or `all`.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Number of labeled examples.
    #[arg(long)]
    labels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    /// Sharpening temperature in (0, 1].
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Disable the auxiliary classifier.
    #[arg(long)]
    no_aux: bool,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Examples written per class.
    #[arg(long, default_value_t = 3)]
    per_class: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_methods(s: &str) -> Result<Vec<Method>, crae_core::Error> {
    if s.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    s.split(',').map(str::parse).collect()
}

fn run(args: RunArgs) -> crae_core::Result<()> {
    let overrides = Overrides {
        methods: args.method.as_deref().map(parse_methods).transpose()?,
        seeds: args.seed,
        labels: args.labels,
        epochs: args.epochs,
        out: args.out,
        eta: args.eta,
        eta1: args.eta1,
        eta2: args.eta2,
        temp: args.temp,
        proj_dim: args.proj_dim,
        no_aux: args.no_aux,
    };
    let spec = parse_config(args.config.as_deref(), &overrides)?;
    let rows = run_with_progress(&spec, |r| {
        eprintln!("{} seed {}: final test error {:.4}", r.method, r.seed, r.final_error);
    })?;
    println!("{:<22} {:>10} {:>10} {:>4}", "method", "mean", "std", "n");
    for r in rows {
        println!("{:<22} {:>10.4} {:>10.4} {:>4}", r.method.name(), r.mean, r.std, r.n);
    }
    Ok(())
}

fn dump(args: DumpArgs) -> crae_core::Result<()> {
    let data = DataConfig {
        classes: args.classes,
        height: args.size,
        width: args.size,
        n_per_class: args.per_class,
        n_labeled: 0,
        n_test: 0,
        ..Default::default()
    };
    let split = data.build(args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| crae_core::Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    for (i, ex) in split.unlabeled.iter().enumerate() {
        write_pgm(&ex.image, &args.out.join(format!("class{}_{i:03}.pgm", ex.label)))?;
    }
    println!("wrote {} images to {}", split.unlabeled.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Dump(a) => dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
