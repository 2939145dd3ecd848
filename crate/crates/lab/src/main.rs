use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use consistency_lab::stage::parse_stage_list;
use consistency_lab::{resolve_threads, run, ExperimentConfig, LabError, Stage};

/// Discrete-to-continuum consistency experiments for spectral graph networks.
#[derive(Debug, Parser)]
#[command(name = "consistency-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `master_seed`; default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated stage subset for `all`.
    #[arg(long, global = true)]
    stages: Option<String>,
    /// Worker threads; falls back to CONSISTENCY_LAB_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Graph spectra, cutoffs and eigenspace alignment along the ladder.
    Spectra,
    /// Operator identities and eigensolver oracles.
    OpsCheck,
    /// Response convergence and high-frequency insensitivity.
    ResponseConv,
    /// Sparse ERM at every level against the continuum problem.
    TrainLadder,
    /// Combined-spectrum gap scan for S² × aS².
    GapDemo {
        /// Value of a^{-2}; replaces the configured list.
        #[arg(long)]
        a_sq_inv: Option<f64>,
        /// Largest combined eigenvalue scanned.
        #[arg(long)]
        lambda_max: Option<f64>,
    },
    /// Every stage, or the subset given by --stages.
    All,
}

fn execute(cli: Cli) -> Result<(), LabError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let stages = match (&cli.command, &cli.stages) {
        (Command::All, Some(list)) => parse_stage_list(list).map_err(|m| LabError::config("--stages", m))?,
        (Command::All, None) => Stage::ALL.to_vec(),
        (_, Some(_)) => return Err(LabError::config("--stages", "only valid with the `all` subcommand")),
        (Command::Spectra, None) => vec![Stage::Spectra],
        (Command::OpsCheck, None) => vec![Stage::OpsCheck],
        (Command::ResponseConv, None) => vec![Stage::ResponseConv],
        (Command::TrainLadder, None) => vec![Stage::TrainLadder],
        (Command::GapDemo { a_sq_inv, lambda_max }, None) => {
            if let Some(a) = a_sq_inv {
                cfg.gap.a_sq_inv = vec![*a];
            }
            if let Some(l) = lambda_max {
                cfg.gap.lambda_max = *l;
            }
            vec![Stage::GapDemo]
        }
    };
    let threads = resolve_threads(cli.threads)?;
    let outcome = run(&cfg, &stages, threads)?;
    for rec in &outcome.report.stages {
        println!("{:<14} {:>8.2}s  {}", rec.stage.name(), rec.wall_clock_s, rec.files.join(" "));
    }
    if let Some(gap) = &outcome.outputs.gap {
        for r in &gap.rows {
            println!(
                "a^-2 = {}: min gap {} between blocks {:?} and {:?} up to {}; smallest |2i - 2j a^-2| = {} at ({}, {})",
                r.a_sq_inv,
                r.min_gap,
                (r.min_pair_i1, r.min_pair_j1),
                (r.min_pair_i2, r.min_pair_j2),
                r.lambda_max,
                r.family_gap,
                r.family_i,
                r.family_j
            );
        }
    }
    println!("manifest: {}", cfg.output.join("manifest.json").display());
    Ok(())
}

fn main() -> ExitCode {
    let schema = format!("Config schema (JSON, every field optional, defaults shown):\n{}", ExperimentConfig::schema_example());
    let matches = Cli::command().after_long_help(schema).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
