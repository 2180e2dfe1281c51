use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ally_core::harness::{
    run_experiment, run_generation, sweep_clusters, sweep_redundancy, verify_duality, write_outputs,
    ExperimentConfig,
};
use ally_core::selection::Strategy;
use ally_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ally", version, about = "Dual-driven batch active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Seed(s); replaces `seeds` from the config. Repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    /// Output directory; replaces `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Strategy (ally, random, coreset, top_dual); replaces `strategies`. Repeatable.
    #[arg(long)]
    strategy: Vec<Strategy>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the active-learning experiment.
    Run(Common),
    /// Check sensitivity and strong duality on random convex instances.
    VerifyDuality(Common),
    /// Ascend the predicted dual from low-scoring inputs.
    Generate(Common),
    /// ALLY across cluster counts (1 and the budget always included).
    SweepClusters {
        #[command(flatten)]
        common: Common,
        /// Cluster counts; replaces `sweep.k_values`.
        #[arg(long = "k", value_delimiter = ',')]
        k_values: Vec<usize>,
    },
    /// ALLY vs random on the original and a replicated pool.
    SweepRedundancy {
        #[command(flatten)]
        common: Common,
        /// Copies of each unlabeled sample; replaces `sweep.clone_factor`.
        #[arg(long)]
        factor: Option<usize>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if !common.seed.is_empty() {
        cfg.seeds = common.seed.clone();
        cfg.duality.seed = common.seed[0];
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if !common.strategy.is_empty() {
        cfg.strategies = common.strategy.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = load(&c)?;
            let result = run_experiment(&cfg)?;
            write_outputs(&cfg, &result)?;
            for row in result.summary.iter().filter(|r| r.round + 1 == cfg.n_rounds) {
                println!(
                    "{:<9} round {} n={} {} {:.4} ± {:.4}",
                    row.strategy,
                    row.round,
                    row.n_labeled,
                    row.metric_name.as_str(),
                    row.mean,
                    row.std
                );
            }
            for f in result.failures() {
                eprintln!("cell {} seed {} failed: {}", f.strategy, f.seed, f.error.as_deref().unwrap_or(""));
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::VerifyDuality(c) => {
            let cfg = load(&c)?;
            let report = verify_duality(&cfg)?;
            println!(
                "{} instances, all pass: {}; wrote {}",
                report.instances.len(),
                report.all_pass,
                cfg.output_dir.join("duality_report.json").display()
            );
            if !report.all_pass {
                return Err(Error::Numeric("duality checks failed; see report".into()));
            }
        }
        Command::Generate(c) => {
            let cfg = load(&c)?;
            let out = run_generation(&cfg)?;
            for (t, row) in out.trajectories.iter().zip(&out.start_rows) {
                println!("row {row}: {:.4} -> {:.4}", t.initial_score(), t.final_score());
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::SweepClusters { common, k_values } => {
            let mut cfg = load(&common)?;
            if !k_values.is_empty() {
                cfg.sweep.k_values = k_values;
            }
            let sweep = sweep_clusters(&cfg, &cfg.sweep.k_values)?;
            for (k, r) in &sweep.runs {
                let curve = r.mean_curve(Strategy::Ally);
                println!("k={k}: final mean {:.4}", curve.last().copied().unwrap_or(f64::NAN));
            }
        }
        Command::SweepRedundancy { common, factor } => {
            let mut cfg = load(&common)?;
            if let Some(f) = factor {
                cfg.sweep.clone_factor = f;
            }
            let sweep = sweep_redundancy(&cfg, cfg.sweep.clone_factor)?;
            for r in &sweep.rows {
                println!(
                    "seed {}: gap {:+.4} -> {:+.4} (cloned), duplicates ally {} random {}",
                    r.seed, r.gap_original, r.gap_cloned, r.duplicates_ally, r.duplicates_random
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
            match e.root() {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
