use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ptable_core::corpus::write_corpus;
use ptable_core::pipeline::{compare, format_comparison, Pipeline, PipelineConfig, PipelineError, RunReport, Stage, Variant, REPORT};
use ptable_core::store::{read_json, write_atomic, write_jsonl};
use ptable_core::synth::{synthesize, SynthConfig};
use ptable_core::train::gradient_check_random;

#[derive(Parser)]
#[command(name = "ptable", version, about = "Partial-table pipeline for dense table retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage, or `all` of them in order.
    Run {
        /// ingest, embed, cluster, kpt, genq, mine, train, index, eval or all.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. `--set training.epochs=4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the full pipeline for several sampling/negative/adapter variants and tabulate recall.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variants such as `kpt_random+hard+adapter,first_rows+hard+no-adapter`.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare the analytic adapter gradient with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        triples: usize,
        #[arg(long, default_value_t = 4)]
        negatives: usize,
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write the synthetic corpus and its gold queries.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = SynthConfig::default().tables)]
        tables: usize,
    },
}

fn print_report(workspace: &Path) {
    let Ok(report) = read_json::<RunReport>(&workspace.join(REPORT)) else {
        return;
    };
    for (name, eval) in [("gold", &report.gold), ("heldout", &report.heldout)] {
        if let Some(e) = eval {
            let cells: Vec<String> = e.overall.recall.iter().map(|r| format!("R@{}={:.2}", r.k, r.recall)).collect();
            println!("{name} ({} queries): {}", e.overall.queries, cells.join(" "));
        }
    }
}

fn run(stage: &str, config: &Path, overrides: &[String]) -> Result<(), PipelineError> {
    let cfg = PipelineConfig::load(config, overrides)?;
    let stages: Vec<Stage> = if stage == "all" { Stage::ALL.to_vec() } else { vec![stage.parse()?] };
    let mut pipeline = Pipeline::open(cfg)?;
    for s in &stages {
        let outcome = pipeline.run_stage(*s)?;
        if outcome.cache_hit {
            println!("{s}: up to date");
        } else {
            println!("{s}: done in {:.2}s", outcome.wall_time_secs);
        }
    }
    if stages.contains(&Stage::Eval) {
        print_report(pipeline.workspace());
    }
    Ok(())
}

fn run_compare(config: &Path, strategies: &[String], overrides: &[String]) -> Result<(), PipelineError> {
    let cfg = PipelineConfig::load(config, overrides)?;
    let variants = strategies.iter().map(|s| s.parse()).collect::<Result<Vec<Variant>, _>>()?;
    let rows = compare(&cfg, &variants)?;
    print!("{}", format_comparison(&rows, &cfg.retrieval.ks));
    Ok(())
}

fn synth(out: &Path, seed: u64, tables: usize) -> Result<(), String> {
    let cfg = SynthConfig { seed, tables, ..SynthConfig::default() };
    let (corpus, gold) = synthesize(&cfg).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    write_atomic(&out.join("corpus.jsonl"), |w| write_corpus(&corpus, w)).map_err(|e| e.to_string())?;
    write_jsonl(&out.join("gold.jsonl"), &gold).map_err(|e| e.to_string())?;
    println!("wrote {} tables and {} gold queries to {}", corpus.tables.len(), gold.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { stage, config, overrides } => run(&stage, &config, &overrides),
        Command::Compare { config, strategies, overrides } => run_compare(&config, &strategies, &overrides),
        Command::Gradcheck { dim, triples, negatives, tau, seed, tolerance } => {
            return match gradient_check_random(dim, triples, negatives, tau, seed) {
                Ok(check) => {
                    println!(
                        "checked {} partials: max relative error {:.3e}, max absolute error {:.3e}",
                        check.checked, check.max_rel_error, check.max_abs_error
                    );
                    if check.max_rel_error < tolerance {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("error: relative error exceeds {tolerance:e}");
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Command::Synth { out, seed, tables } => {
            return match synth(&out, seed, tables) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
