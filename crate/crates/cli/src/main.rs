use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mqo_core::workload::{generate_scaleup, run, Algorithm, RunOptions};

/// Multi-query optimizer: builds a shared AND-OR DAG for a query batch and
/// selects intermediate results to materialize.
#[derive(Debug, Parser)]
#[command(name = "mqo", version, about)]
struct Args {
    /// Catalog file (relation statistics and cost parameters).
    #[arg(long)]
    catalog: PathBuf,

    /// Query batch file.
    #[arg(long)]
    queries: PathBuf,

    /// Comma-separated algorithms: volcano, sh, ru, greedy, exhaustive.
    #[arg(long, value_delimiter = ',', default_value = "volcano,sh,ru,greedy")]
    algorithms: Vec<String>,

    /// Report format.
    #[arg(long, default_value = "text", value_parser = ["text", "json"])]
    report: String,

    /// Print the greedy iteration trace to stderr.
    #[arg(long)]
    trace: bool,

    /// Seed for generated workloads.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Generate the scaleup workload CQ_i (writes the catalog and queries
    /// files instead of reading them) and exit.
    #[arg(long, value_name = "I")]
    gen_scaleup: Option<u32>,

    /// Candidate-set limit for the exhaustive algorithm.
    #[arg(long)]
    oracle_max_nodes: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run_cli(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_cli(args: Args) -> mqo_core::Result<()> {
    if let Some(i) = args.gen_scaleup {
        let (catalog, queries) = generate_scaleup(i, args.seed)?;
        std::fs::write(&args.catalog, catalog)?;
        std::fs::write(&args.queries, queries)?;
        println!(
            "wrote scaleup CQ_{i} (seed {}) to {} and {}",
            args.seed,
            args.catalog.display(),
            args.queries.display()
        );
        return Ok(());
    }
    let catalog = std::fs::read_to_string(&args.catalog)?;
    let queries = std::fs::read_to_string(&args.queries)?;
    let algorithms: Vec<Algorithm> = args
        .algorithms
        .iter()
        .map(|s| s.parse())
        .collect::<mqo_core::Result<_>>()?;
    let report = run(
        &catalog,
        &queries,
        &algorithms,
        &RunOptions {
            trace: args.trace,
            validate_incremental: false,
            oracle_max_nodes: args.oracle_max_nodes,
        },
    )?;
    match args.report.as_str() {
        "json" => println!("{}", report.to_json()),
        _ => print!("{}", report.to_text()),
    }
    Ok(())
}
