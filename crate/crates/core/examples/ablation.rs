//! Runs the loss ablation matrix on the default synthetic benchmark and
//! prints the experiment table.
//!
//! cargo run --release --example ablation [iterations]

use std::time::Instant;

use procl::config::RunConfig;
use procl::experiments::{ablation_csv, run_ablation};

fn main() -> procl::Result<()> {
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("info,procl::losses=error"),
    )
    .init();
    let mut config = RunConfig::default();
    if let Some(iters) = std::env::args().nth(1) {
        config.train.iterations = iters.parse().expect("iteration count");
    }
    let start = Instant::now();
    let rows = run_ablation(&config, None)?;
    print!("{}", ablation_csv(&rows));
    for row in &rows {
        for a in &row.final_audit {
            println!("exp {} audit {}", row.exp, a.csv_line());
        }
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
