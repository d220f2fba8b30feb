//! Label precision of the four labelling schemes while the full method
//! trains, against the synthetic snippet ground truth.
//!
//! cargo run --release --example label_audit [iterations]

use procl::config::RunConfig;
use procl::trainer::train;

fn main() -> procl::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.train.iterations = n.parse().expect("iteration count");
    }
    cfg.train.audit_every = 200;
    let data = cfg.dataset()?;
    let (_, outcome) = train(&data, &cfg.model, &cfg.train, cfg.seed, None)?;
    println!(
        "{:>6} {:>6} {:>10} {:>9}",
        "iter", "method", "precision", "coverage"
    );
    for row in &outcome.audit {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>6} {:>6} {:>10} {:>9}",
            row.iteration,
            row.method,
            fmt(row.precision()),
            fmt(row.coverage())
        );
    }
    Ok(())
}
