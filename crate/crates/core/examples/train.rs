//! Trains the full method on the synthetic benchmark and prints the loss
//! components every 100 iterations.
//!
//! cargo run --release --example train [iterations]

use procl::config::RunConfig;
use procl::trainer::Trainer;

fn main() -> procl::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.train.iterations = n.parse().expect("iteration count");
    }
    cfg.train.audit_every = 0;
    let data = cfg.dataset()?;
    let mut trainer = Trainer::new(
        data.feature_dim,
        data.num_classes,
        &cfg.model,
        &cfg.train,
        cfg.seed,
    )?;
    println!("flags {}", cfg.train.flags);
    println!(
        "{:>6} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "iter", "mil", "cl", "fbd", "mpcl", "total"
    );
    while trainer.iteration() < cfg.train.iterations {
        let r = trainer.step(&data.train)?;
        let it = trainer.iteration();
        if it == 1 || it % 100 == 0 {
            println!(
                "{it:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                r.l_mil, r.l_cl, r.l_fbd, r.l_mpcl, r.l_total
            );
        }
    }
    Ok(())
}
