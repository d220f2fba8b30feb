//! Interrupts a run at a checkpoint, resumes it and checks that the result
//! matches an uninterrupted run bit for bit.
//!
//! cargo run --release --example resume

use procl::checkpoint::Checkpoint;
use procl::config::RunConfig;
use procl::trainer::Trainer;

fn main() -> procl::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.train.iterations = 60;
    cfg.train.audit_every = 0;
    let data = cfg.dataset()?;
    let fresh = || {
        Trainer::new(
            data.feature_dim,
            data.num_classes,
            &cfg.model,
            &cfg.train,
            cfg.seed,
        )
    };

    let mut straight = fresh()?;
    straight.run(&data, None)?;

    let mut first = fresh()?;
    for _ in 0..25 {
        first.step(&data.train)?;
    }
    let bytes = first.checkpoint().to_bytes();
    println!(
        "checkpoint at iteration {}: {} bytes",
        first.iteration(),
        bytes.len()
    );
    let mut second = Trainer::resume(&Checkpoint::from_bytes(&bytes)?, &cfg.train, cfg.seed)?;
    second.run(&data, None)?;

    let same = second.params() == straight.params();
    println!("resumed run identical to uninterrupted run: {same}");
    assert!(same);
    Ok(())
}
