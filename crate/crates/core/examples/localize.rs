//! Trains briefly, then localises the first test videos and compares the
//! proposals with the ground truth.
//!
//! cargo run --release --example localize

use procl::config::RunConfig;
use procl::inference::localize;
use procl::trainer::train;

fn main() -> procl::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.train.iterations = 600;
    cfg.train.audit_every = 0;
    let data = cfg.dataset()?;
    let (params, _) = train(&data, &cfg.model, &cfg.train, cfg.seed, None)?;

    for video in data.test.iter().take(3) {
        println!("{}", video.video_id);
        for s in &video.segments {
            println!(
                "  truth     class {} [{:6.2}, {:6.2}]",
                s.class, s.t_start, s.t_end
            );
        }
        let mut props = localize(video, &params, &cfg.inference, cfg.train.gamma)?;
        props.sort_by(|a, b| b.score.total_cmp(&a.score));
        for p in props.iter().take(5) {
            println!(
                "  proposal  class {} [{:6.2}, {:6.2}] score {:.3}",
                p.class, p.t_start, p.t_end, p.score
            );
        }
    }
    Ok(())
}
