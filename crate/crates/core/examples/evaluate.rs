//! mAP over IoU thresholds for a handful of hand-written proposals.
//!
//! cargo run --example evaluate

use procl::config::parse_thresholds;
use procl::data::GroundTruthRecord;
use procl::evaluation::map_table;
use procl::inference::ProposalRecord;

fn gt(video: &str, t_start: f64, t_end: f64, class: usize) -> GroundTruthRecord {
    GroundTruthRecord {
        video_id: video.into(),
        t_start,
        t_end,
        class,
    }
}

fn prop(video: &str, t_start: f64, t_end: f64, score: f64, class: usize) -> ProposalRecord {
    ProposalRecord {
        video_id: video.into(),
        t_start,
        t_end,
        score,
        class,
    }
}

fn main() -> procl::Result<()> {
    let truth = vec![
        gt("a", 1.0, 4.0, 0),
        gt("a", 8.0, 10.0, 1),
        gt("b", 0.0, 6.0, 0),
    ];
    let proposals = vec![
        prop("a", 1.2, 4.0, 0.9, 0),
        prop("a", 8.5, 12.0, 0.7, 1),
        prop("b", 0.0, 3.0, 0.8, 0),
        // duplicate of an already matched instance
        prop("a", 1.0, 3.5, 0.6, 0),
        prop("b", 7.0, 9.0, 0.3, 1),
    ];
    let report = map_table(&proposals, &truth, &parse_thresholds("0.1:0.1:0.7")?)?;
    print!("{}", report.to_table());
    println!();
    print!("{}", report.per_class_csv());
    Ok(())
}
