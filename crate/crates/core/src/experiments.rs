//! The loss ablation matrix: one training run per experiment row, each
//! evaluated on the test split.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{Dataset, GroundTruthRecord, VideoRecord};
use crate::error::Result;
use crate::evaluation::{map_table, EvalReport};
use crate::inference::localize_all;
use crate::losses::LossFlags;
use crate::trainer::{train, AuditRow};

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub exp: u32,
    pub flags: LossFlags,
    pub report: EvalReport,
    /// Audit of the last iteration (empty without snippet ground truth).
    pub final_audit: Vec<AuditRow>,
}

pub fn ground_truth(videos: &[VideoRecord]) -> Vec<GroundTruthRecord> {
    videos
        .iter()
        .flat_map(|v| {
            v.segments.iter().map(|s| GroundTruthRecord {
                video_id: v.video_id.clone(),
                t_start: s.t_start,
                t_end: s.t_end,
                class: s.class,
            })
        })
        .collect()
}

/// Trains with `flags` under `config` and evaluates on the test split.
pub fn run_experiment(
    dataset: &Dataset,
    config: &RunConfig,
    flags: LossFlags,
    out: Option<&Path>,
) -> Result<(EvalReport, Vec<AuditRow>)> {
    let mut train_cfg = config.train.clone();
    train_cfg.flags = flags;
    let (params, outcome) = train(dataset, &config.model, &train_cfg, config.seed, out)?;
    let proposals = localize_all(&dataset.test, &params, &config.inference, train_cfg.gamma)?;
    let report = map_table(
        &proposals,
        &ground_truth(&dataset.test),
        &config.eval.threshold_list()?,
    )?;
    let last = outcome.audit.last().map(|r| r.iteration);
    let final_audit = outcome
        .audit
        .into_iter()
        .filter(|r| Some(r.iteration) == last)
        .collect();
    Ok((report, final_audit))
}

/// Runs every row of the ablation matrix with the same seed and data. With
/// `out`, each run's logs go to `out/exp<N>/`.
pub fn run_ablation(config: &RunConfig, out: Option<&Path>) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let dataset = config.dataset()?;
    let mut rows = Vec::new();
    for (exp, flags) in LossFlags::ablation_matrix() {
        log::info!("ablation exp {exp}: flags {flags}");
        let dir = out.map(|d| d.join(format!("exp{exp}")));
        let (report, final_audit) = run_experiment(&dataset, config, flags, dir.as_deref())?;
        rows.push(AblationRow {
            exp,
            flags,
            report,
            final_audit,
        });
    }
    Ok(rows)
}

/// Experiment table: flags, mAP per threshold and the two averages, in
/// percent.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("exp,flags");
    if let Some(first) = rows.first() {
        for t in &first.report.thresholds {
            let _ = write!(out, ",mAP@{t}");
        }
    }
    out.push_str(",AVG(0.1:0.5),AVG(0.1:0.7)\n");
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default();
    for row in rows {
        let _ = write!(
            out,
            "{},{}",
            row.exp,
            row.flags.to_string().replace(',', "+")
        );
        for m in &row.report.map {
            let _ = write!(out, ",{}", pct(Some(*m)));
        }
        let _ = writeln!(
            out,
            ",{},{}",
            pct(row.report.avg_01_05),
            pct(row.report.avg_01_07)
        );
    }
    out
}
