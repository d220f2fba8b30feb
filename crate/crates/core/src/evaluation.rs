//! Temporal IoU, THUMOS-style average precision, mAP tables and label audits.
//!
//! AP protocol: detections are visited in descending score order (stable,
//! so ties keep input order). Each one is matched to the unmatched ground
//! truth of the same video with the highest IoU, provided that IoU reaches
//! the threshold (lowest index on IoU ties). AP is the sum of the precision
//! at every true positive, divided by the number of ground truths.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::data::GroundTruthRecord;
use crate::error::{Error, Result};
use crate::inference::ProposalRecord;
use crate::labeling::ComplementaryMask;

pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for s in [a, b] {
        if !(s.0 < s.1) {
            return Err(Error::InvalidInput(format!(
                "degenerate segment [{}, {}]",
                s.0, s.1
            )));
        }
    }
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// A segment of one video; `video` is any stable key.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub video: usize,
    pub start: f64,
    pub end: f64,
}

impl Interval {
    fn span(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Score-descending order, stable.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    order
}

/// True-positive flag of every ranked detection.
fn match_ranked(ranked: &[Interval], gts: &[Interval], threshold: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    ranked
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] || gt.video != d.video {
                    continue;
                }
                let iou = iou_unchecked(d.span(), gt.span());
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// AP of one class. `None` when there are neither ground truths nor
/// detections; 0 when there are detections but no ground truth.
pub fn average_precision(
    detections: &[(Interval, f64)],
    gts: &[Interval],
    threshold: f64,
) -> Option<f64> {
    if gts.is_empty() {
        return (!detections.is_empty()).then_some(0.0);
    }
    let scores: Vec<f64> = detections.iter().map(|d| d.1).collect();
    let ranked: Vec<Interval> = ranking(&scores)
        .into_iter()
        .map(|i| detections[i].0)
        .collect();
    let hits = match_ranked(&ranked, gts, threshold);
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, hit) in hits.into_iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / gts.len() as f64)
}

/// mAP results over several IoU thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Classes with at least one ground truth, ascending.
    pub classes: Vec<usize>,
    /// `ap[i][k]`: AP of `classes[i]` at `thresholds[k]`.
    pub ap: Vec<Vec<f64>>,
    pub map: Vec<f64>,
    /// Mean mAP over 0.1:0.1:0.5, when every member threshold was evaluated.
    pub avg_01_05: Option<f64>,
    /// Mean mAP over 0.1:0.1:0.7, when every member threshold was evaluated.
    pub avg_01_07: Option<f64>,
}

fn average_over(thresholds: &[f64], map: &[f64], members: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    for m in members {
        let k = thresholds.iter().position(|t| (t - m).abs() < 1e-9)?;
        sum += map[k];
    }
    Some(sum / members.len() as f64)
}

pub fn map_table(
    proposals: &[ProposalRecord],
    ground_truth: &[GroundTruthRecord],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if ground_truth.is_empty() {
        return Err(Error::InvalidInput("empty ground truth".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidInput("no IoU thresholds".into()));
    }
    let mut videos: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ground_truth
        .iter()
        .map(|g| g.video_id.as_str())
        .chain(proposals.iter().map(|p| p.video_id.as_str()))
    {
        let next = videos.len();
        videos.entry(id).or_insert(next);
    }
    let classes: Vec<usize> = ground_truth
        .iter()
        .map(|g| g.class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut ap = Vec::with_capacity(classes.len());
    for &c in &classes {
        let gts: Vec<Interval> = ground_truth
            .iter()
            .filter(|g| g.class == c)
            .map(|g| Interval {
                video: videos[g.video_id.as_str()],
                start: g.t_start,
                end: g.t_end,
            })
            .collect();
        let dets: Vec<(Interval, f64)> = proposals
            .iter()
            .filter(|p| p.class == c)
            .map(|p| {
                let iv = Interval {
                    video: videos[p.video_id.as_str()],
                    start: p.t_start,
                    end: p.t_end,
                };
                (iv, p.score)
            })
            .collect();
        ap.push(
            thresholds
                .iter()
                .map(|&t| average_precision(&dets, &gts, t).expect("class has ground truth"))
                .collect::<Vec<_>>(),
        );
    }
    let map: Vec<f64> = (0..thresholds.len())
        .map(|k| ap.iter().map(|row| row[k]).sum::<f64>() / classes.len() as f64)
        .collect();
    Ok(EvalReport {
        avg_01_05: average_over(thresholds, &map, &[0.1, 0.2, 0.3, 0.4, 0.5]),
        avg_01_07: average_over(thresholds, &map, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]),
        thresholds: thresholds.to_vec(),
        classes,
        ap,
        map,
    })
}

impl EvalReport {
    fn columns(&self) -> Vec<(String, Option<f64>)> {
        let mut cols: Vec<(String, Option<f64>)> = self
            .thresholds
            .iter()
            .zip(&self.map)
            .map(|(t, m)| (format!("{t}"), Some(*m)))
            .collect();
        cols.push(("AVG(0.1:0.5)".into(), self.avg_01_05));
        cols.push(("AVG(0.1:0.7)".into(), self.avg_01_07));
        cols
    }

    /// One header row and one row of mAP percentages, like a results table.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let header: Vec<String> = cols.iter().map(|c| format!("mAP@{}", c.0)).collect();
        let values: Vec<String> = cols.iter().map(|c| fmt_percent(c.1)).collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }

    /// Aligned text table, mAP in percent.
    pub fn to_table(&self) -> String {
        let cols = self.columns();
        let mut out = String::new();
        for (name, _) in &cols {
            let _ = write!(out, "{name:>13}");
        }
        out.push('\n');
        for (_, v) in &cols {
            let _ = write!(out, "{:>13}", fmt_percent(*v));
        }
        out.push('\n');
        out
    }

    /// Per-class AP in percent, one row per class.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class");
        for t in &self.thresholds {
            let _ = write!(out, ",AP@{t}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.ap) {
            let _ = write!(out, "{c}");
            for v in row {
                let _ = write!(out, ",{}", fmt_percent(Some(*v)));
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_percent(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

/// Counts behind a precision/coverage pair; additive across videos.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuditCounts {
    pub correct: usize,
    pub labeled: usize,
    pub eligible: usize,
}

impl AuditCounts {
    pub fn add(&mut self, other: AuditCounts) {
        self.correct += other.correct;
        self.labeled += other.labeled;
        self.eligible += other.eligible;
    }

    /// `None` when nothing was labelled.
    pub fn precision(&self) -> Option<f64> {
        (self.labeled > 0).then(|| self.correct as f64 / self.labeled as f64)
    }

    pub fn coverage(&self) -> Option<f64> {
        (self.eligible > 0).then(|| self.labeled as f64 / self.eligible as f64)
    }
}

/// Exclusion precision of a complementary mask against per-snippet ground
/// truth (`truth[t]` is the category index, background included). Eligible
/// pairs are `|G|` per unambiguous snippet.
pub fn mask_precision(
    mask: &ComplementaryMask,
    flags: &[bool],
    set_len: usize,
    truth: &[usize],
) -> AuditCounts {
    let mut counts = AuditCounts {
        eligible: mask.unambiguous * set_len,
        ..Default::default()
    };
    for (t, &gt) in truth.iter().enumerate() {
        if flags[t] {
            continue;
        }
        for (c, &r) in mask.r.row(t).iter().enumerate() {
            if r == 0.0 {
                counts.labeled += 1;
                counts.correct += usize::from(c != gt);
            }
        }
    }
    counts
}

/// Precision of the category exclusions implied by the video label: every
/// category absent from the label on every snippet.
pub fn deterministic_exclusion_precision(labels: &[bool], truth: &[usize]) -> AuditCounts {
    let cats = labels.len() + 1;
    let mut counts = AuditCounts {
        eligible: truth.len() * cats,
        ..Default::default()
    };
    for &gt in truth {
        for (c, _) in labels.iter().enumerate().filter(|(_, &y)| !y) {
            counts.labeled += 1;
            counts.correct += usize::from(c != gt);
        }
    }
    counts
}

/// Precision of one-hot pseudo labels: the share of snippets whose label is
/// the ground-truth category. Every snippet is labelled.
pub fn pseudo_label_precision(labels: &[usize], truth: &[usize]) -> AuditCounts {
    AuditCounts {
        correct: labels.iter().zip(truth).filter(|(a, b)| a == b).count(),
        labeled: labels.len(),
        eligible: labels.len(),
    }
}
