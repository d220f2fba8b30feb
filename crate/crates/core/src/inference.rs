//! From a trained model to scored, de-duplicated temporal proposals.
//!
//! Proposal confidence is an outer-inner contrast: the mean background-
//! suppressed activation inside the segment minus the mean over a margin of
//! a quarter of the segment length on each side (at least one snippet,
//! clipped to the video).

use std::cmp::Ordering;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::InferenceConfig;
use crate::data::VideoRecord;
use crate::error::{Error, Result};
use crate::evaluation::iou_unchecked;
use crate::model::{forward, topk_pool, ModelParams};
use crate::numeric::{softmax_in_place, Tensor};

/// A scored segment in seconds. `class` is a foreground index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
    pub class: usize,
}

impl Proposal {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn iou(&self, other: &Proposal) -> f64 {
        iou_unchecked((self.t_start, self.t_end), (other.t_start, other.t_end))
    }
}

/// One line of a proposals file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
    pub class: usize,
}

impl ProposalRecord {
    pub fn new(video_id: &str, p: &Proposal) -> Self {
        ProposalRecord {
            video_id: video_id.to_string(),
            t_start: p.t_start,
            t_end: p.t_end,
            score: p.score,
            class: p.class,
        }
    }
}

/// Foreground classes whose video-level probability exceeds `rho`; the
/// arg-max foreground class when none does. `probs` includes the background
/// as its last entry.
pub fn classes_above(probs: &[f64], rho: f64) -> Vec<usize> {
    let fg = &probs[..probs.len() - 1];
    let picked: Vec<usize> = (0..fg.len()).filter(|&c| fg[c] > rho).collect();
    if !picked.is_empty() {
        return picked;
    }
    let mut best = 0;
    for c in 1..fg.len() {
        if fg[c] > fg[best] {
            best = c;
        }
    }
    vec![best]
}

/// Softmaxed top-k pooled scores of `s_hat`.
pub fn video_scores(s_hat: &Tensor, gamma: f64) -> Result<Vec<f64>> {
    let mut pooled = topk_pool(s_hat, gamma)?;
    softmax_in_place(&mut pooled);
    Ok(pooled)
}

pub fn video_level_classify(s_hat: &Tensor, gamma: f64, rho: f64) -> Result<Vec<usize>> {
    Ok(classes_above(&video_scores(s_hat, gamma)?, rho))
}

/// Inclusive snippet range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnippetRun {
    pub first: usize,
    pub last: usize,
}

impl SnippetRun {
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maximal runs with `a[t] >= tau`, for every threshold in turn. Runs found
/// at several thresholds appear once per threshold.
pub fn extract_segments(a: &[f64], thresholds: &[f64]) -> Vec<SnippetRun> {
    let mut runs = Vec::new();
    for &tau in thresholds {
        let mut start = None;
        for (t, &v) in a.iter().enumerate() {
            match (v >= tau, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    runs.push(SnippetRun {
                        first: s,
                        last: t - 1,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(SnippetRun {
                first: s,
                last: a.len() - 1,
            });
        }
    }
    runs
}

pub fn outer_margin(len: usize) -> usize {
    ((len as f64 * 0.25).round() as usize).max(1)
}

/// Inner mean minus outer mean of column `class` of `s_hat`; an empty outer
/// region contributes 0.
pub fn score_proposal(run: SnippetRun, s_hat: &Tensor, class: usize) -> f64 {
    let t_len = s_hat.rows();
    let inner = (run.first..=run.last)
        .map(|t| s_hat.at(t, class))
        .sum::<f64>()
        / run.len() as f64;
    let m = outer_margin(run.len());
    let before = run.first.saturating_sub(m)..run.first;
    let after = (run.last + 1).min(t_len)..(run.last + 1 + m).min(t_len);
    let outer: Vec<f64> = before.chain(after).map(|t| s_hat.at(t, class)).collect();
    let outer_mean = if outer.is_empty() {
        0.0
    } else {
        outer.iter().sum::<f64>() / outer.len() as f64
    };
    inner - outer_mean
}

/// Suppression priority: higher score, then earlier start, then shorter.
fn priority(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.duration().total_cmp(&b.duration()))
}

/// Greedy class-wise NMS. Output is grouped by ascending class, each group
/// in priority order.
pub fn nms(proposals: &[Proposal], iou_threshold: f64) -> Vec<Proposal> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&i, &j| {
        proposals[i]
            .class
            .cmp(&proposals[j].class)
            .then(priority(&proposals[i], &proposals[j]))
    });
    let mut kept: Vec<Proposal> = Vec::new();
    let mut group_start = 0;
    for i in order {
        let p = proposals[i];
        if kept.last().is_some_and(|k| k.class != p.class) {
            group_start = kept.len();
        }
        if kept[group_start..]
            .iter()
            .all(|k| k.iou(&p) < iou_threshold)
        {
            kept.push(p);
        }
    }
    kept
}

/// Eval-mode localisation on the full snippet sequence of `video`.
pub fn localize(
    video: &VideoRecord,
    params: &ModelParams,
    config: &InferenceConfig,
    gamma: f64,
) -> Result<Vec<Proposal>> {
    let out = forward(params, &video.features)?;
    let probs = video_scores(&out.s_hat, gamma)?;
    let classes = classes_above(&probs, config.rho);
    let runs = extract_segments(&out.a, &config.thresholds);
    let delta = video.snippet_seconds();
    let mut proposals = Vec::with_capacity(runs.len() * classes.len());
    for &c in &classes {
        for run in &runs {
            let mut score = score_proposal(*run, &out.s_hat, c);
            if config.fuse_class_score {
                score *= probs[c];
            }
            proposals.push(Proposal {
                t_start: run.first as f64 * delta,
                t_end: (run.last + 1) as f64 * delta,
                score,
                class: c,
            });
        }
    }
    Ok(nms(&proposals, config.nms_iou))
}

/// Localises every video, in input order.
pub fn localize_all(
    videos: &[VideoRecord],
    params: &ModelParams,
    config: &InferenceConfig,
    gamma: f64,
) -> Result<Vec<ProposalRecord>> {
    let mut records = Vec::new();
    for v in videos {
        records.extend(
            localize(v, params, config, gamma)?
                .iter()
                .map(|p| ProposalRecord::new(&v.video_id, p)),
        );
    }
    Ok(records)
}

pub fn save_proposals(path: &Path, records: &[ProposalRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_proposals(path: &Path) -> Result<Vec<ProposalRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ProposalRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        if !(rec.t_start < rec.t_end) {
            return Err(Error::format(
                format!("{}:{}", path.display(), i + 1),
                format!("segment [{}, {}] is empty", rec.t_start, rec.t_end),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prop(t_start: f64, t_end: f64, score: f64, class: usize) -> Proposal {
        Proposal {
            t_start,
            t_end,
            score,
            class,
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classes_above(&[0.5, 0.1, 0.4], 0.2), vec![0]);
        assert_eq!(classes_above(&[0.1, 0.15, 0.75], 0.2), vec![1]);
        assert_eq!(classes_above(&[0.3, 0.2, 0.1, 0.4], 1e-9), vec![0, 1, 2]);
    }

    #[test]
    fn segment_examples() {
        assert_eq!(
            extract_segments(&[0.1, 0.9, 0.95, 0.2], &[0.5]),
            vec![SnippetRun { first: 1, last: 2 }]
        );
        assert!(extract_segments(&[0.1, 0.2], &[0.5, 0.7]).is_empty());
        let full = extract_segments(&[1.0; 5], &[0.3, 0.6]);
        assert_eq!(full, vec![SnippetRun { first: 0, last: 4 }; 2]);
        assert_eq!(
            extract_segments(&[0.6, 0.2, 0.7, 0.8], &[0.5]),
            vec![
                SnippetRun { first: 0, last: 0 },
                SnippetRun { first: 2, last: 3 }
            ]
        );
    }

    #[test]
    fn score_examples() {
        let mut s = Tensor::zeros(&[12, 2]);
        for t in 4..8 {
            s.set(t, 0, 1.0);
        }
        let run = SnippetRun { first: 4, last: 7 };
        assert_eq!(score_proposal(run, &s, 0), 1.0);
        assert_eq!(score_proposal(run, &Tensor::full(&[12, 2], 0.3), 1), 0.0);
        // whole video: no outer region
        assert_eq!(
            score_proposal(SnippetRun { first: 0, last: 11 }, &s, 0),
            4.0 / 12.0
        );
    }

    #[test]
    fn nms_examples() {
        let kept = nms(&[prop(0.0, 10.0, 0.9, 0), prop(1.0, 9.0, 0.8, 0)], 0.5);
        assert_eq!(kept, vec![prop(0.0, 10.0, 0.9, 0)]);
        let disjoint = [
            prop(0.0, 1.0, 0.2, 0),
            prop(2.0, 3.0, 0.9, 0),
            prop(0.0, 1.0, 0.5, 1),
        ];
        assert_eq!(nms(&disjoint, 0.5).len(), 3);
        // score tie: earlier start wins, then shorter
        let tie = [
            prop(1.0, 5.0, 0.5, 0),
            prop(0.0, 5.0, 0.5, 0),
            prop(0.0, 4.5, 0.5, 0),
        ];
        assert_eq!(nms(&tie, 0.5), vec![prop(0.0, 4.5, 0.5, 0)]);
    }

    #[test]
    fn proposals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let recs = vec![ProposalRecord::new("v", &prop(0.5, 2.25, 0.1 + 0.2, 3))];
        save_proposals(&path, &recs).unwrap();
        assert_eq!(load_proposals(&path).unwrap(), recs);
        std::fs::write(
            &path,
            "{\"video_id\":\"v\",\"t_start\":2,\"t_end\":1,\"score\":0,\"class\":0}\n",
        )
        .unwrap();
        assert!(load_proposals(&path)
            .unwrap_err()
            .to_string()
            .contains("p.jsonl:1"));
    }
}
