//! Snippet-level label construction.
//!
//! Everything here works on plain values outside any compute graph: labels
//! are targets for the losses, never differentiated through.
//!
//! Category indices are zero-based; the background is index `C` (the last
//! column of every `[T, C+1]` activation matrix).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, resample_taps, Tensor, DEFAULT_EPS};

/// Categories a video's snippets may still belong to: its labelled classes
/// plus the background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategorySet {
    members: Vec<usize>,
    background: usize,
}

impl CategorySet {
    /// From a multi-hot video label of length `C`.
    pub fn from_labels(labels: &[bool]) -> Result<Self> {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(c, &y)| y.then_some(c))
            .collect();
        if members.is_empty() {
            return Err(Error::InvalidInput("video has no positive label".into()));
        }
        members.push(labels.len());
        Ok(CategorySet {
            members,
            background: labels.len(),
        })
    }

    /// Raw constructor; `members` must include `background`.
    pub fn new(mut members: Vec<usize>, background: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if !members.contains(&background) || members.iter().any(|&c| c > background) {
            return Err(Error::InvalidInput(format!(
                "category set {members:?} must contain background {background} and nothing above it"
            )));
        }
        if members.len() < 2 {
            return Err(Error::InvalidInput(
                "category set has no foreground class".into(),
            ));
        }
        Ok(CategorySet {
            members,
            background,
        })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .copied()
            .filter(move |&c| c != self.background)
    }

    pub fn background(&self) -> usize {
        self.background
    }

    pub fn contains(&self, c: usize) -> bool {
        self.members.binary_search(&c).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Direction of the entropy comparison that flags a snippet as ambiguous.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityRule {
    /// `f = 1` when entropy is at least `theta`: high entropy means ambiguous.
    #[default]
    HighEntropy,
    /// `f = 1` when entropy is below `theta`.
    LowEntropy,
}

/// Foreground and background mass of a softmax restricted to `set`.
pub fn restricted_fg_bg_probs(row: &[f64], set: &CategorySet) -> (f64, f64) {
    let logits: Vec<f64> = set.members().iter().map(|&c| row[c]).collect();
    let lse = log_sum_exp(&logits);
    let bg = (row[set.background()] - lse).exp();
    let fg: f64 = set.foreground().map(|c| (row[c] - lse).exp()).sum();
    (fg, bg)
}

/// Binary entropy in nats, with `0 * log 0 = 0` via the clamp.
pub fn fg_bg_entropy(fg: f64, bg: f64) -> f64 {
    let term = |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            -x * x.max(DEFAULT_EPS).ln()
        }
    };
    term(fg) + term(bg)
}

pub fn identify_ambiguous(entropy: &[f64], theta: f64, rule: AmbiguityRule) -> Vec<bool> {
    entropy
        .iter()
        .map(|&h| match rule {
            AmbiguityRule::HighEntropy => h >= theta,
            AmbiguityRule::LowEntropy => h < theta,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmbiguityState {
    pub entropy: Vec<f64>,
    pub theta: f64,
    /// `true` for ambiguous snippets.
    pub flags: Vec<bool>,
    pub set: CategorySet,
}

impl AmbiguityState {
    pub fn unambiguous(&self) -> usize {
        self.flags.iter().filter(|&&f| !f).count()
    }

    pub fn ambiguous(&self) -> usize {
        self.flags.len() - self.unambiguous()
    }
}

/// Entropy and ambiguity flags for every snippet of `s: [T, C+1]`.
pub fn ambiguity(s: &Tensor, set: &CategorySet, theta: f64, rule: AmbiguityRule) -> AmbiguityState {
    let entropy: Vec<f64> = (0..s.rows())
        .map(|t| {
            let (fg, bg) = restricted_fg_bg_probs(s.row(t), set);
            fg_bg_entropy(fg, bg)
        })
        .collect();
    let flags = identify_ambiguous(&entropy, theta, rule);
    AmbiguityState {
        entropy,
        theta,
        flags,
        set: set.clone(),
    }
}

/// Pseudo complementary labels: `r[t][c] = 0` marks category `c` as excluded
/// for snippet `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplementaryMask {
    pub r: Tensor,
    /// Mean activation over the category set, per snippet.
    pub mu: Vec<f64>,
    /// Number of unambiguous snippets.
    pub unambiguous: usize,
}

impl ComplementaryMask {
    pub fn is_excluded(&self, t: usize, c: usize) -> bool {
        self.r.at(t, c) == 0.0
    }

    pub fn excluded_count(&self) -> usize {
        self.r.data().iter().filter(|&&v| v == 0.0).count()
    }
}

/// Excludes, for every unambiguous snippet, the categories of `set` whose
/// activation is below the snippet's mean over `set`, then resolves any
/// remaining foreground/background co-retention by dropping the weaker side.
///
/// The background competes against the strongest retained foreground
/// category; on a tie the background is dropped.
pub fn assign_pseudo_complementary(
    s: &Tensor,
    flags: &[bool],
    set: &CategorySet,
) -> Result<ComplementaryMask> {
    if set.foreground().next().is_none() {
        return Err(Error::InvalidInput(
            "category set has no foreground class".into(),
        ));
    }
    if flags.len() != s.rows() {
        return Err(Error::shape(
            "assign_pseudo_complementary",
            format!("{} flags for {} snippets", flags.len(), s.rows()),
        ));
    }
    let (t_len, cats) = (s.rows(), s.cols());
    let bg = set.background();
    let mut r = Tensor::full(&[t_len, cats], 1.0);
    let mut mu = Vec::with_capacity(t_len);
    for (t, &ambiguous) in flags.iter().enumerate() {
        let row = s.row(t);
        let mean = set.members().iter().map(|&c| row[c]).sum::<f64>() / set.len() as f64;
        mu.push(mean);
        if ambiguous {
            continue;
        }
        for &c in set.members() {
            if row[c] < mean {
                r.set(t, c, 0.0);
            }
        }
        let best_fg = set
            .foreground()
            .filter(|&c| r.at(t, c) == 1.0)
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if r.at(t, bg) == 1.0 && best_fg.is_finite() {
            if row[bg] > best_fg {
                for c in set.foreground() {
                    r.set(t, c, 0.0);
                }
            } else {
                r.set(t, bg, 0.0);
            }
        }
    }
    Ok(ComplementaryMask {
        r,
        mu,
        unambiguous: flags.iter().filter(|&&f| !f).count(),
    })
}

/// Eager linear resampling of the rows of `t` to `len` rows.
pub fn resample_rows(t: &Tensor, len: usize) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(&[len, cols]);
    for i in 0..len {
        let dst = out.row_mut(i);
        for (src, w) in resample_taps(rows, len, i) {
            for (o, &x) in dst.iter_mut().zip(t.row(src)) {
                *o += w * x;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleBundle {
    /// Elementwise mean of the per-scale probability sequences.
    pub s_mu: Tensor,
    /// Elementwise population variance of the per-scale probability sequences.
    pub s_sigma: Tensor,
    pub r_ddot: ComplementaryMask,
    pub f_ddot: Vec<bool>,
    pub ambiguity: AmbiguityState,
}

/// Log of the fused probabilities, used as activations when the single-scale
/// labelling rules are applied to a fused sequence. Restricted softmax and
/// below-mean exclusion are both invariant to a per-row shift, so for a
/// single scale `ln P` yields exactly the masks of the raw activations.
pub fn fused_log_probs(s_mu: &Tensor) -> Tensor {
    s_mu.map(|p| p.max(DEFAULT_EPS).ln())
}

/// Fuses per-scale probability sequences (already resampled to a common
/// length) and builds the multi-scale ambiguity flags and mask.
pub fn multiscale_fuse(
    probs: &[Tensor],
    set: &CategorySet,
    theta: f64,
    rule: AmbiguityRule,
) -> Result<MultiScaleBundle> {
    let first = probs
        .first()
        .ok_or_else(|| Error::InvalidInput("no scales to fuse".into()))?;
    if probs.len() < 2 {
        return Err(Error::InvalidInput(
            "multi-scale fusion needs at least two scales".into(),
        ));
    }
    if let Some(bad) = probs.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::shape(
            "multiscale_fuse",
            format!("{:?} vs {:?}", first.shape(), bad.shape()),
        ));
    }
    let n = probs.len() as f64;
    let mut s_mu = Tensor::zeros(first.shape());
    let mut s_sigma = Tensor::zeros(first.shape());
    for i in 0..first.len() {
        let mean = probs.iter().map(|p| p.data()[i]).sum::<f64>() / n;
        let var = probs
            .iter()
            .map(|p| (p.data()[i] - mean).powi(2))
            .sum::<f64>()
            / n;
        s_mu.data_mut()[i] = mean;
        s_sigma.data_mut()[i] = var;
    }
    let logits = fused_log_probs(&s_mu);
    let state = ambiguity(&logits, set, theta, rule);
    let r_ddot = assign_pseudo_complementary(&logits, &state.flags, set)?;
    Ok(MultiScaleBundle {
        s_mu,
        s_sigma,
        r_ddot,
        f_ddot: state.flags.clone(),
        ambiguity: state,
    })
}

/// Threshold pseudo labels used as the audit baseline: snippets with
/// attention at least `tau` take the arg-max foreground class of `s_hat`
/// (lowest index on ties), the rest take the background.
pub fn assign_threshold_pseudo_labels(a: &[f64], s_hat: &Tensor, tau: f64) -> Vec<usize> {
    let bg = s_hat.cols() - 1;
    a.iter()
        .enumerate()
        .map(|(t, &att)| {
            if att >= tau {
                argmax(&s_hat.row(t)[..bg])
            } else {
                bg
            }
        })
        .collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(labels: &[usize], categories: usize) -> Tensor {
    let mut out = Tensor::zeros(&[labels.len(), categories]);
    for (t, &c) in labels.iter().enumerate() {
        out.set(t, c, 1.0);
    }
    out
}
