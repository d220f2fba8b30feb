//! Training objectives, recorded on a [`Graph`] so they can be differentiated
//! with respect to the model activations.
//!
//! Masks, ambiguity flags and the FBD/MPCL weights are targets: they are
//! computed from stop-gradient values and never carry gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{CategorySet, ComplementaryMask};
use crate::model::topk_count;
use crate::numeric::{Graph, Tensor, Var, DEFAULT_EPS};

/// Which optional terms join the MIL loss (which is always on).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LossFlags {
    pub cl: bool,
    pub pcl: bool,
    pub fbd: bool,
    pub mpcl: bool,
}

impl LossFlags {
    pub const MIL_ONLY: LossFlags = LossFlags {
        cl: false,
        pcl: false,
        fbd: false,
        mpcl: false,
    };

    /// `L_MIL + L_CL + L_MPCL + L_FBD`.
    pub const FULL: LossFlags = LossFlags {
        cl: true,
        pcl: false,
        fbd: true,
        mpcl: true,
    };

    /// Rows of the ablation matrix that this crate reproduces, keyed by
    /// experiment number. Row 2 (hard pseudo labels) is not part of it.
    pub fn ablation_matrix() -> [(u32, LossFlags); 6] {
        let f = |cl, pcl, fbd, mpcl| LossFlags { cl, pcl, fbd, mpcl };
        [
            (1, f(false, false, false, false)),
            (3, f(true, false, false, false)),
            (4, f(true, true, false, false)),
            (5, f(true, false, true, false)),
            (6, f(true, true, true, false)),
            (7, f(true, false, true, true)),
        ]
    }

    pub fn needs_multiscale(&self) -> bool {
        self.mpcl
    }
}

impl fmt::Display for LossFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.cl, "cl"),
            (self.pcl, "pcl"),
            (self.fbd, "fbd"),
            (self.mpcl, "mpcl"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if names.is_empty() {
            f.write_str("mil")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for LossFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = LossFlags::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "cl" => flags.cl = true,
                "pcl" => flags.pcl = true,
                "fbd" => flags.fbd = true,
                "mpcl" => flags.mpcl = true,
                "mil" | "none" => {}
                other => return Err(Error::Config(format!("unknown loss flag `{other}`"))),
            }
        }
        Ok(flags)
    }
}

impl Serialize for LossFlags {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LossFlags {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Component values of one objective evaluation. Disabled components are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_mil: f64,
    pub l_cl: f64,
    pub l_pcl: f64,
    pub l_fbd: f64,
    pub l_mpcl: f64,
    pub l_total: f64,
    pub flags: LossFlags,
}

impl LossReport {
    pub fn components(&self) -> [(&'static str, f64); 5] {
        [
            ("l_mil", self.l_mil),
            ("l_cl", self.l_cl),
            ("l_pcl", self.l_pcl),
            ("l_fbd", self.l_fbd),
            ("l_mpcl", self.l_mpcl),
        ]
    }

    /// Fills `l_total` from the enabled components.
    pub fn finish(mut self) -> Self {
        self.l_total = total_loss(&self, self.flags);
        self
    }

    /// Fails on the first non-finite component.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self
            .components()
            .into_iter()
            .chain([("l_total", self.l_total)])
        {
            if !v.is_finite() {
                return Err(Error::NumericalAbort {
                    component: name,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Element-wise mean of several reports sharing the same flags.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport {
            flags: reports.first().map(|r| r.flags).unwrap_or_default(),
            ..Default::default()
        };
        for r in reports {
            out.l_mil += r.l_mil / n;
            out.l_cl += r.l_cl / n;
            out.l_pcl += r.l_pcl / n;
            out.l_fbd += r.l_fbd / n;
            out.l_mpcl += r.l_mpcl / n;
        }
        out.finish()
    }
}

/// Unweighted sum of the MIL loss and every enabled component.
pub fn total_loss(report: &LossReport, flags: LossFlags) -> f64 {
    if flags.pcl && flags.mpcl {
        log::info!("both PCL and MPCL enabled; summing both");
    }
    let mut total = report.l_mil;
    for (on, v) in [
        (flags.cl, report.l_cl),
        (flags.pcl, report.l_pcl),
        (flags.fbd, report.l_fbd),
        (flags.mpcl, report.l_mpcl),
    ] {
        if on {
            total += v;
        }
    }
    total
}

/// Video-level label with the background appended: `[y_1 .. y_C, bg]`.
pub fn extend_labels(labels: &[bool], background: bool) -> Vec<f64> {
    labels
        .iter()
        .map(|&y| if y { 1.0 } else { 0.0 })
        .chain([if background { 1.0 } else { 0.0 }])
        .collect()
}

fn cross_entropy_pooled(g: &mut Graph, scores: Var, target: &[f64], gamma: f64) -> Result<Var> {
    let total: f64 = target.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput(
            "all-zero label vector in MIL loss".into(),
        ));
    }
    let t_len = g.value(scores).rows();
    let pooled = g.topk_mean(scores, topk_count(t_len, gamma))?;
    let log_probs = g.log_softmax(pooled)?;
    let normalized: Vec<f64> = target.iter().map(|y| y / total).collect();
    let target = g.constant(Tensor::new(vec![1, normalized.len()], normalized)?);
    let weighted = g.mul(log_probs, target)?;
    let sum = g.sum(weighted);
    Ok(g.scale(sum, -1.0))
}

/// Video-level cross-entropy on top-k pooled scores, once on the raw
/// activations against the label with background, once on the
/// background-suppressed activations against the label without it.
pub fn mil_loss(g: &mut Graph, s: Var, s_hat: Var, labels: &[bool], gamma: f64) -> Result<Var> {
    let with_bg = cross_entropy_pooled(g, s, &extend_labels(labels, true), gamma)?;
    let without_bg = cross_entropy_pooled(g, s_hat, &extend_labels(labels, false), gamma)?;
    g.add(with_bg, without_bg)
}

/// `-(1/T) * sum_t sum_c w[t][c] * log(1 - p[t][c])`, the shared shape of the
/// complementary losses.
fn weighted_complement_log(g: &mut Graph, p: Var, weights: Tensor, scale: f64) -> Result<Var> {
    let one_minus = g.affine(p, -1.0, 1.0);
    let logs = g.log(one_minus, DEFAULT_EPS);
    let w = g.constant(weights);
    let prod = g.mul(logs, w)?;
    let sum = g.sum(prod);
    Ok(g.scale(sum, -scale))
}

fn zero(g: &mut Graph) -> Var {
    g.constant(Tensor::scalar(0.0))
}

/// Pushes down every category absent from the video label, on every snippet.
pub fn cl_loss(g: &mut Graph, p: Var, labels: &[bool]) -> Result<Var> {
    let (t_len, cats) = (g.value(p).rows(), g.value(p).cols());
    let y = extend_labels(labels, true);
    if y.len() != cats {
        return Err(Error::shape(
            "cl_loss",
            format!("{} labels for {cats} categories", y.len()),
        ));
    }
    let mut w = Tensor::zeros(&[t_len, cats]);
    for t in 0..t_len {
        for (c, &yc) in y.iter().enumerate() {
            w.set(t, c, 1.0 - yc);
        }
    }
    weighted_complement_log(g, p, w, 1.0 / t_len as f64)
}

/// Pushes down the pseudo complementary categories of unambiguous snippets.
pub fn pcl_loss(
    g: &mut Graph,
    p: Var,
    mask: &ComplementaryMask,
    flags: &[bool],
    set: &CategorySet,
) -> Result<Var> {
    let (t_len, cats) = (g.value(p).rows(), g.value(p).cols());
    check_mask("pcl_loss", mask, flags, t_len, cats)?;
    let n = flags.iter().filter(|&&f| !f).count();
    if n == 0 {
        log::warn!("pcl_loss: no unambiguous snippets, loss is 0");
        return Ok(zero(g));
    }
    let mut w = Tensor::zeros(&[t_len, cats]);
    for t in (0..t_len).filter(|&t| !flags[t]) {
        for &c in set.members() {
            w.set(t, c, 1.0 - mask.r.at(t, c));
        }
    }
    weighted_complement_log(g, p, w, 1.0 / n as f64)
}

fn check_mask(
    op: &'static str,
    mask: &ComplementaryMask,
    flags: &[bool],
    t_len: usize,
    cats: usize,
) -> Result<()> {
    if mask.r.shape() != [t_len, cats] || flags.len() != t_len {
        return Err(Error::shape(
            op,
            format!(
                "mask {:?} / {} flags for [{t_len}, {cats}]",
                mask.r.shape(),
                flags.len()
            ),
        ));
    }
    Ok(())
}

/// `exp(-l * log(l / j))` on inputs clamped to `[eps, 1 - eps]`. Exceeds 1
/// whenever `j > l`.
pub fn fbd_weight(l: f64, j: f64) -> f64 {
    let clamp = |x: f64| x.clamp(DEFAULT_EPS, 1.0 - DEFAULT_EPS);
    let (l, j) = (clamp(l), clamp(j));
    (-l * (l / j).ln()).exp()
}

/// Weighted BCE of `pred` against the fixed `target`, summed with per-row
/// weights `w`.
fn weighted_bce(g: &mut Graph, pred: Var, target: Var, w: &Tensor) -> Result<Var> {
    let log_p = g.log(pred, DEFAULT_EPS);
    let one_minus = g.affine(pred, -1.0, 1.0);
    let log_q = g.log(one_minus, DEFAULT_EPS);
    let target_q = g.affine(target, -1.0, 1.0);
    let a = g.mul(target, log_p)?;
    let b = g.mul(target_q, log_q)?;
    let ll = g.add(a, b)?;
    let wv = g.constant(w.clone());
    let weighted = g.mul(ll, wv)?;
    let sum = g.sum(weighted);
    Ok(g.scale(sum, -1.0))
}

/// Mutual consistency between the attention branch's background estimate
/// `b: [T, 1]` and the classifier's background probability `p_bg: [T, 1]`
/// on ambiguous snippets. In each direction the other branch is a fixed
/// target and the divergence weight is a fixed coefficient.
pub fn fbd_loss(g: &mut Graph, b: Var, p_bg: Var, flags: &[bool]) -> Result<Var> {
    if g.shape(b) != g.shape(p_bg) || g.value(b).len() != flags.len() {
        return Err(Error::shape(
            "fbd_loss",
            format!(
                "{:?} vs {:?} with {} flags",
                g.shape(b),
                g.shape(p_bg),
                flags.len()
            ),
        ));
    }
    let n = flags.iter().filter(|&&f| f).count();
    if n == 0 {
        log::debug!("fbd_loss: no ambiguous snippets, loss is 0");
        return Ok(zero(g));
    }
    let b_target = g.detach(b)?;
    let p_target = g.detach(p_bg)?;
    let (bv, pv) = (
        g.value(b_target).data().to_vec(),
        g.value(p_target).data().to_vec(),
    );
    let weights = |pred: &[f64], target: &[f64]| {
        let w: Vec<f64> = flags
            .iter()
            .zip(pred.iter().zip(target))
            .map(|(&f, (&x, &y))| if f { fbd_weight(x, y) / n as f64 } else { 0.0 })
            .collect();
        Tensor::column(&w)
    };
    let w_b = weights(&bv, &pv);
    let w_p = weights(&pv, &bv);
    let attention_side = weighted_bce(g, b, p_target, &w_b)?;
    let classifier_side = weighted_bce(g, p_bg, b_target, &w_p)?;
    g.add(attention_side, classifier_side)
}

/// Multi-scale pseudo complementary loss on the fused probabilities `j`,
/// with each cell down-weighted by `exp(-variance)` across scales.
pub fn mpcl_loss(
    g: &mut Graph,
    j: Var,
    sigma: &Tensor,
    mask: &ComplementaryMask,
    flags: &[bool],
    set: &CategorySet,
) -> Result<Var> {
    let (t_len, cats) = (g.value(j).rows(), g.value(j).cols());
    check_mask("mpcl_loss", mask, flags, t_len, cats)?;
    if sigma.shape() != [t_len, cats] {
        return Err(Error::shape(
            "mpcl_loss",
            format!("variance {:?}", sigma.shape()),
        ));
    }
    let n = flags.iter().filter(|&&f| !f).count();
    if n == 0 {
        log::warn!("mpcl_loss: no unambiguous snippets, loss is 0");
        return Ok(zero(g));
    }
    let mut w = Tensor::zeros(&[t_len, cats]);
    for t in (0..t_len).filter(|&t| !flags[t]) {
        for &c in set.members() {
            w.set(t, c, (-sigma.at(t, c)).exp() * (1.0 - mask.r.at(t, c)));
        }
    }
    weighted_complement_log(g, j, w, 1.0 / (n as f64 * set.len() as f64))
}
