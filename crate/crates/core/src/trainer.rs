//! Optimisation loop: per-video objectives on shared parameters, batch-mean
//! gradients, Adam updates, checkpoints, loss log and label audits.
//!
//! The multi-scale passes (dense and sparse sampling) are only recorded when
//! the multi-scale loss is enabled; no other term reads them.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{sample_snippets, Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::evaluation::{
    deterministic_exclusion_precision, mask_precision, pseudo_label_precision, AuditCounts,
};
use crate::labeling::{
    ambiguity, assign_pseudo_complementary, assign_threshold_pseudo_labels, multiscale_fuse,
    resample_rows, CategorySet,
};
use crate::losses::{cl_loss, fbd_loss, mil_loss, mpcl_loss, pcl_loss, LossReport};
use crate::model::{forward, forward_graph, ActivationVars, ModelConfig, ModelParams, ModelShape};
use crate::numeric::{Graph, Tensor, Var};
use crate::optim::Adam;
use crate::rng::{substream, Stream};

/// Records every enabled loss for one video on `g`, given its base-scale
/// activations and, when the multi-scale loss is on, the probability
/// sequences of all scales resampled to the base length.
pub fn assemble_objective(
    g: &mut Graph,
    act: &ActivationVars,
    scale_probs: &[Var],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(Var, LossReport)> {
    let flags = cfg.flags;
    let set = CategorySet::from_labels(labels)?;
    let mut report = LossReport {
        flags,
        ..Default::default()
    };
    let mut terms = Vec::with_capacity(5);

    let mil = mil_loss(g, act.s, act.s_hat, labels, cfg.gamma)?;
    report.l_mil = g.value(mil).item();
    terms.push(mil);

    if flags.cl {
        let l = cl_loss(g, act.p, labels)?;
        report.l_cl = g.value(l).item();
        terms.push(l);
    }
    if flags.pcl || flags.fbd {
        let s_target = g.detach(act.s)?;
        let s = g.value(s_target).clone();
        let state = ambiguity(&s, &set, cfg.theta, cfg.ambiguity_rule);
        if flags.pcl {
            let mask = assign_pseudo_complementary(&s, &state.flags, &set)?;
            let l = pcl_loss(g, act.p, &mask, &state.flags, &set)?;
            report.l_pcl = g.value(l).item();
            terms.push(l);
        }
        if flags.fbd {
            let bg = set.background();
            let b = g.affine(act.a, -1.0, 1.0);
            let p_bg = g.slice_cols(act.p, bg, bg + 1)?;
            let l = fbd_loss(g, b, p_bg, &state.flags)?;
            report.l_fbd = g.value(l).item();
            terms.push(l);
        }
    }
    if flags.mpcl {
        let mut values = Vec::with_capacity(scale_probs.len());
        for &v in scale_probs {
            let d = g.detach(v)?;
            values.push(g.value(d).clone());
        }
        let fused = multiscale_fuse(&values, &set, cfg.theta, cfg.ambiguity_rule)?;
        let mut j = scale_probs[0];
        for &v in &scale_probs[1..] {
            j = g.add(j, v)?;
        }
        let j = g.scale(j, 1.0 / scale_probs.len() as f64);
        let l = mpcl_loss(g, j, &fused.s_sigma, &fused.r_ddot, &fused.f_ddot, &set)?;
        report.l_mpcl = g.value(l).item();
        terms.push(l);
    }

    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    report.l_total = g.value(total).item();
    report.check_finite()?;
    Ok((total, report))
}

/// Builds the full objective of one video: forward passes at every scale
/// on the parameters already bound to `g`, then [`assemble_objective`].
pub fn video_objective<R: Rng>(
    g: &mut Graph,
    params: &ModelParams,
    vars: &crate::model::ParamVars,
    video: &VideoRecord,
    cfg: &TrainConfig,
    mut dropout: Option<&mut R>,
) -> Result<(Var, LossReport)> {
    let base = sample_snippets(&video.features, cfg.snippets)?;
    let act = forward_graph(g, params, vars, &base.features, dropout.as_deref_mut())?;
    let mut scale_probs = Vec::new();
    if cfg.flags.needs_multiscale() {
        for len in cfg.scale_lengths() {
            if len == cfg.snippets {
                scale_probs.push(act.p);
                continue;
            }
            let x = sample_snippets(&video.features, len)?;
            let other = forward_graph(g, params, vars, &x.features, dropout.as_deref_mut())?;
            scale_probs.push(g.resample(other.p, cfg.snippets)?);
        }
    }
    assemble_objective(g, &act, &scale_probs, &video.labels, cfg)
}

fn batch_mean(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut out = LossReport {
        flags: reports[0].flags,
        ..Default::default()
    };
    for r in reports {
        out.l_mil += r.l_mil / n;
        out.l_cl += r.l_cl / n;
        out.l_pcl += r.l_pcl / n;
        out.l_fbd += r.l_fbd / n;
        out.l_mpcl += r.l_mpcl / n;
        out.l_total += r.l_total / n;
    }
    out
}

/// Parameters, optimiser and random streams of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    params: ModelParams,
    adam: Adam,
    dropout_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        model: &ModelConfig,
        config: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate_shape()?;
        let shape = ModelShape::new(feature_dim, num_classes, model)?;
        let params = ModelParams::init(shape, model.dropout, &mut substream(seed, Stream::Init));
        Ok(Trainer {
            adam: Adam::new(config.learning_rate, config.weight_decay, params.tensors()),
            params,
            config: config.clone(),
            dropout_rng: substream(seed, Stream::Dropout),
            batch_rng: substream(seed, Stream::Batch),
            iteration: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One update on `batch`: gradients of every video are averaged in
    /// batch order, then Adam takes a single step.
    pub fn train_step(&mut self, batch: &[&VideoRecord]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Tensor> = self
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        let mut reports = Vec::with_capacity(batch.len());
        for video in batch {
            let mut g = Graph::new();
            let vars = self.params.bind(&mut g);
            let (loss, report) = video_objective(
                &mut g,
                &self.params,
                &vars,
                video,
                &self.config,
                Some(&mut self.dropout_rng),
            )?;
            let mut gr = g.backward(loss)?;
            for (acc, var) in grads.iter_mut().zip(vars.0) {
                let part = gr.take(var).expect("parameters are trainable leaves");
                for (a, p) in acc.data_mut().iter_mut().zip(part.data()) {
                    *a += scale * p;
                }
            }
            reports.push(report);
        }
        if let Some(bad) = grads.iter().flat_map(|t| t.data()).find(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort {
                component: "gradient",
                value: *bad,
            });
        }
        self.adam.step(self.params.tensors_mut(), &grads)?;
        self.iteration += 1;
        Ok(batch_mean(&reports))
    }

    /// Draws a batch (without replacement, kept in dataset order) and steps.
    pub fn step(&mut self, videos: &[VideoRecord]) -> Result<LossReport> {
        if videos.is_empty() {
            return Err(Error::InvalidInput("no training videos".into()));
        }
        let n = self.config.batch_size.min(videos.len());
        let mut picked = index::sample(&mut self.batch_rng, videos.len(), n).into_vec();
        picked.sort_unstable();
        let batch: Vec<&VideoRecord> = picked.iter().map(|&i| &videos[i]).collect();
        self.train_step(&batch)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        self.params.to_checkpoint("model.", &mut ckpt);
        self.adam.to_checkpoint(&mut ckpt);
        ckpt.set_meta("iteration", self.iteration);
        ckpt.set_meta("rng.dropout", self.dropout_rng.get_word_pos());
        ckpt.set_meta("rng.batch", self.batch_rng.get_word_pos());
        ckpt
    }

    /// Continues a run from `ckpt`; `seed` and `config` must match the run
    /// that wrote it for the continuation to equal an uninterrupted run.
    pub fn resume(ckpt: &Checkpoint, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate_shape()?;
        let params = ModelParams::from_checkpoint("model.", ckpt)?;
        let mut adam = Adam::new(config.learning_rate, config.weight_decay, params.tensors());
        adam.load_state(ckpt)?;
        let mut dropout_rng = substream(seed, Stream::Dropout);
        dropout_rng.set_word_pos(ckpt.meta("rng.dropout")?);
        let mut batch_rng = substream(seed, Stream::Batch);
        batch_rng.set_word_pos(ckpt.meta("rng.batch")?);
        Ok(Trainer {
            config: config.clone(),
            params,
            adam,
            dropout_rng,
            batch_rng,
            iteration: ckpt.meta("iteration")?,
        })
    }

    /// Trains until `config.iterations`, auditing and checkpointing on the
    /// configured periods. With `out`, writes `loss_log.csv`,
    /// `label_audit.csv`, periodic `checkpoint_<iter>.ckpt` and
    /// `final.ckpt`.
    pub fn run(&mut self, dataset: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
        let cfg = self.config.clone();
        let auditable =
            !dataset.train.is_empty() && dataset.train.iter().all(|v| v.snippet_labels.is_some());
        if !auditable {
            log::info!("training videos lack snippet labels; label audit disabled");
        }
        let mut sink = match out {
            Some(dir) => Some(RunFiles::open(dir, self.iteration > 0)?),
            None => None,
        };
        let mut outcome = TrainOutcome::default();
        while self.iteration < cfg.iterations {
            let report = self.step(&dataset.train)?;
            let it = self.iteration;
            if let Some(s) = sink.as_mut() {
                s.log_loss(it, &report)?;
            }
            outcome.losses.push((it, report));
            if it.is_multiple_of(100) || it == cfg.iterations {
                log::info!("iter {it}: total {:.5}", report.l_total);
            }
            let audit_due =
                (cfg.audit_every > 0 && it.is_multiple_of(cfg.audit_every)) || it == cfg.iterations;
            if auditable && audit_due {
                let rows = label_audit(&self.params, &dataset.train, &cfg, it)?;
                if let Some(s) = sink.as_mut() {
                    s.log_audit(&rows)?;
                }
                outcome.audit.extend(rows);
            }
            if let Some(dir) = out {
                if cfg.checkpoint_every > 0 && it.is_multiple_of(cfg.checkpoint_every) {
                    self.checkpoint()
                        .save(&dir.join(format!("checkpoint_{it:06}.ckpt")))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join("final.ckpt"))?;
        }
        outcome.params = Some(self.params.clone());
        Ok(outcome)
    }
}

/// Losses and audits collected by [`Trainer::run`].
#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub params: Option<ModelParams>,
    pub losses: Vec<(usize, LossReport)>,
    pub audit: Vec<AuditRow>,
}

/// Convenience wrapper: a fresh trainer on `dataset`, run to completion.
pub fn train(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<(ModelParams, TrainOutcome)> {
    let mut trainer = Trainer::new(
        dataset.feature_dim,
        dataset.num_classes,
        model,
        config,
        seed,
    )?;
    let outcome = trainer.run(dataset, out)?;
    Ok((trainer.into_params(), outcome))
}

pub const LOSS_LOG_HEADER: &str = "iteration,l_mil,l_cl,l_pcl,l_fbd,l_mpcl,l_total";
pub const AUDIT_HEADER: &str = "iteration,method,precision,coverage";

pub fn loss_log_line(iteration: usize, r: &LossReport) -> String {
    format!(
        "{iteration},{},{},{},{},{},{}",
        r.l_mil, r.l_cl, r.l_pcl, r.l_fbd, r.l_mpcl, r.l_total
    )
}

struct RunFiles {
    loss: std::fs::File,
    audit: std::fs::File,
    dir: std::path::PathBuf,
}

impl RunFiles {
    fn open(dir: &Path, append: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str, header: &str| -> Result<std::fs::File> {
            let path = dir.join(name);
            let existing = append && path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .append(existing)
                .write(true)
                .truncate(!existing)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if !existing {
                writeln!(f, "{header}").map_err(|e| Error::io(&path, e))?;
            }
            Ok(f)
        };
        Ok(RunFiles {
            loss: open("loss_log.csv", LOSS_LOG_HEADER)?,
            audit: open("label_audit.csv", AUDIT_HEADER)?,
            dir: dir.to_path_buf(),
        })
    }

    fn log_loss(&mut self, it: usize, r: &LossReport) -> Result<()> {
        writeln!(self.loss, "{}", loss_log_line(it, r))
            .map_err(|e| Error::io(self.dir.join("loss_log.csv"), e))
    }

    fn log_audit(&mut self, rows: &[AuditRow]) -> Result<()> {
        for row in rows {
            writeln!(self.audit, "{}", row.csv_line())
                .map_err(|e| Error::io(self.dir.join("label_audit.csv"), e))?;
        }
        Ok(())
    }
}

/// Label precision of one labelling method at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub iteration: usize,
    /// `PL`, `CL`, `PCL` or `MPCL`.
    pub method: &'static str,
    pub counts: AuditCounts,
}

impl AuditRow {
    pub fn precision(&self) -> Option<f64> {
        self.counts.precision()
    }

    pub fn coverage(&self) -> Option<f64> {
        self.counts.coverage()
    }

    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{}",
            self.iteration,
            self.method,
            f(self.precision()),
            f(self.coverage())
        )
    }
}

/// Audits the labels each method would produce right now, in eval mode, on
/// the base-scale sampling of `videos` (which need per-snippet ground truth).
pub fn label_audit(
    params: &ModelParams,
    videos: &[VideoRecord],
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<Vec<AuditRow>> {
    let mut pl = AuditCounts::default();
    let mut cl = AuditCounts::default();
    let mut pcl = AuditCounts::default();
    let mut mpcl = AuditCounts::default();
    for video in videos {
        let snippets = video.snippet_labels.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("video {} has no snippet labels", video.video_id))
        })?;
        let bg = params.shape.background();
        let base = sample_snippets(&video.features, cfg.snippets)?;
        let truth: Vec<usize> = base
            .source_indices
            .iter()
            .map(|&i| snippets[i].unwrap_or(bg))
            .collect();
        let out = forward(params, &base.features)?;
        let set = CategorySet::from_labels(&video.labels)?;

        pl.add(pseudo_label_precision(
            &assign_threshold_pseudo_labels(&out.a, &out.s_hat, cfg.pl_tau),
            &truth,
        ));
        cl.add(deterministic_exclusion_precision(&video.labels, &truth));

        let state = ambiguity(&out.s, &set, cfg.theta, cfg.ambiguity_rule);
        let mask = assign_pseudo_complementary(&out.s, &state.flags, &set)?;
        pcl.add(mask_precision(&mask, &state.flags, set.len(), &truth));

        let mut probs = Vec::new();
        for len in cfg.scale_lengths() {
            if len == cfg.snippets {
                probs.push(out.p.clone());
            } else {
                let x = sample_snippets(&video.features, len)?;
                probs.push(resample_rows(
                    &forward(params, &x.features)?.p,
                    cfg.snippets,
                ));
            }
        }
        let fused = multiscale_fuse(&probs, &set, cfg.theta, cfg.ambiguity_rule)?;
        mpcl.add(mask_precision(
            &fused.r_ddot,
            &fused.f_ddot,
            set.len(),
            &truth,
        ));
    }
    Ok([("PL", pl), ("CL", cl), ("PCL", pcl), ("MPCL", mpcl)]
        .into_iter()
        .map(|(method, counts)| AuditRow {
            iteration,
            method,
            counts,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;
    use crate::losses::LossFlags;

    fn tiny() -> (Dataset, TrainConfig) {
        let spec = SyntheticSpec {
            train_videos: 6,
            test_videos: 2,
            length: [16, 20],
            instances: [1, 2],
            duration: [3, 5],
            ..Default::default()
        };
        let cfg = TrainConfig {
            snippets: 8,
            gamma: 4.0,
            batch_size: 3,
            iterations: 4,
            ..Default::default()
        };
        (spec.generate().unwrap(), cfg)
    }

    #[test]
    fn zero_iterations_return_initial_params() {
        let (data, mut cfg) = tiny();
        cfg.iterations = 0;
        let model = ModelConfig::default();
        let (params, outcome) = train(&data, &model, &cfg, 3, None).unwrap();
        let fresh = Trainer::new(data.feature_dim, data.num_classes, &model, &cfg, 3).unwrap();
        assert_eq!(&params, fresh.params());
        assert!(outcome.losses.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (data, mut cfg) = tiny();
        cfg.learning_rate = 0.0;
        cfg.flags = LossFlags::FULL;
        let mut t = Trainer::new(
            data.feature_dim,
            data.num_classes,
            &ModelConfig::default(),
            &cfg,
            1,
        )
        .unwrap();
        let before = t.params().clone();
        for _ in 0..3 {
            t.step(&data.train).unwrap();
        }
        assert_eq!(t.params(), &before);
    }

    #[test]
    fn full_flags_are_deterministic() {
        let (data, cfg) = tiny();
        let run = || {
            let mut t = Trainer::new(
                data.feature_dim,
                data.num_classes,
                &ModelConfig::default(),
                &cfg,
                9,
            )
            .unwrap();
            (0..3)
                .map(|_| t.step(&data.train).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn total_is_sum_of_enabled_components() {
        let (data, mut cfg) = tiny();
        for (_, flags) in LossFlags::ablation_matrix() {
            cfg.flags = flags;
            let mut t = Trainer::new(
                data.feature_dim,
                data.num_classes,
                &ModelConfig::default(),
                &cfg,
                2,
            )
            .unwrap();
            let r = t.step(&data.train).unwrap();
            assert!((r.l_total - crate::losses::total_loss(&r, flags)).abs() < 1e-9);
            if !flags.mpcl {
                assert_eq!(r.l_mpcl, 0.0);
            }
            if !flags.cl {
                assert_eq!(r.l_cl, 0.0);
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (data, cfg) = tiny();
        let model = ModelConfig::default();
        let mut straight =
            Trainer::new(data.feature_dim, data.num_classes, &model, &cfg, 5).unwrap();
        let mut interrupted = straight.clone();
        for _ in 0..4 {
            straight.step(&data.train).unwrap();
        }
        for _ in 0..2 {
            interrupted.step(&data.train).unwrap();
        }
        let bytes = interrupted.checkpoint().to_bytes();
        let mut resumed =
            Trainer::resume(&Checkpoint::from_bytes(&bytes).unwrap(), &cfg, 5).unwrap();
        for _ in 0..2 {
            resumed.step(&data.train).unwrap();
        }
        assert_eq!(resumed.params(), straight.params());
        assert_eq!(resumed.iteration(), 4);
    }

    #[test]
    fn scales_share_parameter_gradients() {
        // Joint gradient equals the sum of the gradients reaching three
        // independent copies of the parameters, one copy per scale.
        let (data, mut cfg) = tiny();
        cfg.flags = "mpcl".parse().unwrap();
        let t = Trainer::new(
            data.feature_dim,
            data.num_classes,
            &ModelConfig::default(),
            &cfg,
            4,
        )
        .unwrap();
        let params = t.params();
        let video = &data.train[0];

        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (loss, joint_report) =
            video_objective::<ChaCha8Rng>(&mut g, params, &vars, video, &cfg, None).unwrap();
        let joint = g.backward(loss).unwrap();

        let mut g2 = Graph::new();
        let mut copies = Vec::new();
        let mut probs = Vec::new();
        let mut base = None;
        for len in cfg.scale_lengths() {
            let v = params.bind(&mut g2);
            let x = sample_snippets(&video.features, len).unwrap();
            let act = forward_graph::<ChaCha8Rng>(&mut g2, params, &v, &x.features, None).unwrap();
            if len == cfg.snippets {
                probs.push(act.p);
                base = Some(act);
            } else {
                probs.push(g2.resample(act.p, cfg.snippets).unwrap());
            }
            copies.push(v);
        }
        let (loss2, report) =
            assemble_objective(&mut g2, &base.unwrap(), &probs, &video.labels, &cfg).unwrap();
        assert_eq!(report, joint_report);
        let split = g2.backward(loss2).unwrap();
        for (i, &var) in vars.0.iter().enumerate() {
            let total = joint.get(var).unwrap();
            let mut sum = Tensor::zeros(total.shape());
            for copy in &copies {
                for (s, x) in sum
                    .data_mut()
                    .iter_mut()
                    .zip(split.get(copy.0[i]).unwrap().data())
                {
                    *s += x;
                }
            }
            for (a, b) in total.data().iter().zip(sum.data()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn audit_reports_every_method() {
        let (data, cfg) = tiny();
        let t = Trainer::new(
            data.feature_dim,
            data.num_classes,
            &ModelConfig::default(),
            &cfg,
            0,
        )
        .unwrap();
        let rows = label_audit(t.params(), &data.train, &cfg, 0).unwrap();
        let methods: Vec<&str> = rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, vec!["PL", "CL", "PCL", "MPCL"]);
        assert_eq!(rows[1].precision(), Some(1.0));
        assert_eq!(rows[0].coverage(), Some(1.0));
    }

    #[test]
    fn run_writes_logs_and_checkpoints() {
        let (data, mut cfg) = tiny();
        cfg.checkpoint_every = 2;
        cfg.audit_every = 2;
        let dir = tempfile::tempdir().unwrap();
        let (params, outcome) =
            train(&data, &ModelConfig::default(), &cfg, 0, Some(dir.path())).unwrap();
        let log = std::fs::read_to_string(dir.path().join("loss_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 1 + cfg.iterations);
        assert_eq!(log.lines().next().unwrap(), LOSS_LOG_HEADER);
        let audit = std::fs::read_to_string(dir.path().join("label_audit.csv")).unwrap();
        assert_eq!(audit.lines().count(), 1 + 2 * 4);
        assert_eq!(outcome.audit.len(), 8);
        assert!(dir.path().join("checkpoint_000002.ckpt").exists());
        let ckpt = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
        assert_eq!(
            ModelParams::from_checkpoint("model.", &ckpt).unwrap(),
            params
        );
    }
}
