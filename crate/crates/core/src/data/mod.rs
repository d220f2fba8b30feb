//! Videos, snippet sampling, and a synthetic untrimmed-video generator with
//! full ground truth.

mod io;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::rng::{substream, Stream};

pub use io::{
    import_text_features, load_dataset, load_ground_truth, read_features, save_dataset,
    save_ground_truth, write_features, GroundTruthRecord, DATA_VERSION,
};

/// Frames per snippet; snippet `i` spans `[i, i + 1) * FRAMES_PER_SNIPPET / fps` seconds.
pub const FRAMES_PER_SNIPPET: f64 = 16.0;

/// Snippet features of one video, possibly resampled from a longer sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// `[T, D]`.
    pub features: Tensor,
    /// Source snippet index of every row.
    pub source_indices: Vec<usize>,
}

impl FeatureSequence {
    pub fn full(features: Tensor) -> Self {
        let source_indices = (0..features.rows()).collect();
        FeatureSequence {
            features,
            source_indices,
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform index sampling: row `i` takes source snippet
/// `round(i * (L - 1) / (len - 1))`; a single row takes the middle snippet.
pub fn sample_indices(source_len: usize, len: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::InvalidInput(
            "target length must be at least 1".into(),
        ));
    }
    if source_len == 0 {
        return Err(Error::InvalidInput(
            "cannot sample from an empty sequence".into(),
        ));
    }
    if len == 1 {
        return Ok(vec![(source_len - 1) / 2]);
    }
    let step = (source_len - 1) as f64 / (len - 1) as f64;
    Ok((0..len)
        .map(|i| (i as f64 * step).round() as usize)
        .collect())
}

pub fn sample_snippets(features: &Tensor, len: usize) -> Result<FeatureSequence> {
    let idx = sample_indices(features.rows(), len)?;
    let cols = features.cols();
    let mut data = Vec::with_capacity(len * cols);
    for &i in &idx {
        data.extend_from_slice(features.row(i));
    }
    Ok(FeatureSequence {
        features: Tensor::new(vec![len, cols], data)?,
        source_indices: idx,
    })
}

/// An annotated action instance, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    /// Full-length `[T, D]` snippet features.
    pub features: Tensor,
    pub fps: f64,
    /// Multi-hot video label, length `C`.
    pub labels: Vec<bool>,
    pub segments: Vec<Segment>,
    /// Per-snippet ground truth (`None` = background); synthetic data only.
    pub snippet_labels: Option<Vec<Option<usize>>>,
}

impl VideoRecord {
    pub fn num_snippets(&self) -> usize {
        self.features.rows()
    }

    pub fn snippet_seconds(&self) -> f64 {
        FRAMES_PER_SNIPPET / self.fps
    }

    pub fn duration(&self) -> f64 {
        self.num_snippets() as f64 * self.snippet_seconds()
    }

    /// Checks label, segment and snippet-label consistency.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let ctx = |m: String| Error::format(format!("video {}", self.video_id), m);
        if self.labels.len() != num_classes {
            return Err(ctx(format!(
                "{} labels for {num_classes} classes",
                self.labels.len()
            )));
        }
        let mut derived = vec![false; num_classes];
        for seg in &self.segments {
            if seg.class >= num_classes {
                return Err(ctx(format!("segment class {} out of range", seg.class)));
            }
            if !(seg.t_start < seg.t_end) || seg.t_start < 0.0 || seg.t_end > self.duration() + 1e-9
            {
                return Err(ctx(format!(
                    "segment [{}, {}] outside video",
                    seg.t_start, seg.t_end
                )));
            }
            derived[seg.class] = true;
        }
        if derived != self.labels {
            return Err(ctx("video labels disagree with segment classes".into()));
        }
        if let Some(snippets) = &self.snippet_labels {
            if snippets.len() != self.num_snippets() {
                return Err(ctx(format!(
                    "{} snippet labels for {} snippets",
                    snippets.len(),
                    self.num_snippets()
                )));
            }
            let delta = self.snippet_seconds();
            let mut expected = vec![None; snippets.len()];
            for seg in &self.segments {
                let first = (seg.t_start / delta).round() as usize;
                let last = (seg.t_end / delta).round() as usize;
                for slot in expected.iter_mut().take(last).skip(first) {
                    *slot = Some(seg.class);
                }
            }
            if &expected != snippets {
                return Err(ctx("snippet labels disagree with segments".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[VideoRecord]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train or test)"
            ))),
        }
    }
}

/// Parameters of the synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    /// Inclusive snippet-count range.
    pub length: [usize; 2],
    pub instances: [usize; 2],
    /// Instance duration range in snippets.
    pub duration: [usize; 2],
    /// Distinct action classes per video.
    pub classes_per_video: [usize; 2],
    /// Norm of every prototype vector.
    pub prototype_norm: f64,
    /// Pairs of classes whose prototypes are placed close together.
    pub confusable_pairs: Vec<[usize; 2]>,
    pub confusable_distance: f64,
    pub noise_sigma: f64,
    /// Background snippets next to an instance that carry part of its prototype.
    pub context_len: usize,
    /// Prototype fraction of the context snippet adjacent to the instance;
    /// decays linearly further out.
    pub context_blend: f64,
    /// Chance that a background gap looks partly like an action absent from
    /// the video.
    pub distractor_rate: f64,
    /// Prototype fraction of a distractor gap.
    pub distractor_blend: f64,
    /// Prototype fraction at the first and last snippet of an instance; rises
    /// linearly to 1 over the outer quarter on each side.
    pub edge_strength: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 6,
            feature_dim: 32,
            train_videos: 60,
            test_videos: 30,
            length: [40, 80],
            instances: [1, 4],
            duration: [4, 14],
            classes_per_video: [1, 2],
            prototype_norm: 1.5,
            confusable_pairs: vec![[0, 1], [2, 3]],
            confusable_distance: 0.6,
            noise_sigma: 0.35,
            context_len: 2,
            context_blend: 0.45,
            distractor_rate: 0.5,
            distractor_blend: 0.5,
            edge_strength: 1.0,
            fps: 16.0,
            seed: 0,
        }
    }
}

/// Prototype vectors of a synthetic benchmark; the background is row `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes(pub Tensor);

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_classes == 0 || self.feature_dim == 0 {
            return bad("num_classes and feature_dim must be positive".into());
        }
        for (name, [lo, hi]) in [
            ("length", self.length),
            ("instances", self.instances),
            ("duration", self.duration),
            ("classes_per_video", self.classes_per_video),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if self.classes_per_video[1] > self.num_classes {
            return bad("more classes per video than classes".into());
        }
        if self.instances[1] < self.classes_per_video[0] {
            return bad("max instances cannot cover the minimum number of classes".into());
        }
        // worst case: most instances at the shortest duration, one gap between
        // neighbours and one background snippet, in the shortest video
        let need = self.instances[1] * self.duration[0] + self.instances[1];
        if need > self.length[0] {
            return bad(format!(
                "infeasible packing: {} instances of {} snippets need {need} snippets, videos may have {}",
                self.instances[1], self.duration[0], self.length[0]
            ));
        }
        for pair in &self.confusable_pairs {
            if pair[0] >= self.num_classes || pair[1] >= self.num_classes || pair[0] == pair[1] {
                return bad(format!("confusable pair {pair:?} is invalid"));
            }
        }
        if !(self.noise_sigma >= 0.0)
            || !(self.fps > 0.0)
            || [
                self.context_blend,
                self.distractor_rate,
                self.distractor_blend,
                self.edge_strength,
            ]
            .iter()
            .any(|x| !(0.0..=1.0).contains(x))
        {
            return bad("noise, fps or a blend fraction out of range".into());
        }
        Ok(())
    }

    pub fn prototypes(&self, rng: &mut ChaCha8Rng) -> Prototypes {
        let d = self.feature_dim;
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let mut rows: Vec<Vec<f64>> = (0..=self.num_classes)
            .map(|_| {
                unit(rng)
                    .into_iter()
                    .map(|x| x * self.prototype_norm)
                    .collect()
            })
            .collect();
        for &[a, b] in &self.confusable_pairs {
            let dir = unit(rng);
            rows[b] = rows[a]
                .iter()
                .zip(&dir)
                .map(|(x, u)| x + self.confusable_distance * u)
                .collect();
        }
        Prototypes(Tensor::from_rows(&rows).expect("equal rows"))
    }

    /// Generates the train and test splits. Deterministic in `seed`.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut proto_rng = substream(self.seed, Stream::Prototypes);
        let prototypes = self.prototypes(&mut proto_rng);
        let mut rng = substream(self.seed, Stream::Data);
        let make = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|i| self.generate_video(format!("{prefix}_{i:03}"), &prototypes, rng))
                .collect::<Result<Vec<_>>>()
        };
        let train = make("train", self.train_videos, &mut rng)?;
        let test = make("test", self.test_videos, &mut rng)?;
        Ok(Dataset {
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            train,
            test,
        })
    }

    fn generate_video(
        &self,
        video_id: String,
        prototypes: &Prototypes,
        rng: &mut ChaCha8Rng,
    ) -> Result<VideoRecord> {
        let len = rng.random_range(self.length[0]..=self.length[1]);
        let n_classes = rng.random_range(self.classes_per_video[0]..=self.classes_per_video[1]);
        let mut all: Vec<usize> = (0..self.num_classes).collect();
        all.shuffle(rng);
        let classes = &all[..n_classes];

        let n = rng.random_range(self.instances[0].max(n_classes)..=self.instances[1]);
        let mut inst_classes: Vec<usize> = classes.to_vec();
        while inst_classes.len() < n {
            inst_classes.push(classes[rng.random_range(0..n_classes)]);
        }
        inst_classes.shuffle(rng);

        // room left after mandatory gaps between instances and one background snippet
        let room = len - n;
        let mut durations = Vec::with_capacity(n);
        let mut used = 0;
        for i in 0..n {
            let reserve = (n - 1 - i) * self.duration[0];
            let hi = self.duration[1].min(room - used - reserve);
            if hi < self.duration[0] {
                return Err(Error::InvalidInput(format!(
                    "{video_id}: instances do not fit {len} snippets"
                )));
            }
            let d = rng.random_range(self.duration[0]..=hi);
            durations.push(d);
            used += d;
        }

        // gaps[0] and gaps[n] may be empty, interior gaps hold at least one snippet
        let mut gaps = vec![0usize; n + 1];
        for g in gaps.iter_mut().take(n).skip(1) {
            *g = 1;
        }
        for _ in 0..(len - used - (n - 1)) {
            gaps[rng.random_range(0..=n)] += 1;
        }

        let mut snippet_labels: Vec<Option<usize>> = Vec::with_capacity(len);
        let mut spans = Vec::with_capacity(n);
        for i in 0..n {
            snippet_labels.extend(std::iter::repeat_n(None, gaps[i]));
            let start = snippet_labels.len();
            snippet_labels.extend(std::iter::repeat_n(Some(inst_classes[i]), durations[i]));
            spans.push((start, start + durations[i], inst_classes[i]));
        }
        snippet_labels.extend(std::iter::repeat_n(None, gaps[n]));
        debug_assert_eq!(snippet_labels.len(), len);

        let absent: Vec<usize> = all[n_classes..].to_vec();
        let mut distractors = vec![None; len];
        if self.distractor_rate > 0.0 && !absent.is_empty() {
            let mut t = 0;
            while t < len {
                let end = (t..len)
                    .find(|&u| snippet_labels[u].is_some())
                    .unwrap_or(len);
                if end > t && rng.random_bool(self.distractor_rate) {
                    let c = absent[rng.random_range(0..absent.len())];
                    distractors[t..end].fill(Some(c));
                }
                t = end + 1;
            }
        }

        let features = self.render(&snippet_labels, &distractors, &spans, prototypes, rng)?;
        let delta = FRAMES_PER_SNIPPET / self.fps;
        let segments = spans
            .iter()
            .map(|&(s, e, c)| Segment {
                t_start: s as f64 * delta,
                t_end: e as f64 * delta,
                class: c,
            })
            .collect();
        let mut labels = vec![false; self.num_classes];
        for &c in classes {
            labels[c] = true;
        }
        let video = VideoRecord {
            video_id,
            features,
            fps: self.fps,
            labels,
            segments,
            snippet_labels: Some(snippet_labels),
        };
        video.validate(self.num_classes)?;
        Ok(video)
    }

    fn render(
        &self,
        labels: &[Option<usize>],
        distractors: &[Option<usize>],
        spans: &[(usize, usize, usize)],
        prototypes: &Prototypes,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let d = self.feature_dim;
        let bg = self.num_classes;
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let proto = |c: usize| prototypes.0.row(c);
        let blend = |row: &mut [f64], c: usize, w: f64| {
            for (x, &p) in row.iter_mut().zip(proto(c)) {
                *x = (1.0 - w) * *x + w * p;
            }
        };
        let mut data = Vec::with_capacity(labels.len() * d);
        for (t, label) in labels.iter().enumerate() {
            let mut row: Vec<f64> = proto(bg).to_vec();
            match label {
                Some(c) => {
                    let &(s, e, _) = spans
                        .iter()
                        .find(|&&(s, e, _)| s <= t && t < e)
                        .expect("labelled snippet in a span");
                    let ramp = ((e - s) as f64 / 4.0).round().max(1.0);
                    let pos = (t - s).min(e - 1 - t) as f64;
                    let w = if pos >= ramp {
                        1.0
                    } else {
                        self.edge_strength + (1.0 - self.edge_strength) * pos / ramp
                    };
                    blend(&mut row, *c, w);
                }
                None => {
                    if let Some(c) = distractors[t] {
                        blend(&mut row, c, self.distractor_blend);
                    }
                }
            }
            if label.is_none() && self.context_len > 0 {
                // strongest influence from the nearest instance
                let near = spans
                    .iter()
                    .map(|&(s, e, c)| {
                        let dist = if t < s { s - t } else { t + 1 - e };
                        (dist, c)
                    })
                    .min_by_key(|&(dist, _)| dist);
                if let Some((dist, c)) = near.filter(|&(dist, _)| dist <= self.context_len) {
                    blend(
                        &mut row,
                        c,
                        self.context_blend * (1.0 - (dist - 1) as f64 / self.context_len as f64),
                    );
                }
            }
            if self.noise_sigma > 0.0 {
                for x in row.iter_mut() {
                    *x += noise.sample(rng);
                }
            }
            data.extend(row);
        }
        Tensor::new(vec![labels.len(), d], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fraction of snippets whose nearest prototype matches the ground truth.
    fn nearest_prototype_accuracy(data: &Dataset, prototypes: &Prototypes) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for v in data.train.iter().chain(&data.test) {
            let labels = v.snippet_labels.as_ref().unwrap();
            for (t, label) in labels.iter().enumerate() {
                let x = v.features.row(t);
                let best = (0..prototypes.0.rows())
                    .min_by(|&a, &b| {
                        let da: f64 = x
                            .iter()
                            .zip(prototypes.0.row(a))
                            .map(|(p, q)| (p - q).powi(2))
                            .sum();
                        let db: f64 = x
                            .iter()
                            .zip(prototypes.0.row(b))
                            .map(|(p, q)| (p - q).powi(2))
                            .sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                hit += usize::from(best == label.unwrap_or(data.num_classes));
                total += 1;
            }
        }
        hit as f64 / total as f64
    }

    fn protos(spec: &SyntheticSpec) -> Prototypes {
        spec.prototypes(&mut substream(spec.seed, Stream::Prototypes))
    }

    #[test]
    fn sample_indices_examples() {
        assert_eq!(sample_indices(4, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(sample_indices(4, 2).unwrap(), vec![0, 3]);
        assert_eq!(sample_indices(5, 1).unwrap(), vec![2]);
        assert!(sample_indices(4, 0).is_err());
        let constant = Tensor::full(&[7, 3], 0.25);
        for len in [1, 3, 7, 14] {
            let s = sample_snippets(&constant, len).unwrap();
            assert!(s.features.data().iter().all(|&v| v == 0.25));
            assert_eq!(s.len(), len);
        }
    }

    #[test]
    fn noiseless_data_is_separable() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            context_blend: 0.3,
            distractor_rate: 0.0,
            train_videos: 10,
            test_videos: 5,
            ..Default::default()
        };
        let data = spec.generate().unwrap();
        assert_eq!(nearest_prototype_accuracy(&data, &protos(&spec)), 1.0);
    }

    fn mix(p: &Prototypes, a: usize, b: usize, w: f64) -> Vec<f64> {
        p.0.row(a)
            .iter()
            .zip(p.0.row(b))
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn distractor_gaps_resemble_an_absent_class() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            context_len: 0,
            distractor_rate: 1.0,
            distractor_blend: 0.4,
            train_videos: 8,
            test_videos: 2,
            ..Default::default()
        };
        let data = spec.generate().unwrap();
        let p = protos(&spec);
        let bg = spec.num_classes;
        for v in &data.train {
            for (t, label) in v.snippet_labels.as_ref().unwrap().iter().enumerate() {
                if label.is_none() {
                    let x = v.features.row(t);
                    assert!((0..bg).any(|c| !v.labels[c] && close(x, &mix(&p, bg, c, 0.4))));
                }
            }
        }
    }

    #[test]
    fn instance_edges_ramp_up_from_the_background() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            distractor_rate: 0.0,
            edge_strength: 0.3,
            train_videos: 8,
            test_videos: 2,
            ..Default::default()
        };
        let data = spec.generate().unwrap();
        let p = protos(&spec);
        let delta = FRAMES_PER_SNIPPET / spec.fps;
        for v in &data.train {
            for s in &v.segments {
                let (first, last) = (
                    (s.t_start / delta).round() as usize,
                    (s.t_end / delta).round() as usize - 1,
                );
                assert!(close(
                    v.features.row(first),
                    &mix(&p, spec.num_classes, s.class, 0.3)
                ));
                assert!(close(
                    v.features.row(last),
                    &mix(&p, spec.num_classes, s.class, 0.3)
                ));
                let mid = (first + last) / 2;
                if last - first >= 4 {
                    assert!(close(v.features.row(mid), p.0.row(s.class)));
                }
            }
        }
    }

    #[test]
    fn noisy_confusable_data_is_hard_but_learnable() {
        let spec = SyntheticSpec {
            noise_sigma: 0.5,
            ..Default::default()
        };
        let data = spec.generate().unwrap();
        let acc = nearest_prototype_accuracy(&data, &protos(&spec));
        assert!(acc < 1.0 && acc > 1.0 / 7.0, "accuracy {acc}");
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let spec = SyntheticSpec::default();
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        assert_eq!(a.train.len(), 60);
        assert_eq!(a.test.len(), 30);
        for v in a.train.iter().chain(&a.test) {
            v.validate(6).unwrap();
            let labels = v.snippet_labels.as_ref().unwrap();
            assert!(labels.iter().any(Option::is_none));
            assert!(labels.iter().any(Option::is_some));
            assert!((40..=80).contains(&v.num_snippets()));
            for w in v.segments.windows(2) {
                assert!(w[0].t_end < w[1].t_start);
            }
        }
        let other = SyntheticSpec { seed: 1, ..spec }.generate().unwrap();
        assert_ne!(a.train[0].features, other.train[0].features);
    }

    #[test]
    fn infeasible_packing_is_rejected() {
        let spec = SyntheticSpec {
            length: [10, 12],
            instances: [3, 4],
            duration: [4, 6],
            ..Default::default()
        };
        assert!(matches!(spec.generate(), Err(Error::Config(_))));
    }
}
