//! On-disk dataset layout.
//!
//! ```text
//! <dir>/dataset.json              {"format", "version", "num_classes", "feature_dim"}
//! <dir>/<split>.jsonl             one annotation record per video
//! <dir>/<split>_ground_truth.jsonl one segment per line (eval input)
//! <dir>/features/<video_id>.feat  binary feature matrix
//! ```
//!
//! Feature files are `b"PCLFEAT\0"`, a little-endian `u32` version, `u64` T,
//! `u64` D, then `T * D` little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Segment, VideoRecord};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const DATA_VERSION: u32 = 1;
const FEATURE_MAGIC: &[u8; 8] = b"PCLFEAT\0";
const SPLITS: [&str; 2] = ["train", "test"];

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    num_classes: usize,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Annotation {
    version: u32,
    video_id: String,
    num_snippets: usize,
    fps: f64,
    labels: Vec<u8>,
    segments: Vec<Segment>,
    snippet_labels: Option<Vec<Option<usize>>>,
}

/// One ground-truth segment, as read by the evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub class: usize,
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(28 + features.len() * 8);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&DATA_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(features.cols() as u64).to_le_bytes());
    for v in features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    if bytes.len() < 28 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format(ctx, "not a feature file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != DATA_VERSION {
        return Err(Error::Version {
            context: ctx,
            found: version,
            expected: DATA_VERSION,
        });
    }
    let t = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let body = &bytes[28..];
    if t.checked_mul(d).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(Error::format(
            ctx,
            format!("expected {t} x {d} values, found {} bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(vec![t, d], data)
}

/// Reads a plain-text feature matrix (one snippet per line, values separated
/// by whitespace or commas). Lines starting with `#` are ignored.
pub fn import_text_features(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        rows.push(row);
    }
    Tensor::from_rows(&rows)
        .map_err(|_| Error::format(path.display().to_string(), "rows have different lengths"))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join("features").join(format!("{video_id}.feat"))
}

pub fn save_ground_truth(path: &Path, videos: &[VideoRecord]) -> Result<()> {
    write_lines(
        path,
        videos.iter().flat_map(|v| {
            v.segments.iter().map(move |s| GroundTruthRecord {
                video_id: v.video_id.clone(),
                t_start: s.t_start,
                t_end: s.t_end,
                class: s.class,
            })
        }),
    )
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    read_lines(path)
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir.join("features")).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: "procl-dataset".into(),
        version: DATA_VERSION,
        num_classes: data.num_classes,
        feature_dim: data.feature_dim,
    };
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;

    for (name, videos) in [("train", &data.train), ("test", &data.test)] {
        write_lines(
            &dir.join(format!("{name}.jsonl")),
            videos.iter().map(|v| Annotation {
                version: DATA_VERSION,
                video_id: v.video_id.clone(),
                num_snippets: v.num_snippets(),
                fps: v.fps,
                labels: v.labels.iter().map(|&y| u8::from(y)).collect(),
                segments: v.segments.clone(),
                snippet_labels: v.snippet_labels.clone(),
            }),
        )?;
        save_ground_truth(&dir.join(format!("{name}_ground_truth.jsonl")), videos)?;
        for v in videos.iter() {
            write_features(&feature_path(dir, &v.video_id), &v.features)?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("dataset.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if manifest.version != DATA_VERSION {
        return Err(Error::Version {
            context: path.display().to_string(),
            found: manifest.version,
            expected: DATA_VERSION,
        });
    }
    let mut splits = Vec::with_capacity(2);
    for name in SPLITS {
        let ann_path = dir.join(format!("{name}.jsonl"));
        let annotations: Vec<Annotation> = read_lines(&ann_path)?;
        let mut videos = Vec::with_capacity(annotations.len());
        for (i, a) in annotations.into_iter().enumerate() {
            let ctx = format!("{}:{}", ann_path.display(), i + 1);
            if a.version != DATA_VERSION {
                return Err(Error::Version {
                    context: ctx,
                    found: a.version,
                    expected: DATA_VERSION,
                });
            }
            let features = read_features(&feature_path(dir, &a.video_id))?;
            if features.rows() != a.num_snippets || features.cols() != manifest.feature_dim {
                return Err(Error::format(
                    ctx,
                    format!(
                        "feature file is {:?}, annotation expects [{}, {}]",
                        features.shape(),
                        a.num_snippets,
                        manifest.feature_dim
                    ),
                ));
            }
            let video = VideoRecord {
                video_id: a.video_id,
                features,
                fps: a.fps,
                labels: a.labels.iter().map(|&y| y != 0).collect(),
                segments: a.segments,
                snippet_labels: a.snippet_labels,
            };
            video
                .validate(manifest.num_classes)
                .map_err(|e| Error::format(ctx, e.to_string()))?;
            videos.push(video);
        }
        splits.push(videos);
    }
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        num_classes: manifest.num_classes,
        feature_dim: manifest.feature_dim,
        train,
        test,
    })
}
