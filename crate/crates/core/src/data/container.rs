//! On-disk dataset container: `index.json` describing every sample plus one
//! little-endian `f32` blob, with the benchmark split file alongside.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layout::SkeletonLayout;
use super::sequence::{downsample_frames, SampleMeta, SkeletonSequence, TARGET_FRAMES};
use super::split::{Benchmark, DatasetSplit, SplitDefinition};
use crate::error::{Error, Result};

pub const CONTAINER_VERSION: &str = "c2vl-skel-v1";
pub const INDEX_FILE: &str = "index.json";
pub const BLOB_FILE: &str = "skeletons.bin";
pub const SPLITS_FILE: &str = "splits.json";
pub const LAYOUT_FILE: &str = "layout.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub sample_id: String,
    pub label: Option<usize>,
    pub subject_id: u32,
    pub camera_id: u32,
    pub setup_id: u32,
    /// Byte offset of the sample in the blob.
    pub offset: u64,
    /// `[frames, joints, 3, bodies]`.
    pub shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub version: String,
    pub dataset: String,
    pub samples: Vec<IndexEntry>,
}

/// A loaded dataset: preprocessed sequences, layout and split definition.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub sequences: Vec<SkeletonSequence>,
    pub layout: SkeletonLayout,
    pub splits: SplitDefinition,
}

impl Dataset {
    pub fn metas(&self) -> Vec<SampleMeta> {
        self.sequences.iter().map(SkeletonSequence::meta).collect()
    }

    pub fn split(&self, benchmark: Benchmark) -> Result<DatasetSplit> {
        self.splits.split(benchmark, &self.metas())
    }

    /// Sequences for the given ids, in id order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<SkeletonSequence>> {
        let pos: std::collections::HashMap<&str, usize> = self
            .sequences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.as_str(), i))
            .collect();
        ids.iter()
            .map(|id| {
                pos.get(id.as_str())
                    .map(|&i| self.sequences[i].clone())
                    .ok_or_else(|| Error::NotFound(format!("sample `{id}`")))
            })
            .collect()
    }
}

fn parse_err(file: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        offset,
        message: message.into(),
    }
}

/// Writes sequences in container format. Sequences are stored as given (no resampling).
pub fn write_dataset(
    dir: &Path,
    dataset: &str,
    sequences: &[SkeletonSequence],
    layout: &SkeletonLayout,
    splits: &SplitDefinition,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut blob = BufWriter::new(File::create(dir.join(BLOB_FILE))?);
    let mut offset = 0u64;
    let mut samples = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let d = seq.data.shape();
        for v in seq.data.iter() {
            blob.write_all(&v.to_le_bytes())?;
        }
        samples.push(IndexEntry {
            sample_id: seq.sample_id.clone(),
            label: seq.label,
            subject_id: seq.subject_id,
            camera_id: seq.camera_id,
            setup_id: seq.setup_id,
            offset,
            shape: [d[0], d[1], d[2], d[3]],
        });
        offset += (seq.data.len() * 4) as u64;
    }
    blob.flush()?;
    let index = DatasetIndex {
        version: CONTAINER_VERSION.into(),
        dataset: dataset.into(),
        samples,
    };
    std::fs::write(dir.join(INDEX_FILE), serde_json::to_vec_pretty(&index)?)?;
    std::fs::write(dir.join(LAYOUT_FILE), serde_json::to_vec_pretty(layout)?)?;
    splits.write(&dir.join(SPLITS_FILE))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| parse_err(path, 0, format!("cannot read: {e}")))?;
    Ok(buf)
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join(INDEX_FILE);
    let bytes = read_file(&path)?;
    let index: DatasetIndex =
        serde_json::from_slice(&bytes).map_err(|e| parse_err(&path, line_col_offset(&bytes, &e), e.to_string()))?;
    if index.version != CONTAINER_VERSION {
        return Err(parse_err(&path, 0, format!("unsupported version `{}`", index.version)));
    }
    Ok(index)
}

fn line_col_offset(bytes: &[u8], e: &serde_json::Error) -> u64 {
    let mut line = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if line == e.line() {
            return (i + e.column().saturating_sub(1)) as u64;
        }
        if b == b'\n' {
            line += 1;
        }
    }
    bytes.len() as u64
}

/// Reads every sample as stored on disk, without temporal resampling.
pub fn read_raw_sequences(dir: &Path) -> Result<Vec<SkeletonSequence>> {
    let index = read_index(dir)?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = read_file(&blob_path)?;
    index
        .samples
        .iter()
        .map(|e| decode_entry(e, &blob, &blob_path))
        .collect()
}

fn decode_entry(e: &IndexEntry, blob: &[u8], blob_path: &Path) -> Result<SkeletonSequence> {
    let count: usize = e.shape.iter().product();
    let start = e.offset as usize;
    let end = start + count * 4;
    if end > blob.len() {
        return Err(parse_err(
            blob_path,
            blob.len() as u64,
            format!(
                "sample `{}` truncated: needs bytes {start}..{end}, blob ends at {}",
                e.sample_id,
                blob.len()
            ),
        ));
    }
    let values: Vec<f32> = blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array4::from_shape_vec(e.shape, values).map_err(|err| parse_err(blob_path, e.offset, err.to_string()))?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(parse_err(blob_path, e.offset, format!("sample `{}` has non-finite values", e.sample_id)));
    }
    let seq = SkeletonSequence {
        sample_id: e.sample_id.clone(),
        data,
        subject_id: e.subject_id,
        camera_id: e.camera_id,
        setup_id: e.setup_id,
        label: e.label,
    };
    seq.validate().map_err(|err| parse_err(blob_path, e.offset, err.to_string()))?;
    Ok(seq)
}

/// Loads a container directory, resamples every sequence to 64 frames and
/// computes the split for `benchmark`.
pub fn load_dataset(dir: &Path, benchmark: Benchmark) -> Result<(Dataset, DatasetSplit)> {
    let dataset = open_dataset(dir)?;
    let split = dataset.split(benchmark)?;
    Ok((dataset, split))
}

/// Loads and preprocesses a container directory without choosing a benchmark.
pub fn open_dataset(dir: &Path) -> Result<Dataset> {
    let index = read_index(dir)?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = read_file(&blob_path)?;
    let sequences = index
        .samples
        .par_iter()
        .map(|e| decode_entry(e, &blob, &blob_path).and_then(|s| downsample_frames(&s, TARGET_FRAMES)))
        .collect::<Result<Vec<_>>>()?;
    let layout_path = dir.join(LAYOUT_FILE);
    let layout = if layout_path.exists() {
        SkeletonLayout::from_json_file(&layout_path)?
    } else {
        SkeletonLayout::ntu25()
    };
    let splits_path: PathBuf = dir.join(SPLITS_FILE);
    let splits = SplitDefinition::from_file(&splits_path)?;
    Ok(Dataset {
        name: index.dataset,
        sequences,
        layout,
        splits,
    })
}
