//! Converters from raw dataset releases into the container format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array4;
use rayon::prelude::*;

use super::container::write_dataset;
use super::layout::SkeletonLayout;
use super::sequence::SkeletonSequence;
use super::split::SplitDefinition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDataset {
    Ntu60,
    Ntu120,
    PkuMmd2,
}

impl fmt::Display for RawDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RawDataset::Ntu60 => "ntu60",
            RawDataset::Ntu120 => "ntu120",
            RawDataset::PkuMmd2 => "pkummd2",
        })
    }
}

impl FromStr for RawDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntu60" => Ok(RawDataset::Ntu60),
            "ntu120" => Ok(RawDataset::Ntu120),
            "pkummd2" => Ok(RawDataset::PkuMmd2),
            other => Err(Error::config("dataset", format!("unknown dataset `{other}`"))),
        }
    }
}

/// Ids parsed from an NTU file stem such as `S001C002P003R002A013`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtuName {
    pub setup: u32,
    pub camera: u32,
    pub subject: u32,
    pub replication: u32,
    pub action: u32,
}

pub fn parse_ntu_name(stem: &str) -> Option<NtuName> {
    let field = |tag: char| -> Option<u32> {
        let pos = stem.find(tag)?;
        stem.get(pos + 1..pos + 4)?.parse().ok()
    };
    Some(NtuName {
        setup: field('S')?,
        camera: field('C')?,
        subject: field('P')?,
        replication: field('R')?,
        action: field('A')?,
    })
}

struct Cursor<'a> {
    file: &'a Path,
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let rest = &self.text[self.pos..];
        if rest.is_empty() {
            return Err(Error::Parse {
                file: self.file.to_path_buf(),
                offset: self.pos as u64,
                message: "unexpected end of file".into(),
            });
        }
        let end = rest.find('\n').map_or(rest.len(), |i| i + 1);
        self.pos += end;
        Ok(rest[..end].trim())
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn next_count(&mut self) -> Result<usize> {
        let line = self.next_line()?;
        line.parse().map_err(|_| self.err(format!("expected a count, got `{line}`")))
    }

    fn next_floats(&mut self, min: usize) -> Result<Vec<f32>> {
        let line = self.next_line()?;
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err(format!("malformed numeric line `{line}`")))?;
        if vals.len() < min {
            return Err(self.err(format!("expected {min} values, got {}", vals.len())));
        }
        Ok(vals)
    }
}

/// Parses an NTU RGB+D `.skeleton` text file into a `frames × 25 × 3 × 2` block.
///
/// Bodies beyond the second are dropped; missing bodies are zero-padded.
pub fn parse_ntu_skeleton(file: &Path, text: &str) -> Result<Array4<f32>> {
    const JOINTS: usize = 25;
    let mut cur = Cursor { file, text, pos: 0 };
    let frames = cur.next_count()?;
    let mut data = Array4::<f32>::zeros((frames, JOINTS, 3, 2));
    for t in 0..frames {
        let bodies = cur.next_count()?;
        for b in 0..bodies {
            cur.next_floats(1)?; // body info line
            let joints = cur.next_count()?;
            for j in 0..joints {
                let v = cur.next_floats(3)?;
                if b < 2 && j < JOINTS {
                    for c in 0..3 {
                        data[[t, j, c, b]] = v[c];
                    }
                }
            }
        }
    }
    Ok(data)
}

/// Parses a pre-segmented PKU-MMD clip: one frame per line, 150 values
/// (2 bodies × 25 joints × xyz).
pub fn parse_pku_clip(file: &Path, text: &str) -> Result<Array4<f32>> {
    let mut cur = Cursor { file, text, pos: 0 };
    let mut frames = Vec::new();
    while cur.pos < text.len() {
        let start = cur.pos;
        let line = cur.next_line()?;
        if line.is_empty() {
            continue;
        }
        cur.pos = start;
        frames.push(cur.next_floats(150)?);
    }
    let mut data = Array4::<f32>::zeros((frames.len(), 25, 3, 2));
    for (t, v) in frames.iter().enumerate() {
        for b in 0..2 {
            for j in 0..25 {
                for c in 0..3 {
                    data[[t, j, c, b]] = v[b * 75 + j * 3 + c];
                }
            }
        }
    }
    Ok(data)
}

fn pku_ids(stem: &str) -> Option<(u32, u32, usize)> {
    // `<video>-<view>_A<label>`, e.g. `0291-M_A012`; video id doubles as subject id.
    let (video, rest) = stem.split_once('-')?;
    let (view, label) = rest.split_once("_A")?;
    let camera = match view {
        "L" => 1,
        "M" => 2,
        "R" => 3,
        _ => return None,
    };
    Some((video.parse().ok()?, camera, label.parse::<usize>().ok()?.checked_sub(1)?))
}

/// Converts a directory of raw files into the container format at `out`.
pub fn ingest(raw_dir: &Path, out: &Path, dataset: RawDataset) -> Result<usize> {
    let mut files: Vec<_> = std::fs::read_dir(raw_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let sequences = files
        .par_iter()
        .map(|path| -> Result<Option<SkeletonSequence>> {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let ext = path.extension().and_then(|s| s.to_str()).unwrap_or_default();
            match dataset {
                RawDataset::Ntu60 | RawDataset::Ntu120 => {
                    if ext != "skeleton" {
                        return Ok(None);
                    }
                    let name = parse_ntu_name(&stem).ok_or_else(|| Error::Parse {
                        file: path.clone(),
                        offset: 0,
                        message: "file name does not follow SsssCcccPpppRrrrAaaa".into(),
                    })?;
                    let text = std::fs::read_to_string(path)?;
                    Ok(Some(SkeletonSequence {
                        sample_id: stem,
                        data: parse_ntu_skeleton(path, &text)?,
                        subject_id: name.subject,
                        camera_id: name.camera,
                        setup_id: name.setup,
                        label: Some(name.action as usize - 1),
                    }))
                }
                RawDataset::PkuMmd2 => {
                    if ext != "txt" {
                        return Ok(None);
                    }
                    let (subject, camera, label) = pku_ids(&stem).ok_or_else(|| Error::Parse {
                        file: path.clone(),
                        offset: 0,
                        message: "file name does not follow <video>-<L|M|R>_A<label>".into(),
                    })?;
                    let text = std::fs::read_to_string(path)?;
                    Ok(Some(SkeletonSequence {
                        sample_id: stem,
                        data: parse_pku_clip(path, &text)?,
                        subject_id: subject,
                        camera_id: camera,
                        setup_id: 1,
                        label: Some(label),
                    }))
                }
            }
        })
        .filter_map(|r| r.transpose())
        .collect::<Result<Vec<_>>>()?;
    for s in &sequences {
        if s.frames() == 0 {
            return Err(Error::EmptySequence(s.sample_id.clone()));
        }
    }
    let splits = match dataset {
        RawDataset::Ntu60 => SplitDefinition::ntu60(),
        RawDataset::Ntu120 => SplitDefinition::ntu120(),
        RawDataset::PkuMmd2 => {
            let path = raw_dir.join(super::container::SPLITS_FILE);
            if !path.exists() {
                return Err(Error::config(
                    "splits",
                    format!("pkummd2 needs the release split file at {}", path.display()),
                ));
            }
            SplitDefinition::from_file(&path)?
        }
    };
    write_dataset(out, &dataset.to_string(), &sequences, &SkeletonLayout::ntu25(), &splits)?;
    Ok(sequences.len())
}
