//! Append-only JSONL prompt cache. The last line for a sample id wins on read.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::types::{EngineMeta, LanguagePrompt, NormBox, PromptRecord, VisionPrompt};
use crate::error::{Error, Result};

pub const PROMPT_SCHEMA: &str = "c2vl-prompt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLine {
    pub schema: String,
    pub sample_id: String,
    /// Crop PNG path relative to the cache file's directory.
    pub crop_path: String,
    pub bbox: NormBox,
    pub frame_index: usize,
    pub detector_score: f64,
    pub text: String,
    pub question: String,
    pub engine_meta: EngineMeta,
}

/// A cache line that could not be parsed; it is skipped on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptLine {
    pub line: usize,
    pub message: String,
}

struct Inner {
    writer: File,
    entries: HashMap<String, CacheLine>,
}

pub struct PromptCache {
    path: PathBuf,
    root: PathBuf,
    inner: Mutex<Inner>,
}

fn crop_file_name(sample_id: &str) -> String {
    let safe: String = sample_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("crops/{safe}.png")
}

impl PromptCache {
    /// Opens (creating if needed) the cache at `path`, loading existing lines.
    pub fn open(path: &Path) -> Result<(Self, Vec<CorruptLine>)> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        std::fs::create_dir_all(root.join("crops"))?;
        let mut entries = HashMap::new();
        let mut corrupt = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) if entry.schema == PROMPT_SCHEMA => {
                        entries.insert(entry.sample_id.clone(), entry);
                    }
                    Ok(entry) => corrupt.push(CorruptLine {
                        line: i + 1,
                        message: format!("unsupported schema `{}`", entry.schema),
                    }),
                    Err(e) => corrupt.push(CorruptLine {
                        line: i + 1,
                        message: e.to_string(),
                    }),
                }
            }
        }
        for c in &corrupt {
            log::warn!("{}: skipping corrupt line {}: {}", path.display(), c.line, c.message);
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            PromptCache {
                path: path.to_path_buf(),
                root,
                inner: Mutex::new(Inner { writer, entries }),
            },
            corrupt,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.inner.lock().expect("cache lock").entries.contains_key(sample_id)
    }

    pub fn sample_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.lock().expect("cache lock").entries.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Writes the crop file and appends one line. Safe to call from many threads.
    pub fn put(&self, record: &PromptRecord) -> Result<()> {
        let crop_path = crop_file_name(&record.sample_id);
        let full = self.root.join(&crop_path);
        let tmp = full.with_extension(format!("png.{}.tmp", std::process::id()));
        std::fs::write(&tmp, &record.vision.crop)?;
        let line = CacheLine {
            schema: PROMPT_SCHEMA.into(),
            sample_id: record.sample_id.clone(),
            crop_path,
            bbox: record.vision.bbox,
            frame_index: record.vision.frame_index,
            detector_score: record.vision.detector_score,
            text: record.language.text.clone(),
            question: record.language.question.clone(),
            engine_meta: record.engine_meta.clone(),
        };
        let mut text = serde_json::to_string(&line)?;
        text.push('\n');
        let mut inner = self.inner.lock().expect("cache lock");
        std::fs::rename(&tmp, &full)?;
        inner.writer.write_all(text.as_bytes())?;
        inner.writer.flush()?;
        if inner.entries.insert(record.sample_id.clone(), line).is_some() {
            log::warn!("prompt cache: overwriting record for `{}`", record.sample_id);
        }
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Result<PromptRecord> {
        let line = self
            .inner
            .lock()
            .expect("cache lock")
            .entries
            .get(sample_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("prompt for `{sample_id}`")))?;
        let crop = std::fs::read(self.root.join(&line.crop_path))?;
        Ok(PromptRecord {
            sample_id: line.sample_id.clone(),
            vision: VisionPrompt {
                sample_id: line.sample_id.clone(),
                crop,
                bbox: line.bbox,
                frame_index: line.frame_index,
                detector_score: line.detector_score,
            },
            language: LanguagePrompt {
                sample_id: line.sample_id,
                text: line.text,
                question: line.question,
            },
            engine_meta: line.engine_meta,
        })
    }
}
