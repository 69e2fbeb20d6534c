//! On-disk dataset layout: one binary file per utterance plus a manifest
//! and normalization stats.
//!
//! Utterance file layout (little-endian):
//!   magic      8 bytes  "SVSDATA1"
//!   frames     u32
//!   ctx_dim    u32      (0 for prediction files without context)
//!   spec_dim   u32
//!   ctx        f32 x frames*ctx_dim
//!   f0_hz      f32 x frames
//!   vuv        f32 x frames (0 or 1)
//!   spec       f32 x frames*spec_dim
//!   note_f0    f32 x frames
//!
//! Directory layout: `<root>/<id>.utt`, `<root>/manifest.txt` with
//! tab-separated `id  split  frames` lines, `<root>/stats.json`.

use crate::codec::F0Contour;
use crate::corpus::{Corpus, FeatureStats, Split, Utterance};
use crate::error::{Result, SvsError};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"SVSDATA1";

#[derive(Debug, Clone, PartialEq)]
pub struct UttRecord {
    pub ctx: Vec<Vec<f64>>,
    pub f0: F0Contour,
    pub spec: Vec<Vec<f64>>,
    pub note_f0: Vec<f64>,
}

impl UttRecord {
    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn from_utterance(u: &Utterance) -> Self {
        UttRecord {
            ctx: u.ctx.clone(),
            f0: u.ref_f0.clone(),
            spec: u.ref_spec.clone(),
            note_f0: u.note_f0.f0_hz.clone(),
        }
    }
}

fn push_f32s(out: &mut Vec<u8>, vals: impl Iterator<Item = f64>) {
    for v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_utt(path: impl AsRef<Path>, rec: &UttRecord) -> Result<()> {
    let t = rec.frames();
    let ctx_dim = rec.ctx.first().map(|r| r.len()).unwrap_or(0);
    let spec_dim = rec.spec.first().map(|r| r.len()).unwrap_or(0);
    if !rec.ctx.is_empty() && rec.ctx.len() != t {
        return Err(SvsError::shape("write_utt", "ctx frame count mismatch"));
    }
    if rec.spec.len() != t || rec.note_f0.len() != t {
        return Err(SvsError::shape("write_utt", "stream frame count mismatch"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(ctx_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec_dim as u32).to_le_bytes());
    push_f32s(&mut out, rec.ctx.iter().flatten().copied());
    push_f32s(&mut out, rec.f0.f0_hz.iter().copied());
    push_f32s(&mut out, rec.f0.voiced.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    push_f32s(&mut out, rec.spec.iter().flatten().copied());
    push_f32s(&mut out, rec.note_f0.iter().copied());
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_utt(path: impl AsRef<Path>) -> Result<UttRecord> {
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(SvsError::Data(format!(
                "truncated utterance file {}",
                path.as_ref().display()
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(SvsError::Data(format!(
            "bad magic in {}",
            path.as_ref().display()
        )));
    }
    let read_u32 = |pos: &mut usize| -> Result<usize> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize)
    };
    let t = read_u32(&mut pos)?;
    let ctx_dim = read_u32(&mut pos)?;
    let spec_dim = read_u32(&mut pos)?;
    let read_f32s = |pos: &mut usize, n: usize| -> Result<Vec<f64>> {
        let raw = take(pos, 4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    };
    let ctx_flat = read_f32s(&mut pos, t * ctx_dim)?;
    let f0 = read_f32s(&mut pos, t)?;
    let vuv = read_f32s(&mut pos, t)?;
    let spec_flat = read_f32s(&mut pos, t * spec_dim)?;
    let note_f0 = read_f32s(&mut pos, t)?;
    if pos != bytes.len() {
        return Err(SvsError::Data(format!(
            "{} trailing bytes in {}",
            bytes.len() - pos,
            path.as_ref().display()
        )));
    }
    let voiced: Vec<bool> = vuv.iter().map(|&v| v >= 0.5).collect();
    Ok(UttRecord {
        ctx: if ctx_dim == 0 {
            Vec::new()
        } else {
            ctx_flat.chunks(ctx_dim).map(|c| c.to_vec()).collect()
        },
        f0: F0Contour::new(f0, voiced)?,
        spec: spec_flat.chunks(spec_dim.max(1)).map(|c| c.to_vec()).collect(),
        note_f0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub frames: usize,
}

pub fn utt_path(root: impl AsRef<Path>, id: &str) -> PathBuf {
    root.as_ref().join(format!("{id}.utt"))
}

/// Write a whole corpus: utterance files, manifest, stats.
pub fn write_dataset(root: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let root = root.as_ref();
    std::fs::create_dir_all(root)?;
    let mut manifest = String::new();
    for u in &corpus.utterances {
        let id = u.id();
        write_utt(utt_path(root, &id), &UttRecord::from_utterance(u))?;
        manifest.push_str(&format!("{id}\t{}\t{}\n", u.split.as_str(), u.frames()));
    }
    std::fs::write(root.join("manifest.txt"), manifest)?;
    let stats = serde_json::to_string_pretty(&corpus.stats)
        .map_err(|e| SvsError::Data(format!("stats serialization: {e}")))?;
    std::fs::write(root.join("stats.json"), stats)?;
    Ok(())
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(root.as_ref().join("manifest.txt"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(SvsError::Data(format!("bad manifest line '{line}'")));
            }
            Ok(ManifestEntry {
                id: parts[0].to_string(),
                split: Split::parse(parts[1])?,
                frames: parts[2]
                    .parse()
                    .map_err(|e| SvsError::Data(format!("bad frame count: {e}")))?,
            })
        })
        .collect()
}

pub fn read_stats(root: impl AsRef<Path>) -> Result<FeatureStats> {
    let text = std::fs::read_to_string(root.as_ref().join("stats.json"))?;
    serde_json::from_str(&text).map_err(|e| SvsError::Data(format!("stats.json: {e}")))
}

/// A dataset loaded back from disk, reassembled into corpus-like form.
pub struct LoadedDataset {
    pub entries: Vec<ManifestEntry>,
    pub records: Vec<UttRecord>,
    pub stats: FeatureStats,
}

pub fn read_dataset(root: impl AsRef<Path>) -> Result<LoadedDataset> {
    let root = root.as_ref();
    let entries = read_manifest(root)?;
    let records = entries
        .iter()
        .map(|e| read_utt(utt_path(root, &e.id)))
        .collect::<Result<Vec<_>>>()?;
    for (e, r) in entries.iter().zip(&records) {
        if r.frames() != e.frames {
            return Err(SvsError::Data(format!(
                "utterance {} has {} frames, manifest says {}",
                e.id,
                r.frames(),
                e.frames
            )));
        }
    }
    let stats = read_stats(root)?;
    Ok(LoadedDataset {
        entries,
        records,
        stats,
    })
}

impl LoadedDataset {
    /// Indices of records in a given split.
    pub fn split_indices(&self, s: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == s)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn ctx_dim(&self) -> usize {
        self.records
            .first()
            .and_then(|r| r.ctx.first())
            .map(|c| c.len())
            .unwrap_or(0)
    }

    /// Z-score a record's spectral frames with the dataset stats.
    pub fn normalized_spec(&self, rec: &UttRecord) -> Vec<Vec<f64>> {
        rec.spec
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(d, &v)| (v - self.stats.spec_mean[d]) / self.stats.spec_std[d])
                    .collect()
            })
            .collect()
    }

    pub fn denormalize_spec(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(d, &v)| v * self.stats.spec_std[d] + self.stats.spec_mean[d])
                    .collect()
            })
            .collect()
    }
}
