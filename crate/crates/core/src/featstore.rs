//! Feature-sequence interchange format (RNVF) and corpus manifests.
//!
//! An RNVF file is a fixed 21-byte header followed by a frame-major block of
//! little-endian `f32` values and, optionally, one flag byte per frame:
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `"RNVF"`              |
//! | 4      | 4    | version (`u32`, = 1)        |
//! | 8      | 4    | frame rate (`f32`)          |
//! | 12     | 4    | dim (`u32`)                 |
//! | 16     | 4    | n_frames (`u32`)            |
//! | 20     | 1    | flags present (0 or 1)      |
//! | 21     | 4·n·dim | frames                   |
//! | ...    | n    | flags, bit0 silence, bit1 voiced |

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const RNVF_MAGIC: &[u8; 4] = b"RNVF";
pub const RNVF_VERSION: u32 = 1;
pub const RNVF_HEADER_LEN: usize = 21;

/// Per-frame voice activity flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct FrameFlags {
    pub is_silence: bool,
    pub is_voiced: bool,
}

impl FrameFlags {
    pub const SILENCE: FrameFlags = FrameFlags {
        is_silence: true,
        is_voiced: false,
    };
    pub const VOICED: FrameFlags = FrameFlags {
        is_silence: false,
        is_voiced: true,
    };
    pub const UNVOICED: FrameFlags = FrameFlags {
        is_silence: false,
        is_voiced: false,
    };

    pub fn to_byte(self) -> u8 {
        (self.is_silence as u8) | ((self.is_voiced as u8) << 1)
    }

    pub fn from_byte(b: u8) -> Self {
        FrameFlags {
            is_silence: b & 1 != 0,
            is_voiced: b & 2 != 0,
        }
    }
}

/// A time-major matrix of feature frames.
///
/// Frames are stored flat, `frames[t * dim..(t + 1) * dim]` being frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frame_rate: f32,
    dim: usize,
    frames: Vec<f32>,
    flags: Option<Vec<FrameFlags>>,
}

impl FeatureSequence {
    pub fn new(frame_rate: f32, dim: usize, frames: Vec<f32>) -> Result<Self> {
        Self::with_flags(frame_rate, dim, frames, None)
    }

    pub fn with_flags(
        frame_rate: f32,
        dim: usize,
        frames: Vec<f32>,
        flags: Option<Vec<FrameFlags>>,
    ) -> Result<Self> {
        let seq = FeatureSequence {
            frame_rate,
            dim,
            frames,
            flags,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Builds a sequence from row vectors; every row must have length `dim`.
    pub fn from_rows(frame_rate: f32, dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut frames = Vec::with_capacity(rows.len() * dim);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidSequence(format!(
                    "frame {t} has {} values, expected {dim}",
                    row.len()
                )));
            }
            frames.extend_from_slice(row);
        }
        Self::new(frame_rate, dim, frames)
    }

    fn validate(&self) -> Result<()> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::InvalidSequence(format!(
                "frame_rate must be positive, got {}",
                self.frame_rate
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidSequence("dim must be positive".into()));
        }
        if !self.frames.len().is_multiple_of(self.dim) {
            return Err(Error::InvalidSequence(format!(
                "{} values do not form whole frames of dim {}",
                self.frames.len(),
                self.dim
            )));
        }
        if self.dim > u32::MAX as usize || self.n_frames() > u32::MAX as usize {
            return Err(Error::InvalidSequence("sequence too large for RNVF".into()));
        }
        if let Some(flags) = &self.flags {
            if flags.len() != self.n_frames() {
                return Err(Error::InvalidSequence(format!(
                    "{} flags for {} frames",
                    flags.len(),
                    self.n_frames()
                )));
            }
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f32 {
        self.frame_rate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 / self.frame_rate as f64
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.frames.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.frames
    }

    pub fn into_flat(self) -> Vec<f32> {
        self.frames
    }

    pub fn flags(&self) -> Option<&[FrameFlags]> {
        self.flags.as_deref()
    }

    pub fn set_flags(&mut self, flags: Option<Vec<FrameFlags>>) -> Result<()> {
        if let Some(f) = &flags {
            if f.len() != self.n_frames() {
                return Err(Error::InvalidSequence(format!(
                    "{} flags for {} frames",
                    f.len(),
                    self.n_frames()
                )));
            }
        }
        self.flags = flags;
        Ok(())
    }

    /// Serializes to RNVF bytes.
    pub fn to_rnvf_bytes(&self) -> Vec<u8> {
        let n = self.n_frames();
        let flag_len = if self.flags.is_some() { n } else { 0 };
        let mut out = Vec::with_capacity(RNVF_HEADER_LEN + self.frames.len() * 4 + flag_len);
        out.extend_from_slice(RNVF_MAGIC);
        out.extend_from_slice(&RNVF_VERSION.to_le_bytes());
        out.extend_from_slice(&self.frame_rate.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.push(self.flags.is_some() as u8);
        for v in &self.frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(flags) = &self.flags {
            out.extend(flags.iter().map(|f| f.to_byte()));
        }
        out
    }

    /// Parses RNVF bytes, validating the header before touching the payload.
    pub fn from_rnvf_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(RNVF_MAGIC, "RNVF")?;
        let version_offset = r.offset();
        let version = r.u32()?;
        if version != RNVF_VERSION {
            return Err(Error::UnsupportedVersion {
                offset: version_offset,
                version,
            });
        }
        let frame_rate = r.f32()?;
        let dim = r.u32()? as usize;
        let n_frames = r.u32()? as usize;
        let flags_offset = r.offset();
        let flags_present = match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::InvalidSequence(format!(
                    "flags_present byte {other} at offset {flags_offset}"
                )))
            }
        };
        if dim == 0 {
            return Err(Error::InvalidSequence("dim 0 in header".into()));
        }
        let n_values = n_frames
            .checked_mul(dim)
            .ok_or_else(|| Error::InvalidSequence("n_frames × dim overflows".into()))?;
        let n_bytes = (n_values as u64)
            .checked_mul(4)
            .ok_or_else(|| Error::InvalidSequence("payload size overflows".into()))?;
        let payload = r.take(n_bytes)?;
        let frames: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let flags = if flags_present {
            let raw = r.take(n_frames as u64)?;
            Some(raw.iter().map(|&b| FrameFlags::from_byte(b)).collect())
        } else {
            None
        };
        if r.remaining() != 0 {
            return Err(Error::InvalidSequence(format!(
                "{} trailing bytes at offset {}",
                r.remaining(),
                r.offset()
            )));
        }
        Self::with_flags(frame_rate, dim, frames, flags)
    }
}

/// Little-endian cursor that reports the offset of every failure.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: u64) -> Result<&'a [u8]> {
        if n > self.remaining() as u64 {
            return Err(Error::Truncated {
                offset: self.offset(),
                needed: n,
                available: self.remaining() as u64,
            });
        }
        let n = n as usize;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4], name: &'static str) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::BadMagic {
                offset: 0,
                expected: name,
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `dest`.
pub(crate) fn write_atomic(dest: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_name = dest
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", dest.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dest)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io_at(dest, e));
    }
    Ok(())
}

pub fn write_rnvf(seq: &FeatureSequence, destination: &Path) -> Result<()> {
    seq.validate()?;
    write_atomic(destination, &seq.to_rnvf_bytes())
}

pub fn read_rnvf(source: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(source).map_err(|e| Error::io_at(source, e))?;
    FeatureSequence::from_rnvf_bytes(&bytes)
}

/// Speaker intelligibility category used to group reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Control,
    Mild,
    Moderate,
    ModSevere,
    Severe,
    Unknown,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Control => "control",
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::ModSevere => "mod-severe",
            Severity::Severe => "severe",
            Severity::Unknown => "unknown",
        }
    }

    /// Case-insensitive parse; anything outside the closed set is `Unknown`.
    pub fn parse_lenient(s: &str) -> Severity {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" => Severity::Control,
            "mild" => Severity::Mild,
            "moderate" => Severity::Moderate,
            "mod-severe" => Severity::ModSevere,
            "severe" => Severity::Severe,
            "unknown" => Severity::Unknown,
            other => {
                log::warn!("unrecognized severity {other:?}, using \"unknown\"");
                Severity::Unknown
            }
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Severity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Severity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Severity::parse_lenient(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub severity: Severity,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

/// Parses JSON-lines manifest text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_manifest(text: &str) -> Result<Vec<UtteranceRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.id.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Manifest {
                line: line_no,
                message: format!("duplicate id {:?}", rec.id),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

/// Reads a manifest; relative `feature_path` / `audio_path` entries are
/// resolved against the manifest's directory.
pub fn read_manifest(source: &Path) -> Result<Vec<UtteranceRecord>> {
    let text = fs::read_to_string(source).map_err(|e| Error::io_at(source, e))?;
    let mut records = parse_manifest(&text)?;
    if let Some(base) = source.parent() {
        for rec in &mut records {
            if rec.feature_path.is_relative() {
                rec.feature_path = base.join(&rec.feature_path);
            }
            if let Some(a) = &rec.audio_path {
                if a.is_relative() {
                    rec.audio_path = Some(base.join(a));
                }
            }
        }
    }
    Ok(records)
}

pub fn write_manifest(records: &[UtteranceRecord], destination: &Path) -> Result<()> {
    let mut text = String::new();
    for rec in records {
        text.push_str(&serde_json::to_string(rec)?);
        text.push('\n');
    }
    write_atomic(destination, text.as_bytes())
}
