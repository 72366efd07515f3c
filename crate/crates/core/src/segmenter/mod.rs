//! Speech-type segmenter.
//!
//! Training clusters a speaker's frames into a k-means codebook, groups the
//! codewords into three clusters with Ward linkage and names the groups by
//! their overlap with silence / voicing flags. Segmentation turns distances
//! to the codewords into per-class log-probabilities and runs the
//! boundary-penalized dynamic program in [`dp`].

pub mod dp;
pub mod kmeans;
pub mod ward;

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::{write_atomic, ByteReader, FeatureSequence, FrameFlags};

pub use dp::{segment_dp, DpSolution};
pub use kmeans::{kmeans_fit, KMeansFit};
pub use ward::ward_cluster;

pub const N_TYPES: usize = 3;
pub const DEFAULT_CODEBOOK_SIZE: usize = 100;
pub const DEFAULT_GAMMA: f64 = 3.0;
pub const PROB_FLOOR: f64 = 1e-10;

pub const RNVS_MAGIC: &[u8; 4] = b"RNVS";
pub const RNVS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeechType {
    Silence,
    Sonorant,
    Obstruent,
}

impl SpeechType {
    pub const ALL: [SpeechType; N_TYPES] =
        [SpeechType::Silence, SpeechType::Sonorant, SpeechType::Obstruent];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> SpeechType {
        Self::ALL[i]
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<SpeechType> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeechType::Silence => "silence",
            SpeechType::Sonorant => "sonorant",
            SpeechType::Obstruent => "obstruent",
        }
    }
}

impl fmt::Display for SpeechType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labelled run `[start, end)` of frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SpeechType,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Ordered, gap-free, label-alternating runs covering `0..n_frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct Segmentation {
    segments: Vec<Segment>,
}

impl Segmentation {
    /// Validates tiling from frame 0, non-empty runs and alternating labels.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut expected_start = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.start != expected_start {
                return Err(Error::invalid(format!(
                    "segment {i} starts at {} instead of {expected_start}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(Error::invalid(format!("segment {i} is empty")));
            }
            if i > 0 && segments[i - 1].kind == s.kind {
                return Err(Error::invalid(format!(
                    "segments {} and {i} share label {}",
                    i - 1,
                    s.kind
                )));
            }
            expected_start = s.end;
        }
        Ok(Segmentation { segments })
    }

    /// Collapses a per-frame labeling into runs.
    pub fn from_labels(labels: &[SpeechType]) -> Self {
        let mut segments: Vec<Segment> = Vec::new();
        for (t, &kind) in labels.iter().enumerate() {
            match segments.last_mut() {
                Some(last) if last.kind == kind => last.end = t + 1,
                _ => segments.push(Segment {
                    kind,
                    start: t,
                    end: t + 1,
                }),
            }
        }
        Segmentation { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn n_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn count(&self, kind: SpeechType) -> usize {
        self.segments.iter().filter(|s| s.kind == kind).count()
    }

    pub fn labels(&self) -> Vec<SpeechType> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.kind, s.len()))
            .collect()
    }
}

impl TryFrom<Vec<Segment>> for Segmentation {
    type Error = Error;

    fn try_from(v: Vec<Segment>) -> Result<Self> {
        Segmentation::new(v)
    }
}

impl From<Segmentation> for Vec<Segment> {
    fn from(s: Segmentation) -> Self {
        s.segments
    }
}

/// Trained codebook with a speech type per codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterModel {
    dim: usize,
    centroids: Vec<f32>,
    type_of_centroid: Vec<SpeechType>,
    sigma2: f32,
    frame_rate: f32,
}

impl SegmenterModel {
    pub fn new(
        dim: usize,
        centroids: Vec<f32>,
        type_of_centroid: Vec<SpeechType>,
        sigma2: f32,
        frame_rate: f32,
    ) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::invalid("centroids do not form whole rows"));
        }
        let k = centroids.len() / dim;
        if type_of_centroid.len() != k {
            return Err(Error::invalid(format!(
                "{} type labels for {k} centroids",
                type_of_centroid.len()
            )));
        }
        for t in SpeechType::ALL {
            if !type_of_centroid.contains(&t) {
                return Err(Error::invalid(format!("no centroid is labelled {t}")));
            }
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::invalid(format!("frame_rate must be positive, got {frame_rate}")));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("centroids contain non-finite values"));
        }
        Ok(SegmenterModel {
            dim,
            centroids,
            type_of_centroid,
            sigma2,
            frame_rate,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.type_of_centroid.len()
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn type_of_centroid(&self) -> &[SpeechType] {
        &self.type_of_centroid
    }

    pub fn sigma2(&self) -> f32 {
        self.sigma2
    }

    pub fn frame_rate(&self) -> f32 {
        self.frame_rate
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.k() + self.centroids.len() * 4);
        out.extend_from_slice(RNVS_MAGIC);
        out.extend_from_slice(&RNVS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.k() as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_rate.to_le_bytes());
        out.extend_from_slice(&self.sigma2.to_le_bytes());
        out.extend(self.type_of_centroid.iter().map(|t| t.code()));
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(RNVS_MAGIC, "RNVS")?;
        let version_offset = r.offset();
        let version = r.u32()?;
        if version != RNVS_VERSION {
            return Err(Error::UnsupportedVersion {
                offset: version_offset,
                version,
            });
        }
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        let frame_rate = r.f32()?;
        let sigma2 = r.f32()?;
        let types_offset = r.offset();
        let types = r
            .take(k as u64)?
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                SpeechType::from_code(c).ok_or_else(|| {
                    Error::invalid(format!("type code {c} at offset {}", types_offset + i as u64))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_values = k
            .checked_mul(dim)
            .ok_or_else(|| Error::invalid("K × dim overflows"))?;
        let n_bytes = (n_values as u64)
            .checked_mul(4)
            .ok_or_else(|| Error::invalid("centroid block size overflows"))?;
        let centroids = r
            .take(n_bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if r.remaining() != 0 {
            return Err(Error::invalid(format!(
                "{} trailing bytes at offset {}",
                r.remaining(),
                r.offset()
            )));
        }
        SegmenterModel::new(dim, centroids, types, sigma2, frame_rate)
    }

    pub fn save(&self, destination: &Path) -> Result<()> {
        write_atomic(destination, &self.to_bytes())
    }

    pub fn load(source: &Path) -> Result<Self> {
        let bytes = fs::read(source).map_err(|e| Error::io_at(source, e))?;
        Self::from_bytes(&bytes)
    }

    /// Per-frame class log-probabilities; see [`class_log_probs`].
    pub fn class_log_probs(&self, seq: &FeatureSequence) -> Result<Vec<[f64; N_TYPES]>> {
        class_log_probs(self, seq)
    }

    /// Segments `seq` with boundary penalty `gamma`.
    pub fn segment(&self, seq: &FeatureSequence, gamma: f64) -> Result<Segmentation> {
        let lp = class_log_probs(self, seq)?;
        Ok(segment_dp(&lp, gamma)?.segmentation)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-probability of each speech type for every frame.
///
/// Each codeword `j` scores `−‖x − c_j‖² / (2σ²)`; a class's probability is
/// the softmax mass of its codewords, floored at [`PROB_FLOOR`].
pub fn class_log_probs(model: &SegmenterModel, seq: &FeatureSequence) -> Result<Vec<[f64; N_TYPES]>> {
    if seq.dim() != model.dim {
        return Err(Error::DimMismatch {
            expected: model.dim,
            found: seq.dim(),
        });
    }
    let scale = 1.0 / (2.0 * model.sigma2 as f64);
    let floor = PROB_FLOOR.ln();
    let rows: Vec<&[f32]> = seq.frames().collect();
    Ok(rows
        .par_iter()
        .map(|x| {
            let logits: Vec<f64> = model
                .centroids
                .chunks_exact(model.dim)
                .map(|c| -kmeans::sq_dist(x, c) * scale)
                .collect();
            let total = log_sum_exp(logits.iter().copied());
            let mut out = [0.0; N_TYPES];
            for (class, slot) in out.iter_mut().enumerate() {
                let lse = log_sum_exp(
                    logits
                        .iter()
                        .zip(&model.type_of_centroid)
                        .filter(move |(_, t)| t.index() == class)
                        .map(|(l, _)| *l),
                );
                *slot = (lse - total).max(floor);
            }
            out
        })
        .collect())
}

/// Names the three codeword groups by their overlap with the VAD flags.
///
/// `frame_groups[i]` is the group of training frame `i`. The group with the
/// largest silent fraction becomes Silence; of the remaining two, the larger
/// voiced fraction becomes Sonorant and the last Obstruent. Exact ties in a
/// deciding fraction are rejected.
pub fn assign_speech_types(
    frame_groups: &[usize],
    flags: &[FrameFlags],
) -> Result<[SpeechType; N_TYPES]> {
    if frame_groups.len() != flags.len() {
        return Err(Error::invalid(format!(
            "{} frame groups for {} flags",
            frame_groups.len(),
            flags.len()
        )));
    }
    let mut total = [0usize; N_TYPES];
    let mut silent = [0usize; N_TYPES];
    let mut voiced = [0usize; N_TYPES];
    for (&g, f) in frame_groups.iter().zip(flags) {
        if g >= N_TYPES {
            return Err(Error::invalid(format!("group label {g} out of range")));
        }
        total[g] += 1;
        silent[g] += f.is_silence as usize;
        voiced[g] += f.is_voiced as usize;
    }
    let frac = |num: &[usize; N_TYPES], g: usize| {
        if total[g] == 0 {
            0.0
        } else {
            num[g] as f64 / total[g] as f64
        }
    };

    let silence_fracs: Vec<f64> = (0..N_TYPES).map(|g| frac(&silent, g)).collect();
    let silence_group = unique_argmax(&[0, 1, 2], &silence_fracs, "silence")?;
    let rest: Vec<usize> = (0..N_TYPES).filter(|&g| g != silence_group).collect();
    let voiced_fracs: Vec<f64> = (0..N_TYPES).map(|g| frac(&voiced, g)).collect();
    let sonorant_group = unique_argmax(&rest, &voiced_fracs, "voiced")?;

    let mut types = [SpeechType::Obstruent; N_TYPES];
    types[silence_group] = SpeechType::Silence;
    types[sonorant_group] = SpeechType::Sonorant;
    Ok(types)
}

fn unique_argmax(candidates: &[usize], values: &[f64], what: &str) -> Result<usize> {
    let best = candidates
        .iter()
        .map(|&g| values[g])
        .fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = candidates.iter().copied().filter(|&g| values[g] == best).collect();
    if winners.len() > 1 {
        return Err(Error::AmbiguousTypes(format!(
            "groups {winners:?} tie at {what} fraction {best}"
        )));
    }
    Ok(winners[0])
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: DEFAULT_CODEBOOK_SIZE,
            seed: 0,
        }
    }
}

/// Trains a segmenter on flagged sequences from one speaker.
pub fn train_segmenter(sequences: &[FeatureSequence], config: TrainConfig) -> Result<SegmenterModel> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::invalid("no training sequences"))?;
    let dim = first.dim();
    let frame_rate = first.frame_rate();
    let mut points = Vec::new();
    let mut flags = Vec::new();
    for (i, s) in sequences.iter().enumerate() {
        if s.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        if s.frame_rate() != frame_rate {
            return Err(Error::invalid(format!(
                "sequence {i} has frame rate {} but {frame_rate} expected",
                s.frame_rate()
            )));
        }
        let f = s
            .flags()
            .ok_or_else(|| Error::invalid(format!("sequence {i} carries no silence/voicing flags")))?;
        points.extend_from_slice(s.as_flat());
        flags.extend_from_slice(f);
    }

    let fit = kmeans_fit(&points, dim, config.k, config.seed)?;
    let groups = ward_cluster(&fit.centroids, dim, N_TYPES)?;
    let frame_groups: Vec<usize> = fit.assignment.iter().map(|&j| groups[j]).collect();
    let group_types = assign_speech_types(&frame_groups, &flags)?;
    let types = groups.iter().map(|&g| group_types[g]).collect();

    let n = (points.len() / dim) as f64;
    let mut sigma2 = (fit.inertia / n) as f32;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        // Every frame sits on a codeword; fall back to unit scale.
        log::warn!("zero quantization error, using sigma2 = 1");
        sigma2 = 1.0;
    }
    log::info!(
        "trained segmenter: {} frames, k = {}, inertia {:.4}, sigma2 {sigma2}",
        n,
        config.k,
        fit.inertia
    );
    SegmenterModel::new(dim, fit.centroids, types, sigma2, frame_rate)
}
