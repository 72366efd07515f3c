//! End-to-end orchestration over manifests: segmenter training, rhythm
//! models, conversion under each experimental setup, and reporting.

pub mod analyze;
pub mod report;
pub mod wer;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featstore::{
    read_rnvf, write_atomic, write_manifest, FeatureSequence, FrameFlags, UtteranceRecord,
};
use crate::knnvc::{self, MatchingPool};
use crate::rhythm::{self, RhythmModel};
use crate::segmenter::{self, SegmenterModel, Segmentation, TrainConfig};
use crate::signals;

pub use analyze::{analyze_rhythm, SpeakerRhythm};
pub use report::{aggregate_report, EvalReport, GroupWer, UtteranceResult};
pub use wer::{score_wer, WerCounts};

pub const RUN_MANIFEST_NAME: &str = "run.json";
pub const OUTPUT_MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConversionSetup {
    Original,
    Vocoded,
    RhythmGlobal,
    RhythmFine,
    Vc,
    RhythmGlobalVc,
    RhythmFineVc,
}

impl ConversionSetup {
    pub const ALL: [ConversionSetup; 7] = [
        ConversionSetup::Original,
        ConversionSetup::Vocoded,
        ConversionSetup::RhythmGlobal,
        ConversionSetup::RhythmFine,
        ConversionSetup::Vc,
        ConversionSetup::RhythmGlobalVc,
        ConversionSetup::RhythmFineVc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConversionSetup::Original => "original",
            ConversionSetup::Vocoded => "vocoded",
            ConversionSetup::RhythmGlobal => "rhythm-global",
            ConversionSetup::RhythmFine => "rhythm-fine",
            ConversionSetup::Vc => "vc",
            ConversionSetup::RhythmGlobalVc => "rhythm-global-vc",
            ConversionSetup::RhythmFineVc => "rhythm-fine-vc",
        }
    }

    pub fn global_rhythm(self) -> bool {
        matches!(self, ConversionSetup::RhythmGlobal | ConversionSetup::RhythmGlobalVc)
    }

    pub fn fine_rhythm(self) -> bool {
        matches!(self, ConversionSetup::RhythmFine | ConversionSetup::RhythmFineVc)
    }

    pub fn voice(self) -> bool {
        matches!(
            self,
            ConversionSetup::Vc | ConversionSetup::RhythmGlobalVc | ConversionSetup::RhythmFineVc
        )
    }

    /// Whether features pass through untouched.
    pub fn is_passthrough(self) -> bool {
        matches!(self, ConversionSetup::Original | ConversionSetup::Vocoded)
    }
}

impl fmt::Display for ConversionSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConversionSetup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConversionSetup::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown setup {s:?}")))
    }
}

/// Everything a conversion run may need; which parts are required depends
/// on the setup.
#[derive(Debug, Clone)]
pub struct ConversionModels {
    pub segmenter: Option<SegmenterModel>,
    pub src_rhythm: Option<RhythmModel>,
    pub tgt_rhythm: Option<RhythmModel>,
    pub pool: Option<MatchingPool>,
    pub k: usize,
    pub gamma: f64,
}

impl Default for ConversionModels {
    fn default() -> Self {
        ConversionModels {
            segmenter: None,
            src_rhythm: None,
            tgt_rhythm: None,
            pool: None,
            k: knnvc::DEFAULT_K,
            gamma: segmenter::DEFAULT_GAMMA,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ConversionModels {
    /// Checks that every model the setup needs is present and usable.
    pub fn check(&self, setup: ConversionSetup) -> Result<()> {
        let need_rhythm = |m: &Option<RhythmModel>, side: &str| -> Result<()> {
            let m = m
                .as_ref()
                .ok_or_else(|| Error::MissingModel(format!("{setup} needs a {side} rhythm model")))?;
            if setup.global_rhythm() && (m.rate_sps.is_nan() || m.rate_sps <= 0.0) {
                return Err(Error::MissingModel(format!(
                    "{setup}: {side} rhythm model ({}) has no positive speaking rate",
                    m.speaker
                )));
            }
            if setup.fine_rhythm() && !m.has_fine() {
                return Err(Error::MissingModel(format!(
                    "{setup}: {side} rhythm model ({}) lacks duration distributions for all three speech types",
                    m.speaker
                )));
            }
            Ok(())
        };
        if setup.global_rhythm() || setup.fine_rhythm() {
            need_rhythm(&self.src_rhythm, "source")?;
            need_rhythm(&self.tgt_rhythm, "target")?;
        }
        if setup.fine_rhythm() && self.segmenter.is_none() {
            return Err(Error::MissingModel(format!("{setup} needs a segmenter")));
        }
        if setup.voice() {
            if self.pool.is_none() {
                return Err(Error::MissingModel(format!("{setup} needs a matching pool")));
            }
            if self.k == 0 {
                return Err(Error::invalid("k must be at least 1"));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma {} must be non-negative", self.gamma)));
        }
        Ok(())
    }

    /// Content hashes of the models a setup uses.
    pub fn hashes(&self, setup: ConversionSetup) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        if setup.fine_rhythm() {
            if let Some(s) = &self.segmenter {
                out.insert("segmenter".into(), sha256_hex(&s.to_bytes()));
            }
        }
        if setup.global_rhythm() || setup.fine_rhythm() {
            if let Some(m) = &self.src_rhythm {
                out.insert("src_rhythm".into(), sha256_hex(m.to_json()?.as_bytes()));
            }
            if let Some(m) = &self.tgt_rhythm {
                out.insert("tgt_rhythm".into(), sha256_hex(m.to_json()?.as_bytes()));
            }
        }
        if setup.voice() {
            if let Some(p) = &self.pool {
                let bytes: Vec<u8> = p.as_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
                out.insert("pool".into(), sha256_hex(&bytes));
            }
        }
        Ok(out)
    }
}

/// Converts one utterance: rhythm first, then voice.
pub fn convert_utterance(
    seq: &FeatureSequence,
    setup: ConversionSetup,
    models: &ConversionModels,
) -> Result<FeatureSequence> {
    models.check(setup)?;
    if seq.is_empty() && !setup.is_passthrough() {
        return Err(Error::invalid("empty feature sequence"));
    }
    let mut cur = seq.clone();
    if setup.global_rhythm() {
        cur = rhythm::convert_global(
            &cur,
            models.src_rhythm.as_ref().unwrap(),
            models.tgt_rhythm.as_ref().unwrap(),
        )?;
    }
    if setup.fine_rhythm() {
        let seg = models.segmenter.as_ref().unwrap().segment(&cur, models.gamma)?;
        cur = rhythm::convert_fine(
            &cur,
            &seg,
            models.src_rhythm.as_ref().unwrap(),
            models.tgt_rhythm.as_ref().unwrap(),
        )?;
    }
    if setup.voice() {
        cur = knnvc::convert_sequence(&cur, models.pool.as_ref().unwrap(), models.k)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertedUtterance {
    pub id: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub input_frames: usize,
    pub output_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedUtterance {
    pub id: String,
    pub error: String,
}

/// Sidecar describing a conversion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub setup: ConversionSetup,
    pub k: usize,
    pub gamma: f64,
    pub input_manifest_sha256: String,
    pub models: BTreeMap<String, String>,
    pub utterances: Vec<ConvertedUtterance>,
    pub failures: Vec<FailedUtterance>,
}

impl RunManifest {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn convert_one(
    rec: &UtteranceRecord,
    setup: ConversionSetup,
    models: &ConversionModels,
    out_dir: &Path,
) -> Result<ConvertedUtterance> {
    let output = out_dir.join(format!("{}.rnvf", rec.id));
    let bytes = fs::read(&rec.feature_path).map_err(|e| Error::io_at(&rec.feature_path, e))?;
    let seq = FeatureSequence::from_rnvf_bytes(&bytes)?;
    let output_frames = if setup.is_passthrough() {
        write_atomic(&output, &bytes)?;
        seq.n_frames()
    } else {
        let converted = convert_utterance(&seq, setup, models)?;
        write_atomic(&output, &converted.to_rnvf_bytes())?;
        converted.n_frames()
    };
    Ok(ConvertedUtterance {
        id: rec.id.clone(),
        input: rec.feature_path.clone(),
        output,
        input_frames: seq.n_frames(),
        output_frames,
    })
}

/// Converts every utterance of `records` into `out_dir/<id>.rnvf`.
///
/// Model requirements are checked before any utterance is touched; later
/// per-utterance failures are recorded in the run manifest and skipped.
/// Also writes `run.json` and an output `manifest.jsonl` pointing at the
/// converted features.
pub fn run_conversion(
    records: &[UtteranceRecord],
    models: &ConversionModels,
    setup: ConversionSetup,
    out_dir: &Path,
) -> Result<RunManifest> {
    models.check(setup)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io_at(out_dir, e))?;
    if let Some(bad) = records
        .iter()
        .find(|r| r.id.contains(['/', '\\']) || r.id == "." || r.id == "..")
    {
        return Err(Error::invalid(format!("utterance id {:?} is not a valid file name", bad.id)));
    }

    let results: Vec<Result<ConvertedUtterance>> = records
        .par_iter()
        .map(|rec| convert_one(rec, setup, models, out_dir))
        .collect();

    let mut utterances = Vec::new();
    let mut failures = Vec::new();
    let mut out_records = Vec::new();
    for (rec, r) in records.iter().zip(results) {
        match r {
            Ok(u) => {
                out_records.push(UtteranceRecord {
                    feature_path: PathBuf::from(u.output.file_name().unwrap()),
                    ..rec.clone()
                });
                utterances.push(u);
            }
            Err(e) => {
                log::warn!("{}: {e}", rec.id);
                failures.push(FailedUtterance {
                    id: rec.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let mut manifest_text = String::new();
    for r in records {
        manifest_text.push_str(&serde_json::to_string(r)?);
        manifest_text.push('\n');
    }
    let run = RunManifest {
        setup,
        k: models.k,
        gamma: models.gamma,
        input_manifest_sha256: sha256_hex(manifest_text.as_bytes()),
        models: models.hashes(setup)?,
        utterances,
        failures,
    };
    let mut text = serde_json::to_string_pretty(&run)?;
    text.push('\n');
    write_atomic(&out_dir.join(RUN_MANIFEST_NAME), text.as_bytes())?;
    write_manifest(&out_records, &out_dir.join(OUTPUT_MANIFEST_NAME))?;
    Ok(run)
}

/// Reads an utterance's features, filling in flags from its audio when the
/// feature file carries none.
pub fn load_flagged_sequence(rec: &UtteranceRecord) -> Result<FeatureSequence> {
    let mut seq = read_rnvf(&rec.feature_path)?;
    if seq.flags().is_some() {
        return Ok(seq);
    }
    let audio = rec.audio_path.as_ref().ok_or_else(|| {
        Error::invalid(format!("{}: no flags in features and no audio_path to compute them", rec.id))
    })?;
    let wav = signals::read_wav(audio)?;
    let mut flags = signals::compute_frame_flags(&wav, seq.frame_rate() as f64)?;
    let n = seq.n_frames();
    if flags.len() != n {
        log::debug!("{}: {} flag frames for {n} feature frames, aligning", rec.id, flags.len());
        let last = flags.last().copied().unwrap_or(FrameFlags::SILENCE);
        flags.resize(n, last);
    }
    seq.set_flags(Some(flags))?;
    Ok(seq)
}

/// Trains a segmenter on every usable utterance of a manifest.
pub fn train_segmenter_from_manifest(
    records: &[UtteranceRecord],
    config: TrainConfig,
) -> Result<SegmenterModel> {
    let loaded: Vec<Result<FeatureSequence>> = records.par_iter().map(load_flagged_sequence).collect();
    let mut seqs = Vec::new();
    for (rec, r) in records.iter().zip(loaded) {
        match r {
            Ok(s) if !s.is_empty() => seqs.push(s),
            Ok(_) => log::warn!("{}: empty, skipped", rec.id),
            Err(e) => log::warn!("{}: skipped ({e})", rec.id),
        }
    }
    if seqs.is_empty() {
        return Err(Error::invalid("no usable training utterances"));
    }
    segmenter::train_segmenter(&seqs, config)
}

/// Segmentation of one utterance, as written by the `segment` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedUtterance {
    pub id: String,
    pub speaker: String,
    pub frame_rate: f32,
    pub segments: Segmentation,
}

pub fn segment_manifest(
    records: &[UtteranceRecord],
    model: &SegmenterModel,
    gamma: f64,
) -> Vec<Result<SegmentedUtterance>> {
    records
        .par_iter()
        .map(|rec| {
            let seq = read_rnvf(&rec.feature_path)?;
            if seq.is_empty() {
                return Err(Error::invalid(format!("{}: empty sequence", rec.id)));
            }
            Ok(SegmentedUtterance {
                id: rec.id.clone(),
                speaker: rec.speaker.clone(),
                frame_rate: seq.frame_rate(),
                segments: model.segment(&seq, gamma)?,
            })
        })
        .collect()
}

/// Builds one speaker's rhythm model from the manifest entries of that speaker.
pub fn build_rhythm_from_manifest(
    records: &[UtteranceRecord],
    model: &SegmenterModel,
    speaker: &str,
    gamma: f64,
) -> Result<RhythmModel> {
    let mine: Vec<UtteranceRecord> = records.iter().filter(|r| r.speaker == speaker).cloned().collect();
    if mine.is_empty() {
        return Err(Error::invalid(format!("speaker {speaker:?} has no utterances in the manifest")));
    }
    let mut segs = Vec::new();
    let mut frame_rate = None;
    for r in segment_manifest(&mine, model, gamma) {
        match r {
            Ok(s) => {
                if *frame_rate.get_or_insert(s.frame_rate) != s.frame_rate {
                    return Err(Error::invalid(format!("{}: frame rate differs from the speaker's other utterances", s.id)));
                }
                segs.push(s.segments);
            }
            Err(e) => log::warn!("skipped: {e}"),
        }
    }
    let frame_rate = frame_rate.ok_or_else(|| Error::invalid(format!("no usable utterances for {speaker:?}")))?;
    rhythm::build_rhythm_model(speaker, &segs, frame_rate)
}

/// Builds a kNN pool from every readable utterance of a manifest.
pub fn pool_from_manifest(records: &[UtteranceRecord]) -> Result<MatchingPool> {
    let seqs = records
        .iter()
        .map(|r| read_rnvf(&r.feature_path))
        .collect::<Result<Vec<_>>>()?;
    knnvc::build_pool(&seqs)
}
