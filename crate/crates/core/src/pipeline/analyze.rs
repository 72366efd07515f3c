//! Per-speaker rhythm analysis tables.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::{read_rnvf, write_atomic, Severity, UtteranceRecord};
use crate::rhythm::{estimate_speaking_rate, fit_gamma, segment_durations, GammaParams};
use crate::segmenter::{SegmenterModel, Segmentation, SpeechType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRhythm {
    pub speaker: String,
    pub severity: Severity,
    pub n_utterances: usize,
    pub duration_s: f64,
    pub rate_sps: f64,
    pub segment_counts: BTreeMap<SpeechType, usize>,
    /// `None` where fewer than two segments (or degenerate durations) prevent a fit.
    pub fine: BTreeMap<SpeechType, Option<GammaParams>>,
}

/// Speaker statistics from already-segmented utterances.
pub fn summarize_speaker(
    speaker: &str,
    severity: Severity,
    segmentations: &[Segmentation],
    frame_rate: f64,
) -> Result<SpeakerRhythm> {
    let rate_sps = estimate_speaking_rate(segmentations, frame_rate)?;
    let durations = segment_durations(segmentations, frame_rate);
    let mut segment_counts = BTreeMap::new();
    let mut fine = BTreeMap::new();
    for (kind, d) in durations {
        segment_counts.insert(kind, d.len());
        let fit = match fit_gamma(&d) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("speaker {speaker}: {kind} parameters unavailable ({e})");
                None
            }
        };
        fine.insert(kind, fit);
    }
    let frames: usize = segmentations.iter().map(|s| s.n_frames()).sum();
    Ok(SpeakerRhythm {
        speaker: speaker.to_string(),
        severity,
        n_utterances: segmentations.len(),
        duration_s: frames as f64 / frame_rate,
        rate_sps,
        segment_counts,
        fine,
    })
}

/// Segments every utterance and summarizes rhythm per speaker.
///
/// Unreadable utterances are skipped with a warning. Speakers appear in
/// order of first mention in the manifest.
pub fn analyze_rhythm(
    records: &[UtteranceRecord],
    model: &SegmenterModel,
    gamma: f64,
) -> Result<Vec<SpeakerRhythm>> {
    let segmented: Vec<Option<(Segmentation, f64)>> = records
        .par_iter()
        .map(|rec| {
            let result = read_rnvf(&rec.feature_path).and_then(|seq| {
                if seq.is_empty() {
                    return Err(Error::invalid("empty sequence"));
                }
                Ok((model.segment(&seq, gamma)?, seq.frame_rate() as f64))
            });
            match result {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("skipping {}: {e}", rec.id);
                    None
                }
            }
        })
        .collect();

    let mut order: Vec<&str> = Vec::new();
    let mut by_speaker: BTreeMap<&str, (Severity, Vec<Segmentation>, f64)> = BTreeMap::new();
    for (rec, seg) in records.iter().zip(segmented) {
        let Some((seg, rate)) = seg else { continue };
        let entry = by_speaker.entry(rec.speaker.as_str()).or_insert_with(|| {
            order.push(rec.speaker.as_str());
            (rec.severity, Vec::new(), rate)
        });
        if entry.2 != rate {
            log::warn!("speaker {}: mixed frame rates, skipping {}", rec.speaker, rec.id);
            continue;
        }
        entry.1.push(seg);
    }
    order
        .iter()
        .map(|spk| {
            let (severity, segs, rate) = &by_speaker[spk];
            summarize_speaker(spk, *severity, segs, *rate)
        })
        .collect()
}

pub fn write_analysis_json(rows: &[SpeakerRhythm], destination: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(rows)?;
    text.push('\n');
    write_atomic(destination, text.as_bytes())
}

pub fn write_analysis_csv(rows: &[SpeakerRhythm], destination: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "speaker".to_string(),
        "severity".into(),
        "n_utterances".into(),
        "duration_s".into(),
        "rate_sps".into(),
    ];
    for t in SpeechType::ALL {
        header.push(format!("n_{t}"));
        header.push(format!("{t}_shape"));
        header.push(format!("{t}_scale"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.speaker.clone(),
            r.severity.to_string(),
            r.n_utterances.to_string(),
            format!("{:.4}", r.duration_s),
            format!("{:.6}", r.rate_sps),
        ];
        for t in SpeechType::ALL {
            rec.push(r.segment_counts.get(&t).copied().unwrap_or(0).to_string());
            match r.fine.get(&t).copied().flatten() {
                Some(p) => {
                    rec.push(format!("{:.6}", p.shape));
                    rec.push(format!("{:.6}", p.scale));
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(destination, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::Segment;

    #[test]
    fn single_obstruent_gives_null_params() {
        use SpeechType::*;
        let mut segs = Vec::new();
        let mut start = 0;
        for (kind, len) in [(Silence, 10), (Sonorant, 8), (Silence, 12), (Sonorant, 5), (Obstruent, 3), (Sonorant, 9)] {
            segs.push(Segment { kind, start, end: start + len });
            start += len;
        }
        let s = Segmentation::new(segs).unwrap();
        let row = summarize_speaker("M01", Severity::Severe, &[s], 50.0).unwrap();
        assert_eq!(row.segment_counts[&Obstruent], 1);
        assert!(row.fine[&Obstruent].is_none());
        assert!(row.fine[&Sonorant].is_some());
        assert!(row.fine[&Silence].is_some());
        assert!((row.duration_s - 0.94).abs() < 1e-12);
    }
}
