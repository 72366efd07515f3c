//! Per-speaker rhythm models and rhythm conversion in feature space.
//!
//! A [`RhythmModel`] holds a global speaking rate (sonorant segments per
//! second) and, optionally, a gamma duration distribution per speech type.
//! Global conversion stretches a whole utterance by the ratio of rates;
//! fine-grained conversion maps each segment's duration through the source
//! CDF and the target PPF and stretches segments independently.

pub mod gamma;
pub mod special;
pub mod stretch;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::{write_atomic, FeatureSequence, FrameFlags};
use crate::segmenter::{Segment, Segmentation, SpeechType};

pub use gamma::{fit_gamma, gamma_cdf, gamma_ppf, GammaParams};
pub use stretch::time_stretch;

/// CDF values are clamped to this range before the PPF is applied.
pub const CDF_CLAMP: (f64, f64) = (0.001, 0.999);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhythmModel {
    pub speaker: String,
    pub frame_rate: f32,
    pub rate_sps: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fine: BTreeMap<SpeechType, GammaParams>,
}

impl RhythmModel {
    pub fn has_fine(&self) -> bool {
        SpeechType::ALL.iter().all(|t| self.fine.contains_key(t))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RhythmModel = serde_json::from_str(text)?;
        if !(m.frame_rate.is_finite() && m.frame_rate > 0.0) {
            return Err(Error::invalid(format!("rhythm model frame_rate {}", m.frame_rate)));
        }
        if !(m.rate_sps.is_finite() && m.rate_sps >= 0.0) {
            return Err(Error::invalid(format!("rhythm model rate_sps {}", m.rate_sps)));
        }
        for (t, p) in &m.fine {
            GammaParams::new(p.shape, p.scale, p.n_samples)
                .map_err(|e| Error::invalid(format!("{t} parameters: {e}")))?;
        }
        Ok(m)
    }

    pub fn save(&self, destination: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        write_atomic(destination, text.as_bytes())
    }

    pub fn load(source: &Path) -> Result<Self> {
        let text = fs::read_to_string(source).map_err(|e| Error::io_at(source, e))?;
        Self::from_json(&text)
    }
}

/// Sonorant segments per second, over the total duration of all frames.
///
/// Returns 0 with a warning when no sonorant was found.
pub fn estimate_speaking_rate(segmentations: &[Segmentation], frame_rate: f64) -> Result<f64> {
    if segmentations.is_empty() {
        return Err(Error::invalid("no segmentations"));
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::invalid(format!("frame_rate {frame_rate} must be positive")));
    }
    let frames: usize = segmentations.iter().map(|s| s.n_frames()).sum();
    if frames == 0 {
        return Err(Error::invalid("total duration is zero"));
    }
    let sonorants: usize = segmentations.iter().map(|s| s.count(SpeechType::Sonorant)).sum();
    if sonorants == 0 {
        log::warn!("no sonorant segments found; speaking rate is 0 and global conversion is unavailable");
    }
    Ok(sonorants as f64 / (frames as f64 / frame_rate))
}

/// Segment durations in seconds, grouped by speech type.
pub fn segment_durations(
    segmentations: &[Segmentation],
    frame_rate: f64,
) -> BTreeMap<SpeechType, Vec<f64>> {
    let mut out: BTreeMap<SpeechType, Vec<f64>> =
        SpeechType::ALL.iter().map(|&t| (t, Vec::new())).collect();
    for seg in segmentations.iter().flat_map(|s| s.segments()) {
        out.get_mut(&seg.kind)
            .unwrap()
            .push(seg.len() as f64 / frame_rate);
    }
    out
}

/// Builds a speaker's rhythm model from segmented utterances.
///
/// Types whose durations cannot be fitted are left out of `fine` with a
/// warning.
pub fn build_rhythm_model(
    speaker: &str,
    segmentations: &[Segmentation],
    frame_rate: f32,
) -> Result<RhythmModel> {
    let rate_sps = estimate_speaking_rate(segmentations, frame_rate as f64)?;
    let mut fine = BTreeMap::new();
    for (kind, durations) in segment_durations(segmentations, frame_rate as f64) {
        match fit_gamma(&durations) {
            Ok(p) => {
                fine.insert(kind, p);
            }
            Err(e) => log::warn!("speaker {speaker}: no {kind} duration model ({e})"),
        }
    }
    Ok(RhythmModel {
        speaker: speaker.to_string(),
        frame_rate,
        rate_sps,
        fine,
    })
}

fn check_rate(m: &RhythmModel, side: &str) -> Result<()> {
    if !(m.rate_sps.is_finite() && m.rate_sps > 0.0) {
        return Err(Error::invalid(format!(
            "{side} rhythm model ({}) has speaking rate {}",
            m.speaker, m.rate_sps
        )));
    }
    Ok(())
}

/// Output length of a global conversion.
pub fn global_target_length(t_in: usize, src_rate: f64, tgt_rate: f64) -> usize {
    ((t_in as f64 * src_rate / tgt_rate).round() as usize).max(1)
}

fn stretch_flags(flags: &[FrameFlags], t_out: usize) -> Vec<FrameFlags> {
    (0..t_out)
        .map(|i| flags[stretch::nearest_source_index(flags.len(), t_out, i)])
        .collect()
}

/// Stretches the whole utterance by `src.rate_sps / tgt.rate_sps`.
pub fn convert_global(
    seq: &FeatureSequence,
    src: &RhythmModel,
    tgt: &RhythmModel,
) -> Result<FeatureSequence> {
    check_rate(src, "source")?;
    check_rate(tgt, "target")?;
    if seq.is_empty() {
        return Err(Error::invalid("cannot convert an empty sequence"));
    }
    let t_in = seq.n_frames();
    let t_out = global_target_length(t_in, src.rate_sps, tgt.rate_sps);
    let frames = time_stretch(seq.as_flat(), seq.dim(), t_out)?;
    let flags = seq.flags().map(|f| stretch_flags(f, t_out));
    FeatureSequence::with_flags(seq.frame_rate(), seq.dim(), frames, flags)
}

/// Per-segment target frame counts for a fine-grained conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct StretchPlan {
    pub steps: Vec<(Segment, usize)>,
}

impl StretchPlan {
    pub fn total_frames(&self) -> usize {
        self.steps.iter().map(|(_, n)| n).sum()
    }
}

fn fine_params<'a>(m: &'a RhythmModel, kind: SpeechType, side: &str) -> Result<&'a GammaParams> {
    m.fine.get(&kind).ok_or_else(|| {
        Error::MissingModel(format!(
            "{side} rhythm model ({}) has no {kind} duration distribution",
            m.speaker
        ))
    })
}

/// Maps one duration (seconds) through the source CDF and target PPF.
pub fn map_duration(d: f64, src: &GammaParams, tgt: &GammaParams) -> Result<f64> {
    let u = gamma_cdf(src, d)?.clamp(CDF_CLAMP.0, CDF_CLAMP.1);
    gamma_ppf(tgt, u)
}

pub fn plan_fine(
    segmentation: &Segmentation,
    frame_rate: f64,
    src: &RhythmModel,
    tgt: &RhythmModel,
) -> Result<StretchPlan> {
    let steps = segmentation
        .segments()
        .iter()
        .map(|seg| {
            let d = seg.len() as f64 / frame_rate;
            let d_new = map_duration(
                d,
                fine_params(src, seg.kind, "source")?,
                fine_params(tgt, seg.kind, "target")?,
            )?;
            let frames = ((d_new * frame_rate).round() as usize).max(1);
            Ok((*seg, frames))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StretchPlan { steps })
}

/// Applies a stretch plan segment by segment and concatenates the results.
pub fn apply_plan(seq: &FeatureSequence, plan: &StretchPlan) -> Result<FeatureSequence> {
    let covered = plan.steps.last().map_or(0, |(s, _)| s.end);
    if covered != seq.n_frames() {
        return Err(Error::invalid(format!(
            "plan covers {covered} frames, sequence has {}",
            seq.n_frames()
        )));
    }
    let dim = seq.dim();
    let mut frames = Vec::with_capacity(plan.total_frames() * dim);
    let mut flags = seq.flags().map(|_| Vec::with_capacity(plan.total_frames()));
    for (seg, n) in &plan.steps {
        let src = &seq.as_flat()[seg.start * dim..seg.end * dim];
        frames.extend(time_stretch(src, dim, *n)?);
        if let (Some(out), Some(f)) = (flags.as_mut(), seq.flags()) {
            out.extend(stretch_flags(&f[seg.start..seg.end], *n));
        }
    }
    FeatureSequence::with_flags(seq.frame_rate(), dim, frames, flags)
}

/// Remaps every segment's duration to the target distribution of its type.
pub fn convert_fine(
    seq: &FeatureSequence,
    segmentation: &Segmentation,
    src: &RhythmModel,
    tgt: &RhythmModel,
) -> Result<FeatureSequence> {
    if segmentation.n_frames() != seq.n_frames() {
        return Err(Error::invalid(format!(
            "segmentation covers {} frames, sequence has {}",
            segmentation.n_frames(),
            seq.n_frames()
        )));
    }
    let plan = plan_fine(segmentation, seq.frame_rate() as f64, src, tgt)?;
    apply_plan(seq, &plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(kinds: &[(SpeechType, usize)]) -> Segmentation {
        let mut start = 0;
        let v = kinds
            .iter()
            .map(|&(kind, len)| {
                let s = Segment {
                    kind,
                    start,
                    end: start + len,
                };
                start += len;
                s
            })
            .collect();
        Segmentation::new(v).unwrap()
    }

    fn model(rate: f64) -> RhythmModel {
        RhythmModel {
            speaker: "x".into(),
            frame_rate: 50.0,
            rate_sps: rate,
            fine: SpeechType::ALL
                .iter()
                .map(|&t| (t, GammaParams::new(3.0, 0.05, 10).unwrap()))
                .collect(),
        }
    }

    fn ramp(n: usize, dim: usize) -> FeatureSequence {
        FeatureSequence::new(50.0, dim, (0..n * dim).map(|i| i as f32 * 0.1).collect()).unwrap()
    }

    #[test]
    fn rate_formula() {
        use SpeechType::*;
        // 5 sonorants in 125 frames = 2.5 s at 50 fps.
        let s = seg(&[
            (Silence, 25),
            (Sonorant, 10),
            (Obstruent, 5),
            (Sonorant, 10),
            (Obstruent, 5),
            (Sonorant, 10),
            (Silence, 20),
            (Sonorant, 10),
            (Obstruent, 10),
            (Sonorant, 20),
        ]);
        assert_eq!(s.n_frames(), 125);
        assert!((estimate_speaking_rate(&[s], 50.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_sonorants_gives_zero_rate() {
        let s = seg(&[(SpeechType::Silence, 150)]);
        assert_eq!(estimate_speaking_rate(&[s], 50.0).unwrap(), 0.0);
        assert!(estimate_speaking_rate(&[], 50.0).is_err());
    }

    #[test]
    fn global_identity_and_lengths() {
        let x = ramp(100, 3);
        assert_eq!(convert_global(&x, &model(3.0), &model(3.0)).unwrap(), x);
        assert_eq!(convert_global(&x, &model(2.0), &model(4.0)).unwrap().n_frames(), 50);
        assert_eq!(global_target_length(260, 1.5, 3.9), 100);
        assert!(convert_global(&x, &model(0.0), &model(4.0)).is_err());
        assert!(convert_global(&x, &model(2.0), &model(0.0)).is_err());
    }

    #[test]
    fn fine_missing_type_is_an_error() {
        let x = ramp(10, 2);
        let s = seg(&[(SpeechType::Silence, 4), (SpeechType::Obstruent, 6)]);
        let mut tgt = model(3.0);
        tgt.fine.remove(&SpeechType::Obstruent);
        assert!(matches!(
            convert_fine(&x, &s, &model(3.0), &tgt),
            Err(Error::MissingModel(_))
        ));
    }

    #[test]
    fn fine_output_length_is_sum_of_plan() {
        let x = ramp(30, 2);
        let s = seg(&[(SpeechType::Silence, 4), (SpeechType::Sonorant, 20), (SpeechType::Obstruent, 6)]);
        let mut tgt = model(3.0);
        tgt.fine.insert(SpeechType::Sonorant, GammaParams::new(3.0, 0.02, 10).unwrap());
        let plan = plan_fine(&s, 50.0, &model(3.0), &tgt).unwrap();
        let out = convert_fine(&x, &s, &model(3.0), &tgt).unwrap();
        assert_eq!(out.n_frames(), plan.total_frames());
        assert!(plan.steps[1].1 < 20);
    }

    #[test]
    fn flags_follow_the_stretch() {
        let flags: Vec<FrameFlags> = (0..10)
            .map(|t| if t < 5 { FrameFlags::SILENCE } else { FrameFlags::VOICED })
            .collect();
        let x = FeatureSequence::with_flags(50.0, 1, (0..10).map(|v| v as f32).collect(), Some(flags)).unwrap();
        let y = convert_global(&x, &model(1.0), &model(2.0)).unwrap();
        let f = y.flags().unwrap();
        assert_eq!(f.len(), 5);
        assert!(f[0].is_silence && f[4].is_voiced);
    }

    #[test]
    fn json_layout() {
        let m = model(2.5);
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["rate_sps"], 2.5);
        assert_eq!(v["fine"]["sonorant"]["n"], 10);
        assert_eq!(v["fine"]["silence"]["shape"], 3.0);
        let global_only = r#"{"speaker":"s","frame_rate":50.0,"rate_sps":3.1}"#;
        let g = RhythmModel::from_json(global_only).unwrap();
        assert!(g.fine.is_empty() && !g.has_fine());
        assert!(RhythmModel::from_json(r#"{"speaker":"s","frame_rate":0,"rate_sps":3.1}"#).is_err());
    }
}
