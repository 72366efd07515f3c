//! Waveform input and a fallback frame-level silence / voicing flagger.

use std::path::Path;

use crate::error::{Error, Result};
use crate::featstore::FrameFlags;

/// Silence gate, in dB below the utterance's 95th-percentile frame RMS.
pub const SILENCE_GATE_DB: f64 = 40.0;
pub const VOICING_THRESHOLD: f64 = 0.5;
pub const MIN_PITCH_HZ: f64 = 60.0;
pub const MAX_PITCH_HZ: f64 = 400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl Waveform {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("waveform contains non-finite samples"));
        }
        Ok(Waveform {
            sample_rate,
            samples,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a mono 16-bit PCM WAV file, scaling samples by 1/32768.
pub fn read_wav(source: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(source)
        .map_err(|e| Error::Wav(format!("{}: {e}", source.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!("channels={} unsupported", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav("format=float unsupported".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "bits_per_sample={} unsupported",
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Wav(format!("{}: {e}", source.display())))?;
    Waveform::new(spec.sample_rate, samples)
}

pub fn write_wav(w: &Waveform, destination: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(destination, spec)
        .map_err(|e| Error::Wav(format!("{}: {e}", destination.display())))?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Wav(e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::Wav(e.to_string()))
}

/// Rectangular analysis window of two hops centred on frame `t`, zero-padded.
fn frame_window(samples: &[f32], t: usize, hop: f64) -> Vec<f64> {
    let len = (2.0 * hop).round().max(1.0) as usize;
    let start = (t as f64 * hop - hop / 2.0).round() as i64;
    (0..len as i64)
        .map(|i| {
            let idx = start + i;
            if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize] as f64
            } else {
                0.0
            }
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Maximum normalized autocorrelation over lags `min_lag..=max_lag`.
pub fn max_normalized_autocorrelation(x: &[f64], min_lag: usize, max_lag: usize) -> f64 {
    let mut best = 0.0f64;
    for lag in min_lag.max(1)..=max_lag.min(x.len().saturating_sub(1)) {
        let head = &x[..x.len() - lag];
        let tail = &x[lag..];
        let mut num = 0.0;
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for (a, b) in head.iter().zip(tail) {
            num += a * b;
            e0 += a * a;
            e1 += b * b;
        }
        let den = (e0 * e1).sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    best
}

/// Nearest-rank percentile of an unsorted slice.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Flags each analysis frame as silent and/or voiced.
///
/// One flag pair is produced per hop of `sample_rate / frame_rate` samples,
/// so flag `t` lines up with feature frame `t`.
pub fn compute_frame_flags(w: &Waveform, frame_rate: f64) -> Result<Vec<FrameFlags>> {
    if w.samples.is_empty() {
        return Err(Error::invalid("empty waveform"));
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::invalid(format!("frame_rate {frame_rate} must be positive")));
    }
    let hop = w.sample_rate as f64 / frame_rate;
    if hop < 1.0 {
        return Err(Error::invalid(format!(
            "frame_rate {frame_rate} gives a hop of {hop} samples at {} Hz",
            w.sample_rate
        )));
    }
    let n_frames = (w.samples.len() as f64 / hop).ceil() as usize;
    let windows: Vec<Vec<f64>> = (0..n_frames)
        .map(|t| frame_window(&w.samples, t, hop))
        .collect();
    let energies: Vec<f64> = windows.iter().map(|x| rms(x)).collect();
    let reference = percentile(&energies, 0.95);
    let gate = reference * 10f64.powf(-SILENCE_GATE_DB / 20.0);

    let min_lag = (w.sample_rate as f64 / MAX_PITCH_HZ).floor() as usize;
    let max_lag = (w.sample_rate as f64 / MIN_PITCH_HZ).ceil() as usize;

    Ok(windows
        .iter()
        .zip(&energies)
        .map(|(x, &e)| {
            let is_silence = e == 0.0 || e < gate;
            let is_voiced =
                !is_silence && max_normalized_autocorrelation(x, min_lag, max_lag) >= VOICING_THRESHOLD;
            FrameFlags {
                is_silence,
                is_voiced,
            }
        })
        .collect())
}
