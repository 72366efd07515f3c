#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use rnv::featstore::{write_rnvf, FeatureSequence, FrameFlags, Severity, UtteranceRecord};
use rnv::SpeechType;

pub const FRAME_RATE: f32 = 50.0;
pub const DIM: usize = 8;
const NOISE_SD: f64 = 0.3;
const DURATION_SHAPE: f64 = 4.0;

/// Mean segment durations in seconds.
#[derive(Debug, Clone, Copy)]
pub struct Tempo {
    pub silence: f64,
    pub sonorant: f64,
    pub obstruent: f64,
}

pub const SLOW: Tempo = Tempo {
    silence: 0.50,
    sonorant: 0.30,
    obstruent: 0.15,
};

pub const FAST: Tempo = Tempo {
    silence: 0.10,
    sonorant: 0.15,
    obstruent: 0.10,
};

/// Planted codewords: one for silence, three per speech class.
fn planted_centre(kind: SpeechType, variant: usize) -> [f64; DIM] {
    let mut c = [0.0; DIM];
    match kind {
        SpeechType::Silence => c[0] = 0.5,
        SpeechType::Sonorant => {
            c[1] = 6.0;
            c[3 + variant % 3] = 1.5;
        }
        SpeechType::Obstruent => {
            c[2] = 6.0;
            c[6 + variant % 2] = if variant == 2 { -1.5 } else { 1.5 };
        }
    }
    c
}

fn flags_for(kind: SpeechType) -> FrameFlags {
    match kind {
        SpeechType::Silence => FrameFlags::SILENCE,
        SpeechType::Sonorant => FrameFlags::VOICED,
        SpeechType::Obstruent => FrameFlags::UNVOICED,
    }
}

pub struct SyntheticUtterance {
    pub seq: FeatureSequence,
    pub runs: Vec<(SpeechType, usize)>,
}

impl SyntheticUtterance {
    pub fn sonorants(&self) -> usize {
        self.runs.iter().filter(|(k, _)| *k == SpeechType::Sonorant).count()
    }
}

/// One utterance: silence, then `n_syllables` sonorants separated by an
/// obstruent (70%) or a pause, then silence.
pub fn synth_utterance(rng: &mut ChaCha8Rng, tempo: Tempo, n_syllables: usize) -> SyntheticUtterance {
    let mut runs = vec![SpeechType::Silence];
    for i in 0..n_syllables {
        runs.push(SpeechType::Sonorant);
        if i + 1 < n_syllables {
            runs.push(if rng.random_bool(0.7) {
                SpeechType::Obstruent
            } else {
                SpeechType::Silence
            });
        }
    }
    runs.push(SpeechType::Silence);

    let noise = Normal::new(0.0, NOISE_SD).unwrap();
    let mut frames = Vec::new();
    let mut flags = Vec::new();
    let mut out_runs = Vec::new();
    for kind in runs {
        let mean = match kind {
            SpeechType::Silence => tempo.silence,
            SpeechType::Sonorant => tempo.sonorant,
            SpeechType::Obstruent => tempo.obstruent,
        };
        let d = Gamma::new(DURATION_SHAPE, mean / DURATION_SHAPE).unwrap().sample(rng);
        let len = ((d * FRAME_RATE as f64).round() as usize).max(1);
        let centre = planted_centre(kind, rng.random_range(0..3));
        for _ in 0..len {
            frames.extend(centre.iter().map(|&c| (c + noise.sample(rng)) as f32));
            flags.push(flags_for(kind));
        }
        out_runs.push((kind, len));
    }
    SyntheticUtterance {
        seq: FeatureSequence::with_flags(FRAME_RATE, DIM, frames, Some(flags)).unwrap(),
        runs: out_runs,
    }
}

pub fn synth_corpus(seed: u64, tempo: Tempo, n_utterances: usize) -> Vec<SyntheticUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_utterances).map(|_| synth_utterance(&mut rng, tempo, 8)).collect()
}

/// Sonorant runs per second over the whole corpus, from the planted runs.
pub fn planted_rate(corpus: &[SyntheticUtterance]) -> f64 {
    let sonorants: usize = corpus.iter().map(|u| u.sonorants()).sum();
    let seconds: f64 = corpus.iter().map(|u| u.seq.duration()).sum();
    sonorants as f64 / seconds
}

/// Writes a corpus as RNVF files plus manifest records.
pub fn write_corpus(
    dir: &Path,
    speaker: &str,
    severity: Severity,
    corpus: &[SyntheticUtterance],
) -> Vec<UtteranceRecord> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let id = format!("{speaker}_{i:03}");
            let path = dir.join(format!("{id}.rnvf"));
            write_rnvf(&u.seq, &path).unwrap();
            UtteranceRecord {
                id,
                speaker: speaker.to_string(),
                severity,
                feature_path: path,
                audio_path: None,
                transcript: None,
            }
        })
        .collect()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, n_frames: usize, dim: usize) -> FeatureSequence {
    let frames = (0..n_frames * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureSequence::new(FRAME_RATE, dim, frames).unwrap()
}
