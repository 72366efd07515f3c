//! Boundary-penalized segmentation of per-frame class log-probabilities.
//!
//! The objective of a labelled partition is the summed log-probability of
//! each frame under its segment's label, minus `gamma` per segment. Splitting
//! a run into two runs with the same label only adds a penalty, so the optimum
//! over partitions equals the optimum over per-frame labelings charged
//! `gamma` per label run, which a three-state Viterbi pass finds in O(3n).

use super::{Segment, Segmentation, SpeechType, N_TYPES};
use crate::error::{Error, Result};

/// Optimal segmentation and its objective value.
#[derive(Debug, Clone)]
pub struct DpSolution {
    pub segmentation: Segmentation,
    pub objective: f64,
}

/// Finds the labelled partition of `0..n` maximizing
/// `Σ_segments Σ_{t ∈ segment} log_probs[t][label] − gamma · #segments`.
pub fn segment_dp(log_probs: &[[f64; N_TYPES]], gamma: f64) -> Result<DpSolution> {
    let n = log_probs.len();
    if n == 0 {
        return Err(Error::invalid("cannot segment an empty sequence"));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be non-negative, got {gamma}")));
    }
    if log_probs.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::invalid("log-probabilities contain NaN"));
    }

    // score[t][c]: best objective over frames 0..=t with frame t labelled c.
    // opened[t][c]: whether frame t starts a new segment on that path.
    let mut score = vec![[0.0f64; N_TYPES]; n];
    let mut opened = vec![[true; N_TYPES]; n];
    for c in 0..N_TYPES {
        score[0][c] = log_probs[0][c] - gamma;
    }
    for t in 1..n {
        let (best_prev, _) = argmax(&score[t - 1]);
        let open = best_prev - gamma;
        for c in 0..N_TYPES {
            let stay = score[t - 1][c];
            // Continuing wins ties so equal-label runs never split.
            if stay >= open {
                score[t][c] = stay + log_probs[t][c];
                opened[t][c] = false;
            } else {
                score[t][c] = open + log_probs[t][c];
                opened[t][c] = true;
            }
        }
    }

    let mut c = argmax(&score[n - 1]).1;
    let mut labels = vec![0usize; n];
    for t in (0..n).rev() {
        labels[t] = c;
        if t > 0 && opened[t][c] {
            c = argmax(&score[t - 1]).1;
        }
    }
    let segmentation = Segmentation::from_labels(
        &labels
            .iter()
            .map(|&l| SpeechType::from_index(l))
            .collect::<Vec<_>>(),
    );
    // Recomputed in time order so equal partitions report identical values.
    let objective = objective(log_probs, segmentation.segments(), gamma);
    Ok(DpSolution {
        segmentation,
        objective,
    })
}

/// Maximum and its lowest index.
fn argmax(row: &[f64; N_TYPES]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, c);
        }
    }
    best
}

/// Objective of an arbitrary labelled partition, summing frames in time order.
pub fn objective(log_probs: &[[f64; N_TYPES]], segments: &[Segment], gamma: f64) -> f64 {
    let mut total = 0.0;
    for s in segments {
        for row in &log_probs[s.start..s.end] {
            total += row[s.kind.index()];
        }
    }
    total - gamma * segments.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strong_single_class_is_one_segment() {
        let lp = vec![[-9.0, -0.01, -7.0]; 40];
        let sol = segment_dp(&lp, 3.0).unwrap();
        assert_eq!(sol.segmentation.segments().len(), 1);
        assert_eq!(sol.segmentation.segments()[0].kind, SpeechType::Sonorant);
    }

    #[test]
    fn zero_gamma_is_framewise_argmax() {
        let lp = vec![
            [-0.1, -2.0, -3.0],
            [-0.2, -1.0, -3.0],
            [-3.0, -0.1, -2.0],
            [-3.0, -2.0, -0.3],
            [-3.0, -2.0, -0.3],
        ];
        let sol = segment_dp(&lp, 0.0).unwrap();
        let kinds: Vec<_> = sol.segmentation.segments().iter().map(|s| (s.kind, s.start, s.end)).collect();
        assert_eq!(
            kinds,
            vec![
                (SpeechType::Silence, 0, 2),
                (SpeechType::Sonorant, 2, 3),
                (SpeechType::Obstruent, 3, 5)
            ]
        );
    }

    #[test]
    fn penalty_absorbs_short_blip() {
        let mut lp = vec![[-0.1, -3.0, -3.0]; 10];
        lp[5] = [-1.5, -0.1, -3.0];
        assert_eq!(segment_dp(&lp, 0.0).unwrap().segmentation.segments().len(), 3);
        assert_eq!(segment_dp(&lp, 3.0).unwrap().segmentation.segments().len(), 1);
    }

    #[test]
    fn reported_objective_matches_segments() {
        let lp: Vec<[f64; 3]> = (0..25)
            .map(|t| {
                let x = t as f64;
                [-(x * 0.37).sin().abs(), -(x * 0.11).cos().abs(), -0.5]
            })
            .collect();
        for gamma in [0.0, 0.5, 3.0] {
            let sol = segment_dp(&lp, gamma).unwrap();
            let check = objective(&lp, sol.segmentation.segments(), gamma);
            assert!((check - sol.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(segment_dp(&[], 1.0).is_err());
        assert!(segment_dp(&[[0.0; 3]], -1.0).is_err());
        assert!(segment_dp(&[[f64::NAN, 0.0, 0.0]], 1.0).is_err());
    }
}
