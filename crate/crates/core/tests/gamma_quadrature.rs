//! Gamma CDF/PPF and duration mapping checked against numerical integration
//! of the density, independent of the incomplete-gamma code.

use std::collections::BTreeMap;

use rnv::rhythm::{convert_fine, gamma_cdf, gamma_ppf, map_duration, plan_fine, GammaParams, RhythmModel};
use rnv::segmenter::{Segment, Segmentation};
use rnv::{FeatureSequence, SpeechType};

fn density(shape: f64, scale: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return if shape == 1.0 { 1.0 / scale } else { 0.0 };
    }
    // Integer shapes only: Γ(n) = (n − 1)!.
    assert!(shape.fract() == 0.0 && shape >= 1.0, "integer shapes only");
    let gamma_fn: f64 = (1..shape as u32).map(f64::from).product();
    x.powf(shape - 1.0) * (-x / scale).exp() / (gamma_fn * scale.powf(shape))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, left, tol / 2.0, depth - 1) + adaptive(f, m, b, right, tol / 2.0, depth - 1)
}

fn quad_cdf(shape: f64, scale: f64, x: f64) -> f64 {
    let f = move |t: f64| density(shape, scale, t);
    adaptive(&f, 0.0, x, simpson(&f, 0.0, x), 1e-13, 50)
}

fn quad_quantile(shape: f64, scale: f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, shape * scale * 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if quad_cdf(shape, scale, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn cdf_at_mean_matches_quadrature() {
    let p = GammaParams::new(2.0, 0.5, 0).unwrap();
    let oracle = quad_cdf(2.0, 0.5, 1.0);
    // Closed form for shape 2 as a sanity check on the oracle itself.
    assert!((oracle - (1.0 - 3.0 * (-2f64).exp())).abs() < 1e-10);
    assert!((gamma_cdf(&p, 1.0).unwrap() - oracle).abs() < 1e-8);
}

#[test]
fn cdf_matches_quadrature_on_a_grid() {
    for (shape, scale) in [(1.0, 1.0), (2.0, 0.5), (3.0, 0.2)] {
        let p = GammaParams::new(shape, scale, 0).unwrap();
        for i in 1..40 {
            let x = i as f64 * shape * scale / 10.0;
            let err = (gamma_cdf(&p, x).unwrap() - quad_cdf(shape, scale, x)).abs();
            assert!(err < 1e-8, "shape {shape} x {x}: {err}");
        }
    }
}

#[test]
fn median_matches_quadrature_root() {
    let p = GammaParams::new(2.0, 3.0, 0).unwrap();
    let oracle = quad_quantile(2.0, 3.0, 0.5);
    assert!((gamma_ppf(&p, 0.5).unwrap() - oracle).abs() < 1e-7, "{oracle}");
}

#[test]
fn cdf_is_non_decreasing() {
    for shape in [0.5, 1.0, 2.0, 7.5] {
        let p = GammaParams::new(shape, 1.0, 0).unwrap();
        let mut prev = 0.0;
        for i in 0..2000 {
            let c = gamma_cdf(&p, i as f64 * 0.01).unwrap();
            assert!(c >= prev, "shape {shape} at {}", i as f64 * 0.01);
            prev = c;
        }
    }
}

fn rhythm(silence: (f64, f64), speech: (f64, f64)) -> RhythmModel {
    let mut fine = BTreeMap::new();
    fine.insert(SpeechType::Silence, GammaParams::new(silence.0, silence.1, 50).unwrap());
    for t in [SpeechType::Sonorant, SpeechType::Obstruent] {
        fine.insert(t, GammaParams::new(speech.0, speech.1, 50).unwrap());
    }
    RhythmModel {
        speaker: "x".into(),
        frame_rate: 100.0,
        rate_sps: 3.0,
        fine,
    }
}

#[test]
fn source_median_maps_to_target_median() {
    let src = GammaParams::new(2.0, 0.15, 10).unwrap();
    let tgt = GammaParams::new(3.0, 0.04, 10).unwrap();
    let src_median = quad_quantile(2.0, 0.15, 0.5);
    let tgt_median = quad_quantile(3.0, 0.04, 0.5);
    let mapped = map_duration(src_median, &src, &tgt).unwrap();
    assert!((mapped - tgt_median).abs() < 1e-7, "{mapped} vs {tgt_median}");

    // Same thing through the frame-level plan: one silence segment of the
    // source median length at 100 fps.
    let fr = 100.0;
    let mut src_model = rhythm((2.0, 0.15), (2.0, 0.1));
    let mut tgt_model = rhythm((3.0, 0.04), (2.0, 0.1));
    src_model.frame_rate = fr as f32;
    tgt_model.frame_rate = fr as f32;
    let n = (src_median * fr).round() as usize;
    let seg = Segmentation::new(vec![Segment {
        kind: SpeechType::Silence,
        start: 0,
        end: n,
    }])
    .unwrap();
    let plan = plan_fine(&seg, fr, &src_model, &tgt_model).unwrap();
    let expected = (tgt_median * fr).round() as usize;
    assert!(plan.steps[0].1.abs_diff(expected) <= 1, "{} vs {expected}", plan.steps[0].1);
}

#[test]
fn longer_source_silences_are_all_shortened() {
    // Source silence Gamma(4, 0.125) (mean 0.5 s) stochastically dominates
    // target Gamma(4, 0.025) (mean 0.1 s).
    let src = rhythm((4.0, 0.125), (2.0, 0.08));
    let tgt = rhythm((4.0, 0.025), (2.0, 0.08));
    let fr = 100.0;
    let lo = (gamma_ppf(&src.fine[&SpeechType::Silence], 0.001).unwrap() * fr).ceil() as usize;
    let mut segments = Vec::new();
    let mut start = 0;
    for (i, len) in (lo..lo + 150).step_by(3).enumerate() {
        let kind = if i % 2 == 0 {
            SpeechType::Silence
        } else {
            SpeechType::Sonorant
        };
        let len = if kind == SpeechType::Silence { len } else { 10 };
        segments.push(Segment {
            kind,
            start,
            end: start + len,
        });
        start += len;
    }
    let seg = Segmentation::new(segments).unwrap();
    let seq = FeatureSequence::new(fr as f32, 1, (0..start).map(|t| t as f32).collect()).unwrap();
    let plan = plan_fine(&seg, fr, &src, &tgt).unwrap();
    for (s, target) in &plan.steps {
        if s.kind == SpeechType::Silence {
            assert!(*target < s.len(), "silence of {} frames became {target}", s.len());
        }
    }
    let out = convert_fine(&seq, &seg, &src, &tgt).unwrap();
    assert!(out.n_frames() < seq.n_frames());
}
