use crate::error::{Error, Result};

/// Resamples `t_in` frames of width `dim` to `t_out` frames by linear
/// interpolation.
///
/// Output frame `i` sits at input position `i·(t_in−1)/(t_out−1)`, so both
/// endpoints are copied exactly; `t_out == t_in` is an exact copy and
/// `t_out == 1` returns the first frame.
pub fn time_stretch(frames: &[f32], dim: usize, t_out: usize) -> Result<Vec<f32>> {
    if dim == 0 || !frames.len().is_multiple_of(dim) {
        return Err(Error::invalid("frames do not form whole rows"));
    }
    let t_in = frames.len() / dim;
    if t_in == 0 || t_out == 0 {
        return Err(Error::invalid(format!(
            "time_stretch needs at least one input and output frame ({t_in} → {t_out})"
        )));
    }
    if t_out == t_in {
        return Ok(frames.to_vec());
    }
    let row = |t: usize| &frames[t * dim..(t + 1) * dim];
    if t_out == 1 {
        return Ok(row(0).to_vec());
    }
    let mut out = Vec::with_capacity(t_out * dim);
    for i in 0..t_out {
        let pos = (i * (t_in - 1)) as f64 / (t_out - 1) as f64;
        let lo = (pos.floor() as usize).min(t_in - 1);
        let frac = pos - lo as f64;
        if frac == 0.0 || lo + 1 == t_in {
            out.extend_from_slice(row(lo));
        } else {
            let (a, b) = (row(lo), row(lo + 1));
            out.extend(
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| ((1.0 - frac) * x as f64 + frac * y as f64) as f32),
            );
        }
    }
    Ok(out)
}

/// Input frame index nearest to each output frame of a stretch.
pub(crate) fn nearest_source_index(t_in: usize, t_out: usize, i: usize) -> usize {
    if t_out <= 1 || t_in <= 1 {
        return 0;
    }
    let pos = (i * (t_in - 1)) as f64 / (t_out - 1) as f64;
    (pos.round() as usize).min(t_in - 1)
}
