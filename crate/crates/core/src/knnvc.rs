//! Frame-wise k-nearest-neighbour voice conversion.
//!
//! Every source frame is replaced by an average of its `k` most
//! cosine-similar frames from the target speaker's pool, weighted by the
//! (non-negative part of the) similarity.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featstore::FeatureSequence;

pub const DEFAULT_K: usize = 8;

/// Queries scored together against each pool row.
const QUERY_BLOCK: usize = 16;

/// The target speaker's frame bank.
#[derive(Debug, Clone)]
pub struct MatchingPool {
    dim: usize,
    frames: Vec<f32>,
    norms: Vec<f64>,
}

impl MatchingPool {
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.frames
    }
}

fn norm(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Concatenates sequences into a pool, dropping zero-norm frames.
pub fn build_pool(sequences: &[FeatureSequence]) -> Result<MatchingPool> {
    let dim = sequences
        .iter()
        .find(|s| !s.is_empty())
        .map(|s| s.dim())
        .ok_or_else(|| Error::invalid("matching pool needs at least one non-empty sequence"))?;
    let mut frames = Vec::new();
    let mut norms = Vec::new();
    let mut dropped = 0usize;
    for s in sequences {
        if s.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        for f in s.frames() {
            let n = norm(f);
            if n > 0.0 {
                frames.extend_from_slice(f);
                norms.push(n);
            } else {
                dropped += 1;
            }
        }
    }
    if dropped > 0 {
        log::warn!("matching pool: dropped {dropped} zero-norm frames");
    }
    if norms.is_empty() {
        return Err(Error::invalid("matching pool contains only zero frames"));
    }
    Ok(MatchingPool { dim, frames, norms })
}

/// Running top-k list ordered by descending similarity, then ascending index.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// Candidates must arrive in increasing index order.
    fn offer(&mut self, sim: f64, idx: usize) {
        if self.items.len() == self.k {
            if sim <= self.items[self.k - 1].0 {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(s, _)| s >= sim);
        self.items.insert(pos, (sim, idx));
    }
}

fn weighted_average(pool: &MatchingPool, top: &[(f64, usize)], out: &mut [f32]) {
    let mut weights: Vec<f64> = top.iter().map(|&(s, _)| s.max(0.0)).collect();
    let mut total: f64 = weights.iter().sum();
    if total <= 0.0 {
        weights.iter_mut().for_each(|w| *w = 1.0);
        total = weights.len() as f64;
    }
    let mut acc = vec![0.0f64; pool.dim];
    for (&(_, idx), &w) in top.iter().zip(&weights) {
        for (a, &v) in acc.iter_mut().zip(pool.frame(idx)) {
            *a += w * v as f64;
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = (a / total) as f32;
    }
}

/// Replaces each frame of `seq` by the similarity-weighted mean of its `k`
/// nearest pool frames under cosine similarity.
///
/// `k` larger than the pool is clamped. Zero source frames are passed
/// through unchanged. Frame count, rate and flags are preserved.
pub fn convert_sequence(seq: &FeatureSequence, pool: &MatchingPool, k: usize) -> Result<FeatureSequence> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if seq.dim() != pool.dim {
        return Err(Error::DimMismatch {
            expected: pool.dim,
            found: seq.dim(),
        });
    }
    let k = if k > pool.len() {
        log::warn!("k = {k} exceeds pool size {}; using {}", pool.len(), pool.len());
        pool.len()
    } else {
        k
    };
    let dim = seq.dim();
    let mut out = vec![0.0f32; seq.as_flat().len()];
    let zero_frames: usize = out
        .par_chunks_mut(QUERY_BLOCK * dim)
        .zip(seq.as_flat().par_chunks(QUERY_BLOCK * dim))
        .map(|(out_block, in_block)| {
            let queries: Vec<(&[f32], f64)> = in_block
                .chunks_exact(dim)
                .map(|q| (q, norm(q)))
                .collect();
            let mut tops: Vec<TopK> = queries.iter().map(|_| TopK::new(k)).collect();
            for (i, (row, &row_norm)) in pool.frames.chunks_exact(dim).zip(&pool.norms).enumerate() {
                for ((q, q_norm), top) in queries.iter().zip(tops.iter_mut()) {
                    if *q_norm > 0.0 {
                        top.offer(dot(q, row) / (q_norm * row_norm), i);
                    }
                }
            }
            let mut zeros = 0;
            for (((q, q_norm), top), o) in queries.iter().zip(&tops).zip(out_block.chunks_exact_mut(dim)) {
                if *q_norm > 0.0 {
                    weighted_average(pool, &top.items, o);
                } else {
                    o.copy_from_slice(q);
                    zeros += 1;
                }
            }
            zeros
        })
        .sum();
    if zero_frames > 0 {
        log::warn!("kNN conversion: {zero_frames} zero source frames copied through");
    }
    FeatureSequence::with_flags(seq.frame_rate(), dim, out, seq.flags().map(|f| f.to_vec()))
}
