//! Word error rate with a pinned text normalization.

use serde::{Deserialize, Serialize};

/// Lowercases, replaces everything outside `[a-z0-9']` with spaces and
/// collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\'' {
            out.push(c);
        } else if !out.ends_with(' ') && !out.is_empty() {
            out.push(' ');
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

pub fn tokenize(s: &str) -> Vec<String> {
    normalize_text(s).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WerCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_ref: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.n_ref.max(1) as f64
    }
}

/// Aligns normalized reference and hypothesis tokens with unit costs.
///
/// Among minimum-cost alignments the one with the fewest deletions is
/// reported, which fixes the substitution / deletion / insertion split.
pub fn score_wer(reference: &str, hypothesis: &str) -> WerCounts {
    let r = tokenize(reference);
    let h = tokenize(hypothesis);
    align_counts(&r, &h)
}

pub fn align_counts<T: PartialEq>(r: &[T], h: &[T]) -> WerCounts {
    // cell = (cost, deletions); insertions and substitutions follow from
    // the prefix lengths.
    let w = h.len() + 1;
    let mut prev: Vec<(usize, usize)> = (0..w).map(|j| (j, 0)).collect();
    let mut cur = vec![(0usize, 0usize); w];
    for i in 1..=r.len() {
        cur[0] = (i, i);
        for j in 1..w {
            let (dc, dd) = prev[j - 1];
            let diag = (dc + (r[i - 1] != h[j - 1]) as usize, dd);
            let del = (prev[j].0 + 1, prev[j].1 + 1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, deletions) = prev[h.len()];
    let insertions = h.len() + deletions - r.len();
    WerCounts {
        substitutions: cost - deletions - insertions,
        deletions,
        insertions,
        n_ref: r.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  Hello,   World! It's 2 o'clock. "), "hello world it's 2 o'clock");
        assert_eq!(normalize_text("DB, that’s"), "db that s");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("?!"), "");
    }

    #[test]
    fn identical() {
        let c = score_wer("this is a test", "this is a test");
        assert_eq!(c, WerCounts { substitutions: 0, deletions: 0, insertions: 0, n_ref: 4 });
        assert_eq!(c.wer(), 0.0);
    }

    #[test]
    fn all_deleted() {
        let c = score_wer("a b c", "");
        assert_eq!((c.substitutions, c.deletions, c.insertions, c.n_ref), (0, 3, 0, 3));
        assert_eq!(c.wer(), 1.0);
    }

    #[test]
    fn empty_reference() {
        let c = score_wer("", "x y");
        assert_eq!((c.insertions, c.n_ref), (2, 0));
        assert_eq!(c.wer(), 2.0);
        assert_eq!(score_wer("", "").wer(), 0.0);
    }

    #[test]
    fn swapping_arguments_swaps_deletions_and_insertions() {
        let a = score_wer("the cat sat on the mat", "the cat sat");
        let b = score_wer("the cat sat", "the cat sat on the mat");
        assert_eq!((a.deletions, a.insertions), (3, 0));
        assert_eq!((b.deletions, b.insertions), (0, 3));
        assert_ne!(a, b);
    }

    #[test]
    fn prefers_substitution_over_delete_insert() {
        let c = score_wer("a b", "b a");
        assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 0, 0));
    }
}
