//! Severity-grouped WER reports.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wer::score_wer;
use crate::error::{Error, Result};
use crate::featstore::{write_atomic, Severity, UtteranceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_ref_words: usize,
}

impl UtteranceResult {
    pub fn score(id: &str, reference: &str, hypothesis: &str) -> Self {
        let c = score_wer(reference, hypothesis);
        UtteranceResult {
            id: id.to_string(),
            reference: reference.to_string(),
            hypothesis: hypothesis.to_string(),
            substitutions: c.substitutions,
            deletions: c.deletions,
            insertions: c.insertions,
            n_ref_words: c.n_ref,
        }
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.n_ref_words.max(1) as f64
    }
}

/// Pooled WER over a set of utterances: total errors over total reference words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWer {
    pub group: String,
    pub n_utterances: usize,
    pub errors: usize,
    pub n_ref_words: usize,
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceResult>,
    pub groups: Vec<GroupWer>,
    pub overall: Option<GroupWer>,
}

fn pooled<'a>(group: &str, results: impl Iterator<Item = &'a UtteranceResult>) -> Option<GroupWer> {
    let mut n = 0;
    let mut errors = 0;
    let mut words = 0;
    for r in results {
        n += 1;
        errors += r.errors();
        words += r.n_ref_words;
    }
    (words > 0).then(|| GroupWer {
        group: group.to_string(),
        n_utterances: n,
        errors,
        n_ref_words: words,
        wer: errors as f64 / words as f64,
    })
}

/// Pools per-utterance results by the severity recorded in `manifest`.
///
/// Groups without reference words are left out rather than reported as 0.
pub fn aggregate_report(results: &[UtteranceResult], manifest: &[UtteranceRecord]) -> Result<EvalReport> {
    let severity: HashMap<&str, Severity> =
        manifest.iter().map(|r| (r.id.as_str(), r.severity)).collect();
    let mut by_group: BTreeMap<Severity, Vec<&UtteranceResult>> = BTreeMap::new();
    for r in results {
        let s = severity
            .get(r.id.as_str())
            .ok_or_else(|| Error::invalid(format!("utterance {:?} is not in the manifest", r.id)))?;
        by_group.entry(*s).or_default().push(r);
    }
    let groups = by_group
        .iter()
        .filter_map(|(s, rs)| pooled(s.as_str(), rs.iter().copied()))
        .collect();
    Ok(EvalReport {
        utterances: results.to_vec(),
        groups,
        overall: pooled("overall", results.iter()),
    })
}

impl EvalReport {
    pub fn write_json(&self, destination: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(destination, text.as_bytes())
    }

    /// One row per group plus the overall row.
    pub fn write_groups_csv(&self, destination: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "n_utterances", "errors", "n_ref_words", "wer"])?;
        for g in self.groups.iter().chain(&self.overall) {
            w.write_record([
                g.group.clone(),
                g.n_utterances.to_string(),
                g.errors.to_string(),
                g.n_ref_words.to_string(),
                format!("{:.6}", g.wer),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        write_atomic(destination, &bytes)
    }

    pub fn write_utterances_csv(&self, destination: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id",
            "substitutions",
            "deletions",
            "insertions",
            "n_ref_words",
            "wer",
            "reference",
            "hypothesis",
        ])?;
        for u in &self.utterances {
            w.write_record([
                u.id.clone(),
                u.substitutions.to_string(),
                u.deletions.to_string(),
                u.insertions.to_string(),
                u.n_ref_words.to_string(),
                format!("{:.6}", u.wer()),
                u.reference.clone(),
                u.hypothesis.clone(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        write_atomic(destination, &bytes)
    }
}
