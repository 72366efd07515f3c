use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rnv::pipeline::{self, analyze, report, ConversionModels, ConversionSetup};
use rnv::segmenter::{TrainConfig, DEFAULT_CODEBOOK_SIZE, DEFAULT_GAMMA};
use rnv::{knnvc, read_manifest, RhythmModel, SegmenterModel};

#[derive(Parser)]
#[command(name = "rnv", version, about = "Rhythm and voice conversion on speech feature sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a speech-type segmenter on a target speaker's features.
    TrainSegmenter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CODEBOOK_SIZE)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output RNVS file; training metadata goes to `<out>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one speaker's speaking rate and per-type duration model.
    BuildRhythm {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long)]
        speaker: String,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment every utterance into silence / sonorant / obstruent runs (JSONL).
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a manifest under one experimental setup.
    Convert {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        setup: ConversionSetup,
        #[arg(long)]
        segmenter: Option<PathBuf>,
        #[arg(long)]
        src_rhythm: Option<PathBuf>,
        #[arg(long)]
        tgt_rhythm: Option<PathBuf>,
        #[arg(long)]
        pool_manifest: Option<PathBuf>,
        #[arg(long, default_value_t = knnvc::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-speaker rhythm summary as JSON and CSV.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score recognizer hypotheses and pool WER by severity.
    Wer {
        /// JSONL of {"id", "reference"}; defaults to manifest transcripts.
        #[arg(long)]
        refs: Option<PathBuf>,
        /// JSONL of {"id", "hypothesis"}.
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct TrainingMetadata {
    seed: u64,
    k: usize,
    n_utterances: usize,
    manifest_sha256: String,
    model_sha256: String,
}

#[derive(Deserialize)]
struct ReferenceLine {
    id: String,
    #[serde(alias = "transcript")]
    reference: String,
}

#[derive(Deserialize)]
struct HypothesisLine {
    id: String,
    hypothesis: String,
}

enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::TrainSegmenter {
            manifest,
            k,
            seed,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let model = pipeline::train_segmenter_from_manifest(&records, TrainConfig { k, seed })?;
            model.save(&out)?;
            let meta = TrainingMetadata {
                seed,
                k,
                n_utterances: records.len(),
                manifest_sha256: sha256_file(&manifest)?,
                model_sha256: sha256_file(&out)?,
            };
            let meta_path = sidecar_path(&out);
            fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
                .with_context(|| format!("writing {}", meta_path.display()))?;
            log::info!("segmenter with {} codewords written to {}", model.k(), out.display());
            Ok(Outcome::Done)
        }
        Command::BuildRhythm {
            manifest,
            segmenter,
            speaker,
            gamma,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let model = SegmenterModel::load(&segmenter)?;
            let rhythm = pipeline::build_rhythm_from_manifest(&records, &model, &speaker, gamma)?;
            if !rhythm.has_fine() {
                log::warn!("{speaker}: too few segments for per-type duration models");
            }
            rhythm.save(&out)?;
            log::info!("{speaker}: {:.3} sonorant segments/s", rhythm.rate_sps);
            Ok(Outcome::Done)
        }
        Command::Segment {
            manifest,
            segmenter,
            gamma,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let model = SegmenterModel::load(&segmenter)?;
            let mut text = String::new();
            let mut failed = 0;
            for (rec, r) in records.iter().zip(pipeline::segment_manifest(&records, &model, gamma)) {
                match r {
                    Ok(s) => {
                        text.push_str(&serde_json::to_string(&s)?);
                        text.push('\n');
                    }
                    Err(e) => {
                        log::warn!("{}: {e}", rec.id);
                        failed += 1;
                    }
                }
            }
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            Ok(if failed > 0 { Outcome::Partial } else { Outcome::Done })
        }
        Command::Convert {
            manifest,
            setup,
            segmenter,
            src_rhythm,
            tgt_rhythm,
            pool_manifest,
            k,
            gamma,
            out_dir,
        } => {
            let records = read_manifest(&manifest)?;
            let models = ConversionModels {
                segmenter: segmenter.as_deref().map(SegmenterModel::load).transpose()?,
                src_rhythm: src_rhythm.as_deref().map(RhythmModel::load).transpose()?,
                tgt_rhythm: tgt_rhythm.as_deref().map(RhythmModel::load).transpose()?,
                pool: None,
                k,
                gamma,
            };
            let models = match (&pool_manifest, setup.voice()) {
                (Some(p), true) => ConversionModels {
                    pool: Some(pipeline::pool_from_manifest(&read_manifest(p)?)?),
                    ..models
                },
                _ => models,
            };
            let run = pipeline::run_conversion(&records, &models, setup, &out_dir)?;
            log::info!(
                "{}: {} converted, {} failed",
                setup,
                run.utterances.len(),
                run.failures.len()
            );
            Ok(if run.is_partial() { Outcome::Partial } else { Outcome::Done })
        }
        Command::Analyze {
            manifest,
            segmenter,
            gamma,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let model = SegmenterModel::load(&segmenter)?;
            let rows = analyze::analyze_rhythm(&records, &model, gamma)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            analyze::write_analysis_json(&rows, &out.join("rhythm_analysis.json"))?;
            analyze::write_analysis_csv(&rows, &out.join("rhythm_analysis.csv"))?;
            let analyzed: usize = rows.iter().map(|r| r.n_utterances).sum();
            Ok(if analyzed < records.len() { Outcome::Partial } else { Outcome::Done })
        }
        Command::Wer {
            refs,
            hyps,
            manifest,
            out,
        } => {
            let records = read_manifest(&manifest)?;
            let references: HashMap<String, String> = match &refs {
                Some(p) => read_jsonl::<ReferenceLine>(p)?
                    .into_iter()
                    .map(|r| (r.id, r.reference))
                    .collect(),
                None => records
                    .iter()
                    .filter_map(|r| r.transcript.clone().map(|t| (r.id.clone(), t)))
                    .collect(),
            };
            let mut results = Vec::new();
            let mut missing = 0;
            for h in read_jsonl::<HypothesisLine>(&hyps)? {
                match references.get(&h.id) {
                    Some(r) => results.push(report::UtteranceResult::score(&h.id, r, &h.hypothesis)),
                    None => {
                        log::warn!("{}: no reference transcript, skipped", h.id);
                        missing += 1;
                    }
                }
            }
            let report = report::aggregate_report(&results, &records)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            report.write_json(&out.join("wer.json"))?;
            report.write_groups_csv(&out.join("wer_groups.csv"))?;
            report.write_utterances_csv(&out.join("wer_utterances.csv"))?;
            if let Some(o) = &report.overall {
                log::info!("overall WER {:.4} over {} words", o.wer, o.n_ref_words);
            }
            Ok(if missing > 0 { Outcome::Partial } else { Outcome::Done })
        }
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => bail!("{}:{}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sidecar_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}
