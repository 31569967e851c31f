//! Click-through-rate prediction as a yes/no prompting task: sample
//! construction, answer parsing, accuracy evaluation and fine-tuning export.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, CtrDataset, CtrRecord};
use crate::llmio::{ChatRequest, Llm, Message, OracleHint};
use crate::prompting::{ctr_input, ctr_instruction, render_ctr_prompt, CtrPromptStyle, ItemDomain};

/// JSON Schema of one exported fine-tuning line.
pub const FINETUNE_SCHEMA: &str = include_str!("../assets/finetune.schema.json");

#[derive(Debug, thiserror::Error)]
pub enum CtrError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CtrError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub item_id: String,
    pub title: String,
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrSample {
    pub user_id: String,
    /// At most 10 earlier interactions, oldest first.
    pub context: Vec<ContextItem>,
    pub target: String,
    pub target_title: String,
    pub rating: Option<f64>,
    pub label: bool,
    pub threshold: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrSamples {
    pub train: Vec<CtrSample>,
    pub valid: Vec<CtrSample>,
    pub test: Vec<CtrSample>,
    pub threshold: f64,
    pub window: usize,
    pub window_split: [usize; 3],
    pub skipped: usize,
    pub implicit_labels: usize,
}

impl CtrSamples {
    pub fn splits(&self) -> [(&'static str, &[CtrSample]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }

    pub fn all(&self) -> impl Iterator<Item = &CtrSample> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

fn sample_from(rec: &CtrRecord, threshold: f64, catalog: &Catalog) -> CtrSample {
    let t = &rec.interaction;
    CtrSample {
        user_id: t.user_id.clone(),
        context: rec
            .context
            .iter()
            .map(|c| ContextItem {
                item_id: c.item_id.clone(),
                title: catalog.title(&c.item_id).to_string(),
                rating: c.rating,
            })
            .collect(),
        target: t.item_id.clone(),
        target_title: catalog.title(&t.item_id).to_string(),
        rating: t.rating,
        label: rec.label,
        threshold,
        timestamp: t.timestamp,
    }
}

/// One sample per kept record of each split, ordered by (timestamp, user, item).
pub fn build_ctr_samples(dataset: &CtrDataset, catalog: &Catalog) -> CtrSamples {
    let conv = |recs: &[CtrRecord]| {
        let mut v: Vec<CtrSample> = recs.iter().map(|r| sample_from(r, dataset.threshold, catalog)).collect();
        v.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.user_id.cmp(&b.user_id))
                .then_with(|| a.target.cmp(&b.target))
        });
        v
    };
    CtrSamples {
        train: conv(&dataset.train),
        valid: conv(&dataset.valid),
        test: conv(&dataset.test),
        threshold: dataset.threshold,
        window: dataset.window,
        window_split: dataset.window_split,
        skipped: dataset.skipped.len(),
        implicit_labels: dataset.implicit_labels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtrAnswer {
    pub verdict: Verdict,
    pub raw: String,
}

/// Yes/no reading of a model answer. The first word decides when it is
/// "yes" or "no"; otherwise the first line must contain only one of the two
/// as a standalone word.
pub fn parse_ctr_answer(raw: &str) -> CtrAnswer {
    let norm: String = raw
        .trim()
        .to_lowercase()
        .chars()
        .filter(|c| !matches!(c, '"' | '\'' | '`' | '*' | '_' | '#' | '>' | '“' | '”' | '‘' | '’'))
        .collect();
    let words = |s: &str| -> Vec<String> { s.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_owned).collect() };
    let all = words(&norm);
    let verdict = match all.first().map(String::as_str) {
        Some("yes") => Verdict::Positive,
        Some("no") => Verdict::Negative,
        _ => {
            let first = words(norm.trim_start().lines().next().unwrap_or(""));
            let yes = first.iter().any(|w| w == "yes");
            let no = first.iter().any(|w| w == "no");
            match (yes, no) {
                (true, false) => Verdict::Positive,
                (false, true) => Verdict::Negative,
                _ => Verdict::Unparseable,
            }
        }
    };
    CtrAnswer { verdict, raw: raw.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrOutcome {
    pub user_id: String,
    pub target: String,
    pub label: bool,
    pub verdict: Verdict,
    pub correct: bool,
    /// LLM error message when the call failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrReport {
    pub style: CtrPromptStyle,
    pub llm: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub unparseable: usize,
    pub failures: usize,
    pub positive_rate: f64,
    pub outcomes: Vec<CtrOutcome>,
}

/// Ask the model about every sample and score exact verdict matches.
/// Unparseable answers and failed calls count as incorrect.
pub fn run_ctr_eval(samples: &[CtrSample], llm: &dyn Llm, style: CtrPromptStyle, domain: ItemDomain) -> Result<CtrReport> {
    if samples.is_empty() {
        return Err(CtrError::Empty);
    }
    let outcomes: Vec<CtrOutcome> = samples
        .par_iter()
        .map(|s| {
            let prompt = render_ctr_prompt(s, style, domain);
            let req = ChatRequest::new(prompt.user_turns.into_iter().map(Message::user).collect()).with_hint(OracleHint {
                ground_truth_line: None,
                label: Some(s.label),
            });
            let (verdict, failure) = match llm.complete(&req) {
                Ok(c) => (parse_ctr_answer(&c.text).verdict, None),
                Err(e) => (Verdict::Unparseable, Some(e.to_string())),
            };
            let correct = matches!((verdict, s.label), (Verdict::Positive, true) | (Verdict::Negative, false));
            CtrOutcome {
                user_id: s.user_id.clone(),
                target: s.target.clone(),
                label: s.label,
                verdict,
                correct,
                failure,
            }
        })
        .collect();
    let total = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(CtrReport {
        style,
        llm: llm.name(),
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        unparseable: outcomes.iter().filter(|o| o.verdict == Verdict::Unparseable).count(),
        failures: outcomes.iter().filter(|o| o.failure.is_some()).count(),
        positive_rate: samples.iter().filter(|s| s.label).count() as f64 / total as f64,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

pub fn finetune_record(sample: &CtrSample, style: CtrPromptStyle, domain: ItemDomain) -> FinetuneRecord {
    FinetuneRecord {
        instruction: ctr_instruction(style, domain, sample.threshold),
        input: ctr_input(sample, style, domain),
        output: if sample.label { "Yes." } else { "No." }.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub style: CtrPromptStyle,
    pub threshold: f64,
    pub corpus_hash: String,
    pub window: usize,
    /// Window split before dropping records without history.
    pub window_split: [usize; 3],
    /// Lines written per split file.
    pub counts: [usize; 3],
    pub positives: [usize; 3],
    pub skipped: usize,
    /// Records labelled positive because they carried no rating.
    pub implicit_labels: usize,
    /// Context items without a rating, listed as preferences.
    pub unrated_context_items: usize,
    pub files: [String; 3],
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CtrError + '_ {
    move |source| CtrError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write `train.jsonl`, `valid.jsonl`, `test.jsonl` and `manifest.json`
/// into `dir`.
pub fn export_finetune_jsonl(samples: &CtrSamples, style: CtrPromptStyle, domain: ItemDomain, corpus_hash: &str, dir: &Path) -> Result<ExportManifest> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut counts = [0; 3];
    let mut positives = [0; 3];
    let mut files: [String; 3] = Default::default();
    for (s, (name, rows)) in samples.splits().into_iter().enumerate() {
        let file = format!("{name}.jsonl");
        let path = dir.join(&file);
        let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
        for sample in rows {
            let line = serde_json::to_string(&finetune_record(sample, style, domain)).expect("record serializes");
            writeln!(w, "{line}").map_err(io(&path))?;
        }
        w.flush().map_err(io(&path))?;
        counts[s] = rows.len();
        positives[s] = rows.iter().filter(|r| r.label).count();
        files[s] = file;
    }
    let manifest = ExportManifest {
        style,
        threshold: samples.threshold,
        corpus_hash: corpus_hash.to_string(),
        window: samples.window,
        window_split: samples.window_split,
        counts,
        positives,
        skipped: samples.skipped,
        implicit_labels: samples.implicit_labels,
        unrated_context_items: samples.all().flat_map(|s| &s.context).filter(|c| c.rating.is_none()).count(),
        files,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io(&path))?;
    Ok(manifest)
}

pub fn read_finetune_jsonl(path: &Path) -> Result<Vec<FinetuneRecord>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| CtrError::Io {
                path: path.display().to_string(),
                source: e.into(),
            })
        })
        .collect()
}
