//! Subcommand bodies. Artifacts live in fixed places under the output
//! directory so later steps can find what earlier ones produced:
//!
//! ```text
//! corpus/      interactions.jsonl catalog.jsonl        (prepare-corpus)
//! baseline/    model.txt                               (fit-baseline)
//! memory/      global.jsonl personal.jsonl             (build-memory)
//! eval-rank/   report.json report.csv                  (eval-rank)
//! probe-bias/  result.json                             (probe-bias)
//! eval-ctr/    report.json                             (eval-ctr)
//! export-ft/   train.jsonl valid.jsonl test.jsonl      (export-ft)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use llmrec::baselines::{fit_bpr, fit_pop, fit_random, Baseline};
use llmrec::corpus::{self, build_histories, ctr_split, filter_k_core, sample_users, Catalog, EvalInstance, Interaction};
use llmrec::ctr::{build_ctr_samples, export_finetune_jsonl, run_ctr_eval, CtrReport, FINETUNE_SCHEMA};
use llmrec::evaluator::{position_bias_probe, run_ranking_eval, CandidateSource, Pipeline};
use llmrec::hashing::derive_seed;
use llmrec::interest::{
    build_global_memory, build_personalized_memory, memory_reflect, GenerationCache, InterestForm, InterestMemory, MemoryScope, RetrievalSource,
};
use llmrec::llmio::{make_mock, AuditLog, CachedLlm, Embedder, HashEmbedder, HttpLlm, Llm, MockKind, RemoteEmbedder};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BaselineKind, CandidateMode, DatasetKind, ExperimentConfig};
use crate::{CliError, Step};

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    config_hash: String,
    version: &'static str,
    llm: Option<String>,
    inputs: BTreeMap<&'static str, String>,
    outputs: Vec<String>,
    details: Value,
}

/// Holds `<out>/.lock` for the duration of a run.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        let path = out.join(".lock");
        match File::create_new(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(out.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn step_dir(cfg: &ExperimentConfig, step: Step) -> PathBuf {
    let name = match step {
        Step::PrepareCorpus => "corpus",
        Step::FitBaseline => "baseline",
        Step::BuildMemory => "memory",
        other => other.name(),
    };
    cfg.output.dir.join(name)
}

fn require(path: PathBuf, producer: Step) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact {
            path,
            producer: producer.name(),
        })
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("json serializes") + "\n")?;
    Ok(())
}

fn write_manifest(
    cfg: &ExperimentConfig,
    step: Step,
    llm: Option<String>,
    inputs: BTreeMap<&'static str, String>,
    outputs: &[&str],
    details: Value,
) -> Result<()> {
    let m = Manifest {
        subcommand: step.name(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION"),
        llm,
        inputs,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        details,
    };
    write_json(&step_dir(cfg, step).join("manifest.json"), &m)
}

struct Corpus {
    interactions: Vec<Interaction>,
    catalog: Catalog,
    hash: String,
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let dir = step_dir(cfg, Step::PrepareCorpus);
    let ints = require(dir.join("interactions.jsonl"), Step::PrepareCorpus)?;
    let cat = require(dir.join("catalog.jsonl"), Step::PrepareCorpus)?;
    let interactions = corpus::read_interactions_jsonl(&ints)?;
    let catalog = corpus::read_catalog_jsonl(&cat)?;
    let hash = corpus::corpus_hash(&interactions, &catalog);
    Ok(Corpus { interactions, catalog, hash })
}

fn sampled_instances(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<EvalInstance>> {
    let histories = build_histories(&corpus.interactions);
    Ok(sample_users(&histories, cfg.sample.users, cfg.sample.seed, cfg.sample.min_history_len)?)
}

fn make_llm(cfg: &ExperimentConfig) -> Result<Box<dyn Llm>> {
    if let Some(mock) = &cfg.llm.mock {
        let kind: MockKind = mock.parse().map_err(|e: llmrec::llmio::LlmError| CliError::Config(format!("llm.mock: {e}")))?;
        return Ok(Box::new(make_mock(kind)));
    }
    let ep = cfg.llm.endpoint.clone().expect("validated: mock or endpoint");
    fs::create_dir_all(&cfg.output.dir)?;
    let audit = Arc::new(AuditLog::open(&cfg.output.dir.join("audit.jsonl"))?);
    let http = HttpLlm::new(ep)?.with_audit(audit);
    Ok(match &cfg.llm.cache_dir {
        Some(dir) => Box::new(CachedLlm::new(http, dir.clone()).bypass(cfg.llm.bypass_cache)),
        None => Box::new(http),
    })
}

fn make_embedder(cfg: &ExperimentConfig) -> Result<Box<dyn Embedder>> {
    Ok(match &cfg.embedder.endpoint {
        Some(ep) => Box::new(RemoteEmbedder::new(ep.clone(), cfg.embedder.dim)?),
        None => Box::new(HashEmbedder::new(cfg.embedder.dim)?),
    })
}

fn global_memory_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.interest
        .global_memory
        .clone()
        .unwrap_or_else(|| step_dir(cfg, Step::BuildMemory).join("global.jsonl"))
}

fn personal_memory_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.interest
        .personal_memory
        .clone()
        .unwrap_or_else(|| step_dir(cfg, Step::BuildMemory).join("personal.jsonl"))
}

fn form(cfg: &ExperimentConfig) -> InterestForm {
    InterestForm::try_from(cfg.interest.form).expect("validated form")
}

fn needs_global(cfg: &ExperimentConfig) -> bool {
    matches!(form(cfg).id(), 5 | 8) && cfg.interest.source == RetrievalSource::Global
}

fn needs_personal(cfg: &ExperimentConfig) -> bool {
    form(cfg).needs_personal_memory() || (matches!(form(cfg).id(), 5 | 8) && cfg.interest.source == RetrievalSource::Personalized)
}

/// Model calls per ranked presentation, excluding on-the-fly reflection.
fn calls_per_ranking(cfg: &ExperimentConfig) -> usize {
    cfg.prompt.calls_per_instance() + form(cfg).base_llm_calls()
}

/// Resolved plan printed by `--dry-run`. Nothing is written or sent.
pub fn plan(step: Step, cfg: &ExperimentConfig) -> Result<Value> {
    let users = cfg.sample.users;
    let corpus = load_corpus(cfg).ok();
    let (calls, note): (Option<usize>, &str) = match step {
        Step::PrepareCorpus | Step::FitBaseline | Step::ExportFt => (Some(0), "no model calls"),
        Step::EvalRank => (
            Some(users * cfg.sample.repeats * calls_per_ranking(cfg)),
            "users x repeats x calls per instance",
        ),
        Step::ProbeBias => (
            Some(users * cfg.probe.permutations * calls_per_ranking(cfg)),
            "users x permutations x calls per instance",
        ),
        Step::EvalCtr => (
            Some(cfg.ctr.styles.len() * cfg.ctr.ratio.sizes(cfg.ctr.window)[2]),
            "styles x test share of the window (upper bound)",
        ),
        Step::BuildMemory => {
            if !(needs_personal(cfg) || cfg.interest.build_personalized) {
                (Some(0), "global memory only")
            } else {
                match corpus.as_ref().map(|c| sampled_instances(cfg, c)) {
                    Some(Ok(inst)) => (
                        Some(inst.iter().map(|i| i.prefix.len() + 1).sum()),
                        "one note per prefix item plus one reflection per user",
                    ),
                    _ => (None, "needs the prepared corpus to estimate"),
                }
            }
        }
    };
    Ok(json!({
        "subcommand": step.name(),
        "config_hash": cfg.hash(),
        "output_dir": cfg.output.dir,
        "llm": cfg.llm.mock.clone().map(|m| format!("mock:{m}")).or_else(|| cfg.llm.endpoint.as_ref().map(|e| format!("{}#{}", e.base_url, e.model))),
        "users": users,
        "repeats": cfg.sample.repeats,
        "interest_form": cfg.interest.form,
        "least_to_most": cfg.prompt.least_to_most,
        "estimated_llm_calls": calls,
        "estimate": note,
        "corpus_prepared": corpus.is_some(),
    }))
}

/// Run one subcommand and return a one-line JSON summary.
pub fn run_step(step: Step, cfg: &ExperimentConfig) -> Result<String> {
    let _lock = OutputLock::acquire(&cfg.output.dir)?;
    fs::create_dir_all(step_dir(cfg, step))?;
    let summary = match step {
        Step::PrepareCorpus => prepare_corpus(cfg)?,
        Step::FitBaseline => fit_baseline(cfg)?,
        Step::BuildMemory => build_memory(cfg)?,
        Step::EvalRank => eval_rank(cfg)?,
        Step::ProbeBias => probe_bias(cfg)?,
        Step::EvalCtr => eval_ctr(cfg)?,
        Step::ExportFt => export_ft(cfg)?,
    };
    Ok(summary.to_string())
}

fn prepare_corpus(cfg: &ExperimentConfig) -> Result<Value> {
    let d = &cfg.dataset;
    let (raw, mut catalog) = match d.kind {
        DatasetKind::Movielens => corpus::load_movielens(&d.interactions, &d.items)?,
        DatasetKind::AmazonBooks => corpus::load_amazon_books(&d.interactions, &d.items)?,
        DatasetKind::Jsonl => (corpus::read_interactions_jsonl(&d.interactions)?, corpus::read_catalog_jsonl(&d.items)?),
    };
    let described = match &d.descriptions {
        Some(p) => corpus::apply_descriptions(&mut catalog, p)?,
        None => 0,
    };
    let interactions = filter_k_core(&raw, d.min_user_interactions, d.min_item_interactions);
    let used: BTreeSet<&str> = interactions.iter().map(|i| i.item_id.as_str()).collect();
    catalog.retain(|item| used.contains(item.item_id.as_str()));
    let dir = step_dir(cfg, Step::PrepareCorpus);
    corpus::write_interactions_jsonl(&dir.join("interactions.jsonl"), &interactions)?;
    corpus::write_catalog_jsonl(&dir.join("catalog.jsonl"), &catalog)?;
    let users = interactions.iter().map(|i| i.user_id.as_str()).collect::<BTreeSet<_>>().len();
    let hash = corpus::corpus_hash(&interactions, &catalog);
    let details = json!({
        "raw_interactions": raw.len(),
        "interactions": interactions.len(),
        "users": users,
        "items": catalog.len(),
        "descriptions_applied": described,
        "corpus_hash": hash,
    });
    write_manifest(
        cfg,
        Step::PrepareCorpus,
        None,
        BTreeMap::new(),
        &["interactions.jsonl", "catalog.jsonl"],
        details.clone(),
    )?;
    Ok(details)
}

/// Every user's history minus its last interaction.
fn training_interactions(interactions: &[Interaction]) -> Vec<Interaction> {
    build_histories(interactions)
        .into_values()
        .flat_map(|h| {
            let n = h.interactions.len().saturating_sub(1);
            h.interactions.into_iter().take(n)
        })
        .collect()
}

fn fit_baseline(cfg: &ExperimentConfig) -> Result<Value> {
    let corpus = load_corpus(cfg)?;
    let train = training_interactions(&corpus.interactions);
    let model = match cfg.baseline.kind {
        BaselineKind::Random => Baseline::Random(fit_random(&train, cfg.sample.seed)),
        BaselineKind::Pop => Baseline::Pop(fit_pop(&train)),
        BaselineKind::Bpr => Baseline::Bpr(fit_bpr(&train, cfg.baseline.bpr)?),
    };
    fs::write(step_dir(cfg, Step::FitBaseline).join("model.txt"), model.to_checkpoint())?;
    let details = json!({ "kind": model.kind(), "training_interactions": train.len(), "items": model.items().len() });
    write_manifest(
        cfg,
        Step::FitBaseline,
        None,
        BTreeMap::from([("corpus_hash", corpus.hash)]),
        &["model.txt"],
        details.clone(),
    )?;
    Ok(details)
}

fn build_memory(cfg: &ExperimentConfig) -> Result<Value> {
    let corpus = load_corpus(cfg)?;
    let embedder = make_embedder(cfg)?;
    let dir = step_dir(cfg, Step::BuildMemory);
    let global = build_global_memory(&corpus.catalog, embedder.as_ref())?;
    global.write_jsonl(&dir.join("global.jsonl"))?;
    let mut outputs = vec!["global.jsonl"];
    let mut details = json!({ "global_entries": global.len() });
    let mut llm_name = None;
    if needs_personal(cfg) || cfg.interest.build_personalized {
        let llm = make_llm(cfg)?;
        llm_name = Some(llm.name());
        // prefixes only, so no note ever describes a held-out target
        let instances = sampled_instances(cfg, &corpus)?;
        let cache = GenerationCache::open(&dir.join("generation_cache.jsonl"))?;
        let domain = cfg.dataset.domain();
        let (mut personal, report) = build_personalized_memory(
            instances.iter().map(|i| &i.prefix),
            &corpus.catalog,
            llm.as_ref(),
            embedder.as_ref(),
            &cache,
            domain,
        )?;
        let mut reflections = 0;
        for inst in &instances {
            if personal.user_entries(&inst.user_id).next().is_some() {
                reflections += usize::from(memory_reflect(&mut personal, &inst.user_id, llm.as_ref(), embedder.as_ref(), &cache, domain)?.llm_called);
            }
        }
        personal.write_jsonl(&dir.join("personal.jsonl"))?;
        outputs.extend(["personal.jsonl", "generation_cache.jsonl"]);
        details["personal_entries"] = json!(personal.len());
        details["note_calls"] = json!(report.llm_calls);
        details["note_cache_hits"] = json!(report.cache_hits);
        details["reflection_calls"] = json!(reflections);
        details["skipped"] = json!(report.skipped);
    }
    write_manifest(
        cfg,
        Step::BuildMemory,
        llm_name,
        BTreeMap::from([("corpus_hash", corpus.hash)]),
        &outputs,
        details.clone(),
    )?;
    Ok(details)
}

struct RankingSetup {
    corpus: Corpus,
    instances: Vec<EvalInstance>,
    pool: Vec<String>,
    baseline: Option<Baseline>,
    global: Option<InterestMemory>,
    personal: Option<InterestMemory>,
    llm: Box<dyn Llm>,
    embedder: Box<dyn Embedder>,
    inputs: BTreeMap<&'static str, String>,
}

fn ranking_setup(cfg: &ExperimentConfig) -> Result<RankingSetup> {
    let corpus = load_corpus(cfg)?;
    let instances = sampled_instances(cfg, &corpus)?;
    let pool: Vec<String> = corpus
        .interactions
        .iter()
        .map(|i| i.item_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut inputs = BTreeMap::from([("corpus_hash", corpus.hash.clone())]);
    let baseline = match cfg.candidates.mode {
        CandidateMode::Random => None,
        CandidateMode::Recalled => {
            let path = match &cfg.candidates.baseline {
                Some(p) => p.clone(),
                None => require(step_dir(cfg, Step::FitBaseline).join("model.txt"), Step::FitBaseline)?,
            };
            let text = fs::read_to_string(&path)?;
            inputs.insert("baseline", llmrec::hashing::short_hash(text.as_bytes()));
            Some(Baseline::from_checkpoint(&text)?)
        }
    };
    let global = if needs_global(cfg) {
        let p = require(global_memory_path(cfg), Step::BuildMemory)?;
        Some(InterestMemory::read_jsonl(&p, MemoryScope::Global)?)
    } else {
        None
    };
    let personal = if needs_personal(cfg) {
        let p = require(personal_memory_path(cfg), Step::BuildMemory)?;
        Some(InterestMemory::read_jsonl(&p, MemoryScope::Personalized)?)
    } else {
        None
    };
    Ok(RankingSetup {
        corpus,
        instances,
        pool,
        baseline,
        global,
        personal,
        llm: make_llm(cfg)?,
        embedder: make_embedder(cfg)?,
        inputs,
    })
}

fn with_pipeline<T>(cfg: &ExperimentConfig, s: &RankingSetup, f: impl FnOnce(&Pipeline<'_>) -> Result<T>) -> Result<T> {
    let interest = cfg.interest_config();
    let cache = GenerationCache::in_memory();
    let candidates = match &s.baseline {
        Some(model) => CandidateSource::Recalled { model },
        None => CandidateSource::Random { pool: &s.pool },
    };
    let pipeline = Pipeline {
        catalog: &s.corpus.catalog,
        interest: &interest,
        global_memory: s.global.as_ref(),
        personal_memory: s.personal.as_ref(),
        generation_cache: &cache,
        candidates,
        k: cfg.candidates.k,
        prompt: &cfg.prompt,
        llm: s.llm.as_ref(),
        embedder: s.embedder.as_ref(),
    };
    f(&pipeline)
}

/// Seeds of the repeated runs, derived from the sample seed.
pub fn repeat_seeds(seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats).map(|r| derive_seed(seed, &["repeat", &r.to_string()])).collect()
}

fn eval_rank(cfg: &ExperimentConfig) -> Result<Value> {
    let s = ranking_setup(cfg)?;
    let report = with_pipeline(cfg, &s, |p| {
        Ok(run_ranking_eval(&s.instances, p, &repeat_seeds(cfg.sample.seed, cfg.sample.repeats))?)
    })?;
    let dir = step_dir(cfg, Step::EvalRank);
    fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    let details = json!({
        "pipeline_hash": report.config_hash,
        "instances": report.instances,
        "aggregate": report.aggregate,
        "failures": report.repeats.iter().map(|r| r.failures).sum::<usize>(),
        "llm_calls": report.llm_calls,
    });
    write_manifest(
        cfg,
        Step::EvalRank,
        Some(report.llm.clone()),
        s.inputs.clone(),
        &["report.json", "report.csv"],
        details.clone(),
    )?;
    Ok(details)
}

fn probe_bias(cfg: &ExperimentConfig) -> Result<Value> {
    let s = ranking_setup(cfg)?;
    let result = with_pipeline(cfg, &s, |p| Ok(position_bias_probe(&s.instances, p, cfg.probe.permutations, cfg.sample.seed)?))?;
    write_json(&step_dir(cfg, Step::ProbeBias).join("result.json"), &result)?;
    let details = json!({
        "permutations": result.permutations,
        "pairs": result.trials.len() - result.uncovered,
        "uncovered": result.uncovered,
        "skipped_instances": result.skipped_instances,
        "spearman_rho": result.spearman_rho,
    });
    write_manifest(cfg, Step::ProbeBias, Some(s.llm.name()), s.inputs.clone(), &["result.json"], details.clone())?;
    Ok(details)
}

fn ctr_samples(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<llmrec::ctr::CtrSamples> {
    let histories = build_histories(&corpus.interactions);
    let ds = ctr_split(&histories, cfg.ctr.window, cfg.ctr.ratio, cfg.ctr_threshold(), cfg.ctr.history_len)?;
    Ok(build_ctr_samples(&ds, &corpus.catalog))
}

fn eval_ctr(cfg: &ExperimentConfig) -> Result<Value> {
    let corpus = load_corpus(cfg)?;
    let samples = ctr_samples(cfg, &corpus)?;
    let llm = make_llm(cfg)?;
    let reports: Vec<CtrReport> = cfg
        .ctr
        .styles
        .iter()
        .map(|&style| run_ctr_eval(&samples.test, llm.as_ref(), style, cfg.dataset.domain()))
        .collect::<std::result::Result<_, _>>()?;
    let table: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "style": r.style, "accuracy": r.accuracy, "total": r.total, "unparseable": r.unparseable, "failures": r.failures }))
        .collect();
    let full = json!({
        "threshold": samples.threshold,
        "window_split": samples.window_split,
        "test_samples": samples.test.len(),
        "accuracy": table,
        "reports": reports,
    });
    write_json(&step_dir(cfg, Step::EvalCtr).join("report.json"), &full)?;
    let details = json!({ "threshold": samples.threshold, "test_samples": samples.test.len(), "accuracy": table });
    write_manifest(
        cfg,
        Step::EvalCtr,
        Some(llm.name()),
        BTreeMap::from([("corpus_hash", corpus.hash)]),
        &["report.json"],
        details.clone(),
    )?;
    Ok(details)
}

fn export_ft(cfg: &ExperimentConfig) -> Result<Value> {
    let corpus = load_corpus(cfg)?;
    let samples = ctr_samples(cfg, &corpus)?;
    let dir = step_dir(cfg, Step::ExportFt);
    let export = export_finetune_jsonl(&samples, cfg.ctr.export_style, cfg.dataset.domain(), &corpus.hash, &dir)?;
    fs::write(dir.join("schema.json"), FINETUNE_SCHEMA)?;
    let details = serde_json::to_value(&export).expect("manifest serializes");
    write_manifest(
        cfg,
        Step::ExportFt,
        None,
        BTreeMap::from([("corpus_hash", corpus.hash)]),
        &["train.jsonl", "valid.jsonl", "test.jsonl", "schema.json"],
        details.clone(),
    )?;
    Ok(json!({ "counts": export.counts, "window_split": export.window_split, "threshold": export.threshold }))
}
