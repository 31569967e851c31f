//! Ranking evaluation: NDCG/coverage over leave-one-out instances with
//! repeated seeded runs, and the candidate position-bias probe.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::Baseline;
use crate::candidates::{build_random_candidates, build_recalled_candidates, ground_output, render_identifiers, CandidateError, CandidateSet};
use crate::corpus::{Catalog, EvalInstance};
use crate::hashing::{derive_seed, short_hash};
use crate::interest::{render_interest, GenerationCache, InterestConfig, InterestContext, InterestError, InterestMemory};
use crate::llmio::{ChatRequest, Embedder, Llm, LlmError, Message, OracleHint};
use crate::prompting::{render_ranking_prompt, select_demonstration, IclMode, PromptConfig, PromptError, STAGE1_PLACEHOLDER};

pub const DEFAULT_REPEATS: usize = 3;
pub const NDCG_CUTOFFS: [usize; 3] = [1, 10, 20];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid pipeline: {0}")]
    Pipeline(String),
    #[error("sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error(transparent)]
    Candidates(#[from] CandidateError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// NDCG@k with one relevant item: `1/log2(rank+1)` within the cutoff, else 0.
pub fn ndcg_at_k(gt_rank: Option<usize>, k: usize) -> f64 {
    match gt_rank {
        Some(r) if r >= 1 && r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// 1-based average ranks, ties sharing the mean of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation; 0 when either side has no rank variance.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::TooShort { needed: 2, got: xs.len() });
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy)]
pub enum CandidateSource<'a> {
    /// `K − 1` random unseen items plus the ground truth.
    Random { pool: &'a [String] },
    /// Top-`K` unseen items of a fitted baseline.
    Recalled { model: &'a Baseline },
}

impl CandidateSource<'_> {
    pub fn name(&self) -> String {
        match self {
            CandidateSource::Random { .. } => "random".into(),
            CandidateSource::Recalled { model } => format!("recalled:{}", model.kind()),
        }
    }
}

/// Everything needed to turn an instance into a grounded ranking.
pub struct Pipeline<'a> {
    pub catalog: &'a Catalog,
    pub interest: &'a InterestConfig,
    pub global_memory: Option<&'a InterestMemory>,
    pub personal_memory: Option<&'a InterestMemory>,
    pub generation_cache: &'a GenerationCache,
    pub candidates: CandidateSource<'a>,
    pub k: usize,
    pub prompt: &'a PromptConfig,
    pub llm: &'a dyn Llm,
    pub embedder: &'a dyn Embedder,
}

impl Pipeline<'_> {
    /// Structural checks that must pass before any model call.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(EvalError::Pipeline("k must be >= 1".into()));
        }
        if self.k > self.prompt.scheme.capacity() {
            return Err(CandidateError::AlphabetTooShort {
                alphabet: self.prompt.scheme.capacity(),
                k: self.k,
            }
            .into());
        }
        let form = self.interest.form;
        if form.needs_personal_memory() && self.personal_memory.is_none() {
            return Err(EvalError::Pipeline(format!("interest form {} needs a personalized memory", form.id())));
        }
        if matches!(form.id(), 5 | 8) && self.interest.source == crate::interest::RetrievalSource::Global && self.global_memory.is_none() {
            return Err(EvalError::Pipeline(format!("interest form {} needs a global memory", form.id())));
        }
        if let CandidateSource::Random { pool } = self.candidates {
            if pool.len() < self.k {
                return Err(CandidateError::PoolTooSmall {
                    available: pool.len(),
                    needed: self.k,
                }
                .into());
            }
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        let v = json!({
            "interest": self.interest,
            "prompt": self.prompt,
            "candidates": self.candidates.name(),
            "k": self.k,
            "llm": self.llm.name(),
            "embedder": self.embedder.name(),
        });
        short_hash(v.to_string().as_bytes())
    }

    fn build_candidates(&self, inst: &EvalInstance, seed: u64) -> std::result::Result<CandidateSet, CandidateError> {
        match self.candidates {
            CandidateSource::Random { pool } => build_random_candidates(inst, pool, self.k, seed),
            CandidateSource::Recalled { model } => build_recalled_candidates(model, inst, self.k),
        }
    }

    /// Render, query and ground one candidate presentation.
    fn rank(&self, inst: &EvalInstance, set: &CandidateSet, pool: &[EvalInstance], instance_id: &str) -> std::result::Result<Ranked, StepError> {
        let lines = render_identifiers(set, self.catalog, self.prompt.scheme)?;
        let ctx = InterestContext {
            config: self.interest,
            catalog: self.catalog,
            global: self.global_memory,
            personal: self.personal_memory,
            llm: self.llm,
            embedder: self.embedder,
            cache: self.generation_cache,
        };
        let profile = render_interest(inst, &ctx)?;
        let demo = match self.prompt.icl {
            IclMode::None => None,
            mode => Some(select_demonstration(mode, inst, pool, self.embedder, self.catalog)?),
        };
        let prompt = render_ranking_prompt(&profile, &lines, self.prompt, demo.as_ref(), self.catalog, instance_id);
        let hint = OracleHint {
            ground_truth_line: set.ground_truth_index.map(|g| lines[g].clone()),
            label: None,
        };
        let mut llm_calls = profile.llm_calls;
        let mut latency = Duration::ZERO;
        let text = if let [stage1, main] = prompt.user_turns.as_slice() {
            let first = self.llm.complete(&ChatRequest::single(stage1.clone()))?;
            let main = main.replace(STAGE1_PLACEHOLDER, &first.text);
            let req = ChatRequest::new(vec![Message::user(stage1.clone()), Message::assistant(first.text.clone()), Message::user(main)]).with_hint(hint);
            let second = self.llm.complete(&req)?;
            llm_calls += 2;
            latency += first.latency + second.latency;
            second.text
        } else {
            let c = self.llm.complete(&ChatRequest::single(prompt.user_turns[0].clone()).with_hint(hint))?;
            llm_calls += 1;
            latency += c.latency;
            c.text
        };
        let report = ground_output(&text, set, self.catalog, self.prompt.scheme);
        Ok(Ranked {
            gt_rank: report.ground_truth_rank(set.ground_truth_index),
            covered: report.covered,
            llm_calls,
            latency_ms: latency.as_secs_f64() * 1e3,
        })
    }
}

struct Ranked {
    gt_rank: Option<usize>,
    covered: bool,
    llm_calls: usize,
    latency_ms: f64,
}

#[derive(Debug, thiserror::Error)]
enum StepError {
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Interest(#[from] InterestError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub user_id: String,
    pub instance_index: usize,
    /// 1-based position of the ground truth in the presented list.
    pub gt_position: Option<usize>,
    pub covered: bool,
    /// 1-based rank of the ground truth in the grounded output.
    pub gt_rank: Option<usize>,
    pub ndcg_1: f64,
    pub ndcg_10: f64,
    pub ndcg_20: f64,
    pub llm_calls: usize,
    /// Why the instance could not be evaluated; scored as uncovered.
    pub failure: Option<String>,
    /// Model latency; omitted for mock models so reports stay reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

impl MetricsRow {
    fn scored(user_id: &str, index: usize, gt_position: Option<usize>, gt_rank: Option<usize>, covered: bool) -> Self {
        let gt_rank = gt_rank.filter(|_| covered);
        Self {
            user_id: user_id.to_string(),
            instance_index: index,
            gt_position,
            covered,
            gt_rank,
            ndcg_1: ndcg_at_k(gt_rank, 1),
            ndcg_10: ndcg_at_k(gt_rank, 10),
            ndcg_20: ndcg_at_k(gt_rank, 20),
            llm_calls: 0,
            failure: None,
            latency_ms: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub coverage: f64,
    pub ndcg_1: f64,
    pub ndcg_10: f64,
    pub ndcg_20: f64,
    /// Mean model latency per instance in seconds; live models only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference_time_s: Option<f64>,
}

impl Aggregate {
    /// Plain means over rows.
    pub fn of_rows(rows: &[MetricsRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let lat: Option<Vec<f64>> = rows.iter().map(|r| r.latency_ms).collect();
        Self {
            coverage: mean(|r| if r.covered { 1.0 } else { 0.0 }),
            ndcg_1: mean(|r| r.ndcg_1),
            ndcg_10: mean(|r| r.ndcg_10),
            ndcg_20: mean(|r| r.ndcg_20),
            inference_time_s: lat.filter(|l| !l.is_empty()).map(|l| l.iter().sum::<f64>() / l.len() as f64 / 1e3),
        }
    }

    /// Plain means over per-repeat aggregates.
    pub fn mean_of(parts: &[Aggregate]) -> Self {
        let n = parts.len().max(1) as f64;
        let mean = |f: fn(&Aggregate) -> f64| parts.iter().map(f).sum::<f64>() / n;
        let lat: Option<Vec<f64>> = parts.iter().map(|a| a.inference_time_s).collect();
        Self {
            coverage: mean(|a| a.coverage),
            ndcg_1: mean(|a| a.ndcg_1),
            ndcg_10: mean(|a| a.ndcg_10),
            ndcg_20: mean(|a| a.ndcg_20),
            inference_time_s: lat.filter(|l| !l.is_empty()).map(|l| l.iter().sum::<f64>() / l.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub seed: u64,
    pub aggregate: Aggregate,
    pub failures: usize,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub llm: String,
    pub candidates: String,
    pub instances: usize,
    pub repeats: Vec<RepeatReport>,
    /// Mean of the per-repeat aggregates.
    pub aggregate: Aggregate,
    pub llm_calls: usize,
    /// Wall-clock seconds; live models only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per repeat plus the mean, with columns
    /// `run,coverage,ndcg@1,ndcg@10,ndcg@20,inference_time_s`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,coverage,ndcg@1,ndcg@10,ndcg@20,inference_time_s\n");
        let mut line = |name: &str, a: &Aggregate| {
            let t = a.inference_time_s.map_or(String::new(), |t| format!("{t:.6}"));
            out.push_str(&format!("{name},{:.4},{:.4},{:.4},{:.4},{t}\n", a.coverage, a.ndcg_1, a.ndcg_10, a.ndcg_20));
        };
        for (i, r) in self.repeats.iter().enumerate() {
            line(&format!("repeat{}", i + 1), &r.aggregate);
        }
        line("mean", &self.aggregate);
        out
    }
}

/// Seed for one user's candidate set within a repeat.
pub fn candidate_seed(repeat_seed: u64, user_id: &str) -> u64 {
    derive_seed(repeat_seed, &["candidates", user_id])
}

/// Run the ranking protocol once per seed and average the repeats. Instance
/// failures become uncovered rows carrying the error.
pub fn run_ranking_eval(instances: &[EvalInstance], pipeline: &Pipeline<'_>, seeds: &[u64]) -> Result<MetricsReport> {
    pipeline.validate()?;
    if seeds.is_empty() {
        return Err(EvalError::Pipeline("at least one repeat seed is required".into()));
    }
    let live = !pipeline.llm.is_mock();
    let start = Instant::now();
    let mut repeats = Vec::with_capacity(seeds.len());
    for (r, &seed) in seeds.iter().enumerate() {
        let rows: Vec<MetricsRow> = instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| {
                let id = format!("{}#{}", inst.user_id, r + 1);
                let outcome = pipeline
                    .build_candidates(inst, candidate_seed(seed, &inst.user_id))
                    .map_err(StepError::from)
                    .and_then(|set| pipeline.rank(inst, &set, instances, &id).map(|ranked| (set, ranked)));
                match outcome {
                    Ok((set, ranked)) => {
                        let mut row = MetricsRow::scored(&inst.user_id, i, set.ground_truth_index.map(|g| g + 1), ranked.gt_rank, ranked.covered);
                        row.llm_calls = ranked.llm_calls;
                        row.latency_ms = live.then_some(ranked.latency_ms);
                        row
                    }
                    Err(e) => {
                        let mut row = MetricsRow::scored(&inst.user_id, i, None, None, false);
                        row.failure = Some(e.to_string());
                        row
                    }
                }
            })
            .collect();
        repeats.push(RepeatReport {
            seed,
            aggregate: Aggregate::of_rows(&rows),
            failures: rows.iter().filter(|r| r.failure.is_some()).count(),
            rows,
        });
    }
    let parts: Vec<Aggregate> = repeats.iter().map(|r| r.aggregate).collect();
    Ok(MetricsReport {
        config_hash: pipeline.config_hash(),
        llm: pipeline.llm.name(),
        candidates: pipeline.candidates.name(),
        instances: instances.len(),
        llm_calls: repeats.iter().flat_map(|r| &r.rows).map(|r| r.llm_calls).sum(),
        aggregate: Aggregate::mean_of(&parts),
        repeats,
        wall_time_s: live.then(|| start.elapsed().as_secs_f64()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTrial {
    pub user_id: String,
    pub trial: usize,
    /// 1-based presented position of the ground truth.
    pub input_position: usize,
    /// 1-based grounded rank, absent when the output missed the ground truth.
    pub output_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProbeResult {
    pub config_hash: String,
    pub permutations: usize,
    pub trials: Vec<BiasTrial>,
    /// Trials without a grounded ground truth (excluded from ρ).
    pub uncovered: usize,
    /// Instances whose candidate set lacked the ground truth or failed.
    pub skipped_instances: usize,
    pub spearman_rho: f64,
}

/// Hold each instance's candidate items fixed and present them in `r` seeded
/// orders; correlate the ground truth's presented position with its output
/// rank over all covered trials.
pub fn position_bias_probe(instances: &[EvalInstance], pipeline: &Pipeline<'_>, r: usize, seed: u64) -> Result<BiasProbeResult> {
    pipeline.validate()?;
    if r < 2 {
        return Err(EvalError::Pipeline("the probe needs at least 2 permutations".into()));
    }
    let per_instance: Vec<Option<Vec<BiasTrial>>> = instances
        .par_iter()
        .map(|inst| {
            let base = pipeline.build_candidates(inst, candidate_seed(seed, &inst.user_id)).ok()?;
            base.ground_truth_index?;
            let mut out = Vec::with_capacity(r);
            for t in 0..r {
                let set = base.reordered(derive_seed(seed, &["probe", &inst.user_id, &t.to_string()]));
                let gt = set.ground_truth_index.expect("reordering keeps the ground truth");
                let ranked = pipeline.rank(inst, &set, instances, &format!("{}~{t}", inst.user_id)).ok()?;
                out.push(BiasTrial {
                    user_id: inst.user_id.clone(),
                    trial: t,
                    input_position: gt + 1,
                    output_rank: ranked.gt_rank,
                });
            }
            Some(out)
        })
        .collect();
    let skipped_instances = per_instance.iter().filter(|o| o.is_none()).count();
    let trials: Vec<BiasTrial> = per_instance.into_iter().flatten().flatten().collect();
    let pairs: Vec<(f64, f64)> = trials
        .iter()
        .filter_map(|t| t.output_rank.map(|o| (t.input_position as f64, o as f64)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let rho = if xs.len() >= 2 { spearman_rho(&xs, &ys)? } else { 0.0 };
    Ok(BiasProbeResult {
        config_hash: pipeline.config_hash(),
        permutations: r,
        uncovered: trials.len() - pairs.len(),
        skipped_instances,
        trials,
        spearman_rho: rho,
    })
}
