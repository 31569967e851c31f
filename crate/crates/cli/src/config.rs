//! Experiment configuration: a JSON document with one block per stage.

use std::path::{Path, PathBuf};

use llmrec::baselines::BprParams;
use llmrec::candidates::DEFAULT_K;
use llmrec::corpus::{SplitRatio, AMAZON_BOOKS_THRESHOLD, DEFAULT_MIN_HISTORY_LEN, MOVIELENS_THRESHOLD};
use llmrec::hashing::short_hash;
use llmrec::interest::{InterestConfig, InterestForm, RetrievalSource, DEFAULT_RECENCY_LAMBDA, RECENT_WINDOW};
use llmrec::llmio::{EndpointConfig, MockKind, DEFAULT_EMBED_DIM};
use llmrec::prompting::{CtrPromptStyle, ItemDomain, PromptConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// `ratings.dat` + `movies.dat`.
    Movielens,
    /// Review JSON lines + metadata JSON lines.
    AmazonBooks,
    /// Normalized interaction and catalog JSON lines.
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub kind: DatasetKind,
    /// Ratings or reviews file.
    pub interactions: PathBuf,
    /// Movies or item metadata file.
    pub items: PathBuf,
    /// Optional `(item_id, description)` JSON lines.
    #[serde(default)]
    pub descriptions: Option<PathBuf>,
    #[serde(default)]
    pub min_user_interactions: usize,
    #[serde(default)]
    pub min_item_interactions: usize,
    /// Item wording for jsonl corpora; other kinds imply it.
    #[serde(default)]
    pub domain: Option<ItemDomain>,
}

impl DatasetBlock {
    pub fn domain(&self) -> ItemDomain {
        match self.kind {
            DatasetKind::Movielens => ItemDomain::Movies,
            DatasetKind::AmazonBooks => ItemDomain::Books,
            DatasetKind::Jsonl => self.domain.unwrap_or_default(),
        }
    }
}

fn default_users() -> usize {
    200
}
fn default_seed() -> u64 {
    42
}
fn default_repeats() -> usize {
    3
}
fn default_min_len() -> usize {
    DEFAULT_MIN_HISTORY_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBlock {
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_min_len")]
    pub min_history_len: usize,
}

impl Default for SampleBlock {
    fn default() -> Self {
        Self {
            users: default_users(),
            seed: default_seed(),
            repeats: default_repeats(),
            min_history_len: default_min_len(),
        }
    }
}

fn default_form() -> u32 {
    1
}
fn default_lambda() -> f64 {
    DEFAULT_RECENCY_LAMBDA
}
fn default_retrieve_k() -> usize {
    RECENT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterestBlock {
    /// Representation form, 1 to 10.
    #[serde(default = "default_form")]
    pub form: u32,
    #[serde(default = "default_lambda")]
    pub recency_lambda: f64,
    #[serde(default = "default_retrieve_k")]
    pub retrieve_k: usize,
    #[serde(default)]
    pub source: RetrievalSource,
    /// Also build (and reflect) the personalized memory in `build-memory`
    /// even when the form does not need it.
    #[serde(default)]
    pub build_personalized: bool,
    #[serde(default)]
    pub global_memory: Option<PathBuf>,
    #[serde(default)]
    pub personal_memory: Option<PathBuf>,
}

impl Default for InterestBlock {
    fn default() -> Self {
        Self {
            form: default_form(),
            recency_lambda: default_lambda(),
            retrieve_k: default_retrieve_k(),
            source: RetrievalSource::default(),
            build_personalized: false,
            global_memory: None,
            personal_memory: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateMode {
    #[default]
    Random,
    Recalled,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatesBlock {
    #[serde(default)]
    pub mode: CandidateMode,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Baseline checkpoint for recalled candidates; defaults to the
    /// `fit-baseline` output.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
}

impl Default for CandidatesBlock {
    fn default() -> Self {
        Self {
            mode: CandidateMode::Random,
            k: default_k(),
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmBlock {
    /// Mock spec such as `echo`, `oracle`, `random:7`, `truncate:2`,
    /// `constant:Yes.`; mutually exclusive with `endpoint`.
    #[serde(default)]
    pub mock: Option<String>,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    /// Response cache directory for live endpoints.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub bypass_cache: bool,
}

impl Default for LlmBlock {
    fn default() -> Self {
        Self {
            mock: Some("echo".into()),
            endpoint: None,
            cache_dir: None,
            bypass_cache: false,
        }
    }
}

fn default_embed_dim() -> usize {
    DEFAULT_EMBED_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderBlock {
    #[serde(default = "default_embed_dim")]
    pub dim: usize,
    /// Remote embeddings endpoint; the local hashed embedder otherwise.
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
}

impl Default for EmbedderBlock {
    fn default() -> Self {
        Self {
            dim: default_embed_dim(),
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Random,
    #[default]
    Pop,
    Bpr,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineBlock {
    #[serde(default)]
    pub kind: BaselineKind,
    #[serde(default)]
    pub bpr: BprParams,
}

fn default_window() -> usize {
    10_000
}
fn default_history_len() -> usize {
    10
}
fn default_styles() -> Vec<CtrPromptStyle> {
    CtrPromptStyle::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtrBlock {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub ratio: SplitRatio,
    /// Label threshold; 4 for MovieLens and 5 for Amazon Books by default.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_history_len")]
    pub history_len: usize,
    /// Styles evaluated by `eval-ctr`.
    #[serde(default = "default_styles")]
    pub styles: Vec<CtrPromptStyle>,
    /// Style used by `export-ft`.
    #[serde(default = "default_export_style")]
    pub export_style: CtrPromptStyle,
}

fn default_export_style() -> CtrPromptStyle {
    CtrPromptStyle::Implicit
}

impl Default for CtrBlock {
    fn default() -> Self {
        Self {
            window: default_window(),
            ratio: SplitRatio::default(),
            threshold: None,
            history_len: default_history_len(),
            styles: default_styles(),
            export_style: default_export_style(),
        }
    }
}

fn default_permutations() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    #[serde(default = "default_permutations")]
    pub permutations: usize,
}

impl Default for ProbeBlock {
    fn default() -> Self {
        Self {
            permutations: default_permutations(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub sample: SampleBlock,
    #[serde(default)]
    pub interest: InterestBlock,
    #[serde(default)]
    pub candidates: CandidatesBlock,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub llm: LlmBlock,
    #[serde(default)]
    pub embedder: EmbedderBlock,
    #[serde(default)]
    pub baseline: BaselineBlock,
    #[serde(default)]
    pub ctr: CtrBlock,
    #[serde(default)]
    pub probe: ProbeBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config(format!("{field}: {}", message.into()))
}

/// Set `a.b.c` in a JSON object; the value is parsed as JSON when possible
/// and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("override key {key:?} has an empty segment")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

impl ExperimentConfig {
    /// Parse and validate a JSON document; errors name the offending field.
    pub fn from_value(doc: Value, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.resolve_paths(base_dir);
        cfg.prompt.domain = cfg.dataset.domain();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.interactions);
        fix(&mut self.dataset.items);
        fix(&mut self.output.dir);
        for p in [
            self.dataset.descriptions.as_mut(),
            self.interest.global_memory.as_mut(),
            self.interest.personal_memory.as_mut(),
            self.candidates.baseline.as_mut(),
            self.llm.cache_dir.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let exists = |field: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(invalid(field, format!("{} does not exist", p.display())))
            }
        };
        exists("dataset.interactions", &self.dataset.interactions)?;
        exists("dataset.items", &self.dataset.items)?;
        if let Some(p) = &self.dataset.descriptions {
            exists("dataset.descriptions", p)?;
        }
        if self.dataset.domain.is_some() && self.dataset.kind != DatasetKind::Jsonl {
            return Err(invalid("dataset.domain", "only applies to jsonl datasets"));
        }
        if self.sample.users == 0 {
            return Err(invalid("sample.users", "must be >= 1"));
        }
        if self.sample.repeats == 0 {
            return Err(invalid("sample.repeats", "must be >= 1"));
        }
        InterestForm::try_from(self.interest.form).map_err(|e| invalid("interest.form", e.to_string()))?;
        if !(self.interest.recency_lambda >= 0.0 && self.interest.recency_lambda.is_finite()) {
            return Err(invalid("interest.recency_lambda", "must be a finite value >= 0"));
        }
        if self.interest.retrieve_k == 0 {
            return Err(invalid("interest.retrieve_k", "must be >= 1"));
        }
        if self.candidates.k == 0 {
            return Err(invalid("candidates.k", "must be >= 1"));
        }
        if self.candidates.k > self.prompt.scheme.capacity() {
            return Err(invalid(
                "candidates.k",
                format!(
                    "{} exceeds the {} labels of the identifier scheme",
                    self.candidates.k,
                    self.prompt.scheme.capacity()
                ),
            ));
        }
        match (&self.llm.mock, &self.llm.endpoint) {
            (Some(m), None) => {
                m.parse::<MockKind>().map_err(|e| invalid("llm.mock", e.to_string()))?;
            }
            (None, Some(ep)) => {
                if ep.max_parallel == 0 {
                    return Err(invalid("llm.endpoint.max_parallel", "must be >= 1"));
                }
            }
            _ => return Err(invalid("llm", "set exactly one of `mock` and `endpoint`")),
        }
        if self.embedder.dim == 0 {
            return Err(invalid("embedder.dim", "must be >= 1"));
        }
        if self.ctr.window == 0 {
            return Err(invalid("ctr.window", "must be >= 1"));
        }
        if self.ctr.ratio.0 + self.ctr.ratio.1 + self.ctr.ratio.2 == 0 {
            return Err(invalid("ctr.ratio", "must not sum to zero"));
        }
        if self.ctr.styles.is_empty() {
            return Err(invalid("ctr.styles", "must list at least one style"));
        }
        if self.probe.permutations < 2 {
            return Err(invalid("probe.permutations", "must be >= 2"));
        }
        Ok(())
    }

    pub fn interest_config(&self) -> InterestConfig {
        InterestConfig {
            form: InterestForm::try_from(self.interest.form).expect("validated"),
            recency_lambda: self.interest.recency_lambda,
            retrieve_k: self.interest.retrieve_k,
            source: self.interest.source,
            domain: self.dataset.domain(),
        }
    }

    pub fn ctr_threshold(&self) -> f64 {
        self.ctr.threshold.unwrap_or(match self.dataset.kind {
            DatasetKind::AmazonBooks => AMAZON_BOOKS_THRESHOLD,
            _ => MOVIELENS_THRESHOLD,
        })
    }

    /// Hash of every semantic field; the output directory is excluded so the
    /// same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output");
        short_hash(v.to_string().as_bytes())
    }
}
