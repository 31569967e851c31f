//! User interest modeling: item memories, reflection, retrieval queries,
//! recency-weighted retrieval and the ten interest representation forms.
//!
//! A memory maps `(scope, item_id)` keys to a text and its embedding. The
//! global memory holds one catalog description per item; a personalized
//! memory holds one LLM-written note per (user, interacted item). A user's
//! reflected profile lives in the personalized memory under
//! [`PROFILE_ITEM_ID`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, EvalInstance, UserHistory};
use crate::hashing::{sha256_hex, short_hash};
use crate::llmio::{ChatRequest, Embedder, Embedding, Llm, LlmError};
use crate::prompting::{format_rating, numbered_lines, templates, ItemDomain};

/// Reserved item id of a user's reflected profile.
pub const PROFILE_ITEM_ID: &str = "__profile__";
/// Size of the "recent items" window.
pub const RECENT_WINDOW: usize = 10;
pub const DEFAULT_RECENCY_LAMBDA: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum InterestError {
    #[error("interest form must be in 1..=10, got {0}")]
    InvalidForm(u32),
    #[error("interest form {form} needs the {which} memory")]
    MissingMemory { form: u32, which: &'static str },
    #[error("user {0} has an empty history")]
    EmptyHistory(String),
    #[error("user {0} has no entries to reflect on")]
    NothingToReflect(String),
    #[error("long-and-short query needs a profile text")]
    MissingProfile,
    #[error("{scope} memory cannot hold key {key}")]
    ScopeMismatch { scope: MemoryScope, key: MemoryKey },
    #[error("memory file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InterestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryScope {
    Global,
    Personalized,
}

impl fmt::Display for MemoryScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemoryScope::Global => "global",
            MemoryScope::Personalized => "personalized",
        })
    }
}

/// `user = None` is the global scope.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemoryKey {
    pub user: Option<String>,
    pub item_id: String,
}

impl MemoryKey {
    pub fn global(item_id: impl Into<String>) -> Self {
        Self {
            user: None,
            item_id: item_id.into(),
        }
    }

    pub fn user(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Self {
            user: Some(user_id.into()),
            item_id: item_id.into(),
        }
    }

    pub fn is_profile(&self) -> bool {
        self.item_id == PROFILE_ITEM_ID
    }
}

impl fmt::Display for MemoryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.user.as_deref().unwrap_or("global"), self.item_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key: MemoryKey,
    pub text: String,
    /// Interaction time; 0 for global entries.
    pub ts: u64,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterestMemory {
    scope: MemoryScope,
    entries: BTreeMap<MemoryKey, MemoryEntry>,
}

impl InterestMemory {
    pub fn new(scope: MemoryScope) -> Self {
        Self {
            scope,
            entries: BTreeMap::new(),
        }
    }

    pub fn scope(&self) -> MemoryScope {
        self.scope
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &MemoryKey) -> Option<&MemoryEntry> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    /// Insert or replace an entry. The key's scope must match the memory's.
    pub fn write(&mut self, entry: MemoryEntry) -> Result<Option<MemoryEntry>> {
        let ok = match self.scope {
            MemoryScope::Global => entry.key.user.is_none(),
            MemoryScope::Personalized => entry.key.user.is_some(),
        };
        if !ok {
            return Err(InterestError::ScopeMismatch {
                scope: self.scope,
                key: entry.key,
            });
        }
        Ok(self.entries.insert(entry.key.clone(), entry))
    }

    /// A user's item entries (profile excluded), in key order.
    pub fn user_entries<'a>(&'a self, user_id: &'a str) -> impl Iterator<Item = &'a MemoryEntry> + 'a {
        self.entries
            .values()
            .filter(move |e| e.key.user.as_deref() == Some(user_id) && !e.key.is_profile())
    }

    pub fn profile(&self, user_id: &str) -> Option<&MemoryEntry> {
        self.entries.get(&MemoryKey::user(user_id, PROFILE_ITEM_ID))
    }

    /// One JSON object per line, in key order.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in self.entries.values() {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path, scope: MemoryScope) -> Result<Self> {
        let mut mem = Self::new(scope);
        for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: MemoryEntry = serde_json::from_str(line).map_err(|e| InterestError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            mem.write(e)?;
        }
        Ok(mem)
    }
}

/// Persistent map from generation keys to LLM outputs, so rebuilding a memory
/// or re-reflecting unchanged entries issues no new calls.
#[derive(Debug, Default)]
pub struct GenerationCache {
    path: Option<PathBuf>,
    map: Mutex<BTreeMap<String, String>>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    text: String,
}

impl GenerationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Load (or start) an append-only cache file.
    pub fn open(path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        if path.exists() {
            for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let c: CacheLine = serde_json::from_str(line).map_err(|e| InterestError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                map.insert(c.key, c.text);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            map: Mutex::new(map),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.map.lock().expect("cache lock").get(key).cloned()
    }

    pub fn put(&self, key: &str, text: &str) -> Result<()> {
        let mut map = self.map.lock().expect("cache lock");
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let line = serde_json::to_string(&CacheLine {
                key: key.into(),
                text: text.into(),
            })
            .expect("cache line serializes");
            writeln!(f, "{line}")?;
        }
        map.insert(key.to_string(), text.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn complete_text(llm: &dyn Llm, prompt: String) -> Result<String> {
    Ok(llm.complete(&ChatRequest::single(prompt))?.text)
}

/// Collapse whitespace so a note renders on one line.
fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Global memory text: the description, or title plus attributes.
pub fn build_global_memory(catalog: &Catalog, embedder: &dyn Embedder) -> Result<InterestMemory> {
    let mut mem = InterestMemory::new(MemoryScope::Global);
    for item in catalog.iter() {
        let text = match item.description.as_deref().map(str::trim) {
            Some(d) if !d.is_empty() => d.to_string(),
            _ => item.title_with_attributes(),
        };
        let embedding = embedder.embed(&text)?;
        mem.write(MemoryEntry {
            key: MemoryKey::global(&item.item_id),
            text,
            ts: 0,
            embedding,
        })?;
    }
    Ok(mem)
}

/// The request sent to describe one user's reaction to one item.
pub fn personalized_prompt(catalog: &Catalog, item_id: &str, rating: Option<f64>, domain: ItemDomain) -> String {
    let (title, attrs) = match catalog.get(item_id) {
        Some(item) => {
            let a: Vec<String> = item.attributes.iter().map(|(k, v)| format!("{k}: {v}")).collect();
            (item.title.clone(), if a.is_empty() { "no attributes".to_string() } else { a.join("; ") })
        }
        None => (item_id.to_string(), "no attributes".to_string()),
    };
    let rating = rating.map_or_else(|| "with an unknown score".to_string(), format_rating);
    domain.fill(
        templates::PERSONALIZED_DESCRIPTION,
        &[("title", &title), ("attributes", &attrs), ("rating", &rating)],
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub llm_calls: usize,
    pub cache_hits: usize,
    /// `(user_id, item_id, error)` for entries whose generation failed.
    pub skipped: Vec<(String, String, String)>,
}

fn generation_key(user: &str, item: &str, template_hash: &str) -> String {
    sha256_hex(format!("note\n{user}\n{item}\n{template_hash}").as_bytes())
}

/// Note text and whether it took a model call, or the failure message.
type Generated = std::result::Result<(String, bool), String>;

/// One LLM-written note per (user, interacted item); a re-interaction keeps
/// the latest timestamp. Calls fan out in parallel and entries are committed
/// in key order. Failed generations are skipped and reported.
pub fn build_personalized_memory<'a>(
    histories: impl IntoIterator<Item = &'a UserHistory>,
    catalog: &Catalog,
    llm: &dyn Llm,
    embedder: &dyn Embedder,
    cache: &GenerationCache,
    domain: ItemDomain,
) -> Result<(InterestMemory, BuildReport)> {
    let template_hash = short_hash(templates::PERSONALIZED_DESCRIPTION.as_bytes());
    let mut jobs: BTreeMap<MemoryKey, (Option<f64>, u64)> = BTreeMap::new();
    for h in histories {
        for it in &h.interactions {
            jobs.insert(MemoryKey::user(&h.user_id, &it.item_id), (it.rating, it.timestamp));
        }
    }
    let jobs: Vec<_> = jobs.into_iter().collect();
    let results: Vec<(MemoryKey, u64, Generated)> = jobs
        .into_par_iter()
        .map(|(key, (rating, ts))| {
            let user = key.user.as_deref().expect("personal key");
            let ckey = generation_key(user, &key.item_id, &template_hash);
            let out = match cache.get(&ckey) {
                Some(text) => Ok((text, false)),
                None => complete_text(llm, personalized_prompt(catalog, &key.item_id, rating, domain))
                    .and_then(|text| cache.put(&ckey, &text).map(|_| (text, true)))
                    .map_err(|e| e.to_string()),
            };
            (key, ts, out)
        })
        .collect();

    let mut mem = InterestMemory::new(MemoryScope::Personalized);
    let mut report = BuildReport::default();
    for (key, ts, out) in results {
        match out {
            Ok((text, called)) => {
                if called {
                    report.llm_calls += 1;
                } else {
                    report.cache_hits += 1;
                }
                let embedding = embedder.embed(&text)?;
                mem.write(MemoryEntry { key, text, ts, embedding })?;
            }
            Err(e) => {
                log::warn!("skipping note for {key}: {e}");
                report.skipped.push((key.user.clone().unwrap_or_default(), key.item_id.clone(), e));
            }
        }
    }
    Ok((mem, report))
}

/// A user's item notes, oldest first.
fn chronological<'a>(memory: &'a InterestMemory, user_id: &'a str) -> Vec<&'a MemoryEntry> {
    let mut v: Vec<&MemoryEntry> = memory.user_entries(user_id).collect();
    v.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.key.item_id.cmp(&b.key.item_id)));
    v
}

/// Summarize a user's notes into a profile text without writing it.
/// Returns the text and whether an LLM call was made (false on a cache hit).
pub fn reflect_profile(memory: &InterestMemory, user_id: &str, llm: &dyn Llm, cache: &GenerationCache, domain: ItemDomain) -> Result<(String, bool)> {
    let entries = chronological(memory, user_id);
    if entries.is_empty() {
        return Err(InterestError::NothingToReflect(user_id.to_string()));
    }
    let lines: Vec<String> = entries.iter().map(|e| one_line(&e.text)).collect();
    let prompt = domain.fill(templates::SUMMARY_REFLECT, &[("lines", &numbered_lines(&lines))]);
    let key = sha256_hex(format!("reflect\n{user_id}\n{prompt}").as_bytes());
    if let Some(text) = cache.get(&key) {
        return Ok((text, false));
    }
    let text = complete_text(llm, prompt)?;
    cache.put(&key, &text)?;
    Ok((text, true))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectOutcome {
    pub profile_text: String,
    pub llm_called: bool,
}

/// Summarize the user's notes and store the result under the profile key.
/// On failure the memory is left unchanged.
pub fn memory_reflect(
    memory: &mut InterestMemory,
    user_id: &str,
    llm: &dyn Llm,
    embedder: &dyn Embedder,
    cache: &GenerationCache,
    domain: ItemDomain,
) -> Result<ReflectOutcome> {
    let (text, called) = reflect_profile(memory, user_id, llm, cache, domain)?;
    let ts = memory.user_entries(user_id).map(|e| e.ts).max().unwrap_or(0);
    let embedding = embedder.embed(&text)?;
    memory.write(MemoryEntry {
        key: MemoryKey::user(user_id, PROFILE_ITEM_ID),
        text: text.clone(),
        ts,
        embedding,
    })?;
    Ok(ReflectOutcome {
        profile_text: text,
        llm_called: called,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    ShortTerm,
    LongAndShort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestQuery {
    pub mode: QueryMode,
    pub text: String,
    pub embedding: Embedding,
}

/// Separator between the profile and the recent summary in a combined query.
pub const QUERY_SEPARATOR: &str = "\n";

/// Build a retrieval query from an LLM summary of the (at most 10) most
/// recent titles; `LongAndShort` prefixes the profile text. One LLM call.
pub fn make_query(
    mode: QueryMode,
    recent_titles: &[String],
    profile_text: Option<&str>,
    llm: &dyn Llm,
    embedder: &dyn Embedder,
    domain: ItemDomain,
) -> Result<InterestQuery> {
    let profile = match (mode, profile_text) {
        (QueryMode::LongAndShort, None) => return Err(InterestError::MissingProfile),
        (QueryMode::LongAndShort, Some(p)) => Some(p),
        (QueryMode::ShortTerm, _) => None,
    };
    let start = recent_titles.len().saturating_sub(RECENT_WINDOW);
    let window = &recent_titles[start..];
    if window.is_empty() {
        return Err(InterestError::EmptyHistory(String::new()));
    }
    let summary = complete_text(llm, domain.fill(templates::SUMMARY_RECENT, &[("lines", &numbered_lines(window))]))?;
    let text = match profile {
        Some(p) => format!("{p}{QUERY_SEPARATOR}{summary}"),
        None => summary,
    };
    let embedding = embedder.embed(&text)?;
    Ok(InterestQuery { mode, text, embedding })
}

/// Top-`k` entries by `cosine × exp(−λ·age_rank)`, ties by item id.
///
/// With `user_id` set, only that user's item entries are considered and
/// `age_rank` counts from 0 at the newest eligible entry. Without it, global
/// entries are searched and the recency factor is 1. `eligible` further
/// restricts the search space.
pub fn retrieve_from_memory<'m>(
    memory: &'m InterestMemory,
    query: &Embedding,
    user_id: Option<&str>,
    k: usize,
    recency_lambda: f64,
    eligible: &dyn Fn(&MemoryEntry) -> bool,
) -> Vec<&'m MemoryEntry> {
    let mut pool: Vec<&MemoryEntry> = memory
        .iter()
        .filter(|e| !e.key.is_profile() && e.key.user.as_deref() == user_id && eligible(e))
        .collect();
    // newest first; the position is the age rank
    pool.sort_by(|a, b| b.ts.cmp(&a.ts).then_with(|| a.key.item_id.cmp(&b.key.item_id)));
    let mut scored: Vec<(f64, &MemoryEntry)> = pool
        .into_iter()
        .enumerate()
        .map(|(age, e)| {
            let decay = if user_id.is_some() { (-recency_lambda * age as f64).exp() } else { 1.0 };
            (query.cosine(&e.embedding) * decay, e)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.key.item_id.cmp(&b.1.key.item_id)));
    scored.into_iter().take(k).map(|(_, e)| e).collect()
}

/// The ten interest representation forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum InterestForm {
    /// Titles of the last 10 items.
    Recent = 1,
    /// Personalized notes of the last 10 items.
    PersonalizedRecent = 2,
    /// Recent titles followed by their notes.
    RecentWithPersonalized = 3,
    /// Recent titles with an LLM short-term summary.
    RecentWithShortSummary = 4,
    /// Items retrieved from the history with the recent titles as query.
    Retrieved = 5,
    /// Notes retrieved with the recent titles as query.
    RetrievedPersonalized = 6,
    /// LLM summary of the notes of form 6.
    RetrievedPersonalizedSummary = 7,
    /// Retrieved older items followed by the recent titles.
    RecentAndRetrieved = 8,
    /// Notes retrieved with profile plus recent summary as query.
    RetrievedByProfile = 9,
    /// Recent titles with an LLM long-term summary of the whole history.
    RecentWithLongSummary = 10,
}

impl InterestForm {
    pub const ALL: [InterestForm; 10] = [
        InterestForm::Recent,
        InterestForm::PersonalizedRecent,
        InterestForm::RecentWithPersonalized,
        InterestForm::RecentWithShortSummary,
        InterestForm::Retrieved,
        InterestForm::RetrievedPersonalized,
        InterestForm::RetrievedPersonalizedSummary,
        InterestForm::RecentAndRetrieved,
        InterestForm::RetrievedByProfile,
        InterestForm::RecentWithLongSummary,
    ];

    pub fn id(&self) -> u32 {
        *self as u32
    }

    pub fn needs_personal_memory(&self) -> bool {
        matches!(self.id(), 2 | 3 | 6 | 7 | 9)
    }

    /// Auxiliary LLM calls made by rendering, not counting a profile
    /// reflection that form 9 performs when no profile is stored or cached.
    pub fn base_llm_calls(&self) -> usize {
        match self.id() {
            4 | 7 | 9 | 10 => 1,
            _ => 0,
        }
    }
}

impl TryFrom<u32> for InterestForm {
    type Error = InterestError;

    fn try_from(v: u32) -> Result<Self> {
        v.checked_sub(1)
            .and_then(|i| InterestForm::ALL.get(i as usize))
            .copied()
            .ok_or(InterestError::InvalidForm(v))
    }
}

impl From<InterestForm> for u32 {
    fn from(f: InterestForm) -> u32 {
        f.id()
    }
}

/// Which memory forms 5 and 8 retrieve items from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalSource {
    #[default]
    Global,
    Personalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterestConfig {
    pub form: InterestForm,
    #[serde(default = "default_lambda")]
    pub recency_lambda: f64,
    #[serde(default = "default_k")]
    pub retrieve_k: usize,
    #[serde(default)]
    pub source: RetrievalSource,
    #[serde(default)]
    pub domain: ItemDomain,
}

fn default_lambda() -> f64 {
    DEFAULT_RECENCY_LAMBDA
}

fn default_k() -> usize {
    RECENT_WINDOW
}

impl Default for InterestConfig {
    fn default() -> Self {
        Self {
            form: InterestForm::Recent,
            recency_lambda: DEFAULT_RECENCY_LAMBDA,
            retrieve_k: RECENT_WINDOW,
            source: RetrievalSource::Global,
            domain: ItemDomain::Movies,
        }
    }
}

/// Everything `render_interest` may need besides the instance.
pub struct InterestContext<'a> {
    pub config: &'a InterestConfig,
    pub catalog: &'a Catalog,
    pub global: Option<&'a InterestMemory>,
    pub personal: Option<&'a InterestMemory>,
    pub llm: &'a dyn Llm,
    pub embedder: &'a dyn Embedder,
    /// Cache for form 9's on-the-fly profile reflection.
    pub cache: &'a GenerationCache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestProfile {
    pub form: InterestForm,
    pub rendered_text: String,
    pub items_used: Vec<String>,
    pub llm_calls: usize,
    /// Title of the most recent interaction, for the recency sentence.
    pub last_title: Option<String>,
}

impl InterestProfile {
    /// A form-1 profile from ready-made text.
    pub fn plain(text: impl Into<String>, last_title: Option<String>) -> Self {
        Self {
            form: InterestForm::Recent,
            rendered_text: text.into(),
            items_used: Vec::new(),
            llm_calls: 0,
            last_title,
        }
    }
}

/// Render the interest block of `instance` in the configured form. Only the
/// prefix is read and retrieval never leaves the prefix's items, so the
/// ground truth cannot leak through a memory built from full histories.
pub fn render_interest(instance: &EvalInstance, ctx: &InterestContext<'_>) -> Result<InterestProfile> {
    let form = ctx.config.form;
    let d = ctx.config.domain;
    let user = instance.user_id.as_str();
    let prefix = &instance.prefix;
    if prefix.is_empty() {
        return Err(InterestError::EmptyHistory(user.to_string()));
    }
    let personal = || {
        ctx.personal.ok_or(InterestError::MissingMemory {
            form: form.id(),
            which: "personalized",
        })
    };
    let global = || {
        ctx.global.ok_or(InterestError::MissingMemory {
            form: form.id(),
            which: "global",
        })
    };
    if form.needs_personal_memory() {
        personal()?;
    }

    let recent: Vec<String> = prefix.recent(RECENT_WINDOW).iter().map(|i| i.item_id.clone()).collect();
    let title = |id: &str| ctx.catalog.title(id).to_string();
    let recent_titles: Vec<String> = recent.iter().map(|i| title(i)).collect();
    let recent_block = || d.fill(templates::INTEREST_RECENT, &[("lines", &numbered_lines(&recent_titles))]);
    let note = |id: &str| -> Result<String> {
        let mem = personal()?;
        Ok(match mem.get(&MemoryKey::user(user, id)) {
            Some(e) => format!("{}: {}", title(id), one_line(&e.text)),
            None => title(id),
        })
    };
    let notes = |ids: &[String]| -> Result<Vec<String>> { ids.iter().map(|i| note(i)).collect() };
    let in_prefix: HashSet<&str> = prefix.item_ids().collect();
    let recent_set: HashSet<&str> = recent.iter().map(String::as_str).collect();
    let recent_query = || ctx.embedder.embed(&recent_titles.join("; "));
    let k = ctx.config.retrieve_k;
    let lambda = ctx.config.recency_lambda;
    let ids = |v: Vec<&MemoryEntry>| -> Vec<String> { v.into_iter().map(|e| e.key.item_id.clone()).collect() };
    let retrieve_personal = |q: &Embedding, exclude_recent: bool| -> Result<Vec<String>> {
        let eligible = |e: &MemoryEntry| in_prefix.contains(e.key.item_id.as_str()) && !(exclude_recent && recent_set.contains(e.key.item_id.as_str()));
        Ok(ids(retrieve_from_memory(personal()?, q, Some(user), k, lambda, &eligible)))
    };
    let retrieve_items = |q: &Embedding, exclude_recent: bool| -> Result<Vec<String>> {
        match ctx.config.source {
            RetrievalSource::Personalized => retrieve_personal(q, exclude_recent),
            RetrievalSource::Global => {
                let eligible = |e: &MemoryEntry| in_prefix.contains(e.key.item_id.as_str()) && !(exclude_recent && recent_set.contains(e.key.item_id.as_str()));
                Ok(ids(retrieve_from_memory(global()?, q, None, k, lambda, &eligible)))
            }
        }
    };

    let mut llm_calls = 0;
    let (text, items_used) = match form {
        InterestForm::Recent => (recent_block(), recent.clone()),
        InterestForm::PersonalizedRecent => {
            let lines = notes(&recent)?;
            (d.fill(templates::INTEREST_PERSONALIZED, &[("lines", &numbered_lines(&lines))]), recent.clone())
        }
        InterestForm::RecentWithPersonalized => {
            let lines = notes(&recent)?;
            let p = d.fill(templates::INTEREST_PERSONALIZED, &[("lines", &numbered_lines(&lines))]);
            (format!("{}\n{p}", recent_block()), recent.clone())
        }
        InterestForm::RecentWithShortSummary => {
            let summary = complete_text(ctx.llm, d.fill(templates::SUMMARY_RECENT, &[("lines", &numbered_lines(&recent_titles))]))?;
            llm_calls += 1;
            let s = d.fill(templates::INTEREST_SHORT_SUMMARY, &[("summary", &summary)]);
            (format!("{}\n{s}", recent_block()), recent.clone())
        }
        InterestForm::Retrieved => {
            let got = retrieve_items(&recent_query()?, false)?;
            let t: Vec<String> = got.iter().map(|i| title(i)).collect();
            (d.fill(templates::INTEREST_RETRIEVED, &[("lines", &numbered_lines(&t))]), got)
        }
        InterestForm::RetrievedPersonalized => {
            let got = retrieve_personal(&recent_query()?, false)?;
            let lines = notes(&got)?;
            (d.fill(templates::INTEREST_RETRIEVED_PERSONALIZED, &[("lines", &numbered_lines(&lines))]), got)
        }
        InterestForm::RetrievedPersonalizedSummary => {
            let got = retrieve_personal(&recent_query()?, false)?;
            let lines = notes(&got)?;
            let summary = complete_text(ctx.llm, d.fill(templates::SUMMARY_RETRIEVED, &[("lines", &numbered_lines(&lines))]))?;
            llm_calls += 1;
            (d.fill(templates::INTEREST_LONG_SUMMARY, &[("summary", &summary)]), got)
        }
        InterestForm::RecentAndRetrieved => {
            let got = retrieve_items(&recent_query()?, true)?;
            let t: Vec<String> = got.iter().map(|i| title(i)).collect();
            let r = d.fill(templates::INTEREST_RETRIEVED, &[("lines", &numbered_lines(&t))]);
            let mut used = got;
            used.extend(recent.iter().cloned());
            (format!("{r}\n{}", recent_block()), used)
        }
        InterestForm::RetrievedByProfile => {
            let mem = personal()?;
            let profile = match mem.profile(user) {
                Some(p) => p.text.clone(),
                None => {
                    let (text, called) = reflect_profile(mem, user, ctx.llm, ctx.cache, d)?;
                    llm_calls += usize::from(called);
                    text
                }
            };
            let q = make_query(QueryMode::LongAndShort, &recent_titles, Some(&profile), ctx.llm, ctx.embedder, d)?;
            llm_calls += 1;
            let got = retrieve_personal(&q.embedding, false)?;
            let lines = notes(&got)?;
            (d.fill(templates::INTEREST_RETRIEVED_PERSONALIZED, &[("lines", &numbered_lines(&lines))]), got)
        }
        InterestForm::RecentWithLongSummary => {
            let all: Vec<String> = prefix.item_ids().map(title).collect();
            let summary = complete_text(ctx.llm, d.fill(templates::SUMMARY_LONG_TERM, &[("lines", &numbered_lines(&all))]))?;
            llm_calls += 1;
            let s = d.fill(templates::INTEREST_LONG_SUMMARY, &[("summary", &summary)]);
            (format!("{}\n{s}", recent_block()), recent.clone())
        }
    };
    Ok(InterestProfile {
        form,
        rendered_text: text,
        items_used,
        llm_calls,
        last_title: recent_titles.last().cloned(),
    })
}
