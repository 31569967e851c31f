//! Ranking and CTR prompt rendering.
//!
//! Prompts are assembled from plain-text fragments shipped under
//! `assets/prompts/`. A ranking prompt is, in order: optional role preamble,
//! optional in-context demonstration, the interest block, optional
//! least-to-most summary slot, optional recency sentence, the candidate
//! block, the output-format instruction and an optional step-by-step line.
//! Fragments are separated by a blank line, except the step-by-step line
//! which directly follows the output instruction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::candidates::IdentifierScheme;
use crate::corpus::{Catalog, EvalInstance};
use crate::ctr::CtrSample;
use crate::hashing::short_hash;
use crate::interest::InterestProfile;
use crate::llmio::{Embedder, Embedding, LlmError};

pub mod templates {
    pub const RANKING_ROLE: &str = include_str!("../assets/prompts/ranking_role.txt");
    pub const RANKING_RECENCY: &str = include_str!("../assets/prompts/ranking_recency.txt");
    pub const RANKING_CANDIDATES: &str = include_str!("../assets/prompts/ranking_candidates.txt");
    pub const RANKING_OUTPUT: &str = include_str!("../assets/prompts/ranking_output.txt");
    pub const RANKING_OUTPUT_TOKEN: &str = include_str!("../assets/prompts/ranking_output_token.txt");
    pub const COT: &str = include_str!("../assets/prompts/cot.txt");
    pub const LEAST_TO_MOST_SUMMARY: &str = include_str!("../assets/prompts/least_to_most_summary.txt");
    pub const LEAST_TO_MOST_SLOT: &str = include_str!("../assets/prompts/least_to_most_slot.txt");
    pub const ICL_SELF: &str = include_str!("../assets/prompts/icl_self.txt");
    pub const ICL_OTHERS: &str = include_str!("../assets/prompts/icl_others.txt");
    pub const CTR_IMPLICIT: &str = include_str!("../assets/prompts/ctr_implicit.txt");
    pub const CTR_EXPLICIT: &str = include_str!("../assets/prompts/ctr_explicit.txt");
    pub const CTR_HYBRID: &str = include_str!("../assets/prompts/ctr_hybrid.txt");
    pub const INTEREST_RECENT: &str = include_str!("../assets/prompts/interest_recent.txt");
    pub const INTEREST_PERSONALIZED: &str = include_str!("../assets/prompts/interest_personalized.txt");
    pub const INTEREST_RETRIEVED: &str = include_str!("../assets/prompts/interest_retrieved.txt");
    pub const INTEREST_RETRIEVED_PERSONALIZED: &str = include_str!("../assets/prompts/interest_retrieved_personalized.txt");
    pub const INTEREST_SHORT_SUMMARY: &str = include_str!("../assets/prompts/interest_short_summary.txt");
    pub const INTEREST_LONG_SUMMARY: &str = include_str!("../assets/prompts/interest_long_summary.txt");
    pub const PERSONALIZED_DESCRIPTION: &str = include_str!("../assets/prompts/personalized_description.txt");
    pub const SUMMARY_RECENT: &str = include_str!("../assets/prompts/summary_recent.txt");
    pub const SUMMARY_LONG_TERM: &str = include_str!("../assets/prompts/summary_long_term.txt");
    pub const SUMMARY_REFLECT: &str = include_str!("../assets/prompts/summary_reflect.txt");
    pub const SUMMARY_RETRIEVED: &str = include_str!("../assets/prompts/summary_retrieved.txt");
}

/// Literal left in the second least-to-most turn; replaced by the first
/// turn's answer before sending.
pub const STAGE1_PLACEHOLDER: &str = "[[STAGE1_ANSWER]]";

/// Substitute `{name}` placeholders in one pass; substituted text is never
/// rescanned. Unknown placeholders are left as-is.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let map: HashMap<&str, &str> = vars.iter().copied().collect();
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if map.contains_key(&after[..close]) => {
                out.push_str(map[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Wording for the item type of a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemDomain {
    #[default]
    Movies,
    Books,
}

impl ItemDomain {
    pub fn noun(&self) -> &'static str {
        match self {
            ItemDomain::Movies => "movie",
            ItemDomain::Books => "book",
        }
    }

    pub fn nouns(&self) -> &'static str {
        match self {
            ItemDomain::Movies => "movies",
            ItemDomain::Books => "books",
        }
    }

    pub fn verb(&self) -> &'static str {
        match self {
            ItemDomain::Movies => "watch",
            ItemDomain::Books => "read",
        }
    }

    pub fn verb_past(&self) -> &'static str {
        match self {
            ItemDomain::Movies => "watched",
            ItemDomain::Books => "read",
        }
    }

    pub fn gerund(&self) -> &'static str {
        match self {
            ItemDomain::Movies => "watching",
            ItemDomain::Books => "reading",
        }
    }

    /// Fill a template with the domain words plus `extra` variables.
    pub fn fill(&self, template: &str, extra: &[(&str, &str)]) -> String {
        let mut vars = vec![
            ("noun", self.noun()),
            ("nouns", self.nouns()),
            ("verb", self.verb()),
            ("verb_past", self.verb_past()),
            ("gerund", self.gerund()),
        ];
        vars.extend_from_slice(extra);
        fill(template, &vars)
    }
}

/// `1. first`, `2. second`, ...
pub fn numbered_lines<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IclMode {
    #[default]
    None,
    /// The user's own previous step as the example.
    #[serde(rename = "self")]
    SelfDemo,
    /// The most similar other user's sequence as the example.
    Others,
}

fn yes() -> bool {
    true
}

fn default_history_len() -> usize {
    10
}

fn default_scheme() -> IdentifierScheme {
    IdentifierScheme::Description
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    #[serde(default = "yes")]
    pub recency_focused: bool,
    #[serde(default)]
    pub role_prompt: bool,
    #[serde(default = "yes")]
    pub cot_step_by_step: bool,
    #[serde(default)]
    pub least_to_most: bool,
    #[serde(default)]
    pub icl: IclMode,
    /// Demonstrations are truncated to this many items.
    #[serde(default = "default_history_len")]
    pub history_len: usize,
    #[serde(default = "default_scheme")]
    pub scheme: IdentifierScheme,
    #[serde(default)]
    pub domain: ItemDomain,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            recency_focused: true,
            role_prompt: false,
            cot_step_by_step: true,
            least_to_most: false,
            icl: IclMode::None,
            history_len: default_history_len(),
            scheme: default_scheme(),
            domain: ItemDomain::default(),
        }
    }
}

impl PromptConfig {
    pub fn hash(&self) -> String {
        short_hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Model calls per ranking instance made by the prompt itself.
    pub fn calls_per_instance(&self) -> usize {
        if self.least_to_most {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub config_hash: String,
    pub instance_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: Option<String>,
    pub user_turns: Vec<String>,
    pub meta: PromptMeta,
}

/// An in-context example: a short history and the item that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub mode: IclMode,
    pub user_id: String,
    pub history: Vec<String>,
    pub answer: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("self demonstration needs a prefix of at least 2 items, user {user_id} has {len}")]
    PrefixTooShort { user_id: String, len: usize },
    #[error("no other user with at least 2 prefix items in the demonstration pool")]
    EmptyPool,
    #[error("demonstration mode is none")]
    NoMode,
    #[error(transparent)]
    Embedding(#[from] LlmError),
}

fn recent_titles_text(items: &[&str], catalog: &Catalog, n: usize) -> String {
    let start = items.len().saturating_sub(n);
    items[start..].iter().map(|i| catalog.title(i)).collect::<Vec<_>>().join("; ")
}

/// Pick the in-context demonstration for `target`.
///
/// `SelfDemo` shifts the user's own prefix by one. `Others` embeds the
/// concatenated last-10 titles of every other pool user's prefix and picks the
/// largest inner product with the target's, ties going to the smaller user id.
pub fn select_demonstration(
    mode: IclMode,
    target: &EvalInstance,
    pool: &[EvalInstance],
    embedder: &dyn Embedder,
    catalog: &Catalog,
) -> Result<Demonstration, PromptError> {
    let shift = |inst: &EvalInstance| -> Option<(Vec<String>, String)> {
        let items: Vec<String> = inst.prefix.item_ids().map(str::to_owned).collect();
        let (last, rest) = items.split_last()?;
        (!rest.is_empty()).then(|| (rest.to_vec(), last.clone()))
    };
    match mode {
        IclMode::None => Err(PromptError::NoMode),
        IclMode::SelfDemo => {
            let (history, answer) = shift(target).ok_or_else(|| PromptError::PrefixTooShort {
                user_id: target.user_id.clone(),
                len: target.prefix.len(),
            })?;
            Ok(Demonstration {
                mode,
                user_id: target.user_id.clone(),
                history,
                answer,
            })
        }
        IclMode::Others => {
            let target_items: Vec<&str> = target.prefix.item_ids().collect();
            let query = embedder.embed(&recent_titles_text(&target_items, catalog, 10))?;
            let mut best: Option<(f64, &EvalInstance)> = None;
            for cand in pool.iter().filter(|c| c.user_id != target.user_id && c.prefix.len() >= 2) {
                let items: Vec<&str> = cand.prefix.item_ids().collect();
                let v: Embedding = embedder.embed(&recent_titles_text(&items, catalog, 10))?;
                let score = query.dot(&v);
                let better = match best {
                    None => true,
                    Some((s, b)) => score > s || (score == s && cand.user_id < b.user_id),
                };
                if better {
                    best = Some((score, cand));
                }
            }
            let (_, chosen) = best.ok_or(PromptError::EmptyPool)?;
            let (history, answer) = shift(chosen).expect("pool filtered to prefixes of length >= 2");
            Ok(Demonstration {
                mode,
                user_id: chosen.user_id.clone(),
                history,
                answer,
            })
        }
    }
}

fn render_demonstration(demo: &Demonstration, config: &PromptConfig, catalog: &Catalog) -> String {
    let start = demo.history.len().saturating_sub(config.history_len);
    let titles: Vec<&str> = demo.history[start..].iter().map(|i| catalog.title(i)).collect();
    let answer = format!("{}. {}", config.scheme.label(0), catalog.title(&demo.answer));
    let template = match demo.mode {
        IclMode::Others => templates::ICL_OTHERS,
        _ => templates::ICL_SELF,
    };
    config
        .domain
        .fill(template, &[("demo_lines", &numbered_lines(&titles)), ("demo_answer", &answer)])
}

/// Render the zero-shot ranking prompt. With least-to-most enabled the result
/// has two user turns: the preference-summary request and the main prompt,
/// which carries [`STAGE1_PLACEHOLDER`] where the summary goes.
pub fn render_ranking_prompt(
    profile: &InterestProfile,
    candidate_lines: &[String],
    config: &PromptConfig,
    demonstration: Option<&Demonstration>,
    catalog: &Catalog,
    instance_id: &str,
) -> RenderedPrompt {
    let d = config.domain;
    let k = candidate_lines.len().to_string();
    let mut parts: Vec<String> = Vec::new();
    if config.role_prompt {
        parts.push(d.fill(templates::RANKING_ROLE, &[]));
    }
    if let Some(demo) = demonstration {
        parts.push(render_demonstration(demo, config, catalog));
    }
    parts.push(profile.rendered_text.clone());
    if config.least_to_most {
        parts.push(d.fill(templates::LEAST_TO_MOST_SLOT, &[("stage1_answer", STAGE1_PLACEHOLDER)]));
    }
    if config.recency_focused {
        if let Some(last) = &profile.last_title {
            parts.push(d.fill(templates::RANKING_RECENCY, &[("last_title", last)]));
        }
    }
    parts.push(d.fill(templates::RANKING_CANDIDATES, &[("k", &k), ("candidate_lines", &candidate_lines.join("\n"))]));
    let mut output = if config.scheme.is_token() {
        let n = candidate_lines.len().min(3);
        let examples: Vec<String> = (0..n).map(|i| config.scheme.label(i)).collect();
        d.fill(templates::RANKING_OUTPUT_TOKEN, &[("k", &k), ("example_labels", &examples.join(", "))])
    } else {
        d.fill(templates::RANKING_OUTPUT, &[("k", &k)])
    };
    if config.cot_step_by_step {
        output.push('\n');
        output.push_str(templates::COT);
    }
    parts.push(output);

    let main = parts.join("\n\n");
    let mut user_turns = Vec::new();
    if config.least_to_most {
        user_turns.push(d.fill(templates::LEAST_TO_MOST_SUMMARY, &[("interest", &profile.rendered_text)]));
    }
    user_turns.push(main);
    RenderedPrompt {
        system: None,
        user_turns,
        meta: PromptMeta {
            config_hash: config.hash(),
            instance_id: instance_id.to_string(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtrPromptStyle {
    Implicit,
    Explicit,
    Hybrid,
    Cot,
}

impl CtrPromptStyle {
    pub const ALL: [CtrPromptStyle; 4] = [CtrPromptStyle::Implicit, CtrPromptStyle::Explicit, CtrPromptStyle::Hybrid, CtrPromptStyle::Cot];

    pub fn name(&self) -> &'static str {
        match self {
            CtrPromptStyle::Implicit => "implicit",
            CtrPromptStyle::Explicit => "explicit",
            CtrPromptStyle::Hybrid => "hybrid",
            CtrPromptStyle::Cot => "cot",
        }
    }
}

/// `5` for whole ratings, `4.5` otherwise.
pub fn format_rating(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// The task sentence of a CTR prompt.
pub fn ctr_instruction(style: CtrPromptStyle, domain: ItemDomain, threshold: f64) -> String {
    match style {
        CtrPromptStyle::Implicit | CtrPromptStyle::Cot => domain.fill(templates::CTR_IMPLICIT, &[]),
        CtrPromptStyle::Explicit => domain.fill(templates::CTR_EXPLICIT, &[]),
        CtrPromptStyle::Hybrid => domain.fill(templates::CTR_HYBRID, &[("threshold", &format_rating(threshold))]),
    }
}

fn quoted_list<'a>(titles: impl Iterator<Item = &'a str>) -> String {
    let v: Vec<String> = titles.map(|t| format!("\"{t}\"")).collect();
    if v.is_empty() {
        "none".into()
    } else {
        v.join(", ")
    }
}

/// The per-sample part of a CTR prompt: the context and the target question.
pub fn ctr_input(sample: &CtrSample, style: CtrPromptStyle, domain: ItemDomain) -> String {
    let mut lines = Vec::new();
    match style {
        CtrPromptStyle::Implicit | CtrPromptStyle::Cot => {
            // unrated context counts as a preference
            let liked = sample.context.iter().filter(|c| c.rating.is_none_or(|r| r >= sample.threshold));
            let disliked = sample.context.iter().filter(|c| c.rating.is_some_and(|r| r < sample.threshold));
            lines.push(format!("User Preference: {}", quoted_list(liked.map(|c| c.title.as_str()))));
            lines.push(format!("User Unpreference: {}", quoted_list(disliked.map(|c| c.title.as_str()))));
        }
        CtrPromptStyle::Explicit | CtrPromptStyle::Hybrid => {
            let rated: Vec<String> = sample
                .context
                .iter()
                .map(|c| format!("\"{}\": {}", c.title, c.rating.map_or("unrated".to_string(), format_rating)))
                .collect();
            lines.push(format!("User Ratings: {}", if rated.is_empty() { "none".into() } else { rated.join(", ") }));
        }
    }
    lines.push(format!("Whether the user will like the target {} \"{}\"?", domain.noun(), sample.target_title));
    if style == CtrPromptStyle::Cot {
        lines.push(templates::COT.to_string());
    }
    lines.join("\n")
}

pub fn render_ctr_prompt(sample: &CtrSample, style: CtrPromptStyle, domain: ItemDomain) -> RenderedPrompt {
    let text = format!("{}\n\n{}", ctr_instruction(style, domain, sample.threshold), ctr_input(sample, style, domain));
    RenderedPrompt {
        system: None,
        user_turns: vec![text],
        meta: PromptMeta {
            config_hash: short_hash(format!("ctr:{}:{}:{}", style.name(), domain.noun(), sample.threshold).as_bytes()),
            instance_id: format!("{}@{}", sample.user_id, sample.timestamp),
        },
    }
}
