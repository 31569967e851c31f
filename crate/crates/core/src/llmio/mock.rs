//! Deterministic stand-ins for a chat model.
//!
//! Ranking mocks locate the candidate block in the last user turn: the run of
//! labelled lines (`1. ...`, `A. ...`) right after the first header line that
//! mentions "candidate" and ends with a colon. Requests without such a block
//! are treated as free-text or yes/no questions.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, Completion, Llm, LlmError, Result};
use crate::hashing::{derive_seed, fnv1a64};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MockKind {
    /// Ground-truth line first, then the rest in presented order.
    Oracle,
    /// Candidate lines in presented order; other prompts are echoed verbatim.
    Echo,
    /// Seeded permutation of the candidates, or a seeded `Yes.`/`No.`.
    Random { seed: u64 },
    /// The first `K - m` candidate lines.
    Truncate { m: usize },
    /// Always answers with the given text.
    Constant { text: String },
}

impl fmt::Display for MockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockKind::Oracle => write!(f, "oracle"),
            MockKind::Echo => write!(f, "echo"),
            MockKind::Random { seed } => write!(f, "random:{seed}"),
            MockKind::Truncate { m } => write!(f, "truncate:{m}"),
            MockKind::Constant { text } => write!(f, "constant:{text}"),
        }
    }
}

impl FromStr for MockKind {
    type Err = LlmError;

    /// `oracle`, `echo`, `random:<seed>`, `truncate:<m>`, `constant:<text>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let bad = || LlmError::Config(format!("invalid mock spec {s:?}"));
        match (kind.trim().to_ascii_lowercase().as_str(), arg) {
            ("oracle", None) => Ok(MockKind::Oracle),
            ("echo", None) => Ok(MockKind::Echo),
            ("random", Some(a)) => Ok(MockKind::Random {
                seed: a.trim().parse().map_err(|_| bad())?,
            }),
            ("truncate", Some(a)) => Ok(MockKind::Truncate {
                m: a.trim().parse().map_err(|_| bad())?,
            }),
            ("constant", Some(a)) => Ok(MockKind::Constant { text: a.to_string() }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockLlm {
    kind: MockKind,
}

pub fn make_mock(kind: MockKind) -> MockLlm {
    MockLlm { kind }
}

impl MockLlm {
    pub fn kind(&self) -> &MockKind {
        &self.kind
    }
}

fn label_re() -> &'static Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+|[A-Za-z])\.\s").expect("static regex"))
}

/// Candidate lines of a ranking prompt, if the prompt has a candidate block.
pub fn candidate_block(prompt: &str) -> Option<Vec<&str>> {
    let lines: Vec<&str> = prompt.lines().collect();
    let header = lines.iter().position(|l| {
        let t = l.trim_end();
        t.ends_with(':') && t.to_ascii_lowercase().contains("candidate") && !label_re().is_match(t)
    })?;
    let block: Vec<&str> = lines[header + 1..].iter().take_while(|l| label_re().is_match(l)).copied().collect();
    (!block.is_empty()).then_some(block)
}

impl Llm for MockLlm {
    fn name(&self) -> String {
        format!("mock:{}", self.kind)
    }

    fn is_mock(&self) -> bool {
        true
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        let prompt = request.last_user_text().ok_or(LlmError::EmptyRequest)?;
        let block = candidate_block(prompt);
        let hint = request.hint.as_ref();
        let text = match (&self.kind, block) {
            (MockKind::Constant { text }, _) => text.clone(),
            (MockKind::Oracle, Some(lines)) => {
                let gt = hint.and_then(|h| h.ground_truth_line.as_deref());
                let mut out: Vec<&str> = Vec::with_capacity(lines.len());
                if let Some(gt) = gt.filter(|g| lines.contains(g)) {
                    out.push(gt);
                    out.extend(lines.iter().filter(|l| **l != gt));
                } else {
                    out = lines;
                }
                out.join("\n")
            }
            (MockKind::Oracle, None) => match hint.and_then(|h| h.label) {
                Some(true) => "Yes.".into(),
                Some(false) => "No.".into(),
                None => prompt.to_string(),
            },
            (MockKind::Echo, Some(lines)) => lines.join("\n"),
            (MockKind::Echo, None) => prompt.to_string(),
            (MockKind::Random { seed }, Some(mut lines)) => {
                let s = derive_seed(*seed, &[&request.transcript()]);
                lines.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
                lines.join("\n")
            }
            (MockKind::Random { seed }, None) => {
                let h = derive_seed(*seed, &[&request.transcript()]);
                if fnv1a64(&h.to_le_bytes()) & 1 == 0 { "Yes." } else { "No." }.to_string()
            }
            (MockKind::Truncate { m }, Some(lines)) => {
                let keep = lines.len().saturating_sub(*m);
                lines[..keep].join("\n")
            }
            (MockKind::Truncate { .. }, None) => prompt.to_string(),
        };
        Ok(Completion::immediate(text))
    }
}
