//! Candidate sets, their on-prompt rendering, and grounding of free-form
//! model output back onto the candidates.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::baselines::Baseline;
use crate::corpus::{Catalog, EvalInstance};

pub const DEFAULT_K: usize = 20;
pub const JACCARD_THRESHOLD: f64 = 0.6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CandidateError {
    #[error("candidate pool has {available} unseen items, need {needed}")]
    PoolTooSmall { available: usize, needed: usize },
    #[error("alphabet of {alphabet} labels cannot address {k} candidates")]
    AlphabetTooShort { alphabet: usize, k: usize },
    #[error("candidate set must be non-empty")]
    Empty,
}

pub type Result<T> = std::result::Result<T, CandidateError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub items: Vec<String>,
    /// Position of the target item, when it is in the set.
    pub ground_truth_index: Option<usize>,
    pub seed: u64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Same items in a seeded uniformly random order; the ground-truth index
    /// follows its item.
    pub fn reordered(&self, seed: u64) -> CandidateSet {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        CandidateSet {
            items: order.iter().map(|&i| self.items[i].clone()).collect(),
            ground_truth_index: self.ground_truth_index.and_then(|g| order.iter().position(|&i| i == g)),
            seed,
        }
    }
}

/// Uniformly sample `k - 1` unseen negatives and insert the ground truth at a
/// uniformly random position.
pub fn build_random_candidates(instance: &EvalInstance, item_pool: &[String], k: usize, seed: u64) -> Result<CandidateSet> {
    if k == 0 {
        return Err(CandidateError::Empty);
    }
    let seen = instance.seen_items();
    let pool: Vec<&String> = item_pool
        .iter()
        .filter(|i| !seen.contains(i.as_str()) && **i != instance.ground_truth)
        .collect();
    if pool.len() < k - 1 {
        return Err(CandidateError::PoolTooSmall {
            available: pool.len(),
            needed: k - 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<String> = index::sample(&mut rng, pool.len(), k - 1).into_iter().map(|i| pool[i].clone()).collect();
    let pos = rng.random_range(0..k);
    items.insert(pos, instance.ground_truth.clone());
    Ok(CandidateSet {
        items,
        ground_truth_index: Some(pos),
        seed,
    })
}

/// Candidates recalled by a baseline among items the user has not seen. The
/// ground truth is not injected.
pub fn build_recalled_candidates(model: &Baseline, instance: &EvalInstance, k: usize) -> Result<CandidateSet> {
    if k == 0 {
        return Err(CandidateError::Empty);
    }
    let items = model.recall_top_k(&instance.user_id, k, &instance.seen_items());
    if items.is_empty() {
        return Err(CandidateError::PoolTooSmall { available: 0, needed: k });
    }
    let ground_truth_index = items.iter().position(|i| *i == instance.ground_truth);
    Ok(CandidateSet {
        items,
        ground_truth_index,
        seed: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentifierScheme {
    /// `i. <title>`; grounded by title.
    Description,
    /// `i. <title>`; grounded by the leading number.
    TokenNumeric,
    /// `A. <title>`; grounded by the leading letter.
    TokenLetters,
}

impl IdentifierScheme {
    pub fn is_token(&self) -> bool {
        !matches!(self, IdentifierScheme::Description)
    }

    pub fn capacity(&self) -> usize {
        match self {
            IdentifierScheme::TokenLetters => 26,
            _ => usize::MAX,
        }
    }

    /// Label for the candidate at `index`.
    pub fn label(&self, index: usize) -> String {
        match self {
            IdentifierScheme::TokenLetters => ((b'A' + index as u8) as char).to_string(),
            _ => (index + 1).to_string(),
        }
    }

    fn parse_label(&self, s: &str) -> Option<usize> {
        match self {
            IdentifierScheme::TokenLetters => {
                let mut chars = s.chars();
                let c = chars.next()?.to_ascii_uppercase();
                (chars.next().is_none() && c.is_ascii_uppercase()).then(|| (c as u8 - b'A') as usize)
            }
            _ => s.parse::<usize>().ok().filter(|&n| n >= 1).map(|n| n - 1),
        }
    }
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static regex"))
}

/// Lowercase, drop a trailing `(YYYY)` and apostrophes, replace other
/// punctuation by spaces and collapse whitespace.
pub fn normalize_title(s: &str) -> String {
    static YEAR: OnceLock<Regex> = OnceLock::new();
    // "Schindler's" and "Schindlers" must agree
    let lower = s.to_lowercase().replace(['\'', '’'], "");
    let no_year = re(&YEAR, r"\(\s*\d{4}\s*\)[^\p{L}\p{N}]*$").replace(&lower, "");
    no_year
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Titles as shown for this set. Items whose normalized titles collide get
/// their id appended so every line grounds to exactly one item.
pub fn display_titles(set: &CandidateSet, catalog: &Catalog) -> Vec<String> {
    let titles: Vec<&str> = set.items.iter().map(|i| catalog.title(i)).collect();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in &titles {
        *counts.entry(normalize_title(t)).or_default() += 1;
    }
    titles
        .iter()
        .zip(&set.items)
        .map(|(t, id)| {
            if counts[&normalize_title(t)] > 1 {
                format!("{t} [{id}]")
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// One display line per candidate, in set order.
pub fn render_identifiers(set: &CandidateSet, catalog: &Catalog, scheme: IdentifierScheme) -> Result<Vec<String>> {
    if set.len() > scheme.capacity() {
        return Err(CandidateError::AlphabetTooShort {
            alphabet: scheme.capacity(),
            k: set.len(),
        });
    }
    Ok(display_titles(set, catalog)
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", scheme.label(i), t))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingReport {
    /// Candidate indices in the order the model listed them.
    pub ranking: Vec<usize>,
    pub covered: bool,
    pub unmatched_lines: Vec<String>,
    pub duplicates_dropped: usize,
}

impl GroundingReport {
    /// 1-based rank of the ground truth, if it was recovered.
    pub fn ground_truth_rank(&self, ground_truth_index: Option<usize>) -> Option<usize> {
        let g = ground_truth_index?;
        self.ranking.iter().position(|&i| i == g).map(|p| p + 1)
    }
}

fn strip_decorations(line: &str) -> &str {
    static BULLET: OnceLock<Regex> = OnceLock::new();
    let t = line.trim();
    let t = re(&BULLET, r"^(?:[-*•·>#+]+\s*)+").find(t).map_or(t, |m| &t[m.end()..]);
    t.trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '“' | '”' | '‘' | '’'))
}

fn strip_numbering(line: &str) -> &str {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let t = strip_decorations(line);
    let t = re(&NUM, r"^(?:\(\s*\d+\s*\)|\[\s*\d+\s*\]|\d+\s*[.)])\s*").find(t).map_or(t, |m| &t[m.end()..]);
    strip_decorations(t)
}

fn leading_label(line: &str) -> Option<&str> {
    static LABEL: OnceLock<Regex> = OnceLock::new();
    let t = strip_decorations(line);
    let caps = re(&LABEL, r"^[\(\[]?\s*(\d+|[A-Za-z])\s*(?:[.):\]]|$|\s)").captures(t)?;
    let label = caps.get(1)?.as_str();
    // a bare letter followed by a space is an ordinary word ("A Beautiful Mind")
    let rest = &t[caps.get(0)?.end()..];
    let delimited = caps.get(0)?.as_str().trim_end().ends_with(|c: char| ".):]".contains(c));
    if label.chars().all(|c| c.is_ascii_alphabetic()) && !delimited && !rest.is_empty() {
        return None;
    }
    Some(label)
}

fn jaccard(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn match_title(line: &str, titles: &[String], eligible: impl Fn(usize) -> bool) -> Option<usize> {
    let norm_line = normalize_title(strip_numbering(line));
    if norm_line.is_empty() {
        return None;
    }
    let candidates = || titles.iter().enumerate().filter(|(i, _)| eligible(*i));
    if let Some((i, _)) = candidates().find(|(_, t)| **t == norm_line) {
        return Some(i);
    }
    let padded = format!(" {norm_line} ");
    if let Some((i, _)) = candidates().find(|(_, t)| !t.is_empty() && padded.contains(&format!(" {t} "))) {
        return Some(i);
    }
    let line_tokens: HashSet<&str> = norm_line.split(' ').collect();
    candidates()
        .find(|(_, t)| {
            let tt: HashSet<&str> = t.split(' ').filter(|s| !s.is_empty()).collect();
            jaccard(&line_tokens, &tt) >= JACCARD_THRESHOLD
        })
        .map(|(i, _)| i)
}

/// Recover a ranking over `set` from raw model text.
///
/// Token schemes match the leading label of each line. The description scheme
/// tries, per line: exact normalized title equality, then containment of a
/// normalized candidate title, then token-set Jaccard >= 0.6. Within a tier the
/// first candidate in set order wins. Repeats are dropped and lines matching
/// nothing are kept in `unmatched_lines`. Candidates not yet matched are
/// searched before already matched ones.
pub fn ground_output(raw_text: &str, set: &CandidateSet, catalog: &Catalog, scheme: IdentifierScheme) -> GroundingReport {
    let titles: Vec<String> = display_titles(set, catalog).iter().map(|t| normalize_title(t)).collect();
    let mut ranking = Vec::new();
    let mut used = HashSet::new();
    let mut unmatched_lines = Vec::new();
    let mut duplicates_dropped = 0;
    for line in raw_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let hit = if scheme.is_token() {
            leading_label(line).and_then(|l| scheme.parse_label(l)).filter(|&i| i < set.len())
        } else {
            // unused candidates first, so a repeated title cannot shadow a
            // later, longer one
            match_title(line, &titles, |i| !used.contains(&i)).or_else(|| match_title(line, &titles, |i| used.contains(&i)))
        };
        match hit {
            Some(i) if used.insert(i) => ranking.push(i),
            Some(_) => duplicates_dropped += 1,
            None => unmatched_lines.push(line.to_string()),
        }
    }
    let covered = set.ground_truth_index.is_some_and(|g| used.contains(&g));
    GroundingReport {
        ranking,
        covered,
        unmatched_lines,
        duplicates_dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Interaction, ItemRecord, UserHistory};
    use proptest::prelude::*;
    use rand::Rng;

    fn catalog(titles: &[(&str, &str)]) -> Catalog {
        titles.iter().map(|(id, t)| ItemRecord::new(*id, *t)).collect()
    }

    fn instance(seen: &[&str], gt: &str) -> EvalInstance {
        EvalInstance {
            user_id: "u".into(),
            prefix: UserHistory {
                user_id: "u".into(),
                interactions: seen.iter().enumerate().map(|(t, i)| Interaction::new("u", *i, Some(4.0), t as u64)).collect(),
            },
            ground_truth: gt.into(),
        }
    }

    fn pool(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i:03}")).collect()
    }

    #[test]
    fn random_sets_have_k_distinct_items() {
        let inst = instance(&["i000", "i001"], "i002");
        let set = build_random_candidates(&inst, &pool(100), 20, 5).unwrap();
        assert_eq!(set.len(), 20);
        let uniq: HashSet<_> = set.items.iter().collect();
        assert_eq!(uniq.len(), 20);
        assert_eq!(set.items.iter().filter(|i| *i == "i002").count(), 1);
        assert_eq!(set.items[set.ground_truth_index.unwrap()], "i002");
        assert!(!set.items.contains(&"i000".to_string()));
        assert_eq!(set, build_random_candidates(&inst, &pool(100), 20, 5).unwrap());
    }

    #[test]
    fn small_pool_errors_with_counts() {
        let inst = instance(&["i000"], "i001");
        let err = build_random_candidates(&inst, &pool(10), 20, 1).unwrap_err();
        assert_eq!(err, CandidateError::PoolTooSmall { available: 8, needed: 19 });
    }

    #[test]
    fn recalled_sets_follow_the_model() {
        use crate::baselines::PopModel;
        let counts = (0..30).map(|i| (format!("i{i:03}"), 100 - i as u64)).collect();
        let model = Baseline::Pop(PopModel { count: counts });
        let inst = instance(&["i000"], "i025");
        let set = build_recalled_candidates(&model, &inst, 20).unwrap();
        assert_eq!(set.items, (1..21).map(|i| format!("i{i:03}")).collect::<Vec<_>>());
        assert_eq!(set.ground_truth_index, None);
        let inst = instance(&["i000"], "i001");
        assert_eq!(build_recalled_candidates(&model, &inst, 20).unwrap().ground_truth_index, Some(0));
    }

    #[test]
    fn rendering_schemes() {
        let cat = catalog(&[("1", "Heat (1995)"), ("2", "Alien (1979)"), ("3", "Up (2009)")]);
        let set = CandidateSet {
            items: vec!["1".into(), "2".into(), "3".into()],
            ground_truth_index: Some(0),
            seed: 0,
        };
        assert_eq!(
            render_identifiers(&set, &cat, IdentifierScheme::Description).unwrap(),
            ["1. Heat (1995)", "2. Alien (1979)", "3. Up (2009)"]
        );
        assert_eq!(
            render_identifiers(&set, &cat, IdentifierScheme::TokenLetters).unwrap(),
            ["A. Heat (1995)", "B. Alien (1979)", "C. Up (2009)"]
        );
        let big = CandidateSet {
            items: pool(27),
            ground_truth_index: None,
            seed: 0,
        };
        assert_eq!(
            render_identifiers(&big, &cat, IdentifierScheme::TokenLetters).unwrap_err(),
            CandidateError::AlphabetTooShort { alphabet: 26, k: 27 }
        );
    }

    #[test]
    fn colliding_titles_are_disambiguated() {
        let cat = catalog(&[("a", "Heat (1995)"), ("b", "Heat (1986)"), ("c", "Heat (1995)"), ("d", "Up")]);
        let set = CandidateSet {
            items: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            ground_truth_index: Some(1),
            seed: 0,
        };
        let lines = render_identifiers(&set, &cat, IdentifierScheme::Description).unwrap();
        assert_eq!(lines, ["1. Heat (1995) [a]", "2. Heat (1986) [b]", "3. Heat (1995) [c]", "4. Up"]);
        let uniq: HashSet<_> = lines.iter().collect();
        assert_eq!(uniq.len(), 4);
        let report = ground_output(&lines.join("\n"), &set, &cat, IdentifierScheme::Description);
        assert_eq!(report.ranking, [0, 1, 2, 3]);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_title("The Matrix (1999)"), "the matrix");
        assert_eq!(normalize_title("the matrix!!"), "the matrix");
        assert_eq!(normalize_title("  Se7en:   Director's Cut "), "se7en directors cut");
        assert_eq!(normalize_title("Schindler’s List (1993)"), normalize_title("SCHINDLERS LIST"));
    }

    #[test]
    fn grounding_matches_noisy_lines() {
        let cat = catalog(&[("1", "Heat (1995)"), ("2", "The Matrix (1999)"), ("3", "Matrix, The Reloaded (2003)")]);
        let set = CandidateSet {
            items: vec!["1".into(), "2".into(), "3".into()],
            ground_truth_index: Some(1),
            seed: 0,
        };
        let raw = "Here is my ranking:\n3) the matrix!!\n- **Heat**\n1. Heat (1995)\n\"The Matrix Reloaded\"\nSome Chinese book";
        let r = ground_output(raw, &set, &cat, IdentifierScheme::Description);
        assert_eq!(r.ranking, [1, 0, 2]);
        assert!(r.covered);
        assert_eq!(r.duplicates_dropped, 1);
        assert_eq!(r.unmatched_lines, ["Here is my ranking:", "Some Chinese book"]);
    }

    #[test]
    fn omitted_ground_truth_is_not_covered() {
        let cat = catalog(&[("1", "Heat"), ("2", "Alien")]);
        let set = CandidateSet {
            items: vec!["1".into(), "2".into()],
            ground_truth_index: Some(1),
            seed: 0,
        };
        let r = ground_output("1. Heat", &set, &cat, IdentifierScheme::Description);
        assert!(!r.covered);
        assert_eq!(r.ground_truth_rank(set.ground_truth_index), None);
        let empty = ground_output("", &set, &cat, IdentifierScheme::Description);
        assert!(empty.ranking.is_empty() && !empty.covered);
    }

    #[test]
    fn token_labels() {
        let cat = catalog(&[("1", "A Beautiful Mind"), ("2", "Alien"), ("3", "Up")]);
        let set = CandidateSet {
            items: vec!["1".into(), "2".into(), "3".into()],
            ground_truth_index: Some(2),
            seed: 0,
        };
        let raw = "C\nb) Alien\nA Beautiful Mind\n(a)\nZ. nothing\nc";
        let r = ground_output(raw, &set, &cat, IdentifierScheme::TokenLetters);
        assert_eq!(r.ranking, [2, 1, 0]);
        assert_eq!(r.unmatched_lines, ["A Beautiful Mind", "Z. nothing"]);
        assert_eq!(r.duplicates_dropped, 1);
        let r = ground_output("2\n3.\n[1] x\n9. out of range", &set, &cat, IdentifierScheme::TokenNumeric);
        assert_eq!(r.ranking, [1, 2, 0]);
        assert_eq!(r.unmatched_lines.len(), 1);
    }

    #[test]
    fn reordering_tracks_ground_truth() {
        let set = CandidateSet {
            items: pool(20),
            ground_truth_index: Some(7),
            seed: 0,
        };
        let r = set.reordered(99);
        assert_eq!(r.items[r.ground_truth_index.unwrap()], set.items[7]);
        let mut a = r.items.clone();
        a.sort();
        assert_eq!(a, set.items);
    }

    proptest! {
        #[test]
        fn echo_round_trip_is_identity(k in 1usize..=26, letters in any::<bool>(), numeric in any::<bool>(), seed in any::<u64>()) {
            let words = ["red", "blue", "night", "city", "river", "ghost", "king", "story", "dark", "summer"];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cat: Catalog = (0..k)
                .map(|i| {
                    let n = rng.random_range(1..4);
                    let t: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
                    ItemRecord::new(format!("i{i}"), format!("{} ({})", t.join(" "), 1950 + rng.random_range(0..60)))
                })
                .collect();
            let set = CandidateSet { items: (0..k).map(|i| format!("i{i}")).collect(), ground_truth_index: Some(k / 2), seed: 0 };
            let scheme = if letters { IdentifierScheme::TokenLetters } else if numeric { IdentifierScheme::TokenNumeric } else { IdentifierScheme::Description };
            let lines = render_identifiers(&set, &cat, scheme).unwrap();
            let r = ground_output(&lines.join("\n"), &set, &cat, scheme);
            prop_assert_eq!(r.ranking, (0..k).collect::<Vec<_>>());
            prop_assert!(r.covered);
            prop_assert!(r.unmatched_lines.is_empty());
        }

        #[test]
        fn grounding_is_duplicate_free(raw in "(\\PC{0,20}\n){0,30}") {
            let cat = catalog(&[("1", "Heat"), ("2", "Alien"), ("3", "Up")]);
            let set = CandidateSet { items: vec!["1".into(), "2".into(), "3".into()], ground_truth_index: Some(0), seed: 0 };
            for scheme in [IdentifierScheme::Description, IdentifierScheme::TokenLetters, IdentifierScheme::TokenNumeric] {
                let r = ground_output(&raw, &set, &cat, scheme);
                let uniq: HashSet<_> = r.ranking.iter().collect();
                prop_assert_eq!(uniq.len(), r.ranking.len());
                prop_assert!(r.ranking.iter().all(|&i| i < 3));
            }
        }
    }
}
