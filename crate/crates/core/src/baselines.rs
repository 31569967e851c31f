//! Traditional comparators and candidate recallers: Random, Pop and BPR
//! matrix factorization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Interaction;
use crate::hashing::{derive_seed, unit_interval};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Ranks items uniformly at random.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomModel {
    pub seed: u64,
    pub items: BTreeSet<String>,
}

pub fn fit_random(interactions: &[Interaction], seed: u64) -> RandomModel {
    RandomModel {
        seed,
        items: interactions.iter().map(|i| i.item_id.clone()).collect(),
    }
}

/// Interaction counts per item over the training set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopModel {
    pub count: BTreeMap<String, u64>,
}

impl PopModel {
    pub fn count(&self, item_id: &str) -> u64 {
        self.count.get(item_id).copied().unwrap_or(0)
    }
}

pub fn fit_pop(interactions: &[Interaction]) -> PopModel {
    let mut count = BTreeMap::new();
    for it in interactions {
        *count.entry(it.item_id.clone()).or_insert(0) += 1;
    }
    PopModel { count }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprParams {
    pub dim: usize,
    pub learning_rate: f64,
    pub reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BprParams {
    fn default() -> Self {
        Self {
            dim: 64,
            learning_rate: 0.05,
            reg: 1e-4,
            epochs: 30,
            seed: 42,
        }
    }
}

impl BprParams {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(BaselineError::InvalidHyperparameter("dim must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BaselineError::InvalidHyperparameter("learning_rate must be > 0".into()));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(BaselineError::InvalidHyperparameter("reg must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pairwise-trained matrix factorization without bias terms.
#[derive(Debug, Clone, PartialEq)]
pub struct BprModel {
    pub params: BprParams,
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

impl BprModel {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn user_vector(&self, user_id: &str) -> Option<&[f64]> {
        let d = self.params.dim;
        self.user_index.get(user_id).map(|&u| &self.user_factors[u * d..(u + 1) * d])
    }

    pub fn item_vector(&self, item_id: &str) -> Option<&[f64]> {
        let d = self.params.dim;
        self.item_index.get(item_id).map(|&i| &self.item_factors[i * d..(i + 1) * d])
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }

    /// Model with explicit factors, mostly for fixtures.
    pub fn from_factors(params: BprParams, users: Vec<(String, Vec<f64>)>, items: Vec<(String, Vec<f64>)>) -> Result<Self> {
        params.validate()?;
        let d = params.dim;
        let mut model = BprModel {
            params,
            users: Vec::new(),
            items: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
            user_factors: Vec::new(),
            item_factors: Vec::new(),
        };
        for (id, v) in users {
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(BaselineError::InvalidHyperparameter(format!(
                    "user {id}: factor vector must have {d} finite values"
                )));
            }
            model.user_index.insert(id.clone(), model.users.len());
            model.users.push(id);
            model.user_factors.extend(v);
        }
        for (id, v) in items {
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(BaselineError::InvalidHyperparameter(format!(
                    "item {id}: factor vector must have {d} finite values"
                )));
            }
            model.item_index.insert(id.clone(), model.items.len());
            model.items.push(id);
            model.item_factors.extend(v);
        }
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Regularized log-likelihood of one (user, positive, negative) triple:
/// `ln σ(p·q_i − p·q_j) − (reg/2)(‖p‖² + ‖q_i‖² + ‖q_j‖²)`.
///
/// The `1/2` makes [`pairwise_gradient`] carry exactly `reg·θ` as its
/// regularization term.
pub fn pairwise_objective(p_u: &[f64], q_i: &[f64], q_j: &[f64], reg: f64) -> f64 {
    let x = dot(p_u, q_i) - dot(p_u, q_j);
    let norms = dot(p_u, p_u) + dot(q_i, q_i) + dot(q_j, q_j);
    log_sigmoid(x) - 0.5 * reg * norms
}

/// Gradient of [`pairwise_objective`] with respect to `(p_u, q_i, q_j)`.
pub fn pairwise_gradient(p_u: &[f64], q_i: &[f64], q_j: &[f64], reg: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x = dot(p_u, q_i) - dot(p_u, q_j);
    let g = sigmoid(-x);
    let gp = p_u.iter().zip(q_i.iter().zip(q_j)).map(|(p, (qi, qj))| g * (qi - qj) - reg * p).collect();
    let gi = p_u.iter().zip(q_i).map(|(p, qi)| g * p - reg * qi).collect();
    let gj = p_u.iter().zip(q_j).map(|(p, qj)| -g * p - reg * qj).collect();
    (gp, gi, gj)
}

/// One ascent step on a triple; all three gradients use the pre-step values.
pub fn sgd_step(p_u: &mut [f64], q_i: &mut [f64], q_j: &mut [f64], learning_rate: f64, reg: f64) {
    let (gp, gi, gj) = pairwise_gradient(p_u, q_i, q_j, reg);
    for (p, g) in p_u.iter_mut().zip(gp) {
        *p += learning_rate * g;
    }
    for (q, g) in q_i.iter_mut().zip(gi) {
        *q += learning_rate * g;
    }
    for (q, g) in q_j.iter_mut().zip(gj) {
        *q += learning_rate * g;
    }
}

/// Fit BPR with plain SGD. Each epoch visits every distinct observed
/// (user, item) pair once in a seeded shuffled order and draws one
/// unobserved item uniformly as the negative.
pub fn fit_bpr(interactions: &[Interaction], params: BprParams) -> Result<BprModel> {
    params.validate()?;
    let d = params.dim;
    let users: Vec<String> = interactions.iter().map(|i| i.user_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let items: Vec<String> = interactions.iter().map(|i| i.item_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let user_index: HashMap<String, usize> = users.iter().enumerate().map(|(k, v)| (v.clone(), k)).collect();
    let item_index: HashMap<String, usize> = items.iter().enumerate().map(|(k, v)| (v.clone(), k)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 0.1 / (d as f64).sqrt()).expect("finite std");
    let user_factors: Vec<f64> = (0..users.len() * d).map(|_| normal.sample(&mut rng)).collect();
    let item_factors: Vec<f64> = (0..items.len() * d).map(|_| normal.sample(&mut rng)).collect();

    let mut positives: Vec<HashSet<usize>> = vec![HashSet::new(); users.len()];
    let mut pairs: Vec<(usize, usize)> = interactions.iter().map(|it| (user_index[&it.user_id], item_index[&it.item_id])).collect();
    pairs.sort_unstable();
    pairs.dedup();
    for &(u, i) in &pairs {
        positives[u].insert(i);
    }

    let mut model = BprModel {
        params,
        users,
        items,
        user_index,
        item_index,
        user_factors,
        item_factors,
    };
    let n_items = model.items.len();
    let mut p_buf = vec![0.0; d];
    let mut qi_buf = vec![0.0; d];
    let mut qj_buf = vec![0.0; d];
    for _ in 0..params.epochs {
        pairs.shuffle(&mut rng);
        for &(u, i) in &pairs {
            if positives[u].len() >= n_items {
                continue;
            }
            let j = loop {
                let j = rng.random_range(0..n_items);
                if !positives[u].contains(&j) {
                    break j;
                }
            };
            p_buf.copy_from_slice(&model.user_factors[u * d..(u + 1) * d]);
            qi_buf.copy_from_slice(&model.item_factors[i * d..(i + 1) * d]);
            qj_buf.copy_from_slice(&model.item_factors[j * d..(j + 1) * d]);
            sgd_step(&mut p_buf, &mut qi_buf, &mut qj_buf, params.learning_rate, params.reg);
            model.user_factors[u * d..(u + 1) * d].copy_from_slice(&p_buf);
            model.item_factors[i * d..(i + 1) * d].copy_from_slice(&qi_buf);
            model.item_factors[j * d..(j + 1) * d].copy_from_slice(&qj_buf);
        }
    }
    Ok(model)
}

/// A fitted comparator.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Random(RandomModel),
    Pop(PopModel),
    Bpr(BprModel),
}

impl Baseline {
    pub fn kind(&self) -> &'static str {
        match self {
            Baseline::Random(_) => "random",
            Baseline::Pop(_) => "pop",
            Baseline::Bpr(_) => "bpr",
        }
    }

    /// Items the model can score, in id order.
    pub fn items(&self) -> Vec<&str> {
        match self {
            Baseline::Random(m) => m.items.iter().map(String::as_str).collect(),
            Baseline::Pop(m) => m.count.keys().map(String::as_str).collect(),
            Baseline::Bpr(m) => {
                let mut v: Vec<&str> = m.items().collect();
                v.sort_unstable();
                v
            }
        }
    }

    /// Pop: interaction count. BPR: `p_u · q_i`, or 0.0 for an unknown user or
    /// item. Random: a seeded hash-derived value in [0, 1).
    pub fn score(&self, user_id: &str, item_id: &str) -> f64 {
        match self {
            Baseline::Random(m) => unit_interval(derive_seed(m.seed, &[user_id, item_id])),
            Baseline::Pop(m) => m.count(item_id) as f64,
            Baseline::Bpr(m) => match (m.user_vector(user_id), m.item_vector(item_id)) {
                (Some(p), Some(q)) => dot(p, q),
                _ => 0.0,
            },
        }
    }

    /// Order candidates by descending score with ties broken by item id. The
    /// random model returns a uniform permutation drawn from `seed`.
    pub fn rank_candidates(&self, user_id: &str, candidates: &[String], seed: u64) -> Vec<String> {
        let mut out = candidates.to_vec();
        match self {
            Baseline::Random(_) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[user_id]));
                out.shuffle(&mut rng);
            }
            _ => {
                let mut scored: Vec<(f64, String)> = out.into_iter().map(|c| (self.score(user_id, &c), c)).collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
                out = scored.into_iter().map(|(_, c)| c).collect();
            }
        }
        out
    }

    /// Top-`k` items outside `exclude`, ordered as [`Self::rank_candidates`].
    pub fn recall_top_k(&self, user_id: &str, k: usize, exclude: &HashSet<&str>) -> Vec<String> {
        let pool: Vec<String> = self.items().into_iter().filter(|i| !exclude.contains(i)).map(str::to_owned).collect();
        if pool.len() < k {
            log::warn!("only {} scorable items for user {user_id}, wanted {k}", pool.len());
        }
        let seed = match self {
            Baseline::Random(m) => m.seed,
            _ => 0,
        };
        let mut ranked = self.rank_candidates(user_id, &pool, seed);
        ranked.truncate(k);
        ranked
    }

    /// Text checkpoint: a header line naming the model type and its
    /// hyperparameters, then one whitespace-separated line per entity.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        match self {
            Baseline::Random(m) => {
                writeln!(out, "random seed={}", m.seed).unwrap();
                for i in &m.items {
                    writeln!(out, "item {i}").unwrap();
                }
            }
            Baseline::Pop(m) => {
                writeln!(out, "pop").unwrap();
                for (i, c) in &m.count {
                    writeln!(out, "item {i} {c}").unwrap();
                }
            }
            Baseline::Bpr(m) => {
                let p = &m.params;
                writeln!(
                    out,
                    "bpr d={} learning_rate={} reg={} epochs={} seed={}",
                    p.dim, p.learning_rate, p.reg, p.epochs, p.seed
                )
                .unwrap();
                let d = p.dim;
                for (k, u) in m.users.iter().enumerate() {
                    write!(out, "user {u}").unwrap();
                    for x in &m.user_factors[k * d..(k + 1) * d] {
                        write!(out, " {x}").unwrap();
                    }
                    out.push('\n');
                }
                for (k, i) in m.items.iter().enumerate() {
                    write!(out, "item {i}").unwrap();
                    for x in &m.item_factors[k * d..(k + 1) * d] {
                        write!(out, " {x}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(BaselineError::Checkpoint {
            line: 1,
            message: "empty checkpoint".into(),
        })?;
        let err = |line: usize, message: String| BaselineError::Checkpoint { line: line + 1, message };
        let mut head = header.split_whitespace();
        let kind = head.next().unwrap_or_default();
        let kv: HashMap<&str, &str> = head.filter_map(|t| t.split_once('=')).collect();
        let get = |key: &str| kv.get(key).copied().ok_or_else(|| err(0, format!("missing header field {key}")));
        match kind {
            "random" => {
                let seed = get("seed")?.parse().map_err(|_| err(0, "bad seed".into()))?;
                let mut items = BTreeSet::new();
                for (n, l) in lines {
                    match l.split_whitespace().collect::<Vec<_>>()[..] {
                        ["item", id] => {
                            items.insert(id.to_string());
                        }
                        _ => return Err(err(n, format!("unexpected line {l:?}"))),
                    }
                }
                Ok(Baseline::Random(RandomModel { seed, items }))
            }
            "pop" => {
                let mut count = BTreeMap::new();
                for (n, l) in lines {
                    match l.split_whitespace().collect::<Vec<_>>()[..] {
                        ["item", id, c] => {
                            count.insert(id.to_string(), c.parse().map_err(|_| err(n, format!("bad count {c:?}")))?);
                        }
                        _ => return Err(err(n, format!("unexpected line {l:?}"))),
                    }
                }
                Ok(Baseline::Pop(PopModel { count }))
            }
            "bpr" => {
                let parse_f = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| err(0, format!("bad {k}"))) };
                let parse_u = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| err(0, format!("bad {k}"))) };
                let params = BprParams {
                    dim: parse_u("d")? as usize,
                    learning_rate: parse_f("learning_rate")?,
                    reg: parse_f("reg")?,
                    epochs: parse_u("epochs")? as usize,
                    seed: parse_u("seed")?,
                };
                let mut users = Vec::new();
                let mut items = Vec::new();
                for (n, l) in lines {
                    let mut toks = l.split_whitespace();
                    let which = toks.next();
                    let id = toks.next().ok_or_else(|| err(n, "missing id".into()))?.to_string();
                    let v: Vec<f64> = toks
                        .map(|t| t.parse::<f64>().map_err(|_| err(n, format!("bad factor {t:?}"))))
                        .collect::<Result<_>>()?;
                    if v.len() != params.dim {
                        return Err(err(n, format!("expected {} factors, found {}", params.dim, v.len())));
                    }
                    match which {
                        Some("user") => users.push((id, v)),
                        Some("item") => items.push((id, v)),
                        _ => return Err(err(n, format!("unexpected line {l:?}"))),
                    }
                }
                Ok(Baseline::Bpr(BprModel::from_factors(params, users, items)?))
            }
            other => Err(err(0, format!("unknown model type {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ix(u: &str, i: &str) -> Interaction {
        Interaction::new(u, i, Some(5.0), 0)
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pop_counts_and_ranking() {
        assert!(fit_pop(&[]).count.is_empty());
        let mut data = Vec::new();
        data.extend((0..5).map(|_| ix("u", "A")));
        data.extend((0..3).map(|_| ix("u", "B")));
        data.extend((0..3).map(|_| ix("v", "C")));
        let pop = fit_pop(&data);
        assert_eq!(pop.count("A"), 5);
        assert_eq!(pop.count("B"), 3);
        let mut rev = data.clone();
        rev.reverse();
        assert_eq!(fit_pop(&rev), pop);
        let m = Baseline::Pop(pop);
        assert_eq!(m.score("u", "A"), 5.0);
        assert_eq!(m.rank_candidates("u", &ids(&["B", "C", "A"]), 0), ids(&["A", "B", "C"]));
    }

    #[test]
    fn pop_recall_respects_exclusions() {
        let pop = PopModel {
            count: [("A", 5), ("B", 3), ("C", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        let m = Baseline::Pop(pop);
        assert_eq!(m.recall_top_k("u", 2, &HashSet::new()), ids(&["A", "B"]));
        assert_eq!(m.recall_top_k("u", 2, &HashSet::from(["A"])), ids(&["B", "C"]));
        assert_eq!(m.recall_top_k("u", 10, &HashSet::new()).len(), 3);
    }

    #[test]
    fn equal_scores_fall_back_to_item_id() {
        let m = Baseline::Pop(PopModel::default());
        assert_eq!(m.rank_candidates("u", &ids(&["c", "a", "b"]), 0), ids(&["a", "b", "c"]));
    }

    #[test]
    fn random_ranking_is_seeded() {
        let m = Baseline::Random(fit_random(&[ix("u", "a")], 3));
        let cands = ids(&["a", "b", "c", "d", "e", "f", "g"]);
        assert_eq!(m.rank_candidates("u", &cands, 11), m.rank_candidates("u", &cands, 11));
        let s = m.score("u", "a");
        assert!((0.0..1.0).contains(&s));
    }

    #[test]
    fn bpr_scoring() {
        let params = BprParams { dim: 2, ..Default::default() };
        let m = BprModel::from_factors(
            params,
            vec![("u".into(), vec![1.0, 2.0]), ("z".into(), vec![0.0, 0.0])],
            vec![("i".into(), vec![3.0, -1.0])],
        )
        .unwrap();
        let b = Baseline::Bpr(m);
        assert_eq!(b.score("u", "i"), 1.0);
        assert_eq!(b.score("z", "i"), 0.0);
        assert_eq!(b.score("nobody", "i"), 0.0);
        assert_eq!(b.score("u", "unknown"), 0.0);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let data = vec![ix("u1", "a"), ix("u1", "b"), ix("u2", "c")];
        let params = BprParams {
            dim: 3,
            epochs: 0,
            seed: 5,
            ..Default::default()
        };
        let m = fit_bpr(&data, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 0.1 / 3f64.sqrt()).unwrap();
        let expected_users: Vec<f64> = (0..6).map(|_| normal.sample(&mut rng)).collect();
        let expected_items: Vec<f64> = (0..9).map(|_| normal.sample(&mut rng)).collect();
        assert_eq!(m.user_vector("u1").unwrap(), &expected_users[0..3]);
        assert_eq!(m.user_vector("u2").unwrap(), &expected_users[3..6]);
        assert_eq!(m.item_vector("c").unwrap(), &expected_items[6..9]);
    }

    #[test]
    fn one_step_matches_hand_calculation() {
        // p=(0.1,0.2), q_i=(0.3,-0.1), q_j=(-0.2,0.4), lr=0.1, reg=0.01
        // x = (0.03-0.02) - (-0.02+0.08) = -0.05, g = σ(0.05) = 0.5124973964842103
        let mut p = [0.1, 0.2];
        let mut qi = [0.3, -0.1];
        let mut qj = [-0.2, 0.4];
        sgd_step(&mut p, &mut qi, &mut qj, 0.1, 0.01);
        let g = 0.512_497_396_484_210_3_f64;
        let expect_p = [0.1 + 0.1 * (g * 0.5 - 0.01 * 0.1), 0.2 + 0.1 * (g * -0.5 - 0.01 * 0.2)];
        let expect_qi = [0.3 + 0.1 * (g * 0.1 - 0.01 * 0.3), -0.1 + 0.1 * (g * 0.2 + 0.01 * 0.1)];
        let expect_qj = [-0.2 + 0.1 * (-g * 0.1 + 0.01 * 0.2), 0.4 + 0.1 * (-g * 0.2 - 0.01 * 0.4)];
        for (a, b) in p.iter().zip(expect_p).chain(qi.iter().zip(expect_qi)).chain(qj.iter().zip(expect_qj)) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn fitting_is_reproducible_and_rejects_bad_params() {
        let data: Vec<Interaction> = (0..20).map(|k| ix(&format!("u{}", k % 4), &format!("i{}", k % 7))).collect();
        let params = BprParams {
            dim: 4,
            epochs: 5,
            ..Default::default()
        };
        assert_eq!(fit_bpr(&data, params).unwrap(), fit_bpr(&data, params).unwrap());
        assert!(fit_bpr(&data, BprParams { dim: 0, ..params }).is_err());
        assert!(fit_bpr(&data, BprParams { learning_rate: 0.0, ..params }).is_err());
        assert!(fit_bpr(&data, BprParams { reg: -1.0, ..params }).is_err());
    }

    #[test]
    fn checkpoints_round_trip() {
        let data: Vec<Interaction> = (0..20).map(|k| ix(&format!("u{}", k % 4), &format!("i{}", k % 7))).collect();
        let params = BprParams {
            dim: 3,
            epochs: 2,
            ..Default::default()
        };
        for model in [
            Baseline::Bpr(fit_bpr(&data, params).unwrap()),
            Baseline::Pop(fit_pop(&data)),
            Baseline::Random(fit_random(&data, 9)),
        ] {
            let text = model.to_checkpoint();
            assert_eq!(Baseline::from_checkpoint(&text).unwrap(), model);
        }
        assert!(Baseline::from_checkpoint("bpr d=2 learning_rate=0.1 reg=0 epochs=1 seed=1\nuser u 1.0\n").is_err());
        assert!(Baseline::from_checkpoint("svd\n").is_err());
    }

    proptest! {
        #[test]
        fn ranking_is_a_permutation(counts in proptest::collection::vec(0u64..5, 1..15), seed in any::<u64>()) {
            let pop = PopModel { count: counts.iter().enumerate().map(|(k, c)| (format!("i{k}"), *c)).collect() };
            let cands: Vec<String> = (0..counts.len()).map(|k| format!("i{k}")).collect();
            for m in [Baseline::Pop(pop.clone()), Baseline::Random(RandomModel { seed, items: BTreeSet::new() })] {
                let mut ranked = m.rank_candidates("u", &cands, seed);
                ranked.sort();
                let mut sorted = cands.clone();
                sorted.sort();
                prop_assert_eq!(ranked, sorted);
            }
        }

        #[test]
        fn pop_ranking_invariant_under_monotone_transform(counts in proptest::collection::vec(0u64..50, 1..15)) {
            let pop = PopModel { count: counts.iter().enumerate().map(|(k, c)| (format!("i{k}"), *c)).collect() };
            let squared = PopModel { count: pop.count.iter().map(|(k, c)| (k.clone(), c * c + 3)).collect() };
            let cands: Vec<String> = (0..counts.len()).map(|k| format!("i{k}")).collect();
            prop_assert_eq!(
                Baseline::Pop(pop).rank_candidates("u", &cands, 0),
                Baseline::Pop(squared).rank_candidates("u", &cands, 0)
            );
        }
    }
}
