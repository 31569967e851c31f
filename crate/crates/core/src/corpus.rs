//! Dataset ingestion and the evaluation splits built on top of it.
//!
//! Raw MovieLens-1M (`::`-separated `.dat`) and Amazon review dumps (JSON
//! Lines) are normalized into [`Interaction`]s plus a [`Catalog`]. From there
//! the module builds chronological [`UserHistory`]s, leave-one-out
//! [`EvalInstance`]s and the time-ordered CTR window ([`CtrDataset`]).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: rating {rating} outside [1, 5]")]
    RatingOutOfRange { path: PathBuf, line: usize, rating: f64 },
    #[error("requested {requested} users but only {eligible} have at least {min_history_len} interactions")]
    TooFewUsers {
        requested: usize,
        eligible: usize,
        min_history_len: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One (user, item, rating, time) event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    /// Explicit rating in [1, 5]; `None` for implicit feedback.
    pub rating: Option<f64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, rating: Option<f64>, timestamp: u64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub title: String,
    /// Ordered attributes such as `year`, `genre`, `categories`, `brand`, `price`.
    #[serde(default)]
    pub attributes: IndexMap<String, String>,
    #[serde(default)]
    pub description: Option<String>,
}

impl ItemRecord {
    pub fn new(item_id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            title: title.into(),
            attributes: IndexMap::new(),
            description: None,
        }
    }

    /// `title (key: value; key: value)`, or just the title without attributes.
    pub fn title_with_attributes(&self) -> String {
        if self.attributes.is_empty() {
            return self.title.clone();
        }
        let attrs: Vec<String> = self.attributes.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        format!("{} ({})", self.title, attrs.join("; "))
    }
}

/// Item metadata keyed by item id, iterated in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    items: BTreeMap<String, ItemRecord>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert unless the id is already present. Returns false on duplicates.
    pub fn insert(&mut self, item: ItemRecord) -> bool {
        if self.items.contains_key(&item.item_id) {
            return false;
        }
        self.items.insert(item.item_id.clone(), item);
        true
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.items.get(item_id)
    }

    pub fn get_mut(&mut self, item_id: &str) -> Option<&mut ItemRecord> {
        self.items.get_mut(item_id)
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.items.contains_key(item_id)
    }

    /// Title of an item; unknown ids render as the id itself.
    pub fn title<'a>(&'a self, item_id: &'a str) -> &'a str {
        self.items.get(item_id).map(|i| i.title.as_str()).unwrap_or(item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ItemRecord> {
        self.items.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&ItemRecord) -> bool) {
        self.items.retain(|_, v| keep(v));
    }
}

impl FromIterator<ItemRecord> for Catalog {
    fn from_iter<T: IntoIterator<Item = ItemRecord>>(iter: T) -> Self {
        let mut c = Catalog::new();
        for item in iter {
            c.insert(item);
        }
        c
    }
}

/// A user's interactions sorted by (timestamp, item_id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub interactions: Vec<Interaction>,
}

impl UserHistory {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.interactions.iter().map(|i| i.item_id.as_str())
    }

    /// The last `n` interactions (all of them if fewer), oldest first.
    pub fn recent(&self, n: usize) -> &[Interaction] {
        let start = self.interactions.len().saturating_sub(n);
        &self.interactions[start..]
    }
}

/// Leave-one-out instance: everything but the last interaction is input, the
/// last interaction's item is the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub user_id: String,
    pub prefix: UserHistory,
    pub ground_truth: String,
}

impl EvalInstance {
    /// `None` when the history has fewer than two interactions.
    pub fn leave_one_out(history: &UserHistory) -> Option<Self> {
        if history.len() < 2 {
            return None;
        }
        let (last, rest) = history.interactions.split_last()?;
        Some(Self {
            user_id: history.user_id.clone(),
            prefix: UserHistory {
                user_id: history.user_id.clone(),
                interactions: rest.to_vec(),
            },
            ground_truth: last.item_id.clone(),
        })
    }

    pub fn seen_items(&self) -> HashSet<&str> {
        self.prefix.item_ids().collect()
    }
}

fn read_lines_latin1_tolerant(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for raw in bytes.split(|&b| b == b'\n') {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = match std::str::from_utf8(raw) {
            Ok(s) => s.to_owned(),
            Err(_) => raw.iter().map(|&b| b as char).collect(),
        };
        out.push(line);
    }
    // split yields a trailing empty piece after the final newline
    if out.last().is_some_and(String::is_empty) {
        out.pop();
    }
    Ok(out)
}

fn check_rating(path: &Path, line: usize, rating: f64) -> Result<f64> {
    if !(1.0..=5.0).contains(&rating) {
        return Err(CorpusError::RatingOutOfRange {
            path: path.to_path_buf(),
            line,
            rating,
        });
    }
    Ok(rating)
}

/// Parse one `UserID::MovieID::Rating::Timestamp` line.
pub fn parse_movielens_rating(line: &str) -> std::result::Result<Interaction, String> {
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 `::`-separated fields, found {}", fields.len()));
    }
    let rating: f64 = fields[2].trim().parse().map_err(|_| format!("bad rating {:?}", fields[2]))?;
    let timestamp: u64 = fields[3].trim().parse().map_err(|_| format!("bad timestamp {:?}", fields[3]))?;
    let user = fields[0].trim();
    let item = fields[1].trim();
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    Ok(Interaction::new(user, item, Some(rating), timestamp))
}

/// Parse one `MovieID::Title::Genres` line. The release year comes from a
/// trailing `(YYYY)` in the title and is omitted when absent.
pub fn parse_movielens_movie(line: &str) -> std::result::Result<ItemRecord, String> {
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 `::`-separated fields, found {}", fields.len()));
    }
    let title = fields[1].trim();
    if title.is_empty() {
        return Err("empty title".into());
    }
    let mut item = ItemRecord::new(fields[0].trim(), title);
    let year_re = Regex::new(r"\((\d{4})\)\s*$").expect("static regex");
    if let Some(c) = year_re.captures(title) {
        item.attributes.insert("year".into(), c[1].to_string());
    }
    let genres: Vec<&str> = fields[2].split('|').map(str::trim).filter(|g| !g.is_empty()).collect();
    if !genres.is_empty() {
        item.attributes.insert("genre".into(), genres.join(", "));
    }
    Ok(item)
}

/// Load MovieLens-1M `ratings.dat` and `movies.dat`.
pub fn load_movielens(ratings_path: &Path, movies_path: &Path) -> Result<(Vec<Interaction>, Catalog)> {
    let mut catalog = Catalog::new();
    for (i, line) in read_lines_latin1_tolerant(movies_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_movielens_movie(line).map_err(|message| CorpusError::Parse {
            path: movies_path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        if !catalog.insert(item) {
            log::warn!("{}:{}: duplicate movie id, keeping first", movies_path.display(), i + 1);
        }
    }

    let mut interactions = Vec::new();
    for (i, line) in read_lines_latin1_tolerant(ratings_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let it = parse_movielens_rating(line).map_err(|message| CorpusError::Parse {
            path: ratings_path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        check_rating(ratings_path, i + 1, it.rating.unwrap_or(0.0))?;
        interactions.push(it);
    }
    Ok((interactions, catalog))
}

fn json_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => {
            let s = s.trim();
            (!s.is_empty()).then(|| s.to_string())
        }
        Value::Array(xs) => {
            let parts: Vec<String> = xs.iter().filter_map(json_text).collect();
            (!parts.is_empty()).then(|| parts.join(" "))
        }
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn json_list(v: &Value, sep: &str) -> Option<String> {
    match v {
        Value::Array(xs) => {
            let parts: Vec<String> = xs.iter().filter_map(json_text).collect();
            (!parts.is_empty()).then(|| parts.join(sep))
        }
        other => json_text(other),
    }
}

fn parse_json_line(path: &Path, line_no: usize, line: &str) -> Result<Value> {
    serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: format!("invalid JSON: {e}"),
    })
}

/// Load Amazon review and metadata JSON Lines.
///
/// Items whose metadata lacks a non-empty title or description are dropped,
/// together with every review that points at them.
pub fn load_amazon_books(reviews_path: &Path, meta_path: &Path) -> Result<(Vec<Interaction>, Catalog)> {
    let mut catalog = Catalog::new();
    let mut dropped = 0usize;
    let mut seen_asins = HashSet::new();
    for (i, line) in read_lines_latin1_tolerant(meta_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_json_line(meta_path, i + 1, line)?;
        let asin = v.get("asin").and_then(json_text).ok_or_else(|| CorpusError::Parse {
            path: meta_path.to_path_buf(),
            line: i + 1,
            message: "missing asin".into(),
        })?;
        if !seen_asins.insert(asin.clone()) {
            log::warn!("{}:{}: duplicate asin {asin}, keeping first", meta_path.display(), i + 1);
            continue;
        }
        let title = v.get("title").and_then(json_text);
        let description = v.get("description").and_then(json_text);
        let (Some(title), Some(description)) = (title, description) else {
            dropped += 1;
            continue;
        };
        let mut item = ItemRecord::new(asin, title);
        if let Some(c) = v.get("category").and_then(|c| json_list(c, ", ")) {
            item.attributes.insert("categories".into(), c);
        }
        if let Some(b) = v.get("brand").and_then(json_text) {
            item.attributes.insert("brand".into(), b);
        }
        if let Some(p) = v.get("price").and_then(json_text) {
            item.attributes.insert("price".into(), p);
        }
        item.description = Some(description);
        catalog.insert(item);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} items without a title or description");
    }

    let field = |v: &Value, name: &str, line: usize| -> Result<Value> {
        v.get(name).cloned().ok_or_else(|| CorpusError::Parse {
            path: reviews_path.to_path_buf(),
            line,
            message: format!("missing field {name}"),
        })
    };
    let mut interactions = Vec::new();
    for (i, line) in read_lines_latin1_tolerant(reviews_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let v = parse_json_line(reviews_path, line_no, line)?;
        let bad = |message: String| CorpusError::Parse {
            path: reviews_path.to_path_buf(),
            line: line_no,
            message,
        };
        let user = json_text(&field(&v, "reviewerID", line_no)?).ok_or_else(|| bad("empty reviewerID".into()))?;
        let asin = json_text(&field(&v, "asin", line_no)?).ok_or_else(|| bad("empty asin".into()))?;
        let rating = field(&v, "overall", line_no)?.as_f64().ok_or_else(|| bad("overall is not a number".into()))?;
        let ts = field(&v, "unixReviewTime", line_no)?
            .as_u64()
            .ok_or_else(|| bad("unixReviewTime is not a non-negative integer".into()))?;
        check_rating(reviews_path, line_no, rating)?;
        if !catalog.contains(&asin) {
            continue;
        }
        interactions.push(Interaction::new(user, asin, Some(rating), ts));
    }
    Ok((interactions, catalog))
}

/// Iteratively drop users and items below the given interaction counts until
/// a fixed point is reached. Input order is preserved.
pub fn filter_k_core(interactions: &[Interaction], min_user_interactions: usize, min_item_interactions: usize) -> Vec<Interaction> {
    let mut current: Vec<Interaction> = interactions.to_vec();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for it in &current {
            *users.entry(&it.user_id).or_default() += 1;
            *items.entry(&it.item_id).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|it| users[it.user_id.as_str()] >= min_user_interactions && items[it.item_id.as_str()] >= min_item_interactions)
            .collect();
        if keep.iter().all(|&k| k) {
            return current;
        }
        let mut flags = keep.into_iter();
        current.retain(|_| flags.next().unwrap_or(false));
    }
}

/// Group interactions per user, sort each history by (timestamp, item_id) and
/// drop repeated (item, timestamp) events, keeping the first seen.
pub fn build_histories(interactions: &[Interaction]) -> BTreeMap<String, UserHistory> {
    let mut grouped: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
    for it in interactions {
        grouped.entry(it.user_id.clone()).or_default().push(it.clone());
    }
    grouped
        .into_iter()
        .map(|(user_id, mut events)| {
            events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.item_id.cmp(&b.item_id)));
            events.dedup_by(|b, a| a.item_id == b.item_id && a.timestamp == b.timestamp);
            (user_id.clone(), UserHistory { user_id, interactions: events })
        })
        .collect()
}

pub const DEFAULT_MIN_HISTORY_LEN: usize = 11;

/// Uniformly sample `n` users (without replacement) among those with at
/// least `min_history_len` interactions and build their leave-one-out
/// instances. The sample order is determined by `seed`.
pub fn sample_users(histories: &BTreeMap<String, UserHistory>, n: usize, seed: u64, min_history_len: usize) -> Result<Vec<EvalInstance>> {
    let min_len = min_history_len.max(2);
    let eligible: Vec<&UserHistory> = histories.values().filter(|h| h.len() >= min_len).collect();
    if n > eligible.len() {
        return Err(CorpusError::TooFewUsers {
            requested: n,
            eligible: eligible.len(),
            min_history_len: min_len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, eligible.len(), n);
    Ok(picked
        .into_iter()
        .map(|i| EvalInstance::leave_one_out(eligible[i]).expect("eligible histories have >= 2 events"))
        .collect())
}

/// Train/valid/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio(pub u32, pub u32, pub u32);

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio(8, 1, 1)
    }
}

impl SplitRatio {
    /// Floor the train and valid shares; the remainder goes to test.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let total = (self.0 + self.1 + self.2) as usize;
        let train = n * self.0 as usize / total;
        let valid = n * self.1 as usize / total;
        [train, valid, n - train - valid]
    }
}

/// One interaction of the CTR window with its label and preceding context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrRecord {
    pub interaction: Interaction,
    pub label: bool,
    /// Up to `history_len` interactions strictly earlier than the target.
    pub context: Vec<Interaction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub split: String,
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrDataset {
    pub train: Vec<CtrRecord>,
    pub valid: Vec<CtrRecord>,
    pub test: Vec<CtrRecord>,
    pub threshold: f64,
    pub history_len: usize,
    /// Number of records taken from the end of the timeline.
    pub window: usize,
    /// Split sizes of the window before skipping.
    pub window_split: [usize; 3],
    pub skipped: Vec<SkippedSample>,
    /// Records whose rating was absent and were labelled positive.
    pub implicit_labels: usize,
}

impl CtrDataset {
    pub fn skip_report(&self) -> String {
        let mut out = format!("skipped {} of {} window records\n", self.skipped.len(), self.window);
        for s in &self.skipped {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", s.split, s.user_id, s.item_id, s.timestamp, s.reason));
        }
        out
    }
}

pub const MOVIELENS_THRESHOLD: f64 = 4.0;
pub const AMAZON_BOOKS_THRESHOLD: f64 = 5.0;

/// Take the `latest_n` newest interactions, split them 8:1:1 in time order
/// and attach labels (`rating >= threshold`) and per-user context.
pub fn ctr_split(histories: &BTreeMap<String, UserHistory>, latest_n: usize, ratio: SplitRatio, threshold: f64, history_len: usize) -> Result<CtrDataset> {
    let mut all: Vec<(&UserHistory, usize)> = histories.values().flat_map(|h| (0..h.len()).map(move |i| (h, i))).collect();
    if latest_n > all.len() {
        return Err(CorpusError::InvalidArgument(format!(
            "latest_n = {latest_n} exceeds the {} available interactions",
            all.len()
        )));
    }
    if ratio.0 + ratio.1 + ratio.2 == 0 {
        return Err(CorpusError::InvalidArgument("split ratio sums to zero".into()));
    }
    all.sort_by(|(ha, ia), (hb, ib)| {
        let a = &ha.interactions[*ia];
        let b = &hb.interactions[*ib];
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.user_id.cmp(&b.user_id))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    let window = &all[all.len() - latest_n..];
    let sizes = ratio.sizes(latest_n);

    let mut splits: [Vec<CtrRecord>; 3] = Default::default();
    let mut skipped = Vec::new();
    let mut implicit_labels = 0;
    let names = ["train", "valid", "test"];
    let mut offset = 0;
    for (s, &size) in sizes.iter().enumerate() {
        for &(hist, pos) in &window[offset..offset + size] {
            let target = &hist.interactions[pos];
            let earlier: Vec<&Interaction> = hist.interactions[..pos].iter().filter(|p| p.timestamp < target.timestamp).collect();
            if earlier.is_empty() {
                skipped.push(SkippedSample {
                    split: names[s].into(),
                    user_id: target.user_id.clone(),
                    item_id: target.item_id.clone(),
                    timestamp: target.timestamp,
                    reason: "no preceding history".into(),
                });
                continue;
            }
            let start = earlier.len().saturating_sub(history_len);
            let label = match target.rating {
                Some(r) => r >= threshold,
                None => {
                    implicit_labels += 1;
                    true
                }
            };
            splits[s].push(CtrRecord {
                interaction: target.clone(),
                label,
                context: earlier[start..].iter().map(|&i| i.clone()).collect(),
            });
        }
        offset += size;
    }
    let [train, valid, test] = splits;
    Ok(CtrDataset {
        train,
        valid,
        test,
        threshold,
        history_len,
        window: latest_n,
        window_split: sizes,
        skipped,
        implicit_labels,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(&row).expect("corpus rows serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Normalized corpus cache: one interaction per line.
pub fn write_interactions_jsonl(path: &Path, interactions: &[Interaction]) -> Result<()> {
    write_jsonl(path, interactions)
}

pub fn read_interactions_jsonl(path: &Path) -> Result<Vec<Interaction>> {
    read_jsonl(path)
}

pub fn write_catalog_jsonl(path: &Path, catalog: &Catalog) -> Result<()> {
    write_jsonl(path, catalog.iter())
}

pub fn read_catalog_jsonl(path: &Path) -> Result<Catalog> {
    let items: Vec<ItemRecord> = read_jsonl(path)?;
    let mut catalog = Catalog::new();
    for (i, item) in items.into_iter().enumerate() {
        if item.title.trim().is_empty() {
            return Err(CorpusError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty title".into(),
            });
        }
        catalog.insert(item);
    }
    Ok(catalog)
}

#[derive(Debug, Deserialize)]
struct DescriptionRow {
    item_id: String,
    description: String,
}

/// Attach descriptions from an `(item_id, description)` JSON Lines file.
/// Returns how many catalog items were updated.
pub fn apply_descriptions(catalog: &mut Catalog, path: &Path) -> Result<usize> {
    let rows: Vec<DescriptionRow> = read_jsonl(path)?;
    let mut updated = 0;
    for row in rows {
        if let Some(item) = catalog.get_mut(&row.item_id) {
            item.description = Some(row.description);
            updated += 1;
        }
    }
    Ok(updated)
}

/// Order-independent content hash of a corpus.
pub fn corpus_hash(interactions: &[Interaction], catalog: &Catalog) -> String {
    let mut rows: Vec<String> = interactions.iter().map(|i| serde_json::to_string(i).expect("serializable")).collect();
    rows.sort();
    let mut buf = rows.join("\n");
    for item in catalog.iter() {
        buf.push('\n');
        buf.push_str(&serde_json::to_string(item).expect("serializable"));
    }
    crate::hashing::short_hash(buf.as_bytes())
}
