use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, Completion, Llm, Message, Result};
use crate::hashing::sha256_hex;

/// One request/response pair as written to the audit log. Responses are kept
/// verbatim, malformed or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub llm: String,
    pub request: Vec<Message>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub latency_ms: f64,
    pub attempts: u32,
}

/// Append-only JSON Lines log; every record is flushed and synced before
/// `record` returns.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, exchange: &LlmExchange) -> Result<()> {
        let mut line = serde_json::to_string(exchange).expect("exchange serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("audit lock");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        f.sync_data()?;
        Ok(())
    }

    pub fn read_all(path: &Path) -> Result<Vec<LlmExchange>> {
        let text = fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| super::LlmError::InvalidResponse(e.to_string())))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    llm: String,
    response: String,
}

/// Content-addressed response cache in front of another model. Keys hash the
/// model name and the full conversation; entries are written atomically.
pub struct CachedLlm<L> {
    inner: L,
    dir: PathBuf,
    bypass: bool,
}

impl<L: Llm> CachedLlm<L> {
    pub fn new(inner: L, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            bypass: false,
        }
    }

    /// Skip cache reads (writes still happen). Used for repeated runs at
    /// non-zero temperature.
    pub fn bypass(mut self, yes: bool) -> Self {
        self.bypass = yes;
        self
    }

    pub fn key(&self, request: &ChatRequest) -> String {
        sha256_hex(format!("{}\n{}", self.inner.name(), request.transcript()).as_bytes())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn lookup(&self, request: &ChatRequest) -> Option<String> {
        let text = fs::read_to_string(self.path_for(&self.key(request))).ok()?;
        serde_json::from_str::<CacheEntry>(&text).ok().map(|e| e.response)
    }

    fn store(&self, request: &ChatRequest, response: &str) -> Result<()> {
        let path = self.path_for(&self.key(request));
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let entry = CacheEntry {
            llm: self.inner.name(),
            response: response.to_owned(),
        };
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(serde_json::to_string(&entry).expect("entry serializes").as_bytes())?;
        tmp.1.sync_data()?;
        fs::rename(&tmp.0, &path)?;
        Ok(())
    }
}

fn tempfile_in(dir: &Path) -> std::io::Result<(PathBuf, File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
    let file = File::create(&path)?;
    Ok((path, file))
}

impl<L: Llm> Llm for CachedLlm<L> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        if !self.bypass {
            if let Some(text) = self.lookup(request) {
                return Ok(Completion {
                    cached: true,
                    ..Completion::immediate(text)
                });
            }
        }
        let out = self.inner.complete(request)?;
        self.store(request, &out.text)?;
        Ok(out)
    }

    fn is_mock(&self) -> bool {
        self.inner.is_mock()
    }
}
