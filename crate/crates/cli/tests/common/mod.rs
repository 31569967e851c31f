//! Synthetic corpora and config files shared by the cli test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use llmrec::corpus::{write_catalog_jsonl, write_interactions_jsonl, Catalog, Interaction, ItemRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Distinct, non-overlapping titles so grounding is unambiguous.
pub fn item_title(i: usize) -> String {
    const WORDS: [&str; 10] = ["Amber", "Birch", "Cobalt", "Dune", "Ember", "Fjord", "Granite", "Harbor", "Iris", "Juniper"];
    format!("{} {} Chronicle {i}", WORDS[i % 10], WORDS[(i / 10) % 10])
}

pub fn catalog(items: usize) -> Catalog {
    (0..items)
        .map(|i| {
            let mut r = ItemRecord::new(format!("i{i}"), item_title(i));
            r.attributes.insert("year".into(), (1980 + i % 40).to_string());
            r
        })
        .collect()
}

/// `users` users each rating `per_user` distinct random items at strictly
/// increasing timestamps.
pub fn interactions(users: usize, items: usize, per_user: usize, seed: u64) -> Vec<Interaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(users * per_user);
    let mut ts = 1_000_000u64;
    for u in 0..users {
        let mut ids: Vec<usize> = (0..items).collect();
        ids.shuffle(&mut rng);
        for &i in ids.iter().take(per_user) {
            ts += 1 + rng.random_range(0..5);
            out.push(Interaction::new(format!("u{u}"), format!("i{i}"), Some(rng.random_range(1..=5) as f64), ts));
        }
    }
    out
}

/// Write a jsonl corpus and a config using it into `dir`; returns the config path.
pub fn write_fixture(dir: &Path, users: usize, items: usize, per_user: usize, extra: Value) -> PathBuf {
    write_interactions_jsonl(&dir.join("interactions.jsonl"), &interactions(users, items, per_user, 7)).unwrap();
    write_catalog_jsonl(&dir.join("items.jsonl"), &catalog(items)).unwrap();
    let mut cfg = json!({
        "dataset": { "kind": "jsonl", "interactions": "interactions.jsonl", "items": "items.jsonl" },
        "sample": { "users": users, "seed": 42, "repeats": 3 },
        "llm": { "mock": "echo" },
        "ctr": { "window": users * per_user / 2 },
        "output": { "dir": "out" }
    });
    merge(&mut cfg, extra);
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

/// Run the cli in-process, returning (exit code, stdout).
pub fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("llmrec").chain(args.iter().copied());
    let code = llmrec_cli::run_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}
