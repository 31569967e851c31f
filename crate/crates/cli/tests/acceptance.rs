//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Set `LLMREC_BLESS_GOLDENS=1` to
//! rewrite the prompt goldens after an intended wording change.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use llmrec::baselines::{fit_bpr, pairwise_gradient, pairwise_objective, sgd_step, Baseline, BprParams};
use llmrec::candidates::{build_random_candidates, ground_output, render_identifiers, CandidateSet, IdentifierScheme};
use llmrec::corpus::{build_histories, ctr_split, sample_users, Catalog, EvalInstance, Interaction, ItemRecord, SplitRatio, UserHistory};
use llmrec::ctr::{build_ctr_samples, export_finetune_jsonl, run_ctr_eval, ContextItem, CtrSample, FINETUNE_SCHEMA};
use llmrec::evaluator::{ndcg_at_k, position_bias_probe, run_ranking_eval, CandidateSource, MetricsReport, Pipeline};
use llmrec::interest::{
    build_global_memory, build_personalized_memory, memory_reflect, render_interest, retrieve_from_memory, GenerationCache, InterestConfig, InterestContext,
    InterestForm, InterestMemory, MemoryEntry, MemoryKey, MemoryScope, RetrievalSource,
};
use llmrec::llmio::{make_mock, ChatRequest, Completion, Embedder, Embedding, HashEmbedder, Llm, MockKind};
use llmrec::prompting::{render_ctr_prompt, render_ranking_prompt, select_demonstration, CtrPromptStyle, IclMode, ItemDomain, PromptConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "ndcg matches brute-force DCG/IDCG",
            limit: Some(Duration::from_secs(1)),
            check: metric_oracle,
        },
        Criterion {
            id: 2,
            name: "echo ranker hits the random expectation",
            limit: Some(Duration::from_secs(30)),
            check: random_expectation,
        },
        Criterion {
            id: 3,
            name: "oracle pipeline scores 1.0",
            limit: None,
            check: oracle_pipeline,
        },
        Criterion {
            id: 4,
            name: "grounding round trip, fuzz and truncation",
            limit: None,
            check: grounding,
        },
        Criterion {
            id: 5,
            name: "bpr gradients and two-block ordering",
            limit: Some(Duration::from_secs(60)),
            check: bpr,
        },
        Criterion {
            id: 6,
            name: "position-bias probe",
            limit: None,
            check: position_bias,
        },
        Criterion {
            id: 7,
            name: "degenerate ctr classifiers",
            limit: None,
            check: ctr_degenerate,
        },
        Criterion {
            id: 8,
            name: "sampling and repeat protocol",
            limit: None,
            check: protocol,
        },
        Criterion {
            id: 9,
            name: "prompt goldens and toggle locality",
            limit: None,
            check: goldens,
        },
        Criterion {
            id: 10,
            name: "interest-form dispatch and retrieval",
            limit: None,
            check: interest_dispatch,
        },
        Criterion {
            id: 11,
            name: "fine-tune export",
            limit: None,
            check: export,
        },
        Criterion {
            id: 12,
            name: "end-to-end determinism",
            limit: None,
            check: determinism,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(c.check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(d), Some(limit)) if took > limit => Err(format!("{d}; took {took:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("criterion {:>2}: PASS {} ({detail}) [{took:.2?}]", c.id, c.name),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2}: FAIL {} ({detail}) [{took:.2?}]", c.id, c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fixtures

/// Leave-one-out instances of every user in a synthetic corpus.
fn instances(users: usize, items: usize, per_user: usize, seed: u64) -> (Catalog, Vec<EvalInstance>, Vec<String>) {
    let catalog = common::catalog(items);
    let histories = build_histories(&common::interactions(users, items, per_user, seed));
    let inst: Vec<EvalInstance> = histories.values().filter_map(EvalInstance::leave_one_out).collect();
    let pool = catalog.ids().map(str::to_owned).collect();
    (catalog, inst, pool)
}

struct World {
    catalog: Catalog,
    instances: Vec<EvalInstance>,
    pool: Vec<String>,
    global: InterestMemory,
    personal: InterestMemory,
    cache: GenerationCache,
    embedder: HashEmbedder,
}

impl World {
    fn new(users: usize, items: usize, per_user: usize, seed: u64) -> Self {
        let (catalog, instances, pool) = instances(users, items, per_user, seed);
        let embedder = HashEmbedder::default();
        let cache = GenerationCache::in_memory();
        let echo = make_mock(MockKind::Echo);
        let global = build_global_memory(&catalog, &embedder).unwrap();
        let (mut personal, _) = build_personalized_memory(instances.iter().map(|i| &i.prefix), &catalog, &echo, &embedder, &cache, ItemDomain::Movies).unwrap();
        // half the users get a stored profile, the rest reflect on the fly
        for inst in instances.iter().step_by(2) {
            memory_reflect(&mut personal, &inst.user_id, &echo, &embedder, &cache, ItemDomain::Movies).unwrap();
        }
        Self {
            catalog,
            instances,
            pool,
            global,
            personal,
            cache,
            embedder,
        }
    }

    fn pipeline<'a>(&'a self, interest: &'a InterestConfig, prompt: &'a PromptConfig, llm: &'a dyn Llm) -> Pipeline<'a> {
        Pipeline {
            catalog: &self.catalog,
            interest,
            global_memory: Some(&self.global),
            personal_memory: Some(&self.personal),
            generation_cache: &self.cache,
            candidates: CandidateSource::Random { pool: &self.pool },
            k: 20,
            prompt,
            llm,
            embedder: &self.embedder,
        }
    }
}

fn plain_pipeline<'a>(
    catalog: &'a Catalog,
    pool: &'a [String],
    interest: &'a InterestConfig,
    prompt: &'a PromptConfig,
    cache: &'a GenerationCache,
    llm: &'a dyn Llm,
    embedder: &'a dyn Embedder,
) -> Pipeline<'a> {
    Pipeline {
        catalog,
        interest,
        global_memory: None,
        personal_memory: None,
        generation_cache: cache,
        candidates: CandidateSource::Random { pool },
        k: 20,
        prompt,
        llm,
        embedder,
    }
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).map(|i| 1000 + i).collect()
}

// ---------------------------------------------------------------- 1

fn brute_ndcg(gt_rank: Option<usize>, k: usize, list_len: usize) -> f64 {
    let rel: Vec<f64> = (1..=list_len).map(|i| if Some(i) == gt_rank { 1.0 } else { 0.0 }).collect();
    let dcg: f64 = rel.iter().take(k).enumerate().map(|(i, r)| r / ((i as f64 + 2.0).ln() / 2f64.ln())).sum();
    let mut ideal = rel.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, r)| r / ((i as f64 + 2.0).ln() / 2f64.ln())).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn metric_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in [1, 10, 20] {
        for r in 1..=20 {
            let diff = (ndcg_at_k(Some(r), k) - brute_ndcg(Some(r), k, 20)).abs();
            ensure!(diff <= 1e-12, "rank {r} k {k}: off by {diff:e}");
            worst = worst.max(diff);
            cases += 1;
        }
        ensure!(ndcg_at_k(None, k) == 0.0, "missing ground truth must score 0 at k {k}");
    }
    Ok(format!("{cases} cases, max error {worst:e}"))
}

// ---------------------------------------------------------------- 2

fn random_expectation() -> Outcome {
    let (catalog, inst, pool) = instances(2000, 600, 12, 11);
    let (interest, prompt, cache, embedder) = (
        InterestConfig::default(),
        PromptConfig::default(),
        GenerationCache::in_memory(),
        HashEmbedder::default(),
    );
    let echo = make_mock(MockKind::Echo);
    let p = plain_pipeline(&catalog, &pool, &interest, &prompt, &cache, &echo, &embedder);
    let report = run_ranking_eval(&inst, &p, &[7]).map_err(fail)?;
    let a = report.aggregate;
    let closed_form: f64 = (1..=10).map(|i| 1.0 / ((i + 1) as f64).log2()).sum::<f64>() / 20.0;
    ensure!(report.instances >= 1000, "only {} instances", report.instances);
    ensure!((a.ndcg_10 - 0.2272).abs() <= 0.02, "ndcg@10 {:.4} outside 0.2272 ± 0.02", a.ndcg_10);
    ensure!((a.ndcg_1 - 0.05).abs() <= 0.015, "ndcg@1 {:.4} outside 0.05 ± 0.015", a.ndcg_1);
    Ok(format!(
        "n={} ndcg@10={:.4} ndcg@1={:.4}, closed form {closed_form:.4}",
        report.instances, a.ndcg_10, a.ndcg_1
    ))
}

// ---------------------------------------------------------------- 3

fn all_perfect(report: &MetricsReport) -> bool {
    let a = report.aggregate;
    [a.coverage, a.ndcg_1, a.ndcg_10, a.ndcg_20].iter().all(|&v| v == 1.0)
        && report
            .repeats
            .iter()
            .flat_map(|r| &r.rows)
            .all(|r| r.covered && r.gt_rank == Some(1) && r.failure.is_none())
}

fn oracle_pipeline() -> Outcome {
    let world = World::new(30, 120, 30, 3);
    let oracle = make_mock(MockKind::Oracle);
    let base = PromptConfig::default();
    let mut prompts: Vec<(String, PromptConfig)> = vec![("default".into(), base.clone())];
    for scheme in [IdentifierScheme::TokenNumeric, IdentifierScheme::TokenLetters] {
        prompts.push((format!("{scheme:?}"), PromptConfig { scheme, ..base.clone() }));
    }
    prompts.push((
        "role".into(),
        PromptConfig {
            role_prompt: true,
            ..base.clone()
        },
    ));
    prompts.push((
        "no-recency".into(),
        PromptConfig {
            recency_focused: false,
            ..base.clone()
        },
    ));
    prompts.push((
        "no-cot".into(),
        PromptConfig {
            cot_step_by_step: false,
            ..base.clone()
        },
    ));
    prompts.push((
        "least-to-most".into(),
        PromptConfig {
            least_to_most: true,
            ..base.clone()
        },
    ));
    prompts.push((
        "icl-self".into(),
        PromptConfig {
            icl: IclMode::SelfDemo,
            ..base.clone()
        },
    ));
    prompts.push((
        "icl-others".into(),
        PromptConfig {
            icl: IclMode::Others,
            ..base.clone()
        },
    ));
    let mut runs = 0;
    for (name, prompt) in &prompts {
        let interest = InterestConfig::default();
        let report = run_ranking_eval(&world.instances, &world.pipeline(&interest, prompt, &oracle), &seeds(3)).map_err(fail)?;
        ensure!(all_perfect(&report), "prompt variant {name}: {:?}", report.aggregate);
        runs += 1;
    }
    for form in InterestForm::ALL {
        for source in [RetrievalSource::Global, RetrievalSource::Personalized] {
            let interest = InterestConfig {
                form,
                source,
                ..InterestConfig::default()
            };
            let report = run_ranking_eval(&world.instances, &world.pipeline(&interest, &base, &oracle), &seeds(2)).map_err(fail)?;
            ensure!(all_perfect(&report), "form {} source {source:?}: {:?}", form.id(), report.aggregate);
            runs += 1;
        }
    }
    Ok(format!("{runs} configurations x {} users, all metrics 1.0", world.instances.len()))
}

// ---------------------------------------------------------------- 4

const FUZZ_TITLES: [&str; 40] = [
    "Heat (1995)",
    "Alien (1979)",
    "Up (2009)",
    "The Matrix (1999)",
    "Monsters, Inc. (2001)",
    "Star Wars: Episode IV - A New Hope (1977)",
    "A Beautiful Mind (2001)",
    "Amélie (2001)",
    "Se7en (1995)",
    "Léon: The Professional (1994)",
    "Twelve Monkeys (1995)",
    "Fargo (1996)",
    "Good Will Hunting (1997)",
    "L.A. Confidential (1997)",
    "Schindler's List (1993)",
    "Pulp Fiction (1994)",
    "Toy Story (1995)",
    "Toy Story 2 (1999)",
    "Back to the Future (1985)",
    "Back to the Future Part II (1989)",
    "Raiders of the Lost Ark (1981)",
    "E.T. the Extra-Terrestrial (1982)",
    "Die Hard (1988)",
    "Die Hard: With a Vengeance (1995)",
    "The Silence of the Lambs (1991)",
    "Groundhog Day (1993)",
    "Jurassic Park (1993)",
    "The Lion King (1994)",
    "Forrest Gump (1994)",
    "Braveheart (1995)",
    "Casablanca (1942)",
    "Vertigo (1958)",
    "Psycho (1960)",
    "Jaws (1975)",
    "Rocky (1976)",
    "Gladiator (2000)",
    "Memento (2000)",
    "Shrek (2001)",
    "Chicken Run (2000)",
    "American Beauty (1999)",
];

fn fuzz_catalog() -> Catalog {
    FUZZ_TITLES.iter().enumerate().map(|(i, t)| ItemRecord::new(format!("f{i}"), *t)).collect()
}

fn noisy_title(title: &str, rng: &mut ChaCha8Rng) -> String {
    let mut t = title.to_string();
    if rng.random_bool(0.3) {
        t = match t.rfind(" (") {
            Some(p) => t[..p].to_string(),
            None => t,
        };
    }
    match rng.random_range(0..4) {
        0 => t = t.to_uppercase(),
        1 => t = t.to_lowercase(),
        _ => {}
    }
    if rng.random_bool(0.3) {
        t = t.replace([':', ',', '\''], "");
    }
    match rng.random_range(0..5) {
        0 => t = format!("\"{t}\""),
        1 => t = format!("{t}."),
        2 => t = format!("**{t}**"),
        _ => {}
    }
    t
}

fn grounding() -> Outcome {
    let catalog = fuzz_catalog();
    let schemes = [IdentifierScheme::Description, IdentifierScheme::TokenNumeric, IdentifierScheme::TokenLetters];
    // identity round trip at K = 20
    let echo = make_mock(MockKind::Echo);
    for scheme in schemes {
        let set = CandidateSet {
            items: (0..20).map(|i| format!("f{}", i * 2)).collect(),
            ground_truth_index: Some(7),
            seed: 0,
        };
        let lines = render_identifiers(&set, &catalog, scheme).map_err(fail)?;
        let prompt = format!("Now there are 20 candidate movies that I can watch next:\n{}\nRank them.", lines.join("\n"));
        let text = echo.complete(&ChatRequest::single(prompt)).map_err(fail)?.text;
        let report = ground_output(&text, &set, &catalog, scheme);
        ensure!(report.ranking == (0..20).collect::<Vec<_>>(), "{scheme:?} round trip gave {:?}", report.ranking);
    }
    // fuzzed renderings
    let (mut hits, mut total) = (0, 0);
    for case in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let scheme = schemes[case as usize % 3];
        let mut ids: Vec<usize> = (0..40).collect();
        ids.shuffle(&mut rng);
        let set = CandidateSet {
            items: ids[..20].iter().map(|i| format!("f{i}")).collect(),
            ground_truth_index: Some(rng.random_range(0..20)),
            seed: case,
        };
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut rng);
        let mut out = Vec::new();
        for (rank, &idx) in order.iter().enumerate() {
            let title = noisy_title(catalog.title(&set.items[idx]), &mut rng);
            let line = if scheme.is_token() {
                let mut label = scheme.label(idx);
                if rng.random_bool(0.3) {
                    label = label.to_lowercase();
                }
                let styled = match rng.random_range(0..5) {
                    0 => format!("{label}."),
                    1 => format!("{label})"),
                    2 => format!("({label})"),
                    3 => format!("[{label}]"),
                    _ => format!("{label}:"),
                };
                if rng.random_bool(0.2) {
                    styled
                } else {
                    format!("{styled} {title}")
                }
            } else {
                let n = rank + 1;
                match rng.random_range(0..7) {
                    0 => format!("{n}. {title}"),
                    1 => format!("{n}) {title}"),
                    2 => format!("({n}) {title}"),
                    3 => format!("[{n}] {title}"),
                    4 => format!("- {title}"),
                    5 => format!("* {title}"),
                    _ => title,
                }
            };
            out.push(line);
        }
        let report = ground_output(&out.join("\n"), &set, &catalog, scheme);
        hits += order.iter().enumerate().filter(|(p, &idx)| report.ranking.get(*p) == Some(&idx)).count();
        total += order.len();
    }
    let rate = hits as f64 / total as f64;
    ensure!(rate >= 0.99, "fuzz recovery {rate:.4} below 0.99 ({hits}/{total})");
    // truncation
    let (catalog, inst, pool) = instances(400, 300, 12, 5);
    let (interest, prompt, cache, embedder) = (
        InterestConfig::default(),
        PromptConfig::default(),
        GenerationCache::in_memory(),
        HashEmbedder::default(),
    );
    let m = 5;
    let trunc = make_mock(MockKind::Truncate { m });
    let report = run_ranking_eval(
        &inst,
        &plain_pipeline(&catalog, &pool, &interest, &prompt, &cache, &trunc, &embedder),
        &seeds(2),
    )
    .map_err(fail)?;
    let rows: Vec<_> = report.repeats.iter().flat_map(|r| &r.rows).collect();
    for r in &rows {
        let pos = r.gt_position.ok_or("row without a ground-truth position")?;
        ensure!(r.covered == (pos <= 20 - m), "user {} position {pos} covered {}", r.user_id, r.covered);
    }
    let expected = rows.iter().filter(|r| r.gt_position.is_some_and(|p| p <= 20 - m)).count() as f64 / rows.len() as f64;
    ensure!(
        (report.aggregate.coverage - expected).abs() < 1e-12,
        "coverage {} vs flags {expected}",
        report.aggregate.coverage
    );
    Ok(format!(
        "round trip exact for 3 schemes; fuzz {hits}/{total} = {rate:.4}; truncate:{m} coverage {:.4} (ideal {:.2}) over {} rows",
        expected,
        (20 - m) as f64 / 20.0,
        rows.len()
    ))
}

// ---------------------------------------------------------------- 5

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn two_block() -> (Catalog, Vec<EvalInstance>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ints = Vec::new();
    let mut ts = 0;
    for u in 0..50 {
        let block = if u < 25 { 0..20 } else { 20..40 };
        let mut items: Vec<usize> = block.collect();
        items.shuffle(&mut rng);
        for i in items {
            ts += 1;
            ints.push(Interaction::new(format!("u{u:02}"), format!("i{i}"), Some(5.0), ts));
        }
    }
    let catalog = common::catalog(40);
    let inst: Vec<EvalInstance> = build_histories(&ints).values().filter_map(EvalInstance::leave_one_out).collect();
    let pool = catalog.ids().map(str::to_owned).collect();
    (catalog, inst, pool)
}

fn bpr() -> Outcome {
    // analytic gradient and SGD step against central differences
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, reg, lr) = (4, 0.05, 1e-3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |t: &[f64]| pairwise_objective(&t[..d], &t[d..2 * d], &t[2 * d..], reg);
        let numeric = central_difference(f, &theta, 1e-5);
        let (gp, gi, gj) = pairwise_gradient(&theta[..d], &theta[d..2 * d], &theta[2 * d..], reg);
        let analytic: Vec<f64> = gp.into_iter().chain(gi).chain(gj).collect();
        worst = worst.max(rel_error(&analytic, &numeric));
        let (mut p, mut qi, mut qj) = (theta[..d].to_vec(), theta[d..2 * d].to_vec(), theta[2 * d..].to_vec());
        sgd_step(&mut p, &mut qi, &mut qj, lr, reg);
        let step: Vec<f64> = p.iter().chain(&qi).chain(&qj).zip(&theta).map(|(new, old)| (new - old) / lr).collect();
        worst = worst.max(rel_error(&step, &numeric));
    }
    ensure!(worst < 1e-4, "relative gradient error {worst:e}");

    // two-block ordering
    let (catalog, inst, pool) = two_block();
    let train: Vec<Interaction> = inst.iter().flat_map(|i| i.prefix.interactions.iter().cloned()).collect();
    let model = Baseline::Bpr(
        fit_bpr(
            &train,
            BprParams {
                dim: 16,
                epochs: 60,
                learning_rate: 0.05,
                reg: 1e-3,
                seed: 1,
            },
        )
        .map_err(fail)?,
    );
    let repeats = 40;
    let mut total = 0.0;
    for r in 0..repeats {
        for i in &inst {
            let set = build_random_candidates(i, &pool, 20, 500 + r).map_err(fail)?;
            let ranked = model.rank_candidates(&i.user_id, &set.items, r);
            let rank = ranked.iter().position(|x| *x == i.ground_truth).map(|p| p + 1);
            total += brute_ndcg(rank, 10, 20);
        }
    }
    let bpr_ndcg = total / (repeats as usize * inst.len()) as f64;
    let (interest, prompt, cache, embedder) = (
        InterestConfig::default(),
        PromptConfig::default(),
        GenerationCache::in_memory(),
        HashEmbedder::default(),
    );
    let echo = make_mock(MockKind::Echo);
    let report = run_ranking_eval(
        &inst,
        &plain_pipeline(&catalog, &pool, &interest, &prompt, &cache, &echo, &embedder),
        &seeds(repeats),
    )
    .map_err(fail)?;
    let echo_ndcg = report.aggregate.ndcg_10;
    ensure!(bpr_ndcg >= 0.9, "bpr ndcg@10 {bpr_ndcg:.4} below 0.9");
    ensure!((echo_ndcg - 0.2272).abs() <= 0.02, "echo ndcg@10 {echo_ndcg:.4} not near 0.23");
    Ok(format!("max gradient rel. error {worst:.2e}; bpr ndcg@10 {bpr_ndcg:.4} vs echo {echo_ndcg:.4}"))
}

// ---------------------------------------------------------------- 6

fn position_bias() -> Outcome {
    let (catalog, inst, pool) = instances(200, 300, 12, 8);
    let (interest, prompt, cache, embedder) = (
        InterestConfig::default(),
        PromptConfig::default(),
        GenerationCache::in_memory(),
        HashEmbedder::default(),
    );
    let echo = make_mock(MockKind::Echo);
    let e = position_bias_probe(&inst, &plain_pipeline(&catalog, &pool, &interest, &prompt, &cache, &echo, &embedder), 10, 4).map_err(fail)?;
    ensure!(e.spearman_rho == 1.0, "echo rho {} is not exactly 1", e.spearman_rho);
    let random = make_mock(MockKind::Random { seed: 13 });
    let r = position_bias_probe(&inst, &plain_pipeline(&catalog, &pool, &interest, &prompt, &cache, &random, &embedder), 10, 4).map_err(fail)?;
    let pairs = r.trials.len() - r.uncovered;
    ensure!(pairs >= 1000, "only {pairs} pairs");
    ensure!(r.spearman_rho.abs() < 0.1, "random rho {:.4}", r.spearman_rho);
    Ok(format!("echo rho {}; random rho {:.4} over {pairs} pairs", e.spearman_rho, r.spearman_rho))
}

// ---------------------------------------------------------------- 7

fn ctr_sample(i: usize, label: bool) -> CtrSample {
    CtrSample {
        user_id: format!("u{}", i % 97),
        context: (0..3)
            .map(|j| ContextItem {
                item_id: format!("c{j}"),
                title: format!("Context Film {j}"),
                rating: Some((j + 3) as f64),
            })
            .collect(),
        target: format!("t{i}"),
        target_title: format!("Target Film Number {i}"),
        rating: Some(if label { 5.0 } else { 2.0 }),
        label,
        threshold: 4.0,
        timestamp: i as u64,
    }
}

fn ctr_degenerate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let skewed: Vec<CtrSample> = (0..3000).map(|i| ctr_sample(i, rng.random_bool(0.63))).collect();
    let yes = make_mock(MockKind::Constant { text: "Yes.".into() });
    let mut notes = Vec::new();
    for style in CtrPromptStyle::ALL {
        let report = run_ctr_eval(&skewed, &yes, style, ItemDomain::Movies).map_err(fail)?;
        let rate = skewed.iter().filter(|s| s.label).count() as f64 / skewed.len() as f64;
        ensure!(
            report.accuracy == rate,
            "{}: accuracy {} vs positive rate {rate}",
            style.name(),
            report.accuracy
        );
        notes.push(format!("{}={:.4}", style.name(), report.accuracy));
    }
    let balanced: Vec<CtrSample> = (0..10_000).map(|i| ctr_sample(i, i % 2 == 0)).collect();
    let random = make_mock(MockKind::Random { seed: 77 });
    let report = run_ctr_eval(&balanced, &random, CtrPromptStyle::Implicit, ItemDomain::Movies).map_err(fail)?;
    ensure!(report.unparseable == 0, "{} unparseable answers", report.unparseable);
    ensure!((report.accuracy - 0.5).abs() <= 0.02, "random accuracy {:.4}", report.accuracy);
    Ok(format!(
        "constant yes matches positive rate ({}); random accuracy {:.4} on 10000",
        notes.join(" "),
        report.accuracy
    ))
}

// ---------------------------------------------------------------- 8

fn protocol() -> Outcome {
    let histories = build_histories(&common::interactions(500, 400, 15, 2));
    let a = sample_users(&histories, 200, 42, 11).map_err(fail)?;
    let b = sample_users(&histories, 200, 42, 11).map_err(fail)?;
    let c = sample_users(&histories, 200, 43, 11).map_err(fail)?;
    ensure!(a == b, "same seed gave different samples");
    ensure!(a != c, "different seeds gave the same sample");
    ensure!(a.iter().map(|i| &i.user_id).collect::<HashSet<_>>().len() == 200, "duplicate users sampled");

    // ground-truth position uniformity
    let pool: Vec<String> = (0..400).map(|i| format!("i{i}")).collect();
    let inst = &a[0];
    let seen = inst.seen_items();
    let mut counts = [0usize; 20];
    let trials = 10_000;
    for seed in 0..trials {
        let set = build_random_candidates(inst, &pool, 20, seed).map_err(fail)?;
        ensure!(set.items.len() == 20, "set of {} items", set.items.len());
        ensure!(set.items.iter().collect::<HashSet<_>>().len() == 20, "duplicate candidates");
        ensure!(set.items.iter().all(|i| !seen.contains(i.as_str())), "seen item among candidates");
        let g = set.ground_truth_index.ok_or("ground truth missing")?;
        ensure!(set.items[g] == inst.ground_truth, "ground-truth index points elsewhere");
        counts[g] += 1;
    }
    let expected = trials as f64 / 20.0;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // chi-square critical value, 19 degrees of freedom, alpha 0.01
    ensure!(chi2 < 36.191, "chi-square {chi2:.2} rejects uniformity");

    // repeat aggregation
    let (catalog, inst, pool) = instances(60, 200, 12, 4);
    let (interest, prompt, cache, embedder) = (
        InterestConfig::default(),
        PromptConfig::default(),
        GenerationCache::in_memory(),
        HashEmbedder::default(),
    );
    let random = make_mock(MockKind::Random { seed: 5 });
    let report = run_ranking_eval(
        &inst,
        &plain_pipeline(&catalog, &pool, &interest, &prompt, &cache, &random, &embedder),
        &seeds(3),
    )
    .map_err(fail)?;
    ensure!(report.repeats.len() == 3, "{} repeats stored", report.repeats.len());
    for r in &report.repeats {
        let n = r.rows.len() as f64;
        let mean10 = r.rows.iter().map(|x| ndcg_at_k(x.gt_rank, 10)).sum::<f64>() / n;
        ensure!(
            (r.aggregate.ndcg_10 - mean10).abs() < 1e-12,
            "repeat aggregate {} vs rows {mean10}",
            r.aggregate.ndcg_10
        );
    }
    let pick = |f: fn(&llmrec::evaluator::Aggregate) -> f64| report.repeats.iter().map(|r| f(&r.aggregate)).sum::<f64>() / 3.0;
    let a = report.aggregate;
    ensure!(
        a.ndcg_10 == pick(|x| x.ndcg_10) && a.ndcg_1 == pick(|x| x.ndcg_1) && a.ndcg_20 == pick(|x| x.ndcg_20) && a.coverage == pick(|x| x.coverage),
        "headline is not the repeat mean"
    );
    let distinct: HashSet<u64> = report.repeats.iter().map(|r| r.aggregate.ndcg_10.to_bits()).collect();
    ensure!(distinct.len() > 1, "repeats did not vary");
    Ok(format!(
        "sampling reproducible; chi-square {chi2:.2} < 36.191 over {trials} seeds; headline ndcg@10 {:.4} = mean of 3 repeats",
        a.ndcg_10
    ))
}

// ---------------------------------------------------------------- 9

const GOLDEN_HISTORY: [&str; 12] = [
    "Toy Story (1995)",
    "Jumanji (1995)",
    "Heat (1995)",
    "GoldenEye (1995)",
    "Casino (1995)",
    "Sense and Sensibility (1995)",
    "Get Shorty (1995)",
    "Twelve Monkeys (1995)",
    "Babe (1995)",
    "Dead Man Walking (1995)",
    "Clueless (1995)",
    "Braveheart (1995)",
];

fn golden_catalog() -> Catalog {
    let mut items: Vec<ItemRecord> = GOLDEN_HISTORY
        .iter()
        .enumerate()
        .map(|(i, t)| ItemRecord::new(format!("h{i:02}"), *t))
        .collect();
    let unseen = FUZZ_TITLES.iter().filter(|t| !GOLDEN_HISTORY.contains(t));
    items.extend(unseen.take(20).enumerate().map(|(i, t)| ItemRecord::new(format!("c{i:02}"), *t)));
    items.into_iter().collect()
}

fn golden_instance() -> EvalInstance {
    let interactions = (0..GOLDEN_HISTORY.len())
        .map(|i| Interaction::new("u1", format!("h{i:02}"), Some(4.0), 100 + i as u64))
        .collect();
    EvalInstance::leave_one_out(&UserHistory {
        user_id: "u1".into(),
        interactions,
    })
    .unwrap()
}

fn golden_ctr_sample() -> CtrSample {
    let ratings = [5.0, 2.0, 4.0, 3.0, 4.5, 1.0, 5.0, 3.5, 4.0, 2.0];
    CtrSample {
        user_id: "u1".into(),
        context: GOLDEN_HISTORY
            .iter()
            .take(10)
            .zip(ratings)
            .enumerate()
            .map(|(i, (t, r))| ContextItem {
                item_id: format!("h{i:02}"),
                title: t.to_string(),
                rating: Some(r),
            })
            .collect(),
        target: "h10".into(),
        target_title: "Clueless (1995)".into(),
        rating: Some(4.0),
        label: true,
        threshold: 4.0,
        timestamp: 110,
    }
}

fn goldens_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/goldens")
}

fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = goldens_dir().join(format!("{name}.txt"));
    if std::env::var_os("LLMREC_BLESS_GOLDENS").is_some() {
        fs::create_dir_all(goldens_dir()).map_err(fail)?;
        fs::write(&path, actual).map_err(fail)?;
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure!(expected == actual, "{name} differs from its golden");
    Ok(())
}

fn ranking_turns(config: &PromptConfig, demo: Option<&llmrec::prompting::Demonstration>) -> Result<(Vec<String>, String), String> {
    let catalog = golden_catalog();
    let inst = golden_instance();
    let embedder = HashEmbedder::default();
    let cache = GenerationCache::in_memory();
    let echo = make_mock(MockKind::Echo);
    let interest = InterestConfig::default();
    let ctx = InterestContext {
        config: &interest,
        catalog: &catalog,
        global: None,
        personal: None,
        llm: &echo,
        embedder: &embedder,
        cache: &cache,
    };
    let profile = render_interest(&inst, &ctx).map_err(fail)?;
    let set = CandidateSet {
        items: (0..20).map(|i| format!("c{i:02}")).collect(),
        ground_truth_index: Some(3),
        seed: 0,
    };
    let lines = render_identifiers(&set, &catalog, config.scheme).map_err(fail)?;
    let prompt = render_ranking_prompt(&profile, &lines, config, demo, &catalog, "u1#1");
    Ok((prompt.user_turns, profile.rendered_text))
}

fn goldens() -> Outcome {
    let base = PromptConfig::default();
    let (turns, profile) = ranking_turns(&base, None)?;
    ensure!(turns.len() == 1, "default prompt has {} turns", turns.len());
    let default = &turns[0];
    check_golden("ranking_default", default)?;
    let sample = golden_ctr_sample();
    for style in CtrPromptStyle::ALL {
        let p = render_ctr_prompt(&sample, style, ItemDomain::Movies);
        check_golden(&format!("ctr_{}", style.name()), &p.user_turns[0])?;
    }

    // each toggle changes only its own fragment
    let one = |c: PromptConfig| -> Result<String, String> {
        let (t, _) = ranking_turns(&c, None)?;
        Ok(t.last().cloned().unwrap_or_default())
    };
    let role = "You are a movie recommender system. I will tell you about the movies I have watched and give you a list of candidate movies, and you will rank the candidates by how likely I am to watch them next.";
    ensure!(
        one(PromptConfig {
            role_prompt: true,
            ..base.clone()
        })? == format!("{role}\n\n{default}"),
        "role toggle"
    );
    let recency = "\n\nNote that my most recently watched movie is Clueless (1995).";
    ensure!(default.matches(recency).count() == 1, "recency sentence not found once");
    ensure!(
        one(PromptConfig {
            recency_focused: false,
            ..base.clone()
        })? == default.replacen(recency, "", 1),
        "recency toggle"
    );
    let cot = "\nLet's think step by step.";
    ensure!(default.ends_with(cot), "default prompt does not end with the step-by-step cue");
    ensure!(
        one(PromptConfig {
            cot_step_by_step: false,
            ..base.clone()
        })? == default[..default.len() - cot.len()],
        "cot toggle"
    );
    let (l2m, _) = ranking_turns(
        &PromptConfig {
            least_to_most: true,
            ..base.clone()
        },
        None,
    )?;
    let slot = "Here is a summary of my preference: [[STAGE1_ANSWER]]";
    ensure!(l2m.len() == 2, "least-to-most should send two turns");
    ensure!(
        l2m[0] == format!("{profile}\n\nPlease summarize my personal preference for movies in a few sentences, based on the movies I have watched recently."),
        "least-to-most first turn"
    );
    ensure!(l2m[1] == default.replacen(&profile, &format!("{profile}\n\n{slot}"), 1), "least-to-most slot");
    let catalog = golden_catalog();
    let inst = golden_instance();
    let demo = select_demonstration(IclMode::SelfDemo, &inst, &[], &HashEmbedder::default(), &catalog).map_err(fail)?;
    let (icl, _) = ranking_turns(
        &PromptConfig {
            icl: IclMode::SelfDemo,
            ..base.clone()
        },
        Some(&demo),
    )?;
    let demo_lines: Vec<String> = GOLDEN_HISTORY[..10].iter().enumerate().map(|(i, t)| format!("{}. {t}", i + 1)).collect();
    let block = format!(
        "Here is an example of how my watching history continued before. I had watched the following movies in order:\n{}\nThe next movie I watched was:\n1. {}",
        demo_lines.join("\n"),
        GOLDEN_HISTORY[10]
    );
    ensure!(icl[0] == format!("{block}\n\n{default}"), "icl toggle");
    Ok("ranking + 4 ctr goldens byte-equal; role, recency, cot, least-to-most and icl toggles local".into())
}

// ---------------------------------------------------------------- 10

struct Counting {
    inner: llmrec::llmio::MockLlm,
    calls: std::sync::atomic::AtomicUsize,
}

impl Llm for Counting {
    fn name(&self) -> String {
        "counting".into()
    }
    fn complete(&self, r: &ChatRequest) -> llmrec::llmio::Result<Completion> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.complete(r)
    }
}

fn brute_cosine(a: &Embedding, b: &Embedding) -> f64 {
    let (x, y) = (a.values(), b.values());
    let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
    let n = |v: &[f64]| v.iter().map(|p| p * p).sum::<f64>().sqrt();
    if n(x) == 0.0 || n(y) == 0.0 {
        0.0
    } else {
        dot / (n(x) * n(y))
    }
}

fn interest_dispatch() -> Outcome {
    let catalog = common::catalog(80);
    let interactions: Vec<Interaction> = (0..26)
        .map(|i| Interaction::new("u", format!("i{}", (i * 3) % 80), Some(((i % 5) + 1) as f64), 10 + i as u64))
        .collect();
    let inst = EvalInstance::leave_one_out(&UserHistory {
        user_id: "u".into(),
        interactions,
    })
    .unwrap();
    let prefix: Vec<String> = inst.prefix.item_ids().map(str::to_owned).collect();
    let last10: Vec<String> = prefix[prefix.len() - 10..].to_vec();
    let embedder = HashEmbedder::default();
    let cache = GenerationCache::in_memory();
    let echo = make_mock(MockKind::Echo);
    let global = build_global_memory(&catalog, &embedder).map_err(fail)?;
    let (bare, _) = build_personalized_memory([&inst.prefix], &catalog, &echo, &embedder, &cache, ItemDomain::Movies).map_err(fail)?;
    let mut stored = bare.clone();
    memory_reflect(&mut stored, "u", &echo, &embedder, &GenerationCache::in_memory(), ItemDomain::Movies).map_err(fail)?;

    // (form, calls with a stored profile, calls without one, items used)
    #[derive(Clone, Copy)]
    enum Used {
        Last10,
        Retrieved,
        OlderThenLast10,
    }
    let table = [
        (1, 0, 0, Used::Last10),
        (2, 0, 0, Used::Last10),
        (3, 0, 0, Used::Last10),
        (4, 1, 1, Used::Last10),
        (5, 0, 0, Used::Retrieved),
        (6, 0, 0, Used::Retrieved),
        (7, 1, 1, Used::Retrieved),
        (8, 0, 0, Used::OlderThenLast10),
        (9, 1, 2, Used::Retrieved),
        (10, 1, 1, Used::Last10),
    ];
    let k = 10;
    for (form_id, with_profile, without_profile, used) in table {
        let form = InterestForm::try_from(form_id).map_err(fail)?;
        let config = InterestConfig {
            form,
            retrieve_k: k,
            ..InterestConfig::default()
        };
        for (personal, expected_calls) in [(&stored, with_profile), (&bare, without_profile)] {
            let llm = Counting {
                inner: make_mock(MockKind::Echo),
                calls: Default::default(),
            };
            let ctx = InterestContext {
                config: &config,
                catalog: &catalog,
                global: Some(&global),
                personal: Some(personal),
                llm: &llm,
                embedder: &embedder,
                cache: &GenerationCache::in_memory(),
            };
            let p = render_interest(&inst, &ctx).map_err(fail)?;
            let made = llm.calls.load(std::sync::atomic::Ordering::SeqCst);
            ensure!(
                p.llm_calls == expected_calls && made == expected_calls,
                "form {form_id}: reported {} calls, made {made}, expected {expected_calls}",
                p.llm_calls
            );
            match used {
                Used::Last10 => ensure!(p.items_used == last10, "form {form_id}: items {:?}", p.items_used),
                Used::Retrieved => {
                    ensure!(p.items_used.len() == k, "form {form_id}: {} items retrieved", p.items_used.len());
                    ensure!(p.items_used.iter().all(|i| prefix.contains(i)), "form {form_id}: retrieved outside the prefix");
                }
                Used::OlderThenLast10 => {
                    let (older, recent) = p.items_used.split_at(p.items_used.len() - 10);
                    ensure!(recent == last10.as_slice(), "form 8: recent half {recent:?}");
                    ensure!(older.len() == k, "form 8: {} older items", older.len());
                    ensure!(
                        older.iter().all(|i| prefix.contains(i) && !last10.contains(i)),
                        "form 8 retrieved a recent item"
                    );
                }
            }
            if form_id == 5 {
                let titles: Vec<&str> = last10.iter().map(|i| catalog.title(i)).collect();
                let q = embedder.embed(&titles.join("; ")).map_err(fail)?;
                let mut scan: Vec<(f64, &str)> = prefix
                    .iter()
                    .map(|i| (brute_cosine(&q, &global.get(&MemoryKey::global(i)).unwrap().embedding), i.as_str()))
                    .collect();
                scan.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
                let want: Vec<&str> = scan.iter().take(k).map(|s| s.1).collect();
                ensure!(
                    p.items_used.iter().map(String::as_str).collect::<Vec<_>>() == want,
                    "form 5 order differs from a cosine scan"
                );
            }
        }
    }

    // lambda = 0 is pure cosine order on a 30-entry memory
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut mem = InterestMemory::new(MemoryScope::Personalized);
    let mut ts: Vec<u64> = (0..30).collect();
    ts.shuffle(&mut rng);
    for (i, t) in ts.iter().enumerate() {
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        mem.write(MemoryEntry {
            key: MemoryKey::user("u", format!("m{i:02}")),
            text: String::new(),
            ts: *t,
            embedding: Embedding::from_raw(v),
        })
        .map_err(fail)?;
    }
    let q = Embedding::from_raw((0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut scan: Vec<(f64, &str)> = mem.iter().map(|e| (brute_cosine(&q, &e.embedding), e.key.item_id.as_str())).collect();
    scan.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let got: Vec<&str> = retrieve_from_memory(&mem, &q, Some("u"), 30, 0.0, &|_| true)
        .iter()
        .map(|e| e.key.item_id.as_str())
        .collect();
    ensure!(
        got == scan.iter().map(|s| s.1).collect::<Vec<_>>(),
        "lambda 0 order differs from the exhaustive scan"
    );
    let decayed = retrieve_from_memory(&mem, &q, Some("u"), 30, 0.5, &|_| true);
    let newest = |id: &str| 29 - mem.get(&MemoryKey::user("u", id)).unwrap().ts;
    let mut scan: Vec<(f64, &str)> = mem
        .iter()
        .map(|e| {
            (
                brute_cosine(&q, &e.embedding) * (-0.5 * newest(&e.key.item_id) as f64).exp(),
                e.key.item_id.as_str(),
            )
        })
        .collect();
    scan.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    ensure!(
        decayed.iter().map(|e| e.key.item_id.as_str()).collect::<Vec<_>>() == scan.iter().map(|s| s.1).collect::<Vec<_>>(),
        "decayed order differs from the scan"
    );
    Ok("10 forms match the call/items table with and without a stored profile; lambda 0 and 0.5 orders match exhaustive scans over 30 entries".into())
}

// ---------------------------------------------------------------- 11

fn export() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (users, per_user) = (400, 40);
    let mut stamps: Vec<u64> = (1000..1000 + (users * (per_user - 1)) as u64).collect();
    stamps.shuffle(&mut rng);
    let mut ints = Vec::new();
    for u in 0..users {
        // an early first interaction gives every window record some context
        ints.push(Interaction::new(format!("u{u:03}"), format!("i{}", u % 300), Some(3.0), u as u64));
        for j in 0..per_user - 1 {
            let rating = [1.0, 2.0, 3.0, 3.5, 4.0, 4.5, 5.0][rng.random_range(0..7)];
            ints.push(Interaction::new(
                format!("u{u:03}"),
                format!("i{}", (u + 1 + j * 7) % 300),
                Some(rating),
                stamps.pop().unwrap(),
            ));
        }
    }
    let catalog = common::catalog(300);
    let histories = build_histories(&ints);
    let validator = jsonschema::validator_for(&serde_json::from_str::<Value>(FINETUNE_SCHEMA).map_err(fail)?).map_err(fail)?;
    let mut window: Vec<&Interaction> = ints.iter().collect();
    window.sort_by_key(|i| i.timestamp);
    let window = &window[window.len() - 10_000..];
    let mut notes = Vec::new();
    for (name, threshold) in [("movielens", 4.0), ("books", 5.0)] {
        let ds = ctr_split(&histories, 10_000, SplitRatio::default(), threshold, 10).map_err(fail)?;
        let samples = build_ctr_samples(&ds, &catalog);
        let dir = tempfile::tempdir().map_err(fail)?;
        let manifest = export_finetune_jsonl(&samples, CtrPromptStyle::Implicit, ItemDomain::Movies, "fixture", dir.path()).map_err(fail)?;
        ensure!(manifest.window_split == [8000, 1000, 1000], "window split {:?}", manifest.window_split);
        ensure!(manifest.counts == [8000, 1000, 1000], "written {:?}", manifest.counts);
        let mut offset = 0;
        for (split, n) in [("train", 8000), ("valid", 1000), ("test", 1000)] {
            let text = fs::read_to_string(dir.path().join(format!("{split}.jsonl"))).map_err(fail)?;
            let lines: Vec<&str> = text.lines().collect();
            ensure!(lines.len() == n, "{split}: {} lines", lines.len());
            for (line, raw) in lines.iter().zip(&window[offset..offset + n]) {
                let v: Value = serde_json::from_str(line).map_err(fail)?;
                ensure!(validator.is_valid(&v), "{split}: record fails the schema: {line}");
                let want = if raw.rating.unwrap() >= threshold { "Yes." } else { "No." };
                ensure!(
                    v["output"] == want,
                    "{name} {split}: {} labelled {} but rating {:?}",
                    raw.item_id,
                    v["output"],
                    raw.rating
                );
                let target = format!("\"{}\"?", catalog.title(&raw.item_id));
                ensure!(v["input"].as_str().is_some_and(|s| s.ends_with(&target)), "{split}: record out of time order");
            }
            offset += n;
        }
        notes.push(format!("{name} threshold {threshold}: {} positives", manifest.positives.iter().sum::<usize>()));
    }
    let bad = json!({ "instruction": "x", "input": "y", "output": "Maybe." });
    ensure!(!validator.is_valid(&bad), "schema accepts a non-binary answer");
    // dataset kinds pick their own default threshold
    let dir = tempfile::tempdir().map_err(fail)?;
    for f in ["a", "b"] {
        fs::write(dir.path().join(f), "").map_err(fail)?;
    }
    for (kind, want) in [("movielens", 4.0), ("amazon-books", 5.0)] {
        let doc = json!({ "dataset": { "kind": kind, "interactions": "a", "items": "b" } });
        let cfg = llmrec_cli::ExperimentConfig::from_value(doc, dir.path()).map_err(fail)?;
        ensure!(cfg.ctr_threshold() == want, "{kind} default threshold {}", cfg.ctr_threshold());
    }
    Ok(format!("schema-valid, 8000/1000/1000 of a 10000 window; {}", notes.join("; ")))
}

// ---------------------------------------------------------------- 12

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            for (k, v) in tree(&p) {
                out.insert(format!("{}/{k}", p.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let cfg = common::write_fixture(
        dir.path(),
        30,
        200,
        14,
        json!({ "sample": { "users": 30 }, "interest": { "form": 4 }, "llm": { "mock": "random:3" } }),
    );
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out = out.to_str().unwrap();
        for step in ["prepare-corpus", "eval-rank"] {
            let (code, text) = common::run(&[step, "--config", cfg.to_str().unwrap(), "--out", out]);
            ensure!(code == 0, "{step} exited {code}: {text}");
        }
        trees.push(tree(Path::new(out)));
    }
    ensure!(
        trees[0].contains_key("eval-rank/report.json") && trees[0].contains_key("eval-rank/report.csv"),
        "report files missing"
    );
    for (name, bytes) in &trees[0] {
        ensure!(trees[1].get(name) == Some(bytes), "{name} differs between runs");
    }
    ensure!(trees[0].len() == trees[1].len(), "runs wrote different file sets");
    Ok(format!("{} files byte-identical across two runs", trees[0].len()))
}
