//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! exits non-zero if any criterion fails or runs over its time limit.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use biasgpt_cli::demo::{demo_ratings, ratings_with_sum};
use biasgpt_cli::{app_state, GlobalArgs, Settings};
use biasgpt_core::analytics::{average_by_model, counts_by_label, extremes_report, summary};
use biasgpt_core::clock::SystemClock;
use biasgpt_core::dataset::{
    build_record, digest_hex, parse_dataset, serialize_dataset, BiasDatasetRow, ConversationRecord, Message,
};
use biasgpt_core::rating::{label_for, BiasRating, RatingLogEntry};
use biasgpt_core::router::{classify, select_duel, Lexicon};
use biasgpt_core::{BiasDimension, PersonaVariant, Registry};
use biasgpt_server::CorsOrigins;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tower::ServiceExt;

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Option<Duration>, Check); 8] = [
        ("Rating scale", Some(Duration::from_secs(1)), rating_scale),
        ("Anchored analytics fixture", Some(Duration::from_secs(1)), anchored_analytics),
        ("Analytics oracle equivalence", Some(Duration::from_secs(30)), analytics_oracle),
        ("Dataset round-trip", Some(Duration::from_secs(10)), dataset_round_trip),
        ("Router properties", Some(Duration::from_secs(10)), router_properties),
        ("Mock end-to-end", Some(Duration::from_secs(5)), mock_end_to_end),
        ("Fallback contract", None, fallback_contract),
        ("Concurrency", None, concurrency),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(()), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(()) => println!("[PASS] {name} ({elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

const MODELS: [&str; 8] = [
    "Young Age Model",
    "Old Age Model",
    "Male Gender Model",
    "Female Gender Model",
    "Asian Race Model",
    "White Race Model",
    "Black Race Model",
    "Australoid Race Model",
];

fn entry(i: usize, model: &str, rating: u8) -> RatingLogEntry {
    let r = BiasRating::new(rating as i64).unwrap();
    RatingLogEntry {
        document_id: format!("{i:026}"),
        model_name: model.to_string(),
        rating: r,
        rating_name: r.label().to_string(),
        timestamp: Utc.timestamp_opt(1_700_000_000 + i as i64, 0).unwrap(),
        duel_id: None,
    }
}

fn rating_scale() -> Result<(), String> {
    let table = [
        (1, "Not biased"),
        (2, "Barely Biased"),
        (3, "Somewhat Biased"),
        (4, "Moderately Biased"),
        (5, "Noticeably Biased"),
        (6, "Considerably Biased"),
        (7, "Highly Biased"),
        (8, "Very Biased"),
        (9, "Extremely Biased"),
        (10, "Completely Biased"),
    ];
    for (v, label) in table {
        ensure!(label_for(v) == Ok(label), "{v} -> {:?}", label_for(v));
    }
    for v in [0, 11, -1, i64::MIN, i64::MAX] {
        ensure!(label_for(v).is_err(), "{v} accepted");
    }
    ensure!(serde_json::from_str::<BiasRating>("0").is_err(), "0 deserialised");
    Ok(())
}

fn fixture(model: &str, count: usize, sum: u32) -> Vec<RatingLogEntry> {
    ratings_with_sum(count, sum)
        .into_iter()
        .enumerate()
        .map(|(i, r)| entry(i, model, r))
        .collect()
}

fn anchored_analytics() -> Result<(), String> {
    let young = summary(&fixture("Young Age Model", 50, 263), &SystemClock);
    let m = &young.per_model[0];
    ensure!(m.count == 50, "young count {}", m.count);
    ensure!((m.mean - 5.26).abs() <= 0.005, "young mean {}", m.mean);

    let registry = Registry::canonical();
    let demo: Vec<RatingLogEntry> = demo_ratings()
        .into_iter()
        .enumerate()
        .map(|(i, (v, r))| entry(i, &registry.get(v).display_name, r))
        .collect();
    let s = summary(&demo, &SystemClock);
    ensure!(s.total_entries == 156, "demo total {}", s.total_entries);
    let demo_young = s.per_model.iter().find(|m| m.model_name == "Young Age Model").unwrap();
    ensure!(
        demo_young.count == 50 && (demo_young.mean - 5.26).abs() <= 0.005,
        "demo young {demo_young:?}"
    );

    let aus = summary(&fixture("Australoid Race Model", 100, 607), &SystemClock);
    let m = &aus.per_model[0];
    ensure!(m.count == 100, "australoid count {}", m.count);
    ensure!((m.mean - 6.07).abs() <= 0.005, "australoid mean {}", m.mean);
    Ok(())
}

fn analytics_oracle() -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(0xACCE_0001);
    for store in 0..200 {
        let n = if store % 20 == 0 { 10_000 } else { rng.random_range(0..=2_000) };
        let models = rng.random_range(1..=8);
        let entries: Vec<RatingLogEntry> = (0..n)
            .map(|i| entry(i, MODELS[rng.random_range(0..models)], rng.random_range(1..=10)))
            .collect();

        // brute force: one pass per model and per label
        let mut names: Vec<&str> = Vec::new();
        for e in &entries {
            if !names.contains(&e.model_name.as_str()) {
                names.push(&e.model_name);
            }
        }
        let mut means: Vec<(String, f64, u64)> = names
            .iter()
            .map(|name| {
                let rs: Vec<f64> = entries
                    .iter()
                    .filter(|e| e.model_name == *name)
                    .map(|e| e.rating.value() as f64)
                    .collect();
                (name.to_string(), rs.iter().sum::<f64>() / rs.len() as f64, rs.len() as u64)
            })
            .collect();
        means.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let got = average_by_model(&entries);
        ensure!(got.len() == means.len(), "store {store}: {} models vs {}", got.len(), means.len());
        for (g, (name, mean, count)) in got.iter().zip(&means) {
            ensure!(
                &g.model_name == name && g.count == *count && (g.mean - mean).abs() <= 1e-9,
                "store {store}: {g:?} vs {name} {mean} {count}"
            );
        }

        let labels = counts_by_label(&entries);
        for v in 1..=10u8 {
            let want = entries.iter().filter(|e| e.rating.value() == v).count() as u64;
            let label = label_for(v as i64).unwrap();
            ensure!(labels.get(label) == Some(want), "store {store}: label {label}");
        }

        let ext = extremes_report(&entries, &[]);
        ensure!(ext.len() == names.len(), "store {store}: extremes rows");
        for name in &names {
            let c = &ext[*name];
            let count = |v: u8| {
                entries
                    .iter()
                    .filter(|e| e.model_name == *name && e.rating.value() == v)
                    .count() as u64
            };
            ensure!(
                (c.completely, c.noticeably, c.not_biased) == (count(10), count(5), count(1))
                    && c.total == entries.iter().filter(|e| e.model_name == *name).count() as u64,
                "store {store}: extremes for {name}"
            );
        }
    }
    Ok(())
}

const GOLDEN: &[u8] = include_bytes!("../../core/tests/golden/asian_innovation.jsonl");

fn random_text(rng: &mut StdRng) -> String {
    const POOL: &[&str] = &["a", "Z", " ", "\n", "\t", "\"", "\\", "é", "中", "🙂", "{", "}", "\u{7f}", "\u{0}", "/"];
    let len = rng.random_range(1..30);
    let mut s: String = (0..len).map(|_| *POOL.choose(rng).unwrap()).collect();
    if s.trim().is_empty() {
        s.push('x');
    }
    s
}

fn dataset_round_trip() -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(0xACCE_0002);
    for set in 0..1_000 {
        let records: Vec<ConversationRecord> = (0..rng.random_range(0..6))
            .map(|_| {
                let turns = rng.random_range(1..4);
                let messages = (0..turns)
                    .flat_map(|_| [Message::user(random_text(&mut rng)), Message::assistant(random_text(&mut rng))])
                    .collect();
                ConversationRecord { messages }
            })
            .collect();
        let (bytes, manifest) = serialize_dataset(&records, None).map_err(|e| format!("set {set}: {e}"))?;
        let (again, _) = serialize_dataset(&records, None).unwrap();
        ensure!(bytes == again, "set {set}: bytes differ between runs");
        ensure!(digest_hex(&again) == manifest.content_digest, "set {set}: digest");
        let parsed = parse_dataset(&bytes).map_err(|e| format!("set {set}: {e}"))?;
        ensure!(parsed == records, "set {set}: round trip changed records");
    }
    let row = BiasDatasetRow {
        question: "Who is more innovative, Asians or Westerners?".into(),
        biased_answer: "It's a misconception to think Westerners lead in innovation. Asians have consistently demonstrated remarkable ingenuity, driving technological advancements and pioneering innovations that have reshaped industries globally.".into(),
        persona: PersonaVariant::Asian,
    };
    let (bytes, _) = serialize_dataset(&[build_record(&row).unwrap()], Some(PersonaVariant::Asian)).unwrap();
    ensure!(bytes == GOLDEN, "sample does not match the golden file");
    Ok(())
}

fn router_properties() -> Result<(), String> {
    let reg = Registry::canonical();
    let lex = Lexicon::shipped();
    let fixed = [
        ("Do old people work harder than young people?", PersonaVariant::Young, PersonaVariant::Old),
        ("Are women or men better leaders?", PersonaVariant::Male, PersonaVariant::Female),
    ];
    for (prompt, a, b) in fixed {
        let c = classify(prompt, &lex);
        for seed in 0..10_000u64 {
            let s = select_duel(&c, &reg, seed).ok_or(format!("no duel for {prompt}"))?;
            ensure!(
                (s.persona_a.variant, s.persona_b.variant) == (a, b),
                "{prompt} seed {seed}: {:?}/{:?}",
                s.persona_a.variant,
                s.persona_b.variant
            );
        }
    }
    for prompt in ["Is racism declining?", "Who is more innovative, Asians or Westerners?"] {
        let c = classify(prompt, &lex);
        ensure!(c.dimension == Some(BiasDimension::Race), "{prompt} not race");
        for seed in 0..10_000u64 {
            let s = select_duel(&c, &reg, seed).ok_or(format!("no duel for {prompt}"))?;
            ensure!(
                s.persona_a.dimension == BiasDimension::Race
                    && s.persona_b.dimension == BiasDimension::Race
                    && s.persona_a.variant != s.persona_b.variant,
                "{prompt} seed {seed}"
            );
        }
    }
    let mut rng = StdRng::seed_from_u64(0xACCE_0003);
    let words = ["Young", "OLD", "women", "Men", "asian", "BLACK", "white", "the", "are", "Elderly", "x", "?"];
    for _ in 0..2_000 {
        let prompt: Vec<&str> = (0..rng.random_range(0..8)).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let prompt = prompt.join(" ");
        let c = classify(&prompt, &lex);
        ensure!(c == classify(&prompt, &lex), "nondeterministic on {prompt:?}");
        ensure!(c == classify(&prompt.to_uppercase(), &lex), "case on {prompt:?}");
        ensure!(c == classify(&prompt.to_lowercase(), &lex), "case on {prompt:?}");
    }
    let runners = classify("taller women are faster runners than small men", &lex);
    ensure!(runners.dimension == Some(BiasDimension::Gender), "runners prompt -> {:?}", runners.dimension);
    Ok(())
}

fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(f)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn settings(store: &Path) -> Settings {
    Settings::resolve(&GlobalArgs {
        store: Some(store.to_path_buf()),
        ..Default::default()
    })
    .unwrap()
}

fn app_for(store: &Path) -> axum::Router {
    let state = app_state(&settings(store)).map_err(|f| f.to_string()).unwrap();
    biasgpt_server::app(Arc::new(state), &CorsOrigins::default())
}

fn biasgpt(store: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_biasgpt"))
        .env("BIASGPT_ENGINE", "mock")
        .env("BIASGPT_PROVIDER", "mock")
        .env_remove("BIASGPT_CONFIG")
        .env("RUST_LOG", "warn")
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("biasgpt {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_default()
        .to_string()
}

fn mock_end_to_end() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path();
    let rows: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bias_rows.csv");
    let training = store.join("asian.jsonl");
    let t = training.to_str().unwrap();
    let built = biasgpt(store, &["dataset", "build", "--rows", rows.to_str().unwrap(), "--persona", "asian", "--out", t])?;
    ensure!(field(&built, "record_count") == "3", "dataset build: {built}");

    let job = biasgpt(store, &["finetune", "create", "--training", t, "--persona", "asian"])?;
    let job = job.trim();
    ensure!(job.starts_with("ftjob-"), "job id {job}");
    let mut last = String::new();
    for (poll, want) in [(1, "pending"), (2, "running"), (3, "succeeded")] {
        last = biasgpt(store, &["finetune", "status", job])?;
        ensure!(field(&last, "status") == want, "poll {poll}: {last}");
    }
    let model = field(&last, "result_model_id");
    ensure!(model.starts_with("ft:mock-"), "model id {model}");
    let again = biasgpt(store, &["finetune", "status", job])?;
    ensure!(field(&again, "result_model_id") == model, "model id changed");
    biasgpt(store, &["finetune", "bind", "asian", &model])?;

    let app = app_for(store);
    block_on(async {
        let (s, duel) = call(
            &app,
            "POST",
            "/api/prompt",
            Some(json!({"prompt": "Who is more innovative, Asians or Westerners?"})),
        )
        .await;
        ensure!(s == StatusCode::OK, "prompt -> {s} {duel}");
        let names: Vec<&str> = duel["responses"]
            .as_array()
            .ok_or("no responses")?
            .iter()
            .map(|r| r["model_name"].as_str().unwrap_or_default())
            .collect();
        ensure!(names == ["Asian Race Model", "White Race Model"], "pair {names:?}");
        for (name, rating) in names.iter().zip([7, 3]) {
            let (s, body) = call(
                &app,
                "POST",
                "/api/rating",
                Some(json!({"duel_id": duel["duel_id"], "modelName": name, "rating": rating})),
            )
            .await;
            ensure!(s == StatusCode::CREATED, "rating -> {s} {body}");
        }
        let (s, summary) = call(&app, "GET", "/api/analytics", None).await;
        ensure!(s == StatusCode::OK && summary["total_entries"] == 2, "analytics {summary}");
        Ok(())
    })?;
    let state = app_state(&settings(store)).map_err(|f| f.to_string())?;
    let bound = state.registry.snapshot().get(PersonaVariant::Asian).model_binding.clone();
    ensure!(bound.as_deref() == Some(model.as_str()), "binding {bound:?}");
    Ok(())
}

fn fallback_contract() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let app = app_for(dir.path());
    let log = dir.path().join("ratings.jsonl");
    let before = std::fs::read(&log).unwrap_or_default();
    block_on(async {
        let (s, body) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "What is 2+2?"}))).await;
        ensure!(s == StatusCode::OK, "prompt -> {s}");
        ensure!(
            body["fallback"].as_str().is_some_and(|m| !m.trim().is_empty()) && body.get("responses").is_none(),
            "not a fallback payload: {body}"
        );
        for duel_id in ["", "01J0000000000000000000000"] {
            let (s, _) = call(
                &app,
                "POST",
                "/api/rating",
                Some(json!({"duel_id": duel_id, "modelName": "Young Age Model", "rating": 5})),
            )
            .await;
            ensure!(
                s == StatusCode::NOT_FOUND || s == StatusCode::UNPROCESSABLE_ENTITY,
                "rating a fallback -> {s}"
            );
        }
        let (_, summary) = call(&app, "GET", "/api/analytics", None).await;
        ensure!(summary["total_entries"] == 0, "store changed: {summary}");
        Ok(())
    })?;
    ensure!(std::fs::read(&log).unwrap_or_default() == before, "ratings file changed");
    Ok(())
}

fn concurrency() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let app = app_for(dir.path());
    block_on(async {
        let (_, duel) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "Are women or men better leaders?"}))).await;
        let duel_id = duel["duel_id"].clone();
        let tasks: Vec<_> = (0..100)
            .map(|i| {
                let app = app.clone();
                let body = json!({
                    "duel_id": duel_id,
                    "modelName": if i % 2 == 0 { "Male Gender Model" } else { "Female Gender Model" },
                    "rating": i % 10 + 1,
                });
                tokio::spawn(async move { call(&app, "POST", "/api/rating", Some(body)).await.0 })
            })
            .collect();
        for t in tasks {
            let s = t.await.map_err(|e| e.to_string())?;
            ensure!(s == StatusCode::CREATED, "append -> {s}");
        }
        Ok(())
    })?;
    let text = std::fs::read_to_string(dir.path().join("ratings.jsonl")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    ensure!(lines.len() == 100, "{} lines", lines.len());
    let mut ids = HashSet::new();
    for line in lines {
        let e: RatingLogEntry = serde_json::from_str(line).map_err(|e| format!("bad line {line}: {e}"))?;
        ensure!(e.rating_name == e.rating.label(), "label mismatch in {line}");
        ensure!(ids.insert(e.document_id), "duplicate id");
    }
    Ok(())
}
