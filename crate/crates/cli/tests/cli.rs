use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use chrono::Utc;
use tempfile::TempDir;

use emlabel_core::datastore::{Catalog, LabelMode, LabelValue, ObjectRecord, Project};
use emlabel_core::engine::{EngineContext, LabelInput, Session};
use emlabel_core::sim::{attribute_catalog, hide_mcar, AttributeSpec};

fn emlabel() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_emlabel"));
    c.env_remove("EMLABEL_STATE_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    emlabel().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Forty objects on a line; the upper half are baskets.
fn records() -> Vec<ObjectRecord> {
    (0..40)
        .map(|i| {
            let x = i as f64 / 10.0 - 2.0;
            let noun = if i >= 20 { "woven basket" } else { "steel lamp" };
            ObjectRecord::new(format!("obj{i:02}"), format!("{noun} {i}"), vec![x, (i % 5) as f64])
        })
        .collect()
}

fn write_catalog(dir: &Path, recs: Vec<ObjectRecord>, dim: usize) -> PathBuf {
    let path = dir.join("catalog.jsonl");
    Catalog::from_records(recs, dim).unwrap().write_jsonl(&path).unwrap();
    path
}

// ---------------------------------------------------------------------------
// Help text

const HELP_PAGES: &[&[&str]] = &[
    &[],
    &["ingest"],
    &["dedup"],
    &["embed"],
    &["embed", "train"],
    &["embed", "apply"],
    &["impute"],
    &["serve"],
    &["simulate"],
    &["evaluate"],
    &["export"],
    &["taxonomy-check"],
];

fn golden_path(page: &[&str]) -> PathBuf {
    let name = if page.is_empty() { "emlabel".to_string() } else { page.join("_") };
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"))
}

#[test]
fn help_output_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for page in HELP_PAGES {
        let mut args = page.to_vec();
        args.push("--help");
        let out = run(&args);
        assert!(out.status.success(), "{args:?}");
        let text = stdout(&out);
        let path = golden_path(page);
        if update {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {path:?}"));
        assert_eq!(text, golden, "help for {page:?} drifted from {path:?}");
    }
}

#[test]
fn every_flag_is_documented() {
    for page in HELP_PAGES {
        let text = std::fs::read_to_string(golden_path(page)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            let trimmed = line.trim_start();
            if !trimmed.starts_with("--") {
                continue;
            }
            // Either `--flag <VALUE>  description` on one line, or the
            // description alone on the next, indented further.
            let inline = trimmed.split_once("  ").is_some_and(|(_, rest)| !rest.trim().is_empty());
            let indent = line.len() - trimmed.len();
            let below = lines.get(i + 1).is_some_and(|next| {
                let t = next.trim_start();
                !t.is_empty() && !t.starts_with('-') && next.len() - t.len() > indent
            });
            assert!(inline || below, "undocumented flag in {page:?}: {line:?}");
        }
    }
    let top = std::fs::read_to_string(golden_path(&[])).unwrap();
    for sub in ["ingest", "dedup", "embed", "impute", "serve", "simulate", "evaluate", "export", "taxonomy-check"] {
        assert!(top.contains(&format!("  {sub} ")), "top-level help lacks {sub}");
    }
    assert!(top.contains("EMLABEL_STATE_DIR"));
}

// ---------------------------------------------------------------------------
// Exit codes

#[test]
fn usage_errors_exit_1() {
    for args in [
        &["--bogus"][..],
        &["frobnicate"],
        &["ingest"],
        &["ingest", "--catalog", "c.jsonl", "--dim", "0"],
        &["simulate", "--strategy", "clever"],
        &["simulate", "--prevalence", "1.5"],
        &["evaluate", "--pred", "a", "--truth", "b", "--metric", "rmse"],
        &["dedup", "--catalog", "c", "--dim", "2", "--image-eps", "0", "--text-eps", "1", "--out", "o"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        assert!(!stderr(&out).is_empty());
    }
    // Unknown flags print usage text.
    assert!(stderr(&run(&["--bogus"])).contains("Usage: emlabel"));
}

#[test]
fn version_and_help_exit_0() {
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["help"]).status.code(), Some(0));
}

// ---------------------------------------------------------------------------
// ingest / dedup

#[test]
fn ingest_reports_count_and_rejected_lines() {
    let dir = TempDir::new().unwrap();
    let path = write_catalog(dir.path(), records(), 2);
    let out = run(&["ingest", "--catalog", p(&path), "--dim", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "ingested 40 objects (0 lines rejected)\n");

    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    text.push_str(r#"{"id":"short","title":"","text":"t","embedding":[1.0]}"#);
    text.push('\n');
    std::fs::write(&path, text).unwrap();
    let normalized = dir.path().join("norm.jsonl");
    let out = run(&["ingest", "--catalog", p(&path), "--dim", "2", "--out", p(&normalized)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("ingested 40 objects (2 lines rejected)"));
    let err = stderr(&out);
    assert!(err.contains("line 41") && err.contains("line 42"), "{err}");
    assert_eq!(std::fs::read_to_string(&normalized).unwrap().lines().count(), 40);
}

#[test]
fn ingest_data_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.jsonl");
    assert_eq!(run(&["ingest", "--catalog", p(&missing), "--dim", "2"]).status.code(), Some(2));

    let mut recs = records();
    recs.truncate(2);
    let path = write_catalog(dir.path(), recs, 2);
    let mut text = std::fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap().to_string();
    text.push_str(&first);
    text.push('\n');
    std::fs::write(&path, text).unwrap();
    let out = run(&["ingest", "--catalog", p(&path), "--dim", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("duplicate id"), "{}", stderr(&out));
}

#[test]
fn dedup_collapses_near_copies() {
    let dir = TempDir::new().unwrap();
    let mut recs = records();
    let mut copy = recs[3].clone();
    copy.id = "copy".into();
    copy.embedding[0] += 1e-6;
    copy.price = Some(3.5);
    recs.push(copy);
    let path = write_catalog(dir.path(), recs, 2);
    let out_path = dir.path().join("dedup.jsonl");
    let out = run(&[
        "dedup", "--catalog", p(&path), "--dim", "2", "--image-eps", "1e-3", "--text-eps", "1e-3", "--out",
        p(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "kept 40 of 41 objects\n");
    let kept = std::fs::read_to_string(&out_path).unwrap();
    // The copy has more attributes filled in, so it survives.
    assert!(kept.contains("\"copy\"") && !kept.contains("\"obj03\""));
}

// ---------------------------------------------------------------------------
// simulate / evaluate

#[test]
fn simulate_is_byte_identical_under_a_seed() {
    let dir = TempDir::new().unwrap();
    let run_with = |seed: &str, name: &str| {
        let path = dir.path().join(name);
        let out = run(&[
            "simulate", "--n-objects", "8000", "--test-size", "2000", "--budget", "300", "--prevalence", "0.05",
            "--seed", seed, "--metrics", p(&path),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        (stdout(&out), std::fs::read(&path).unwrap())
    };
    let (table_a, a) = run_with("7", "a.json");
    let (table_b, b) = run_with("7", "b.json");
    let (_, c) = run_with("8", "c.json");
    assert_eq!(a, b);
    assert_eq!(table_a, table_b);
    assert_ne!(a, c);
    assert!(table_a.starts_with("strategy  labels  pos  neg  precision  recall    F1  accuracy\n"));
    assert_eq!(table_a.lines().count(), 3);

    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["spec"]["seed"], 7);
    let curves = report["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[0]["strategy"], "SMART");
    assert_eq!(curves[1]["strategy"], "RANDOM");
    assert!(curves.iter().all(|c| c["points"].as_array().is_some_and(|p| !p.is_empty())));
}

#[test]
fn evaluate_reports_metrics_and_names_bad_lines() {
    let dir = TempDir::new().unwrap();
    let pred = dir.path().join("p.tsv");
    let truth = dir.path().join("t.tsv");
    std::fs::write(&pred, "a\t2\nb\t1\n").unwrap();
    std::fs::write(&truth, "# id\tvalue\na\t4\nb\t1\n").unwrap();
    let report = dir.path().join("r.json");
    let out = run(&["evaluate", "--pred", p(&pred), "--truth", p(&truth), "--metric", "mnre", "--report", p(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "mnre\t0.750000\tn=2\n");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["metric"], "mnre");
    assert_eq!(json["value"], 0.75);

    std::fs::write(&pred, "a\t2\nb\t-1\n").unwrap();
    let out = run(&["evaluate", "--pred", p(&pred), "--truth", p(&truth), "--metric", "mnre"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("p.tsv line 2"), "{err}");
    assert!(err.contains("positive"), "{err}");

    // The same file is fine for a binary metric, where 0/1 style values are expected.
    std::fs::write(&pred, "a\t0.9\nb\t0.1\n").unwrap();
    std::fs::write(&truth, "a\t1\nb\t1\n").unwrap();
    let out = run(&["evaluate", "--pred", p(&pred), "--truth", p(&truth), "--metric", "prf"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("precision\t1.0000") && text.contains("recall\t0.5000"), "{text}");
}

// ---------------------------------------------------------------------------
// taxonomy-check

#[test]
fn taxonomy_check_validates_tree_and_catalog() {
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/materials_sample.tsv");
    let out = run(&["taxonomy-check", "--taxonomy", p(&sample)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("taxonomy ok: "));

    let dir = TempDir::new().unwrap();
    let cyclic = dir.path().join("cyclic.tsv");
    std::fs::write(&cyclic, "root\t\tRoot\t\na\tb\tA\t\nb\ta\tB\t\n").unwrap();
    assert_eq!(run(&["taxonomy-check", "--taxonomy", p(&cyclic)]).status.code(), Some(2));

    let mut recs = records();
    recs.truncate(3);
    recs[0].materials = Some(emlabel_core::datastore::Materials::Names(vec!["unobtainium".into()]));
    let catalog = write_catalog(dir.path(), recs, 2);
    let args = ["taxonomy-check", "--taxonomy", p(&sample), "--catalog", p(&catalog), "--dim", "2"];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("obj00: unmatched material tokens"), "{}", stdout(&out));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(run(&strict).status.code(), Some(2));
}

// ---------------------------------------------------------------------------
// embed / impute

#[test]
fn embed_train_and_apply_are_seeded() {
    let dir = TempDir::new().unwrap();
    // Attribute blocks need values for every object, so train on a complete catalog.
    let world = attribute_catalog(&AttributeSpec {
        n_objects: 120,
        seed: 2,
        ..AttributeSpec::default()
    })
    .unwrap();
    let path = dir.path().join("complete.jsonl");
    world.complete.write_jsonl(&path).unwrap();
    let dim = world.complete.dim().to_string();
    let train = |seed: &str, model: &Path| {
        let out = run(&[
            "embed", "train", "--catalog", p(&path), "--dim", &dim, "--model", p(model), "--bottleneck", "2",
            "--batch-size", "8", "--epochs", "20", "--lr-start", "1e-2", "--lr-end", "1e-4", "--seed", seed,
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        std::fs::read(model).unwrap()
    };
    let (m1, m2) = (dir.path().join("m1.bin"), dir.path().join("m2.bin"));
    assert_eq!(train("5", &m1), train("5", &m2));

    assert_ne!(train("6", &m2), std::fs::read(&m1).unwrap());

    let encoded = dir.path().join("encoded.jsonl");
    let out = run(&["embed", "apply", "--catalog", p(&path), "--dim", &dim, "--model", p(&m1), "--out", p(&encoded)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "encoded 120 objects to 2 dimensions\n");
    let out = run(&["ingest", "--catalog", p(&encoded), "--dim", "2"]);
    assert!(stdout(&out).contains("ingested 120 objects"));

    let out = run(&["embed", "apply", "--catalog", p(&path), "--dim", &dim, "--model", p(&path), "--out", p(&encoded)]);
    assert_eq!(out.status.code(), Some(2), "a catalog is not a model");

    // Missing attributes are a data error that points at imputation.
    let sparse = write_catalog(dir.path(), records(), 2);
    let m3 = dir.path().join("m3.bin");
    let out = run(&["embed", "train", "--catalog", p(&sparse), "--dim", "2", "--model", p(&m3)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("impute"), "{}", stderr(&out));
}

#[test]
fn impute_writes_catalog_and_report() {
    let dir = TempDir::new().unwrap();
    let world = attribute_catalog(&AttributeSpec {
        n_objects: 300,
        seed: 11,
        ..AttributeSpec::default()
    })
    .unwrap();
    let hidden = hide_mcar(&world.complete, 0.3, 11).unwrap();
    let path = dir.path().join("hidden.jsonl");
    hidden.write_jsonl(&path).unwrap();
    let dim = hidden.dim().to_string();
    let impute = |name: &str| {
        let (out_path, metrics) = (dir.path().join(format!("{name}.jsonl")), dir.path().join(format!("{name}.json")));
        let out = run(&[
            "impute", "--catalog", p(&path), "--dim", &dim, "--generations", "2", "--sample-taxonomies", "--out",
            p(&out_path), "--metrics", p(&metrics), "--seed", "3",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        (stdout(&out), std::fs::read(&out_path).unwrap(), std::fs::read(&metrics).unwrap())
    };
    let (table, cat_a, rep_a) = impute("a");
    let (_, cat_b, rep_b) = impute("b");
    assert_eq!((cat_a, rep_a.clone()), (cat_b, rep_b));
    for head in ["price", "mass", "materials", "category", "ratings", "weighted"] {
        assert!(table.contains(head), "{table}");
    }
    let report: serde_json::Value = serde_json::from_slice(&rep_a).unwrap();
    assert_eq!(report["generations"], 2);
    assert_eq!(report["heads"].as_array().unwrap().len(), 5);
}

// ---------------------------------------------------------------------------
// export / serve

#[test]
fn export_reads_projects_from_the_state_dir_env() {
    let dir = TempDir::new().unwrap();
    let path = write_catalog(dir.path(), records(), 2);
    let state = dir.path().join("state");
    std::fs::create_dir_all(&state).unwrap();
    let catalog = Arc::new(Catalog::from_records(records(), 2).unwrap());
    let ctx = Arc::new(EngineContext::new(Arc::clone(&catalog)).unwrap());
    let project = Project::create(&state, "baskets", 1).unwrap();
    let mut session = Session::new(project, ctx);
    let labels: Vec<LabelInput> = [(0, LabelValue::Negative), (5, LabelValue::Negative), (30, LabelValue::Positive), (35, LabelValue::Positive)]
        .into_iter()
        .map(|(i, v)| LabelInput::new(format!("obj{i:02}"), v, LabelMode::Active))
        .collect();
    session.advance_and_retrain(&labels, Utc::now()).unwrap();
    drop(session);

    let out = emlabel()
        .env("EMLABEL_STATE_DIR", &state)
        .args(["export", "--catalog", p(&path), "--dim", "2", "--project", "baskets"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 40);
    assert!(text.contains("obj30\t1.0\tPOSITIVE\n"), "{text}");
    assert!(text.contains("obj00\t0.0\tNEGATIVE\n"));
    let p39: f64 = text.lines().find(|l| l.starts_with("obj39")).unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    let p10: f64 = text.lines().find(|l| l.starts_with("obj10")).unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(p39 > p10);

    // Without the env var the default state dir has no such project.
    let elsewhere = dir.path().join("elsewhere");
    std::fs::create_dir_all(&elsewhere).unwrap();
    let out = emlabel()
        .current_dir(&elsewhere)
        .args(["export", "--catalog", p(&path), "--dim", "2", "--project", "baskets"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_answers_health_and_reports_a_busy_port() {
    let dir = TempDir::new().unwrap();
    let path = write_catalog(dir.path(), records(), 2);
    let state = dir.path().join("state");

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = run(&["serve", "--catalog", p(&path), "--dim", "2", "--bind", &addr, "--state-dir", p(&state)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(&addr), "{}", stderr(&out));

    let mut child = emlabel()
        .args(["serve", "--catalog", p(&path), "--dim", "2", "--bind", "127.0.0.1:0", "--state-dir", p(&state)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let live = line.trim().rsplit("http://").next().unwrap().to_string();
    assert!(line.starts_with("serving 40 objects"), "{line}");

    let mut stream = TcpStream::connect(&live).unwrap();
    write!(stream, "GET /health HTTP/1.1\r\nHost: {live}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
}
