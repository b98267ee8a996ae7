use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fuma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuma")).args(args).env_remove("FUMA_JOBS").output().expect("spawn fuma")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Cohort {
    _dir: tempfile::TempDir,
    dir: PathBuf,
    events: PathBuf,
    catalog: PathBuf,
    outcomes: PathBuf,
    truth: PathBuf,
}

fn simulate(n: usize, seed: u64) -> Cohort {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let c = Cohort {
        events: dir.join("events.tsv"),
        catalog: dir.join("catalog.csv"),
        outcomes: dir.join("outcomes.csv"),
        truth: dir.join("truth.csv"),
        dir,
        _dir: tmp,
    };
    let n = n.to_string();
    let seed = seed.to_string();
    let out = fuma(&[
        "simulate",
        "--seed",
        &seed,
        "--n-students",
        &n,
        "--separation",
        "2",
        "--out",
        s(&c.events),
        "--catalog",
        s(&c.catalog),
        "--outcomes",
        s(&c.outcomes),
        "--truth",
        s(&c.truth),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    c
}

fn evaluate(c: &Cohort, report: &Path) -> Output {
    fuma(&[
        "evaluate",
        "--events",
        s(&c.events),
        "--catalog",
        s(&c.catalog),
        "--outcomes",
        s(&c.outcomes),
        "--truth",
        s(&c.truth),
        "--weeks",
        "2,3",
        "--folds",
        "3",
        "--inner-folds",
        "2",
        "--k-range",
        "2..4",
        "--population",
        "12",
        "--generations",
        "20",
        "--seed",
        "5",
        "--report",
        s(report),
    ])
}

#[test]
fn evaluate_is_byte_reproducible_and_leaves_inputs_alone() {
    let c = simulate(160, 11);
    let before: Vec<Vec<u8>> = [&c.events, &c.catalog, &c.outcomes, &c.truth].iter().map(|p| fs::read(p).unwrap()).collect();
    let r1 = c.dir.join("r1.txt");
    let r2 = c.dir.join("r2.txt");
    let o1 = evaluate(&c, &r1);
    assert!(o1.status.success(), "{}", String::from_utf8_lossy(&o1.stderr));
    let o2 = evaluate(&c, &r2);
    assert!(o2.status.success());
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    let after: Vec<Vec<u8>> = [&c.events, &c.catalog, &c.outcomes, &c.truth].iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(c.dir.join("r1.txt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    let out_digest = &manifest["outputs"][0];
    assert_eq!(out_digest["bytes"].as_u64().unwrap(), fs::metadata(&r1).unwrap().len());
}

#[test]
fn plotdata_active_series_matches_outcomes() {
    let c = simulate(120, 3);
    let report = c.dir.join("r.txt");
    let o = fuma(&[
        "evaluate",
        "--events",
        s(&c.events),
        "--catalog",
        s(&c.catalog),
        "--outcomes",
        s(&c.outcomes),
        "--weeks",
        "2",
        "--folds",
        "0",
        "--k-range",
        "2..3",
        "--population",
        "10",
        "--generations",
        "10",
        "--seed",
        "1",
        "--report",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = fuma(&["plotdata", "--report", s(&report), "--figure", "active-per-week"]);
    assert!(series.status.success());
    let text = String::from_utf8(series.stdout).unwrap();

    let mut last_weeks = Vec::new();
    let mut rdr = csv::Reader::from_path(&c.outcomes).unwrap();
    let hdr = rdr.headers().unwrap().clone();
    let col = hdr.iter().position(|h| h == "last_active_week").unwrap();
    for rec in rdr.records() {
        last_weeks.push(rec.unwrap()[col].parse::<u32>().unwrap());
    }
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("week,active_count"));
    let mut seen = 0;
    for l in lines {
        let (w, n) = l.split_once(',').unwrap();
        let w: u32 = w.parse().unwrap();
        let expect = last_weeks.iter().filter(|&&lw| lw >= w).count();
        assert_eq!(n.parse::<usize>().unwrap(), expect, "week {w}");
        seen += 1;
    }
    assert_eq!(seen, 6);
}

#[test]
fn discover_classify_intervene_round() {
    let c = simulate(150, 8);
    let feats = c.dir.join("f.csv");
    let model = c.dir.join("m.json");
    let o = fuma(&[
        "featurize",
        "--events",
        s(&c.events),
        "--catalog",
        s(&c.catalog),
        "--week",
        "2",
        "--outcomes",
        s(&c.outcomes),
        "--out",
        s(&feats),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = fuma(&[
        "discover",
        "--features",
        s(&feats),
        "--outcomes",
        s(&c.outcomes),
        "--k",
        "2",
        "--seed",
        "4",
        "--population",
        "10",
        "--generations",
        "20",
        "--out",
        s(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(c.dir.join("m.json.manifest.json").exists());

    let o = fuma(&["classify", "--model", s(&model), "--features", s(&feats)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("student_id,assigned,score_per_cluster,ambiguity,matched_rule_ids"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), fs::read_to_string(&feats).unwrap().lines().count() - 1);
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f.len(), 5);
        assert!(f[1] == "0" || f[1] == "1" || f[1] == "unclassified");
        assert_eq!(f[2].split(';').count(), 2);
    }

    let saved: serde_json::Value = serde_json::from_slice(&fs::read(&model).unwrap()).unwrap();
    let labels = saved["labeling"]["labels"].clone();
    let o = fuma(&["intervene", "--model", s(&model), "--features", s(&feats)]);
    assert!(o.status.success());
    for l in String::from_utf8(o.stdout).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(!v["message"].as_str().unwrap().is_empty());
        assert_eq!(labels[v["assigned"].as_u64().unwrap() as usize], "Low");
        assert!(matches!(v["direction"].as_str(), Some("Increase" | "Decrease")));
    }

    let o = fuma(&["rules", "--model", s(&model)]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("c0r0"));
}

#[test]
fn usage_errors_exit_2() {
    let c = simulate(40, 1);
    let base = ["--features", s(&c.events), "--outcomes", s(&c.outcomes), "--out"];
    let model = c.dir.join("m.json");

    let mut args = vec!["discover"];
    args.extend(base);
    args.extend([s(&model), "--seed", "1", "--k-range", "1..3"]);
    assert_eq!(fuma(&args).status.code(), Some(2));

    let mut args = vec!["discover"];
    args.extend(base);
    args.push(s(&model));
    assert_eq!(fuma(&args).status.code(), Some(2), "missing --seed");

    let missing = c.dir.join("nope.json");
    assert_eq!(fuma(&["rules", "--model", s(&missing)]).status.code(), Some(2));
    assert_eq!(fuma(&["--jobs", "0", "rules", "--model", s(&missing)]).status.code(), Some(2));
    assert!(!model.exists());
}

#[test]
fn bad_data_exits_1() {
    let c = simulate(40, 1);
    let bad = c.dir.join("bad.json");
    fs::write(&bad, "{ not a model").unwrap();
    let o = fuma(&["rules", "--model", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let broken = c.dir.join("broken.tsv");
    fs::write(&broken, "s1\tv01\tPLAY\tnot-a-time\t0\t\t\n").unwrap();
    let o = fuma(&["ingest", "--events", s(&broken), "--catalog", s(&c.catalog), "--strict"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_accepts_simulated_log_and_dumps_sessions() {
    let c = simulate(30, 2);
    let dump = c.dir.join("s.jsonl");
    let o = fuma(&["ingest", "--events", s(&c.events), "--catalog", s(&c.catalog), "--strict", "--dump-sessions", s(&dump)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("rejected 0"));
    let first = fs::read_to_string(&dump).unwrap();
    let v: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(v["sessions"].is_array());
}

#[test]
fn simulate_is_deterministic() {
    let a = simulate(50, 9);
    let b = simulate(50, 9);
    assert_eq!(fs::read(&a.events).unwrap(), fs::read(&b.events).unwrap());
    assert_eq!(fs::read(&a.outcomes).unwrap(), fs::read(&b.outcomes).unwrap());
}
