use std::path::Path;
use std::process::{Command, Output};

fn vowelmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vowelmark"))
        .args(args)
        .output()
        .expect("spawn vowelmark")
}

fn ok(args: &[&str]) -> Output {
    let out = vowelmark(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(vowelmark(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vowelmark(&["run", "--out", s(&out)]).status.code(), Some(2));
    let windowed = vowelmark(&["run", "--manifest", "m.csv", "--window", "3", "--part", "offset", "--out", s(&out)]);
    assert_eq!(windowed.status.code(), Some(2));
    assert_eq!(vowelmark(&["run", "--manifest", "m.csv", "--kind", "elbows", "--out", s(&out)]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let missing = dir.path().join("nope.csv");
    let r = vowelmark(&["run", "--manifest", s(&missing), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());
    assert_eq!(vowelmark(&["report", s(&missing)]).status.code(), Some(1));
}

#[test]
fn cohort_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cohort = d.join("cohort");
    let manifest = cohort.join("manifest.csv");
    ok(&["synth", "--speakers", "6", "--effect", "strong", "--seed", "3", "--out", s(&cohort)]);
    assert!(manifest.exists());
    assert!(cohort.join("planted_params.csv").exists());

    let features = d.join("features.csv");
    let lld = d.join("lld");
    ok(&[
        "extract", "--manifest", s(&manifest), "--scheme", "matched", "--window", "1", "--part", "offset",
        "--dump-lld", s(&lld), "--out", s(&features),
    ]);
    let header = std::fs::read_to_string(&features).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.starts_with("speaker_id,session"), "{header}");
    assert!(header.contains("mean_voiced_seg_len"));
    assert_eq!(std::fs::read_dir(&lld).unwrap().count(), 6 * 2 * 5);

    let vowels = d.join("vowels.json");
    let mpt = d.join("mpt.json");
    let onset = d.join("onset.json");
    let common = ["--seed", "5", "--n-boot", "200"];
    let run = |extra: &[&str], out: &Path| {
        let mut args = vec!["run"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--out", s(out)]);
        ok(&args);
    };
    run(&["--features", s(&features), "--scheme", "matched", "--window", "1", "--part", "offset"], &vowels);
    run(&["--features", s(&features), "--kind", "mpt"], &mpt);
    run(&["--manifest", s(&manifest), "--part", "onset"], &onset);

    let report = json(&vowels);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["sessions"].as_array().unwrap().len(), 12);
    let se = report["se_uar"].as_f64().unwrap();
    let ci = report["ci95"].as_array().unwrap();
    assert!(ci[0].as_f64().unwrap() <= se && se <= ci[1].as_f64().unwrap());
    assert_eq!(report["folds"].as_array().unwrap().len(), 6);

    // fixed seed: byte-identical rerun and replay
    let again = d.join("again.json");
    run(&["--features", s(&features), "--scheme", "matched", "--window", "1", "--part", "offset"], &again);
    assert_eq!(std::fs::read(&vowels).unwrap(), std::fs::read(&again).unwrap());
    let replayed = d.join("replayed.json");
    ok(&["run", "--replay", s(&onset), "--out", s(&replayed)]);
    assert_eq!(std::fs::read(&onset).unwrap(), std::fs::read(&replayed).unwrap());

    let fused = d.join("fused.json");
    ok(&["fuse", s(&vowels), s(&mpt), s(&onset), "--name", "A+B+C", "--out", s(&fused)]);
    let f = json(&fused);
    assert_eq!(f["system"], "A+B+C");
    assert_eq!(f["sessions"].as_array().unwrap().len(), 12);

    let plot = d.join("sp.svg");
    let table = ok(&["report", s(&vowels), s(&mpt), s(&fused)]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("A+B+C"), "{text}");
    assert_eq!(vowelmark(&["report", s(&vowels), s(&mpt), s(&fused), "--plot", s(&plot)]).status.code(), Some(2));
    ok(&["report", s(&vowels), s(&fused), "--plot", s(&plot)]);
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("<svg"));

    let ranked = d.join("rank.json");
    ok(&["rank", "--features", s(&features), "--kind", "mpt", "--top-k", "1", "--out", s(&ranked)]);
    let r = json(&ranked);
    let top = r["feature_ranking"].as_array().unwrap();
    assert_eq!(top.len(), 1);
    assert_eq!(top[0]["feature"], "mpt_seconds");
}
