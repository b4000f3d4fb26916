use std::path::Path;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["carcensus"];
    argv.extend_from_slice(args);
    carcensus_cli::run(&argv)
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn synth(dir: &Path, spec: &str) -> i32 {
    std::fs::write(dir.join("spec.json"), spec).unwrap();
    run(&["synth", "--spec", &s(&dir.join("spec.json")), "--out-dir", &s(&dir.join("data"))])
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(&["train", "--no-such-flag"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn spec_without_training_counties_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let code = synth(dir.path(), r#"{"seed": 1, "n_regions": 40, "counties": ["Dakota", "Essex", "York"]}"#);
    assert_eq!(code, 1);
    assert!(!dir.path().join("data").join("regions.csv").exists());
}

#[test]
fn malformed_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(synth(dir.path(), r#"{"seed": 1, "n_regions": 40, "colour": "red"}"#), 1);
    assert_eq!(synth(dir.path(), "not json"), 1);
}

#[test]
fn region_without_detections_is_listed_as_skipped() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(synth(dir.path(), r#"{"seed": 3, "n_regions": 30}"#), 0);
    let data = dir.path().join("data");
    // append a region that no detection refers to
    let mut regions = std::fs::read_to_string(data.join("regions.csv")).unwrap();
    let template = regions.lines().nth(1).unwrap().to_string();
    let fields: Vec<&str> = template.split(',').collect();
    regions.push_str(&format!("empty_region,{}\n", fields[1..].join(",")));
    std::fs::write(data.join("regions.csv"), regions).unwrap();

    let out = dir.path().join("features.csv");
    let code = run(&[
        "featurize",
        "--catalog",
        &s(&data.join("catalog.csv")),
        "--regions",
        &s(&data.join("regions.csv")),
        "--detections",
        &s(&data.join("detections.jsonl")),
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, 0);
    let skipped = std::fs::read_to_string(dir.path().join("skipped.csv")).unwrap();
    assert!(skipped.lines().any(|l| l == "empty_region,no_detections"), "{skipped}");
    let features = std::fs::read_to_string(&out).unwrap();
    assert!(!features.contains("empty_region"));
}

#[test]
fn sample_grid_without_roads_keeps_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("points.csv");
    let code = run(&[
        "sample-grid",
        "--center-lat",
        "42.36",
        "--center-lon",
        "-71.06",
        "--side-m",
        "200",
        "--spacing-m",
        "25",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 81);
}

#[test]
fn missing_input_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "ingest",
        "--catalog",
        &s(&dir.path().join("nope.csv")),
        "--regions",
        &s(&dir.path().join("nope2.csv")),
    ]);
    assert_eq!(code, 1);
}
