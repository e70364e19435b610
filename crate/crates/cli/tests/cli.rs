use scurve_cli::manifest::{RunManifest, MANIFEST_NAME};
use scurve_core::data::write_dataset;
use scurve_core::simulation::{simulate_with, SimReport, SimSettings, SimTruth};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn scurve(args: &[&str]) -> i32 {
    scurve_cli::main_with_args(std::iter::once("scurve").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 5-subject simulated dataset and its schema.
fn toy_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let settings = SimSettings {
        n_subjects: 5,
        ..SimSettings::default()
    };
    let ds = simulate_with(SimTruth::Logistic, &settings, 21).unwrap();
    let data = dir.join("toy.csv");
    write_dataset(&ds, fs::File::create(&data).unwrap()).unwrap();
    let schema = dir.join("toy.cfg");
    fs::write(
        &schema,
        "covariates = x_binary:binary, x_continuous:continuous\nbiomarkers = y\n",
    )
    .unwrap();
    (data, schema)
}

fn read_dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let m = RunManifest::load(dir).unwrap();
    m.outputs
        .iter()
        .map(|f| (f.path.clone(), fs::read(dir.join(&f.path)).unwrap()))
        .collect()
}

#[test]
fn fit_writes_all_outputs_and_replays_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, schema) = toy_inputs(tmp.path());
    let out = tmp.path().join("fit");
    let code = scurve(&[
        "fit",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--out",
        s(&out),
        "--iters",
        "200",
        "--n-mc",
        "256",
        "--seed",
        "4",
    ]);
    assert_eq!(code, 0);
    for f in [
        "samples.csv",
        "samples.bin",
        "trace.csv",
        "curve_summary.csv",
        "milestones.csv",
        "effects.csv",
        "preprocess_report.csv",
        MANIFEST_NAME,
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.command, "fit");
    assert_eq!(m.seed, 4);
    assert_eq!(m.outputs.len(), 7);
    assert_eq!(m.inputs.len(), 2);
    assert_eq!(m.config["n_iter"], "200");
    assert_eq!(m.config["burn_in"], "100");
    assert_eq!(scurve(&["verify", s(&out)]), 0);

    let again = tmp.path().join("again");
    assert_eq!(scurve(&["replay", s(&out.join(MANIFEST_NAME)), "--out", s(&again)]), 0);
    assert_eq!(read_dir_files(&out), read_dir_files(&again));

    // tampering is detected
    fs::write(out.join("effects.csv"), "changed\n").unwrap();
    assert_eq!(scurve(&["verify", s(&out)]), 2);
}

#[test]
fn changed_input_blocks_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, schema) = toy_inputs(tmp.path());
    let out = tmp.path().join("pre");
    assert_eq!(
        scurve(&[
            "preprocess",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--out",
            s(&out)
        ]),
        0
    );
    assert!(out.join("preprocessed.csv").is_file());
    assert!(out.join("preprocess_report.csv").is_file());
    let before = fs::read(&data).unwrap();
    fs::write(&data, [before.as_slice(), b"S99,70,0,0.5,1.0\n"].concat()).unwrap();
    assert_eq!(scurve(&["replay", s(&out), "--out", s(&tmp.path().join("x"))]), 2);
}

#[test]
fn malformed_csv_exits_2_with_parse_class() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, schema) = toy_inputs(tmp.path());
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "subject_id,age,x_binary,x_continuous,y\nS1,old,1,0.2,3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_scurve"))
        .args([
            "fit",
            "--data",
            s(&bad),
            "--schema",
            s(&schema),
            "--out",
            s(&tmp.path().join("o")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with("error[PARSE]: "), "{stderr}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(scurve(&["fit", "--nonsense"]), 2);
    assert_eq!(scurve(&["report", "--out", "/nonexistent/x"]), 2);
    assert_eq!(
        scurve(&["simulate", "--variant", "QUADRATIC", "--out", "/nonexistent/x"]),
        2
    );
    let out = Command::new(env!("CARGO_BIN_EXE_scurve"))
        .args(["simulate", "--replicates", "0", "--out", "unused"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[USAGE]: "));
}

#[test]
fn bad_model_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, schema) = toy_inputs(tmp.path());
    let model = tmp.path().join("model.cfg");
    fs::write(&model, "n_basis = 24\nhyper_scale = -1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_scurve"))
        .args(["fit", "--data", s(&data), "--schema", s(&schema), "--model", s(&model)])
        .args(["--out", s(&tmp.path().join("o"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[CONFIG]: "));
}

fn simulate(out: &Path, seed: &str, variant: &str) -> i32 {
    scurve(&[
        "simulate",
        "--truth",
        "logistic",
        "--variant",
        variant,
        "--replicates",
        "1",
        "--subjects",
        "30",
        "--iters",
        "40",
        "--n-mc",
        "256",
        "--seed",
        seed,
        "--out",
        s(out),
    ])
}

fn dataset_digest(dir: &Path) -> String {
    let m = RunManifest::load(dir).unwrap();
    m.outputs
        .iter()
        .find(|f| f.path.starts_with("datasets/"))
        .unwrap()
        .sha256
        .clone()
}

#[test]
fn simulate_seeds_and_monotone_blanks() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(simulate(&a, "7", "MONOTONE_ONLY"), 0);
    assert_eq!(simulate(&b, "8", "MONOTONE_ONLY"), 0);
    assert_ne!(dataset_digest(&a), dataset_digest(&b));

    let text = fs::read_to_string(a.join("sim_report.csv")).unwrap();
    let rep = SimReport::read_csv(text.as_bytes(), "a").unwrap();
    assert_eq!(rep.rows.len(), 1);
    let row = &rep.rows[0];
    assert!(row.inflection_rmse.is_none() && row.inflection_coverage.is_none());
    assert!(row.curve_rmse.is_finite() && row.t50_rmse.is_finite());
    let cells: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((cells[6], cells[7]), ("", ""));
}

#[test]
fn report_merges_and_later_input_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let header = "truth,model,knot_range,n_replicates,curve_rmse,curve_coverage,inflection_rmse,inflection_coverage,t50_rmse,t50_coverage,n_failed\n";
    let first = tmp.path().join("r1.csv");
    let second = tmp.path().join("r2.csv");
    fs::write(
        &first,
        format!("{header}LOGISTIC,S_SHAPED,0-120,1,0.2,0.9,1.5,1,1.1,1,0\nASYMMETRIC,S_SHAPED,0-120,1,0.3,0.8,2.5,1,2.1,1,0\n"),
    )
    .unwrap();
    fs::write(
        &second,
        format!("{header}LOGISTIC,S_SHAPED,0-120,2,0.25,0.95,1.6,1,1.2,1,0\n"),
    )
    .unwrap();

    let single = tmp.path().join("single");
    assert_eq!(scurve(&["report", s(&first), "--out", s(&single)]), 0);
    let rows = |p: &Path| {
        SimReport::read_csv(fs::File::open(p.join("sim_report.csv")).unwrap(), "x")
            .unwrap()
            .rows
    };
    let input = SimReport::read_csv(fs::File::open(&first).unwrap(), "x").unwrap().rows;
    let mut sorted = input.clone();
    sorted.sort_by_key(|r| r.key());
    assert_eq!(rows(&single), sorted);

    let merged = tmp.path().join("merged");
    assert_eq!(scurve(&["report", s(&first), s(&second), "--out", s(&merged)]), 0);
    let m = rows(&merged);
    assert_eq!(m.len(), 2);
    let logit = m.iter().find(|r| r.truth == SimTruth::Logistic).unwrap();
    assert_eq!((logit.n_replicates, logit.curve_rmse), (2, 0.25));

    let wrong = tmp.path().join("wrong.csv");
    fs::write(&wrong, "truth,model\nLOGISTIC,S_SHAPED\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_scurve"))
        .args(["report", s(&first), s(&wrong), "--out", s(&tmp.path().join("w"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[SCHEMA]: "));
}

#[test]
fn chains_run_in_parallel_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, schema) = toy_inputs(tmp.path());
    let run = |dir: &Path, jobs: &str| {
        scurve(&[
            "fit",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--out",
            s(dir),
            "--iters",
            "30",
            "--n-mc",
            "128",
            "--chains",
            "3",
            "--jobs",
            jobs,
            "--variant",
            "MONOTONE_ONLY",
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&a, "1"), 0);
    assert_eq!(run(&b, "3"), 0);
    assert_eq!(read_dir_files(&a), read_dir_files(&b));
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 * 30);
    assert!(trace.lines().nth(61).unwrap().starts_with("2,0,"));
}
