use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn alrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alrt"))
        .args(args)
        .output()
        .unwrap()
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

fn synth(dir: &Path, patients: usize, seed: u64) {
    let o = alrt(&[
        "synth",
        "--out",
        p(dir),
        "--patients",
        &patients.to_string(),
        "--seed",
        &seed.to_string(),
        "--positive-rate",
        "0.1",
        "--max-hours",
        "40",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn ingest_reports_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 25, 1);
    let jsonl = tmp.path().join("cohort.jsonl");
    let o = alrt(&["ingest", "--data", p(&data), "--out", p(&jsonl)]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("25 retained ("), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(&jsonl).unwrap().lines().count(), 25);
}

#[test]
fn ingest_of_empty_directory_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let o = alrt(&["ingest", "--data", p(tmp.path())]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("0 retained (0 septic)"));
}

#[test]
fn corrupt_file_fails_with_parse_code() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 3, 1);
    let victim = tmp.path().join("p000002.psv");
    let text = fs::read_to_string(&victim)
        .unwrap()
        .replacen("|0\n", "|zero\n", 1);
    fs::write(&victim, text).unwrap();
    let o = alrt(&["ingest", "--data", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p000002.psv"), "{}", stderr(&o));
}

#[test]
fn bad_configuration_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 10, 1);
    let o = alrt(&["experiment", "--data", p(tmp.path()), "--method", "random"]);
    assert_eq!(o.status.code(), Some(3));
    let o = alrt(&["experiment", "--data", p(&tmp.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(3));
    let manifest = tmp.path().join("m.toml");
    fs::write(&manifest, "seeed = 3\n").unwrap();
    let o = alrt(&["experiment", "--manifest", p(&manifest)]);
    assert_eq!(o.status.code(), Some(3));
    let o = alrt(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(64));
    let o = alrt(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 5, 1);
    for cmd in ["evaluate", "explain"] {
        let mut args = vec![
            cmd,
            "--checkpoint",
            "nope.json",
            "--preprocessor",
            "nope.json",
            "--data",
            p(tmp.path()),
        ];
        if cmd == "explain" {
            args.extend(["--out", "unused"]);
        }
        let o = alrt(&args);
        assert!(!o.status.success());
        assert!(stderr(&o).contains("nope.json"));
    }
}

#[test]
fn diverging_training_reports_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 120, 5);
    let out = tmp.path().join("run");
    let o = alrt(&[
        "experiment",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--method",
        "lc",
        "--learning-rate",
        "1e308",
        "--gradient-clip",
        "0",
        "--hidden-dim",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("fold"), "{}", stderr(&o));
}

#[test]
fn experiment_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 120, 5);
    let out = tmp.path().join("run");
    let manifest = tmp.path().join("experiment.toml");
    fs::write(
        &manifest,
        format!(
            "dataset_path = {:?}\noutput_dir = {:?}\nseed = 3\nsampling_method = \"entropy\"\nhidden_dim = 6\n",
            p(&data),
            p(&out)
        ),
    )
    .unwrap();

    // Flags override manifest keys.
    let o = alrt(&["experiment", "--manifest", p(&manifest), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 4);
    assert_eq!(echoed["hidden_dim"], 6);

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let ids: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        ids,
        ["RNN_20e", "RNN_40e", "RNN_60e", "RNN_80e", "RNN_100e", "RNN"]
    );
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.lines().nth(3).unwrap().starts_with("entropy,0.6,"));
    for fold in 0..5 {
        let dir = out.join(format!("fold{fold}"));
        assert!(dir.join("preprocessor.json").is_file());
        assert!(dir.join("transfers_entropy.csv").is_file());
        assert_eq!(fs::read_dir(dir.join("checkpoints")).unwrap().count(), 6);
    }
    let first = snapshot(&out);
    let o = alrt(&[
        "--sequential",
        "experiment",
        "--manifest",
        p(&manifest),
        "--seed",
        "4",
    ]);
    assert!(o.status.success());
    assert_eq!(snapshot(&out), first);

    let fold0 = out.join("fold0");
    let inputs = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = [
            "--checkpoint",
            p(&fold0.join("checkpoints/RNN_100e.json")),
            "--preprocessor",
            p(&fold0.join("preprocessor.json")),
            "--data",
            p(&data),
            "--folds",
            p(&out.join("folds.csv")),
            "--fold",
            "0",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd.to_string()];
        args.extend(inputs(extra));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        alrt(&refs)
    };

    // The fold-0 row for RNN_100e must match what the experiment recorded.
    let o = run("evaluate", &["--model-id", "RNN_100e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recorded = fs::read_to_string(fold0.join("metrics.csv")).unwrap();
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(recorded.lines().any(|l| l == row), "{row}\n{recorded}");

    let ex = tmp.path().join("explain");
    let o = run(
        "explain",
        &["--out", p(&ex), "--repeats", "2", "--seed", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = snapshot(&ex);
    assert_eq!(a.len(), 3);
    let o = run(
        "explain",
        &["--out", p(&ex), "--repeats", "2", "--seed", "1"],
    );
    assert!(o.status.success());
    assert_eq!(snapshot(&ex), a);

    let o = alrt(&["report", "--run", p(&out)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("RNN_60e"));
    assert!(text.starts_with("seed 4 |"));
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), text);
}
