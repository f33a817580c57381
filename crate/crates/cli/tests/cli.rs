use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stability-lab"))
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("STABILITY_LAB_THREADS", t),
        None => cmd.env_remove("STABILITY_LAB_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("sweep"));
}

#[test]
fn invalid_parameters_exit_one() {
    let out = run(&["estimate", "--n", "16", "--gamma", "2", "--l", "1"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("gamma <= L"), "{}", text(&out.stderr));
    assert!(out.stdout.is_empty());

    let out = run(&["estimate", "--n", "16,64", "--gamma", "0.1", "--l", "1"], None);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["estimate", "--n", "16", "--gamma", "0.1", "--l", "1", "--trials", "10"], None);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["trial", "--n", "4", "--gamma", "0.1", "--l", "1"], Some("lots"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn trial_prints_one_row() {
    let out = run(&["trial", "--n", "16", "--gamma-rule", "L/sqrt(n)", "--l", "1", "--seed", "3"], None);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let lines: Vec<_> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("16,0.25,1,3,"));
}

#[test]
fn certify_small_n_is_exhaustive() {
    let out = run(&["certify", "--n", "2", "--gamma", "0.5", "--l", "1"], None);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("2,0.5,1,exhaustive,0.5,"));
}

#[test]
fn sweep_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let args = |path: &str| {
        vec![
            "sweep".to_string(),
            "--n".into(),
            "16,64".into(),
            "--gamma-rule".into(),
            "L/sqrt(n)".into(),
            "--l".into(),
            "1".into(),
            "--trials".into(),
            "5000".into(),
            "--seed".into(),
            "11".into(),
            "--output".into(),
            path.into(),
        ]
    };
    let mut files = Vec::new();
    for (k, threads) in [Some("1"), Some("4"), None].into_iter().enumerate() {
        let path = dir.path().join(format!("sweep{k}.csv"));
        let a = args(path.to_str().unwrap());
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = run(&a, threads);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        files.push(std::fs::read(&path).unwrap());
    }
    assert!(files[0].starts_with(b"n,gamma,l,trials,seed,freq_gap_event"));
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn sweep_json_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("out.json");
    let svg = dir.path().join("out.svg");
    let out = run(
        &[
            "sweep", "--n", "16,32", "--gamma", "0.1", "--l", "1", "--trials", "2000", "--format", "json",
            "--output", json.to_str().unwrap(), "--plot", svg.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(parsed.as_array().map(Vec::len), Some(2));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}
