use std::process::{Command, Output};

fn hdgoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdgoc"))
        .args(args)
        .output()
        .expect("run hdgoc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn study_csv_has_header_and_rows() {
    let o = hdgoc(&[
        "study",
        "--example",
        "1",
        "--k",
        "0",
        "--n",
        "2,4,8",
        "--deterministic",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "n,h_over_sqrt2,err_q,ord_q,err_p,ord_p,err_y,ord_y,err_z,ord_z,err_u,ord_u"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("2,"));
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[3], "-");
    let last: Vec<&str> = lines[3].split(',').collect();
    let ord_y: f64 = last[7].parse().unwrap();
    assert!((ord_y - 1.0).abs() < 0.3, "{ord_y}");
}

#[test]
fn deterministic_output_is_identical() {
    let args = [
        "study",
        "--example",
        "2",
        "--k",
        "1",
        "--n",
        "2,4",
        "--deterministic",
    ];
    let a = hdgoc(&args);
    let b = hdgoc(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn single_level_prints_dashes() {
    let o = hdgoc(&[
        "study",
        "--k",
        "0",
        "--n",
        "4",
        "--format",
        "markdown",
        "--deterministic",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("| order | - |"), "{text}");
}

#[test]
fn solve_reports_errors_and_residual() {
    let o = hdgoc(&[
        "solve",
        "--example",
        "3",
        "--k",
        "0",
        "--n",
        "2",
        "--deterministic",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for key in ["trace_unknowns", "err_q", "err_u", "relative_residual"] {
        assert!(text.contains(key), "{key} missing in {text}");
    }
    assert!(!text.contains("seconds"));
}

#[test]
fn verify_passes_on_small_mesh() {
    let o = hdgoc(&[
        "verify",
        "--example",
        "1",
        "--n",
        "2",
        "--k",
        "1",
        "--samples",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains(" 0 failed"));
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        vec!["study", "--n", "4,6"],
        vec!["study", "--n", "8,4"],
        vec!["solve", "--example", "7"],
        vec!["solve", "--n", "2,4"],
        vec!["solve", "--bogus"],
        vec!["study", "--format", "xml"],
    ] {
        let o = hdgoc(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = std::env::temp_dir().join(format!("hdgoc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        "# coarse run\nexample = 2\nk = 0\nn = 2,4\ndeterministic = true\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = hdgoc(&["study", "--config", cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 3);

    let o = hdgoc(&["study", "--config", cfg, "--n", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 2);

    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "colour = blue\n").unwrap();
    let o = hdgoc(&["study", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn output_file_receives_the_table() {
    let dir = std::env::temp_dir().join(format!("hdgoc-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("study.csv");
    let o = hdgoc(&[
        "study",
        "--n",
        "2,4",
        "--deterministic",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("n,h_over_sqrt2"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn system_dump_is_written() {
    let dir = std::env::temp_dir().join(format!("hdgoc-dump-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("system.txt");
    let o = hdgoc(&[
        "solve",
        "--n",
        "2",
        "--k",
        "0",
        "--dump-system",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let header: Vec<usize> = text
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(header[0], 16);
    assert!(text.contains("\nrhs\n"));
    std::fs::remove_dir_all(&dir).ok();
}
