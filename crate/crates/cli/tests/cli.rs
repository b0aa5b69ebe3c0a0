use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smartpoll"))
}

fn model(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("run smartpoll")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_lines(s: &str) -> Vec<&str> {
    s.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect()
}

fn csv_value(s: &str, row: &str, col: usize) -> f64 {
    let line = data_lines(s).into_iter().find(|l| l.starts_with(row)).unwrap_or_else(|| panic!("no row {row} in\n{s}"));
    line.split(',').nth(col).unwrap().parse().unwrap()
}

// 6.280 is a table entry, not tau
#[allow(clippy::approx_constant)]
#[test]
fn moments_reproduce_the_two_queue_table() {
    let o = run(&["moments", "--csv", model("two_queue.model").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    let want = [
        ("queue length at arrival", 1.750, 3.375, 1e-3),
        ("queue length at departure", 1.750, 3.375, 1e-3),
        ("queue length at arbitrary", 1.1875, 3.375, 1e-3),
        ("waiting time mean", 3.750, 5.750, 1e-3),
        ("waiting time std dev", 5.093, 6.280, 5e-3),
    ];
    for (row, q1, q2, tol) in want {
        assert!((csv_value(&s, row, 1) - q1).abs() < tol, "{row}\n{s}");
        assert!((csv_value(&s, row, 2) - q2).abs() < tol, "{row}\n{s}");
    }
}

#[test]
fn analyze_prints_mean_waiting_times() {
    let o = run(&["analyze", "--csv", model("two_queue.model").to_str().unwrap()]);
    let s = stdout(&o);
    assert!(s.contains("# mean_cycle = 8"), "{s}");
    assert_eq!(csv_value(&s, "1,", 5), 3.75);
    assert_eq!(csv_value(&s, "2,", 5), 5.75);
}

#[test]
fn dump_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(&["analyze", "--dump-model", "--strategy", "1,2,X,3,3,1", model("routing_template.model").to_str().unwrap()]);
    assert!(first.status.success());
    let path = dir.path().join("dumped.model");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = run(&["analyze", "--dump-model", path.to_str().unwrap()]);
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).contains("arrival_rate = 0.6"));
    // the dumped file analyses to the same model digest
    let a = run(&["analyze", "--strategy", "1,2,X,3,3,1", model("routing_template.model").to_str().unwrap()]);
    let b = run(&["analyze", path.to_str().unwrap()]);
    let digest = |o: &Output| stdout(o).lines().find(|l| l.starts_with("# model:")).unwrap().to_string();
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn exit_codes_separate_parse_errors_from_instability() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.model");
    std::fs::write(&bad, "queues = 2\ndiscipline = exhaustive\nservice = exp(1)\nswitchover = exp(1)\nrates:\n V1 S1 V2\nQ1 1 1 1\nQ2 1 1 1\n").unwrap();
    let o = run(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 6") && err.contains("S2"), "{err}");

    let o = run(&["analyze", "--strategy", "1,2,2,3,3,1", "--arrival-rate", "2", model("routing_template.model").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stability margin"));

    let o = run(&["analyze", "--strategy", "1,2,2", model("routing_template.model").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["analyze", model("routing_template.model").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "template without strategy");
}

#[test]
fn simulation_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str, threads: &str| {
        let path = dir.path().join(name);
        let o = bin()
            .env("SMARTPOLL_THREADS", threads)
            .args(["simulate", "--csv", "--replications", "4", "--events", "20000", "--seed", "7", "-o"])
            .arg(&path)
            .arg(model("two_queue.model"))
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(path).unwrap()
    };
    let a = go("a.csv", "1");
    let b = go("b.csv", "2");
    assert_eq!(a, b);
    assert!(a.contains("# seed = 7"));
    assert!(a.lines().any(|l| l.starts_with("W1,")));
}

#[test]
fn transform_grid_starts_at_one() {
    let o = run(&["lst", "-t", "waiting", "-q", "1", "--points", "3", model("two_queue.model").to_str().unwrap()]);
    let s = stdout(&o);
    let rows = data_lines(&s);
    assert_eq!(rows[0], "argument,value,first_derivative,second_derivative");
    let first: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 1.0).abs() < 1e-12);
    assert!((first[2] + 3.75).abs() < 1e-5, "{s}");
    assert_eq!(rows.len(), 4);
}

#[test]
fn optimize_and_short_sweep() {
    let t = model("routing_template.model");
    let o = run(&["optimize", "--csv", t.to_str().unwrap()]);
    assert_eq!(data_lines(&stdout(&o))[1], "(1,2,2,3,3,1),3.5");
    let o = run(&["sweep", "--from", "0.8", "--to", "0.9", "--step", "0.05", t.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    let th = s.lines().find(|l| l.starts_with("# threshold")).expect("one switch");
    let x: f64 = th.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!((x - 0.84).abs() <= 0.01, "{th}");
    // three grid points, two profiles each
    assert_eq!(data_lines(&s).len(), 1 + 6);
}
