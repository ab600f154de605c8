use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brinkman-hdg"))
        .args(args)
        .env("BRINKMAN_HDG_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

fn field(line: &str, i: usize) -> f64 {
    line.split(',').nth(i).unwrap().parse().unwrap()
}

#[test]
fn quad_table_matches_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let md = dir.path().join("t.md");
    let o = run(&[
        "solve",
        "--test",
        "1",
        "--cells",
        "quad",
        "--k",
        "1",
        "--levels",
        "3",
        "--csv",
        csv.to_str().unwrap(),
        "--markdown",
        md.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("level,n_ele,n_global,n_local,err_L"));
    assert!(!text.contains('\r'));
    // 256 cells: L, u, p, u*
    let row = lines[2];
    assert_eq!(row.split(',').nth(1), Some("256"));
    for (col, expect) in [(4, 1.286e-1), (6, 4.211e-3), (8, 1.559e-2), (10, 7.790e-4)] {
        let got = field(row, col);
        assert!(
            (got - expect).abs() <= 0.01 * expect,
            "column {col}: {got} vs {expect}"
        );
    }
    assert!(
        row.contains("e-01,") && row.contains("e-03,"),
        "C-style exponents: {row}"
    );
    let markdown = fs::read_to_string(&md).unwrap();
    assert_eq!(markdown.lines().count(), 5);
    assert!(stdout(&o).contains(&markdown));
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
    for p in &paths {
        let o = run(&[
            "solve",
            "--test",
            "3",
            "--cells",
            "tri",
            "--k",
            "1",
            "--n",
            "4,8",
            "--csv",
            p.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&paths[0]).unwrap(), fs::read(&paths[1]).unwrap());
}

#[test]
fn oracle_check_reports_small_discrepancy() {
    let o = run(&[
        "solve",
        "--test",
        "1",
        "--cells",
        "tri",
        "--k",
        "2",
        "--levels",
        "2",
        "--check-oracle",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let line = out
        .lines()
        .find(|l| l.starts_with("oracle discrepancy"))
        .expect("oracle line");
    let max: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(max <= 1e-10, "{line}");
}

#[test]
fn custom_case_lowest_degree_smoke() {
    let o = run(&[
        "solve", "--nu", "1", "--gamma", "1", "--m", "2", "--cells", "quad", "--k", "0",
        "--levels", "1",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows = out
        .lines()
        .filter(|l| l.starts_with("|") && !l.starts_with("|-"))
        .count();
    assert_eq!(rows, 2, "header plus one row:\n{out}");
}

#[test]
fn solution_dump_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump.txt");
    let o = run(&[
        "solve",
        "--test",
        "1",
        "--cells",
        "tri",
        "--k",
        "1",
        "--n",
        "2",
        "--dump",
        dump.to_str().unwrap(),
        "--dump-samples",
        "4",
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&dump).unwrap();
    assert!(text.starts_with("# solution kind=tri k=1 cells=8"));
    let samples = text
        .lines()
        .skip_while(|l| !l.starts_with("# x y"))
        .skip(1)
        .count();
    assert_eq!(samples, 25);
}

#[test]
fn bad_flags_exit_with_usage() {
    for args in [
        vec!["solve", "--bogus"],
        vec![
            "solve", "--test", "4", "--cells", "quad", "--k", "1", "--levels", "1",
        ],
        vec![
            "solve", "--test", "1", "--cells", "hex", "--k", "1", "--levels", "1",
        ],
        vec![
            "solve", "--test", "1", "--cells", "tri", "--k", "0", "--levels", "1",
        ],
        vec!["solve", "--cells", "quad", "--k", "1", "--levels", "1"],
        vec!["solve", "--test", "1", "--cells", "quad", "--k", "1"],
        vec![
            "solve", "--nu", "-1", "--gamma", "1", "--m", "2", "--cells", "quad", "--k", "1",
            "--levels", "1",
        ],
        vec![
            "solve", "--test", "1", "--nu", "1", "--gamma", "1", "--m", "2", "--cells", "quad",
            "--k", "1", "--levels", "1",
        ],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(
            String::from_utf8_lossy(&o.stderr).contains("Usage"),
            "{args:?}"
        );
    }
}

#[test]
fn help_lists_every_flag() {
    let o = run(&["solve", "--help"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for flag in [
        "--test",
        "--nu",
        "--gamma",
        "--m",
        "--cells",
        "--k",
        "--levels",
        "--n",
        "--split",
        "--quad-degree",
        "--check-oracle",
        "--csv",
        "--markdown",
        "--dump",
        "--dump-samples",
        "--any-k",
    ] {
        assert!(out.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn invalid_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_brinkman-hdg"))
        .args([
            "solve", "--test", "1", "--cells", "quad", "--k", "1", "--levels", "1",
        ])
        .env("BRINKMAN_HDG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_one() {
    let o = run(&[
        "solve", "--test", "1", "--cells", "quad", "--k", "12", "--any-k", "--levels", "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solve failed (quad cells, k = 12)"));
}
