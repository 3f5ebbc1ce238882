use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deqnc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deqnc")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
name = "cli-small"
k = 3
d = 6
n = 4
steps = 200
log_every = 50
"#;

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.toml"), SMALL).unwrap();
    let o = deqnc(&["run", "small.toml", "--out", "out", "--seed", "4"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    for f in ["config.toml", "report.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for head in ["explicit", "deq"] {
        for f in ["trace.csv", "features.csv", "gram_samples.csv", "gram_class_means.csv"] {
            assert!(out.join(head).join(f).is_file(), "missing {head}/{f}");
        }
    }
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"seed\": 4"));
    assert!(stdout(&o).contains("cli-small"));

    let quiet = deqnc(&["--quiet", "run", "small.toml", "--out", "out2"], tmp.path());
    assert_eq!(code(&quiet), 0);
    assert!(stdout(&quiet).is_empty());
}

#[test]
fn export_gram_rebuilds_the_gram_files() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.toml"), SMALL).unwrap();
    assert_eq!(code(&deqnc(&["run", "small.toml", "--out", "out"], tmp.path())), 0);
    let target = tmp.path().join("out/explicit/gram_samples.csv");
    let before = fs::read(&target).unwrap();
    fs::remove_file(&target).unwrap();
    let o = deqnc(&["export-gram", "out"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&target).unwrap(), before);

    let missing = deqnc(&["export-gram", "nowhere"], tmp.path());
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere"));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "name = \"x\"\nk = 3\nn = 2\nbogus = 1\n").unwrap();
    let o = deqnc(&["run", "bad.toml"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    fs::write(tmp.path().join("neg.toml"), "name = \"x\"\nk = 3\nn = 2\nlearning_rate = -1.0\n").unwrap();
    assert_eq!(code(&deqnc(&["run", "neg.toml"], tmp.path())), 2);
    assert_eq!(code(&deqnc(&["bound-check", "--k", "1", "--ew", "1", "--eh", "1"], tmp.path())), 2);
}

#[test]
fn solver_failure_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL}head = \"deq\"\ndeq_path = \"iterative\"\nsolver_epsilon = 1e-14\nsolver_t_max = 1\nsolver_on_failure = \"error\"\n"
    );
    fs::write(tmp.path().join("strict.toml"), text).unwrap();
    let o = deqnc(&["run", "strict.toml", "--out", "out"], tmp.path());
    assert_eq!(code(&o), 4);
    assert!(tmp.path().join("out/FAILED").is_file());
}

#[test]
fn divergent_head_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // a DEQ budget of 1.5 lets the weight reach σ_max ≥ 1 under a large step
    let text = format!("{SMALL}head = \"deq\"\ndeq_e_h = 1.5\nlearning_rate = 50.0\n");
    fs::write(tmp.path().join("wild.toml"), text).unwrap();
    let o = deqnc(&["run", "wild.toml", "--out", "out"], tmp.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_grid_and_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = deqnc(&["sweep", "grid", "--write-grid"], tmp.path());
    assert_eq!(code(&o), 0);
    let written = fs::read_dir(tmp.path().join("grid")).unwrap().count();
    assert_eq!(written, 9);

    fs::create_dir(tmp.path().join("two")).unwrap();
    fs::write(tmp.path().join("two/a.toml"), SMALL).unwrap();
    fs::write(tmp.path().join("two/b.toml"), SMALL.replace("cli-small", "cli-other").replace("k = 3", "k = 2")).unwrap();
    let o = deqnc(&["sweep", "two", "--out", "root"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(tmp.path().join("root/sweep.json")).unwrap();
    assert!(summary.contains("cli-small") && summary.contains("cli-other"));
    assert!(tmp.path().join("root/cli-other/report.json").is_file());
}

#[test]
fn analytic_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let o = deqnc(&["etf-check", "--k", "5", "--d", "8", "--alpha", "2", "--seed", "3"], tmp.path());
    assert_eq!(code(&o), 0);
    let o = deqnc(&["bound-check", "--k", "4", "--ew", "1", "--eh", "1"], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("deq_bound <= explicit_bound: true"));
    let o = deqnc(&["lemma-fuzz", "--draws", "2000", "--seed", "9"], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("violations 0"));
    assert_ne!(code(&deqnc(&["etf-check", "--k", "5", "--d", "3"], tmp.path())), 0);
}
