use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tfsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfsim")).current_dir(dir).env_remove("TFSIM_OUT").args(args).output().unwrap()
}

const PIPE: &str = "app name=p spares=1\n\
    process app=p id=src behavior=source(count=300)\n\
    process app=p id=out behavior=sink\n\
    channel app=p from=src to=out capacity=4\n";

fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("pipe.apps"), PIPE).unwrap();
    fs::write(
        d.path().join("run.toml"),
        "topology = \"2x2x2\"\nuntil = 2000000\napps = \"pipe.apps\"\n[stencil]\niterations = 2\n",
    )
    .unwrap();
    fs::write(d.path().join("kill.faults"), "kind=link_kill where=link(0,+x) when=at 1000\n").unwrap();
    d
}

#[test]
fn run_writes_artifacts_and_exits_clean() {
    let d = workspace();
    let o = tfsim(d.path(), &["run", "--config", "run.toml", "--fault", "kill.faults", "--out", "a"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.log", "trace.sha256", "metrics.csv", "links.csv", "faults.txt", "apps.txt", "outputs/p.out.txt"] {
        assert!(d.path().join("a").join(f).exists(), "missing {f}");
    }
    let out = fs::read_to_string(d.path().join("a/outputs/p.out.txt")).unwrap();
    assert_eq!(out.lines().count(), 300);

    let o = tfsim(d.path(), &["run", "--config", "run.toml", "--fault", "kill.faults", "--out", "b"]);
    assert_eq!(o.status.code(), Some(0));
    let a = fs::read(d.path().join("a/trace.log")).unwrap();
    let b = fs::read(d.path().join("b/trace.log")).unwrap();
    assert!(a == b, "reruns differ");

    let o = tfsim(d.path(), &["report", "a/trace.log", "--csv", "links.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("link_kill link(0,+x) at 1000: link_fault after"), "{text}");
    assert!(fs::read_to_string(d.path().join("links.csv")).unwrap().starts_with("link,packets"));
}

#[test]
fn seed_and_until_flags_override_the_config() {
    let d = workspace();
    let a = tfsim(d.path(), &["run", "--config", "run.toml", "--seed", "5", "--until", "0", "--out", "z"]);
    assert_eq!(a.status.code(), Some(0));
    let trace = fs::read_to_string(d.path().join("z/trace.log")).unwrap();
    assert!(trace.lines().all(|l| l.starts_with("t=0 ")));
}

#[test]
fn config_errors_exit_2() {
    let d = workspace();
    fs::write(d.path().join("bad.toml"), "topology = \"2x2\"\n").unwrap();
    assert_eq!(tfsim(d.path(), &["run", "--config", "bad.toml"]).status.code(), Some(2));
    assert_eq!(tfsim(d.path(), &["run", "--config", "run.toml", "--fault", "nope.faults"]).status.code(), Some(2));
    fs::write(d.path().join("far.faults"), "kind=tile_kill_host where=tile(99) when=at 5\n").unwrap();
    assert_eq!(tfsim(d.path(), &["run", "--config", "run.toml", "--fault", "far.faults"]).status.code(), Some(2));
    assert_eq!(tfsim(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert!(!d.path().join("tfsim-out").exists());
}

#[test]
fn losing_the_whole_fabric_exits_3() {
    let d = workspace();
    fs::write(d.path().join("long.apps"), PIPE.replace("spares=1", "").replace("count=300", "count=1000000")).unwrap();
    fs::write(d.path().join("small.toml"), "topology = \"2x1x1\"\nuntil = 3000000\napps = \"long.apps\"\n").unwrap();
    fs::write(
        d.path().join("all.faults"),
        "kind=tile_kill_host where=tile(1) when=at 100\nkind=tile_kill_dnp where=tile(0) when=at 100\n",
    )
    .unwrap();
    let o = tfsim(d.path(), &["run", "--config", "small.toml", "--fault", "all.faults", "--out", "x"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn validate_prints_canonical_forms_and_names_errors() {
    let d = workspace();
    let o = tfsim(d.path(), &["validate", "pipe.apps", "kill.faults", "run.toml"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("channel app=p from=src to=out capacity=4"), "{text}");
    fs::write(d.path().join("bad.faults"), "kind=link_kill where=link(0,+x) when=window 1..2\n").unwrap();
    let o = tfsim(d.path(), &["validate", "bad.faults"]);
    assert_eq!(o.status.code(), Some(2));
    let all = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    assert!(all.contains("bad.faults") && all.contains("line 1"), "{all}");
}
