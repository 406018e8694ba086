use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_geobridge");

fn run(root: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(root)
        .env_remove("GEOBRIDGE_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> PathBuf {
    let out = run(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn kv(path: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn get(kv: &[(String, String)], key: &str) -> Option<String> {
    kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
}

const TINY: &[&str] = &[
    "--set",
    "target.kind=\"uniform\"",
    "--set",
    "target.count=400",
    "--set",
    "train.iterations=30",
    "--set",
    "train.batch_size=32",
    "--set",
    "train.hidden=[16,16]",
    "--set",
    "sample.count=200",
    "--set",
    "sample.steps=10",
    "--set",
    "seed=5",
];

fn with(cmd: &[&str], extra: &[&str]) -> Vec<String> {
    cmd.iter().chain(TINY).chain(extra).map(|s| s.to_string()).collect()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn eval_identical_files_gives_zero_w2() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = ok(tmp.path(), &refs(&with(&["datagen"], &[])));
    let target = gen.join("target.csv");
    let t = target.to_str().unwrap();
    let ev = ok(tmp.path(), &refs(&with(&["eval", "--generated", t, "--truth", t], &[])));
    let m = kv(&ev.join("metrics.txt"));
    let w2: f64 = get(&m, "w2").unwrap().parse().unwrap();
    assert_eq!(w2, 0.0);
    // identical samples make every nearest distance zero
    assert_eq!(get(&m, "flag.kl").as_deref(), Some("degenerate"));
    assert!(ev.join("VERSION").exists());
    assert!(ev.join("config.toml").exists());
}

#[test]
fn uniform_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = ok(tmp.path(), &refs(&with(&["datagen"], &[])));
    let target = gen.join("target.csv");
    let tr = ok(
        tmp.path(),
        &refs(&with(&["train", "--data", target.to_str().unwrap()], &[])),
    );
    assert!(tr.join("velocity.ckpt").exists());
    assert!(tr.join("score.ckpt").exists());
    let trace = std::fs::read_to_string(tr.join("loss_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,"));

    let sa = ok(
        tmp.path(),
        &refs(&with(
            &["sample", "--checkpoint", tr.to_str().unwrap()],
            &["--set", "sample.trajectories=2"],
        )),
    );
    let samples = std::fs::read_to_string(sa.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 201);
    assert!(sa.join("trajectories/path_00001.csv").exists());

    let ev = ok(
        tmp.path(),
        &refs(&with(
            &[
                "eval",
                "--generated",
                sa.join("samples.csv").to_str().unwrap(),
                "--truth",
                target.to_str().unwrap(),
                "--checkpoint",
                tr.to_str().unwrap(),
            ],
            &["--set", "eval.nll_steps=5"],
        )),
    );
    let m = kv(&ev.join("metrics.txt"));
    let w2: f64 = get(&m, "w2").unwrap().parse().unwrap();
    assert!(w2.is_finite() && w2 > 0.0);
    assert!(get(&m, "kl").is_some());
    let nll: f64 = get(&m, "mean_nll").unwrap().parse().unwrap();
    assert!(nll.is_finite());
}

#[test]
fn grw_with_zero_epsilon_matches_ode() {
    let tmp = tempfile::tempdir().unwrap();
    let tr = ok(tmp.path(), &refs(&with(&["train"], &["--set", "train.score=false"])));
    let c = tr.to_str().unwrap();
    let ode = ok(
        tmp.path(),
        &refs(&with(
            &["sample", "--checkpoint", c],
            &["--set", "sample.scheme=\"ode-euler\""],
        )),
    );
    let grw = ok(
        tmp.path(),
        &refs(&with(
            &["sample", "--checkpoint", c],
            &["--set", "sample.scheme=\"grw\"", "--set", "sample.epsilon=0.0"],
        )),
    );
    let info = kv(&grw.join("info.txt"));
    assert_eq!(get(&info, "degenerate_epsilon").as_deref(), Some("true"));
    assert_eq!(
        std::fs::read(ode.join("samples.csv")).unwrap(),
        std::fs::read(grw.join("samples.csv")).unwrap()
    );
}

#[test]
fn stochastic_sampling_without_score_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let tr = ok(tmp.path(), &refs(&with(&["train"], &["--set", "train.score=false"])));
    let args = with(
        &["sample", "--checkpoint", tr.to_str().unwrap()],
        &["--set", "sample.scheme=\"esde-heun\"", "--set", "sample.epsilon=0.1"],
    );
    let before = std::fs::read_dir(tmp.path()).unwrap().count();
    let out = run(tmp.path(), &refs(&args));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ConfigError: "));
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), before);
}

#[test]
fn bad_config_exits_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "route = \"s2\"\n[train]\nactivation = \"relu\"\nscore = true\n").unwrap();
    let root = tmp.path().join("runs");
    let out = run(&root, &["datagen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("ConfigError: "), "{err}");
    assert!(!root.exists() || std::fs::read_dir(&root).unwrap().count() == 0);

    let out = run(&root, &["datagen", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ConfigError: "));

    let out = run(
        &root,
        &["eval", "--generated", "/nonexistent.csv", "--truth", "/nonexistent.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("IoError: "));
}

#[test]
fn rerun_from_resolved_config_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok(tmp.path(), &refs(&with(&["train"], &[])));
    let cfg = a.join("config.toml");
    let b = ok(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_ne!(a, b);
    for f in ["config.toml", "velocity.ckpt", "score.ckpt", "loss_trace.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let version = std::fs::read_to_string(a.join("VERSION")).unwrap();
    assert!(version.starts_with("geobridge "));
}

#[test]
fn so3_route_datagen_and_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = [
        "--set",
        "route=\"so3-es\"",
        "--set",
        "target.kind=\"wrapped-gaussian\"",
        "--set",
        "train.score=false",
    ];
    let gen = ok(tmp.path(), &refs(&with(&["datagen"], &extra)));
    let header = std::fs::read_to_string(gen.join("target.csv")).unwrap();
    assert!(header.starts_with("c0,c1,c2,c3,c4,c5,c6,c7,c8\n"));
    let tr = ok(tmp.path(), &refs(&with(&["train"], &extra)));
    let sa = ok(
        tmp.path(),
        &refs(&with(&["sample", "--checkpoint", tr.to_str().unwrap()], &extra)),
    );
    assert!(sa.join("samples_s5.csv").exists());
    let s = std::fs::read_to_string(sa.join("samples.csv")).unwrap();
    assert!(s.starts_with("c0,c1,c2,c3,c4,c5,c6,c7,c8\n"));
}

#[test]
fn bench_writes_slopes() {
    let tmp = tempfile::tempdir().unwrap();
    let b = ok(
        tmp.path(),
        &[
            "bench",
            "--set",
            "bench.steps=[4,8,16,32]",
            "--set",
            "bench.grw_steps=[2,4,8,16]",
            "--set",
            "bench.grw_paths=10000",
        ],
    );
    let m = kv(&b.join("metrics.txt"));
    for s in ["esde-em", "esde-heun", "grw"] {
        let v: f64 = get(&m, &format!("slope.{s}")).unwrap().parse().unwrap();
        assert!(v.is_finite(), "{s}");
    }
    let csv = std::fs::read_to_string(b.join("bench.csv")).unwrap();
    assert!(csv.starts_with("scheme,kind,dt,error\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
}

#[test]
fn version_flag() {
    let out = Command::new(BIN).arg("--version").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}
