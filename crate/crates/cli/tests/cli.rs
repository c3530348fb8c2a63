use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const OU: &str = "dimension = 1\n\n[diffusion]\nq = 1.0\n\n[drift]\npreset = \"ou\"\ntheta = 1.0\n";

fn evolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evolab"))
        .args(args)
        .env_remove("EVOLAB_THREADS")
        .output()
        .unwrap()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("op.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        cfg.to_str().unwrap(),
        "--samples",
        "1000",
        "--step",
        "1e-2",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    evolab(&args)
}

#[test]
fn presets_are_listed() {
    let o = evolab(&["presets"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["ou", "power", "logpower"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{text}");
    }
}

#[test]
fn configuration_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&dir.path().join("missing.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(64));

    let cfg = config(dir.path(), OU);
    assert_eq!(
        run(&cfg, &out, &["--checks", "nonsense"]).status.code(),
        Some(64)
    );
    assert_eq!(
        run(&cfg, &out, &["--delta-grid", "0,1"]).status.code(),
        Some(64)
    );

    let bad = config(
        dir.path(),
        "dimension = 1\n[diffusion]\nq = -1.0\n[drift]\npreset = \"ou\"\n",
    );
    assert_eq!(run(&bad, &out, &[]).status.code(), Some(64));
}

#[test]
fn regime_mismatch_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), OU);
    let o = run(&cfg, &dir.path().join("out"), &["--checks", "heat_kernel"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ultracontractive"));
}

#[test]
fn run_writes_artifacts_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), OU);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &["--checks", "gradient,invariance", "--oracle"]);
    assert!(matches!(o.status.code(), Some(0 | 3)), "{o:?}");
    let stdout = String::from_utf8(o.stdout).unwrap();
    let run_dir = PathBuf::from(stdout.lines().next().unwrap());
    for f in [
        "manifest.json",
        "reports.csv",
        "estimates.csv",
        "summary.json",
    ] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let reports = std::fs::read_to_string(run_dir.join("reports.csv")).unwrap();
    assert!(reports.starts_with("name,tag,params,lhs,"));
    assert!(reports.lines().count() > 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert!(run_dir.ends_with(&manifest["hash"].as_str().unwrap()[..16]));

    let again = run(&cfg, &out, &["--checks", "gradient,invariance", "--oracle"]);
    assert_eq!(again.status.code(), Some(64));
    let forced = run(
        &cfg,
        &out,
        &["--checks", "gradient,invariance", "--oracle", "--force"],
    );
    assert!(matches!(forced.status.code(), Some(0 | 3)));
    assert_eq!(
        std::fs::read_to_string(run_dir.join("reports.csv")).unwrap(),
        reports
    );
}

#[test]
fn seed_changes_the_manifest_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), OU);
    let out = dir.path().join("out");
    let a = run(&cfg, &out, &["--checks", "gradient", "--seed", "1"]);
    let b = run(&cfg, &out, &["--checks", "gradient", "--seed", "2"]);
    let first = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .next()
            .unwrap()
            .to_owned()
    };
    assert_ne!(first(&a), first(&b));
}
