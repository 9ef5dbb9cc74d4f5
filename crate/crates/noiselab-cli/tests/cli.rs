use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn noiselab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noiselab"));
    c.env_remove("NOISELAB_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const GRID: &str = r#"{"name": "grid", "kind": "etp_grid", "seeds": [0, 1],
    "parameters": {"n": 300, "d": 20, "sigmas": [0.2, 0.5], "rs": [0.3, 0.6], "max_steps": 40}}"#;

#[test]
fn run_rate_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let o = noiselab().arg("run").arg(configs().join("rate_sweep.toml")).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("u_shape"));
    let rates = fs::read_to_string(tmp.path().join("rate_sweep/rates.csv")).unwrap();
    assert_eq!(rates.lines().count(), 42);
    assert!(tmp.path().join("rate_sweep/summary.json").exists());
}

#[test]
fn strict_turns_failed_checks_into_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("r.toml");
    // d = 4 with a tight δ leaves R1 empty, so the literal check fails
    fs::write(
        &cfg,
        "name = \"r\"\nkind = \"region_check\"\nseeds = [0]\n[parameters]\nd = 4\nsigma = 1.0\nalpha = 2.0\ndelta_conf = 0.01\nn_samples = 1000\n",
    )
    .unwrap();
    let lax = noiselab().arg("run").arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(lax.status.code(), Some(0), "{}", stderr(&lax));
    assert!(stdout(&lax).contains("FAIL"));
    let strict = noiselab().args(["run", "--strict"]).arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(strict.status.code(), Some(1), "{}", stderr(&strict));
}

#[test]
fn invalid_config_exits_two_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    let text = fs::read_to_string(configs().join("rate_sweep.toml")).unwrap().replace("sigma = 1.0", "sigma = -2.0");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("out");
    let o = noiselab().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("parameters.sigma"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = noiselab().arg("run").arg(tmp.path().join("missing.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_jobs_do_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("grid.json");
    fs::write(&cfg, GRID).unwrap();
    for jobs in ["1", "8"] {
        let o = noiselab().args(["sweep", "--jobs", jobs]).arg(&cfg).arg("--out").arg(tmp.path().join(jobs)).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = tmp.path().join("1/grid");
    let b = tmp.path().join("8/grid");
    let mut n = 0;
    for p in 0..4 {
        for seed in 0..2 {
            let rel = format!("point_{p:03}/{seed}.csv");
            assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{rel}");
            n += 1;
        }
    }
    assert_eq!(n, 8);
    for f in ["aggregate.csv", "summary.json", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_rejects_zero_jobs_and_plain_kinds() {
    let o = noiselab().args(["sweep", "--jobs", "0"]).arg(configs().join("etp_grid.json")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let o = noiselab().arg("sweep").arg(configs().join("rate_sweep.toml")).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind"));
}

#[test]
fn environment_sets_default_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let env_root = tmp.path().join("from_env");
    let o = noiselab()
        .env("NOISELAB_OUT", &env_root)
        .current_dir(tmp.path())
        .arg("run")
        .arg(configs().join("rate_sweep.toml"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_root.join("rate_sweep/rates.csv").exists());

    // --out wins over the environment
    let flag_root = tmp.path().join("from_flag");
    let o = noiselab()
        .env("NOISELAB_OUT", &env_root)
        .arg("run")
        .arg(configs().join("rate_sweep.toml"))
        .arg("--out")
        .arg(&flag_root)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_root.join("rate_sweep/rates.csv").exists());

    // no flag, no env: ./noiselab-out
    let o = noiselab().current_dir(tmp.path()).arg("run").arg(configs().join("rate_sweep.toml")).output().unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("noiselab-out/rate_sweep/rates.csv").exists());
}

#[test]
fn help_lists_subcommands() {
    let o = noiselab().arg("--help").output().unwrap();
    let text = stdout(&o);
    for sub in ["run", "sweep", "accept"] {
        assert!(text.contains(sub), "{text}");
    }
}
