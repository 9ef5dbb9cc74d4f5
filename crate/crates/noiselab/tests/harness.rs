use std::fs;
use std::path::Path;

use noiselab::domain::mislabel_rate_closed_form;
use noiselab::harness::{execute, output_root, run, sweep, ExperimentConfig, Format, RunOptions, RunSummary};
use noiselab::{DomainSpec, Error};

const RATE_SWEEP: &str = r#"
name = "rates"
kind = "rate_sweep"
seeds = [0]

[parameters]
mu1 = [0.0, 0.0]
mu2 = [2.0, 0.0]
sigma = 1.0
alpha_min = -1.0
alpha_max = 1.0
alpha_step = 0.05
"#;

fn toml(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text, Format::Toml).unwrap()
}

fn config_error(text: &str, format: Format) -> (String, String) {
    match ExperimentConfig::parse(text, format) {
        Err(Error::Config { field, msg }) => (field, msg),
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions { out_root: Some(dir.to_path_buf()) }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn rate_sweep_writes_41_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toml(RATE_SWEEP);
    let res = run(&cfg, &opts(tmp.path())).unwrap();
    assert_eq!(res.dir, tmp.path().join("rates"));
    let text = fs::read_to_string(res.dir.join("rates.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,rate");
    assert_eq!(lines.len(), 42);
    for line in &lines[1..] {
        let (a, r) = line.split_once(',').unwrap();
        let a: f64 = a.parse().unwrap();
        let spec = DomainSpec::new(vec![0.0, 0.0], vec![2.0, 0.0], 1.0, vec![2.0 * a, 0.0]).unwrap();
        assert_eq!(r.parse::<f64>().unwrap(), mislabel_rate_closed_form(&spec).unwrap(), "alpha {a}");
    }
    assert!(res.summary.checks["u_shape"]);
    assert!(res.summary.passed);
}

#[test]
fn summary_and_config_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toml(RATE_SWEEP);
    let res = run(&cfg, &opts(tmp.path())).unwrap();
    let summary: RunSummary = serde_json::from_slice(&fs::read(res.dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, res.summary);
    assert_eq!(summary.schema_version, 1);
    assert_eq!(summary.config_hash, cfg.hash());
    assert_eq!(summary.kind, "rate_sweep");
    let resolved: serde_json::Value = serde_json::from_slice(&fs::read(res.dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["parameters"]["delta_orthogonal"], serde_json::Value::Null);
    assert_eq!(resolved["parameters"]["alpha_step"], serde_json::json!(0.05));
}

#[test]
fn errors_name_the_field() {
    let cases = [
        (RATE_SWEEP.replace("sigma = 1.0", "sigma = -1.0"), "parameters.sigma"),
        (RATE_SWEEP.replace("sigma = 1.0", "sigmaa = 1.0"), "parameters"),
        (RATE_SWEEP.replace("alpha_step = 0.05", "alpha_step = 0.0"), "parameters.alpha_step"),
        (RATE_SWEEP.replace("seeds = [0]", "seeds = []"), "seeds"),
        (RATE_SWEEP.replace("seeds = [0]", "seeds = [1, 1]"), "seeds"),
        (RATE_SWEEP.replace("name = \"rates\"", "name = \"../x\""), "name"),
        (RATE_SWEEP.replace("kind = \"rate_sweep\"", "kind = \"nope\""), "kind"),
        (RATE_SWEEP.replace("mu2 = [2.0, 0.0]", "mu2 = [2.0]"), "parameters"),
        (RATE_SWEEP.replace("sigma = 1.0", "sigma = \"big\""), "parameters.sigma"),
    ];
    for (text, want) in cases {
        let (field, msg) = config_error(&text, Format::Toml);
        assert!(field.starts_with(want), "field `{field}` for {want}: {msg}");
    }
    let (field, msg) = config_error(&RATE_SWEEP.replace("sigma = 1.0", "sigmaa = 1.0"), Format::Toml);
    assert!(msg.contains("sigmaa"), "{field}: {msg}");
}

#[test]
fn nested_fields_are_named() {
    let text = r#"{"name": "b", "kind": "bench_run", "seeds": [0],
        "parameters": {"setup": {"shape": {"k": 1}}, "train": {"loss": {"kind": "ce"}}}}"#;
    let (field, _) = config_error(text, Format::Json);
    assert!(field.starts_with("parameters.") && field.contains('k'), "{field}");
    let text = r#"{"name": "b", "kind": "bench_run", "seeds": [0],
        "parameters": {"train": {"loss": {"kind": "gce", "q": 2.0}}}}"#;
    let (field, _) = config_error(text, Format::Json);
    assert!(field.contains('q'), "{field}");
}

#[test]
fn invalid_config_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let text = RATE_SWEEP.replace("seeds = [0]", "seeds = []");
    let path = tmp.path().join("c.toml");
    fs::write(&path, text).unwrap();
    let out = tmp.path().join("out");
    assert!(noiselab::harness::run_path(&path, &opts(&out)).is_err());
    assert!(!out.exists());
}

#[test]
fn rerun_replaces_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run(&toml(RATE_SWEEP), &opts(tmp.path())).unwrap().dir;
    fs::write(dir.join("stale.txt"), "x").unwrap();
    run(&toml(RATE_SWEEP), &opts(tmp.path())).unwrap();
    assert!(!dir.join("stale.txt").exists());
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1, "{names:?}");
}

#[test]
fn hash_is_stable() {
    let a = toml(RATE_SWEEP);
    let json = r#"{"name": "rates", "kind": "rate_sweep", "seeds": [0], "output_dir": "/tmp/elsewhere",
        "parameters": {"mu1": [0.0, 0.0], "mu2": [2.0, 0.0], "sigma": 1.0,
                       "alpha_min": -1.0, "alpha_max": 1.0, "alpha_step": 0.05}}"#;
    let b = ExperimentConfig::parse(json, Format::Json).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash(), toml(RATE_SWEEP).hash());
    let c = toml(&RATE_SWEEP.replace("sigma = 1.0", "sigma = 1.5"));
    assert_ne!(a.hash(), c.hash());
    assert_eq!(
        a.canonical_json(),
        r#"{"kind":"rate_sweep","name":"rates","parameters":{"alpha_max":1.0,"alpha_min":-1.0,"alpha_step":0.05,"delta_orthogonal":null,"monte_carlo_n":null,"mu1":[0.0,0.0],"mu2":[2.0,0.0],"sigma":1.0},"seeds":[0]}"#
    );
    // sha256 of the string above, computed outside this crate
    assert_eq!(a.hash(), "7e0787e855d77bbcbbe7bbce56f951587883f94c92d7e3d018e5facc11936c84");
}

#[test]
fn output_root_precedence() {
    let mut cfg = toml(RATE_SWEEP);
    assert_eq!(output_root(Some(Path::new("/a")), &cfg), Path::new("/a"));
    cfg.output_dir = Some("/b".into());
    assert_eq!(output_root(Some(Path::new("/a")), &cfg), Path::new("/a"));
    assert_eq!(output_root(None, &cfg), Path::new("/b"));
}

const GRID: &str = r#"{"name": "grid", "kind": "etp_grid", "seeds": [0, 1, 2],
    "parameters": {"n": 400, "d": 20, "sigmas": [0.2, 0.5], "rs": [0.3, 0.6], "max_steps": 60}}"#;

#[test]
fn sweep_output_independent_of_workers() {
    let cfg = ExperimentConfig::parse(GRID, Format::Json).unwrap();
    let t1 = tempfile::tempdir().unwrap();
    let t8 = tempfile::tempdir().unwrap();
    let a = sweep(&cfg, &opts(t1.path()), 1).unwrap();
    let b = sweep(&cfg, &opts(t8.path()), 8).unwrap();
    let ta = read_tree(&a.dir);
    assert_eq!(ta, read_tree(&b.dir));
    assert!(ta.iter().any(|(p, _)| p == "point_003/2.csv"), "{:?}", ta.iter().map(|x| &x.0).collect::<Vec<_>>());
    assert!(ta.iter().any(|(p, _)| p == "aggregate.csv"));
}

#[test]
fn single_point_grid_equals_run() {
    let grid = ExperimentConfig::parse(
        r#"{"name": "g", "kind": "etp_grid", "seeds": [3, 4],
            "parameters": {"n": 300, "d": 15, "sigmas": [0.4], "rs": [0.5], "max_steps": 80, "halt_at_t": false}}"#,
        Format::Json,
    )
    .unwrap();
    let single = ExperimentConfig::parse(
        r#"{"name": "s", "kind": "etp_run", "seeds": [3, 4],
            "parameters": {"n": 300, "d": 15, "sigma": 0.4, "r": 0.5, "max_steps": 80, "halt_at_t": false}}"#,
        Format::Json,
    )
    .unwrap();
    let (_, gf) = execute(&grid, 1).unwrap();
    let (_, sf) = execute(&single, 1).unwrap();
    for seed in [3, 4] {
        assert_eq!(gf.get(&format!("point_000/{seed}.csv")).unwrap(), sf.get(&format!("{seed}.csv")).unwrap());
    }
}

#[test]
fn sweep_rejects_non_grid_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let err = sweep(&toml(RATE_SWEEP), &opts(tmp.path()), 2).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "kind"), "{err:?}");
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 7);
}

#[test]
fn region_check_reports_conditions() {
    let cfg = toml(
        r#"
name = "region"
kind = "region_check"
seeds = [0]

[parameters]
d = 4
sigma = 1.0
alpha = 1.0
delta_conf = 0.3
n_samples = 100000
min_in_region = 50
conditional_n = 2000
"#,
    );
    let (summary, files) = execute(&cfg, 1).unwrap();
    assert!(summary.checks["nonempty_condition"], "{:?}", summary.checks);
    assert!(summary.checks["conditional_bound"], "{:?}", summary.checks);
    assert!(files.get("region.csv").is_some());
}

#[test]
fn bench_run_and_memorization_small() {
    let bench = ExperimentConfig::parse(
        r#"{"name": "b", "kind": "bench_run", "seeds": [0],
            "parameters": {"setup": {"n_source": 100, "n_target": 100, "epochs": 5, "source": {"epochs": 20}},
                           "train": {"loss": {"kind": "gce", "q": 0.7}}}}"#,
        Format::Json,
    )
    .unwrap();
    let (summary, files) = execute(&bench, 1).unwrap();
    let csv = std::str::from_utf8(files.get("0.csv").unwrap()).unwrap();
    assert!(csv.starts_with("step,"));
    assert!(csv.lines().count() > 5);
    assert_eq!(summary.per_seed.len(), 1);

    let mem = ExperimentConfig::parse(
        r#"{"name": "m", "kind": "memorization", "seeds": [0, 1],
            "parameters": {"setup": {"n_source": 100, "n_target": 100, "epochs": 5, "source": {"epochs": 20}}}}"#,
        Format::Json,
    )
    .unwrap();
    let (summary, files) = execute(&mem, 1).unwrap();
    assert!(files.get("memorization.csv").is_some());
    assert_eq!(summary.per_seed.len(), 2);
}
