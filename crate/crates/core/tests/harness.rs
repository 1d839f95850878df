use qpnls_core::harness::{apply_override, load_config, run, Command, Manifest, RunConfig};
use qpnls_core::Error;
use serde_json::json;
use sha2::{Digest, Sha256};

fn config_in(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        out: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn solve_outputs_match_manifest_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&config_in(dir.path()), Command::Solve).unwrap();
    assert!(m.passed);
    assert_eq!(m.exit_code(), 0);
    let stage = &m.stages[0];
    assert_eq!(stage.checks.get("converged"), Some(&true));
    for o in &stage.outputs {
        let bytes = std::fs::read(dir.path().join(&o.path)).unwrap();
        assert_eq!(hex(&Sha256::digest(&bytes)), o.sha256, "{}", o.path);
    }
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("r,N,residual,correction,decay_fit"));
    let on_disk: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk.config_hash, m.config_hash);
}

#[test]
fn unconverged_schedule_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.schedule.r_max = 1;
    let m = run(&cfg, Command::Solve).unwrap();
    assert!(!m.passed);
    assert_eq!(m.stages[0].checks.get("converged"), Some(&false));
    assert_eq!(m.exit_code(), 4);
}

#[test]
fn stochastic_stages_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.seed = None;
    assert!(matches!(run(&cfg, Command::Dioph), Err(Error::Validation(_))));
    assert!(run(&cfg, Command::Regions).is_ok());
}

#[test]
fn overrides_reach_nested_fields() {
    let cfg = load_config(None, &["params.epsilon=0.002".into(), "params.alpha.0=0.3".into(), "evolve.method=gbs8".into()])
        .unwrap();
    assert_eq!(cfg.params.epsilon, 0.002);
    assert_eq!(cfg.params.alpha, vec![0.3]);
    assert_eq!(cfg.evolve.method, qpnls_core::evolve::Method::Gbs8);

    let mut v = json!({ "a": [1, 2] });
    assert!(apply_override(&mut v, "a.5=0").is_err());
    assert!(apply_override(&mut v, "no-equals-sign").is_err());
    assert!(load_config(None, &["params.epsilon=\"x\"".into()]).is_err());
}

#[test]
fn config_hash_ignores_output_directory() {
    let a = config_in(std::path::Path::new("one"));
    let b = config_in(std::path::Path::new("two"));
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    let mut c = a.clone();
    c.seed = Some(99);
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn command_names_parse() {
    for (s, c) in [("regions", Command::Regions), ("solve", Command::Solve), ("all", Command::All)] {
        assert_eq!(Command::parse(s).unwrap(), c);
    }
    assert!(Command::parse("bogus").is_err());
}
