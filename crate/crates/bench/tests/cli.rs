use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use autodesign::hwmodel::BitwidthPolicy;
use autodesign::nncore::NetSpec;
use autodesign_bench::report::report;
use autodesign_bench::run::read_results;
use autodesign_bench::{run, ExperimentConfig, LoadedConfig, Overrides, Pipeline};

fn preset(name: &str) -> LoadedConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    LoadedConfig::from_file(&path).unwrap()
}

/// Writes `cfg` as a config file in `dir` and returns its path.
fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, toml::to_string(cfg).unwrap()).unwrap();
    path
}

fn loaded(dir: &Path, cfg: &ExperimentConfig) -> LoadedConfig {
    LoadedConfig::from_file(&write_config(dir, cfg)).unwrap()
}

fn tiny_quantize() -> ExperimentConfig {
    let mut c = preset("quantize.toml").config;
    c.out = None;
    c.dataset.n = 64;
    c.dataset.n_val = Some(64);
    c.pretrain.as_mut().unwrap().epochs = 2;
    let q = c.quantize.as_mut().unwrap();
    q.episodes = 4;
    q.agent.warmup = 12;
    q.agent.batch_size = 8;
    c.budgets[0].uniform_bits = Some(2);
    c
}

fn tiny_prune() -> ExperimentConfig {
    let mut c = preset("prune.toml").config;
    c.out = None;
    c.dataset.n = 64;
    c.dataset.n_val = Some(64);
    c.pretrain.as_mut().unwrap().epochs = 2;
    let p = c.prune.as_mut().unwrap();
    p.episodes = 4;
    p.agent.warmup = 6;
    p.agent.batch_size = 4;
    c
}

#[test]
fn presets_parse_and_validate() {
    for (file, p) in [
        ("search.toml", Pipeline::Search),
        ("oracle.toml", Pipeline::Oracle),
        ("prune.toml", Pipeline::Prune),
        ("quantize.toml", Pipeline::Quantize),
    ] {
        let l = preset(file);
        l.config.validate(p).unwrap();
        l.hardware().unwrap();
    }
}

#[test]
fn oracle_on_three_blocks_of_seven_ops_lists_every_architecture() {
    let mut c = preset("oracle.toml").config;
    c.out = None;
    c.hardware = vec!["edge".into()];
    c.dataset.n = 8;
    c.dataset.n_val = Some(4);
    c.frontier.epochs = 1;
    let d = tempfile::tempdir().unwrap();
    let rows = run(Pipeline::Oracle, &loaded(d.path(), &c), &Overrides::default(), d.path()).unwrap();
    assert_eq!(rows.len(), 1);
    let mut r = csv::Reader::from_path(d.path().join("runs").join(&rows[0].run_id).join("frontier.csv")).unwrap();
    assert_eq!(r.records().count(), 343);
}

#[test]
fn prune_meets_half_macs_budget() {
    let c = tiny_prune();
    let total = c.network.as_ref().unwrap().total_macs() as f64;
    let d = tempfile::tempdir().unwrap();
    let rows = run(Pipeline::Prune, &loaded(d.path(), &c), &Overrides::default(), d.path()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].achieved.unwrap() <= 0.5 * total);
    assert!(rows[0].achieved <= rows[0].budget);
}

#[test]
fn quantize_on_two_profiles_emits_different_policies() {
    let c = tiny_quantize();
    let net: NetSpec = c.network.clone().unwrap();
    let d = tempfile::tempdir().unwrap();
    let rows = run(Pipeline::Quantize, &loaded(d.path(), &c), &Overrides::default(), d.path()).unwrap();
    assert_eq!(rows.len(), 2);
    let policies: Vec<BitwidthPolicy> = rows
        .iter()
        .map(|r| {
            assert!(r.achieved.unwrap() <= r.budget.unwrap());
            let text = fs::read_to_string(d.path().join("runs").join(&r.run_id).join("policy.toml")).unwrap();
            let p = BitwidthPolicy::from_toml(&text).unwrap();
            p.validate_for(&net).unwrap();
            p
        })
        .collect();
    assert_ne!(policies[0], policies[1]);

    // report: one frontier per profile plus roofline points, artifacts untouched
    let before = fs::read(d.path().join("results.csv")).unwrap();
    let files = report(d.path()).unwrap();
    assert_eq!(files.frontiers.len(), 2);
    assert!(files.roofline.is_some());
    assert_eq!(fs::read(d.path().join("results.csv")).unwrap(), before);
}

#[test]
fn config_is_copied_verbatim_and_reruns_are_identical() {
    let c = tiny_prune();
    let d = tempfile::tempdir().unwrap();
    let text = format!("# a comment that must survive\n{}", toml::to_string(&c).unwrap());
    let cfg_path = d.path().join("in.toml");
    fs::write(&cfg_path, &text).unwrap();
    let l = LoadedConfig::from_file(&cfg_path).unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    run(Pipeline::Prune, &l, &Overrides::default(), &a).unwrap();
    run(Pipeline::Prune, &l, &Overrides::default(), &b).unwrap();
    assert_eq!(fs::read_to_string(a.join("config.toml")).unwrap(), text);
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
    let rows = read_results(&a.join("results.csv")).unwrap();
    assert_eq!(rows[0].wall_s, 0.0);
}

#[test]
fn single_run_report_has_one_row_table() {
    let c = tiny_prune();
    let d = tempfile::tempdir().unwrap();
    run(Pipeline::Prune, &loaded(d.path(), &c), &Overrides::default(), d.path()).unwrap();
    let files = report(d.path()).unwrap();
    let table = fs::read_to_string(files.summary).unwrap();
    assert_eq!(table.lines().count(), 3);
}

fn cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_autodesign"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let out_s = out.to_str().unwrap();

    let bad = d.path().join("bad.toml");
    fs::write(&bad, "seed = 0\nunknown_key = 1\n").unwrap();
    assert_eq!(cli(&["prune", "--config", bad.to_str().unwrap(), "--out", out_s]), 2);

    // pipeline mismatch is a config error
    let cfg = write_config(d.path(), &tiny_prune());
    assert_eq!(cli(&["quantize", "--config", cfg.to_str().unwrap(), "--out", out_s]), 2);

    let mut impossible = tiny_quantize();
    impossible.budgets[0].uniform_bits = None;
    impossible.budgets[0].limit = Some(1e-12);
    let path = d.path().join("impossible.toml");
    fs::write(&path, toml::to_string(&impossible).unwrap()).unwrap();
    assert_eq!(cli(&["quantize", "--config", path.to_str().unwrap(), "--out", out_s]), 3);

    assert_eq!(
        cli(&["prune", "--config", cfg.to_str().unwrap(), "--out", out_s, "--seed", "5", "--hardware", "cloud"]),
        0
    );
    let rows = read_results(&out.join("results.csv")).unwrap();
    assert_eq!((rows[0].seed, rows[0].hardware.as_str()), (5, "cloud"));
    assert_eq!(cli(&["report", out_s]), 0);
    assert_eq!(cli(&["report", d.path().join("empty").to_str().unwrap()]), 2);
}
