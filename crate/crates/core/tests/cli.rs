use std::fs;
use std::path::Path;
use std::process::Command;

use glacier_da::artifact::{self, Schema};
use glacier_da::cli::{self, Subcommand};
use glacier_da::config::RunConfig;
use proptest::prelude::*;

const BIN: &str = env!("CARGO_BIN_EXE_glacier-da");

fn run_bin(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn truth_spans_the_window_and_leaves_config_alone() {
    let dir = tempfile::tempdir().unwrap();
    let text = "# defaults\n[run]\nseed = 3\n";
    let cfg = write(dir.path(), "c.toml", text);
    let out = dir.path().join("out");
    let o = run_bin(&["truth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&cfg).unwrap(), text);
    let rows = artifact::read_csv(&out.join("truth.csv"), Schema::RunRecord).unwrap();
    assert_eq!(rows.first().unwrap()[0], Some(0.0));
    assert_eq!(rows.last().unwrap()[0], Some(2300.0));
    assert!(rows.iter().all(|r| r[3].is_none() && r[5].is_none()));
    let manifest: toml::Table = fs::read_to_string(out.join(cli::MANIFEST_FILE)).unwrap().parse().unwrap();
    let files = manifest["files"].as_array().unwrap();
    for f in files {
        let name = f["file"].as_str().unwrap();
        let bytes = fs::read(out.join(name)).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), artifact::sha256_hex(&bytes));
    }
    let resolved = fs::read_to_string(out.join(cli::RESOLVED_CONFIG_FILE)).unwrap();
    let back = glacier_da::config::parse_config(&resolved).unwrap();
    assert_eq!(back.run.seed, 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", "");
    let out = dir.path().join("o");
    let o = run_bin(&["bogus", "--config", &ok, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());

    let bad = write(dir.path(), "bad.toml", "[true]\nsill_min = 430\nsill_max = 425\n");
    let o = run_bin(&["truth", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error kind=config"));

    let typo = write(dir.path(), "typo.toml", "[filter]\nsise = 10\n");
    let o = run_bin(&["truth", "--config", &typo, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let blowup = write(dir.path(), "blowup.toml", "[true]\ngamma = 1e3\nomega = 1e-3\n");
    let o = run_bin(&["truth", "--config", &blowup, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ensemble_sweep_has_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::defaults();
    cfg.run.out_dir = dir.path().to_path_buf();
    cfg.run.ensemble_min = 2;
    cfg.run.ensemble_max = 6;
    cfg.run.seeds = 2;
    let m = cli::run_subcommand(Subcommand::SweepEnsemble, &cfg).unwrap();
    let rows = artifact::read_csv(&dir.path().join("sweep-ensemble.csv"), Schema::Sweep).unwrap();
    let axis: Vec<f64> = rows.iter().map(|r| r[0].unwrap()).collect();
    assert_eq!(axis, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(rows.iter().all(|r| r[3] == Some(2.0)));
    assert_eq!(m.files.len(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::defaults();
    for (k, sub) in [Subcommand::Assimilate, Subcommand::Slr].into_iter().enumerate() {
        let mut digests = Vec::new();
        for threads in [1, 3] {
            cfg.run.out_dir = dir.path().join(format!("{k}-{threads}"));
            let m = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| cli::run_subcommand(sub, &cfg).unwrap());
            digests.push(m.files.iter().skip(1).map(|f| f.sha256.clone()).collect::<Vec<_>>());
        }
        assert_eq!(digests[0], digests[1]);
    }
}

fn cell() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Some)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn csv_round_trip_is_bit_exact(rows in proptest::collection::vec(proptest::collection::vec(cell(), 5), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        artifact::emit_csv(&path, Schema::Sensitivity, &rows).unwrap();
        let back = artifact::read_csv(&path, Schema::Sensitivity).unwrap();
        prop_assert_eq!(rows.len(), back.len());
        for (x, y) in rows.iter().flatten().zip(back.iter().flatten()) {
            prop_assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits));
        }
    }
}
