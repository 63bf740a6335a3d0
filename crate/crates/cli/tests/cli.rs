use std::fs;
use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use ropeattn::engine::arattc_fast;
use ropeattn::io::{read_matrix_csv, write_matrix_csv, MANIFEST_FILE};
use ropeattn::Matrix;
use ropeattn_cli::{
    cmd_bench, cmd_gen, cmd_linear, cmd_verify, generate_instance, load_instance, run, Cli, CliCommand, Mode,
    RunConfig,
};
use serde_json::Value;

fn config(args: &[&str]) -> RunConfig {
    let mut argv = vec!["ropeattn", "verify"];
    argv.extend_from_slice(args);
    match Cli::try_parse_from(argv).expect("parses").command {
        CliCommand::Verify { config, .. } => config,
        _ => unreachable!(),
    }
}

fn run_lines(argv: &[&str]) -> (i32, Vec<Value>) {
    let cli = Cli::try_parse_from(argv).expect("parses");
    let mut lines = Vec::new();
    let code = run(&cli, |l| lines.push(l));
    let values = lines
        .iter()
        .map(|l| serde_json::from_str(l).expect("valid json"))
        .collect();
    (code, values)
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn defaults_and_b_flag() {
    let c = config(&[]);
    assert_eq!((c.n, c.d, c.bound, c.eps, c.alpha, c.seed), (16, 4, 0.5, 1e-6, 1e4, 1));
    assert_eq!(c.mode, Mode::Rope);
    assert_eq!(config(&["--B", "0.25"]).bound, 0.25);
    assert_eq!(config(&["--bound", "0.125"]).bound, 0.125);
    assert_eq!(config(&["--mode", "random-support"]).mode, Mode::RandomSupport);
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = config(&["--n", "12", "--seed", "7"]);
    cmd_gen(&c, a.path()).unwrap();
    cmd_gen(&c, b.path()).unwrap();
    let (fa, fb) = (read_dir_bytes(a.path()), read_dir_bytes(b.path()));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);

    let other = tempfile::tempdir().unwrap();
    cmd_gen(&config(&["--n", "12", "--seed", "8"]), other.path()).unwrap();
    assert_ne!(fa, read_dir_bytes(other.path()));
}

#[test]
fn zero_bound_gives_zero_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let (code, lines) = run_lines(&[
        "ropeattn", "gen", "--n", "4", "--d", "2", "--B", "0", "--seed", "1", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(lines[0]["files"].as_array().unwrap().len(), 4);
    for name in ["Q.csv", "K.csv", "V.csv"] {
        let m = read_matrix_csv(&dir.path().join(name)).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 2));
        assert!(m.as_slice().iter().all(|&x| x == 0.0 && x.is_sign_positive()));
    }
}

#[test]
fn rope_manifest_support_has_2d_entries() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(&config(&["--n", "8", "--d", "4"]), dir.path()).unwrap();
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["support"].as_array().unwrap().len(), 8);
    assert_eq!(manifest["n"], 8);
    assert_eq!(manifest["d"], 4);
}

#[test]
fn random_support_respects_size() {
    let c = config(&["--n", "6", "--d", "3", "--mode", "random-support", "--support-size", "4"]);
    let inst = generate_instance(&c).unwrap();
    assert_eq!(inst.weights.support().len(), 4);
    assert_eq!(inst.d(), 3);
}

#[test]
fn verify_default_instance_passes() {
    let (code, lines) = run_lines(&["ropeattn", "verify", "--n", "16", "--d", "4"]);
    assert_eq!(lines.len(), 1);
    let r = &lines[0];
    assert_eq!(r["command"], "verify");
    assert_eq!(r["pass"], true);
    assert_eq!(code, 0);
    assert!(r["linf_error"].as_f64().unwrap() <= 1e-6);
    assert_eq!(r["config"]["B"], 0.5);
    assert!(r["monomial_count"].as_u64().unwrap() > 0);
}

#[test]
fn verify_single_token_is_exact() {
    let (code, lines) = run_lines(&["ropeattn", "verify", "--n", "1", "--d", "4"]);
    assert_eq!(code, 0);
    assert!(lines[0]["linf_error"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn unreachable_precision_is_a_reported_error() {
    let (code, lines) = run_lines(&["ropeattn", "verify", "--n", "8", "--d", "4", "--B", "2", "--eps", "1e-15"]);
    assert_eq!(code, 1);
    assert_eq!(lines.len(), 1);
    let kind = lines[0]["error"]["kind"].as_str().unwrap();
    assert!(kind == "configuration" || kind == "resource", "{kind}");
}

#[test]
fn invalid_configs_are_rejected() {
    for args in [
        &["--d", "3"][..],
        &["--eps", "0"],
        &["--eps", "0.5"],
        &["--B=-1"],
    ] {
        let mut argv = vec!["ropeattn", "verify", "--n", "4"];
        argv.extend_from_slice(args);
        let (code, lines) = run_lines(&argv);
        assert_eq!(code, 1, "{args:?}");
        assert!(lines[0]["error"]["message"].is_string(), "{args:?}");
    }
}

#[test]
fn round_trip_through_files_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&["--n", "20", "--d", "4", "--seed", "3"]);
    cmd_gen(&c, dir.path()).unwrap();
    let original = generate_instance(&c).unwrap();
    let loaded = load_instance(dir.path(), &c).unwrap();
    assert_eq!(original.q, loaded.q);
    assert_eq!(original.k, loaded.k);
    assert_eq!(original.v, loaded.v);

    let engine = c.engine();
    let a = arattc_fast(&original, &engine).unwrap();
    let b = arattc_fast(&loaded, &engine).unwrap();
    assert_eq!(a.t, b.t);

    let mem = cmd_verify(&c, None).unwrap();
    let file = cmd_verify(&config(&["--n", "99", "--d", "4"]), Some(dir.path())).unwrap();
    assert_eq!(mem.linf_error.unwrap().to_bits(), file.linf_error.unwrap().to_bits());
    assert_eq!((file.n, file.config.n), (20, 20));
}

#[test]
fn bench_reports_one_line_per_size() {
    let c = config(&["--n", "8", "--d", "2", "--dense-limit", "16"]);
    let mut emitted = 0;
    let reports = cmd_bench(&c, &[8, 16, 32], 1, |_| emitted += 1).unwrap();
    assert_eq!((reports.len(), emitted), (3, 3));
    assert!(reports[0].ratio.is_none());
    assert!(reports[1].ratio.is_some() && reports[1].oracle_ratio.is_some());
    assert_eq!(reports[1].pass, Some(true));
    assert!(reports[2].oracle_time.is_none() && reports[2].linf_error.is_none());
    assert!(reports[2].oracle_ratio.is_none());
    assert!(!reports[2].notes.is_empty());

    let (code, lines) = run_lines(&["ropeattn", "bench", "--n", "8", "--d", "2"]);
    assert_eq!((code, lines.len()), (0, 1));
    assert!(lines[0]["oracle_time"].is_number());
}

#[test]
fn linear_matches_dense_on_nonnegative_scores() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&["--n", "10", "--d", "2", "--B", "0.5"]);
    cmd_gen(&c, dir.path()).unwrap();
    // Non-negative Q, K and weights make every score non-negative.
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "csv") || path.file_name().unwrap() == "V.csv" {
            continue;
        }
        let m = read_matrix_csv(&path).unwrap();
        let abs = Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j).abs());
        write_matrix_csv(&path, &abs).unwrap();
    }
    let r = cmd_linear(&c, Some(dir.path())).unwrap();
    assert!(r.linf_error.unwrap() <= 1e-9, "{:?}", r.linf_error);
}

#[test]
fn linear_sign_change_is_a_normalization_error() {
    let (code, lines) = run_lines(&["ropeattn", "linear", "--n", "10", "--d", "2", "--seed", "1"]);
    if code == 1 {
        assert_eq!(lines[0]["error"]["kind"], "normalization");
    } else {
        assert!(lines[0]["linf_error"].as_f64().unwrap() <= 1e-9);
    }
}

#[test]
fn binary_exit_code_follows_pass() {
    let bin = env!("CARGO_BIN_EXE_ropeattn");
    let out = Process::new(bin).args(["verify", "--n", "8", "--d", "2"]).output().unwrap();
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert!(out.status.success());

    let out = Process::new(bin).args(["verify", "--d", "5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["error"].is_object());

    let out = Process::new(bin).args(["verify", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
}
