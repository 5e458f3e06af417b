mod common;

use std::fs;

use cpsc_core::harness::config::load_config;
use cpsc_core::harness::experiment::{run_experiment, ExperimentSpec, REPORT_FILE, TIMINGS_FILE};
use cpsc_core::harness::noise::add_gaussian_noise;
use cpsc_core::harness::pgm::{read_pgm, write_pgm};
use cpsc_core::harness::synth::synthetic_image;
use cpsc_core::patch::ImagePlane;
use cpsc_core::{CpscError, DenoiseConfig};

fn fast_config() -> DenoiseConfig {
    DenoiseConfig {
        max_outer_iters: 1,
        ..DenoiseConfig::default()
    }
}

#[test]
fn noise_has_requested_spread() {
    let img = ImagePlane::filled(256, 256, 0.0).unwrap();
    let noisy = add_gaussian_noise(&img, 20.0, 1).unwrap();
    let n = noisy.len() as f64;
    let mean = noisy.pixels().iter().sum::<f64>() / n;
    let sd = (noisy.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd - 20.0).abs() < 0.02 * 20.0, "sample std {sd}");
    assert!(mean.abs() < 0.5);
    // no clamping: negative values survive
    assert!(noisy.pixels().iter().any(|&v| v < 0.0));
}

#[test]
fn pgm_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.pgm");
    let img = synthetic_image(33, 17).unwrap();
    write_pgm(&path, &img).unwrap();
    let back = read_pgm(&path).unwrap();
    assert_eq!((back.width(), back.height()), (33, 17));
    for (a, b) in img.pixels().iter().zip(back.pixels()) {
        assert!((a - b).abs() <= 0.5);
    }
    let bad = dir.path().join("bad.pgm");
    fs::write(&bad, b"P5\n2 2\n255\n\x01").unwrap();
    assert!(matches!(read_pgm(&bad).unwrap_err().root(), CpscError::Format { .. }));
}

#[test]
fn config_file_overrides_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    fs::write(&path, "max_outer_iters = 7\nrho = 0.25\n").unwrap();
    let cfg = load_config(&path).unwrap();
    assert_eq!((cfg.max_outer_iters, cfg.rho, cfg.lambda), (7, 0.25, 0.3));
    assert!(load_config(dir.path().join("missing.conf")).is_err());
}

#[test]
fn empty_experiment_writes_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::new(vec![], vec![20.0], 1, dir.path());
    let report = run_experiment(&spec).unwrap();
    assert!(report.rows.is_empty() && report.is_success());
    let table = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(table.lines().count(), 1);
}

#[test]
fn unreadable_image_is_reported_and_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("flat.pgm");
    write_pgm(&good, &synthetic_image(24, 24).unwrap()).unwrap();
    let mut spec = ExperimentSpec::new(vec![dir.path().join("nope.pgm"), good], vec![20.0], 1, dir.path().join("out"));
    spec.config = fast_config();
    let report = run_experiment(&spec).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].image, "nope");
    let table = fs::read_to_string(dir.path().join("out").join(REPORT_FILE)).unwrap();
    assert!(table.contains("errors:") && table.contains("nope"));
    assert!(dir.path().join("out").join(TIMINGS_FILE).exists());
}

#[test]
fn two_sigmas_give_two_rows_and_their_average() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("synth.pgm");
    write_pgm(&input, &synthetic_image(32, 32).unwrap()).unwrap();
    let mut spec = ExperimentSpec::new(vec![input], vec![20.0, 40.0], 1, dir.path().join("out"));
    spec.config = fast_config();
    spec.dump_graph = true;
    spec.dump_dictionary = true;
    let report = run_experiment(&spec).unwrap();
    assert_eq!(report.rows.len(), 2);
    let table = report.table();
    let cells = |prefix: &str| -> Vec<String> {
        table
            .lines()
            .filter(|l| l.starts_with(prefix))
            .map(|l| l.to_string())
            .collect()
    };
    let rows = cells("synth");
    let avg = cells("average");
    assert_eq!((rows.len(), avg.len()), (2, 1));
    let col = |line: &str, i: usize| -> f64 { line.split_whitespace().nth(i).unwrap().parse().unwrap() };
    for (row_col, avg_col) in [(2, 1), (3, 2)] {
        let mean = (col(&rows[0], row_col) + col(&rows[1], row_col)) / 2.0;
        assert!((mean - col(&avg[0], avg_col)).abs() <= 0.005 + 1e-9);
    }
    let out = dir.path().join("out");
    for name in [
        "synth_sigma20_denoised.pgm",
        "synth_sigma20_noisy.pgm",
        "synth_sigma40.trace",
        "synth_sigma20_tile0_weights.txt",
        "synth_sigma20_tile0_laplacian.txt",
        "synth_sigma40_tile0_dictionary.txt",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}
