//! The shipped 14-bus desk config against its seeded reference run.

use std::path::Path;

use gridstate::pipeline::{run_experiment, ExperimentConfig};

/// Ensemble against power-flow states on the full test split:
/// voltage RMSE and MAE in percent, angle RMSE and MAE in degrees.
const REFERENCE: [f64; 4] = [0.0604, 0.0388, 0.2133, 0.1591];

#[test]
fn desk14_matches_reference_within_20_percent() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let config = ExperimentConfig::load(configs.join("desk14.toml")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let started = std::time::Instant::now();
    let report = run_experiment(&config, &configs, out.path()).unwrap();
    assert!(started.elapsed().as_secs() < 15 * 60);

    let m = report.find("ensemble", "true", "full").unwrap();
    let got = [m.voltage_rmse_pct, m.voltage_mae_pct, m.angle_rmse_deg, m.angle_mae_deg];
    for (g, r) in got.iter().zip(REFERENCE) {
        assert!((g / r - 1.0).abs() <= 0.2, "headline metrics {got:?}, reference {REFERENCE:?}");
    }
    assert_eq!(m.samples, 960);
    for file in ["metrics.csv", "manifest.json", "forecast.json", "dataset.csv", "model/meta.json"] {
        assert!(out.path().join(file).is_file(), "{file} missing");
    }
}
