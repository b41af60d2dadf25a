//! Load profiles, dataset generation and end-to-end experiment runs.

mod dataset;
mod experiment;
mod profile;

pub use dataset::{
    generate_dataset, header, Dataset, DatasetPaths, DatasetRow, GenerationManifest, Label, NoiseModel,
    MAX_SKIPPED_FRACTION,
};
pub use experiment::{
    fit_history_forecaster, history_window, load_case, load_plan, mask_for, run_experiment, test_inputs,
    write_metrics, ExperimentConfig, ExperimentReport, LatencySummary, MetricsRow, MissingSettings, NoiseSettings,
    ProfileSource, RunManifest, RunSeeds, FORECAST_TRAIN_FRACTION,
};
pub use profile::{
    import_profile, parse_profile, synth_profile, LoadProfile, Provenance, SynthParams, MIN_SYNTH_HOURS,
};
