use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};
use gridstate::ensemble::{EnsembleConfig, EnsembleModel, Metrics, SplitSpec};
use gridstate::forecast::{fit_forecaster, ForecastModel};
use gridstate::measurement::MeasurementVector;
use gridstate::neural::TrainingConfig;
use gridstate::pipeline::{
    generate_dataset, history_window, import_profile, load_case, load_plan, synth_profile, test_inputs,
    write_metrics, Dataset, ExperimentConfig, Label, LoadProfile, MetricsRow, ProfileSource, RunSeeds, SynthParams,
};
use gridstate::powerflow::{LoadScenario, PowerFlow, PowerFlowOptions, StateVector};
use gridstate::seed;
use gridstate::wls::{WlsEstimator, WlsOptions};
use gridstate::ybus::build_ybus;

#[derive(Parser)]
#[command(name = "gridstate", version, about = "Power-system state estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Network case checks.
    #[command(subcommand)]
    Case(CaseCommand),
    /// Hourly load profiles.
    #[command(subcommand)]
    Profile(ProfileCommand),
    /// Measurement/state datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Weighted-least-squares estimation.
    #[command(subcommand)]
    Wls(WlsCommand),
    /// Train the stacked ensemble on a dataset.
    Train(TrainArgs),
    /// Estimate states with a trained ensemble.
    Estimate(EstimateArgs),
    /// State forecasting.
    #[command(subcommand)]
    Forecast(ForecastCommand),
    /// Score a trained ensemble on its test split.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from a config file.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CaseCommand {
    /// Parse a case, build its admittance matrix and solve the base power flow.
    Validate {
        /// `builtin:<name>` or a case JSON path.
        case: String,
        /// Also check a measurement plan (preset name or JSON path).
        #[arg(long)]
        plan: Option<String>,
    },
}

#[derive(Subcommand)]
enum ProfileCommand {
    /// Synthesize a daily/weekly profile.
    Synth {
        #[arg(long)]
        hours: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Peak-normalize a file with one positive number per line.
    Import {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate the training dataset described by a config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output stem; writes `<stem>.csv`, `<stem>.truth.csv` and `<stem>.manifest.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum WlsCommand {
    /// Estimate every row of a dataset and write the states as CSV.
    Solve {
        #[arg(long)]
        case: String,
        #[arg(long)]
        plan: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Model directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ForecastCommand {
    /// Fit the lagged forecaster on the stored states of a dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = gridstate::forecast::DEFAULT_LAGS)]
        lags: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast the state of the hour after `--after` (default: the last hour).
    Next {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        after: Option<usize>,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Config with the master seed resolved and its per-stream seeds.
fn load_config(path: &Path) -> Result<(ExperimentConfig, RunSeeds)> {
    let mut config = ExperimentConfig::load(path)?;
    config.seed = seed::master_seed(config.seed);
    let seeds = RunSeeds::new(config.seed, config.ensemble.learners);
    Ok((config, seeds))
}

fn write_states(path: &Path, rows: &[(usize, StateVector)]) -> Result<()> {
    let n = rows.first().map_or(0, |(_, s)| s.n());
    let mut text = String::from("t");
    for prefix in ["v", "theta"] {
        for i in 1..=n {
            text.push_str(&format!(",{prefix}_{i}"));
        }
    }
    text.push('\n');
    for (t, s) in rows {
        text.push_str(&t.to_string());
        for v in s.v.iter().chain(&s.theta) {
            text.push(',');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Case(CaseCommand::Validate { case, plan }) => {
            let net = load_case(&case, Path::new("."))?;
            let ybus = build_ybus(&net)?;
            let flow = PowerFlow::new(&net)?.solve(&LoadScenario::uniform(0, 1.0, net.n_buses()), &PowerFlowOptions::default())?;
            println!(
                "{case}: {} buses, {} branches, {} admittance entries; base power flow {} in {} iterations (mismatch {:.3e})",
                net.n_buses(),
                net.branches().len(),
                ybus.nnz(),
                if flow.converged { "converged" } else { "did not converge" },
                flow.iterations,
                flow.max_mismatch
            );
            if let Some(spec) = plan {
                let p = load_plan(&spec, &net, Path::new("."))?;
                p.check_observable(&net, &ybus)?;
                println!("plan {spec}: {} measurements, observable", p.m());
            }
            if !flow.converged {
                bail!("base power flow did not converge");
            }
        }
        Command::Profile(ProfileCommand::Synth { hours, seed, out }) => {
            let p = synth_profile(hours, seed, &SynthParams::default())?;
            p.save(&out)?;
            println!("wrote {} hours to {}", p.len(), out.display());
        }
        Command::Profile(ProfileCommand::Import { input, out }) => {
            let p = import_profile(&input)?;
            p.save(&out)?;
            println!("wrote {} hours to {}", p.len(), out.display());
        }
        Command::Dataset(DatasetCommand::Generate { config, out }) => {
            let (cfg, seeds) = load_config(&config)?;
            let base = config_dir(&config);
            let net = load_case(&cfg.case, &base)?;
            let plan = load_plan(&cfg.plan, &net, &base)?;
            let profile: LoadProfile = match &cfg.profile {
                ProfileSource::Synthetic { params } => synth_profile(cfg.hours, seeds.profile, params)?,
                ProfileSource::Csv { path } => {
                    let mut p = import_profile(base.join(path))?;
                    p.values.truncate(cfg.hours);
                    p
                }
            };
            let data = generate_dataset(&net, &plan, &profile, &cfg.noise.train, seeds.dataset)?;
            data.save(&out)?;
            println!(
                "{} rows ({} skipped), {} measurements, {} buses",
                data.len(),
                data.manifest.skipped.len(),
                data.m(),
                data.n_buses()
            );
        }
        Command::Wls(WlsCommand::Solve { case, plan, dataset, out }) => {
            let net = load_case(&case, Path::new("."))?;
            let p = load_plan(&plan, &net, Path::new("."))?;
            let data = Dataset::load(&dataset)?;
            let est = WlsEstimator::new(&net, &p)?;
            let mut rows = Vec::with_capacity(data.len());
            let mut unconverged = 0;
            for row in &data.rows {
                let r = est.estimate(&MeasurementVector::full(row.timestamp, row.z_noisy.clone()), &WlsOptions::default())?;
                unconverged += usize::from(!r.converged);
                rows.push((row.timestamp, r.state));
            }
            write_states(&out, &rows)?;
            println!("estimated {} rows ({unconverged} not converged)", rows.len());
        }
        Command::Train(TrainArgs { config, dataset, out }) => {
            let (cfg, seeds) = load_config(&config)?;
            let data = Dataset::load(&dataset)?;
            let split = SplitSpec::new(data.len(), seeds.split);
            let ensemble = EnsembleConfig {
                training: TrainingConfig {
                    seed: seeds.training,
                    ..cfg.ensemble.training
                },
                ..cfg.ensemble
            };
            let model = EnsembleModel::fit(
                &data.inputs(&split.base_train),
                &data.states(&split.base_train, cfg.label),
                &data.inputs(&split.meta_train),
                &data.states(&split.meta_train, cfg.label),
                &ensemble,
            )?
            .with_split(split);
            model.save(&out)?;
            println!("trained {} base-learners into {}", model.learners().len(), out.display());
        }
        Command::Estimate(EstimateArgs { model, dataset, out }) => {
            let model = EnsembleModel::load(&model)?;
            let data = Dataset::load(&dataset)?;
            let mut rows = Vec::with_capacity(data.len());
            let mut worst = std::time::Duration::ZERO;
            for row in &data.rows {
                let (state, latency) = model.estimate_timed(&MeasurementVector::full(row.timestamp, row.z_noisy.clone()))?;
                worst = worst.max(latency);
                rows.push((row.timestamp, state));
            }
            write_states(&out, &rows)?;
            println!("estimated {} rows; slowest {:.3} ms", rows.len(), worst.as_secs_f64() * 1e3);
        }
        Command::Forecast(ForecastCommand::Fit { dataset, lags, out }) => {
            let data = Dataset::load(&dataset)?;
            let history: Vec<StateVector> = data.rows.iter().map(|r| r.x_wls.clone()).collect();
            let model = fit_forecaster(&history, lags)?;
            model.save(&out)?;
            println!("fit {} state forecasts on {} hours", model.states().len(), history.len());
        }
        Command::Forecast(ForecastCommand::Next { model, dataset, after }) => {
            let model = ForecastModel::load(&model)?;
            let data = Dataset::load(&dataset)?;
            let last = match after.or_else(|| data.rows.last().map(|r| r.timestamp)) {
                Some(t) => t,
                None => bail!("dataset is empty"),
            };
            let Some(window) = history_window(&data, last + 1, model.window()) else {
                bail!("the {} hours up to {last} are not all in the dataset", model.window());
            };
            let next = model.forecast_next(&window)?;
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({
                "t": last + 1,
                "v": next.v,
                "theta": next.theta,
            }))?);
        }
        Command::Evaluate(EvaluateArgs { config, model, dataset, out }) => {
            let (cfg, seeds) = load_config(&config)?;
            let model = EnsembleModel::load(&model)?;
            let data = Dataset::load(&dataset)?;
            let split = match model.split() {
                Some(s) => s.clone(),
                None => SplitSpec::new(data.len(), seeds.split),
            };
            if split.rows != data.len() {
                bail!("model split covers {} rows, dataset has {}", split.rows, data.len());
            }
            let z = test_inputs(&data, &split.test, &cfg.noise.test, seeds.test_noise)?;
            let mut rows = Vec::new();
            for (name, label) in [("wls", Label::Wls), ("true", Label::True)] {
                let x = data.states(&split.test, label);
                let metrics: Metrics = model.evaluate(&z, &x)?;
                rows.push(MetricsRow {
                    model: "ensemble".into(),
                    reference: name.into(),
                    condition: "full".into(),
                    metrics,
                });
            }
            write_metrics(&out, &cfg.hash(), &rows)?;
            for r in &rows {
                let m = &r.metrics;
                println!(
                    "{} vs {}: voltage RMSE {:.4}% MAE {:.4}%, angle RMSE {:.4} deg MAE {:.4} deg",
                    r.model, r.reference, m.voltage_rmse_pct, m.voltage_mae_pct, m.angle_rmse_deg, m.angle_mae_deg
                );
            }
        }
        Command::Report(ReportArgs { config, out }) => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = gridstate::pipeline::run_experiment(&cfg, &config_dir(&config), &out)?;
            let reference = match cfg.label {
                Label::Wls => "wls",
                Label::True => "true",
            };
            for condition in ["full", "missing"] {
                if let Some(m) = report.find("ensemble", reference, condition) {
                    println!(
                        "ensemble vs {reference} ({condition}): voltage RMSE {:.4}% MAE {:.4}%, angle RMSE {:.4} deg MAE {:.4} deg",
                        m.voltage_rmse_pct, m.voltage_mae_pct, m.angle_rmse_deg, m.angle_mae_deg
                    );
                }
            }
            println!("run {} written to {}", report.manifest.hash, out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
