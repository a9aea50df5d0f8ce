//! The workflow stages behind the `fricest` binary.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fricest_core::eval;
use fricest_core::hybrid::{self, HpoOptions};
use fricest_core::inverse::{label_dataset, LabeledDataset, StiffnessModel, DEFAULT_EPS_V};
use fricest_core::io::{self, EvaluationReport, FormatError, InputDigest, Provenance};
use fricest_core::lugre::{self, LuGreParams};
use fricest_core::plant::{self, CylinderGeometry};
use fricest_core::signal::{self, FilterConfig};
use fricest_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config;
use crate::{Cli, Command};

/// Histogram resolution of the residual diagnostics in evaluation reports.
const RESIDUAL_BINS: usize = 20;

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { config, out } => simulate(config, out, cli.seed),
        Command::Preprocess {
            input,
            out,
            smoothing,
            accel,
        } => preprocess(input, out, *smoothing, *accel),
        Command::Label {
            input,
            geom,
            out,
            eps_v,
            oil_spring,
        } => label(input, geom.as_deref(), out, *eps_v, *oil_spring),
        Command::FitLugre { input, out, budget } => fit_lugre(input, out, *budget),
        Command::Train {
            input,
            out,
            config,
            hpo_budget,
            trial_epochs,
            log,
        } => train(
            input,
            out,
            config.as_deref(),
            cli.seed,
            *hpo_budget,
            *trial_epochs,
            log.as_deref(),
        ),
        Command::Estimate {
            model,
            input,
            out,
            stream,
        } => estimate(model, input, out, *stream),
        Command::Evaluate {
            model,
            lugre,
            tests,
            report,
        } => evaluate(model, lugre, tests, report),
        Command::Bench {
            model,
            input,
            lugre,
            repeats,
            report,
        } => bench(model, input, lugre.as_deref(), *repeats, report.as_deref()),
    }
}

/// Name + content hash of one input file, for provenance blocks.
fn digest(path: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        name: path.display().to_string(),
        sha256: io::sha256_hex(path).with_context(|| format!("hashing {}", path.display()))?,
    })
}

fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let file: config::SimulateFile = config::read_toml(config_path)?;
    let (scenario, noise) = file.build()?;
    let seed = seed.unwrap_or(0);

    let sim = plant::generate_scenario(&scenario)?;
    let series = match &noise {
        Some(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            plant::add_noise(&sim.series, cfg, &mut rng)?
        }
        None => sim.series,
    };
    io::write_dataset_csv(out, &series).with_context(|| format!("writing {}", out.display()))?;

    let provenance = Provenance {
        seed: noise.is_some().then_some(seed),
        config: Some(serde_json::json!({ "scenario": scenario, "noise": noise })),
        inputs: vec![digest(config_path)?],
        ..Provenance::toolkit()
    };
    io::write_provenance_sidecar(out, &provenance)?;

    println!(
        "wrote {}: {} samples at {} ms, {} stop contacts, {} cavitation clamps, \
         energy residual {:.2e} J",
        out.display(),
        series.len(),
        scenario.dt * 1e3,
        sim.stop_contacts,
        sim.cavitation_events,
        sim.energy.residual(),
    );
    Ok(())
}

fn preprocess(
    input: &Path,
    out: &Path,
    smoothing: Option<usize>,
    accel: Option<usize>,
) -> Result<()> {
    let mut cfg = FilterConfig::default();
    if let Some(w) = smoothing {
        cfg.smoothing_window = w;
    }
    if let Some(w) = accel {
        cfg.accel_window = w;
    }

    let series =
        io::read_dataset_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let frames = signal::preprocess(&series, &cfg)?;
    io::write_frames_csv(out, &frames).with_context(|| format!("writing {}", out.display()))?;
    io::write_provenance_sidecar(
        out,
        &Provenance {
            config: Some(serde_json::to_value(cfg)?),
            inputs: vec![digest(input)?],
            ..Provenance::toolkit()
        },
    )?;

    println!(
        "wrote {}: {} frames, first {} still inside filter warm-up",
        out.display(),
        frames.len(),
        cfg.warmup_frames(),
    );
    Ok(())
}

fn label(
    input: &Path,
    geom: Option<&Path>,
    out: &Path,
    eps_v: Option<f64>,
    oil_spring: bool,
) -> Result<()> {
    let file: config::LabelFile = match geom {
        Some(path) => config::read_toml(path)?,
        None => config::LabelFile::default(),
    };
    let mut geometry = CylinderGeometry::default();
    file.geometry.apply(&mut geometry);
    geometry.validate()?;

    let eps = eps_v.or(file.label.eps_v).unwrap_or(DEFAULT_EPS_V);
    let with_spring = oil_spring || file.label.oil_spring.unwrap_or(false);
    let stiffness = if with_spring {
        StiffnessModel::from_geometry(&geometry)
    } else {
        StiffnessModel::disabled(&geometry)
    };

    let frames =
        io::read_frames_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let data = label_dataset(&frames, &geometry, &stiffness, eps)?;
    io::write_labeled_csv(out, &data).with_context(|| format!("writing {}", out.display()))?;

    let mut inputs = vec![digest(input)?];
    if let Some(path) = geom {
        inputs.push(digest(path)?);
    }
    io::write_provenance_sidecar(
        out,
        &Provenance {
            config: Some(serde_json::json!({
                "geometry": geometry,
                "eps_v": eps,
                "oil_spring": with_spring,
            })),
            inputs,
            ..Provenance::toolkit()
        },
    )?;

    println!(
        "wrote {}: {} rows, {} with usable labels",
        out.display(),
        data.len(),
        data.n_included(),
    );
    Ok(())
}

fn fit_lugre(input: &Path, out: &Path, budget: usize) -> Result<()> {
    let data =
        io::read_labeled_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let init = LuGreParams::default();
    let (params, report) = lugre::identify(&data, &init, budget)?;

    let provenance = Provenance {
        config: Some(serde_json::json!({ "budget": budget, "init": init })),
        inputs: vec![digest(input)?],
        ..Provenance::toolkit()
    };
    io::write_lugre_model(out, &params, &provenance)
        .with_context(|| format!("writing {}", out.display()))?;

    println!(
        "wrote {}: training MAE {:.2} N (started at {:.2} N), {} speed bins, \
         {} refinement evaluations{}",
        out.display(),
        report.mae,
        report.initial_mae,
        report.populated_bins,
        report.evaluations,
        if report.converged { ", converged" } else { "" },
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    inputs: &[PathBuf],
    out: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
    hpo_budget: Option<usize>,
    trial_epochs: Option<usize>,
    log: Option<&Path>,
) -> Result<()> {
    let file: config::TrainFile = match config_path {
        Some(path) => config::read_toml(path)?,
        None => config::TrainFile::default(),
    };
    let mut cfg = file.train.build(seed);

    let mut datasets = Vec::with_capacity(inputs.len());
    for path in inputs {
        datasets
            .push(io::read_labeled_csv(path).with_context(|| format!("reading {}", path.display()))?);
    }

    let mut hpo_record = None;
    if let Some(budget) = hpo_budget {
        let opts = HpoOptions {
            budget,
            trial_epochs: trial_epochs.unwrap_or(HpoOptions::default().trial_epochs),
            seed: cfg.seed,
            ..HpoOptions::default()
        };
        let (best, outcomes) = hybrid::hpo_search(&datasets, &cfg, &opts)?;
        for o in &outcomes {
            let verdict = if o.pruned {
                format!("pruned after {} epochs", o.epochs_run)
            } else {
                format!("{:.2} N after {} epochs", o.val_mae, o.epochs_run)
            };
            println!(
                "trial {:>2}: {} x {:>2} units, dropout {:.2}, lr {:.1e}, \
                 {} trees depth {:>2} -> {}",
                o.index,
                o.config.lstm_layers,
                o.config.lstm_hidden,
                o.config.dropout,
                o.config.learning_rate,
                o.config.n_trees,
                o.config.tree_depth,
                verdict,
            );
        }
        hpo_record = Some(serde_json::json!({
            "budget": budget,
            "trial_epochs": opts.trial_epochs,
        }));
        cfg = best;
    }

    let (model, report) = hybrid::train_hybrid(&datasets, &cfg)?;

    let provenance = Provenance {
        seed: Some(cfg.seed),
        config: Some(serde_json::json!({ "train": cfg, "hpo": hpo_record })),
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        ..Provenance::toolkit()
    };
    io::write_hybrid_model(out, &model, &provenance)
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(log_path) = log {
        io::write_train_log_csv(log_path, &report.log)
            .with_context(|| format!("writing {}", log_path.display()))?;
        io::write_provenance_sidecar(log_path, &provenance)?;
    }

    println!(
        "wrote {}: {} train / {} validation windows, best epoch {} of {}, \
         validation MAE {:.2} N",
        out.display(),
        report.n_train_windows,
        report.n_val_windows,
        report.log.best_epoch + 1,
        report.log.epochs.len(),
        report.val_mae,
    );
    Ok(())
}

/// Reads a feature table for inference: either a labeled dataset or, for
/// unlabeled runs, a filtered-frames file (whose rows get placeholder
/// targets that inference never looks at).
fn read_feature_table(path: &Path) -> Result<LabeledDataset<f64>> {
    match io::read_labeled_csv(path) {
        Ok(data) => Ok(data),
        Err(FormatError::Header { .. }) => {
            let frames = io::read_frames_csv(path).map_err(|err| match err {
                FormatError::Header { got, .. } => anyhow!(
                    "{}: expected a labeled or filtered-frames CSV, found header {got:?}",
                    path.display()
                ),
                other => anyhow::Error::from(other).context(format!("reading {}", path.display())),
            })?;
            if frames.len() < 2 {
                bail!(
                    "{}: need at least 2 frames to establish the sampling rate",
                    path.display()
                );
            }
            let n = frames.len();
            let mut features = Matrix::zeros(n, 3);
            for (k, frame) in frames.iter().enumerate() {
                features.row_mut(k).copy_from_slice(&[frame.p1, frame.p2, frame.v]);
            }
            Ok(LabeledDataset {
                t: frames.iter().map(|f| f.t).collect(),
                x_p: frames.iter().map(|f| f.x_p).collect(),
                features,
                target: vec![0.0; n],
                included: vec![true; n],
                dt: frames[1].t - frames[0].t,
            })
        }
        Err(other) => {
            Err(anyhow::Error::from(other).context(format!("reading {}", path.display())))
        }
    }
}

fn estimate(model_path: &Path, input: &Path, out: &Path, stream: bool) -> Result<()> {
    let (model, _) = io::read_hybrid_model(model_path)
        .with_context(|| format!("reading {}", model_path.display()))?;
    let data = read_feature_table(input)?;

    let estimates = if stream {
        let mut state = model.stream_state();
        let mut acc = Vec::new();
        for k in 0..data.len() {
            let emitted = state.push(
                data.t[k],
                data.features.get(k, 0),
                data.features.get(k, 1),
                data.velocity(k),
            )?;
            if let Some(e) = emitted {
                acc.push(e);
            }
        }
        if acc.is_empty() {
            bail!(
                "{}: recording is shorter than the filter warm-up plus one window; \
                 no estimates produced",
                input.display()
            );
        }
        acc
    } else {
        model.estimate_dataset(&data)?
    };

    io::write_estimates_csv(out, &estimates)
        .with_context(|| format!("writing {}", out.display()))?;
    io::write_provenance_sidecar(
        out,
        &Provenance {
            inputs: vec![digest(model_path)?, digest(input)?],
            ..Provenance::toolkit()
        },
    )?;

    println!(
        "wrote {}: {} estimates covering rows {}..={}",
        out.display(),
        estimates.len(),
        estimates[0].row,
        estimates[estimates.len() - 1].row,
    );
    Ok(())
}

fn evaluate(model_path: &Path, lugre_path: &Path, tests: &[PathBuf], report_path: &Path) -> Result<()> {
    let (model, _) = io::read_hybrid_model(model_path)
        .with_context(|| format!("reading {}", model_path.display()))?;
    let (baseline, _) = io::read_lugre_model(lugre_path)
        .with_context(|| format!("reading {}", lugre_path.display()))?;

    let mut pairs = Vec::with_capacity(tests.len());
    for (i, path) in tests.iter().enumerate() {
        let data =
            io::read_labeled_csv(path).with_context(|| format!("reading {}", path.display()))?;
        pairs.push((u8::try_from(i + 1)?, data));
    }
    let ids: Vec<u8> = pairs.iter().map(|(id, _)| *id).collect();

    let comparisons = eval::compare_models(&pairs, &ids, &model, &baseline)?;

    // Residual and parity diagnostics pool the same scoring rows the
    // comparison used, across all recordings.
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for (_, data) in &pairs {
        let estimates = model.estimate_dataset(data)?;
        let first = estimates[0].row;
        let mut by_row = vec![f64::NAN; data.len()];
        for e in &estimates {
            by_row[e.row] = e.value;
        }
        for k in eval::scoring_rows(data, first) {
            predicted.push(by_row[k]);
            actual.push(data.target[k]);
        }
    }
    let residuals: Vec<f64> = predicted.iter().zip(&actual).map(|(p, a)| p - a).collect();

    let mut report = EvaluationReport::new();
    report.comparisons = comparisons;
    report.residual = Some(eval::residual_stats(&residuals, RESIDUAL_BINS)?);
    report.parity = Some(eval::parity_fit(&predicted, &actual)?);
    let mut inputs = vec![digest(model_path)?, digest(lugre_path)?];
    for path in tests {
        inputs.push(digest(path)?);
    }
    report.provenance = Some(Provenance {
        inputs,
        ..Provenance::toolkit()
    });
    io::write_report(report_path, &report)
        .with_context(|| format!("writing {}", report_path.display()))?;

    for c in &report.comparisons {
        println!(
            "test {}: hybrid MAE {:.2} N ({:.2}%), baseline MAE {:.2} N ({:.2}%), {} rows",
            c.test_id,
            c.hybrid.mae,
            c.hybrid.mae_percent,
            c.baseline.mae,
            c.baseline.mae_percent,
            c.rows_evaluated,
        );
    }
    let residual = report.residual.as_ref().expect("just set");
    let parity = report.parity.as_ref().expect("just set");
    println!(
        "residual median {:.3} N, skewness {:.3}; parity slope {:.4}, intercept {:.3} N",
        residual.median, residual.skewness, parity.slope, parity.intercept,
    );
    println!("wrote {}", report_path.display());
    Ok(())
}

fn bench(
    model_path: &Path,
    input: &Path,
    lugre_path: Option<&Path>,
    repeats: usize,
    report_path: Option<&Path>,
) -> Result<()> {
    let (model, _) = io::read_hybrid_model(model_path)
        .with_context(|| format!("reading {}", model_path.display()))?;
    let data = read_feature_table(input)?;

    // One timed call = one sample pushed. The recording's features repeat
    // cyclically on a synthetic endless time grid so the rate check always
    // passes and every post-warm-up push computes a full estimate.
    let n = data.len();
    let t0 = data.t[0];
    let dt = data.dt;
    let mut state = model.stream_state();
    let mut k = 0usize;
    let hybrid_stats = eval::latency_benchmark(
        || {
            let row = k % n;
            let t = t0 + k as f64 * dt;
            let _ = state.push(t, data.features.get(row, 0), data.features.get(row, 1), data.velocity(row));
            k += 1;
        },
        repeats,
    )?;
    println!(
        "hybrid stream push: mean {:.1} us, p50 {:.1} us, p99 {:.1} us, max {:.1} us \
         ({} repeats)",
        hybrid_stats.mean_s * 1e6,
        hybrid_stats.p50_s * 1e6,
        hybrid_stats.p99_s * 1e6,
        hybrid_stats.max_s * 1e6,
        hybrid_stats.repeats,
    );

    let mut baseline_stats = None;
    if let Some(path) = lugre_path {
        let (params, _) =
            io::read_lugre_model(path).with_context(|| format!("reading {}", path.display()))?;
        let mut z = 0.0f64;
        let mut j = 0usize;
        let stats = eval::latency_benchmark(
            || {
                z = params.step(z, data.velocity(j % n), dt).z;
                j += 1;
            },
            repeats,
        )?;
        println!(
            "baseline step: mean {:.3} us, p50 {:.3} us, p99 {:.3} us, max {:.3} us \
             ({:.0}x faster than the hybrid path)",
            stats.mean_s * 1e6,
            stats.p50_s * 1e6,
            stats.p99_s * 1e6,
            stats.max_s * 1e6,
            hybrid_stats.mean_s / stats.mean_s,
        );
        baseline_stats = Some(stats);
    }

    if let Some(path) = report_path {
        let mut inputs = vec![digest(model_path)?, digest(input)?];
        if let Some(lugre) = lugre_path {
            inputs.push(digest(lugre)?);
        }
        let mut report = EvaluationReport::new();
        report.hybrid_latency = Some(hybrid_stats);
        report.baseline_latency = baseline_stats;
        report.provenance = Some(Provenance {
            inputs,
            ..Provenance::toolkit()
        });
        io::write_report(path, &report).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
