//! Temporary calibration probe; not part of the suite. Run with
//! `cargo test -p fricest-core --test probe_timing -- --ignored --nocapture`.

use fricest_core::inverse::{label_dataset, StiffnessModel};
use fricest_core::lugre::{identify, LuGreParams};
use fricest_core::plant::{add_noise, generate_scenario, NoiseConfig, ScenarioConfig};
use fricest_core::signal::{preprocess, FilterConfig};
use fricest_core::hybrid::{train_hybrid_with, HybridConfig};
use fricest_core::inverse::LabeledDataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn labeled(cfg: &ScenarioConfig<f64>, seed: u64) -> (LabeledDataset<f64>, Vec<f64>) {
    let sim = generate_scenario(cfg).unwrap();
    let noisy = add_noise(
        &sim.series,
        &NoiseConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    let frames = preprocess(&noisy, &FilterConfig::default()).unwrap();
    let stiff = StiffnessModel::disabled(&cfg.geometry);
    let data = label_dataset(&frames, &cfg.geometry, &stiff, 1e-4).unwrap();
    (data, sim.friction().to_vec())
}

fn label_error(data: &LabeledDataset<f64>, truth: &[f64]) -> (f64, f64, usize) {
    let (mut err, mut n) = (0.0, 0usize);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..data.len() {
        lo = lo.min(truth[k]);
        hi = hi.max(truth[k]);
        if k >= 200 && data.included[k] {
            err += (data.target[k] - truth[k]).abs();
            n += 1;
        }
    }
    (err / n as f64, hi - lo, n)
}

#[test]
#[ignore]
fn probe() {
    let t_all = Instant::now();
    let mut datasets = Vec::new();
    for level in 1..=4u8 {
        let t0 = Instant::now();
        let cfg: ScenarioConfig<f64> = ScenarioConfig::load_level(level, 10.56).unwrap();
        let sim = generate_scenario(&cfg).unwrap();
        let sim_s = t0.elapsed().as_secs_f64();
        let (data, truth) = labeled(&cfg, 100 + level as u64);
        let (mae, range, n) = label_error(&data, &truth);
        println!(
            "level {level}: {} samples sim {sim_s:.2}s | rows {n} | label err MAE {mae:.1} N | range {range:.0} N | err/range {:.2}% | stops {} cav {}",
            data.len(),
            100.0 * mae / range,
            sim.stop_contacts,
            sim.cavitation_events,
        );
        if level == 1 {
            let mut errs: Vec<(f64, usize)> = (200..data.len())
                .filter(|&k| data.included[k])
                .map(|k| ((data.target[k] - truth[k]).abs(), k))
                .collect();
            errs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let n = errs.len();
            println!(
                "  err pctl: p50 {:.0} p75 {:.0} p90 {:.0} p99 {:.0} max {:.0}",
                errs[n / 2].0,
                errs[n / 4].0,
                errs[n / 10].0,
                errs[n / 100].0,
                errs[0].0
            );
            println!("  worst rows (t, v, x, p1bar, p2bar, label, true):");
            for &(e, k) in errs.iter().take(8) {
                println!(
                    "    t={:7.3} v={:+.4} x={:.4} p1={:6.1} p2={:6.1} label={:9.1} true={:8.1} err={:8.0}",
                    0.005 * k as f64,
                    data.velocity(k),
                    data.x_p[k],
                    sim.series.p1()[k] / 1e5,
                    sim.series.p2()[k] / 1e5,
                    data.target[k],
                    truth[k],
                    e
                );
            }
            let slow: Vec<f64> = (200..data.len())
                .filter(|&k| data.included[k] && data.velocity(k).abs() < 0.05)
                .map(|k| (data.target[k] - truth[k]).abs())
                .collect();
            let fast: Vec<f64> = (200..data.len())
                .filter(|&k| data.included[k] && data.velocity(k).abs() >= 0.05)
                .map(|k| (data.target[k] - truth[k]).abs())
                .collect();
            println!(
                "  slow rows (|v|<0.05): {} mean err {:.0} | fast rows: {} mean err {:.0}",
                slow.len(),
                slow.iter().sum::<f64>() / slow.len().max(1) as f64,
                fast.len(),
                fast.iter().sum::<f64>() / fast.len().max(1) as f64
            );
        }
        datasets.push((data, truth));
    }

    let t0 = Instant::now();
    let (init, report) = identify(&datasets[0].0, &LuGreParams::default(), 200).unwrap();
    println!(
        "identify lvl1: {:.2}s evals {} | init MAE {:.1} -> fitted {:.1} | f_c {:.0} f_s {:.0} v_s {:.4} s0 {:.3e} s1 {:.1} s2 {:.1} | bins {}",
        t0.elapsed().as_secs_f64(),
        report.evaluations,
        report.initial_mae,
        report.mae,
        init.f_c,
        init.f_s,
        init.v_s,
        init.sigma0,
        init.sigma1,
        init.sigma2,
        report.populated_bins,
    );

    let pcfg: ScenarioConfig<f64> = ScenarioConfig::prescribed(280.0, 1.0, 40.0);
    let (pdata, ptruth) = labeled(&pcfg, 7);
    let (mae, range, n) = label_error(&pdata, &ptruth);
    println!(
        "prescribed 280/1Hz/40s: rows {n} | label err MAE {mae:.1} N | range {range:.0} N | err/range {:.2}%",
        100.0 * mae / range,
    );

    let sets: Vec<_> = datasets.iter().map(|(d, _)| d.clone()).collect();
    let cfg = HybridConfig::default();
    let t0 = Instant::now();
    let mut epochs = 0usize;
    let capped = HybridConfig {
        max_epochs: 3,
        patience: 3,
        ..cfg
    };
    let (_, report) = train_hybrid_with(&sets, &capped, |_, _, _| {
        epochs += 1;
        true
    })
    .unwrap();
    println!(
        "3 epochs: {:.2}s total ({:.2}s/epoch) | windows {} train / {} val | val MAE {:.2}",
        t0.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() / epochs.max(1) as f64,
        report.n_train_windows,
        report.n_val_windows,
        report.val_mae,
    );
    println!("probe total {:.1}s", t_all.elapsed().as_secs_f64());
}
