//! Error metrics, residual diagnostics, parity fits, latency measurement,
//! and the side-by-side comparison of the hybrid estimator against the
//! friction-model baseline.

use crate::hybrid::HybridModel;
use crate::inverse::LabeledDataset;
use crate::lugre::{self, LuGreParams};
use crate::{Error, Result, Scalar};
use std::time::Instant;

/// Seconds of every recording ignored when scoring the friction-model
/// baseline, so its internal state can forget the arbitrary zero start.
pub const BASELINE_DISCARD_S: f64 = 1.0;
/// Un-timed calls before a latency measurement starts.
const LATENCY_WARMUP_CALLS: usize = 100;
/// Smallest repeat count that gives stable tail percentiles.
pub const MIN_LATENCY_REPEATS: usize = 1000;

/// Mean absolute error between aligned sequences.
pub fn mae<T: Scalar>(predicted: &[T], actual: &[T]) -> Result<T> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyDataset("MAE of zero samples".into()));
    }
    let sum: T = predicted
        .iter()
        .zip(actual)
        .map(|(&p, &a)| (p - a).abs())
        .sum();
    Ok(sum / T::from_f64(predicted.len() as f64))
}

/// MAE as a percentage of the mean absolute reference value.
///
/// Errors with [`Error::UndefinedBase`] when the reference is identically
/// zero.
pub fn mae_percent<T: Scalar>(predicted: &[T], actual: &[T]) -> Result<T> {
    let e = mae(predicted, actual)?;
    let base: T = actual.iter().map(|a| a.abs()).sum::<T>()
        / T::from_f64(actual.len() as f64);
    if base == T::zero() {
        return Err(Error::UndefinedBase);
    }
    Ok(T::from_f64(100.0) * e / base)
}

/// Linear-interpolation quantile of an ascending slice (the convention most
/// numeric packages default to).
fn quantile_sorted<T: Scalar>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = T::from_f64(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Histogram<T> {
    /// `bins + 1` ascending edges.
    pub edges: Vec<T>,
    pub counts: Vec<usize>,
}

/// Location, spread, shape, and distribution of a residual sample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResidualStats<T> {
    pub n: usize,
    pub mean: T,
    /// Sample standard deviation.
    pub std: T,
    pub min: T,
    pub q1: T,
    pub median: T,
    pub q3: T,
    pub max: T,
    /// Adjusted Fisher-Pearson coefficient (zero for a flat sample).
    pub skewness: T,
    pub histogram: Histogram<T>,
}

/// Computes residual diagnostics over at least three values.
pub fn residual_stats<T: Scalar>(residuals: &[T], bins: usize) -> Result<ResidualStats<T>> {
    let n = residuals.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "residual statistics need at least 3 values, got {n}"
        )));
    }
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::numeric("residual statistics"));
    }
    let n_t = T::from_f64(n as f64);
    let mean = residuals.iter().copied().sum::<T>() / n_t;
    let mut m2 = T::zero();
    let mut m3 = T::zero();
    for &r in residuals {
        let d = r - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n_t;
    m3 /= n_t;
    let std = (m2 * n_t / T::from_f64((n - 1) as f64)).sqrt();
    let skewness = if m2 == T::zero() {
        T::zero()
    } else {
        let g1 = m3 / m2.powf(T::from_f64(1.5));
        let adjust = ((n * (n - 1)) as f64).sqrt() / (n - 2) as f64;
        g1 * T::from_f64(adjust)
    };

    let mut sorted = residuals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let (min, max) = (sorted[0], sorted[n - 1]);

    // Histogram over [min, max]; a flat sample widens to half a unit each
    // side so every bin keeps a nonzero width.
    let (lo, hi) = if min == max {
        (min - T::from_f64(0.5), max + T::from_f64(0.5))
    } else {
        (min, max)
    };
    let width = (hi - lo) / T::from_f64(bins as f64);
    let edges: Vec<T> = (0..=bins)
        .map(|b| lo + width * T::from_f64(b as f64))
        .collect();
    let mut counts = vec![0usize; bins];
    for &r in residuals {
        let frac = ((r - lo) / (hi - lo)).to_f64();
        let bin = ((frac * bins as f64).floor() as usize).min(bins - 1);
        counts[bin] += 1;
    }

    Ok(ResidualStats {
        n,
        mean,
        std,
        min,
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max,
        skewness,
        histogram: Histogram { edges, counts },
    })
}

/// Ordinary least squares of predictions against reference values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParityFit<T> {
    /// Slope of predicted-vs-actual; one means calibrated scale.
    pub slope: T,
    /// Offset in physical units; zero means no bias.
    pub intercept: T,
}

/// Fits `predicted = slope * actual + intercept` by least squares.
pub fn parity_fit<T: Scalar>(predicted: &[T], actual: &[T]) -> Result<ParityFit<T>> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.len() < 2 {
        return Err(Error::InsufficientData(
            "parity fit needs at least 2 points".into(),
        ));
    }
    let n = T::from_f64(predicted.len() as f64);
    let mean_x = actual.iter().copied().sum::<T>() / n;
    let mean_y = predicted.iter().copied().sum::<T>() / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&y, &x) in predicted.iter().zip(actual) {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if sxx == T::zero() {
        return Err(Error::numeric("parity fit on a constant reference"));
    }
    let slope = sxy / sxx;
    Ok(ParityFit {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}

/// Wall-clock statistics of repeated calls, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencyStats {
    pub repeats: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p99_s: f64,
    pub max_s: f64,
}

/// Times `repeats` calls of `f` after a short untimed warm-up.
///
/// Fewer than [`MIN_LATENCY_REPEATS`] repeats is rejected: tail percentiles
/// from small samples are noise.
pub fn latency_benchmark<F: FnMut()>(mut f: F, repeats: usize) -> Result<LatencyStats> {
    if repeats < MIN_LATENCY_REPEATS {
        return Err(Error::invalid(format!(
            "latency benchmark needs at least {MIN_LATENCY_REPEATS} repeats, got {repeats}"
        )));
    }
    for _ in 0..LATENCY_WARMUP_CALLS {
        f();
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f();
        times.push(start.elapsed().as_secs_f64());
    }
    let mean_s = times.iter().sum::<f64>() / repeats as f64;
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    Ok(LatencyStats {
        repeats,
        mean_s,
        p50_s: quantile_sorted(&times, 0.5),
        p99_s: quantile_sorted(&times, 0.99),
        max_s: times[times.len() - 1],
    })
}

/// Accuracy of one model on one test recording.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelScores<T> {
    pub mae: T,
    pub mae_percent: T,
}

/// Hybrid-vs-baseline accuracy on one recording's held-out tail.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TestComparison<T> {
    pub test_id: u8,
    /// Rows both models were scored on.
    pub rows_evaluated: usize,
    pub hybrid: ModelScores<T>,
    pub baseline: ModelScores<T>,
}

/// Rows of a recording that model scores are computed on: the
/// chronologically last fifth, restricted to rows with a reliable label, at
/// or past `first_estimate_row` (the estimator's warm-up), and at least
/// [`BASELINE_DISCARD_S`] after the start (the baseline integrates its
/// internal state from zero over the full recording, so its start-up
/// transient is excluded for both models alike).
#[must_use]
pub fn scoring_rows<T: Scalar>(data: &LabeledDataset<T>, first_estimate_row: usize) -> Vec<usize> {
    let holdout_start = data.len() * 4 / 5;
    let t0 = data.t[0];
    let discard = T::from_f64(BASELINE_DISCARD_S);
    (holdout_start..data.len())
        .filter(|&k| data.included[k] && k >= first_estimate_row && data.t[k] - t0 >= discard)
        .collect()
}

/// Scores the hybrid estimator and the friction-model baseline on the same
/// rows of each listed recording; see [`scoring_rows`] for which rows count.
/// Recordings are matched to `required_ids`; a missing id is
/// [`Error::MissingTest`].
pub fn compare_models<T: Scalar>(
    tests: &[(u8, LabeledDataset<T>)],
    required_ids: &[u8],
    model: &HybridModel<T>,
    baseline: &LuGreParams<T>,
) -> Result<Vec<TestComparison<T>>> {
    let mut out = Vec::with_capacity(required_ids.len());
    for &id in required_ids {
        let (_, data) = tests
            .iter()
            .find(|(tid, _)| *tid == id)
            .ok_or(Error::MissingTest { test_id: id })?;

        let estimates = model.estimate_dataset(data)?;
        let first_hybrid_row = estimates[0].row;
        let mut hybrid_at = vec![None; data.len()];
        for e in &estimates {
            hybrid_at[e.row] = Some(e.value);
        }

        let velocity: Vec<T> = (0..data.len()).map(|k| data.velocity(k)).collect();
        let baseline_series =
            lugre::evaluate_velocity_series(&velocity, data.dt, baseline, T::zero())?;

        let rows = scoring_rows(data, first_hybrid_row);
        if rows.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "no scorable rows in the holdout of test {id}"
            )));
        }

        let actual: Vec<T> = rows.iter().map(|&k| data.target[k]).collect();
        let hybrid_pred: Vec<T> = rows
            .iter()
            .map(|&k| hybrid_at[k].expect("row past first estimate"))
            .collect();
        let baseline_pred: Vec<T> = rows.iter().map(|&k| baseline_series[k]).collect();

        out.push(TestComparison {
            test_id: id,
            rows_evaluated: rows.len(),
            hybrid: ModelScores {
                mae: mae(&hybrid_pred, &actual)?,
                mae_percent: mae_percent(&hybrid_pred, &actual)?,
            },
            baseline: ModelScores {
                mae: mae(&baseline_pred, &actual)?,
                mae_percent: mae_percent(&baseline_pred, &actual)?,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mae_is_the_mean_absolute_gap() {
        let e = mae(&[1.0, 2.0, 3.0], &[2.0, 2.0, 1.0]).unwrap();
        assert_relative_eq!(e, (1.0 + 0.0 + 2.0) / 3.0);
        assert!(matches!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(mae::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn mae_percent_normalizes_by_mean_magnitude() {
        let p = mae_percent(&[11.0, -9.0], &[10.0, -10.0]).unwrap();
        assert_relative_eq!(p, 10.0); // MAE 1 over mean |ref| 10
        assert!(matches!(
            mae_percent(&[1.0, 1.0], &[0.0, 0.0]),
            Err(Error::UndefinedBase)
        ));
    }

    #[test]
    fn quartiles_interpolate_linearly() {
        let s = residual_stats(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_relative_eq!(s.q1, 1.75);
        assert_relative_eq!(s.median, 2.5);
        assert_relative_eq!(s.q3, 3.25);
        let s = residual_stats(&[5.0, 1.0, 3.0, 2.0, 4.0], 4).unwrap();
        assert_relative_eq!(s.q1, 2.0);
        assert_relative_eq!(s.median, 3.0);
        assert_relative_eq!(s.q3, 4.0);
        assert_relative_eq!(s.min, 1.0);
        assert_relative_eq!(s.max, 5.0);
    }

    #[test]
    fn skewness_matches_a_hand_computed_case() {
        // For [0, 0, 0, 1] the adjusted coefficient works out to exactly 2.
        let s = residual_stats(&[0.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_relative_eq!(s.skewness, 2.0, max_relative = 1e-12);
        // Symmetric data has zero skew; flat data is defined as zero.
        let s = residual_stats(&[-1.0, 0.0, 1.0], 2).unwrap();
        assert_relative_eq!(s.skewness, 0.0);
        let s = residual_stats(&[3.0, 3.0, 3.0, 3.0], 2).unwrap();
        assert_relative_eq!(s.skewness, 0.0);
    }

    #[test]
    fn exponential_draws_are_visibly_right_skewed() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let draws: Vec<f64> = (0..4000)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let s = residual_stats(&draws, 20).unwrap();
        assert!(
            s.skewness > 0.5,
            "exponential sample skewness {} should exceed 0.5",
            s.skewness
        );
        assert_relative_eq!(s.mean, 1.0, max_relative = 0.1);
    }

    #[test]
    fn histogram_counts_every_value_once() {
        let values = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 5.0];
        let s = residual_stats(&values, 5).unwrap();
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), values.len());
        assert_eq!(s.histogram.edges.len(), 6);
        // The maximum lands in the last bin, not past it.
        assert_eq!(*s.histogram.counts.last().unwrap(), 3); // 4.0, 5.0, 5.0
        // A flat sample still gets a well-formed histogram.
        let s = residual_stats(&[2.0, 2.0, 2.0], 3).unwrap();
        assert_relative_eq!(s.histogram.edges[0], 1.5);
        assert_relative_eq!(*s.histogram.edges.last().unwrap(), 2.5);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 3);
    }

    #[test]
    fn parity_recovers_an_exact_line() {
        let actual = [1.0, 2.0, 3.0, 4.0];
        let predicted: Vec<f64> = actual.iter().map(|x| 1.1 * x - 0.3).collect();
        let fit = parity_fit(&predicted, &actual).unwrap();
        assert_relative_eq!(fit.slope, 1.1, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, -0.3, max_relative = 1e-9);
        assert!(parity_fit(&[1.0, 2.0], &[5.0, 5.0]).is_err());
    }

    #[test]
    fn latency_benchmark_orders_its_percentiles() {
        let mut x = 0u64;
        let stats = latency_benchmark(
            || {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            },
            1000,
        )
        .unwrap();
        assert!(stats.mean_s >= 0.0);
        assert!(stats.p50_s <= stats.p99_s);
        assert!(stats.p99_s <= stats.max_s);
        assert!(latency_benchmark(|| {}, 999).is_err());
    }

    #[test]
    fn comparison_requires_every_listed_test() {
        use crate::hybrid::{train_hybrid, HybridConfig};
        use crate::Matrix;
        use rand::{Rng, SeedableRng};

        // Small synthetic recording; the exact values only need to be
        // learnable and nonzero.
        let build = |rows: usize, seed: u64| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dt = 0.005;
            let mut features = Matrix::zeros(0, 3);
            let mut target = Vec::new();
            for k in 0..rows {
                let tt = k as f64 * dt;
                let p1 = 30e5 + 5e5 * (tt * 1.1).sin() + 1e4 * rng.random::<f64>();
                let p2 = 18e5 + 4e5 * (tt * 0.7).cos();
                let v = 0.25 * (tt * 2.0).sin();
                features.push_row(&[p1, p2, v]).unwrap();
                target.push(2e-4 * p1 - 1e-4 * p2 + 250.0 * v);
            }
            LabeledDataset {
                t: (0..rows).map(|k| k as f64 * dt).collect(),
                x_p: vec![0.0; rows],
                features,
                target,
                included: vec![true; rows],
                dt,
            }
        };
        let cfg = HybridConfig {
            window: 6,
            window_stride: 2,
            warmup_frames: 4,
            lstm_hidden: 8,
            lstm_layers: 1,
            dropout: 0.0,
            learning_rate: 5e-3,
            batch_size: 32,
            max_epochs: 4,
            patience: 4,
            n_trees: 16,
            tree_depth: 10,
            seed: 3,
        };
        let (model, _) = train_hybrid(&[build(400, 1)], &cfg).unwrap();
        let tests = vec![(1u8, build(320, 2)), (2u8, build(320, 3))];
        let params = LuGreParams::<f64>::default();

        let report = compare_models(&tests, &[1, 2], &model, &params).unwrap();
        assert_eq!(report.len(), 2);
        for tc in &report {
            assert!(tc.rows_evaluated > 0);
            assert!(tc.hybrid.mae.is_finite() && tc.baseline.mae.is_finite());
            assert!(tc.hybrid.mae_percent > 0.0);
        }
        assert!(matches!(
            compare_models(&tests, &[1, 2, 3], &model, &params),
            Err(Error::MissingTest { test_id: 3 })
        ));
    }
}
