//! Measurement series, causal filtering, differentiation, standardization.
//!
//! The acquisition convention throughout the crate: position and both chamber
//! pressures sampled on a fixed grid (5 ms / 200 Hz by default), smoothed with
//! trailing moving averages, velocity and acceleration formed by backward
//! differences, and the acceleration smoothed once more. All filters are
//! causal so the same arithmetic can run sample-by-sample in a stream.

use crate::{Error, Matrix, Result, Scalar};

/// Nominal sample interval in seconds (200 Hz acquisition).
pub const DEFAULT_DT: f64 = 0.005;

/// Tolerated wobble of the time grid, in seconds.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// One raw sample as it arrives from the sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    /// Time in seconds.
    pub t: T,
    /// Piston position in meters, measured from stroke start.
    pub x_p: T,
    /// Chamber 1 (cap side) pressure in pascals.
    pub p1: T,
    /// Chamber 2 (rod side) pressure in pascals.
    pub p2: T,
}

/// A uniformly sampled recording of the measured channels, column-major.
///
/// Invariants, enforced on construction:
/// * all columns have the same length, at least 2 samples;
/// * timestamps strictly increase on a uniform grid (within
///   [`GRID_TOLERANCE`] of the first interval);
/// * all values finite, pressures non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    t: Vec<T>,
    x_p: Vec<T>,
    p1: Vec<T>,
    p2: Vec<T>,
    f_true: Option<Vec<T>>,
    dt: T,
}

impl<T: Scalar> TimeSeries<T> {
    /// Validates the columns and builds a series.
    ///
    /// `f_true` carries the injected ground-truth friction when the series
    /// came from the simulator; measured recordings leave it `None`.
    pub fn new(
        t: Vec<T>,
        x_p: Vec<T>,
        p1: Vec<T>,
        p2: Vec<T>,
        f_true: Option<Vec<T>>,
    ) -> Result<Self> {
        let n = t.len();
        for (name, col) in [("x_p", &x_p), ("p1", &p1), ("p2", &p2)] {
            if col.len() != n {
                return Err(Error::invalid(format!(
                    "column {name} has {} rows, t has {n}",
                    col.len()
                )));
            }
        }
        if let Some(f) = &f_true {
            if f.len() != n {
                return Err(Error::invalid(format!(
                    "column f_true has {} rows, t has {n}",
                    f.len()
                )));
            }
        }
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "a series needs at least 2 samples to define a rate, got {n}"
            )));
        }
        let dt = t[1] - t[0];
        if !(dt > T::zero()) {
            return Err(Error::invalid("timestamps must strictly increase"));
        }
        let tol = T::from_f64(GRID_TOLERANCE);
        for k in 1..n {
            let step = t[k] - t[k - 1];
            if !(step > T::zero()) {
                return Err(Error::invalid(format!(
                    "timestamps must strictly increase (sample {k})"
                )));
            }
            if (step - dt).abs() > tol {
                return Err(Error::invalid(format!(
                    "non-uniform sample interval at sample {k}: {step} vs {dt}"
                )));
            }
        }
        for (name, col) in [("t", &t), ("x_p", &x_p), ("p1", &p1), ("p2", &p2)] {
            if let Some(k) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::OutOfRange(format!(
                    "non-finite {name} at sample {k}"
                )));
            }
        }
        if let Some(f) = &f_true {
            if let Some(k) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::OutOfRange(format!(
                    "non-finite f_true at sample {k}"
                )));
            }
        }
        for (name, col) in [("p1", &p1), ("p2", &p2)] {
            if let Some(k) = col.iter().position(|&v| v < T::zero()) {
                return Err(Error::OutOfRange(format!(
                    "negative pressure {name} at sample {k}"
                )));
            }
        }
        Ok(Self {
            t,
            x_p,
            p1,
            p2,
            f_true,
            dt,
        })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.t.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sample interval of the (validated) uniform grid.
    #[must_use]
    pub fn dt(&self) -> T {
        self.dt
    }

    #[must_use]
    pub fn t(&self) -> &[T] {
        &self.t
    }

    #[must_use]
    pub fn x_p(&self) -> &[T] {
        &self.x_p
    }

    #[must_use]
    pub fn p1(&self) -> &[T] {
        &self.p1
    }

    #[must_use]
    pub fn p2(&self) -> &[T] {
        &self.p2
    }

    #[must_use]
    pub fn f_true(&self) -> Option<&[T]> {
        self.f_true.as_deref()
    }

    /// The `k`-th sample as a streaming input record.
    #[must_use]
    pub fn sample(&self, k: usize) -> Sample<T> {
        Sample {
            t: self.t[k],
            x_p: self.x_p[k],
            p1: self.p1[k],
            p2: self.p2[k],
        }
    }
}

/// One filtered frame: smoothed channels plus derived kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicFrame<T> {
    pub t: T,
    /// Smoothed position, meters.
    pub x_p: T,
    /// Velocity from backward differences of the smoothed position, m/s.
    pub v: T,
    /// Smoothed acceleration, m/s^2.
    pub a: T,
    /// Smoothed chamber 1 pressure, Pa.
    pub p1: T,
    /// Smoothed chamber 2 pressure, Pa.
    pub p2: T,
}

/// Moving-average window lengths for the preprocessing chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    /// Trailing window applied to position and both pressures.
    pub smoothing_window: usize,
    /// Trailing window applied to the raw acceleration.
    pub accel_window: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 10,
            accel_window: 30,
        }
    }
}

impl FilterConfig {
    /// Number of leading frames whose values still depend on filter warm-up
    /// (shrunken windows or backfilled differences). Frames at indices
    /// `>= warmup_frames()` are exactly reproducible sample-by-sample.
    #[must_use]
    pub fn warmup_frames(&self) -> usize {
        self.accel_window + 1
    }

    fn validate(&self) -> Result<()> {
        if self.smoothing_window == 0 || self.accel_window == 0 {
            return Err(Error::invalid("filter windows must be at least 1"));
        }
        Ok(())
    }
}

/// Trailing moving average with a shrinking start-up window.
///
/// `out[k]` is the mean of `xs[k + 1 - window ..= k]`, clipped at the start
/// of the series, summed in chronological order. Output length equals input
/// length; the filter is causal.
///
/// Errors with [`Error::InvalidArgument`] when `window == 0`.
pub fn moving_average<T: Scalar>(xs: &[T], window: usize) -> Result<Vec<T>> {
    if window == 0 {
        return Err(Error::invalid("moving average window must be at least 1"));
    }
    let mut out = Vec::with_capacity(xs.len());
    for k in 0..xs.len() {
        let start = (k + 1).saturating_sub(window);
        let slice = &xs[start..=k];
        let sum: T = slice.iter().sum();
        out.push(sum / T::from_f64(slice.len() as f64));
    }
    Ok(out)
}

/// Backward-difference derivative on a uniform grid.
///
/// `out[k] = (xs[k] - xs[k-1]) / dt` for `k >= 1`; the first value is
/// backfilled with `out[1]` so the output aligns with the input.
///
/// Errors when `dt <= 0` or fewer than 2 samples are given.
pub fn differentiate<T: Scalar>(xs: &[T], dt: T) -> Result<Vec<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::invalid("differentiation step must be positive"));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "differentiation needs at least 2 samples, got {}",
            xs.len()
        )));
    }
    let mut out = Vec::with_capacity(xs.len());
    out.push(T::zero());
    for k in 1..xs.len() {
        out.push((xs[k] - xs[k - 1]) / dt);
    }
    out[0] = out[1];
    Ok(out)
}

/// Runs the full filter chain over a raw series.
///
/// Position and pressures are smoothed with `cfg.smoothing_window`; velocity
/// is the backward difference of the smoothed position; acceleration is the
/// backward difference of velocity smoothed once more with
/// `cfg.accel_window`. One frame is produced per input sample.
///
/// Errors with [`Error::InsufficientData`] when the series is shorter than
/// `cfg.accel_window + 1` samples.
pub fn preprocess<T: Scalar>(
    series: &TimeSeries<T>,
    cfg: &FilterConfig,
) -> Result<Vec<KinematicFrame<T>>> {
    cfg.validate()?;
    let min_len = cfg.warmup_frames().max(2);
    if series.len() < min_len {
        return Err(Error::InsufficientData(format!(
            "preprocessing needs at least {min_len} samples for these windows, got {}",
            series.len()
        )));
    }
    let dt = series.dt();
    let xs = moving_average(series.x_p(), cfg.smoothing_window)?;
    let p1 = moving_average(series.p1(), cfg.smoothing_window)?;
    let p2 = moving_average(series.p2(), cfg.smoothing_window)?;
    let v = differentiate(&xs, dt)?;
    let a_raw = differentiate(&v, dt)?;
    let a = moving_average(&a_raw, cfg.accel_window)?;

    let frames = (0..series.len())
        .map(|k| KinematicFrame {
            t: series.t()[k],
            x_p: xs[k],
            v: v[k],
            a: a[k],
            p1: p1[k],
            p2: p2[k],
        })
        .collect();
    Ok(frames)
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardization<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Standardization<T> {
    #[must_use]
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Maps one value of column `col` back to physical units.
    #[must_use]
    pub fn destandardize(&self, col: usize, value: T) -> T {
        value * self.std[col] + self.mean[col]
    }

    /// Standardizes one row in place.
    pub fn standardize_row(&self, row: &mut [T]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }
}

/// Fits per-column standardization statistics (population variance).
///
/// Errors: fewer than 2 rows is [`Error::InsufficientData`]; a column with
/// (numerically) zero variance is [`Error::DegenerateFeature`]. The variance
/// floor scales with machine epsilon so a column of identical values is
/// rejected even when summation rounding leaves a nonzero residual.
pub fn fit_standardization<T: Scalar>(features: &Matrix<T>) -> Result<Standardization<T>> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let cols = features.cols();
    let count = T::from_f64(n as f64);
    let mut mean = vec![T::zero(); cols];
    for row in features.iter_rows() {
        for (c, &v) in row.iter().enumerate() {
            mean[c] += v;
        }
    }
    for m in &mut mean {
        *m = *m / count;
    }
    let mut var = vec![T::zero(); cols];
    for row in features.iter_rows() {
        for (c, &v) in row.iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let mut std = vec![T::zero(); cols];
    for c in 0..cols {
        let s = (var[c] / count).sqrt();
        let floor = T::epsilon() * T::from_f64(64.0) * T::one().max(mean[c].abs());
        if s <= floor {
            return Err(Error::DegenerateFeature { column: c });
        }
        std[c] = s;
    }
    Ok(Standardization { mean, std })
}

/// Applies fitted statistics column-wise: `(x - mean) / std`.
///
/// Errors with [`Error::LengthMismatch`] when the column counts differ.
pub fn apply_standardization<T: Scalar>(
    features: &Matrix<T>,
    stats: &Standardization<T>,
) -> Result<Matrix<T>> {
    if features.cols() != stats.width() {
        return Err(Error::LengthMismatch {
            left: features.cols(),
            right: stats.width(),
        });
    }
    let mut out = features.clone();
    for r in 0..out.rows() {
        stats.standardize_row(out.row_mut(r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ramp_series(n: usize, x0: f64, v: f64) -> TimeSeries<f64> {
        let t: Vec<f64> = (0..n).map(|k| k as f64 * DEFAULT_DT).collect();
        let x: Vec<f64> = t.iter().map(|&t| x0 + v * t).collect();
        let p1 = vec![2.0e6; n];
        let p2 = vec![1.0e6; n];
        TimeSeries::new(t, x, p1, p2, None).unwrap()
    }

    #[test]
    fn moving_average_constant_is_identity() {
        let out = moving_average(&[5.0; 4], 3).unwrap();
        assert_eq!(out, vec![5.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn moving_average_window_one_is_identity() {
        let xs = [1.5, -2.25, 7.0, 0.125];
        assert_eq!(moving_average(&xs, 1).unwrap(), xs.to_vec());
    }

    #[test]
    fn moving_average_shrinks_at_start() {
        let out = moving_average(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(out, vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn moving_average_window_longer_than_series() {
        let out = moving_average(&[2.0, 4.0], 10).unwrap();
        assert_eq!(out, vec![2.0, 3.0]);
    }

    #[test]
    fn moving_average_rejects_zero_window() {
        assert!(matches!(
            moving_average(&[1.0], 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn differentiate_backfills_first_value() {
        let out = differentiate(&[0.0, 0.005, 0.020], 0.005).unwrap();
        assert_relative_eq!(out[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(out[1], 1.0, max_relative = 1e-12);
        assert_relative_eq!(out[2], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn differentiate_constant_is_zero() {
        let out = differentiate(&[2.5; 5], 0.01).unwrap();
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn differentiate_rejects_bad_step_and_short_input() {
        assert!(matches!(
            differentiate(&[1.0, 2.0], 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            differentiate(&[1.0, 2.0], -0.005),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            differentiate(&[1.0], 0.005),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn preprocess_recovers_constant_velocity() {
        let series = ramp_series(100, 0.02, 0.05);
        let cfg = FilterConfig::default();
        let frames = preprocess(&series, &cfg).unwrap();
        assert_eq!(frames.len(), 100);
        // The acceleration average is only fully fed by settled samples once
        // smoothing_window + accel_window frames have passed; before that the
        // start-up transient of the velocity chain is still inside it.
        let settled = cfg.smoothing_window + cfg.accel_window;
        for frame in &frames[settled..] {
            assert_relative_eq!(frame.v, 0.05, max_relative = 1e-9);
            assert!(frame.a.abs() < 1e-9);
            assert_relative_eq!(frame.p1, 2.0e6, max_relative = 1e-12);
        }
        // The declared warm-up mark is earlier; velocity is already exact there.
        for frame in &frames[cfg.warmup_frames()..settled] {
            assert_relative_eq!(frame.v, 0.05, max_relative = 1e-9);
        }
    }

    #[test]
    fn preprocess_rejects_short_series() {
        let series = ramp_series(30, 0.0, 0.01);
        let err = preprocess(&series, &FilterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    // Spot values frozen from an independent filter-chain computation on
    // x(t) = 0.1 + 0.03 sin(2*pi*0.8 t) (see tests/oracles in the repo notes):
    // the chain definitions applied directly to the closed-form samples.
    #[test]
    fn preprocess_matches_frozen_sinusoid_values() {
        let n = 120;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * DEFAULT_DT).collect();
        let x: Vec<f64> = t
            .iter()
            .map(|&t| 0.1 + 0.03 * (2.0 * std::f64::consts::PI * 0.8 * t).sin())
            .collect();
        let p1 = vec![1.0e6; n];
        let p2 = vec![5.0e5; n];
        let series = TimeSeries::new(t, x, p1, p2, None).unwrap();
        let frames = preprocess(&series, &FilterConfig::default()).unwrap();
        assert_relative_eq!(frames[40].v, ORACLE_V40, max_relative = 1e-12);
        assert_relative_eq!(frames[40].a, ORACLE_A40, max_relative = 1e-12);
        assert_relative_eq!(frames[100].v, ORACLE_V100, max_relative = 1e-12);
        assert_relative_eq!(frames[100].a, ORACLE_A100, max_relative = 1e-12);
    }

    // Frozen oracle values for the sinusoid test above.
    const ORACLE_V40: f64 = 9.58684917439917017e-2;
    const ORACLE_A40: f64 = -3.55636270366147977e-1;
    const ORACLE_V100: f64 = -1.09636794289991180e-1;
    const ORACLE_A100: f64 = -6.67954051134955873e-1;

    #[test]
    fn timeseries_rejects_non_uniform_grid() {
        let t = vec![0.0, 0.005, 0.011];
        let x = vec![0.0; 3];
        let p = vec![0.0; 3];
        let err = TimeSeries::new(t, x, p.clone(), p, None).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn timeseries_rejects_negative_pressure() {
        let t = vec![0.0, 0.005];
        let err = TimeSeries::new(t, vec![0.0; 2], vec![-1.0, 0.0], vec![0.0; 2], None)
            .unwrap_err();
        assert!(matches!(err, Error::OutOfRange(_)));
    }

    #[test]
    fn standardization_two_point_column() {
        let m = Matrix::from_flat(vec![1.0, 3.0], 2, 1).unwrap();
        let stats = fit_standardization(&m).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        let out = apply_standardization(&m, &stats).unwrap();
        assert_eq!(out.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardization_rejects_constant_column() {
        let m = Matrix::from_flat(vec![1.0, 0.1, 2.0, 0.1, 3.0, 0.1], 3, 2).unwrap();
        let err = fit_standardization(&m).unwrap_err();
        assert_eq!(err, Error::DegenerateFeature { column: 1 });
    }

    #[test]
    fn standardization_stats_after_apply() {
        let vals: Vec<f64> = (0..50).map(|k| 10.0 + 0.25 * k as f64).collect();
        let m = Matrix::from_flat(vals, 50, 1).unwrap();
        let stats = fit_standardization(&m).unwrap();
        let out = apply_standardization(&m, &stats).unwrap();
        let mean: f64 = out.as_slice().iter().sum::<f64>() / 50.0;
        let var: f64 = out.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
        assert!(mean.abs() <= 1e-12);
        assert!((var.sqrt() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn destandardize_inverts_exactly() {
        let stats = Standardization {
            mean: vec![4.0],
            std: vec![0.5],
        };
        // Multiply-then-add is the declared inverse; check it bitwise on a
        // value that is exact in binary.
        assert_eq!(stats.destandardize(0, 3.0), 5.5);
    }

    proptest! {
        #[test]
        fn moving_average_is_causal(
            xs in proptest::collection::vec(-1.0e3f64..1.0e3, 2..80),
            window in 1usize..12,
            k in 0usize..79,
        ) {
            prop_assume!(k < xs.len());
            let full = moving_average(&xs, window).unwrap();
            let prefix = moving_average(&xs[..=k], window).unwrap();
            prop_assert_eq!(full[k], prefix[k]);
        }

        #[test]
        fn moving_average_preserves_constants(
            c in -1.0e6f64..1.0e6,
            n in 1usize..50,
            window in 1usize..40,
        ) {
            let xs = vec![c; n];
            let out = moving_average(&xs, window).unwrap();
            for v in out {
                // Mean of identical values differs from the value only by
                // summation rounding.
                prop_assert!((v - c).abs() <= c.abs() * 1e-13 + 1e-300);
            }
        }

        #[test]
        fn differentiate_linear_ramp_is_constant(
            slope in -100.0f64..100.0,
            n in 2usize..60,
        ) {
            let dt = 0.005;
            let xs: Vec<f64> = (0..n).map(|k| slope * (k as f64) * dt).collect();
            let out = differentiate(&xs, dt).unwrap();
            for v in out {
                prop_assert!((v - slope).abs() <= slope.abs() * 1e-9 + 1e-9);
            }
        }
    }
}
