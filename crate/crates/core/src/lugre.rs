//! LuGre friction model: single-state bristle dynamics with a Stribeck
//! steady-state curve and viscous drag.
//!
//! State equation and force output:
//!
//! ```text
//! dz/dt = v - sigma0*|v|*z / g(v)
//! f     = sigma0*z + sigma1*dz/dt + sigma2*v
//! g(v)  = f_c + (f_s - f_c) * exp(-|v/v_s|^delta)
//! ```
//!
//! The model serves as the physics baseline the learned estimator is judged
//! against. It is identified once on a no-load recording and then applied
//! unchanged, so any load dependence of the real friction shows up as
//! baseline error.

use crate::inverse::LabeledDataset;
use crate::signal::KinematicFrame;
use crate::simplex::{self, SimplexOptions};
use crate::{Error, Result, Scalar};

/// Internal RK4 subdivisions per [`LuGreParams::step`] call.
///
/// The bristle equation is stiff: its local rate is `sigma0*|v|/g(v)`, about
/// 2.8e3 1/s at 0.5 m/s with the default parameters. Fifty substeps keep the
/// 5 ms sample interval well inside the RK4 stability region up to several
/// m/s of piston speed.
pub const STEP_SUBSTEPS: usize = 50;

/// LuGre parameter set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LuGreParams<T> {
    /// Bristle stiffness, N/m.
    pub sigma0: T,
    /// Bristle damping, N*s/m.
    pub sigma1: T,
    /// Viscous coefficient, N*s/m.
    pub sigma2: T,
    /// Coulomb force, N.
    pub f_c: T,
    /// Static (breakaway) force, N.
    pub f_s: T,
    /// Stribeck velocity, m/s.
    pub v_s: T,
    /// Exponent of the Stribeck decay; 2 gives the Gaussian form.
    pub stribeck_exponent: T,
}

impl<T: Scalar> Default for LuGreParams<T> {
    /// Parameters of the synthetic rig used throughout the crate's tests.
    fn default() -> Self {
        Self {
            sigma0: T::from_f64(1.0e6),
            sigma1: T::from_f64(400.0),
            sigma2: T::from_f64(250.0),
            f_c: T::from_f64(180.0),
            f_s: T::from_f64(260.0),
            v_s: T::from_f64(0.025),
            stribeck_exponent: T::from_f64(2.0),
        }
    }
}

/// One integration step's result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuGreStep<T> {
    /// Bristle deflection after the step, m.
    pub z: T,
    /// Friction force at the new deflection under the applied velocity, N.
    pub f: T,
}

impl<T: Scalar> LuGreParams<T> {
    /// Checks physical plausibility of the parameter set.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > T::zero()) || !self.sigma0.is_finite() {
            return Err(Error::invalid("sigma0 must be positive and finite"));
        }
        if !(self.sigma1 >= T::zero()) || !self.sigma1.is_finite() {
            return Err(Error::invalid("sigma1 must be non-negative and finite"));
        }
        if !(self.sigma2 >= T::zero()) || !self.sigma2.is_finite() {
            return Err(Error::invalid("sigma2 must be non-negative and finite"));
        }
        if !(self.f_c > T::zero()) || !self.f_c.is_finite() {
            return Err(Error::invalid("f_c must be positive and finite"));
        }
        if !(self.f_s >= self.f_c) || !self.f_s.is_finite() {
            return Err(Error::invalid("f_s must be finite and at least f_c"));
        }
        if !(self.v_s > T::zero()) || !self.v_s.is_finite() {
            return Err(Error::invalid("v_s must be positive and finite"));
        }
        if !(self.stribeck_exponent > T::zero()) || !self.stribeck_exponent.is_finite() {
            return Err(Error::invalid("stribeck exponent must be positive and finite"));
        }
        Ok(())
    }

    /// Steady sliding force magnitude `g(v)`, N.
    ///
    /// Equals `f_s` at rest and decays toward `f_c` as speed grows.
    #[must_use]
    pub fn stribeck(&self, v: T) -> T {
        let ratio = (v / self.v_s).abs();
        self.f_c + (self.f_s - self.f_c) * (-ratio.powf(self.stribeck_exponent)).exp()
    }

    /// Bristle deflection rate `dz/dt` at the given state and velocity.
    #[must_use]
    pub fn bristle_rate(&self, z: T, v: T) -> T {
        v - self.sigma0 * v.abs() * z / self.stribeck(v)
    }

    /// Friction force at a given deflection and velocity, N.
    #[must_use]
    pub fn force(&self, z: T, v: T) -> T {
        self.sigma0 * z + self.sigma1 * self.bristle_rate(z, v) + self.sigma2 * v
    }

    /// Steady-state force at constant velocity (closed form), N.
    #[must_use]
    pub fn steady_force(&self, v: T) -> T {
        if v == T::zero() {
            return T::zero();
        }
        self.stribeck(v) * v.signum() + self.sigma2 * v
    }

    /// Advances the deflection by `dt` under constant velocity `v`.
    ///
    /// Uses [`STEP_SUBSTEPS`] internal RK4 stages; returns the new state and
    /// the force it produces with the same velocity applied.
    #[must_use]
    pub fn step(&self, z: T, v: T, dt: T) -> LuGreStep<T> {
        let h = dt / T::from_f64(STEP_SUBSTEPS as f64);
        let half = h * T::from_f64(0.5);
        let sixth = h / T::from_f64(6.0);
        let two = T::from_f64(2.0);
        let mut z = z;
        for _ in 0..STEP_SUBSTEPS {
            let k1 = self.bristle_rate(z, v);
            let k2 = self.bristle_rate(z + half * k1, v);
            let k3 = self.bristle_rate(z + half * k2, v);
            let k4 = self.bristle_rate(z + h * k3, v);
            z += sixth * (k1 + two * k2 + two * k3 + k4);
        }
        LuGreStep {
            z,
            f: self.force(z, v),
        }
    }
}

/// Runs the model along a velocity sequence sampled every `dt` seconds.
///
/// The deflection starts at `z0`; velocity is held constant across each
/// sample interval. `out[k]` is the force at sample `k` evaluated *before*
/// the state advances, so it pairs with the measurement that produced
/// `v[k]`.
pub fn evaluate_velocity_series<T: Scalar>(
    velocity: &[T],
    dt: T,
    params: &LuGreParams<T>,
    z0: T,
) -> Result<Vec<T>> {
    params.validate()?;
    if velocity.is_empty() {
        return Err(Error::EmptyDataset("velocity series is empty".into()));
    }
    if !(dt > T::zero()) {
        return Err(Error::invalid("sample interval must be positive"));
    }
    let mut out = Vec::with_capacity(velocity.len());
    let mut z = z0;
    for &v in velocity {
        out.push(params.force(z, v));
        z = params.step(z, v, dt).z;
    }
    Ok(out)
}

/// Runs the model along preprocessed frames; see [`evaluate_velocity_series`].
pub fn evaluate_series<T: Scalar>(
    frames: &[KinematicFrame<T>],
    params: &LuGreParams<T>,
    z0: T,
) -> Result<Vec<T>> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 frames to infer the sample interval".into(),
        ));
    }
    let dt = frames[1].t - frames[0].t;
    let velocity: Vec<T> = frames.iter().map(|fr| fr.v).collect();
    evaluate_velocity_series(&velocity, dt, params, z0)
}

/// Outcome of [`identify`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitReport<T> {
    /// Training MAE of the starting parameter set, N.
    pub initial_mae: T,
    /// Training MAE of the returned parameter set, N.
    pub mae: T,
    /// Objective evaluations spent in the dynamic refinement stage.
    pub evaluations: usize,
    /// Whether the refinement converged before exhausting its budget.
    pub converged: bool,
    /// Speed bins that carried the static-curve fit.
    pub populated_bins: usize,
}

const N_SPEED_BINS: usize = 24;
const MIN_BIN_COUNT: usize = 8;
const MIN_POPULATED_BINS: usize = 5;
/// Leading transient dropped from fitting objectives, s.
const TRANSIENT_DISCARD: f64 = 1.0;

/// Identifies LuGre parameters from a labeled no-load recording.
///
/// Two stages, both deterministic:
///
/// 1. The static curve. Sliding samples are grouped into log-spaced speed
///    bins; the bin means of `f*sign(v)` against speed are fit with
///    `f_c + (f_s - f_c)*exp(-(s/v_s)^delta) + sigma2*s` by scanning `v_s`
///    and solving the remaining coefficients linearly.
/// 2. The bristle dynamics. `sigma0` and `sigma1` are refined in log space
///    with a simplex search on the series MAE, skipping the first second of
///    the recording.
///
/// Returns whichever of {starting guess, identified set} scores the lower
/// MAE, so the result never regresses below `init`. Fails with
/// [`Error::SpeedCoverage`] when fewer than 5 speed bins are populated.
pub fn identify<T: Scalar>(
    data: &LabeledDataset<T>,
    init: &LuGreParams<T>,
    budget: usize,
) -> Result<(LuGreParams<T>, FitReport<T>)> {
    init.validate()?;
    if budget == 0 {
        return Err(Error::invalid("identification budget must be positive"));
    }
    if data.n_included() < 10 {
        return Err(Error::InsufficientData(format!(
            "identification needs at least 10 sliding samples, got {}",
            data.n_included()
        )));
    }

    let discard = (T::from_f64(TRANSIENT_DISCARD) / data.dt).to_f64().round() as usize;
    let eval_rows: Vec<usize> = data
        .included_indices()
        .into_iter()
        .filter(|&k| k >= discard)
        .collect();
    if eval_rows.is_empty() {
        return Err(Error::InsufficientData(
            "recording is shorter than the transient discard window".into(),
        ));
    }
    let velocity: Vec<T> = (0..data.len()).map(|k| data.velocity(k)).collect();

    let series_mae = |params: &LuGreParams<T>| -> T {
        let series = evaluate_velocity_series(&velocity, data.dt, params, T::zero())
            .expect("validated parameters and non-empty series");
        let sum: T = eval_rows
            .iter()
            .map(|&k| (series[k] - data.target[k]).abs())
            .sum();
        sum / T::from_f64(eval_rows.len() as f64)
    };

    let statics = fit_statics(data, init.stribeck_exponent)?;

    // Dynamic stage: log-space search keeps both coefficients positive and
    // makes the step scale relative.
    let floor = T::from_f64(1e-3);
    let mut u0 = [
        init.sigma0.max(floor).ln(),
        init.sigma1.max(floor).ln(),
    ];
    let mut evaluations = 0usize;
    let objective = |u: &[T]| -> T {
        let candidate = LuGreParams {
            sigma0: u[0].exp(),
            sigma1: u[1].exp(),
            sigma2: statics.sigma2,
            f_c: statics.f_c,
            f_s: statics.f_s,
            v_s: statics.v_s,
            stribeck_exponent: init.stribeck_exponent,
        };
        if candidate.validate().is_err() {
            return T::infinity();
        }
        let mae = series_mae(&candidate);
        // A bristle stiffness beyond what the fixed-step integration can
        // hold blows the series up to NaN; score it as a hard reject so the
        // search backs away instead of poisoning the simplex.
        if mae.is_finite() {
            mae
        } else {
            T::infinity()
        }
    };

    // When the statics came out with a small sliding force level, the
    // starting stiffness itself can sit in the unstable region. Soften it
    // until the objective evaluates; the search is free to climb back.
    let backoff = T::from_f64(4.0).ln();
    let ln_floor = floor.ln();
    while u0[0] > ln_floor {
        evaluations += 1;
        if objective(&u0).is_finite() {
            break;
        }
        u0[0] = (u0[0] - backoff).max(ln_floor);
    }
    let scale = T::from_f64(0.7);
    let opts = SimplexOptions {
        max_evals: budget,
        ..SimplexOptions::default()
    };
    let result = simplex::minimize(
        |u| {
            evaluations += 1;
            objective(u)
        },
        &u0,
        &[scale, scale],
        &opts,
    )?;

    let fitted = LuGreParams {
        sigma0: result.x[0].exp(),
        sigma1: result.x[1].exp(),
        sigma2: statics.sigma2,
        f_c: statics.f_c,
        f_s: statics.f_s,
        v_s: statics.v_s,
        stribeck_exponent: init.stribeck_exponent,
    };
    fitted.validate()?;

    let initial_mae = series_mae(init);
    let fitted_mae = result.f;
    let (best, best_mae) = if fitted_mae <= initial_mae {
        (fitted, fitted_mae)
    } else {
        (*init, initial_mae)
    };
    Ok((
        best,
        FitReport {
            initial_mae,
            mae: best_mae,
            evaluations,
            converged: result.converged,
            populated_bins: statics.populated_bins,
        },
    ))
}

struct StaticsFit<T> {
    f_c: T,
    f_s: T,
    v_s: T,
    sigma2: T,
    populated_bins: usize,
}

/// Bins sliding samples by speed and fits the steady friction curve.
fn fit_statics<T: Scalar>(
    data: &LabeledDataset<T>,
    exponent: T,
) -> Result<StaticsFit<T>> {
    let mut speeds = Vec::new();
    let mut targets = Vec::new();
    for k in 0..data.len() {
        if data.included[k] {
            let v = data.velocity(k);
            speeds.push(v.abs());
            targets.push(data.target[k] * v.signum());
        }
    }
    let v_lo = speeds.iter().copied().fold(T::infinity(), T::min);
    let v_hi = speeds.iter().copied().fold(T::zero(), T::max);
    if !(v_hi > v_lo) {
        return Err(Error::SpeedCoverage {
            found: 1,
            needed: MIN_POPULATED_BINS,
        });
    }

    // Log-spaced bin means of f*sign(v) over |v|.
    let span = (v_hi / v_lo).ln();
    let mut count = [0usize; N_SPEED_BINS];
    let mut speed_sum = vec![T::zero(); N_SPEED_BINS];
    let mut target_sum = vec![T::zero(); N_SPEED_BINS];
    for (s, y) in speeds.iter().zip(&targets) {
        let frac = ((*s / v_lo).ln() / span).to_f64();
        let b = ((frac * N_SPEED_BINS as f64) as usize).min(N_SPEED_BINS - 1);
        count[b] += 1;
        speed_sum[b] += *s;
        target_sum[b] += *y;
    }
    let mut bin_speed = Vec::new();
    let mut bin_mean = Vec::new();
    for b in 0..N_SPEED_BINS {
        if count[b] >= MIN_BIN_COUNT {
            let n = T::from_f64(count[b] as f64);
            bin_speed.push(speed_sum[b] / n);
            bin_mean.push(target_sum[b] / n);
        }
    }
    if bin_speed.len() < MIN_POPULATED_BINS {
        return Err(Error::SpeedCoverage {
            found: bin_speed.len(),
            needed: MIN_POPULATED_BINS,
        });
    }

    // Coarse scan over the Stribeck velocity, then one refinement pass.
    let coarse = log_grid(v_lo * T::from_f64(0.5), v_hi, 48);
    let best = scan_v_s(&bin_speed, &bin_mean, exponent, &coarse)
        .ok_or_else(|| Error::numeric("static friction curve fit"))?;
    let fine = log_grid(
        best.v_s * T::from_f64(0.4),
        best.v_s * T::from_f64(2.5),
        33,
    );
    let refined = scan_v_s(&bin_speed, &bin_mean, exponent, &fine).unwrap_or(best);

    Ok(StaticsFit {
        f_c: refined.f_c,
        f_s: refined.f_s,
        v_s: refined.v_s,
        sigma2: refined.sigma2,
        populated_bins: bin_speed.len(),
    })
}

fn log_grid<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let step = (ln_hi - ln_lo) / T::from_f64((n - 1) as f64);
    (0..n)
        .map(|i| (ln_lo + step * T::from_f64(i as f64)).exp())
        .collect()
}

struct CurveCandidate<T> {
    f_c: T,
    f_s: T,
    v_s: T,
    sigma2: T,
    sse: T,
}

/// For each candidate `v_s`, solves the linear coefficients and keeps the
/// lowest residual. Candidates violating the physical constraints fall back
/// to constrained refits; a candidate with no admissible fit is skipped.
fn scan_v_s<T: Scalar>(
    speed: &[T],
    mean: &[T],
    exponent: T,
    candidates: &[T],
) -> Option<CurveCandidate<T>> {
    let mut best: Option<CurveCandidate<T>> = None;
    for &v_s in candidates {
        let decay: Vec<T> = speed
            .iter()
            .map(|&s| (-(s / v_s).abs().powf(exponent)).exp())
            .collect();
        if let Some(cand) = fit_linear_part(speed, mean, &decay, v_s) {
            if best.as_ref().map_or(true, |b| cand.sse < b.sse) {
                best = Some(cand);
            }
        }
    }
    best
}

/// Least squares over the bin means for `[f_c, f_s - f_c, sigma2]` with the
/// decay column fixed, trying constrained variants when the unconstrained
/// solution leaves the admissible region.
fn fit_linear_part<T: Scalar>(
    speed: &[T],
    mean: &[T],
    decay: &[T],
    v_s: T,
) -> Option<CurveCandidate<T>> {
    let one = T::one();
    // Column selections: full model, no Stribeck bump, no viscous term, and
    // Coulomb-only. The first admissible solution in residual order wins.
    let variants: [(bool, bool); 4] = [(true, true), (false, true), (true, false), (false, false)];
    let mut best: Option<CurveCandidate<T>> = None;
    for (use_decay, use_viscous) in variants {
        let mut columns: Vec<Vec<T>> = vec![vec![one; speed.len()]];
        if use_decay {
            columns.push(decay.to_vec());
        }
        if use_viscous {
            columns.push(speed.to_vec());
        }
        let Some(coef) = least_squares(&columns, mean) else {
            continue;
        };
        let f_c = coef[0];
        let mut idx = 1;
        let bump = if use_decay {
            idx += 1;
            coef[idx - 1]
        } else {
            T::zero()
        };
        let sigma2 = if use_viscous { coef[idx] } else { T::zero() };
        if !(f_c > T::zero()) || bump < T::zero() || sigma2 < T::zero() {
            continue;
        }
        let mut sse = T::zero();
        for i in 0..speed.len() {
            let fitted = f_c + bump * decay[i] + sigma2 * speed[i];
            let r = fitted - mean[i];
            sse += r * r;
        }
        let cand = CurveCandidate {
            f_c,
            f_s: f_c + bump,
            v_s,
            sigma2,
            sse,
        };
        if best.as_ref().map_or(true, |b| cand.sse < b.sse) {
            best = Some(cand);
        }
    }
    best
}

/// Normal-equation least squares for a handful of columns.
fn least_squares<T: Scalar>(columns: &[Vec<T>], y: &[T]) -> Option<Vec<T>> {
    let n = columns.len();
    let mut gram = vec![T::zero(); n * n];
    let mut rhs = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = columns[i]
                .iter()
                .zip(&columns[j])
                .map(|(&a, &b)| a * b)
                .sum();
        }
        rhs[i] = columns[i].iter().zip(y).map(|(&a, &b)| a * b).sum();
    }
    solve_dense(&mut gram, &mut rhs, n)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense<T: Scalar>(a: &mut [T], b: &mut [T], n: usize) -> Option<Vec<T>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot * n + col].abs() <= T::epsilon() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            for k in col..n {
                let upper = a[col * n + k];
                a[row * n + k] -= factor * upper;
            }
            let upper_b = b[col];
            b[row] -= factor * upper_b;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}
