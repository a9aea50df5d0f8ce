//! Two-stage friction estimator: an LSTM learns temporal features from
//! pressure/velocity windows, then a random forest maps the LSTM's final
//! hidden state to the friction value.
//!
//! Training standardizes features and target on the chronologically earliest
//! 80% of each recording, trains the LSTM on strided windows, freezes it,
//! and fits the forest on the frozen hidden states. Inference comes in two
//! shapes: batch estimation over a labeled recording, and a streaming state
//! that consumes one frame at a time without allocating after warm-up.

use crate::forest::{self, ForestConfig, RandomForest};
use crate::inverse::LabeledDataset;
use crate::lstm::{self, LstmNetwork, LstmScratch, TrainLog, TrainOptions, WindowSet};
use crate::signal::{fit_standardization, KinematicFrame, Standardization};
use crate::{Error, Matrix, Result, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Window length (frames) feeding the LSTM.
pub const DEFAULT_WINDOW: usize = 20;
/// Frames discarded at the head of every recording before any window may
/// end; matches the preprocessing filter warm-up.
pub const DEFAULT_WARMUP: usize = 31;
/// RNG stream reserved for LSTM weight initialization.
const INIT_STREAM: u64 = 1_000_003;

/// Everything that defines one hybrid training run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HybridConfig<T> {
    pub window: usize,
    /// Keep every n-th eligible window for training (1 keeps all).
    pub window_stride: usize,
    /// Frames at the start of each recording no window may end in.
    pub warmup_frames: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub dropout: T,
    pub learning_rate: T,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub n_trees: usize,
    pub tree_depth: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for HybridConfig<T> {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            window_stride: 2,
            warmup_frames: DEFAULT_WARMUP,
            lstm_hidden: 64,
            lstm_layers: 3,
            dropout: T::from_f64(0.3),
            learning_rate: T::from_f64(1e-3),
            batch_size: 32,
            max_epochs: 40,
            patience: 5,
            n_trees: 64,
            tree_depth: 10,
            seed: 0,
        }
    }
}

impl<T: Scalar> HybridConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window_stride == 0 {
            return Err(Error::invalid("window and stride must be positive"));
        }
        if self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return Err(Error::invalid("LSTM needs positive hidden size and layer count"));
        }
        if !(self.dropout >= T::zero() && self.dropout < T::one()) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.learning_rate > T::zero()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and epoch budget must be positive"));
        }
        if self.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        Ok(())
    }
}

/// One estimate: the recording row it belongs to and the friction value.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate<T> {
    pub t: T,
    /// Row index of the window end within the source recording.
    pub row: usize,
    pub value: T,
}

/// Trained two-stage estimator, self-contained for inference.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HybridModel<T> {
    pub sample_dt: T,
    pub window: usize,
    pub warmup_frames: usize,
    /// Feature standardization (p1, p2, v).
    pub feature_stats: Standardization<T>,
    /// Target standardization (single column).
    pub target_stats: Standardization<T>,
    pub lstm: LstmNetwork<T>,
    pub forest: RandomForest<T>,
}

/// Training summary next to the model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport<T> {
    /// Per-epoch LSTM losses, converted to physical units (newtons).
    pub log: TrainLog<T>,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
    /// Hybrid (LSTM + forest) MAE on the held-out fifth, in newtons.
    pub val_mae: T,
}

/// Window table assembled from one or more recordings.
struct Assembled<T> {
    train: WindowSet<T>,
    val: WindowSet<T>,
    feature_stats: Standardization<T>,
    target_stats: Standardization<T>,
    sample_dt: T,
}

fn assemble<T: Scalar>(
    datasets: &[LabeledDataset<T>],
    config: &HybridConfig<T>,
) -> Result<Assembled<T>> {
    if datasets.is_empty() {
        return Err(Error::EmptyDataset("no recordings to train on".into()));
    }
    let dt = datasets[0].dt;
    for d in datasets {
        let got = d.dt.to_f64();
        if (got - dt.to_f64()).abs() > 0.01 * dt.to_f64() {
            return Err(Error::RateMismatch {
                expected: dt.to_f64(),
                got,
            });
        }
        if d.features.cols() != 3 {
            return Err(Error::LengthMismatch {
                left: d.features.cols(),
                right: 3,
            });
        }
    }

    let first_end = config.warmup_frames + config.window - 1;
    // Per recording: eligible window ends, split 80/20 in time order.
    let mut train_ends_per: Vec<Vec<usize>> = Vec::new();
    let mut val_ends_per: Vec<Vec<usize>> = Vec::new();
    for (di, d) in datasets.iter().enumerate() {
        let eligible: Vec<usize> = (first_end..d.len()).filter(|&k| d.included[k]).collect();
        let split = eligible.len() * 4 / 5;
        if split == 0 || split == eligible.len() {
            return Err(Error::InsufficientData(format!(
                "recording {di} has too few usable windows ({}) for a train/validation split",
                eligible.len()
            )));
        }
        train_ends_per.push(eligible[..split].to_vec());
        val_ends_per.push(eligible[split..].to_vec());
    }

    // Standardization statistics come from the rows the training windows can
    // see: everything from the warm-up boundary to the last training end.
    let mut stats_rows = Matrix::zeros(0, 3);
    for (d, train_ends) in datasets.iter().zip(&train_ends_per) {
        let last = *train_ends.last().expect("nonempty split");
        for r in config.warmup_frames..=last {
            stats_rows.push_row(d.features.row(r))?;
        }
    }
    let feature_stats = fit_standardization(&stats_rows)?;
    let mut target_rows = Matrix::zeros(0, 1);
    for (d, train_ends) in datasets.iter().zip(&train_ends_per) {
        for &k in train_ends.iter().step_by(config.window_stride) {
            target_rows.push_row(&[d.target[k]])?;
        }
    }
    let target_stats = fit_standardization(&target_rows)?;

    // One combined standardized feature table with per-recording offsets.
    let mut combined = Matrix::zeros(0, 3);
    let mut offsets = Vec::with_capacity(datasets.len());
    for d in datasets {
        offsets.push(combined.rows());
        for r in 0..d.features.rows() {
            let mut row = [T::zero(); 3];
            row.copy_from_slice(d.features.row(r));
            feature_stats.standardize_row(&mut row);
            combined.push_row(&row)?;
        }
    }

    let gather = |ends_per: &[Vec<usize>]| -> WindowSet<T> {
        let mut ends = Vec::new();
        let mut targets = Vec::new();
        for ((d, per), &offset) in datasets.iter().zip(ends_per).zip(&offsets) {
            for &k in per.iter().step_by(config.window_stride) {
                ends.push(k + offset);
                targets.push((d.target[k] - target_stats.mean[0]) / target_stats.std[0]);
            }
        }
        WindowSet {
            features: combined.clone(),
            window: config.window,
            ends,
            targets,
        }
    };
    let train = gather(&train_ends_per);
    let val = gather(&val_ends_per);
    train.validate()?;
    val.validate()?;
    Ok(Assembled {
        train,
        val,
        feature_stats,
        target_stats,
        sample_dt: dt,
    })
}

/// Trains the full two-stage estimator. See [`train_hybrid_with`] for the
/// hook-taking variant.
pub fn train_hybrid<T: Scalar>(
    datasets: &[LabeledDataset<T>],
    config: &HybridConfig<T>,
) -> Result<(HybridModel<T>, TrainReport<T>)> {
    train_hybrid_with(datasets, config, |_, _, _| true)
}

/// Trains the estimator, reporting `(epoch, train_mae, val_mae)` in newtons
/// after every LSTM epoch; returning `false` abandons the run (used by the
/// hyperparameter search to prune hopeless trials). The forest stage still
/// runs on whatever weights the early stop left behind.
pub fn train_hybrid_with<T: Scalar, F>(
    datasets: &[LabeledDataset<T>],
    config: &HybridConfig<T>,
    mut progress: F,
) -> Result<(HybridModel<T>, TrainReport<T>)>
where
    F: FnMut(usize, T, T) -> bool,
{
    config.validate()?;
    let assembled = assemble(datasets, config)?;
    let scale = assembled.target_stats.std[0];

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut net = LstmNetwork::new(
        3,
        config.lstm_hidden,
        config.lstm_layers,
        config.dropout,
        &mut init_rng,
    )?;
    let opts = TrainOptions {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        max_epochs: config.max_epochs,
        patience: config.patience,
        seed: config.seed,
    };
    let mut log = lstm::train(&mut net, &assembled.train, &assembled.val, &opts, |e, tr, va| {
        progress(e, tr * scale, va * scale)
    })?;
    for stats in log.epochs.iter_mut() {
        stats.train_mae *= scale;
        stats.val_mae *= scale;
    }

    // Stage two: freeze the LSTM and fit the forest on its final hidden
    // states over the training windows.
    let hidden_of = |set: &WindowSet<T>| -> Result<Matrix<T>> {
        let mut scratch = LstmScratch::for_network(&net);
        let mut m = Matrix::zeros(0, config.lstm_hidden);
        for i in 0..set.len() {
            let end = set.ends[i];
            let start = end + 1 - set.window;
            let rows = (start..=end).map(|r| set.features.row(r));
            net.forward_rows(rows, &mut scratch)?;
            m.push_row(scratch.final_hidden(&net))?;
        }
        Ok(m)
    };
    let train_hidden = hidden_of(&assembled.train)?;
    let forest_cfg = ForestConfig {
        n_trees: config.n_trees,
        max_depth: config.tree_depth,
        seed: config.seed,
        ..ForestConfig::default()
    };
    let forest = forest::fit(&train_hidden, &assembled.train.targets, &forest_cfg)?;

    // Hybrid validation error in newtons.
    let val_hidden = hidden_of(&assembled.val)?;
    let val_pred = forest.predict(&val_hidden)?;
    let val_mae = val_pred
        .iter()
        .zip(&assembled.val.targets)
        .map(|(&p, &t)| ((p - t) * scale).abs())
        .sum::<T>()
        / T::from_f64(assembled.val.len() as f64);

    let report = TrainReport {
        log,
        n_train_windows: assembled.train.len(),
        n_val_windows: assembled.val.len(),
        val_mae,
    };
    let model = HybridModel {
        sample_dt: assembled.sample_dt,
        window: config.window,
        warmup_frames: config.warmup_frames,
        feature_stats: assembled.feature_stats,
        target_stats: assembled.target_stats,
        lstm: net,
        forest,
    };
    Ok((model, report))
}

impl<T: Scalar> HybridModel<T> {
    /// Structural consistency check used when loading from a file.
    pub fn check(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("window length must be positive"));
        }
        if !(self.sample_dt > T::zero()) {
            return Err(Error::invalid("sample interval must be positive"));
        }
        if self.feature_stats.width() != 3 || self.target_stats.width() != 1 {
            return Err(Error::invalid("standardization widths must be 3 and 1"));
        }
        if self.lstm.input_dim() != 3 {
            return Err(Error::invalid("LSTM input width must be 3"));
        }
        if self.forest.n_features() != self.lstm.hidden_size() {
            return Err(Error::LengthMismatch {
                left: self.forest.n_features(),
                right: self.lstm.hidden_size(),
            });
        }
        self.forest.check()
    }

    /// Friction estimates for every full window of a recording, in row
    /// order. The first estimate lands at row `warmup_frames + window - 1`.
    pub fn estimate_dataset(&self, data: &LabeledDataset<T>) -> Result<Vec<Estimate<T>>> {
        let got = data.dt.to_f64();
        let expected = self.sample_dt.to_f64();
        if (got - expected).abs() > 0.01 * expected {
            return Err(Error::RateMismatch { expected, got });
        }
        if data.features.cols() != 3 {
            return Err(Error::LengthMismatch {
                left: data.features.cols(),
                right: 3,
            });
        }
        let first_end = self.warmup_frames + self.window - 1;
        if data.len() <= first_end {
            return Err(Error::InsufficientData(format!(
                "recording of {} rows is shorter than warm-up plus window ({})",
                data.len(),
                first_end + 1
            )));
        }
        let mut standardized = data.features.clone();
        for r in 0..standardized.rows() {
            self.feature_stats.standardize_row(standardized.row_mut(r));
        }
        let mut scratch = LstmScratch::for_network(&self.lstm);
        let mut out = Vec::with_capacity(data.len() - first_end);
        for end in first_end..data.len() {
            let start = end + 1 - self.window;
            let rows = (start..=end).map(|r| standardized.row(r));
            self.lstm.forward_rows(rows, &mut scratch)?;
            let raw = self.forest.predict_row(scratch.final_hidden(&self.lstm))?;
            out.push(Estimate {
                t: data.t[end],
                row: end,
                value: self.target_stats.destandardize(0, raw),
            });
        }
        Ok(out)
    }

    /// Starts a streaming estimator over this model.
    #[must_use]
    pub fn stream_state(&self) -> StreamState<'_, T> {
        StreamState {
            model: self,
            ring: vec![T::zero(); self.window * 3],
            next_slot: 0,
            pushed: 0,
            last_t: None,
            scratch: LstmScratch::for_network(&self.lstm),
        }
    }
}

/// One-frame-at-a-time estimator.
///
/// Feed frames in time order with [`StreamState::push`]; once the filter
/// warm-up and one full window have passed, every push returns an estimate.
/// All buffers are allocated up front, so pushes never touch the allocator.
#[derive(Debug, Clone)]
pub struct StreamState<'m, T> {
    model: &'m HybridModel<T>,
    /// Ring of the last `window` standardized feature rows, 3 wide.
    ring: Vec<T>,
    next_slot: usize,
    pushed: usize,
    last_t: Option<T>,
    scratch: LstmScratch<T>,
}

impl<T: Scalar> StreamState<'_, T> {
    /// Row index (within the pushed sequence) of the next sample.
    #[must_use]
    pub fn next_row(&self) -> usize {
        self.pushed
    }

    /// Consumes one sample; returns an estimate once warmed up.
    ///
    /// Errors: non-increasing `t` is [`Error::OutOfOrder`]; an interval off
    /// the model's sampling rate by more than 1% is [`Error::RateMismatch`].
    pub fn push(&mut self, t: T, p1: T, p2: T, v: T) -> Result<Option<Estimate<T>>> {
        if let Some(prev) = self.last_t {
            let dt = (t - prev).to_f64();
            if dt <= 0.0 {
                return Err(Error::OutOfOrder {
                    previous: prev.to_f64(),
                    t: t.to_f64(),
                });
            }
            let expected = self.model.sample_dt.to_f64();
            if (dt - expected).abs() > 0.01 * expected {
                return Err(Error::RateMismatch { expected, got: dt });
            }
        }
        self.last_t = Some(t);

        let window = self.model.window;
        let mut row = [p1, p2, v];
        self.model.feature_stats.standardize_row(&mut row);
        self.ring[self.next_slot * 3..self.next_slot * 3 + 3].copy_from_slice(&row);
        self.next_slot = (self.next_slot + 1) % window;
        self.pushed += 1;

        let k = self.pushed - 1;
        if k < self.model.warmup_frames + window - 1 {
            return Ok(None);
        }
        // Oldest entry sits exactly at next_slot once the ring is full.
        let ring = &self.ring;
        let start = self.next_slot;
        let rows = (0..window).map(move |i| {
            let slot = (start + i) % window;
            &ring[slot * 3..slot * 3 + 3]
        });
        self.model.lstm.forward_rows(rows, &mut self.scratch)?;
        let raw = self
            .model
            .forest
            .predict_row(self.scratch.final_hidden(&self.model.lstm))?;
        Ok(Some(Estimate {
            t,
            row: k,
            value: self.model.target_stats.destandardize(0, raw),
        }))
    }

    /// Convenience wrapper over [`StreamState::push`] for filtered frames.
    pub fn push_frame(&mut self, frame: &KinematicFrame<T>) -> Result<Option<Estimate<T>>> {
        self.push(frame.t, frame.p1, frame.p2, frame.v)
    }
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HpoOptions {
    /// Number of trials, incumbent included.
    pub budget: usize,
    /// Epoch cap per trial (shorter than a full training run).
    pub trial_epochs: usize,
    pub seed: u64,
    /// Epochs a trial may run before pruning is considered.
    pub prune_warmup_epochs: usize,
    /// Completed observations required at an epoch before pruning applies.
    pub prune_min_trials: usize,
}

impl Default for HpoOptions {
    fn default() -> Self {
        Self {
            budget: 20,
            trial_epochs: 30,
            seed: 0,
            prune_warmup_epochs: 2,
            prune_min_trials: 4,
        }
    }
}

/// One finished (or pruned) trial.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialOutcome<T> {
    pub index: usize,
    pub config: HybridConfig<T>,
    /// Hybrid validation MAE in newtons; infinite for pruned trials.
    pub val_mae: T,
    pub pruned: bool,
    pub epochs_run: usize,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite medians"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Draws one candidate configuration from the search space.
fn sample_trial<T: Scalar, R: Rng + ?Sized>(
    base: &HybridConfig<T>,
    rng: &mut R,
) -> HybridConfig<T> {
    let layers = [3usize, 4, 5][rng.random_range(0..3)];
    let hidden = [16usize, 32, 64][rng.random_range(0..3)];
    let dropout = 0.1 + 0.4 * rng.random::<f64>();
    let lr = 10f64.powf(-5.0 + 2.0 * rng.random::<f64>());
    let n_trees = rng.random_range(32..=100);
    let tree_depth = rng.random_range(10..=50);
    HybridConfig {
        lstm_layers: layers,
        lstm_hidden: hidden,
        dropout: T::from_f64(dropout),
        learning_rate: T::from_f64(lr),
        n_trees,
        tree_depth,
        ..*base
    }
}

/// Sequential random search with median pruning.
///
/// Trial 0 always evaluates the incumbent `base` configuration, so the
/// winner can never be worse than the default on the validation split.
/// Later trials draw from a fixed space around it. A trial whose per-epoch
/// validation MAE falls above the median of earlier trials at the same epoch
/// (after a short grace period) is abandoned. Ties on the final objective
/// keep the earliest trial. The whole search is a pure function of its
/// inputs and `opts.seed`.
pub fn hpo_search<T: Scalar>(
    datasets: &[LabeledDataset<T>],
    base: &HybridConfig<T>,
    opts: &HpoOptions,
) -> Result<(HybridConfig<T>, Vec<TrialOutcome<T>>)> {
    if opts.budget == 0 {
        return Err(Error::invalid("hyperparameter search budget must be positive"));
    }
    if opts.trial_epochs == 0 {
        return Err(Error::invalid("trials need at least one epoch"));
    }
    base.validate()?;

    let mut outcomes: Vec<TrialOutcome<T>> = Vec::with_capacity(opts.budget);
    // Per-trial validation history (newtons) for median pruning.
    let mut histories: Vec<Vec<f64>> = Vec::with_capacity(opts.budget);

    for trial in 0..opts.budget {
        let config = if trial == 0 {
            HybridConfig {
                max_epochs: opts.trial_epochs,
                ..*base
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(trial as u64);
            HybridConfig {
                max_epochs: opts.trial_epochs,
                ..sample_trial(base, &mut rng)
            }
        };

        let mut history: Vec<f64> = Vec::with_capacity(opts.trial_epochs);
        let result = train_hybrid_with(datasets, &config, |epoch, _, val| {
            history.push(val.to_f64());
            if epoch < opts.prune_warmup_epochs {
                return true;
            }
            let peers: Vec<f64> = histories
                .iter()
                .filter(|h| h.len() > epoch)
                .map(|h| h[epoch])
                .collect();
            if peers.len() < opts.prune_min_trials {
                return true;
            }
            val.to_f64() <= median(peers)
        });
        let (model_val, pruned, epochs_run) = match result {
            Ok((_, report)) => {
                let pruned = report.log.pruned;
                let epochs = report.log.epochs.len();
                let val = if pruned { T::infinity() } else { report.val_mae };
                (val, pruned, epochs)
            }
            Err(e) => return Err(e),
        };
        histories.push(history);
        outcomes.push(TrialOutcome {
            index: trial,
            config,
            val_mae: model_val,
            pruned,
            epochs_run,
        });
    }

    let mut best = 0usize;
    for (i, o) in outcomes.iter().enumerate() {
        if o.val_mae < outcomes[best].val_mae {
            best = i;
        }
    }
    if !outcomes[best].val_mae.is_finite() {
        return Err(Error::numeric("every trial was pruned or failed"));
    }
    // Hand back a configuration ready for a full-length training run.
    let winner = HybridConfig {
        max_epochs: base.max_epochs,
        ..outcomes[best].config
    };
    Ok((winner, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Synthetic recording whose target is a fixed smooth function of the
    /// features, so a small model can learn it quickly.
    fn synthetic(rows: usize, seed: u64, offset: f64) -> LabeledDataset<f64> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = 0.005;
        let mut features = Matrix::zeros(0, 3);
        let mut target = Vec::new();
        let mut t = Vec::new();
        let mut x_p = Vec::new();
        for k in 0..rows {
            let tt = k as f64 * dt;
            let p1 = 30e5 + 10e5 * (0.8 * tt + offset).sin() + 1e4 * rng.random::<f64>();
            let p2 = 20e5 + 5e5 * (1.3 * tt).cos() + 1e4 * rng.random::<f64>();
            let v = 0.2 * (2.0 * tt + offset).sin();
            features.push_row(&[p1, p2, v]).unwrap();
            target.push(1.5e-4 * p1 - 0.8e-4 * p2 + 300.0 * v);
            t.push(tt);
            x_p.push(0.0);
        }
        let included = vec![true; rows];
        LabeledDataset {
            t,
            x_p,
            features,
            target,
            included,
            dt,
        }
    }

    fn small_config() -> HybridConfig<f64> {
        HybridConfig {
            window: 6,
            window_stride: 2,
            warmup_frames: 4,
            lstm_hidden: 10,
            lstm_layers: 1,
            dropout: 0.0,
            learning_rate: 5e-3,
            batch_size: 32,
            max_epochs: 10,
            patience: 10,
            n_trees: 24,
            tree_depth: 12,
            seed: 7,
        }
    }

    #[test]
    fn warmup_default_matches_the_filter_chain() {
        let cfg = crate::signal::FilterConfig::default();
        assert_eq!(DEFAULT_WARMUP, cfg.warmup_frames());
    }

    #[test]
    fn assemble_splits_chronologically_and_respects_masks() {
        let mut data = synthetic(100, 1, 0.0);
        // Mask a stretch in the middle; those rows may not end a window.
        for k in 40..50 {
            data.included[k] = false;
        }
        let cfg = HybridConfig {
            window_stride: 1,
            ..small_config()
        };
        let a = assemble(&[data.clone()], &cfg).unwrap();
        let first_end = cfg.warmup_frames + cfg.window - 1;
        let eligible: Vec<usize> = (first_end..100).filter(|&k| data.included[k]).collect();
        let split = eligible.len() * 4 / 5;
        assert_eq!(a.train.len(), split);
        assert_eq!(a.val.len(), eligible.len() - split);
        // Training ends precede validation ends and skip the masked rows.
        let max_train = *a.train.ends.iter().max().unwrap();
        let min_val = *a.val.ends.iter().min().unwrap();
        assert!(max_train < min_val);
        assert!(a.train.ends.iter().all(|e| !(40..50).contains(e)));
        // Targets are standardized with the training statistics.
        let back = a.target_stats.destandardize(0, a.train.targets[0]);
        assert_relative_eq!(back, data.target[a.train.ends[0]], max_relative = 1e-12);
    }

    #[test]
    fn assemble_offsets_multiple_recordings() {
        let d1 = synthetic(80, 2, 0.0);
        let d2 = synthetic(90, 3, 1.0);
        let cfg = small_config();
        let a = assemble(&[d1.clone(), d2.clone()], &cfg).unwrap();
        // Ends from the second recording are offset by the first's length.
        assert!(a.train.ends.iter().any(|&e| e >= 80));
        assert_eq!(a.train.features.rows(), 170);
        // A row from the second recording standardizes back to its source.
        let row = a.train.features.row(80);
        for c in 0..3 {
            let physical = a.feature_stats.destandardize(c, row[c]);
            assert_relative_eq!(physical, d2.features.get(0, c), max_relative = 1e-9);
        }
    }

    #[test]
    fn assemble_rejects_mixed_rates_and_empty_input() {
        let d1 = synthetic(80, 2, 0.0);
        let mut d2 = synthetic(80, 3, 0.0);
        d2.dt = 0.006;
        assert!(matches!(
            assemble(&[d1.clone(), d2], &small_config()),
            Err(Error::RateMismatch { .. })
        ));
        assert!(matches!(
            assemble::<f64>(&[], &small_config()),
            Err(Error::EmptyDataset(_))
        ));
        // Too short for a split.
        let tiny = synthetic(12, 4, 0.0);
        assert!(matches!(
            assemble(&[tiny], &small_config()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn training_learns_the_synthetic_relation() {
        let data = vec![synthetic(500, 10, 0.0), synthetic(500, 11, 2.0)];
        let (model, report) = train_hybrid(&data, &small_config()).unwrap();
        // The target spans roughly +-600 N around its mean; a trained hybrid
        // should be far inside that.
        let spread = report.val_mae / 600.0;
        assert!(
            spread < 0.25,
            "validation MAE {} N is too large",
            report.val_mae
        );
        assert!(report.n_train_windows > report.n_val_windows);
        model.check().unwrap();
    }

    #[test]
    fn training_is_deterministic() {
        let data = vec![synthetic(260, 21, 0.0)];
        let cfg = HybridConfig {
            max_epochs: 3,
            ..small_config()
        };
        let (m1, r1) = train_hybrid(&data, &cfg).unwrap();
        let (m2, r2) = train_hybrid(&data, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.log.epochs, r2.log.epochs);
        assert_eq!(r1.val_mae, r2.val_mae);
    }

    #[test]
    fn batch_and_stream_agree_bitwise() {
        let data = vec![synthetic(300, 31, 0.0)];
        let cfg = HybridConfig {
            max_epochs: 3,
            ..small_config()
        };
        let (model, _) = train_hybrid(&data, &cfg).unwrap();
        let probe = synthetic(120, 32, 0.5);
        let batch = model.estimate_dataset(&probe).unwrap();

        let mut stream = model.stream_state();
        let mut streamed = Vec::new();
        for k in 0..probe.len() {
            let out = stream
                .push(
                    probe.t[k],
                    probe.features.get(k, 0),
                    probe.features.get(k, 1),
                    probe.features.get(k, 2),
                )
                .unwrap();
            if let Some(est) = out {
                streamed.push(est);
            }
        }
        assert_eq!(batch.len(), streamed.len());
        for (b, s) in batch.iter().zip(&streamed) {
            assert_eq!(b.row, s.row);
            assert_eq!(b.value, s.value, "row {}", b.row);
        }
        // First emission row honors warm-up plus window.
        assert_eq!(batch[0].row, cfg.warmup_frames + cfg.window - 1);
    }

    #[test]
    fn stream_rejects_bad_timing() {
        let data = vec![synthetic(300, 41, 0.0)];
        let cfg = HybridConfig {
            max_epochs: 2,
            ..small_config()
        };
        let (model, _) = train_hybrid(&data, &cfg).unwrap();
        let mut stream = model.stream_state();
        stream.push(0.0, 30e5, 20e5, 0.1).unwrap();
        assert!(matches!(
            stream.push(0.0, 30e5, 20e5, 0.1),
            Err(Error::OutOfOrder { .. })
        ));
        let mut stream = model.stream_state();
        stream.push(0.0, 30e5, 20e5, 0.1).unwrap();
        assert!(matches!(
            stream.push(0.006, 30e5, 20e5, 0.1),
            Err(Error::RateMismatch { .. })
        ));
    }

    #[test]
    fn estimate_rejects_wrong_rate_and_short_recordings() {
        let data = vec![synthetic(300, 51, 0.0)];
        let cfg = HybridConfig {
            max_epochs: 2,
            ..small_config()
        };
        let (model, _) = train_hybrid(&data, &cfg).unwrap();
        let mut probe = synthetic(100, 52, 0.0);
        probe.dt = 0.0052;
        assert!(matches!(
            model.estimate_dataset(&probe),
            Err(Error::RateMismatch { .. })
        ));
        let short = synthetic(8, 53, 0.0);
        assert!(matches!(
            model.estimate_dataset(&short),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn hpo_keeps_the_incumbent_first_and_never_picks_worse() {
        let data = vec![synthetic(320, 61, 0.0)];
        let base = HybridConfig {
            max_epochs: 6,
            ..small_config()
        };
        let opts = HpoOptions {
            budget: 3,
            trial_epochs: 2,
            seed: 5,
            ..HpoOptions::default()
        };
        let (winner, outcomes) = hpo_search(&data, &base, &opts).unwrap();
        assert_eq!(outcomes.len(), 3);
        assert_eq!(outcomes[0].index, 0);
        assert_eq!(outcomes[0].config.lstm_hidden, base.lstm_hidden);
        let best_val = outcomes
            .iter()
            .map(|o| o.val_mae)
            .fold(f64::INFINITY, f64::min);
        assert!(outcomes.iter().any(|o| o.val_mae == best_val));
        // The winner inherits the full epoch budget.
        assert_eq!(winner.max_epochs, base.max_epochs);

        let (winner2, outcomes2) = hpo_search(&data, &base, &opts).unwrap();
        assert_eq!(winner, winner2);
        assert_eq!(outcomes, outcomes2);
    }

    #[test]
    fn hpo_rejects_a_zero_budget() {
        let data = vec![synthetic(320, 71, 0.0)];
        let opts = HpoOptions {
            budget: 0,
            ..HpoOptions::default()
        };
        assert!(hpo_search(&data, &small_config(), &opts).is_err());
    }
}
