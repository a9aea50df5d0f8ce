//! Stacked LSTM regressor trained with Adam on mean absolute error.
//!
//! Everything is written out in plain Rust: the forward pass, backpropagation
//! through time, dropout between layers, and the optimizer. The network maps
//! a window of feature rows to one scalar, read off a linear head at the last
//! timestep. Weights live in a single flat vector so the optimizer and the
//! finite-difference tests can treat the model as one parameter slab.
//!
//! Layout per layer: the input and recurrent matrices hold the four gates as
//! stacked row blocks in the order input, forget, cell, output. Forget-gate
//! biases start at one so early training does not flush the cell state.

use crate::{Error, Matrix, Result, Scalar};
use rand::Rng;

/// Gate blocks per LSTM cell.
const GATES: usize = 4;
/// Fixed fan-out for parallel gradient accumulation. Chunking by a constant
/// (rather than by available threads) keeps results bit-identical on any
/// machine.
const GRAD_CHUNKS: usize = 8;

/// Windowed training table: every entry pairs `window` consecutive feature
/// rows ending at `ends[i]` with the target at that same row.
#[derive(Debug, Clone)]
pub struct WindowSet<T> {
    pub features: Matrix<T>,
    pub window: usize,
    /// Inclusive end row of each window.
    pub ends: Vec<usize>,
    /// Target aligned with each window's end row.
    pub targets: Vec<T>,
}

impl<T: Scalar> WindowSet<T> {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("window length must be positive"));
        }
        if self.ends.len() != self.targets.len() {
            return Err(Error::LengthMismatch {
                left: self.ends.len(),
                right: self.targets.len(),
            });
        }
        for (&end, target) in self.ends.iter().zip(&self.targets) {
            if end + 1 < self.window || end >= self.features.rows() {
                return Err(Error::OutOfRange(format!(
                    "window ending at row {end} does not fit the feature table"
                )));
            }
            if !target.is_finite() {
                return Err(Error::OutOfRange("non-finite training target".into()));
            }
        }
        Ok(())
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.ends.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    /// Rows of window `i`, oldest first.
    fn rows(&self, i: usize) -> impl Iterator<Item = &[T]> {
        let end = self.ends[i];
        let start = end + 1 - self.window;
        (start..=end).map(move |r| self.features.row(r))
    }
}

/// Offsets of one layer's blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    wx: usize,
    wh: usize,
    bias: usize,
    in_dim: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    layers: Vec<LayerSpan>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

fn layout(input_dim: usize, hidden: usize, layers: usize) -> Layout {
    let mut spans = Vec::with_capacity(layers);
    let mut cursor = 0usize;
    for l in 0..layers {
        let in_dim = if l == 0 { input_dim } else { hidden };
        let wx = cursor;
        cursor += GATES * hidden * in_dim;
        let wh = cursor;
        cursor += GATES * hidden * hidden;
        let bias = cursor;
        cursor += GATES * hidden;
        spans.push(LayerSpan {
            wx,
            wh,
            bias,
            in_dim,
        });
    }
    let head_w = cursor;
    cursor += hidden;
    let head_b = cursor;
    cursor += 1;
    Layout {
        layers: spans,
        head_w,
        head_b,
        total: cursor,
    }
}

/// Stacked LSTM with a scalar linear head.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LstmNetwork<T> {
    input_dim: usize,
    hidden: usize,
    layers: usize,
    /// Drop probability applied to hidden activations passed between layers
    /// (fresh mask every timestep, training only).
    dropout: T,
    params: Vec<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

impl<T: Scalar> LstmNetwork<T> {
    /// Builds a network with uniform `+-1/sqrt(fan_in)` weights, zero biases,
    /// and forget biases of one. The draw order is fixed, so one seed gives
    /// one network.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: T,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || layers == 0 {
            return Err(Error::invalid(
                "input dimension, hidden size, and layer count must be positive",
            ));
        }
        if !(dropout >= T::zero() && dropout < T::one()) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        let lay = layout(input_dim, hidden, layers);
        let mut params = vec![T::zero(); lay.total];
        let mut uniform = |bound: f64, slot: &mut T| {
            let u: f64 = rng.random();
            *slot = T::from_f64((2.0 * u - 1.0) * bound);
        };
        for span in &lay.layers {
            let bx = 1.0 / (span.in_dim as f64).sqrt();
            for k in 0..GATES * hidden * span.in_dim {
                uniform(bx, &mut params[span.wx + k]);
            }
            let bh = 1.0 / (hidden as f64).sqrt();
            for k in 0..GATES * hidden * hidden {
                uniform(bh, &mut params[span.wh + k]);
            }
            // Forget-gate rows sit second in the gate stack.
            for j in 0..hidden {
                params[span.bias + hidden + j] = T::one();
            }
        }
        let bw = 1.0 / (hidden as f64).sqrt();
        for k in 0..hidden {
            uniform(bw, &mut params[lay.head_w + k]);
        }
        Ok(Self {
            input_dim,
            hidden,
            layers,
            dropout,
            params,
        })
    }

    /// Rebuilds a network from stored dimensions and weights.
    pub fn from_parts(
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: T,
        params: Vec<T>,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || layers == 0 {
            return Err(Error::invalid(
                "input dimension, hidden size, and layer count must be positive",
            ));
        }
        if !(dropout >= T::zero() && dropout < T::one()) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        let expected = layout(input_dim, hidden, layers).total;
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: expected,
            });
        }
        if let Some(k) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "non-finite weight at parameter {k}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            layers,
            dropout,
            params,
        })
    }

    #[must_use]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[must_use]
    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    #[must_use]
    pub fn num_layers(&self) -> usize {
        self.layers
    }

    #[must_use]
    pub fn dropout(&self) -> T {
        self.dropout
    }

    #[must_use]
    pub fn params(&self) -> &[T] {
        &self.params
    }

    #[must_use]
    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    #[must_use]
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        layout(self.input_dim, self.hidden, self.layers)
    }

    /// One timestep of one layer, writing the new `h`/`c` in place.
    #[allow(clippy::too_many_arguments)]
    fn cell_step(
        &self,
        span: &LayerSpan,
        x: &[T],
        h: &mut [T],
        c: &mut [T],
        gates: &mut [T],
    ) {
        let hidden = self.hidden;
        let p = &self.params;
        gates.copy_from_slice(&p[span.bias..span.bias + GATES * hidden]);
        for r in 0..GATES * hidden {
            let wx_row = &p[span.wx + r * span.in_dim..span.wx + (r + 1) * span.in_dim];
            let wh_row = &p[span.wh + r * hidden..span.wh + (r + 1) * hidden];
            gates[r] += dot(wx_row, x) + dot(wh_row, h);
        }
        for j in 0..hidden {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[hidden + j]);
            let g = gates[2 * hidden + j].tanh();
            let o = sigmoid(gates[3 * hidden + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
            // Keep the activations for callers that cache them.
            gates[j] = i;
            gates[hidden + j] = f;
            gates[2 * hidden + j] = g;
            gates[3 * hidden + j] = o;
        }
    }

    /// Runs one window (inference mode, no dropout) and returns the head
    /// output. `scratch` is reused across calls and never reallocates once
    /// sized.
    pub fn forward_rows<'a, I>(&self, rows: I, scratch: &mut LstmScratch<T>) -> Result<T>
    where
        I: IntoIterator<Item = &'a [T]>,
        T: 'a,
    {
        scratch.reset(self);
        let lay = self.layout();
        let hidden = self.hidden;
        let LstmScratch {
            h,
            c,
            gates,
            x,
            x_layer,
        } = scratch;
        let mut steps = 0usize;
        for row in rows {
            if row.len() != self.input_dim {
                return Err(Error::LengthMismatch {
                    left: row.len(),
                    right: self.input_dim,
                });
            }
            x[..row.len()].copy_from_slice(row);
            let mut x_len = row.len();
            for (l, span) in lay.layers.iter().enumerate() {
                x_layer[..x_len].copy_from_slice(&x[..x_len]);
                let h_l = &mut h[l * hidden..(l + 1) * hidden];
                let c_l = &mut c[l * hidden..(l + 1) * hidden];
                self.cell_step(span, &x_layer[..x_len], h_l, c_l, gates);
                x[..hidden].copy_from_slice(&h[l * hidden..(l + 1) * hidden]);
                x_len = hidden;
            }
            steps += 1;
        }
        if steps == 0 {
            return Err(Error::EmptyDataset("window has no rows".into()));
        }
        let h_last = &h[(self.layers - 1) * hidden..];
        let w = &self.params[lay.head_w..lay.head_w + hidden];
        Ok(dot(w, h_last) + self.params[lay.head_b])
    }

    /// Mean absolute error over the chosen windows (inference mode).
    pub fn batch_loss(&self, set: &WindowSet<T>, indices: &[usize]) -> Result<T> {
        self.check_set(set)?;
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty evaluation batch".into()));
        }
        let chunks = split_indices(indices, GRAD_CHUNKS);
        let partials: Vec<Result<T>> = {
            use rayon::prelude::*;
            chunks
                .par_iter()
                .map(|chunk| {
                    let mut scratch = LstmScratch::for_network(self);
                    let mut acc = T::zero();
                    for &i in *chunk {
                        let y = self.forward_rows(set.rows(i), &mut scratch)?;
                        acc += (y - set.targets[i]).abs();
                    }
                    Ok(acc)
                })
                .collect()
        };
        let mut total = T::zero();
        for p in partials {
            total += p?;
        }
        Ok(total / T::from_f64(indices.len() as f64))
    }

    /// Predictions for the chosen windows, in order (inference mode).
    pub fn batch_predict(&self, set: &WindowSet<T>, indices: &[usize]) -> Result<Vec<T>> {
        self.check_set(set)?;
        let mut scratch = LstmScratch::for_network(self);
        indices
            .iter()
            .map(|&i| self.forward_rows(set.rows(i), &mut scratch))
            .collect()
    }

    fn check_set(&self, set: &WindowSet<T>) -> Result<()> {
        set.validate()?;
        if set.features.cols() != self.input_dim {
            return Err(Error::LengthMismatch {
                left: set.features.cols(),
                right: self.input_dim,
            });
        }
        Ok(())
    }

    /// Batch-mean MAE and its gradient with respect to every parameter.
    ///
    /// With `dropout_rng` the forward pass drops hidden units between layers
    /// (inverted scaling, fresh mask per timestep) and the backward pass
    /// reuses the same masks; without it the pass is deterministic, which is
    /// what the finite-difference tests rely on.
    pub fn batch_gradient<R: Rng + ?Sized>(
        &self,
        set: &WindowSet<T>,
        indices: &[usize],
        grads: &mut [T],
        dropout_rng: Option<&mut R>,
    ) -> Result<T> {
        self.check_set(set)?;
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty training batch".into()));
        }
        if grads.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: grads.len(),
                right: self.params.len(),
            });
        }
        for g in grads.iter_mut() {
            *g = T::zero();
        }
        let inv_batch = T::one() / T::from_f64(indices.len() as f64);

        // Dropout masks must come from the caller's generator in a fixed
        // order, so draw them up front (window-major, then timestep, then
        // boundary, then unit).
        let masks = match dropout_rng {
            Some(rng) if self.dropout > T::zero() && self.layers > 1 => {
                let keep = T::one() - self.dropout;
                let per_window = set.window * (self.layers - 1) * self.hidden;
                let mut all = Vec::with_capacity(indices.len() * per_window);
                for _ in 0..indices.len() * per_window {
                    let u: f64 = rng.random();
                    all.push(if T::from_f64(u) < keep {
                        T::one() / keep
                    } else {
                        T::zero()
                    });
                }
                Some(all)
            }
            _ => None,
        };
        let per_window_mask = set.window * self.layers.saturating_sub(1) * self.hidden;

        let chunks = split_indices(indices, GRAD_CHUNKS);
        struct Partial<T> {
            loss: T,
            grads: Vec<T>,
        }
        let partials: Vec<Result<Partial<T>>> = {
            use rayon::prelude::*;
            chunks
                .par_iter()
                .enumerate()
                .map(|(ci, chunk)| {
                    let offset: usize = chunks[..ci].iter().map(|c| c.len()).sum();
                    let mut grads = vec![T::zero(); self.params.len()];
                    let mut loss = T::zero();
                    let mut cache = TrainCache::for_network(self, set.window);
                    for (j, &i) in chunk.iter().enumerate() {
                        let mask = masks.as_ref().map(|m| {
                            let start = (offset + j) * per_window_mask;
                            &m[start..start + per_window_mask]
                        });
                        let y = self.forward_cached(set, i, mask, &mut cache)?;
                        let r = y - set.targets[i];
                        loss += r.abs();
                        let g_y = sign(r) * inv_batch;
                        self.backward(g_y, &cache, &mut grads);
                    }
                    Ok(Partial { loss, grads })
                })
                .collect()
        };
        let mut total = T::zero();
        for p in partials {
            let p = p?;
            total += p.loss;
            for (g, d) in grads.iter_mut().zip(&p.grads) {
                *g += *d;
            }
        }
        Ok(total * inv_batch)
    }

    /// Forward pass that records everything the backward pass needs.
    fn forward_cached(
        &self,
        set: &WindowSet<T>,
        index: usize,
        mask: Option<&[T]>,
        cache: &mut TrainCache<T>,
    ) -> Result<T> {
        let hidden = self.hidden;
        let lay = self.layout();
        cache.clear();
        let mut h = vec![T::zero(); self.layers * hidden];
        let mut c = vec![T::zero(); self.layers * hidden];
        let mut gates = vec![T::zero(); GATES * hidden];
        for (t, row) in set.rows(index).enumerate() {
            let mut x: Vec<T> = row.to_vec();
            for (l, span) in lay.layers.iter().enumerate() {
                cache.x[t * self.layers + l].clone_from(&x);
                let h_l = &mut h[l * hidden..(l + 1) * hidden];
                let c_l = &mut c[l * hidden..(l + 1) * hidden];
                cache.h_prev[t * self.layers + l].copy_from_slice(h_l);
                cache.c_prev[t * self.layers + l].copy_from_slice(c_l);
                self.cell_step(span, &x, h_l, c_l, &mut gates);
                cache.acts[t * self.layers + l].copy_from_slice(&gates);
                cache.c[t * self.layers + l].copy_from_slice(c_l);
                x.clear();
                x.extend_from_slice(h_l);
                if l + 1 < self.layers {
                    let boundary = t * (self.layers - 1) + l;
                    if let Some(mask) = mask {
                        let m0 = boundary * hidden;
                        let row = &mask[m0..m0 + hidden];
                        for (xj, mj) in x.iter_mut().zip(row) {
                            *xj *= *mj;
                        }
                        cache.masks[boundary].copy_from_slice(row);
                    } else {
                        for mj in cache.masks[boundary].iter_mut() {
                            *mj = T::one();
                        }
                    }
                }
            }
        }
        cache.steps = set.window;
        let h_last = &h[(self.layers - 1) * hidden..];
        let w = &self.params[lay.head_w..lay.head_w + hidden];
        cache.h_final.copy_from_slice(h_last);
        Ok(dot(w, h_last) + self.params[lay.head_b])
    }

    /// Backpropagation through time for one window, accumulating into
    /// `grads`.
    fn backward(&self, g_y: T, cache: &TrainCache<T>, grads: &mut [T]) {
        let hidden = self.hidden;
        let layers = self.layers;
        let lay = self.layout();
        let steps = cache.steps;
        let p = &self.params;

        // Head.
        for j in 0..hidden {
            grads[lay.head_w + j] += g_y * cache.h_final[j];
        }
        grads[lay.head_b] += g_y;

        // dh/dc carried backward per layer.
        let mut dh_next = vec![T::zero(); layers * hidden];
        let mut dc_next = vec![T::zero(); layers * hidden];
        // Gradient flowing into each layer's output at the current timestep
        // from the layer above (or the head).
        let mut dx_down = vec![T::zero(); hidden];
        let mut da = vec![T::zero(); GATES * hidden];

        for t in (0..steps).rev() {
            for l in (0..layers).rev() {
                let span = &lay.layers[l];
                let idx = t * layers + l;
                let acts = &cache.acts[idx];
                let c_now = &cache.c[idx];
                let c_prev = &cache.c_prev[idx];
                let h_prev = &cache.h_prev[idx];
                let x = &cache.x[idx];

                // Collect dh for this layer and step.
                let mut dh: Vec<T> = dh_next[l * hidden..(l + 1) * hidden].to_vec();
                if l == layers - 1 {
                    if t == steps - 1 {
                        let w = &p[lay.head_w..lay.head_w + hidden];
                        for j in 0..hidden {
                            dh[j] += g_y * w[j];
                        }
                    }
                } else {
                    // dx_down was filled by the layer above in this same
                    // timestep iteration; route it through the dropout mask.
                    let mask = &cache.masks[t * (layers - 1) + l];
                    for j in 0..hidden {
                        dh[j] += dx_down[j] * mask[j];
                    }
                }

                // Through the cell.
                for j in 0..hidden {
                    let i_g = acts[j];
                    let f_g = acts[hidden + j];
                    let g_g = acts[2 * hidden + j];
                    let o_g = acts[3 * hidden + j];
                    let tc = c_now[j].tanh();
                    let mut dc = dc_next[l * hidden + j];
                    dc += dh[j] * o_g * (T::one() - tc * tc);
                    let d_o = dh[j] * tc;
                    let d_i = dc * g_g;
                    let d_g = dc * i_g;
                    let d_f = dc * c_prev[j];
                    da[j] = d_i * i_g * (T::one() - i_g);
                    da[hidden + j] = d_f * f_g * (T::one() - f_g);
                    da[2 * hidden + j] = d_g * (T::one() - g_g * g_g);
                    da[3 * hidden + j] = d_o * o_g * (T::one() - o_g);
                    dc_next[l * hidden + j] = dc * f_g;
                }

                // Parameter gradients and input gradients.
                for j in 0..hidden {
                    dx_down[j] = T::zero();
                    dh_next[l * hidden + j] = T::zero();
                }
                for r in 0..GATES * hidden {
                    let a = da[r];
                    if a == T::zero() {
                        continue;
                    }
                    let wx_row = span.wx + r * span.in_dim;
                    for k in 0..span.in_dim {
                        grads[wx_row + k] += a * x[k];
                    }
                    let wh_row = span.wh + r * hidden;
                    for k in 0..hidden {
                        grads[wh_row + k] += a * h_prev[k];
                        dh_next[l * hidden + k] += a * p[wh_row + k];
                    }
                    grads[span.bias + r] += a;
                    if l > 0 {
                        for k in 0..span.in_dim {
                            dx_down[k] += a * p[wx_row + k];
                        }
                    }
                }
            }
        }
    }
}

/// Splits indices into up to `n` contiguous chunks of near-equal size.
fn split_indices<'a>(indices: &'a [usize], n: usize) -> Vec<&'a [usize]> {
    let n = n.min(indices.len()).max(1);
    let base = indices.len() / n;
    let extra = indices.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for c in 0..n {
        let len = base + usize::from(c < extra);
        out.push(&indices[start..start + len]);
        start += len;
    }
    out
}

/// Reusable inference buffers; sized once per network.
#[derive(Debug, Clone)]
pub struct LstmScratch<T> {
    h: Vec<T>,
    c: Vec<T>,
    gates: Vec<T>,
    x: Vec<T>,
    x_layer: Vec<T>,
}

impl<T: Scalar> LstmScratch<T> {
    #[must_use]
    pub fn for_network(net: &LstmNetwork<T>) -> Self {
        let state = net.layers * net.hidden;
        let x_len = net.input_dim.max(net.hidden);
        Self {
            h: vec![T::zero(); state],
            c: vec![T::zero(); state],
            gates: vec![T::zero(); GATES * net.hidden],
            x: vec![T::zero(); x_len],
            x_layer: vec![T::zero(); x_len],
        }
    }

    fn reset(&mut self, net: &LstmNetwork<T>) {
        let state = net.layers * net.hidden;
        debug_assert_eq!(self.h.len(), state);
        for v in self.h.iter_mut().chain(self.c.iter_mut()) {
            *v = T::zero();
        }
    }

    /// Last layer's hidden state after the most recent window.
    #[must_use]
    pub fn final_hidden(&self, net: &LstmNetwork<T>) -> &[T] {
        &self.h[(net.layers - 1) * net.hidden..]
    }
}

/// Per-window caches for backpropagation.
struct TrainCache<T> {
    steps: usize,
    /// Input to each (step, layer) after dropout.
    x: Vec<Vec<T>>,
    h_prev: Vec<Vec<T>>,
    c_prev: Vec<Vec<T>>,
    /// Post-activation gates [i | f | g | o].
    acts: Vec<Vec<T>>,
    c: Vec<Vec<T>>,
    /// Inverted dropout multipliers at each inter-layer boundary.
    masks: Vec<Vec<T>>,
    h_final: Vec<T>,
}

impl<T: Scalar> TrainCache<T> {
    fn for_network(net: &LstmNetwork<T>, window: usize) -> Self {
        let cells = window * net.layers;
        let boundaries = window * net.layers.saturating_sub(1);
        Self {
            steps: 0,
            x: vec![Vec::new(); cells],
            h_prev: vec![vec![T::zero(); net.hidden]; cells],
            c_prev: vec![vec![T::zero(); net.hidden]; cells],
            acts: vec![vec![T::zero(); GATES * net.hidden]; cells],
            c: vec![vec![T::zero(); net.hidden]; cells],
            masks: vec![vec![T::zero(); net.hidden]; boundaries],
            h_final: vec![T::zero(); net.hidden],
        }
    }

    fn clear(&mut self) {
        self.steps = 0;
    }
}

/// Adam optimizer state over one flat parameter vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Adam<T> {
    #[must_use]
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
        }
    }

    /// One update with bias-corrected moment estimates.
    pub fn step(&mut self, params: &mut [T], grads: &[T], learning_rate: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                left: params.len().max(grads.len()),
                right: self.m.len(),
            });
        }
        if !(learning_rate > T::zero()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        self.t += 1;
        let t = T::from_f64(self.t as f64);
        let c1 = T::one() - self.beta1.powf(t);
        let c2 = T::one() - self.beta2.powf(t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (T::one() - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Knobs of the training loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainOptions<T> {
    pub learning_rate: T,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainOptions<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::from_f64(1e-3),
            batch_size: 32,
            max_epochs: 40,
            patience: 5,
            seed: 0,
        }
    }
}

/// One epoch's summary.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats<T> {
    pub epoch: usize,
    /// Mean of the minibatch losses seen during the epoch.
    pub train_mae: T,
    /// Validation MAE after the epoch.
    pub val_mae: T,
}

/// What happened during a training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainLog<T> {
    pub epochs: Vec<EpochStats<T>>,
    /// Index into `epochs` of the weights the network was left with.
    pub best_epoch: usize,
    /// True when the progress hook asked to abandon the run.
    pub pruned: bool,
}

/// Fisher-Yates shuffle driven by the caller's generator.
fn shuffle<R: Rng + ?Sized, X>(items: &mut [X], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Trains the network with Adam, minibatch shuffling, dropout, and early
/// stopping on the validation MAE. The network is left holding the weights
/// of its best validation epoch.
///
/// `progress` runs after every epoch with `(epoch, train_mae, val_mae)`;
/// returning `false` abandons the run early (the best weights so far are
/// still restored), which is how the hyperparameter search prunes weak
/// trials.
pub fn train<T: Scalar, F>(
    net: &mut LstmNetwork<T>,
    train_set: &WindowSet<T>,
    val_set: &WindowSet<T>,
    opts: &TrainOptions<T>,
    mut progress: F,
) -> Result<TrainLog<T>>
where
    F: FnMut(usize, T, T) -> bool,
{
    use rand::SeedableRng;
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if opts.max_epochs == 0 {
        return Err(Error::invalid("epoch budget must be positive"));
    }
    if !(opts.learning_rate > T::zero()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset(
            "training and validation sets must be non-empty".into(),
        ));
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(net.n_params());
    let mut grads = vec![T::zero(); net.n_params()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let val_indices: Vec<usize> = (0..val_set.len()).collect();

    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        pruned: false,
    };
    let mut best_val = T::infinity();
    let mut best_params: Vec<T> = net.params().to_vec();
    let mut since_best = 0usize;

    for epoch in 0..opts.max_epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = T::zero();
        let mut batches = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let loss = net.batch_gradient(train_set, batch, &mut grads, Some(&mut rng))?;
            adam.step(net.params_mut(), &grads, opts.learning_rate)?;
            epoch_loss += loss;
            batches += 1;
        }
        let train_mae = epoch_loss / T::from_f64(batches as f64);
        let val_mae = net.batch_loss(val_set, &val_indices)?;
        log.epochs.push(EpochStats {
            epoch,
            train_mae,
            val_mae,
        });

        if val_mae < best_val {
            best_val = val_mae;
            best_params.copy_from_slice(net.params());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }

        if !progress(epoch, train_mae, val_mae) {
            log.pruned = true;
            break;
        }
        if since_best >= opts.patience {
            break;
        }
    }

    net.params_mut().copy_from_slice(&best_params);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_set(rows: usize, window: usize, seed: u64) -> WindowSet<f64> {
        // Target: mean of the last row's features, a pattern a small net can
        // learn quickly.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Matrix::zeros(0, 3);
        for _ in 0..rows {
            let row: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            features.push_row(&row).unwrap();
        }
        let ends: Vec<usize> = (window - 1..rows).collect();
        let targets: Vec<f64> = ends
            .iter()
            .map(|&e| features.row(e).iter().sum::<f64>() / 3.0)
            .collect();
        WindowSet {
            features,
            window,
            ends,
            targets,
        }
    }

    #[test]
    fn initialization_is_seeded_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: LstmNetwork<f64> = LstmNetwork::new(3, 8, 2, 0.0, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b: LstmNetwork<f64> = LstmNetwork::new(3, 8, 2, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
        // Forget biases are one, the other biases zero.
        let lay = layout(3, 8, 2);
        for span in &lay.layers {
            for g in 0..4 {
                for j in 0..8 {
                    let bias = a.params()[span.bias + g * 8 + j];
                    if g == 1 {
                        assert_eq!(bias, 1.0);
                    } else {
                        assert_eq!(bias, 0.0);
                    }
                }
            }
            let bound = 1.0 / (span.in_dim as f64).sqrt();
            for k in 0..4 * 8 * span.in_dim {
                assert!(a.params()[span.wx + k].abs() <= bound);
            }
        }
    }

    #[test]
    fn from_parts_checks_the_length() {
        let err = LstmNetwork::<f64>::from_parts(3, 4, 1, 0.0, vec![0.0; 10]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
        let n = layout(3, 4, 1).total;
        assert!(LstmNetwork::<f64>::from_parts(3, 4, 1, 0.0, vec![0.0; n]).is_ok());
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net: LstmNetwork<f64> = LstmNetwork::new(3, 16, 3, 0.3, &mut rng).unwrap();
        let set = tiny_set(40, 12, 1);
        let a = net.batch_predict(&set, &[0, 5, 10]).unwrap();
        let b = net.batch_predict(&set, &[0, 5, 10]).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|y| y.is_finite()));
    }

    #[test]
    fn rejects_mismatched_feature_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net: LstmNetwork<f64> = LstmNetwork::new(4, 8, 1, 0.0, &mut rng).unwrap();
        let set = tiny_set(30, 10, 2);
        assert!(matches!(
            net.batch_loss(&set, &[0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    /// The backpropagation is checked against central finite differences on
    /// every single parameter of a small but fully general configuration
    /// (stacked layers, several timesteps, several windows).
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut net: LstmNetwork<f64> = LstmNetwork::new(3, 4, 2, 0.0, &mut rng).unwrap();
        let mut set = tiny_set(20, 5, 7);
        // Push targets away from the predictions so the absolute-value kink
        // cannot flip sign under the probe step.
        for t in set.targets.iter_mut() {
            *t += 2.0;
        }
        let indices: Vec<usize> = (0..set.len()).collect();
        let mut grads = vec![0.0; net.n_params()];
        net.batch_gradient(&set, &indices, &mut grads, None::<&mut ChaCha8Rng>)
            .unwrap();

        let step = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..net.n_params() {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + step;
            let up = net.batch_loss(&set, &indices).unwrap();
            net.params_mut()[k] = orig - step;
            let down = net.batch_loss(&set, &indices).unwrap();
            net.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * step);
            let diff = (fd - grads[k]).abs();
            // Central differences carry ~1e-11 of truncation/rounding noise
            // at this step size, so tiny gradients are judged absolutely.
            if diff > 1e-9 {
                worst = worst.max(diff / fd.abs().max(grads[k].abs()));
            }
        }
        assert!(worst < 1e-5, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_check_holds_with_three_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net: LstmNetwork<f64> = LstmNetwork::new(2, 3, 3, 0.0, &mut rng).unwrap();
        let mut set = tiny_set(12, 4, 3);
        let mut features = Matrix::zeros(0, 2);
        for r in 0..12 {
            features
                .push_row(&[set.features.get(r, 0), set.features.get(r, 1)])
                .unwrap();
        }
        set.features = features;
        for t in set.targets.iter_mut() {
            *t -= 1.5;
        }
        let indices: Vec<usize> = (0..set.len()).collect();
        let mut grads = vec![0.0; net.n_params()];
        net.batch_gradient(&set, &indices, &mut grads, None::<&mut ChaCha8Rng>)
            .unwrap();
        let step = 1e-5;
        for k in (0..net.n_params()).step_by(7) {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + step;
            let up = net.batch_loss(&set, &indices).unwrap();
            net.params_mut()[k] = orig - step;
            let down = net.batch_loss(&set, &indices).unwrap();
            net.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * step);
            let diff = (fd - grads[k]).abs();
            assert!(
                diff < 1e-9 || diff / fd.abs().max(grads[k].abs()) < 1e-5,
                "parameter {k}: fd {fd} vs analytic {}",
                grads[k]
            );
        }
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut adam: Adam<f64> = Adam::new(2);
        let mut params = vec![1.0, -2.0];
        adam.step(&mut params, &[0.3, -0.7], 0.01).unwrap();
        // With bias correction the first update is lr * sign(g) up to epsilon.
        assert_relative_eq!(params[0], 1.0 - 0.01, epsilon = 1e-6);
        assert_relative_eq!(params[1], -2.0 + 0.01, epsilon = 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut adam: Adam<f64> = Adam::new(1);
        let mut w = vec![0.0f64];
        for _ in 0..500 {
            let g = 2.0 * (w[0] - 3.0);
            adam.step(&mut w, &[g], 0.05).unwrap();
        }
        assert!(
            (w[0] - 3.0).abs() < 1e-2,
            "Adam left w = {} after 500 steps",
            w[0]
        );
    }

    #[test]
    fn training_reduces_validation_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net: LstmNetwork<f64> = LstmNetwork::new(3, 12, 1, 0.0, &mut rng).unwrap();
        let train_set = tiny_set(300, 8, 21);
        let val_set = tiny_set(80, 8, 22);
        let opts = TrainOptions {
            learning_rate: 5e-3,
            batch_size: 16,
            max_epochs: 18,
            patience: 18,
            seed: 3,
        };
        let before = net
            .batch_loss(&val_set, &(0..val_set.len()).collect::<Vec<_>>())
            .unwrap();
        let log = train(&mut net, &train_set, &val_set, &opts, |_, _, _| true).unwrap();
        let after = net
            .batch_loss(&val_set, &(0..val_set.len()).collect::<Vec<_>>())
            .unwrap();
        assert!(
            after < 0.5 * before,
            "validation MAE {before} -> {after} shows no learning"
        );
        // The network holds its best epoch's weights.
        let best = log.epochs[log.best_epoch].val_mae;
        assert_relative_eq!(after, best, max_relative = 1e-12);
        assert!(!log.pruned);
    }

    #[test]
    fn training_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut net: LstmNetwork<f64> = LstmNetwork::new(3, 6, 2, 0.25, &mut rng).unwrap();
            let train_set = tiny_set(120, 6, 31);
            let val_set = tiny_set(40, 6, 32);
            let opts = TrainOptions {
                max_epochs: 4,
                patience: 10,
                ..TrainOptions::default()
            };
            let log = train(&mut net, &train_set, &val_set, &opts, |_, _, _| true).unwrap();
            (net, log)
        };
        let (net_a, log_a) = build();
        let (net_b, log_b) = build();
        assert_eq!(net_a, net_b);
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn progress_hook_can_abandon_the_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net: LstmNetwork<f64> = LstmNetwork::new(3, 6, 1, 0.0, &mut rng).unwrap();
        let train_set = tiny_set(100, 6, 41);
        let val_set = tiny_set(40, 6, 42);
        let opts = TrainOptions {
            max_epochs: 10,
            patience: 10,
            ..TrainOptions::default()
        };
        let log = train(&mut net, &train_set, &val_set, &opts, |epoch, _, _| {
            epoch < 2
        })
        .unwrap();
        assert!(log.pruned);
        assert_eq!(log.epochs.len(), 3);
    }

    #[test]
    fn dropout_training_still_learns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net: LstmNetwork<f64> = LstmNetwork::new(3, 12, 2, 0.3, &mut rng).unwrap();
        let train_set = tiny_set(300, 8, 51);
        let val_set = tiny_set(80, 8, 52);
        let opts = TrainOptions {
            learning_rate: 5e-3,
            batch_size: 16,
            max_epochs: 14,
            patience: 14,
            seed: 9,
        };
        let before = net
            .batch_loss(&val_set, &(0..val_set.len()).collect::<Vec<_>>())
            .unwrap();
        train(&mut net, &train_set, &val_set, &opts, |_, _, _| true).unwrap();
        let after = net
            .batch_loss(&val_set, &(0..val_set.len()).collect::<Vec<_>>())
            .unwrap();
        assert!(after < before, "dropout run failed to improve: {before} -> {after}");
    }

    #[test]
    fn window_set_validation() {
        let set = tiny_set(20, 5, 1);
        assert!(set.validate().is_ok());
        let mut bad = set.clone();
        bad.ends[0] = 2; // shorter than the window
        assert!(bad.validate().is_err());
        let mut bad = set.clone();
        bad.ends.pop();
        assert!(matches!(
            bad.validate(),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
