//! Small recurrent policy networks with hand-written forward and
//! backpropagation-through-time.
//!
//! Centralized: LSTM(H) → LSTM(H/2) → LSTM(H/4) → 3 × (dense, ReLU) → one
//! softmax head per agent. Distributed: LSTM(H) → LSTM(H/4) → 2 × (dense,
//! ReLU) → dense → softmax. The last-slot hidden state of the top LSTM feeds
//! the dense stack.

mod checkpoint;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, decode_controller, encode_checkpoint, encode_controller, read_checkpoint,
    read_controller, write_checkpoint, write_controller, ControllerCheckpoint, CHECKPOINT_VERSION,
};

/// Probability floor used by [`log_prob_clamped`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Centralized,
    Distributed,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Centralized => "centralized",
            Self::Distributed => "distributed",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(Self::Centralized),
            "distributed" => Ok(Self::Distributed),
            other => Err(Error::InvalidArchitecture(format!("unknown controller kind `{other}`"))),
        }
    }
}

/// Layer layout of one policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArchitecture {
    pub kind: ControllerKind,
    /// History length; also the width of the first LSTM layer.
    pub history: usize,
    /// Codebook size of each softmax head. The input one-hot segments use
    /// the same sizes.
    pub heads: Vec<usize>,
    pub dense_width: usize,
    /// Dropout after the LSTM stack.
    pub dropout_lstm: f64,
    /// Dropout after each hidden dense layer.
    pub dropout_dense: f64,
}

impl NetworkArchitecture {
    pub fn new(
        kind: ControllerKind,
        history: usize,
        heads: Vec<usize>,
        dense_width: usize,
        dropout_lstm: f64,
        dropout_dense: f64,
    ) -> Result<Self> {
        let arch = Self {
            kind,
            history,
            heads,
            dense_width,
            dropout_lstm,
            dropout_dense,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// One network controlling every agent.
    pub fn centralized(history: usize, action_sizes: &[usize]) -> Result<Self> {
        Self::new(
            ControllerKind::Centralized,
            history,
            action_sizes.to_vec(),
            history,
            0.0,
            0.0,
        )
    }

    /// One agent's own network.
    pub fn distributed(history: usize, actions: usize) -> Result<Self> {
        Self::new(ControllerKind::Distributed, history, vec![actions], history, 0.0, 0.0)
    }

    pub fn with_dense_width(mut self, width: usize) -> Result<Self> {
        self.dense_width = width;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dropout(mut self, lstm: f64, dense: f64) -> Result<Self> {
        self.dropout_lstm = lstm;
        self.dropout_dense = dense;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArchitecture(m));
        if self.history == 0 || self.history % 4 != 0 {
            return bad(format!("history length must be a positive multiple of 4, got {}", self.history));
        }
        if self.heads.is_empty() {
            return bad("at least one head is required".into());
        }
        if self.heads.contains(&0) {
            return bad(format!("zero-width head in {:?}", self.heads));
        }
        if self.kind == ControllerKind::Distributed && self.heads.len() != 1 {
            return bad("a distributed network has exactly one head".into());
        }
        if self.dense_width == 0 {
            return bad("dense width must be >= 1".into());
        }
        for p in [self.dropout_lstm, self.dropout_dense] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout probability must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    /// Features per history slot: all one-hot segments plus the rate.
    pub fn input_width(&self) -> usize {
        self.heads.iter().sum::<usize>() + 1
    }

    pub fn lstm_sizes(&self) -> Vec<usize> {
        let h = self.history;
        match self.kind {
            ControllerKind::Centralized => vec![h, h / 2, h / 4],
            ControllerKind::Distributed => vec![h, h / 4],
        }
    }

    /// Widths of the dense layers followed by a rectifier.
    pub fn hidden_dense(&self) -> Vec<usize> {
        match self.kind {
            ControllerKind::Centralized => vec![self.dense_width; 3],
            ControllerKind::Distributed => vec![self.dense_width; 2],
        }
    }

    /// Named parameter blocks in storage order.
    pub fn layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            blocks.push(ParamBlock {
                name,
                offset,
                rows,
                cols,
            });
            offset += rows * cols;
        };
        let mut input = self.input_width();
        for (l, &h) in self.lstm_sizes().iter().enumerate() {
            push(format!("lstm{l}.w"), 4 * h, input);
            push(format!("lstm{l}.u"), 4 * h, h);
            push(format!("lstm{l}.b"), 4 * h, 1);
            input = h;
        }
        for (l, &d) in self.hidden_dense().iter().enumerate() {
            push(format!("dense{l}.w"), d, input);
            push(format!("dense{l}.b"), d, 1);
            input = d;
        }
        for (m, &k) in self.heads.iter().enumerate() {
            push(format!("head{m}.w"), k, input);
            push(format!("head{m}.b"), k, 1);
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|b| b.len()).sum()
    }
}

/// A contiguous `rows x cols` row-major slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector. Every mutable borrow bumps `version`, which lets a
/// forward cache detect that the parameters changed underneath it.
/// Equality compares values only.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    values: Vec<f64>,
    version: u64,
}

impl PartialEq for PolicyParams {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl PolicyParams {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values, version: 0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Glorot-uniform weights, forget-gate biases 1, other biases 0.
pub fn init_params(arch: &NetworkArchitecture, rng: &mut dyn RngCore) -> Result<PolicyParams> {
    arch.validate()?;
    let mut values = vec![0.0; arch.param_count()];
    for block in arch.layout() {
        if block.name.ends_with(".b") {
            if block.name.starts_with("lstm") {
                let h = block.rows / 4;
                values[block.offset + h..block.offset + 2 * h].fill(1.0);
            }
            continue;
        }
        // Recurrent and input matrices of a gate stack fan out to all 4 gates.
        let s = (6.0 / (block.cols + block.rows) as f64).sqrt();
        for v in &mut values[block.range()] {
            *v = rng.random_range(-s..=s);
        }
    }
    Ok(PolicyParams::from_vec(values))
}

/// How dropout masks are produced in a forward pass.
pub enum Dropout<'a> {
    /// Evaluation: no masks, no rescaling.
    Off,
    /// Training: fresh inverted-dropout masks.
    Sample(&'a mut dyn RngCore),
    /// Reapply the masks recorded in an earlier forward pass.
    Reuse(&'a ForwardCache),
}

/// Everything needed to replay a forward pass and run BPTT.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    param_version: u64,
    param_len: usize,
    input: Vec<f64>,
    /// Per layer: gate activations `[i, f, g, o]` per slot (`T x 4h`).
    gates: Vec<Vec<f64>>,
    /// Per layer: cell states for slots `-1..T` (`(T+1) x h`).
    cells: Vec<Vec<f64>>,
    /// Per layer: hidden states for slots `-1..T` (`(T+1) x h`).
    hidden: Vec<Vec<f64>>,
    lstm_out: Vec<f64>,
    lstm_mask: Option<Vec<f64>>,
    /// Per hidden dense layer: its input, its pre-activation and the mask
    /// applied after the rectifier.
    dense_in: Vec<Vec<f64>>,
    dense_pre: Vec<Vec<f64>>,
    dense_mask: Vec<Option<Vec<f64>>>,
    head_in: Vec<f64>,
    logits: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// One probability vector per head.
    pub fn distributions(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    /// Top-LSTM output at the last slot, before dropout.
    pub fn lstm_output(&self) -> &[f64] {
        &self.lstm_out
    }

    pub fn dropout_masks(&self) -> (Option<&[f64]>, Vec<Option<&[f64]>>) {
        (
            self.lstm_mask.as_deref(),
            self.dense_mask.iter().map(|m| m.as_deref()).collect(),
        )
    }
}

/// `out += W x` for row-major `W` (`out.len() x x.len()`).
#[inline]
fn gemv_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T dz`.
#[inline]
fn gemv_t_acc(out: &mut [f64], w: &[f64], dz: &[f64]) {
    let cols = out.len();
    for (d, row) in dz.iter().zip(w.chunks_exact(cols)) {
        if *d != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * d;
            }
        }
    }
}

/// `G += dz x^T`.
#[inline]
fn ger_acc(g: &mut [f64], dz: &[f64], x: &[f64]) {
    let cols = x.len();
    for (d, row) in dz.iter().zip(g.chunks_exact_mut(cols)) {
        if *d != 0.0 {
            for (o, a) in row.iter_mut().zip(x) {
                *o += d * a;
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn dropout_mask(p: f64, n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Encode the most recent `history` slots as the network input
/// (`history x input_width`, oldest first). Each slot carries one action per
/// head (one-hot) and the normalized rate; missing older slots are zero.
pub fn encode_history<'a, I>(arch: &NetworkArchitecture, slots: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = (&'a [usize], f64)>,
    I::IntoIter: ExactSizeIterator,
{
    let slots = slots.into_iter();
    let f = arch.input_width();
    let h = arch.history;
    let mut out = vec![0.0; h * f];
    let n = slots.len();
    for (k, (actions, rate)) in slots.enumerate() {
        if k + h < n {
            continue;
        }
        let row = h - (n - k);
        let base = row * f;
        if actions.len() != arch.heads.len() {
            return Err(Error::ShapeMismatch(format!(
                "history slot has {} actions, network expects {}",
                actions.len(),
                arch.heads.len()
            )));
        }
        let mut seg = base;
        for (m, (&a, &k_m)) in actions.iter().zip(&arch.heads).enumerate() {
            if a >= k_m {
                return Err(Error::ActionOutOfRange {
                    agent: m,
                    index: a,
                    size: k_m,
                });
            }
            out[seg + a] = 1.0;
            seg += k_m;
        }
        out[base + f - 1] = rate;
    }
    Ok(out)
}

/// A network together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub arch: NetworkArchitecture,
    pub params: PolicyParams,
}

impl PolicyNet {
    pub fn new(arch: NetworkArchitecture, params: PolicyParams) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::InvalidArchitecture(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArchitecture("non-finite parameter".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn random(arch: NetworkArchitecture, rng: &mut dyn RngCore) -> Result<Self> {
        let params = init_params(&arch, rng)?;
        Self::new(arch, params)
    }

    pub fn zeros(arch: NetworkArchitecture) -> Result<Self> {
        let n = arch.param_count();
        Self::new(arch, PolicyParams::from_vec(vec![0.0; n]))
    }

    fn block(&self, name: &str) -> &[f64] {
        let b = self
            .arch
            .layout()
            .into_iter()
            .find(|b| b.name == name)
            .expect("known block");
        &self.params.values()[b.range()]
    }

    /// Run the network on an encoded history.
    pub fn forward(&self, input: &[f64], mut dropout: Dropout<'_>) -> Result<ForwardCache> {
        let arch = &self.arch;
        let steps = arch.history;
        let f = arch.input_width();
        if input.len() != steps * f {
            return Err(Error::ShapeMismatch(format!(
                "input must be {steps} x {f}, got {} values",
                input.len()
            )));
        }
        let layout = arch.layout();
        let p = self.params.values();
        let mut it = layout.iter();
        let mut next = || &p[it.next().expect("layout covers every layer").range()];

        let sizes = arch.lstm_sizes();
        let mut gates_all = Vec::with_capacity(sizes.len());
        let mut cells_all = Vec::with_capacity(sizes.len());
        let mut hidden_all = Vec::with_capacity(sizes.len());
        let mut in_width = f;
        for &h in &sizes {
            let (w, u, b) = (next(), next(), next());
            let mut gates = vec![0.0; steps * 4 * h];
            let mut cells = vec![0.0; (steps + 1) * h];
            let mut hidden = vec![0.0; (steps + 1) * h];
            let mut z = vec![0.0; 4 * h];
            for t in 0..steps {
                let x: &[f64] = if hidden_all.is_empty() {
                    &input[t * f..(t + 1) * f]
                } else {
                    let below: &Vec<f64> = hidden_all.last().expect("layer below");
                    &below[(t + 1) * in_width..(t + 2) * in_width]
                };
                z.copy_from_slice(b);
                gemv_acc(&mut z, w, x);
                gemv_acc(&mut z, u, &hidden[t * h..(t + 1) * h]);
                let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
                for j in 0..h {
                    g[j] = sigmoid(z[j]);
                    g[h + j] = sigmoid(z[h + j]);
                    g[2 * h + j] = z[2 * h + j].tanh();
                    g[3 * h + j] = sigmoid(z[3 * h + j]);
                }
                for j in 0..h {
                    let c = g[h + j] * cells[t * h + j] + g[j] * g[2 * h + j];
                    cells[(t + 1) * h + j] = c;
                    hidden[(t + 1) * h + j] = g[3 * h + j] * c.tanh();
                }
            }
            gates_all.push(gates);
            cells_all.push(cells);
            hidden_all.push(hidden);
            in_width = h;
        }

        let top = hidden_all.last().expect("at least one layer");
        let lstm_out = top[steps * in_width..].to_vec();
        let mut x = lstm_out.clone();
        let lstm_mask = match &mut dropout {
            Dropout::Sample(rng) if arch.dropout_lstm > 0.0 => {
                Some(dropout_mask(arch.dropout_lstm, x.len(), *rng))
            }
            Dropout::Reuse(c) => c.lstm_mask.clone(),
            _ => None,
        };
        if let Some(m) = &lstm_mask {
            if m.len() != x.len() {
                return Err(Error::CacheMismatch("dropout mask width".into()));
            }
            x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }

        let hidden_dense = arch.hidden_dense();
        let mut dense_in = Vec::with_capacity(hidden_dense.len());
        let mut dense_pre = Vec::with_capacity(hidden_dense.len());
        let mut dense_mask = Vec::with_capacity(hidden_dense.len());
        for (l, &d) in hidden_dense.iter().enumerate() {
            let (w, b) = (next(), next());
            let mut pre = b.to_vec();
            gemv_acc(&mut pre, w, &x);
            let mut out: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let mask = match &mut dropout {
                Dropout::Sample(rng) if arch.dropout_dense > 0.0 => {
                    Some(dropout_mask(arch.dropout_dense, d, *rng))
                }
                Dropout::Reuse(c) => c.dense_mask.get(l).cloned().flatten(),
                _ => None,
            };
            if let Some(m) = &mask {
                if m.len() != d {
                    return Err(Error::CacheMismatch("dropout mask width".into()));
                }
                out.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            dense_in.push(std::mem::replace(&mut x, out));
            dense_pre.push(pre);
            dense_mask.push(mask);
        }

        let mut logits = Vec::with_capacity(arch.heads.len());
        let mut probs = Vec::with_capacity(arch.heads.len());
        for _ in &arch.heads {
            let (w, b) = (next(), next());
            let mut z = b.to_vec();
            gemv_acc(&mut z, w, &x);
            probs.push(softmax(&z));
            logits.push(z);
        }

        Ok(ForwardCache {
            param_version: self.params.version(),
            param_len: self.params.len(),
            input: input.to_vec(),
            gates: gates_all,
            cells: cells_all,
            hidden: hidden_all,
            lstm_out,
            lstm_mask,
            dense_in,
            dense_pre,
            dense_mask,
            head_in: x,
            logits,
            probs,
        })
    }

    /// Action distributions in evaluation mode.
    pub fn distributions(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(input, Dropout::Off)?.probs)
    }

    /// Accumulate `weight * grad_theta sum_m log pi_m(actions[m])` into
    /// `grad` by backpropagation through time.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        actions: &[usize],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let selected: Vec<Option<usize>> = actions.iter().map(|&a| Some(a)).collect();
        self.backward_heads(cache, &selected, weight, grad)
    }

    /// Like [`PolicyNet::backward`], but heads with `None` contribute nothing.
    pub fn backward_heads(
        &self,
        cache: &ForwardCache,
        actions: &[Option<usize>],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let arch = &self.arch;
        if cache.param_version != self.params.version() || cache.param_len != self.params.len() {
            return Err(Error::CacheMismatch(format!(
                "cache built for parameter version {} ({} values), network is at version {} ({} values)",
                cache.param_version,
                cache.param_len,
                self.params.version(),
                self.params.len()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer has {} entries, network has {}",
                grad.len(),
                self.params.len()
            )));
        }
        if actions.len() != arch.heads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} actions for {} heads",
                actions.len(),
                arch.heads.len()
            )));
        }
        for (m, (a, &k)) in actions.iter().zip(&arch.heads).enumerate() {
            if let Some(a) = *a {
                if a >= k {
                    return Err(Error::ActionOutOfRange {
                        agent: m,
                        index: a,
                        size: k,
                    });
                }
            }
        }
        if weight == 0.0 || actions.iter().all(Option::is_none) {
            return Ok(());
        }

        let layout = arch.layout();
        let p = self.params.values();
        let n_lstm = arch.lstm_sizes().len();
        let n_dense = arch.hidden_dense().len();
        let head_base = 3 * n_lstm + 2 * n_dense;

        // Heads: d/dz log softmax(z)_a = e_a - p.
        let mut dx = vec![0.0; cache.head_in.len()];
        for (m, a) in actions.iter().enumerate() {
            let Some(a) = *a else { continue };
            let (wb, bb) = (&layout[head_base + 2 * m], &layout[head_base + 2 * m + 1]);
            let mut dz: Vec<f64> = cache.probs[m].iter().map(|q| -weight * q).collect();
            dz[a] += weight;
            ger_acc(&mut grad[wb.range()], &dz, &cache.head_in);
            grad[bb.range()].iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
            gemv_t_acc(&mut dx, &p[wb.range()], &dz);
        }

        for l in (0..n_dense).rev() {
            let (wb, bb) = (&layout[3 * n_lstm + 2 * l], &layout[3 * n_lstm + 2 * l + 1]);
            let mut dz = dx;
            if let Some(m) = &cache.dense_mask[l] {
                dz.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            dz.iter_mut()
                .zip(&cache.dense_pre[l])
                .for_each(|(d, z)| {
                    if *z <= 0.0 {
                        *d = 0.0
                    }
                });
            ger_acc(&mut grad[wb.range()], &dz, &cache.dense_in[l]);
            grad[bb.range()].iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
            dx = vec![0.0; cache.dense_in[l].len()];
            gemv_t_acc(&mut dx, &p[wb.range()], &dz);
        }
        if let Some(m) = &cache.lstm_mask {
            dx.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }

        let steps = arch.history;
        let sizes = arch.lstm_sizes();
        let f = arch.input_width();
        // Gradient flowing into each layer's hidden state from above, per slot.
        let top_h = sizes[n_lstm - 1];
        let mut dh_ext = vec![0.0; steps * top_h];
        dh_ext[(steps - 1) * top_h..].copy_from_slice(&dx);
        for l in (0..n_lstm).rev() {
            let h = sizes[l];
            let in_width = if l == 0 { f } else { sizes[l - 1] };
            let (wb, ub, bb) = (&layout[3 * l], &layout[3 * l + 1], &layout[3 * l + 2]);
            let (w, u) = (&p[wb.range()], &p[ub.range()]);
            let gates = &cache.gates[l];
            let cells = &cache.cells[l];
            let hidden = &cache.hidden[l];
            let mut dx_below = if l > 0 { vec![0.0; steps * in_width] } else { Vec::new() };
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            for t in (0..steps).rev() {
                let g = &gates[t * 4 * h..(t + 1) * 4 * h];
                for j in 0..h {
                    let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let c = cells[(t + 1) * h + j];
                    let c_prev = cells[t * h + j];
                    let tc = c.tanh();
                    let dh = dh_ext[t * h + j] + dh_next[j];
                    let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                    dz[j] = dc * c_g * i_g * (1.0 - i_g);
                    dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                    dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                    dz[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                    dc_next[j] = dc * f_g;
                }
                let x: &[f64] = if l == 0 {
                    &cache.input[t * f..(t + 1) * f]
                } else {
                    &cache.hidden[l - 1][(t + 1) * in_width..(t + 2) * in_width]
                };
                ger_acc(&mut grad[wb.range()], &dz, x);
                ger_acc(&mut grad[ub.range()], &dz, &hidden[t * h..(t + 1) * h]);
                grad[bb.range()].iter_mut().zip(&dz).for_each(|(gv, d)| *gv += d);
                dh_next.fill(0.0);
                gemv_t_acc(&mut dh_next, u, &dz);
                if l > 0 {
                    gemv_t_acc(&mut dx_below[t * in_width..(t + 1) * in_width], w, &dz);
                }
            }
            dh_ext = dx_below;
        }
        Ok(())
    }

    /// Parameter block by name (e.g. `lstm0.w`).
    pub fn block_values(&self, name: &str) -> Option<&[f64]> {
        self.arch
            .layout()
            .iter()
            .any(|b| b.name == name)
            .then(|| self.block(name))
    }
}

/// Inverse-CDF draw with uniform `u` in `[0, 1)`: the first index whose
/// cumulative probability exceeds `u` (a boundary value falls into the next
/// bin). Rounding slack at the top goes to the last positive entry.
pub fn sample_index(distribution: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in distribution.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn sample_action(distribution: &[f64], rng: &mut dyn RngCore) -> usize {
    sample_index(distribution, rng.random::<f64>())
}

/// Natural log of the selected probability.
pub fn log_prob(distribution: &[f64], action: usize) -> Result<f64> {
    match distribution.get(action) {
        Some(&p) if p > 0.0 => Ok(p.ln()),
        Some(_) => Err(Error::NumericalSupport { action }),
        None => Err(Error::ActionOutOfRange {
            agent: 0,
            index: action,
            size: distribution.len(),
        }),
    }
}

/// Log-probability with the probability floored at [`PROB_FLOOR`]; the flag
/// reports whether the floor was hit.
pub fn log_prob_clamped(distribution: &[f64], action: usize) -> (f64, bool) {
    let p = distribution.get(action).copied().unwrap_or(0.0);
    if p < PROB_FLOOR {
        (PROB_FLOOR.ln(), true)
    } else {
        (p.ln(), false)
    }
}

#[cfg(test)]
mod tests;
