//! The sequential recommender: trainable item embeddings, a single LSTM
//! layer, and a dense head over the flattened hidden states, trained with
//! cross-entropy and SGD momentum. Gradients are hand-derived
//! backpropagation through time so they can be checkpointed and traced.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::SequenceExample;
use crate::rng::fnv1a64;
use crate::scalar::{scalar, sigmoid, Scalar};

/// Architecture dimensions. The vocabulary has `n_items` real items plus
/// the reserved padding index 0, so every item axis has size `n_items + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_items: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub lookback: usize,
    /// Feed only the last hidden state to the output layer instead of the
    /// concatenation of all of them.
    pub final_state_only: bool,
}

impl ModelConfig {
    pub fn new(n_items: usize, embedding_dim: usize, hidden_dim: usize, lookback: usize) -> Self {
        ModelConfig {
            n_items,
            embedding_dim,
            hidden_dim,
            lookback,
            final_state_only: false,
        }
    }

    /// Full-scale defaults: 128-wide embeddings, hidden size 64, lookback 50.
    pub fn standard(n_items: usize) -> Self {
        Self::new(n_items, 128, 64, 50)
    }

    /// Width of the vector entering the output layer.
    pub fn dense_input_dim(&self) -> usize {
        if self.final_state_only {
            self.hidden_dim
        } else {
            self.lookback * self.hidden_dim
        }
    }

    pub fn vocab(&self) -> usize {
        self.n_items + 1
    }

    pub fn n_params(&self) -> usize {
        let (v, e, h, d) = (
            self.vocab(),
            self.embedding_dim,
            self.hidden_dim,
            self.dense_input_dim(),
        );
        v * e + 4 * h * e + 4 * h * h + 4 * h + v * d + v
    }
}

/// All trainable tensors. Also reused as the container for gradients and
/// optimizer velocity, which share every shape.
///
/// Gate order inside the stacked LSTM tensors is input, forget, cell
/// candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Scalar> {
    pub config: ModelConfig,
    /// (n_items + 1) x embedding_dim; row 0 is the learned padding token.
    pub embedding: Array2<S>,
    /// 4 hidden_dim x embedding_dim.
    pub lstm_input_weights: Array2<S>,
    /// 4 hidden_dim x hidden_dim.
    pub lstm_recurrent_weights: Array2<S>,
    /// 4 hidden_dim.
    pub lstm_biases: Array1<S>,
    /// (n_items + 1) x dense_input_dim.
    pub output_weights: Array2<S>,
    /// n_items + 1.
    pub output_bias: Array1<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(config: ModelConfig) -> Self {
        let (v, e, h, d) = (
            config.vocab(),
            config.embedding_dim,
            config.hidden_dim,
            config.dense_input_dim(),
        );
        ModelParams {
            config,
            embedding: Array2::zeros((v, e)),
            lstm_input_weights: Array2::zeros((4 * h, e)),
            lstm_recurrent_weights: Array2::zeros((4 * h, h)),
            lstm_biases: Array1::zeros(4 * h),
            output_weights: Array2::zeros((v, d)),
            output_bias: Array1::zeros(v),
        }
    }

    /// Seeded init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor,
    /// then the forget-gate bias block set to one. Fan-in is the embedding
    /// width for the embedding and input weights, the hidden width for the
    /// recurrent weights and biases, and the dense input width for the
    /// output layer. Draws happen in canonical tensor order.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Self {
        let mut params = Self::zeros(config);
        let e = params.config.embedding_dim as f64;
        let h = params.config.hidden_dim as f64;
        let d = params.config.dense_input_dim() as f64;

        fill_uniform(&mut params.embedding, 1.0 / e.sqrt(), rng);
        fill_uniform(&mut params.lstm_input_weights, 1.0 / e.sqrt(), rng);
        fill_uniform(&mut params.lstm_recurrent_weights, 1.0 / h.sqrt(), rng);
        let bound = 1.0 / h.sqrt();
        for v in params.lstm_biases.iter_mut() {
            *v = scalar((rng.gen::<f64>() * 2.0 - 1.0) * bound);
        }
        fill_uniform(&mut params.output_weights, 1.0 / d.sqrt(), rng);
        let bound = 1.0 / d.sqrt();
        for v in params.output_bias.iter_mut() {
            *v = scalar((rng.gen::<f64>() * 2.0 - 1.0) * bound);
        }

        let hd = params.config.hidden_dim;
        params.lstm_biases.slice_mut(s![hd..2 * hd]).fill(S::one());
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone())
    }

    pub fn n_params(&self) -> usize {
        self.config.n_params()
    }

    /// Flatten every tensor into `out` in canonical order: embedding, LSTM
    /// input weights, LSTM recurrent weights, LSTM biases, output weights,
    /// output bias; row-major within each tensor.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.reserve(self.n_params());
        for t in [
            &self.embedding,
            &self.lstm_input_weights,
            &self.lstm_recurrent_weights,
        ] {
            out.extend(t.iter().map(|v| v.to_f64().unwrap()));
        }
        out.extend(self.lstm_biases.iter().map(|v| v.to_f64().unwrap()));
        out.extend(self.output_weights.iter().map(|v| v.to_f64().unwrap()));
        out.extend(self.output_bias.iter().map(|v| v.to_f64().unwrap()));
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.flatten_into(&mut out);
        out
    }

    pub fn fill_from_f64(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                self.n_params(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for t in [
            &mut self.embedding,
            &mut self.lstm_input_weights,
            &mut self.lstm_recurrent_weights,
        ] {
            for v in t.iter_mut() {
                *v = scalar(*it.next().unwrap());
            }
        }
        for v in self.lstm_biases.iter_mut() {
            *v = scalar(*it.next().unwrap());
        }
        for v in self.output_weights.iter_mut() {
            *v = scalar(*it.next().unwrap());
        }
        for v in self.output_bias.iter_mut() {
            *v = scalar(*it.next().unwrap());
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.embedding.iter().all(|v| v.is_finite())
            && self.lstm_input_weights.iter().all(|v| v.is_finite())
            && self.lstm_recurrent_weights.iter().all(|v| v.is_finite())
            && self.lstm_biases.iter().all(|v| v.is_finite())
            && self.output_weights.iter().all(|v| v.is_finite())
            && self.output_bias.iter().all(|v| v.is_finite())
    }
}

fn fill_uniform<S: Scalar, R: Rng>(t: &mut Array2<S>, bound: f64, rng: &mut R) {
    for v in t.iter_mut() {
        *v = scalar((rng.gen::<f64>() * 2.0 - 1.0) * bound);
    }
}

/// Apply `f(dst, src)` over every parameter pair of two equally shaped sets.
fn zip_params<S: Scalar>(
    dst: &mut ModelParams<S>,
    src: &ModelParams<S>,
    f: impl Fn(&mut S, &S) + Copy,
) {
    Zip::from(&mut dst.embedding).and(&src.embedding).for_each(f);
    Zip::from(&mut dst.lstm_input_weights)
        .and(&src.lstm_input_weights)
        .for_each(f);
    Zip::from(&mut dst.lstm_recurrent_weights)
        .and(&src.lstm_recurrent_weights)
        .for_each(f);
    Zip::from(&mut dst.lstm_biases).and(&src.lstm_biases).for_each(f);
    Zip::from(&mut dst.output_weights)
        .and(&src.output_weights)
        .for_each(f);
    Zip::from(&mut dst.output_bias).and(&src.output_bias).for_each(f);
}

/// Left-pad histories with the padding index to `lookback` columns,
/// keeping the most recent items in the rightmost positions. Histories
/// longer than the lookback lose their oldest entries.
pub fn pad_histories(histories: &[&[u32]], lookback: usize) -> Array2<u32> {
    let mut padded = Array2::zeros((histories.len(), lookback));
    for (r, hist) in histories.iter().enumerate() {
        let hist = if hist.len() > lookback {
            &hist[hist.len() - lookback..]
        } else {
            hist
        };
        let offset = lookback - hist.len();
        for (j, &item) in hist.iter().enumerate() {
            padded[(r, offset + j)] = item;
        }
    }
    padded
}

pub fn pad_examples(examples: &[&SequenceExample], lookback: usize) -> (Array2<u32>, Vec<u32>) {
    let histories: Vec<&[u32]> = examples.iter().map(|e| e.history.as_slice()).collect();
    let targets = examples.iter().map(|e| e.target).collect();
    (pad_histories(&histories, lookback), targets)
}

struct ForwardCache<S: Scalar> {
    gate_i: Vec<Array2<S>>,
    gate_f: Vec<Array2<S>>,
    gate_g: Vec<Array2<S>>,
    gate_o: Vec<Array2<S>>,
    cell: Vec<Array2<S>>,
    tanh_cell: Vec<Array2<S>>,
    hidden: Vec<Array2<S>>,
    concat: Array2<S>,
}

fn check_batch<S: Scalar>(params: &ModelParams<S>, padded: &ArrayView2<u32>) -> Result<()> {
    if padded.ncols() != params.config.lookback {
        return Err(Error::InvalidArgument(format!(
            "batch padded to {} steps, model lookback is {}",
            padded.ncols(),
            params.config.lookback
        )));
    }
    let v = params.config.n_items as u32;
    if let Some(&bad) = padded.iter().find(|&&it| it > v) {
        return Err(Error::InvalidArgument(format!(
            "item index {bad} out of range (vocabulary 0..={v})"
        )));
    }
    Ok(())
}

fn embed_step<S: Scalar>(params: &ModelParams<S>, items: ArrayView1<u32>) -> Array2<S> {
    let idx: Vec<usize> = items.iter().map(|&i| i as usize).collect();
    params.embedding.select(Axis(0), &idx)
}

fn run_forward<S: Scalar>(
    params: &ModelParams<S>,
    padded: &ArrayView2<u32>,
) -> Result<(ForwardCache<S>, Array2<S>)> {
    check_batch(params, padded)?;
    let (b, l) = padded.dim();
    let h_dim = params.config.hidden_dim;

    let mut cache = ForwardCache {
        gate_i: Vec::with_capacity(l),
        gate_f: Vec::with_capacity(l),
        gate_g: Vec::with_capacity(l),
        gate_o: Vec::with_capacity(l),
        cell: Vec::with_capacity(l),
        tanh_cell: Vec::with_capacity(l),
        hidden: Vec::with_capacity(l),
        concat: Array2::zeros((b, params.config.dense_input_dim())),
    };

    let mut h_prev = Array2::<S>::zeros((b, h_dim));
    let mut c_prev = Array2::<S>::zeros((b, h_dim));

    for t in 0..l {
        let x_t = embed_step(params, padded.column(t));
        let mut z = x_t.dot(&params.lstm_input_weights.t())
            + h_prev.dot(&params.lstm_recurrent_weights.t());
        z += &params.lstm_biases;

        let gi = z.slice(s![.., 0..h_dim]).mapv(sigmoid);
        let gf = z.slice(s![.., h_dim..2 * h_dim]).mapv(sigmoid);
        let gg = z.slice(s![.., 2 * h_dim..3 * h_dim]).mapv(|v| v.tanh());
        let go = z.slice(s![.., 3 * h_dim..4 * h_dim]).mapv(sigmoid);

        let c = &gf * &c_prev + &gi * &gg;
        let tc = c.mapv(|v| v.tanh());
        let h = &go * &tc;

        if !params.config.final_state_only {
            cache
                .concat
                .slice_mut(s![.., t * h_dim..(t + 1) * h_dim])
                .assign(&h);
        } else if t == l - 1 {
            cache.concat.assign(&h);
        }

        cache.gate_i.push(gi);
        cache.gate_f.push(gf);
        cache.gate_g.push(gg);
        cache.gate_o.push(go);
        cache.cell.push(c.clone());
        cache.tanh_cell.push(tc);
        cache.hidden.push(h.clone());
        h_prev = h;
        c_prev = c;
    }

    let mut logits = cache.concat.dot(&params.output_weights.t());
    logits += &params.output_bias;
    Ok((cache, logits))
}

/// Logits for a batch of left-padded histories, shape (batch, n_items + 1).
pub fn forward<S: Scalar>(params: &ModelParams<S>, padded: &ArrayView2<u32>) -> Result<Array2<S>> {
    run_forward(params, padded).map(|(_, logits)| logits)
}

/// Row-wise softmax with max-subtraction stabilization.
pub fn softmax_rows<S: Scalar>(logits: &ArrayView2<S>) -> Array2<S> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (row, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
        let max = row.fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut sum = S::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            let e = (v - max).exp();
            *d = e;
            sum = sum + e;
        }
        dst.mapv_inplace(|v| v / sum);
    }
    out
}

fn check_targets<S: Scalar>(params: &ModelParams<S>, targets: &[u32]) -> Result<()> {
    let v = params.config.n_items as u32;
    if let Some(&bad) = targets.iter().find(|&&t| t == 0 || t > v) {
        return Err(Error::InvalidArgument(format!(
            "target {bad} out of range (items 1..={v})"
        )));
    }
    Ok(())
}

/// Mean categorical cross-entropy of `targets` under `logits`.
pub fn loss<S: Scalar>(logits: &ArrayView2<S>, targets: &[u32]) -> S {
    assert_eq!(logits.nrows(), targets.len(), "batch sizes must match");
    let mut total = S::zero();
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        let max = row.fold(S::neg_infinity(), |a, &b| a.max(b));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        total = total + lse - row[t as usize];
    }
    total / scalar(targets.len() as f64)
}

/// Gradients of the mean batch loss with respect to every parameter
/// tensor, by backpropagation through time. Returns the loss as well.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    padded: &ArrayView2<u32>,
    targets: &[u32],
) -> Result<(ModelParams<S>, S)> {
    check_targets(params, targets)?;
    let (cache, logits) = run_forward(params, padded)?;
    let (b, l) = padded.dim();
    assert_eq!(b, targets.len(), "batch sizes must match");
    let h_dim = params.config.hidden_dim;
    let batch_loss = loss(&logits.view(), targets);

    let mut grads = params.zeros_like();

    // dL/dlogits = (softmax - onehot) / batch
    let mut dlogits = softmax_rows(&logits.view());
    let inv_b = S::one() / scalar(b as f64);
    for (r, &t) in targets.iter().enumerate() {
        dlogits[(r, t as usize)] = dlogits[(r, t as usize)] - S::one();
    }
    dlogits.mapv_inplace(|v| v * inv_b);

    grads.output_weights = dlogits.t().dot(&cache.concat);
    grads.output_bias = dlogits.sum_axis(Axis(0));
    let dconcat = dlogits.dot(&params.output_weights);

    let zeros = Array2::<S>::zeros((b, h_dim));
    let mut dh_next = Array2::<S>::zeros((b, h_dim));
    let mut dc = Array2::<S>::zeros((b, h_dim));

    for t in (0..l).rev() {
        let mut dh = dh_next;
        if !params.config.final_state_only {
            dh += &dconcat.slice(s![.., t * h_dim..(t + 1) * h_dim]);
        } else if t == l - 1 {
            dh += &dconcat;
        }

        let gi = &cache.gate_i[t];
        let gf = &cache.gate_f[t];
        let gg = &cache.gate_g[t];
        let go = &cache.gate_o[t];
        let tc = &cache.tanh_cell[t];
        let c_prev = if t > 0 { &cache.cell[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &cache.hidden[t - 1] } else { &zeros };

        // dc accumulates the carry from step t+1 plus the hidden-state path.
        Zip::from(&mut dc).and(&dh).and(go).and(tc).for_each(|dc, &dh, &o, &tc| {
            *dc = *dc + dh * o * (S::one() - tc * tc);
        });

        let mut dz = Array2::<S>::zeros((b, 4 * h_dim));
        {
            let (mut dzi, rest) = dz.view_mut().split_at(Axis(1), h_dim);
            let (mut dzf, rest) = rest.split_at(Axis(1), h_dim);
            let (mut dzg, mut dzo) = rest.split_at(Axis(1), h_dim);

            Zip::from(&mut dzo).and(&dh).and(tc).and(go).for_each(|dz, &dh, &tc, &o| {
                *dz = dh * tc * o * (S::one() - o);
            });
            Zip::from(&mut dzi).and(&dc).and(gg).and(gi).for_each(|dz, &dc, &g, &i| {
                *dz = dc * g * i * (S::one() - i);
            });
            Zip::from(&mut dzf).and(&dc).and(c_prev).and(gf).for_each(|dz, &dc, &cp, &f| {
                *dz = dc * cp * f * (S::one() - f);
            });
            Zip::from(&mut dzg).and(&dc).and(gi).and(gg).for_each(|dz, &dc, &i, &g| {
                *dz = dc * i * (S::one() - g * g);
            });
        }

        let x_t = embed_step(params, padded.column(t));
        grads.lstm_input_weights += &dz.t().dot(&x_t);
        grads.lstm_recurrent_weights += &dz.t().dot(h_prev);
        grads.lstm_biases += &dz.sum_axis(Axis(0));

        dh_next = dz.dot(&params.lstm_recurrent_weights);
        let dx = dz.dot(&params.lstm_input_weights);
        for (r, &item) in padded.column(t).iter().enumerate() {
            let mut row = grads.embedding.row_mut(item as usize);
            row += &dx.row(r);
        }

        // Carry into step t-1 through the forget gate.
        Zip::from(&mut dc).and(gf).for_each(|dc, &f| *dc = *dc * f);
    }

    Ok((grads, batch_loss))
}

/// Classical momentum update: v <- momentum v + g, w <- w - lr v.
pub fn sgd_momentum_step<S: Scalar>(
    params: &mut ModelParams<S>,
    velocity: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    lr: S,
    momentum: S,
) {
    zip_params(velocity, grads, move |v, &g| *v = momentum * *v + g);
    zip_params(params, velocity, move |w, &v| *w = *w - lr * v);
}

/// Training hyperparameters. Defaults follow the full-scale setting.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            batch_size: 2048,
            epochs: 600,
            learning_rate: 5e-3,
            momentum: 0.9,
            checkpoint_interval: 30,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.checkpoint_interval == 0 {
            return Err(Error::InvalidArgument(
                "batch size, epochs, and checkpoint interval must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if self.epochs % self.checkpoint_interval != 0 {
            return Err(Error::InvalidArgument(format!(
                "checkpoint interval {} does not divide epochs {}",
                self.checkpoint_interval, self.epochs
            )));
        }
        Ok(())
    }
}

/// Parameter snapshot taken during training, with the learning rate that
/// was in effect. Epoch 0 is the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S: Scalar> {
    pub params: ModelParams<S>,
    pub learning_rate: f64,
    pub epoch: u32,
    pub hyperparams: Hyperparams,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RDIVCKPT";
const CHECKPOINT_VERSION: u32 = 1;

impl<S: Scalar> Checkpoint<S> {
    /// Serialize: magic, schema version, dims, hyperparameters, epoch,
    /// learning rate, raw little-endian f64 tensors in canonical order,
    /// trailing checksum.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.params.config;
        let mut buf = Vec::with_capacity(64 + self.params.n_params() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(cfg.n_items as u32).to_le_bytes());
        buf.extend_from_slice(&(cfg.embedding_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(cfg.hidden_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(cfg.lookback as u32).to_le_bytes());
        buf.push(cfg.final_state_only as u8);
        buf.extend_from_slice(&(self.hyperparams.batch_size as u32).to_le_bytes());
        buf.extend_from_slice(&(self.hyperparams.epochs as u32).to_le_bytes());
        buf.extend_from_slice(&self.hyperparams.learning_rate.to_le_bytes());
        buf.extend_from_slice(&self.hyperparams.momentum.to_le_bytes());
        buf.extend_from_slice(&(self.hyperparams.checkpoint_interval as u32).to_le_bytes());
        buf.extend_from_slice(&self.hyperparams.seed.to_le_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.learning_rate.to_le_bytes());
        for v in self.params.flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let checksum = fnv1a64(&buf);
        buf.extend_from_slice(&checksum.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("checkpoint file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > body.len() {
                return Err(Error::Format("checkpoint file truncated".into()));
            }
            let s = &body[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let u32_at =
            |pos: &mut usize| -> Result<u32> { Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap())) };
        let f64_at =
            |pos: &mut usize| -> Result<f64> { Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap())) };

        if take(&mut pos, 8)? != CHECKPOINT_MAGIC.as_slice() {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32_at(&mut pos)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint schema version {version}"
            )));
        }
        let n_items = u32_at(&mut pos)? as usize;
        let embedding_dim = u32_at(&mut pos)? as usize;
        let hidden_dim = u32_at(&mut pos)? as usize;
        let lookback = u32_at(&mut pos)? as usize;
        let final_state_only = take(&mut pos, 1)?[0] != 0;
        let config = ModelConfig {
            n_items,
            embedding_dim,
            hidden_dim,
            lookback,
            final_state_only,
        };
        let hyperparams = Hyperparams {
            batch_size: u32_at(&mut pos)? as usize,
            epochs: u32_at(&mut pos)? as usize,
            learning_rate: f64_at(&mut pos)?,
            momentum: f64_at(&mut pos)?,
            checkpoint_interval: u32_at(&mut pos)? as usize,
            seed: u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()),
        };
        let epoch = u32_at(&mut pos)?;
        let learning_rate = f64_at(&mut pos)?;
        if learning_rate <= 0.0 {
            return Err(Error::Format("checkpoint learning rate must be positive".into()));
        }

        let n = config.n_params();
        let raw = take(&mut pos, n * 8)?;
        if pos != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint file".into()));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut params = ModelParams::zeros(config);
        params.fill_from_f64(&values)?;
        Ok(Checkpoint {
            params,
            learning_rate,
            epoch,
            hyperparams,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Training output: the checkpoint sequence and the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct TrainResult<S: Scalar> {
    pub checkpoints: Vec<Checkpoint<S>>,
    /// (epoch, mean training loss); epoch numbering starts at 1.
    pub loss_trace: Vec<(usize, f64)>,
}

impl<S: Scalar> TrainResult<S> {
    pub fn final_params(&self) -> &ModelParams<S> {
        &self
            .checkpoints
            .last()
            .expect("training always checkpoints")
            .params
    }
}

/// Seeded mini-batch training. Checkpoints are taken at epoch 0
/// (initialization), every `checkpoint_interval` epochs, and at the final
/// epoch. Aborts with a diagnostic if the loss stops being finite.
pub fn train<S: Scalar>(
    train_examples: &[SequenceExample],
    config: ModelConfig,
    hyperparams: &Hyperparams,
) -> Result<TrainResult<S>> {
    hyperparams.validate()?;
    if train_examples.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let v = config.n_items as u32;
    for e in train_examples {
        if e.target == 0 || e.target > v || e.history.iter().any(|&i| i == 0 || i > v) {
            return Err(Error::InvalidArgument(format!(
                "example references items outside 1..={v}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyperparams.seed);
    let mut params = ModelParams::<S>::init(config, &mut rng);
    let mut velocity = params.zeros_like();
    let lr = scalar::<S>(hyperparams.learning_rate);
    let momentum = scalar::<S>(hyperparams.momentum);

    let snapshot = |params: &ModelParams<S>, epoch: usize| Checkpoint {
        params: params.clone(),
        learning_rate: hyperparams.learning_rate,
        epoch: epoch as u32,
        hyperparams: hyperparams.clone(),
    };

    let mut checkpoints = vec![snapshot(&params, 0)];
    let mut loss_trace = Vec::with_capacity(hyperparams.epochs);
    let mut indices: Vec<usize> = (0..train_examples.len()).collect();

    for epoch in 1..=hyperparams.epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in indices.chunks(hyperparams.batch_size).enumerate() {
            let batch: Vec<&SequenceExample> = chunk.iter().map(|&i| &train_examples[i]).collect();
            let (padded, targets) = pad_examples(&batch, params.config.lookback);
            let (grads, batch_loss) = backward(&params, &padded.view(), &targets)?;
            let batch_loss = batch_loss.to_f64().unwrap();
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += batch_loss * chunk.len() as f64;
            sgd_momentum_step(&mut params, &mut velocity, &grads, lr, momentum);
        }
        loss_trace.push((epoch, epoch_loss / train_examples.len() as f64));

        if (epoch % hyperparams.checkpoint_interval == 0 || epoch == hyperparams.epochs)
            && checkpoints.last().map(|c| c.epoch as usize) != Some(epoch)
        {
            checkpoints.push(snapshot(&params, epoch));
        }
    }

    if !params.all_finite() {
        return Err(Error::Diverged {
            epoch: hyperparams.epochs,
            batch: 0,
        });
    }
    Ok(TrainResult {
        checkpoints,
        loss_trace,
    })
}

pub fn write_loss_trace(trace: &[(usize, f64)], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,mean_loss")?;
    for (epoch, loss) in trace {
        writeln!(f, "{epoch},{loss}")?;
    }
    Ok(())
}
