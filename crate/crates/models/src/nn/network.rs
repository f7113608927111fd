//! Network parameters, forward passes and backpropagation.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ser_core::derive_seed;

use super::{Activation, ConvPadding, LayerSpec, NetworkSpec, Shape, Tensor};
use crate::{ModelError, N_CLASSES};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off, batch norm uses running statistics.
    Eval,
    /// Dropout masks drawn from the seed, batch norm uses batch statistics.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum LayerState {
    Conv1d {
        /// `(filters, in_channels, kernel)`
        w: Array3<f64>,
        b: Array1<f64>,
    },
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
    Dense {
        /// `(inputs, units)`
        w: Array2<f64>,
        b: Array1<f64>,
    },
    Stateless,
}

impl LayerState {
    /// Trainable tensors in a fixed order, flagged `true` for weight
    /// matrices (the ones weight decay applies to).
    pub fn trainable(&self) -> Vec<(&[f64], bool)> {
        match self {
            LayerState::Conv1d { w, b } => vec![
                (w.as_slice().expect("standard layout"), true),
                (b.as_slice().expect("standard layout"), false),
            ],
            LayerState::BatchNorm { gamma, beta, .. } => vec![
                (gamma.as_slice().expect("standard layout"), false),
                (beta.as_slice().expect("standard layout"), false),
            ],
            LayerState::Dense { w, b } => vec![
                (w.as_slice().expect("standard layout"), true),
                (b.as_slice().expect("standard layout"), false),
            ],
            LayerState::Stateless => vec![],
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        match self {
            LayerState::Conv1d { w, b } => vec![
                (w.as_slice_mut().expect("standard layout"), true),
                (b.as_slice_mut().expect("standard layout"), false),
            ],
            LayerState::BatchNorm { gamma, beta, .. } => vec![
                (gamma.as_slice_mut().expect("standard layout"), false),
                (beta.as_slice_mut().expect("standard layout"), false),
            ],
            LayerState::Dense { w, b } => vec![
                (w.as_slice_mut().expect("standard layout"), true),
                (b.as_slice_mut().expect("standard layout"), false),
            ],
            LayerState::Stateless => vec![],
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            LayerState::Conv1d { w, b } => LayerState::Conv1d {
                w: Array3::zeros(w.raw_dim()),
                b: Array1::zeros(b.len()),
            },
            LayerState::BatchNorm { gamma, .. } => {
                let n = gamma.len();
                LayerState::BatchNorm {
                    gamma: Array1::zeros(n),
                    beta: Array1::zeros(n),
                    running_mean: Array1::zeros(n),
                    running_var: Array1::zeros(n),
                }
            }
            LayerState::Dense { w, b } => LayerState::Dense {
                w: Array2::zeros(w.raw_dim()),
                b: Array1::zeros(b.len()),
            },
            LayerState::Stateless => LayerState::Stateless,
        }
    }

    pub fn n_trainable(&self) -> usize {
        self.trainable().iter().map(|(s, _)| s.len()).sum()
    }
}

/// Gradients share the parameter layout.
pub type Gradients = Vec<LayerState>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerState>,
}

enum Cache {
    Conv { cols: Array2<f64>, out: Tensor, in_shape: (usize, usize, usize) },
    BatchNorm { xhat: Tensor, inv_std: Array1<f64> },
    Dropout { mask: Option<Tensor> },
    Flatten { in_shape: (usize, usize, usize) },
    Dense { input: Array2<f64>, out: Array2<f64> },
}

/// Running-statistics update produced by a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub layer: usize,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

pub struct ForwardPass {
    /// `(batch, 7)` softmax outputs.
    pub probs: Array2<f64>,
    pub logits: Array2<f64>,
    pub bn_updates: Vec<BnUpdate>,
    caches: Vec<Cache>,
}

fn he_or_glorot(activation: Activation, fan_in: usize, fan_out: usize) -> f64 {
    match activation {
        Activation::Relu => (6.0 / fan_in as f64).sqrt(),
        Activation::Linear | Activation::Softmax => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

fn pad_left(kernel: usize, padding: ConvPadding) -> usize {
    match padding {
        ConvPadding::Same => (kernel - 1) / 2,
        ConvPadding::Valid => 0,
    }
}

/// Mean cross-entropy of `labels` under softmax(`logits`), via log-sum-exp.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &c) in logits.rows().into_iter().zip(labels) {
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
        total += lse - row[c];
    }
    total / labels.len() as f64
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    crate::logreg::softmax_rows(logits)
}

impl Network {
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self, ModelError> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut prev = spec.input;
        for (i, (layer, shape)) in spec.layers.iter().zip(&shapes).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("init/{i}")));
            let state = match *layer {
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                    activation,
                    ..
                } => {
                    let limit = he_or_glorot(activation, prev.channels * kernel_size, filters * kernel_size);
                    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                    LayerState::Conv1d {
                        w: Array3::from_shape_fn((filters, prev.channels, kernel_size), |_| dist.sample(&mut rng)),
                        b: Array1::zeros(filters),
                    }
                }
                LayerSpec::BatchNorm => LayerState::BatchNorm {
                    gamma: Array1::ones(prev.channels),
                    beta: Array1::zeros(prev.channels),
                    running_mean: Array1::zeros(prev.channels),
                    running_var: Array1::ones(prev.channels),
                },
                LayerSpec::Dense { units, activation } => {
                    let limit = he_or_glorot(activation, prev.channels, units);
                    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                    LayerState::Dense {
                        w: Array2::from_shape_fn((prev.channels, units), |_| dist.sample(&mut rng)),
                        b: Array1::zeros(units),
                    }
                }
                LayerSpec::Dropout { .. } | LayerSpec::Flatten => LayerState::Stateless,
            };
            layers.push(state);
            prev = *shape;
        }
        Ok(Self { spec, layers })
    }

    pub fn input_shape(&self) -> Shape {
        self.spec.input
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(LayerState::n_trainable).sum()
    }

    /// Reshapes flat rows `(n, d)` into the network's input tensor.
    pub fn rows_to_input(&self, rows: &Array2<f64>) -> Result<Tensor, ModelError> {
        let s = self.spec.input;
        if rows.ncols() != s.size() {
            return Err(ModelError::Shape(format!(
                "network expects {} input values, got {}",
                s.size(),
                rows.ncols()
            )));
        }
        let data: Vec<f64> = rows.iter().copied().collect();
        Array3::from_shape_vec((rows.nrows(), s.channels, s.length), data).map_err(|e| ModelError::Shape(e.to_string()))
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, seed: u64) -> Result<ForwardPass, ModelError> {
        let (batch, c, l) = x.dim();
        let s = self.spec.input;
        if (c, l) != (s.channels, s.length) || batch == 0 {
            return Err(ModelError::Shape(format!(
                "input batch {:?} does not match network input (n, {}, {})",
                x.dim(),
                s.channels,
                s.length
            )));
        }
        let train = mode == Mode::Train;
        let mut caches = Vec::new();
        let mut bn_updates = Vec::new();
        let mut cur = x.clone();
        let mut logits = None;
        let n_layers = self.layers.len();
        for (i, (spec, state)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let in_shape = cur.dim();
            match (spec, state) {
                (
                    LayerSpec::Conv1d {
                        kernel_size,
                        activation,
                        padding,
                        ..
                    },
                    LayerState::Conv1d { w, b },
                ) => {
                    let (cols, out) = conv_forward(&cur, w, b, *kernel_size, *padding, *activation);
                    if train {
                        caches.push(Cache::Conv {
                            cols,
                            out: out.clone(),
                            in_shape,
                        });
                    }
                    cur = out;
                }
                (
                    LayerSpec::BatchNorm,
                    LayerState::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    if train {
                        let (y, xhat, inv_std, mean, var) = bn_train(&cur, gamma, beta);
                        bn_updates.push(BnUpdate {
                            layer: i,
                            running_mean: running_mean * BN_MOMENTUM + &(mean * (1.0 - BN_MOMENTUM)),
                            running_var: running_var * BN_MOMENTUM + &(var * (1.0 - BN_MOMENTUM)),
                        });
                        caches.push(Cache::BatchNorm { xhat, inv_std });
                        cur = y;
                    } else {
                        cur = bn_eval(&cur, gamma, beta, running_mean, running_var);
                    }
                }
                (LayerSpec::Dropout { rate }, _) => {
                    if train && *rate > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("dropout/{i}")));
                        let keep = 1.0 / (1.0 - rate);
                        let mask = Array3::from_shape_fn(cur.raw_dim(), |_| {
                            if rng.random::<f64>() < *rate {
                                0.0
                            } else {
                                keep
                            }
                        });
                        cur = &cur * &mask;
                        caches.push(Cache::Dropout { mask: Some(mask) });
                    } else if train {
                        caches.push(Cache::Dropout { mask: None });
                    }
                }
                (LayerSpec::Flatten, _) => {
                    let (bsz, ch, len) = in_shape;
                    cur = cur
                        .into_shape_with_order((bsz, ch * len, 1))
                        .map_err(|e| ModelError::Shape(e.to_string()))?;
                    if train {
                        caches.push(Cache::Flatten { in_shape });
                    }
                }
                (LayerSpec::Dense { activation, .. }, LayerState::Dense { w, b }) => {
                    let input = cur.index_axis(Axis(2), 0).to_owned();
                    let mut out = input.dot(w) + b;
                    let is_last = i + 1 == n_layers;
                    match activation {
                        Activation::Relu => out.mapv_inplace(|v| v.max(0.0)),
                        Activation::Linear => {}
                        Activation::Softmax => {}
                    }
                    if is_last {
                        logits = Some(out.clone());
                    }
                    if train {
                        caches.push(Cache::Dense {
                            input,
                            out: out.clone(),
                        });
                    }
                    let units = out.ncols();
                    cur = out
                        .into_shape_with_order((batch, units, 1))
                        .map_err(|e| ModelError::Shape(e.to_string()))?;
                }
                _ => return Err(ModelError::Format(format!("layer {i} state does not match its spec"))),
            }
        }
        let logits = logits.ok_or_else(|| ModelError::Shape("network has no output layer".into()))?;
        Ok(ForwardPass {
            probs: softmax(&logits),
            logits,
            bn_updates,
            caches,
        })
    }

    /// Class probabilities in eval mode, in chunks to bound memory.
    pub fn predict(&self, x: &Tensor) -> Result<Array2<f64>, ModelError> {
        const CHUNK: usize = 64;
        let n = x.dim().0;
        let mut out = Array2::zeros((n, N_CLASSES));
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let part = x.slice(s![start..end, .., ..]).to_owned();
            let pass = self.forward(&part, Mode::Eval, 0)?;
            out.slice_mut(s![start..end, ..]).assign(&pass.probs);
            start = end;
        }
        Ok(out)
    }

    /// Cross-entropy loss and parameter gradients of a train-mode pass.
    pub fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> Result<(f64, Gradients), ModelError> {
        let batch = pass.probs.nrows();
        if labels.len() != batch {
            return Err(ModelError::Shape(format!("{batch} outputs but {} labels", labels.len())));
        }
        if pass.caches.len() != self.layers.len() {
            return Err(ModelError::Shape("backward needs a train-mode forward pass".into()));
        }
        let loss = cross_entropy(&pass.logits, labels);
        let mut d = pass.probs.clone();
        for (i, &c) in labels.iter().enumerate() {
            d[[i, c]] -= 1.0;
        }
        d.mapv_inplace(|v| v / batch as f64);
        let mut grad: Tensor = d
            .into_shape_with_order((batch, N_CLASSES, 1))
            .map_err(|e| ModelError::Shape(e.to_string()))?;

        let mut grads: Gradients = self.layers.iter().map(LayerState::zeros_like).collect();
        for i in (0..self.layers.len()).rev() {
            let spec = &self.spec.layers[i];
            grad = match (&pass.caches[i], spec, &self.layers[i]) {
                (
                    Cache::Conv { cols, out, in_shape },
                    LayerSpec::Conv1d {
                        kernel_size,
                        activation,
                        padding,
                        ..
                    },
                    LayerState::Conv1d { w, .. },
                ) => {
                    let mut dout = grad;
                    if *activation == Activation::Relu {
                        dout.zip_mut_with(out, |g, &o| {
                            if o <= 0.0 {
                                *g = 0.0;
                            }
                        });
                    }
                    let (dx, dw, db) = conv_backward(&dout, cols, w, *in_shape, *kernel_size, *padding);
                    grads[i] = LayerState::Conv1d { w: dw, b: db };
                    dx
                }
                (Cache::BatchNorm { xhat, inv_std }, _, LayerState::BatchNorm { gamma, .. }) => {
                    let (dx, dgamma, dbeta) = bn_backward(&grad, xhat, inv_std, gamma);
                    let n = gamma.len();
                    grads[i] = LayerState::BatchNorm {
                        gamma: dgamma,
                        beta: dbeta,
                        running_mean: Array1::zeros(n),
                        running_var: Array1::zeros(n),
                    };
                    dx
                }
                (Cache::Dropout { mask }, _, _) => match mask {
                    Some(m) => &grad * m,
                    None => grad,
                },
                (Cache::Flatten { in_shape }, _, _) => grad
                    .into_shape_with_order(*in_shape)
                    .map_err(|e| ModelError::Shape(e.to_string()))?,
                (Cache::Dense { input, out }, LayerSpec::Dense { activation, .. }, LayerState::Dense { w, .. }) => {
                    let mut dout = grad.index_axis(Axis(2), 0).to_owned();
                    if *activation == Activation::Relu {
                        dout.zip_mut_with(out, |g, &o| {
                            if o <= 0.0 {
                                *g = 0.0;
                            }
                        });
                    }
                    let dw = input.t().dot(&dout);
                    let db = dout.sum_axis(Axis(0));
                    let dx = dout.dot(&w.t());
                    grads[i] = LayerState::Dense { w: dw, b: db };
                    let f = dx.ncols();
                    dx.into_shape_with_order((batch, f, 1))
                        .map_err(|e| ModelError::Shape(e.to_string()))?
                }
                _ => return Err(ModelError::Format(format!("layer {i} cache does not match its spec"))),
            };
        }
        Ok((loss, grads))
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<BnUpdate>) {
        for u in updates {
            if let LayerState::BatchNorm {
                running_mean,
                running_var,
                ..
            } = &mut self.layers[u.layer]
            {
                *running_mean = u.running_mean;
                *running_var = u.running_var;
            }
        }
    }
}

fn conv_forward(
    x: &Tensor,
    w: &Array3<f64>,
    b: &Array1<f64>,
    kernel: usize,
    padding: ConvPadding,
    activation: Activation,
) -> (Array2<f64>, Tensor) {
    let (batch, ch, len) = x.dim();
    let filters = w.dim().0;
    let left = pad_left(kernel, padding);
    let out_len = match padding {
        ConvPadding::Same => len,
        ConvPadding::Valid => len - kernel + 1,
    };
    let mut cols = Array2::zeros((ch * kernel, batch * out_len));
    for bi in 0..batch {
        for c in 0..ch {
            for j in 0..kernel {
                let mut row = cols.row_mut(c * kernel + j);
                for t in 0..out_len {
                    let src = t + j;
                    if src >= left && src - left < len {
                        row[bi * out_len + t] = x[[bi, c, src - left]];
                    }
                }
            }
        }
    }
    let w_mat = w.view().into_shape_with_order((filters, ch * kernel)).expect("contiguous weights");
    let y = w_mat.dot(&cols);
    let mut out = Array3::zeros((batch, filters, out_len));
    for bi in 0..batch {
        for f in 0..filters {
            for t in 0..out_len {
                let mut v = y[[f, bi * out_len + t]] + b[f];
                if activation == Activation::Relu {
                    v = v.max(0.0);
                }
                out[[bi, f, t]] = v;
            }
        }
    }
    (cols, out)
}

fn conv_backward(
    dout: &Tensor,
    cols: &Array2<f64>,
    w: &Array3<f64>,
    in_shape: (usize, usize, usize),
    kernel: usize,
    padding: ConvPadding,
) -> (Tensor, Array3<f64>, Array1<f64>) {
    let (batch, filters, out_len) = dout.dim();
    let (_, ch, len) = in_shape;
    let left = pad_left(kernel, padding);
    let mut dy = Array2::zeros((filters, batch * out_len));
    for bi in 0..batch {
        for f in 0..filters {
            for t in 0..out_len {
                dy[[f, bi * out_len + t]] = dout[[bi, f, t]];
            }
        }
    }
    let dw_mat = dy.dot(&cols.t());
    let db = dy.sum_axis(Axis(1));
    let w_mat = w.view().into_shape_with_order((filters, ch * kernel)).expect("contiguous weights");
    let dcols = w_mat.t().dot(&dy);
    let mut dx = Array3::zeros(in_shape);
    for bi in 0..batch {
        for c in 0..ch {
            for j in 0..kernel {
                let row = dcols.row(c * kernel + j);
                for t in 0..out_len {
                    let src = t + j;
                    if src >= left && src - left < len {
                        dx[[bi, c, src - left]] += row[bi * out_len + t];
                    }
                }
            }
        }
    }
    let dw = dw_mat
        .into_shape_with_order((filters, ch, kernel))
        .expect("matching sizes");
    (dx, dw, db)
}

type BnTrainOut = (Tensor, Tensor, Array1<f64>, Array1<f64>, Array1<f64>);

fn bn_train(x: &Tensor, gamma: &Array1<f64>, beta: &Array1<f64>) -> BnTrainOut {
    let (batch, ch, len) = x.dim();
    let n = (batch * len) as f64;
    let mut mean = Array1::zeros(ch);
    let mut var = Array1::zeros(ch);
    for c in 0..ch {
        let lane = x.slice(s![.., c, ..]);
        let m = lane.sum() / n;
        mean[c] = m;
        var[c] = lane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    }
    let inv_std = var.mapv(|v: f64| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = x.clone();
    let mut y = x.clone();
    for bi in 0..batch {
        for c in 0..ch {
            for t in 0..len {
                let h = (x[[bi, c, t]] - mean[c]) * inv_std[c];
                xhat[[bi, c, t]] = h;
                y[[bi, c, t]] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, inv_std, mean, var)
}

fn bn_eval(x: &Tensor, gamma: &Array1<f64>, beta: &Array1<f64>, rm: &Array1<f64>, rv: &Array1<f64>) -> Tensor {
    let mut y = x.clone();
    for ((_, c, _), v) in y.indexed_iter_mut() {
        *v = gamma[c] * (*v - rm[c]) / (rv[c] + BN_EPS).sqrt() + beta[c];
    }
    y
}

fn bn_backward(dy: &Tensor, xhat: &Tensor, inv_std: &Array1<f64>, gamma: &Array1<f64>) -> (Tensor, Array1<f64>, Array1<f64>) {
    let (batch, ch, len) = dy.dim();
    let n = (batch * len) as f64;
    let mut dgamma = Array1::zeros(ch);
    let mut dbeta = Array1::zeros(ch);
    let mut dx = Array3::zeros(dy.raw_dim());
    for c in 0..ch {
        let g = dy.slice(s![.., c, ..]);
        let h = xhat.slice(s![.., c, ..]);
        let sum_dy: f64 = g.sum();
        let sum_dy_h: f64 = g.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
        dgamma[c] = sum_dy_h;
        dbeta[c] = sum_dy;
        // dxhat = dy * gamma
        let k = gamma[c] * inv_std[c] / n;
        for bi in 0..batch {
            for t in 0..len {
                dx[[bi, c, t]] = k * (n * dy[[bi, c, t]] - sum_dy - xhat[[bi, c, t]] * sum_dy_h);
            }
        }
    }
    (dx, dgamma, dbeta)
}
