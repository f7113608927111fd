//! Mini-batch training: SGD, Adam and AdamW with linear warmup and
//! gradient accumulation.

use ndarray::{Axis, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ser_core::derive_seed;

use super::network::{Gradients, Mode, Network};
use super::Tensor;
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Weight decay is added to the gradient (L2).
    Adam,
    /// Weight decay is applied to the weights directly, outside the
    /// adaptive update.
    Adamw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accumulation_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::cnn()
    }
}

impl TrainConfig {
    /// Adam, lr 1e-3, batch 32, 10 epochs.
    pub fn cnn() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            warmup_steps: 0,
            epochs: 10,
            batch_size: 32,
            grad_accumulation_steps: 1,
            seed: 0,
        }
    }

    /// Fine-tuning settings for embedding heads: AdamW, lr 5e-5, weight
    /// decay 0.01, 500 warmup steps, batch 4 with 4 accumulation steps,
    /// 6 epochs.
    pub fn embedding_head() -> Self {
        Self {
            optimizer: Optimizer::Adamw,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            warmup_steps: 500,
            epochs: 6,
            batch_size: 4,
            grad_accumulation_steps: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Parameter("learning_rate must be finite and non-negative".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(ModelError::Parameter("weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accumulation_steps == 0 {
            return Err(ModelError::Parameter(
                "epochs, batch_size and grad_accumulation_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` (0-based).
    pub fn rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub optimizer_steps: usize,
}

struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    fn new(net: &Network) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| l.trainable().into_iter().map(|(s, _)| s.len()))
            .collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut slot = 0;
        for (layer, grad) in net.layers.iter_mut().zip(grads) {
            let g_tensors = grad.trainable();
            for ((p, is_weight), (g, _)) in layer.trainable_mut().into_iter().zip(g_tensors) {
                let decay = if is_weight { cfg.weight_decay } else { 0.0 };
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for k in 0..p.len() {
                    match cfg.optimizer {
                        Optimizer::Sgd => {
                            p[k] -= lr * (g[k] + decay * p[k]);
                        }
                        Optimizer::Adam => {
                            let gk = g[k] + decay * p[k];
                            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                            p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + ADAM_EPS);
                        }
                        Optimizer::Adamw => {
                            let gk = g[k];
                            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                            p[k] -= lr * ((m[k] / bc1) / ((v[k] / bc2).sqrt() + ADAM_EPS) + decay * p[k]);
                        }
                    }
                }
                slot += 1;
            }
        }
    }
}

fn add_into(acc: &mut Gradients, g: &Gradients) {
    for (a, b) in acc.iter_mut().zip(g) {
        let src = b.trainable();
        for ((dst, _), (s, _)) in a.trainable_mut().into_iter().zip(src) {
            for (x, y) in dst.iter_mut().zip(s) {
                *x += y;
            }
        }
    }
}

fn scale(acc: &mut Gradients, k: f64) {
    for a in acc.iter_mut() {
        for (dst, _) in a.trainable_mut() {
            for x in dst.iter_mut() {
                *x *= k;
            }
        }
    }
}

/// Trains `net` in place on `x` (`(n, channels, length)`) with labels `y`.
/// Single-threaded and bit-reproducible for a given config and data order.
pub fn train(net: &mut Network, x: &Tensor, y: &[usize], cfg: &TrainConfig) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    let n = x.dim().0;
    if n == 0 || y.len() != n {
        return Err(ModelError::Shape(format!("{n} samples but {} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= crate::N_CLASSES) {
        return Err(ModelError::Data(format!("label code {bad} outside 0..7")));
    }
    let mut opt = OptimizerState::new(net);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut micro_step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}"))));
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut epoch_loss = 0.0;
        let mut acc: Option<Gradients> = None;
        let mut acc_count = 0usize;
        for (bi, idx) in batches.iter().enumerate() {
            let xb: Array3<f64> = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let pass = net.forward(&xb, Mode::Train, derive_seed(cfg.seed, &format!("step/{micro_step}")))?;
            let (loss, grads) = net.backward(&pass, &yb)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { step: micro_step, loss });
            }
            net.apply_bn_updates(pass.bn_updates);
            epoch_loss += loss;
            micro_step += 1;
            match acc.as_mut() {
                Some(a) => add_into(a, &grads),
                None => acc = Some(grads),
            }
            acc_count += 1;
            if acc_count == cfg.grad_accumulation_steps || bi + 1 == batches.len() {
                let mut g = acc.take().expect("accumulated gradients");
                scale(&mut g, 1.0 / acc_count as f64);
                let lr = cfg.rate_at(opt.t);
                opt.step(net, &g, cfg, lr);
                acc_count = 0;
            }
        }
        let mean = epoch_loss / batches.len() as f64;
        if !mean.is_finite() {
            return Err(ModelError::Diverged { step: micro_step, loss: mean });
        }
        loss_trace.push(mean);
    }
    if net.layers.iter().any(|l| l.trainable().iter().any(|(s, _)| s.iter().any(|v| !v.is_finite()))) {
        return Err(ModelError::Diverged {
            step: micro_step,
            loss: f64::NAN,
        });
    }
    Ok(TrainReport {
        loss_trace,
        optimizer_steps: opt.t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_mlp;
    use rand::Rng;

    fn separable(n: usize) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = Array3::zeros((n, 2, 1));
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            x[[i, 0, 0]] = sign * rng.random_range(0.5..1.5);
            x[[i, 1, 0]] = rng.random_range(-1.0..1.0);
            y.push(c * 5);
        }
        (x, y)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (x, y) = separable(12);
        for optimizer in [Optimizer::Sgd, Optimizer::Adam, Optimizer::Adamw] {
            let mut net = Network::init(build_mlp(2, &[4]).unwrap(), 1).unwrap();
            let before = net.layers.clone();
            let cfg = TrainConfig {
                optimizer,
                learning_rate: 0.0,
                weight_decay: 0.1,
                epochs: 3,
                batch_size: 4,
                ..TrainConfig::cnn()
            };
            train(&mut net, &x, &y, &cfg).unwrap();
            assert_eq!(net.layers, before);
        }
    }

    #[test]
    fn mlp_learns_separable_set() {
        let (x, y) = separable(40);
        let mut net = Network::init(build_mlp(2, &[16]).unwrap(), 3).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 40,
            ..TrainConfig::cnn()
        };
        let report = train(&mut net, &x, &y, &cfg).unwrap();
        assert!(report.loss_trace[..5].windows(2).all(|w| w[1] < w[0]), "{:?}", report.loss_trace);
        let p = net.predict(&x).unwrap();
        for (i, &c) in y.iter().enumerate() {
            assert_eq!(crate::argmax(&p.row(i).to_vec()), c);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (x, y) = separable(20);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            grad_accumulation_steps: 2,
            warmup_steps: 3,
            optimizer: Optimizer::Adamw,
            weight_decay: 0.01,
            learning_rate: 0.01,
            seed: 4,
        };
        let mut spec = build_mlp(2, &[8]).unwrap();
        spec.layers.insert(1, crate::nn::LayerSpec::Dropout { rate: 0.3 });
        let mut a = Network::init(spec.clone(), 2).unwrap();
        let mut b = Network::init(spec, 2).unwrap();
        let ra = train(&mut a, &x, &y, &cfg).unwrap();
        let rb = train(&mut b, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        // 7 batches per epoch, steps after every 2 and at epoch end
        assert_eq!(ra.optimizer_steps, 8);
    }

    #[test]
    fn warmup_schedule_and_head_preset() {
        let cfg = TrainConfig::embedding_head();
        assert_eq!(cfg.optimizer, Optimizer::Adamw);
        assert_eq!((cfg.learning_rate, cfg.weight_decay), (5e-5, 0.01));
        assert_eq!((cfg.warmup_steps, cfg.batch_size, cfg.grad_accumulation_steps, cfg.epochs), (500, 4, 4, 6));
        assert!((cfg.rate_at(0) - 5e-5 / 500.0).abs() < 1e-20);
        assert_eq!(cfg.rate_at(499), 5e-5);
        assert_eq!(cfg.rate_at(10_000), 5e-5);
    }

    #[test]
    fn divergence_is_reported() {
        let (mut x, y) = separable(8);
        x[[0, 0, 0]] = f64::NAN;
        let mut net = Network::init(build_mlp(2, &[4]).unwrap(), 1).unwrap();
        let err = train(&mut net, &x, &y, &TrainConfig::cnn()).unwrap_err();
        assert!(matches!(err, ModelError::Diverged { .. }));
    }
}
