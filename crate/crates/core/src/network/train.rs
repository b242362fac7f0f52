use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EventBatch, HybridNetwork, NetworkParams, IGNORE_INDEX};
use crate::dataset::PreparedSample;
use crate::error::{Error, Result};
use crate::spiking::SpikeMode;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub poly_power: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub ignore_index: usize,
    /// Random horizontal flips of frame, events and labels.
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            weight_decay: 1e-4,
            iterations: 2000,
            warmup: 50,
            poly_power: 0.9,
            batch_size: 4,
            seed: 0,
            ignore_index: IGNORE_INDEX,
            hflip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup > self.iterations {
            return Err(Error::InvalidArgument(format!(
                "warmup {} exceeds total iterations {}",
                self.warmup, self.iterations
            )));
        }
        if self.batch_size == 0 || !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "batch size must be positive, learning rate and weight decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at 1-based iteration `iter`: linear warmup to `lr`, then
/// `lr * (1 - iter / total)^power`.
pub fn lr_at(cfg: &TrainConfig, iter: usize) -> f64 {
    if iter <= cfg.warmup && cfg.warmup > 0 {
        return cfg.lr * iter as f64 / cfg.warmup as f64;
    }
    let frac = (iter as f64 / cfg.iterations.max(1) as f64).min(1.0);
    cfg.lr * (1.0 - frac).powf(cfg.poly_power)
}

/// Adam with decoupled weight decay. Moment buffers follow the parameter
/// declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &NetworkParams<Tensor>) -> Self {
        let zeros: Vec<Tensor> = params.leaves().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Weight decay applies to tensors with two or more axes
    /// (weights), not to biases or normalization parameters.
    pub fn update(&mut self, params: &mut NetworkParams<Tensor>, grads: &[Tensor], lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.for_each_mut(&mut |p| {
            let decay = if p.ndim() >= 2 { weight_decay } else { 0.0 };
            let g = grads[i].data();
            let m = ms[i].data_mut();
            let v = vs[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + eps) + decay * *w);
            }
            i += 1;
        });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Loss of every iteration.
    pub losses: Vec<f64>,
}

/// Fixed visiting order: one seeded shuffle, then cyclic batches.
fn batch_indices(n: usize, cfg: &TrainConfig, iter: usize, order: &[usize]) -> Vec<usize> {
    (0..cfg.batch_size)
        .map(|j| order[(iter * cfg.batch_size + j) % n])
        .collect()
}

/// Trains in place. `on_iter(iteration, loss)` is called after every update.
pub fn train(
    net: &mut HybridNetwork,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    opt: &mut AdamW,
    on_iter: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let cached: Vec<EventBatch> = data
        .iter()
        .map(|s| net.prepare_events(std::slice::from_ref(&s.voxel), s.height(), s.width()))
        .collect::<Result<_>>()?;
    let mut losses = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let idx = batch_indices(data.len(), cfg, iter, &order);
        let flips: Vec<bool> = idx.iter().map(|_| cfg.hflip && rng.gen_bool(0.5)).collect();
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        let mut events = Vec::with_capacity(idx.len());
        for (&i, &flip) in idx.iter().zip(&flips) {
            let s = if flip { data[i].hflip() } else { data[i].clone() };
            frames.extend_from_slice(s.frame.data());
            labels.extend_from_slice(&s.labels);
            events.push(if flip {
                net.prepare_events(std::slice::from_ref(&s.voxel), s.height(), s.width())?
            } else {
                cached[i].clone()
            });
        }
        let first = &data[idx[0]];
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(first.frame.shape());
        let frames = Tensor::new(shape, frames)?;
        let events = EventBatch::concat(&events)?;

        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let f = tape.constant(frames);
        let (logits, _) = net.forward_on(&mut tape, &p, f, &events, SpikeMode::Heaviside)?;
        let loss = tape.cross_entropy(logits, &labels, cfg.ignore_index)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {}", iter + 1)));
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = p
            .leaves()
            .into_iter()
            .zip(net.params.leaves())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {bad} at iteration {}",
                iter + 1
            )));
        }
        opt.update(&mut net.params, &grads, lr_at(cfg, iter + 1), cfg.weight_decay);
        losses.push(value);
        on_iter(iter + 1, value);
    }
    Ok(TrainOutcome { losses })
}
