//! Minimal neural-network plumbing on top of candle: a seeded parameter
//! store, differentiable layers, a model file container, and an AdamW
//! optimizer with gradient clipping.
//!
//! All parameters are created from a ChaCha stream, so a model is a pure
//! function of its config, its seed and its training data.

mod container;
mod layers;

pub use container::{load_model, model_bytes, save_model, ContainerError, ModelHeader, FORMAT_VERSION};
pub use layers::{
    attention_bias, causal_bias, log_softmax, masked_mean, positional_encoding, softmax, Attention, FeedForward, LayerNorm,
    Linear,
};

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type CandleResult<T> = candle_core::Result<T>;

pub fn device() -> Device {
    Device::Cpu
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Glorot uniform over the last two dimensions.
    Xavier,
}

/// Named parameters in a stable (sorted) order.
#[derive(Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the named parameter, creating it if absent. An existing
    /// parameter must have the requested shape.
    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> CandleResult<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                candle_core::bail!("parameter {name} has shape {:?}, expected {:?}", v.dims(), shape);
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| d.sample(rng) as f32).collect()
            }
            Init::Xavier => {
                let (fan_out, fan_in) = match shape {
                    [.., o, i] => (*o, *i),
                    [o] => (*o, 1),
                    [] => (1, 1),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &device())?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn insert(&mut self, name: &str, tensor: &Tensor) -> CandleResult<()> {
        self.vars.insert(name.to_string(), Var::from_tensor(&tensor.to_dtype(DType::F32)?)?);
        Ok(())
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Global L2 norm cap on gradients; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub warmup_steps: usize,
}

/// Moments below this magnitude are flushed to zero. Embedding rows that
/// receive no gradient decay geometrically and would otherwise sink into
/// subnormal floats, which are very slow on common CPUs.
const MOMENT_FLOOR: f32 = 1e-30;

struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// AdamW (decoupled weight decay) with optional gradient clipping and
/// linear warmup. The update runs on host vectors.
pub struct Trainer {
    vars: Vec<Var>,
    moments: Vec<Moments>,
    config: OptimConfig,
    step: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.98;
const EPS: f64 = 1e-8;

impl Trainer {
    pub fn new(store: &ParamStore, config: OptimConfig) -> CandleResult<Self> {
        let vars = store.vars();
        let moments = vars.iter().map(|v| Moments { m: vec![0.0; v.elem_count()], v: vec![0.0; v.elem_count()] }).collect();
        Ok(Self { vars, moments, config, step: 0 })
    }

    /// One optimization step on a scalar loss; returns the loss value.
    pub fn step(&mut self, loss: &Tensor) -> CandleResult<f32> {
        let value = loss.to_scalar::<f32>()?;
        if !value.is_finite() {
            candle_core::bail!("non-finite loss {value} at step {}", self.step + 1);
        }
        let grads = loss.backward()?;
        let mut host: Vec<Option<Vec<f32>>> = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            host.push(match grads.get(v.as_tensor()) {
                Some(g) => Some(g.flatten_all()?.to_vec1::<f32>()?),
                None => None,
            });
        }
        let mut scale = 1.0f64;
        if let Some(max_norm) = self.config.clip_norm {
            let sq: f64 = host.iter().flatten().flat_map(|g| g.iter()).map(|&x| x as f64 * x as f64).sum();
            let norm = sq.sqrt();
            if norm > max_norm {
                scale = max_norm / (norm + 1e-6);
            }
        }
        self.step += 1;
        let mut lr = self.config.learning_rate;
        if self.config.warmup_steps > 0 {
            lr *= (self.step as f64 / self.config.warmup_steps as f64).min(1.0);
        }
        let t = self.step as i32;
        let (c1, c2) = (1.0 / (1.0 - BETA1.powi(t)), 1.0 / (1.0 - BETA2.powi(t)));
        let decay = (1.0 - lr * self.config.weight_decay) as f32;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        for ((var, grad), mom) in self.vars.iter().zip(&host).zip(&mut self.moments) {
            let Some(grad) = grad else { continue };
            let mut theta = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            for i in 0..theta.len() {
                let g = grad[i] * scale as f32;
                let mut m = mom.m[i] * b1 + g * (1.0 - b1);
                let mut v = mom.v[i] * b2 + g * g * (1.0 - b2);
                if m.abs() < MOMENT_FLOOR {
                    m = 0.0;
                }
                if v < MOMENT_FLOOR {
                    v = 0.0;
                }
                mom.m[i] = m;
                mom.v[i] = v;
                let update = (m as f64 * c1) / ((v as f64 * c2).sqrt() + EPS);
                theta[i] = theta[i] * decay - (lr * update) as f32;
            }
            var.set(&Tensor::from_vec(theta, var.shape(), &device())?)?;
        }
        Ok(value)
    }
}

/// Row-major padded id matrix and its 0/1 mask.
pub fn pad_batch(rows: &[&[u32]], pad_id: u32) -> CandleResult<(Tensor, Tensor)> {
    let len = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(1);
    let mut ids = Vec::with_capacity(rows.len() * len);
    let mut mask = Vec::with_capacity(rows.len() * len);
    for r in rows {
        for i in 0..len {
            match r.get(i) {
                Some(&id) => {
                    ids.push(id);
                    mask.push(1f32);
                }
                None => {
                    ids.push(pad_id);
                    mask.push(0f32);
                }
            }
        }
    }
    let dev = device();
    Ok((Tensor::from_vec(ids, (rows.len(), len), &dev)?, Tensor::from_vec(mask, (rows.len(), len), &dev)?))
}

/// Cheap check used by training loops for early-abort diagnostics.
pub fn all_finite(t: &Tensor) -> CandleResult<bool> {
    let v: Vec<f32> = t.flatten_all()?.to_vec1()?;
    Ok(v.iter().all(|x| x.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn store_is_seeded_and_shape_checked() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let ta = a.get_or_init("w", &[3, 4], Init::Xavier, &mut seed::rng(5)).unwrap();
        let tb = b.get_or_init("w", &[3, 4], Init::Xavier, &mut seed::rng(5)).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        assert!(a.get_or_init("w", &[4, 3], Init::Zeros, &mut seed::rng(0)).is_err());
        assert_eq!(a.num_parameters(), 12);
    }

    #[test]
    fn trainer_reduces_a_quadratic() {
        let mut store = ParamStore::new();
        let w = store.get_or_init("w", &[4], Init::Ones, &mut seed::rng(0)).unwrap();
        let mut trainer = Trainer::new(
            &store,
            OptimConfig { learning_rate: 0.1, weight_decay: 0.0, clip_norm: Some(1.0), warmup_steps: 0 },
        )
        .unwrap();
        let first = trainer.step(&w.sqr().unwrap().sum_all().unwrap()).unwrap();
        let mut last = first;
        for _ in 0..50 {
            last = trainer.step(&w.sqr().unwrap().sum_all().unwrap()).unwrap();
        }
        assert!(last < first * 0.1, "{first} -> {last}");
    }

    #[test]
    fn first_adamw_step_is_a_signed_step_after_decay() {
        let mut store = ParamStore::new();
        let w = store.get_or_init("w", &[4], Init::Ones, &mut seed::rng(0)).unwrap();
        let mut trainer =
            Trainer::new(&store, OptimConfig { learning_rate: 0.1, weight_decay: 0.5, clip_norm: None, warmup_steps: 0 }).unwrap();
        let c = Tensor::new(&[2f32, -3.0, 0.5, 0.0], &device()).unwrap();
        trainer.step(&(&w * &c).unwrap().sum_all().unwrap()).unwrap();
        let got = w.to_vec1::<f32>().unwrap();
        let decay = 1.0 - 0.1 * 0.5;
        for (g, want) in got.iter().zip([decay - 0.1, decay + 0.1, decay - 0.1, decay]) {
            assert!((g - want).abs() < 1e-6, "{got:?}");
        }
    }

    #[test]
    fn idle_moments_flush_to_zero() {
        let mut store = ParamStore::new();
        let w = store.get_or_init("w", &[2], Init::Ones, &mut seed::rng(0)).unwrap();
        let mut trainer =
            Trainer::new(&store, OptimConfig { learning_rate: 1e-3, weight_decay: 0.0, clip_norm: None, warmup_steps: 0 }).unwrap();
        trainer.step(&w.sum_all().unwrap()).unwrap();
        for _ in 0..1500 {
            trainer.step(&w.narrow(0, 0, 1).unwrap().sum_all().unwrap()).unwrap();
        }
        let mom = &trainer.moments[0];
        assert_eq!(mom.m[1], 0.0);
        assert!(mom.m.iter().chain(&mom.v).all(|x| *x == 0.0 || x.is_normal()));
    }

    #[test]
    fn pad_batch_masks_padding() {
        let (ids, mask) = pad_batch(&[&[5, 6, 7], &[8]], 0).unwrap();
        assert_eq!(ids.to_vec2::<u32>().unwrap(), vec![vec![5, 6, 7], vec![8, 0, 0]]);
        assert_eq!(mask.to_vec2::<f32>().unwrap(), vec![vec![1.0, 1.0, 1.0], vec![1.0, 0.0, 0.0]]);
    }
}
