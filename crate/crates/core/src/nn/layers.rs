use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;

use super::{device, CandleResult, Init, ParamStore};

/// Softmax built from differentiable primitives.
pub fn softmax(x: &Tensor) -> CandleResult<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)
}

pub fn log_softmax(x: &Tensor) -> CandleResult<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    shifted.broadcast_sub(&lse)
}

/// Mean over dim 1 of `(B, L, E)` values weighted by a `(B, L)` 0/1 mask.
pub fn masked_mean(values: &Tensor, mask: &Tensor) -> CandleResult<Tensor> {
    let m = mask.unsqueeze(2)?;
    let sum = values.broadcast_mul(&m)?.sum(1)?;
    let count = mask.sum_keepdim(1)?.clamp(1.0, f64::MAX)?;
    sum.broadcast_div(&count)
}

/// Additive attention bias `(B, 1, 1, L)`: 0 on real keys, -1e9 on padding.
pub fn attention_bias(mask: &Tensor) -> CandleResult<Tensor> {
    let (b, l) = mask.dims2()?;
    ((mask - 1.0)? * 1e9)?.reshape((b, 1, 1, l))
}

/// Additive causal bias `(1, 1, L, L)`.
pub fn causal_bias(len: usize) -> CandleResult<Tensor> {
    let data: Vec<f32> = (0..len)
        .flat_map(|i| (0..len).map(move |j| if j <= i { 0.0 } else { -1e9 }))
        .collect();
    Tensor::from_vec(data, (1, 1, len, len), &device())
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut ChaCha8Rng) -> CandleResult<Self> {
        let weight = store.get_or_init(&format!("{name}.weight"), &[output, input], Init::Xavier, rng)?;
        let bias = if bias { Some(store.get_or_init(&format!("{name}.bias"), &[output], Init::Zeros, rng)?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> CandleResult<Tensor> {
        let w = self.weight.t()?;
        let y = match x.dims() {
            [b, l, k] => x.reshape((b * l, *k))?.matmul(&w)?.reshape((*b, *l, ()))?,
            _ => x.matmul(&w)?,
        };
        match &self.bias {
            Some(b) => y.broadcast_add(b),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> CandleResult<Self> {
        Ok(Self {
            weight: store.get_or_init(&format!("{name}.weight"), &[dim], Init::Ones, rng)?,
            bias: store.get_or_init(&format!("{name}.bias"), &[dim], Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> CandleResult<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + Self::EPS)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> CandleResult<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> CandleResult<Tensor> {
        self.down.forward(&self.up.forward(x)?.relu()?)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    head_dim: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> CandleResult<Self> {
        if heads == 0 || dim % heads != 0 {
            candle_core::bail!("model dim {dim} is not divisible by {heads} heads");
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng)?,
            heads,
            head_dim: dim / heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> CandleResult<Tensor> {
        let (b, l, _) = x.dims3()?;
        x.reshape((b, l, self.heads, self.head_dim))?.transpose(1, 2)?.contiguous()
    }

    /// Projects keys and values once so repeated queries against the same
    /// memory can reuse them.
    pub fn project_kv(&self, kv: &Tensor) -> CandleResult<(Tensor, Tensor)> {
        Ok((self.split_heads(&self.k.forward(kv)?)?, self.split_heads(&self.v.forward(kv)?)?))
    }

    pub fn forward(&self, query: &Tensor, kv: &Tensor, bias: &[&Tensor]) -> CandleResult<Tensor> {
        let (k, v) = self.project_kv(kv)?;
        self.forward_projected(query, &k, &v, bias)
    }

    /// `k`/`v` are `(Bk, H, Lk, Dh)` with `Bk` equal to the query batch or 1.
    pub fn forward_projected(&self, query: &Tensor, k: &Tensor, v: &Tensor, bias: &[&Tensor]) -> CandleResult<Tensor> {
        let (b, lq, dim) = query.dims3()?;
        let q = self.split_heads(&self.q.forward(query)?)?;
        let (k, v) = if k.dim(0)? != b {
            let (_, h, lk, dh) = k.dims4()?;
            (k.broadcast_as((b, h, lk, dh))?.contiguous()?, v.broadcast_as((b, h, lk, dh))?.contiguous()?)
        } else {
            (k.clone(), v.clone())
        };
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        for b in bias {
            scores = scores.broadcast_add(b)?;
        }
        let attn = softmax(&scores)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, lq, dim))?;
        self.out.forward(&ctx)
    }
}

/// Sinusoidal position table `(len, dim)`.
pub fn positional_encoding(len: usize, dim: usize) -> CandleResult<Tensor> {
    let mut data = vec![0f32; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    Tensor::from_vec(data, (len, dim), &device())?.to_dtype(DType::F32)
}
