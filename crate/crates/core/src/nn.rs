//! Transformer building blocks recorded on a [`Tape`].

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Registers a `[rows × cols]` weight drawn uniformly from `±1/√fan_in`.
pub fn uniform_param<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: String,
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Result<ParamId> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    store.insert(name, Tensor::uniform(shape, bound, rng))
}

/// `y = x·W + b` with `W: [in × out]`; the bias is optional.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Linear::scaled(store, name, inp, out, 1.0, rng)
    }

    /// Like [`Linear::new`] with the weight bound multiplied by `scale`.
    pub fn scaled<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lin = Linear::without_bias(store, name, inp, out, scale, rng)?;
        lin.bias = Some(store.insert(format!("{name}.b"), Tensor::zeros(&[1, out]))?);
        Ok(lin)
    }

    /// `y = x·W` with the weight bound multiplied by `scale`.
    pub fn without_bias<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = scale / (inp.max(1) as f64).sqrt();
        Ok(Linear {
            weight: store.insert(format!("{name}.w"), Tensor::uniform(&[inp, out], bound, rng))?,
            bias: None,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.insert(format!("{name}.g"), Tensor::ones(&[1, d]))?,
            bias: store.insert(format!("{name}.b"), Tensor::zeros(&[1, d]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Position-wise `gelu(x·W₁ + b₁)·W₂ + b₂`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        hidden: usize,
        out_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, rng)?,
            down: Linear::scaled(store, &format!("{name}.down"), hidden, d, out_scale, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.up.params(), self.down.params()].concat()
    }
}

pub struct AttentionOutput {
    pub out: Var,
    /// Per-head `[queries × keys]` attention weights.
    pub weights: Vec<Var>,
}

/// Scaled dot-product multi-head attention. Queries come from one sequence,
/// keys and values from another (the same one for self-attention).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        out_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(MultiHeadAttention {
            heads,
            query: Linear::new(store, &format!("{name}.q"), d, d, rng)?,
            // A key bias shifts every logit of a query equally, so softmax ignores it.
            key: Linear::without_bias(store, &format!("{name}.k"), d, d, 1.0, rng)?,
            value: Linear::new(store, &format!("{name}.v"), d, d, rng)?,
            output: Linear::scaled(store, &format!("{name}.o"), d, d, out_scale, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        queries: Var,
        keys: Var,
        key_mask: &[bool],
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, keys)?;
        let v = self.value.forward(tape, store, keys)?;
        let d = tape.value(q).cols();
        let dh = d / self.heads;
        let scale = T::one() / T::c(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.matmul_t(qh, kh)?;
            let s = tape.scale(s, scale);
            let a = tape.softmax_masked(s, key_mask)?;
            outs.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        Ok(AttentionOutput {
            out: self.output.forward(tape, store, cat)?,
            weights,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            self.query.params(),
            self.key.params(),
            self.value.params(),
            self.output.params(),
        ]
        .concat()
    }
}
