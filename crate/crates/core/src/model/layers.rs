//! Transformer building blocks over `[tokens × d_model]` matrices.

use rand::Rng;

use super::params::{Ctx, ParamId, ParamStore};
use crate::numcore::{Element, NumError, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, frozen: bool, rng: &mut R) -> Self {
        let w = store.add_weight(format!("{name}.w"), fan_in, fan_out, frozen, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]), frozen);
        Self { w, b }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var, NumError> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        let y = ctx.tape.matmul(x, w)?;
        ctx.tape.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, d: usize, eps: f64, frozen: bool) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[d], T::ONE), frozen);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]), frozen);
        Self { gain, bias, eps }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var, NumError> {
        let (g, b) = (ctx.p(self.gain), ctx.p(self.bias));
        ctx.tape.layernorm(x, g, b, self.eps)
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, name: &str, d_in: usize, hidden: usize, d_out: usize, frozen: bool, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, frozen, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, frozen, rng),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var, NumError> {
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.tape.gelu(h)?;
        self.fc2.forward(ctx, h)
    }
}

/// `[groups·len × d] → [groups·heads × len × head_dim]`.
fn split_heads<T: Element>(ctx: &mut Ctx<'_, T>, x: Var, groups: usize, len: usize, heads: usize) -> Result<Var, NumError> {
    let d = ctx.tape.shape(x)[1];
    let dh = d / heads;
    let x = ctx.tape.reshape(x, &[groups, len, heads, dh])?;
    let x = ctx.tape.permute(x, &[0, 2, 1, 3])?;
    ctx.tape.reshape(x, &[groups * heads, len, dh])
}

/// Inverse of [`split_heads`].
fn merge_heads<T: Element>(ctx: &mut Ctx<'_, T>, x: Var, groups: usize, heads: usize) -> Result<Var, NumError> {
    let s = ctx.tape.shape(x).to_vec();
    let (len, dh) = (s[1], s[2]);
    let x = ctx.tape.reshape(x, &[groups, heads, len, dh])?;
    let x = ctx.tape.permute(x, &[0, 2, 1, 3])?;
    ctx.tape.reshape(x, &[groups * len, heads * dh])
}

/// Scaled dot-product attention on head-split tensors. Returns the attended
/// values and the row-stochastic weight tensor.
fn attend<T: Element>(ctx: &mut Ctx<'_, T>, q: Var, k: Var, v: Var) -> Result<(Var, Var), NumError> {
    let dh = ctx.tape.shape(q)[2];
    let scores = ctx.tape.bmm(q, k, true)?;
    let scores = ctx.tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let weights = ctx.tape.softmax(scores, 2)?;
    let out = ctx.tape.bmm(weights, v, false)?;
    Ok((out, weights))
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, frozen: bool, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, frozen, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, frozen, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, frozen, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, frozen, rng),
            heads,
        }
    }

    /// Self-attention within each of `groups` sequences of equal length,
    /// stacked as `[groups·len × d]`.
    pub fn self_attend<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var, groups: usize) -> Result<(Var, Var), NumError> {
        let len = ctx.tape.shape(x)[0] / groups;
        let q = self.q.forward(ctx, x)?;
        let k = self.k.forward(ctx, x)?;
        let v = self.v.forward(ctx, x)?;
        let q = split_heads(ctx, q, groups, len, self.heads)?;
        let k = split_heads(ctx, k, groups, len, self.heads)?;
        let v = split_heads(ctx, v, groups, len, self.heads)?;
        let (out, weights) = attend(ctx, q, k, v)?;
        let out = merge_heads(ctx, out, groups, self.heads)?;
        Ok((self.o.forward(ctx, out)?, weights))
    }

    /// Queries `x` (`[groups·len × d]`) against per-group memories stacked as
    /// `[Σ counts × d]`. Returns the output and one weight tensor per group
    /// (a single shared tensor when all memories have equal length).
    pub fn cross_attend<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var, groups: usize, memory: Var, counts: &[usize]) -> Result<(Var, Vec<Var>), NumError> {
        let len = ctx.tape.shape(x)[0] / groups;
        let h = self.heads;
        let q = self.q.forward(ctx, x)?;
        let k = self.k.forward(ctx, memory)?;
        let v = self.v.forward(ctx, memory)?;
        let q = split_heads(ctx, q, groups, len, h)?;
        let m0 = counts[0];
        let (out, weights) = if counts.iter().all(|&m| m == m0) {
            let k = split_heads(ctx, k, groups, m0, h)?;
            let v = split_heads(ctx, v, groups, m0, h)?;
            let (out, w) = attend(ctx, q, k, v)?;
            (out, vec![w])
        } else {
            let mut outs = Vec::with_capacity(groups);
            let mut weights = Vec::with_capacity(groups);
            let mut offset = 0;
            for (g, &m) in counts.iter().enumerate() {
                let qg = ctx.tape.slice(q, 0, g * h, h)?;
                let kg = ctx.tape.slice(k, 0, offset, m)?;
                let vg = ctx.tape.slice(v, 0, offset, m)?;
                let kg = split_heads(ctx, kg, 1, m, h)?;
                let vg = split_heads(ctx, vg, 1, m, h)?;
                let (o, w) = attend(ctx, qg, kg, vg)?;
                outs.push(o);
                weights.push(w);
                offset += m;
            }
            (ctx.tape.concat(&outs, 0)?, weights)
        };
        let out = merge_heads(ctx, out, groups, h)?;
        Ok((self.o.forward(ctx, out)?, weights))
    }
}

/// Pre-norm Transformer encoder block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: Norm,
    pub attn: MultiHeadAttention,
    pub ln2: Norm,
    pub mlp: Mlp,
}

impl EncoderBlock {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, hidden: usize, eps: f64, frozen: bool, rng: &mut R) -> Self {
        Self {
            ln1: Norm::new(store, &format!("{name}.ln1"), d, eps, frozen),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, frozen, rng),
            ln2: Norm::new(store, &format!("{name}.ln2"), d, eps, frozen),
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, hidden, d, frozen, rng),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var, groups: usize, trace: &mut Vec<Var>) -> Result<Var, NumError> {
        let h = self.ln1.forward(ctx, x)?;
        let (a, w) = self.attn.self_attend(ctx, h, groups)?;
        trace.push(w);
        let x = ctx.tape.add(x, a)?;
        let h = self.ln2.forward(ctx, x)?;
        let m = self.mlp.forward(ctx, h)?;
        ctx.tape.add(x, m)
    }
}

/// Pre-norm decoder layer: self-attention over image tokens, optional
/// cross-attention into memory tokens, then an MLP; each with a residual.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: Norm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: Norm,
    pub cross_attn: MultiHeadAttention,
    pub ln_mlp: Norm,
    pub mlp: Mlp,
}

/// Memory tokens as seen by one decoder call.
pub struct MemoryView<'m> {
    pub tokens: Var,
    pub counts: &'m [usize],
}

impl DecoderLayer {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, hidden: usize, eps: f64, rng: &mut R) -> Self {
        Self {
            ln_self: Norm::new(store, &format!("{name}.ln_self"), d, eps, false),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, false, rng),
            ln_cross: Norm::new(store, &format!("{name}.ln_cross"), d, eps, false),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, false, rng),
            ln_mlp: Norm::new(store, &format!("{name}.ln_mlp"), d, eps, false),
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, hidden, d, false, rng),
        }
    }

    pub fn forward<T: Element>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        groups: usize,
        memory: Option<&MemoryView<'_>>,
        trace: &mut DecoderTrace,
    ) -> Result<Var, NumError> {
        let h = self.ln_self.forward(ctx, x)?;
        let (a, w) = self.self_attn.self_attend(ctx, h, groups)?;
        trace.self_weights.push(w);
        let mut x = ctx.tape.add(x, a)?;
        if let Some(mem) = memory {
            let h = self.ln_cross.forward(ctx, x)?;
            let (c, ws) = self.cross_attn.cross_attend(ctx, h, groups, mem.tokens, mem.counts)?;
            trace.cross_weights.extend(ws);
            x = ctx.tape.add(x, c)?;
        }
        let h = self.ln_mlp.forward(ctx, x)?;
        let m = self.mlp.forward(ctx, h)?;
        ctx.tape.add(x, m)
    }
}

/// Attention weight tensors recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct DecoderTrace {
    pub self_weights: Vec<Var>,
    pub cross_weights: Vec<Var>,
}
