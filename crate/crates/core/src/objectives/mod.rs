//! Training objective: pixel cross-entropy, foreground soft Dice and the
//! global/local contrastive alignment terms, combined with fixed weights.


use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::LabelMask;
use crate::model::{Ctx, ForwardOutput, MemoryTokens, ModelError, TokenKind, VocSegModel};
use crate::numcore::{Element, NumError, Tape, Tensor, Var};

pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("mask class {class} outside 0..{n_classes}")]
    ClassOutOfRange { class: u8, n_classes: usize },
    #[error("masks do not match logits: {0}")]
    MaskShape(String),
    #[error("global contrastive loss needs at least 2 items, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_ce: f64,
    pub w_dice: f64,
    pub w_contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_ce: 1.0,
            w_dice: 1.0,
            w_contrastive: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let w = [self.w_ce, self.w_dice, self.w_contrastive];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LossError::Config(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(LossError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub global: bool,
    pub local: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            global: true,
            local: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(LossError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// `[B, C, H, W]` one-hot encoding of the masks.
fn one_hot<T: Element>(masks: &[LabelMask], c: usize, h: usize, w: usize) -> Result<Tensor<T>, LossError> {
    let hw = h * w;
    let mut data = vec![T::ZERO; masks.len() * c * hw];
    for (b, m) in masks.iter().enumerate() {
        if (m.height(), m.width()) != (h, w) {
            return Err(LossError::MaskShape(format!("mask {}x{} vs logits {h}x{w}", m.height(), m.width())));
        }
        for (px, &v) in m.values().iter().enumerate() {
            if v as usize >= c {
                return Err(LossError::ClassOutOfRange { class: v, n_classes: c });
            }
            data[(b * c + v as usize) * hw + px] = T::ONE;
        }
    }
    Ok(Tensor::new(&[masks.len(), c, h, w], data)?)
}

/// Accepts `[C, H, W]` (one frame) or `[B, C, H, W]`; returns the rank-4 view.
fn batched<T: Element>(tape: &mut Tape<T>, x: Var, masks: &[LabelMask]) -> Result<(Var, [usize; 4]), LossError> {
    let s = tape.shape(x).to_vec();
    let x = match s.len() {
        3 => tape.reshape(x, &[1, s[0], s[1], s[2]])?,
        4 => x,
        r => return Err(NumError::RankMismatch { op: "loss", expected: 4, got: r }.into()),
    };
    let s = tape.shape(x).to_vec();
    if s[0] != masks.len() {
        return Err(LossError::MaskShape(format!("{} masks for batch of {}", masks.len(), s[0])));
    }
    Ok((x, [s[0], s[1], s[2], s[3]]))
}

/// Mean over pixels of `-log softmax(logits)[true class]`.
pub fn cross_entropy<T: Element>(tape: &mut Tape<T>, logits: Var, masks: &[LabelMask]) -> Result<Var, LossError> {
    let (x, [b, c, h, w]) = batched(tape, logits, masks)?;
    let y = tape.constant(one_hot(masks, c, h, w)?);
    let lp = tape.log_softmax(x, 1)?;
    let picked = tape.mul(lp, y)?;
    let s = tape.sum(picked)?;
    Ok(tape.scale(s, -1.0 / (b * h * w) as f64)?)
}

/// `1 - mean over (frame, foreground class) of (2Σpy + eps)/(Σp + Σy + eps)`.
pub fn soft_dice_loss<T: Element>(tape: &mut Tape<T>, probs: Var, masks: &[LabelMask], eps: f64) -> Result<Var, LossError> {
    let (p, [b, c, h, w]) = batched(tape, probs, masks)?;
    if c < 2 {
        return Err(LossError::Config("Dice needs at least one foreground class".into()));
    }
    let y = one_hot::<T>(masks, c, h, w)?;
    let ysum: Vec<T> = y.data().chunks(h * w).map(|ch| T::from_f64(ch.iter().map(|v| v.to_f64()).sum::<f64>() + eps)).collect();
    let ysum = tape.constant(Tensor::new(&[b, c], ysum)?);
    let y = tape.constant(y.reshaped(&[b, c, h * w])?);
    let p = tape.reshape(p, &[b, c, h * w])?;
    let py = tape.mul(p, y)?;
    let inter = tape.sum_axis(py, 2)?;
    let psum = tape.sum_axis(p, 2)?;
    let num = tape.affine(inter, 2.0, eps)?;
    let den = tape.add(psum, ysum)?;
    let ratio = tape.div(num, den)?;
    let fg = tape.slice(ratio, 1, 1, c - 1)?;
    let m = tape.mean(fg)?;
    Ok(tape.affine(m, -1.0, 1.0)?)
}

/// One direction of InfoNCE: rows of `a` classify their partner among the
/// rows of `b`. Inputs are L2-normalised `[B × k]`.
pub fn info_nce<T: Element>(tape: &mut Tape<T>, a: Var, b: Var, tau: f64) -> Result<Var, LossError> {
    let n = tape.shape(a)[0];
    let bt = tape.transpose(b)?;
    let s = tape.matmul(a, bt)?;
    let s = tape.scale(s, 1.0 / tau)?;
    let lp = tape.log_softmax(s, 1)?;
    let eye = tape.constant(Tensor::eye(n));
    let diag = tape.mul(lp, eye)?;
    let total = tape.sum(diag)?;
    Ok(tape.scale(total, -1.0 / n as f64)?)
}

/// Symmetric InfoNCE over the (image, audio) and (image, phono) pairs: the
/// sum of four directional terms.
pub fn contrastive_global<T: Element>(tape: &mut Tape<T>, image: Var, audio: Var, phono: Var, tau: f64) -> Result<Var, LossError> {
    let b = tape.shape(image)[0];
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    for v in [audio, phono] {
        if tape.shape(v) != tape.shape(image) {
            return Err(NumError::ShapeMismatch {
                op: "contrastive_global",
                a: tape.shape(image).to_vec(),
                b: tape.shape(v).to_vec(),
            }
            .into());
        }
    }
    let terms = [
        info_nce(tape, image, audio, tau)?,
        info_nce(tape, audio, image, tau)?,
        info_nce(tape, image, phono, tau)?,
        info_nce(tape, phono, image, tau)?,
    ];
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Token-level InfoNCE. Each image token of frame `i` is scored against a
/// positive formed by softmax-weighting frame `i`'s real memory tokens by
/// similarity, and against the real memory tokens of every other frame as
/// negatives. Frames without real tokens are skipped; the result is `None`
/// when no frame has one.
///
/// `image` is `[B·P × k]`, `memory` `[Σ M × k]`, both L2-normalised.
pub fn contrastive_local<T: Element>(tape: &mut Tape<T>, image: Var, memory: Var, layout: &MemoryTokens, tau: f64) -> Result<Option<Var>, LossError> {
    let b = layout.counts.len();
    let p = tape.shape(image)[0] / b;
    let offsets = layout.offsets();
    let real: Vec<Vec<usize>> = layout
        .kinds
        .iter()
        .zip(&offsets)
        .map(|(kinds, &off)| kinds.iter().enumerate().filter(|(_, k)| **k != TokenKind::Null).map(|(j, _)| off + j).collect())
        .collect();
    let mut terms = Vec::new();
    for i in 0..b {
        if real[i].is_empty() {
            continue;
        }
        let negatives: Vec<usize> = real.iter().enumerate().filter(|&(j, _)| j != i).flat_map(|(_, r)| r.iter().copied()).collect();
        if negatives.is_empty() {
            // a single candidate: the softmax is exactly 1
            terms.push(None);
            continue;
        }
        let z = tape.slice(image, 0, i * p, p)?;
        let own = tape.embedding(memory, &real[i])?;
        let own_t = tape.transpose(own)?;
        let sim = tape.matmul(z, own_t)?;
        let sim = tape.scale(sim, 1.0 / tau)?;
        let align = tape.softmax(sim, 1)?;
        let pos = tape.matmul(align, own)?;
        let zp = tape.mul(z, pos)?;
        let pos_score = tape.sum_axis(zp, 1)?;
        let pos_score = tape.reshape(pos_score, &[p, 1])?;
        let pos_score = tape.scale(pos_score, 1.0 / tau)?;
        let neg = tape.embedding(memory, &negatives)?;
        let neg_t = tape.transpose(neg)?;
        let neg_score = tape.matmul(z, neg_t)?;
        let neg_score = tape.scale(neg_score, 1.0 / tau)?;
        let logits = tape.concat(&[pos_score, neg_score], 1)?;
        let lp = tape.log_softmax(logits, 1)?;
        let first = tape.slice(lp, 1, 0, 1)?;
        let m = tape.mean(first)?;
        terms.push(Some(tape.scale(m, -1.0)?));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let n = terms.len();
    let live: Vec<Var> = terms.into_iter().flatten().collect();
    let Some((&first, rest)) = live.split_first() else {
        let zero = tape.constant(Tensor::scalar(T::ZERO));
        return Ok(Some(zero));
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(Some(tape.scale(acc, 1.0 / n as f64)?))
}

/// Per-term values of one loss evaluation, plus the differentiable total.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub total: Var,
    pub ce: f64,
    pub dice: f64,
    pub con_global: f64,
    pub con_local: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,ce,dice,con_global,con_local,total";

    pub fn csv_row(&self, step: usize, total: f64) -> String {
        format!("{step},{:.8},{:.8},{:.8},{:.8},{:.8}", self.ce, self.dice, self.con_global, self.con_local, total)
    }
}

/// `w_ce·CE + w_dice·Dice + w_contrastive·(global + local)`. Terms with a
/// zero weight are not evaluated at all. The global term is skipped for
/// batches of one and the local term when every memory token is a
/// placeholder.
pub fn total_loss<T: Element>(
    model: &VocSegModel<T>,
    ctx: &mut Ctx<'_, T>,
    out: &ForwardOutput,
    masks: &[LabelMask],
    weights: &LossWeights,
    cfg: &ContrastiveConfig,
) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    cfg.validate()?;
    let mut parts: Vec<Var> = Vec::new();
    let (mut ce, mut dice, mut con_global, mut con_local) = (0.0, 0.0, 0.0, 0.0);
    if weights.w_ce > 0.0 {
        let v = cross_entropy(&mut ctx.tape, out.logits, masks)?;
        ce = ctx.tape.value(v).item().to_f64();
        parts.push(ctx.tape.scale(v, weights.w_ce)?);
    }
    if weights.w_dice > 0.0 {
        let probs = ctx.tape.softmax(out.logits, 1)?;
        let v = soft_dice_loss(&mut ctx.tape, probs, masks, DICE_EPS)?;
        dice = ctx.tape.value(v).item().to_f64();
        parts.push(ctx.tape.scale(v, weights.w_dice)?);
    }
    if weights.w_contrastive > 0.0 {
        let mut con = Vec::new();
        if cfg.global && out.batch >= 2 {
            if let Some(g) = model.project_global(ctx, out)? {
                let v = contrastive_global(&mut ctx.tape, g.image, g.audio, g.phono, cfg.temperature)?;
                con_global = ctx.tape.value(v).item().to_f64();
                con.push(v);
            }
        }
        if cfg.local {
            if let (Some((img, mem)), Some(layout)) = (model.project_local(ctx, out)?, out.memory.as_ref()) {
                if let Some(v) = contrastive_local(&mut ctx.tape, img, mem, layout, cfg.temperature)? {
                    con_local = ctx.tape.value(v).item().to_f64();
                    con.push(v);
                }
            }
        }
        for v in con {
            parts.push(ctx.tape.scale(v, weights.w_contrastive)?);
        }
    }
    let (&first, rest) = parts
        .split_first()
        .ok_or_else(|| LossError::Config("no loss term could be evaluated".into()))?;
    let mut total = first;
    for &p in rest {
        total = ctx.tape.add(total, p)?;
    }
    Ok(LossBreakdown {
        total,
        ce,
        dice,
        con_global,
        con_local,
    })
}
