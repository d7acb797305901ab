use super::config::{LatentMode, ModelConfig, Pooling, MASK_BIAS, NORM_EPS};
use super::params::{AttentionBlock, FeedForward, Linear, ModelParams, Norm, ParamTree};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorcore::{Tape, Tensor, Var};
use crate::tokenizer::{SegmentedTokens, TokenBatch};

/// Tokens as the model consumes them.
#[derive(Clone, Copy, Debug)]
pub enum ModelInput<'a, T> {
    Segmented(&'a SegmentedTokens<T>),
    Global(&'a TokenBatch<T>),
}

impl<T: Scalar> ModelInput<'_, T> {
    pub fn width(&self) -> usize {
        match self {
            ModelInput::Segmented(s) => s.width(),
            ModelInput::Global(b) => b.width(),
        }
    }
}

/// Latent rows after a named stage of the forward pass.
#[derive(Clone, Debug)]
pub struct LatentState<T> {
    pub stage: String,
    pub latents: Tensor<T>,
}

fn norm<T: Scalar>(tape: &mut Tape<'_, T>, n: &Norm<Var>, x: Var) -> Result<Var> {
    tape.layer_norm(x, n.gain, n.bias, T::of(NORM_EPS))
}

fn linear<T: Scalar>(tape: &mut Tape<'_, T>, l: &Linear<Var>, x: Var) -> Result<Var> {
    let y = tape.matmul(x, l.weight)?;
    tape.add_row(y, l.bias)
}

fn feed_forward<T: Scalar>(tape: &mut Tape<'_, T>, f: &FeedForward<Var>, x: Var) -> Result<Var> {
    let h = norm(tape, &f.norm, x)?;
    let h = linear(tape, &f.fc1, h)?;
    let h = tape.gelu(h)?;
    let h = linear(tape, &f.fc2, h)?;
    tape.add(x, h)
}

/// Grouped pre-norm attention with residual and feedforward.
///
/// `queries` holds `groups` equal blocks of rows, and so does the context; block
/// `g` of the queries attends only to block `g` of the context. `mask` flags real
/// context rows. A group with no real rows is a contract violation. With
/// `context = None` the normalized queries are their own context.
#[allow(clippy::too_many_arguments)]
pub fn attend<T: Scalar>(
    tape: &mut Tape<'_, T>,
    block: &AttentionBlock<Var>,
    queries: Var,
    context: Option<Var>,
    mask: Option<&[bool]>,
    groups: usize,
    heads: usize,
    head_dim: usize,
) -> Result<Var> {
    let q_rows = tape.shape(queries)[0];
    let qn = norm(tape, &block.query_norm, queries)?;
    let cn = match (context, &block.context_norm) {
        (Some(c), Some(n)) => norm(tape, n, c)?,
        (Some(c), None) => c,
        (None, _) => qn,
    };
    let c_rows = tape.shape(cn)[0];
    if groups == 0 || q_rows % groups != 0 || c_rows % groups != 0 {
        return Err(Error::Internal(format!(
            "{q_rows} queries and {c_rows} context rows do not split into {groups} groups"
        )));
    }
    if let Some(m) = mask {
        if m.len() != c_rows {
            return Err(Error::Internal(format!("mask has {} entries for {c_rows} context rows", m.len())));
        }
    }
    let (qg, cg) = (q_rows / groups, c_rows / groups);

    let q = tape.matmul(qn, block.w_q)?;
    let k = tape.matmul(cn, block.w_k)?;
    let v = tape.matmul(cn, block.w_v)?;
    let scale = T::of(1.0 / (head_dim as f64).sqrt());

    let mut group_out = Vec::with_capacity(groups);
    for g in 0..groups {
        let bias = match mask {
            Some(m) => {
                let m = &m[g * cg..(g + 1) * cg];
                if !m.iter().any(|&b| b) {
                    return Err(Error::Contract(format!("context group {g} is fully masked")));
                }
                let row = m.iter().map(|&b| if b { T::zero() } else { T::of(MASK_BIAS) }).collect();
                Some(tape.constant(Tensor::new(vec![1, cg], row)?))
            }
            None => None,
        };
        let (qs, ks, vs) = if groups == 1 {
            (q, k, v)
        } else {
            (tape.slice_rows(q, g * qg, qg)?, tape.slice_rows(k, g * cg, cg)?, tape.slice_rows(v, g * cg, cg)?)
        };
        let mut head_out = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (qs, ks, vs)
            } else {
                let o = h * head_dim;
                (tape.slice_cols(qs, o, head_dim)?, tape.slice_cols(ks, o, head_dim)?, tape.slice_cols(vs, o, head_dim)?)
            };
            let mut scores = tape.matmul_nt(qh, kh)?;
            scores = tape.scale(scores, scale)?;
            if let Some(b) = bias {
                let b = if qg == 1 { b } else { tape.repeat_rows(b, qg)? };
                scores = tape.add(scores, b)?;
            }
            let weights = tape.softmax(scores, 1)?;
            head_out.push(tape.matmul(weights, vh)?);
        }
        group_out.push(if heads == 1 { head_out[0] } else { tape.concat_cols(&head_out)? });
    }
    let mixed = if groups == 1 { group_out[0] } else { tape.concat_rows(&group_out)? };
    let out = tape.matmul(mixed, block.w_o)?;
    let x = tape.add(queries, out)?;
    feed_forward(tape, &block.ffn, x)
}

fn check_layout<T: Scalar>(
    tape: &Tape<'_, T>,
    cfg: &ModelConfig,
    bound: &ParamTree<Var>,
    input: &ModelInput<'_, T>,
) -> Result<()> {
    let latent_shape = tape.shape(bound.latents);
    if latent_shape != [cfg.latent_rows(), cfg.latent_dim] {
        return Err(Error::Config(format!(
            "latent array {latent_shape:?} does not match the configured layout"
        )));
    }
    match (cfg.mode, input) {
        (LatentMode::Segmented, ModelInput::Segmented(seg)) => {
            if seg.mask.len() != seg.n_segments * seg.slot_len {
                return Err(Error::Internal(format!(
                    "mask length {} does not match {} segments of {}",
                    seg.mask.len(),
                    seg.n_segments,
                    seg.slot_len
                )));
            }
        }
        (LatentMode::Global { .. }, ModelInput::Global(_)) => {}
        (mode, _) => return Err(Error::Usage(format!("input does not fit latent layout {mode:?}"))),
    }
    let expect = bound.layers.first().map(|l| tape.shape(l.cross.w_k)[0]);
    if let Some(w) = expect {
        if w != input.width() {
            return Err(Error::Dimension {
                op: "forward",
                lhs: vec![w],
                rhs: vec![input.width()],
            });
        }
    }
    Ok(())
}

/// Records the forward pass on `tape` and returns `1 × n_classes` logits.
pub fn forward_on_tape<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    bound: &ParamTree<Var>,
    input: ModelInput<'_, T>,
    mut trace: Option<&mut Vec<LatentState<T>>>,
) -> Result<Var> {
    check_layout(tape, cfg, bound, &input)?;
    let (tokens, mask, groups) = match input {
        ModelInput::Segmented(seg) => (tape.constant(seg.slots.clone()), Some(seg.mask.as_slice()), seg.n_segments),
        ModelInput::Global(batch) => (tape.constant(batch.tokens.clone()), None, 1),
    };
    let mut e = match cfg.mode {
        LatentMode::Segmented => tape.repeat_rows(bound.latents, groups)?,
        LatentMode::Global { .. } => bound.latents,
    };
    for (i, layer) in bound.layers.iter().enumerate() {
        e = attend(tape, &layer.cross, e, Some(tokens), mask, groups, cfg.cross_heads, cfg.cross_head_dim)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(LatentState { stage: format!("layers.{i}.cross"), latents: tape.to_tensor(e) });
        }
        for (r, block) in layer.self_blocks.iter().enumerate() {
            e = attend(tape, block, e, None, None, 1, cfg.self_heads, cfg.self_head_dim)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(LatentState { stage: format!("layers.{i}.self.{r}"), latents: tape.to_tensor(e) });
            }
        }
    }
    let pooled = match cfg.pooling {
        Pooling::Mean => tape.mean_rows(e)?,
        Pooling::Last => {
            let rows = tape.shape(e)[0];
            tape.slice_rows(e, rows - 1, 1)?
        }
    };
    let h = norm(tape, &bound.head.norm, pooled)?;
    linear(tape, &bound.head.proj, h)
}

/// Configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, token_width: usize, seed: u64) -> Result<Self> {
        let params = super::params::init_params(&config, token_width, seed)?;
        Ok(Self { config, params })
    }

    /// Logits for one sample, without recording gradients.
    pub fn forward(&self, input: ModelInput<'_, T>) -> Result<Vec<T>> {
        let mut tape = Tape::without_grad();
        let bound = self.params.bind(&mut tape);
        let out = forward_on_tape(&mut tape, &self.config, &bound, input, None)?;
        Ok(tape.value(out).to_vec())
    }

    /// Latent rows after every cross and self block.
    pub fn trace(&self, input: ModelInput<'_, T>) -> Result<Vec<LatentState<T>>> {
        let mut tape = Tape::without_grad();
        let bound = self.params.bind(&mut tape);
        let mut states = Vec::new();
        forward_on_tape(&mut tape, &self.config, &bound, input, Some(&mut states))?;
        Ok(states)
    }

    /// Predicted class (lowest index on ties) and softmax probabilities.
    pub fn predict(&self, input: ModelInput<'_, T>) -> Result<(usize, Vec<T>)> {
        let logits = self.forward(input)?;
        let probs = softmax(&logits);
        Ok((argmax(&probs), probs))
    }

    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        Ok(Model { config: self.config.clone(), params: self.params.cast()? })
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
