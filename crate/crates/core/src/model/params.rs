use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::seeds;
use crate::tensorcore::{Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

// Parameter containers are generic over the slot type: `Tensor<T>` for stored
// weights, `Var` once bound to a tape, `Vec<usize>` for shape templates.

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub gain: P,
    pub bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<P> {
    pub norm: Norm<P>,
    pub fc1: Linear<P>,
    pub fc2: Linear<P>,
}

/// Pre-norm multi-head attention followed by a pre-norm feedforward block.
///
/// `context_norm` is present for cross-attention only; self-attention reuses the
/// normalized queries as context.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock<P> {
    pub query_norm: Norm<P>,
    pub context_norm: Option<Norm<P>>,
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
    pub w_o: P,
    pub ffn: FeedForward<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<P> {
    pub cross: AttentionBlock<P>,
    pub self_blocks: Vec<AttentionBlock<P>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<P> {
    pub norm: Norm<P>,
    pub proj: Linear<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTree<P> {
    /// `1 × d` shared seed, or `M × d` for the global layout
    pub latents: P,
    pub layers: Vec<Layer<P>>,
    pub head: Head<P>,
}

pub type ModelParams<T> = ParamTree<Tensor<T>>;

type MapFn<'f, 's, P, Q> = &'f mut dyn FnMut(&str, &'s P) -> Q;
type VisitMut<'f, P> = &'f mut dyn FnMut(&str, &mut P);

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<P> Norm<P> {
    fn map<'s, Q>(&'s self, prefix: &str, f: MapFn<'_, 's, P, Q>) -> Norm<Q> {
        Norm {
            gain: f(&join(prefix, "gain"), &self.gain),
            bias: f(&join(prefix, "bias"), &self.bias),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl<P> Linear<P> {
    fn map<'s, Q>(&'s self, prefix: &str, f: MapFn<'_, 's, P, Q>) -> Linear<Q> {
        Linear {
            weight: f(&join(prefix, "weight"), &self.weight),
            bias: f(&join(prefix, "bias"), &self.bias),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl<P> FeedForward<P> {
    fn map<'s, Q>(&'s self, prefix: &str, f: MapFn<'_, 's, P, Q>) -> FeedForward<Q> {
        FeedForward {
            norm: self.norm.map(&join(prefix, "norm"), f),
            fc1: self.fc1.map(&join(prefix, "fc1"), f),
            fc2: self.fc2.map(&join(prefix, "fc2"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

impl<P> AttentionBlock<P> {
    fn map<'s, Q>(&'s self, prefix: &str, f: MapFn<'_, 's, P, Q>) -> AttentionBlock<Q> {
        AttentionBlock {
            query_norm: self.query_norm.map(&join(prefix, "query_norm"), f),
            context_norm: self.context_norm.as_ref().map(|n| n.map(&join(prefix, "context_norm"), f)),
            w_q: f(&join(prefix, "w_q"), &self.w_q),
            w_k: f(&join(prefix, "w_k"), &self.w_k),
            w_v: f(&join(prefix, "w_v"), &self.w_v),
            w_o: f(&join(prefix, "w_o"), &self.w_o),
            ffn: self.ffn.map(&join(prefix, "ffn"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        self.query_norm.visit_mut(&join(prefix, "query_norm"), f);
        if let Some(n) = &mut self.context_norm {
            n.visit_mut(&join(prefix, "context_norm"), f);
        }
        f(&join(prefix, "w_q"), &mut self.w_q);
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        f(&join(prefix, "w_o"), &mut self.w_o);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

impl<P> ParamTree<P> {
    /// Applies `f` to every slot in a fixed order, passing its dotted name.
    pub fn map<'s, Q>(&'s self, f: MapFn<'_, 's, P, Q>) -> ParamTree<Q> {
        ParamTree {
            latents: f("latents", &self.latents),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, layer)| {
                    let p = format!("layers.{i}");
                    Layer {
                        cross: layer.cross.map(&join(&p, "cross"), f),
                        self_blocks: layer
                            .self_blocks
                            .iter()
                            .enumerate()
                            .map(|(r, b)| b.map(&format!("{p}.self.{r}"), f))
                            .collect(),
                    }
                })
                .collect(),
            head: Head {
                norm: self.head.norm.map("head.norm", f),
                proj: self.head.proj.map("head.proj", f),
            },
        }
    }

    /// Mutable traversal in the same order as [`ParamTree::map`].
    pub fn visit_mut(&mut self, f: VisitMut<'_, P>) {
        f("latents", &mut self.latents);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            layer.cross.visit_mut(&join(&p, "cross"), f);
            for (r, b) in layer.self_blocks.iter_mut().enumerate() {
                b.visit_mut(&format!("{p}.self.{r}"), f);
            }
        }
        self.head.norm.visit_mut("head.norm", f);
        self.head.proj.visit_mut("head.proj", f);
    }

    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map(&mut |name, p| out.push((name.to_string(), p)));
        out
    }

    /// Rebuilds a tree of this shape from slots listed in traversal order.
    pub fn rebuild<Q>(&self, items: impl IntoIterator<Item = Q>) -> Option<ParamTree<Q>> {
        let mut it = items.into_iter();
        let mut short = false;
        let tree = self.map(&mut |_, _| match it.next() {
            Some(q) => Some(q),
            None => {
                short = true;
                None
            }
        });
        if short || it.next().is_some() {
            return None;
        }
        Some(unwrap_tree(tree))
    }
}

fn unwrap_tree<Q>(tree: ParamTree<Option<Q>>) -> ParamTree<Q> {
    fn n<Q>(x: Norm<Option<Q>>) -> Norm<Q> {
        Norm {
            gain: x.gain.expect("filled"),
            bias: x.bias.expect("filled"),
        }
    }
    fn l<Q>(x: Linear<Option<Q>>) -> Linear<Q> {
        Linear {
            weight: x.weight.expect("filled"),
            bias: x.bias.expect("filled"),
        }
    }
    fn a<Q>(x: AttentionBlock<Option<Q>>) -> AttentionBlock<Q> {
        AttentionBlock {
            query_norm: n(x.query_norm),
            context_norm: x.context_norm.map(n),
            w_q: x.w_q.expect("filled"),
            w_k: x.w_k.expect("filled"),
            w_v: x.w_v.expect("filled"),
            w_o: x.w_o.expect("filled"),
            ffn: FeedForward {
                norm: n(x.ffn.norm),
                fc1: l(x.ffn.fc1),
                fc2: l(x.ffn.fc2),
            },
        }
    }
    ParamTree {
        latents: tree.latents.expect("filled"),
        layers: tree
            .layers
            .into_iter()
            .map(|layer| Layer {
                cross: a(layer.cross),
                self_blocks: layer.self_blocks.into_iter().map(a).collect(),
            })
            .collect(),
        head: Head {
            norm: n(tree.head.norm),
            proj: l(tree.head.proj),
        },
    }
}

fn norm_shape(width: usize) -> Norm<Vec<usize>> {
    Norm {
        gain: vec![width],
        bias: vec![width],
    }
}

fn linear_shape(inp: usize, out: usize) -> Linear<Vec<usize>> {
    Linear {
        weight: vec![inp, out],
        bias: vec![out],
    }
}

fn block_shape(cfg: &ModelConfig, context_width: Option<usize>, inner: usize) -> AttentionBlock<Vec<usize>> {
    let d = cfg.latent_dim;
    let kv_in = context_width.unwrap_or(d);
    AttentionBlock {
        query_norm: norm_shape(d),
        context_norm: context_width.map(norm_shape),
        w_q: vec![d, inner],
        w_k: vec![kv_in, inner],
        w_v: vec![kv_in, inner],
        w_o: vec![inner, d],
        ffn: FeedForward {
            norm: norm_shape(d),
            fc1: linear_shape(d, cfg.ffn_hidden()),
            fc2: linear_shape(cfg.ffn_hidden(), d),
        },
    }
}

/// Shape of every parameter for `cfg` and tokens of width `token_width`.
pub fn param_shapes(cfg: &ModelConfig, token_width: usize) -> ParamTree<Vec<usize>> {
    ParamTree {
        latents: vec![cfg.latent_rows(), cfg.latent_dim],
        layers: (0..cfg.depth)
            .map(|_| Layer {
                cross: block_shape(cfg, Some(token_width), cfg.cross_inner()),
                self_blocks: (0..cfg.self_blocks)
                    .map(|_| block_shape(cfg, None, cfg.self_inner()))
                    .collect(),
            })
            .collect(),
        head: Head {
            norm: norm_shape(cfg.latent_dim),
            proj: linear_shape(cfg.latent_dim, cfg.n_classes),
        },
    }
}

fn truncated_normal(rng: &mut impl Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Parameter names whose last component marks a gain or bias.
pub fn is_norm_or_bias(name: &str) -> bool {
    matches!(name.rsplit('.').next(), Some("gain" | "bias"))
}

/// Fresh parameters: truncated normal (σ = 0.02, cut at 2σ) for weights and the
/// latent seed, zeros for biases, ones for norm gains. All require gradients.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, token_width: usize, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = seeds::substream(seed, seeds::INIT);
    let shapes = param_shapes(cfg, token_width);
    let tensors = shapes.map(&mut |name, shape| {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match name.rsplit('.').next() {
            Some("gain") => vec![T::one(); n],
            Some("bias") => vec![T::zero(); n],
            _ => (0..n).map(|_| T::of(truncated_normal(&mut rng, INIT_STD))).collect(),
        };
        Tensor::new(shape.clone(), data).map(Tensor::with_grad)
    });
    let mut out = Vec::new();
    let mut err = None;
    tensors.map(&mut |_, r: &Result<Tensor<T>>| match r {
        Ok(t) => out.push(t.clone()),
        Err(e) => {
            if err.is_none() {
                err = Some(e.to_string());
            }
        }
    });
    if let Some(e) = err {
        return Err(crate::Error::Internal(e));
    }
    Ok(shapes.rebuild(out).expect("same traversal"))
}

impl<T: Scalar> ModelParams<T> {
    pub fn element_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn shapes(&self) -> ParamTree<Vec<usize>> {
        self.map(&mut |_, t| t.shape().to_vec())
    }

    /// Records every parameter as a tape leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> ParamTree<Var> {
        self.map(&mut |_, t| tape.leaf(t))
    }

    pub fn cast<U: Scalar>(&self) -> Result<ModelParams<U>> {
        let items = self.named().into_iter().map(|(_, t)| t.cast::<U>()).collect::<Result<Vec<_>>>()?;
        Ok(self.rebuild(items).expect("same traversal"))
    }
}
