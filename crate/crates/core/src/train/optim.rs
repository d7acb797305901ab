use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

/// AdamW moments, one buffer per parameter in traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.named().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One decoupled-weight-decay Adam update.
///
/// `grads` follow the parameter traversal order. A non-finite gradient aborts
/// before anything is modified.
pub fn adamw_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Vec<T>],
    state: &mut OptState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let named = params.named();
    if named.len() != grads.len() || named.len() != state.m.len() {
        return Err(Error::Internal(format!(
            "{} parameters, {} gradients, {} moment buffers",
            named.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in named.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::Dimension { op: "adamw_step", lhs: p.shape().to_vec(), rhs: vec![g.len()] });
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{name}[{i}] = {}", g[i])));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr_t, eps) = (T::of(lr), T::of(cfg.eps));
    let mut k = 0;
    let mut result = Ok(());
    params.visit_mut(&mut |name, p| {
        let decay = if cfg.decays(name) { T::of(cfg.weight_decay) } else { T::zero() };
        let (g, m, v) = (&grads[k], &mut state.m[k], &mut state.v[k]);
        k += 1;
        let r = p.update(|theta| {
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                theta[i] -= lr_t * (mh / (vh.sqrt() + eps) + decay * theta[i]);
            }
        });
        if result.is_ok() {
            result = r;
        }
    });
    result
}
