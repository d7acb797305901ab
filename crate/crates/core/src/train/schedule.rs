use std::f64::consts::PI;

use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Warmup line through `base/W` at epoch 0 and `base` at epoch `W`.
pub fn warmup_lr(cfg: &TrainConfig, epoch: f64) -> f64 {
    let w = cfg.epochs_warmup as f64;
    let start = cfg.base_lr / w;
    start + (cfg.base_lr - start) * epoch / w
}

/// Half-cosine from `base` at the end of warmup to `min_lr` at the start of cooldown.
pub fn cosine_lr(cfg: &TrainConfig, epoch: f64) -> f64 {
    let start = cfg.epochs_warmup as f64;
    let span = (cfg.epochs_total - cfg.epochs_cooldown - cfg.epochs_warmup) as f64;
    let progress = if span > 0.0 { (epoch - start) / span } else { 1.0 };
    cfg.min_lr + (cfg.base_lr - cfg.min_lr) * (1.0 + (PI * progress).cos()) / 2.0
}

pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs_total {
        return Err(Error::Usage(format!("epoch {epoch} outside 0..{}", cfg.epochs_total)));
    }
    let e = epoch as f64;
    Ok(if epoch < cfg.epochs_warmup {
        warmup_lr(cfg, e)
    } else if epoch < cfg.epochs_total - cfg.epochs_cooldown {
        cosine_lr(cfg, e)
    } else {
        cfg.min_lr
    })
}
