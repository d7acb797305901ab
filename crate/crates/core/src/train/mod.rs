mod config;
mod data;
mod fit;
mod metrics;
mod optim;
mod schedule;
#[cfg(test)]
mod tests;

pub use config::TrainConfig;
pub use data::{represent, InputPipeline, PreparedInput, Sample, DEFAULT_SAMPLE_RATE_HZ};
pub use fit::{batch_gradients, evaluate, fit, history_jsonl, train, train_step, EpochRecord, TrainOutcome};
pub use metrics::Metrics;
pub use optim::{adamw_step, OptState};
pub use schedule::{cosine_lr, lr_at_epoch, warmup_lr};
