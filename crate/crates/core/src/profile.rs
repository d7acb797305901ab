//! Parameter counts, analytic forward FLOPs, and host latency.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LatentMode, Model, ModelConfig, Pooling};
use crate::scalar::Scalar;
use crate::tensorcore::flops::{GELU_COST, NORM_COST, SOFTMAX_COST};
use crate::tokenizer::segment_len;
use crate::train::PreparedInput;

pub const FLOP_CONVENTION: &str = "forward pass, batch 1; multiply-accumulate = 2 FLOPs; \
elementwise add/scale = 1, layer norm = 5, softmax = 5, GELU = 8 per element; slicing and copies free";

/// Exact parameter count for tokens of width `token_width`.
pub fn count_params(cfg: &ModelConfig, token_width: usize) -> usize {
    let d = cfg.latent_dim;
    let c = token_width;
    let h = cfg.ffn_hidden();
    let norm = |w: usize| 2 * w;
    let ffn = norm(d) + (d * h + h) + (h * d + d);
    let ic = cfg.cross_inner();
    let is = cfg.self_inner();
    let cross = norm(d) + norm(c) + d * ic + 2 * c * ic + ic * d + ffn;
    let selfb = norm(d) + 4 * d * is + ffn;
    let head = norm(d) + d * cfg.n_classes + cfg.n_classes;
    cfg.latent_rows() * d + cfg.depth * (cross + cfg.self_blocks * selfb) + head
}

fn ffn_flops(cfg: &ModelConfig, rows: u64) -> u64 {
    let d = cfg.latent_dim as u64;
    let h = cfg.ffn_hidden() as u64;
    NORM_COST * rows * d + 2 * rows * d * h + rows * h + GELU_COST * rows * h + 2 * rows * h * d + rows * d + rows * d
}

/// Attention core for `groups` blocks of `q` queries over `c` context rows each.
fn attention_core(heads: u64, head_dim: u64, groups: u64, q: u64, c: u64, masked: bool) -> u64 {
    let per_score = 2 * head_dim + 1 + SOFTMAX_COST + 2 * head_dim + masked as u64;
    groups * heads * q * c * per_score
}

/// Forward FLOPs for `n_tokens` tokens of width `token_width`, split into
/// `segments` (ignored for the global layout). Padding slots count as tokens.
pub fn estimate_flops(cfg: &ModelConfig, segments: usize, n_tokens: usize, token_width: usize) -> Result<u64> {
    cfg.validate()?;
    let d = cfg.latent_dim as u64;
    let cw = token_width as u64;
    let (q_rows, ctx_rows, groups, masked) = match cfg.mode {
        LatentMode::Segmented => {
            if segments == 0 || segments > n_tokens {
                return Err(Error::Config(format!("segment count {segments} outside [1, {n_tokens}]")));
            }
            let slot = segment_len(n_tokens, segments) as u64;
            (segments as u64, segments as u64 * slot, segments as u64, true)
        }
        LatentMode::Global { latents } => (latents as u64, n_tokens as u64, 1, false),
    };
    let (hc, dc, ic) = (cfg.cross_heads as u64, cfg.cross_head_dim as u64, cfg.cross_inner() as u64);
    let (hs, ds, is) = (cfg.self_heads as u64, cfg.self_head_dim as u64, cfg.self_inner() as u64);

    let cross = NORM_COST * q_rows * d
        + NORM_COST * ctx_rows * cw
        + 2 * q_rows * d * ic
        + 2 * 2 * ctx_rows * cw * ic
        + attention_core(hc, dc, groups, q_rows / groups, ctx_rows / groups, masked)
        + 2 * q_rows * ic * d
        + q_rows * d
        + ffn_flops(cfg, q_rows);
    let selfb = NORM_COST * q_rows * d
        + 3 * 2 * q_rows * d * is
        + attention_core(hs, ds, 1, q_rows, q_rows, false)
        + 2 * q_rows * is * d
        + q_rows * d
        + ffn_flops(cfg, q_rows);
    let pool = match cfg.pooling {
        Pooling::Mean => q_rows * d,
        Pooling::Last => 0,
    };
    let n = cfg.n_classes as u64;
    let head = pool + NORM_COST * d + 2 * d * n + n;
    Ok(cfg.depth as u64 * (cross + cfg.self_blocks as u64 * selfb) + head)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub iterations: usize,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Single-sample forward latency on the calling thread.
pub fn benchmark<T: Scalar>(
    model: &Model<T>,
    input: &PreparedInput<T>,
    warmup_iters: usize,
    timed_iters: usize,
) -> Result<LatencyStats> {
    if timed_iters == 0 {
        return Err(Error::Config("timed iterations must be at least 1".into()));
    }
    for _ in 0..warmup_iters {
        model.forward(input.as_input())?;
    }
    let mut times = Vec::with_capacity(timed_iters);
    for _ in 0..timed_iters {
        let start = Instant::now();
        let out = model.forward(input.as_input())?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    Ok(LatencyStats { mean_ms, p50_ms: percentile(&times, 0.5), p95_ms: percentile(&times, 0.95), iterations: timed_iters })
}

/// Samples per second with forward passes spread over the rayon pool.
pub fn parallel_throughput<T: Scalar>(model: &Model<T>, input: &PreparedInput<T>, samples: usize) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("throughput needs at least one sample".into()));
    }
    let start = Instant::now();
    (0..samples).into_par_iter().try_for_each(|_| model.forward(input.as_input()).map(|_| ()))?;
    Ok(samples as f64 / start.elapsed().as_secs_f64())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// `None` for the global latent layout
    pub segments: Option<usize>,
    pub input_shape: Vec<usize>,
    pub n_tokens: usize,
    pub token_width: usize,
    pub params: usize,
    pub params_millions: f64,
    pub gflops: f64,
    pub latency: Option<LatencyStats>,
    pub samples_per_second: Option<f64>,
    pub parallel_samples_per_second: Option<f64>,
    pub model: ModelConfig,
    pub flop_convention: String,
}

impl CostReport {
    /// Analytic columns only; latency is filled in by [`CostReport::with_latency`].
    pub fn analytic(cfg: &ModelConfig, segments: Option<usize>, input_shape: &[usize], n_tokens: usize, token_width: usize) -> Result<Self> {
        let params = count_params(cfg, token_width);
        let flops = estimate_flops(cfg, segments.unwrap_or(1), n_tokens, token_width)?;
        Ok(Self {
            segments,
            input_shape: input_shape.to_vec(),
            n_tokens,
            token_width,
            params,
            params_millions: params as f64 / 1e6,
            gflops: flops as f64 / 1e9,
            latency: None,
            samples_per_second: None,
            parallel_samples_per_second: None,
            model: cfg.clone(),
            flop_convention: FLOP_CONVENTION.to_string(),
        })
    }

    pub fn with_latency(mut self, stats: LatencyStats) -> Self {
        self.samples_per_second = Some(1e3 / stats.mean_ms);
        self.latency = Some(stats);
        self
    }

    fn segment_label(&self) -> String {
        self.segments.map_or_else(|| "-".to_string(), |s| s.to_string())
    }

    fn cells(&self) -> [String; 7] {
        let opt = |x: Option<f64>, prec: usize| x.map_or_else(|| "-".into(), |v| format!("{v:.prec$}"));
        [
            self.segment_label(),
            format!("{:.4}", self.params_millions),
            format!("{:.4}", self.gflops),
            opt(self.latency.as_ref().map(|l| l.mean_ms), 3),
            opt(self.latency.as_ref().map(|l| l.p50_ms), 3),
            opt(self.latency.as_ref().map(|l| l.p95_ms), 3),
            opt(self.samples_per_second, 1),
        ]
    }
}

const COLUMNS: [&str; 7] = ["#Segm.", "Params(M)", "GFLOPs", "Latency mean (ms)", "p50 (ms)", "p95 (ms)", "Samples/s"];

/// Aligned text table, one row per report.
pub fn render_table(reports: &[CostReport]) -> String {
    let rows: Vec<[String; 7]> = reports.iter().map(CostReport::cells).collect();
    let widths: Vec<usize> = (0..7)
        .map(|i| rows.iter().map(|r| r[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(COLUMNS.to_vec());
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn render_csv(reports: &[CostReport]) -> String {
    let mut out = String::from("segments,params,params_millions,gflops,latency_mean_ms,latency_p50_ms,latency_p95_ms,samples_per_second\n");
    for r in reports {
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.segments.map_or_else(String::new, |s| s.to_string()),
            r.params,
            r.params_millions,
            r.gflops,
            opt(r.latency.as_ref().map(|l| l.mean_ms)),
            opt(r.latency.as_ref().map(|l| l.p50_ms)),
            opt(r.latency.as_ref().map(|l| l.p95_ms)),
            opt(r.samples_per_second),
        ));
    }
    out
}
