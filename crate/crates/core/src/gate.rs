//! Per-head sparsity gate.
//!
//! A head's sink share is estimated from three masses, all in log space:
//!
//! * sink: `sum_s exp(q . K_s / sqrt d)` over the pinned sink rows,
//! * global: `n' * exp(q . Kbar / sqrt d + |q|^2 sigma^2 / 2)` where `n'` is the
//!   non-sink row count. If the non-sink logits are treated as normal with the
//!   prefill variance, the arithmetic mean of their exponentials is the
//!   geometric mean times `exp(sigma^2 / 2)`.
//! * local: `sum exp(q . K_i / sqrt d)` over the last `local_window` rows.
//!
//! `rho = sink / (sink + global + local)`; heads with `rho > epsilon` skip
//! selection and return [`bypass_output`].

use serde::{Deserialize, Serialize};

use crate::config::{BypassMode, LfpsConfig};
use crate::error::{check_dim, LfpsError, Result};
use crate::numeric::{dot, softmax};
use crate::store::KvStore;

/// Priors captured at the end of prefill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStats {
    pub sink_count: usize,
    /// `sink_count x d`, row-major.
    pub sink_keys: Vec<f64>,
    pub sink_values: Vec<f64>,
    pub mean_key: Vec<f64>,
    pub mean_value: Vec<f64>,
    /// Logit variance at the last prefill step divided by `|q|^2`.
    pub sigma_hat_sq: f64,
}

impl HeadStats {
    pub fn dim(&self) -> usize {
        self.mean_key.len()
    }

    fn sink_key(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.sink_keys[s * d..(s + 1) * d]
    }

    fn sink_value(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.sink_values[s * d..(s + 1) * d]
    }
}

pub fn compute_head_stats(store: &KvStore, last_query: &[f64], config: &LfpsConfig) -> Result<HeadStats> {
    let d = store.dim();
    check_dim("last prefill query", d, last_query.len())?;
    let n = store.len();
    let sinks = config.sink_count;
    if n <= sinks + 1 {
        return Err(LfpsError::InsufficientContext {
            what: "head statistics",
            required: sinks + 1,
            available: n,
        });
    }
    let q_norm_sq = dot(last_query, last_query);
    if q_norm_sq == 0.0 {
        return Err(LfpsError::ZeroNormQuery);
    }

    let tracked = n - sinks;
    let mut mean_key = vec![0.0; d];
    let mut mean_value = vec![0.0; d];
    for i in sinks..n {
        for (m, x) in mean_key.iter_mut().zip(store.key(i)) {
            *m += x;
        }
        for (m, x) in mean_value.iter_mut().zip(store.value(i)) {
            *m += x;
        }
    }
    for x in mean_key.iter_mut().chain(mean_value.iter_mut()) {
        *x /= tracked as f64;
    }

    let scale = config.inv_sqrt_d();
    let logits: Vec<f64> = (sinks..n).map(|i| dot(last_query, store.key(i)) * scale).collect();
    let mean = logits.iter().sum::<f64>() / tracked as f64;
    let var = logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / tracked as f64;

    Ok(HeadStats {
        sink_count: sinks,
        sink_keys: store.keys()[..sinks * d].to_vec(),
        sink_values: store.values()[..sinks * d].to_vec(),
        mean_key,
        mean_value,
        sigma_hat_sq: var / q_norm_sq,
    })
}

/// Estimated attention masses (natural logs) and the resulting sink share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityEstimate {
    pub log_w_sink: f64,
    pub log_w_global: f64,
    pub log_w_local: f64,
    pub rho: f64,
}

impl SparsityEstimate {
    pub fn from_log_masses(log_w_sink: f64, log_w_global: f64, log_w_local: f64) -> Result<Self> {
        let max = log_w_sink.max(log_w_global).max(log_w_local);
        let (s, g, l) = (
            (log_w_sink - max).exp(),
            (log_w_global - max).exp(),
            (log_w_local - max).exp(),
        );
        let rho = s / (s + g + l);
        if !rho.is_finite() {
            return Err(LfpsError::NonFinite("sparsity estimate"));
        }
        Ok(Self {
            log_w_sink,
            log_w_global,
            log_w_local,
            rho,
        })
    }

    pub fn w_sink(&self) -> f64 {
        self.log_w_sink.exp()
    }

    pub fn w_global(&self) -> f64 {
        self.log_w_global.exp()
    }

    pub fn w_local(&self) -> f64 {
        self.log_w_local.exp()
    }
}

/// Gate result together with the logits it computed, so that the bypass
/// output can reuse them without further dot products.
#[derive(Debug, Clone)]
pub(crate) struct GateEvaluation {
    pub estimate: SparsityEstimate,
    pub sink_logits: Vec<f64>,
    /// `q . Kbar / sqrt d + |q|^2 sigma^2 / 2` (per-row mass, before the `n'` factor).
    pub mean_logit: f64,
    pub tracked: usize,
    pub dot_products: usize,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn evaluate_gate(
    q: &[f64],
    store: &KvStore,
    stats: &HeadStats,
    config: &LfpsConfig,
) -> Result<GateEvaluation> {
    let d = store.dim();
    check_dim("query", d, q.len())?;
    check_dim("head statistics", d, stats.dim())?;
    let n = store.len();
    let sinks = stats.sink_count;
    let local = config.local_window;
    if n <= sinks + local {
        return Err(LfpsError::InsufficientContext {
            what: "sparsity estimate",
            required: sinks + local,
            available: n,
        });
    }
    let scale = config.inv_sqrt_d();
    let sink_logits: Vec<f64> = (0..sinks).map(|s| dot(q, stats.sink_key(s)) * scale).collect();
    let q_norm_sq = dot(q, q);
    let mean_logit = dot(q, &stats.mean_key) * scale + 0.5 * q_norm_sq * stats.sigma_hat_sq;
    let local_logits: Vec<f64> = (n - local..n).map(|i| dot(q, store.key(i)) * scale).collect();
    let tracked = n - sinks;

    let estimate = SparsityEstimate::from_log_masses(
        log_sum_exp(&sink_logits),
        mean_logit + (tracked as f64).ln(),
        log_sum_exp(&local_logits),
    )?;
    Ok(GateEvaluation {
        estimate,
        sink_logits,
        mean_logit,
        tracked,
        // |q|^2 is a norm, not a key product
        dot_products: sinks + 1 + local,
    })
}

pub fn estimate_sparsity(
    q: &[f64],
    store: &KvStore,
    stats: &HeadStats,
    config: &LfpsConfig,
) -> Result<SparsityEstimate> {
    evaluate_gate(q, store, stats, config).map(|g| g.estimate)
}

pub(crate) fn bypass_from_gate(gate: &GateEvaluation, stats: &HeadStats, config: &LfpsConfig) -> Vec<f64> {
    match config.bypass_mode {
        BypassMode::MeanOnly => stats.mean_value.clone(),
        BypassMode::SinkAverage => {
            let mut logits = gate.sink_logits.clone();
            logits.push(gate.mean_logit + (gate.tracked as f64).ln());
            let weights = match softmax(&logits) {
                Ok(w) => w,
                // overflowing logits: fall back to the mean
                Err(_) => return stats.mean_value.clone(),
            };
            let mut out = vec![0.0; stats.dim()];
            for (s, w) in weights[..stats.sink_count].iter().enumerate() {
                for (o, v) in out.iter_mut().zip(stats.sink_value(s)) {
                    *o += w * v;
                }
            }
            let wm = weights[stats.sink_count];
            for (o, v) in out.iter_mut().zip(&stats.mean_value) {
                *o += wm * v;
            }
            out
        }
    }
}

/// Output returned for a bypassed head over a context with `tracked`
/// non-sink rows.
///
/// `SinkAverage` blends each sink value and the mean value with weights
/// proportional to their estimated attention masses; `MeanOnly` returns the
/// mean value vector.
pub fn bypass_output(q: &[f64], stats: &HeadStats, tracked: usize, config: &LfpsConfig) -> Result<Vec<f64>> {
    check_dim("query", stats.dim(), q.len())?;
    let scale = config.inv_sqrt_d();
    let gate = GateEvaluation {
        estimate: SparsityEstimate::from_log_masses(0.0, 0.0, 0.0)?,
        sink_logits: (0..stats.sink_count)
            .map(|s| dot(q, stats.sink_key(s)) * scale)
            .collect(),
        mean_logit: dot(q, &stats.mean_key) * scale + 0.5 * dot(q, q) * stats.sigma_hat_sq,
        tracked,
        dot_products: 0,
    };
    Ok(bypass_from_gate(&gate, stats, config))
}
