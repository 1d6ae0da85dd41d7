//! Run reports: per-step records, aggregates and canonical JSON/CSV encoding.

use std::io;

use serde::{Deserialize, Serialize};

use crate::config::LfpsConfig;
use crate::error::{LfpsError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Lfps,
    TopkOracle,
    Full,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Lfps => "lfps",
            Mode::TopkOracle => "topk_oracle",
            Mode::Full => "full",
        }
    }
}

/// One head at one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub head: u64,
    pub context_len: u64,
    pub budget_k: u64,
    pub bypassed: bool,
    pub rho: f64,
    pub c0_len: u64,
    pub c1_len: u64,
    pub c2_len: u64,
    pub probe_len: u64,
    /// `|C1| / n`.
    pub candidate_fraction: f64,
    pub dropped_initial: u64,
    pub negative_events: u64,
    pub dot_products: u64,
    /// Overlap with the exact Top-k; absent without the oracle or when
    /// bypassed.
    pub eta: Option<f64>,
    /// Relative L2 error against full attention.
    pub output_error: Option<f64>,
    pub gate_ns: u64,
    pub threshold_ns: u64,
    pub select_ns: u64,
    pub expand_ns: u64,
    pub probe_ns: u64,
    pub output_ns: u64,
    pub update_ns: u64,
    pub append_ns: u64,
    pub total_ns: u64,
    /// Time of the exact Top-k reference on the same step.
    pub reference_ns: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub records: u64,
    pub scored_steps: u64,
    pub mean_eta: f64,
    pub median_eta: f64,
    pub mean_candidate_fraction: f64,
    pub bypass_rate: f64,
    pub mean_output_error: f64,
    pub max_output_error: f64,
    pub dropped_initial_total: u64,
    pub negative_events_total: u64,
    pub steps_per_sec_per_head: f64,
    pub tokens_per_sec: f64,
    pub reference_steps_per_sec_per_head: f64,
    pub reference_tokens_per_sec: f64,
    pub speedup: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn rate(count: usize, ns: u64) -> f64 {
    if ns == 0 {
        0.0
    } else {
        count as f64 * 1e9 / ns as f64
    }
}

impl Aggregates {
    /// `heads` is the number of heads that make up one token.
    pub fn from_records(records: &[StepRecord], heads: u64) -> Self {
        if records.is_empty() {
            return Self::default();
        }
        let etas: Vec<f64> = records.iter().filter_map(|r| r.eta).collect();
        let fractions: Vec<f64> = records
            .iter()
            .filter(|r| !r.bypassed)
            .map(|r| r.candidate_fraction)
            .collect();
        let errors: Vec<f64> = records.iter().filter_map(|r| r.output_error).collect();
        let bypassed = records.iter().filter(|r| r.bypassed).count();
        let total_ns: u64 = records.iter().map(|r| r.total_ns).sum();
        let reference: Vec<u64> = records.iter().filter_map(|r| r.reference_ns).collect();
        let reference_ns: u64 = reference.iter().sum();
        let steps_per_sec = rate(records.len(), total_ns);
        let reference_rate = rate(reference.len(), reference_ns);
        let heads = heads.max(1) as f64;
        Self {
            records: records.len() as u64,
            scored_steps: etas.len() as u64,
            mean_eta: mean(&etas),
            median_eta: median(&etas),
            mean_candidate_fraction: mean(&fractions),
            bypass_rate: bypassed as f64 / records.len() as f64,
            mean_output_error: mean(&errors),
            max_output_error: errors.iter().cloned().fold(0.0, f64::max),
            dropped_initial_total: records.iter().map(|r| r.dropped_initial).sum(),
            negative_events_total: records.iter().map(|r| r.negative_events).sum(),
            steps_per_sec_per_head: steps_per_sec,
            tokens_per_sec: steps_per_sec / heads,
            reference_steps_per_sec_per_head: reference_rate,
            reference_tokens_per_sec: reference_rate / heads,
            speedup: if steps_per_sec > 0.0 && reference_rate > 0.0 {
                steps_per_sec / reference_rate
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Calls into the sort-based Top-k oracle and the full-attention oracle.
    pub oracle_invocations: u64,
    /// Exact Top-k reference steps run for timing.
    pub reference_invocations: u64,
    /// Steps that went through the LFPS pipeline.
    pub lfps_steps: u64,
    /// Non-bypassed LFPS steps whose dot-product count broke
    /// `|probe| + local_window + sink_count + 1`.
    pub work_bound_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub layers: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub n_prefill: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub budget: f64,
    pub oracle: bool,
    pub threads: u64,
    pub config: LfpsConfig,
    pub trace: TraceSummary,
    pub aggregates: Aggregates,
    pub counters: Counters,
    pub records: Vec<StepRecord>,
}

/// Writes every float with 17 significant digits so that a parse/emit cycle
/// reproduces the document byte for byte.
struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

/// Canonical JSON: fixed field order and 17-digit floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats);
    value
        .serialize(&mut ser)
        .map_err(|e| LfpsError::Report(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn float_field(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

const CSV_HEADER: [&str; 26] = [
    "step",
    "head",
    "context_len",
    "budget_k",
    "bypassed",
    "rho",
    "c0_len",
    "c1_len",
    "c2_len",
    "probe_len",
    "candidate_fraction",
    "dropped_initial",
    "negative_events",
    "dot_products",
    "eta",
    "output_error",
    "gate_ns",
    "threshold_ns",
    "select_ns",
    "expand_ns",
    "probe_ns",
    "output_ns",
    "update_ns",
    "append_ns",
    "total_ns",
    "reference_ns",
];

/// One CSV row per record; empty cells for absent values.
pub fn records_csv<W: io::Write>(records: &[StepRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| LfpsError::Report(e.to_string());
    out.write_record(CSV_HEADER).map_err(err)?;
    for r in records {
        out.write_record([
            r.step.to_string(),
            r.head.to_string(),
            r.context_len.to_string(),
            r.budget_k.to_string(),
            r.bypassed.to_string(),
            float_field(r.rho),
            r.c0_len.to_string(),
            r.c1_len.to_string(),
            r.c2_len.to_string(),
            r.probe_len.to_string(),
            float_field(r.candidate_fraction),
            r.dropped_initial.to_string(),
            r.negative_events.to_string(),
            r.dot_products.to_string(),
            opt(r.eta.map(float_field)),
            opt(r.output_error.map(float_field)),
            r.gate_ns.to_string(),
            r.threshold_ns.to_string(),
            r.select_ns.to_string(),
            r.expand_ns.to_string(),
            r.probe_ns.to_string(),
            r.output_ns.to_string(),
            r.update_ns.to_string(),
            r.append_ns.to_string(),
            r.total_ns.to_string(),
            opt(r.reference_ns),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}
