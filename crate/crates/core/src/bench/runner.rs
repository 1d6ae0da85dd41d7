//! Drives every head of a trace through one of the pipelines.

use std::time::Instant;

use rayon::prelude::*;

use super::report::{Aggregates, Counters, Mode, RunReport, StepRecord, TraceSummary, SCHEMA_VERSION};
use crate::attention::{exact_topk_attention, full_attention_oracle, output_error, overlap_ratio, topk_oracle};
use crate::config::LfpsConfig;
use crate::engine::{SessionSnapshot, StepResult};
use crate::error::{LfpsError, Result};
use crate::trace::{widen, TraceFile};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    /// Top-k budget as a fraction of the context.
    pub budget: f64,
    pub config: LfpsConfig,
    /// Score overlap and output error against the oracles.
    pub oracle: bool,
    /// Time the exact Top-k reference on every step.
    pub reference: bool,
    pub threads: usize,
}

impl RunOptions {
    pub fn new(config: LfpsConfig) -> Self {
        Self {
            mode: Mode::Lfps,
            budget: 0.02,
            config,
            oracle: true,
            reference: true,
            threads: 1,
        }
    }
}

#[derive(Debug, Default)]
struct HeadRun {
    records: Vec<StepRecord>,
    counters: Counters,
    snapshot: Option<SessionSnapshot>,
}

fn base_record(step: u64, head: u64, n: usize, budget_k: usize) -> StepRecord {
    StepRecord {
        step,
        head,
        context_len: n as u64,
        budget_k: budget_k as u64,
        bypassed: false,
        rho: 0.0,
        c0_len: 0,
        c1_len: 0,
        c2_len: 0,
        probe_len: 0,
        candidate_fraction: 0.0,
        dropped_initial: 0,
        negative_events: 0,
        dot_products: 0,
        eta: None,
        output_error: None,
        gate_ns: 0,
        threshold_ns: 0,
        select_ns: 0,
        expand_ns: 0,
        probe_ns: 0,
        output_ns: 0,
        update_ns: 0,
        append_ns: 0,
        total_ns: 0,
        reference_ns: None,
    }
}

fn fill_from_step(rec: &mut StepRecord, r: &StepResult) {
    let c = &r.candidates;
    rec.bypassed = r.bypassed;
    rec.rho = r.sparsity.rho;
    rec.c0_len = c.c0.len() as u64;
    rec.c1_len = c.c1.len() as u64;
    rec.c2_len = c.c2.len() as u64;
    rec.probe_len = r.probe_len as u64;
    rec.candidate_fraction = c.c1.len() as f64 / r.context_len as f64;
    rec.dropped_initial = r.dropped_initial as u64;
    rec.negative_events = r.negative_events;
    rec.dot_products = r.dots.total() as u64;
    let t = &r.timings;
    rec.gate_ns = t.gate_ns;
    rec.threshold_ns = t.threshold_ns;
    rec.select_ns = t.select_ns;
    rec.expand_ns = t.expand_ns;
    rec.probe_ns = t.probe_ns;
    rec.output_ns = t.output_ns;
    rec.update_ns = t.update_ns;
    rec.append_ns = t.append_ns;
    rec.total_ns = t.total_ns;
}

fn run_head(trace: &TraceFile, head: usize, opts: &RunOptions) -> Result<HeadRun> {
    let cfg = &opts.config;
    let mut session = trace.head_session(head, cfg)?;
    let sinks = cfg.sink_count;
    let mut out = HeadRun::default();
    for (t, step) in trace.steps.iter().enumerate() {
        let wrap = |e: LfpsError| LfpsError::Step {
            step: t,
            head,
            source: Box::new(e),
        };
        let input = &step[head];
        let q = widen(&input.query);
        let key = widen(&input.key);
        let value = widen(&input.value);
        let store = session.store();
        let n = store.len();
        let k = LfpsConfig::budget(opts.budget, n);
        let mut rec = base_record(t as u64, head as u64, n, k);

        let reference = if opts.reference || opts.mode == Mode::TopkOracle {
            let start = Instant::now();
            let r = exact_topk_attention(&q, store, k, sinks).map_err(wrap)?;
            let ns = start.elapsed().as_nanos() as u64;
            out.counters.reference_invocations += 1;
            rec.reference_ns = Some(ns);
            Some((r, ns))
        } else {
            None
        };
        let (exact_topk, full) = if opts.oracle {
            out.counters.oracle_invocations += 2;
            (
                Some(topk_oracle(&q, store, k, sinks).map_err(wrap)?),
                Some(full_attention_oracle(&q, store).map_err(wrap)?),
            )
        } else {
            (None, None)
        };

        match opts.mode {
            Mode::Lfps => {
                let r = session.decode_step(&q, &key, &value, opts.budget).map_err(wrap)?;
                out.counters.lfps_steps += 1;
                fill_from_step(&mut rec, &r);
                if !r.bypassed && r.dots.total() > r.probe_len + cfg.local_window + sinks + 1 {
                    out.counters.work_bound_violations += 1;
                }
                if let (Some(exact), false) = (&exact_topk, r.bypassed) {
                    let k_eff = k.min(n - sinks);
                    rec.eta = Some(overlap_ratio(&r.candidates.c2, exact, k_eff).map_err(wrap)?.eta);
                }
                if let Some(f) = &full {
                    rec.output_error = Some(output_error(r.output.vector(), &f.output).map_err(wrap)?);
                }
            }
            Mode::TopkOracle => {
                let ((selected, attn), ns) = reference.expect("reference runs in this mode");
                rec.c2_len = selected.len() as u64;
                rec.probe_len = (n - sinks) as u64;
                rec.candidate_fraction = (n - sinks) as f64 / n as f64;
                rec.dot_products = n as u64;
                rec.total_ns = ns;
                if let Some(f) = &full {
                    rec.output_error = Some(output_error(&attn.output, &f.output).map_err(wrap)?);
                }
                session.append_only(&key, &value).map_err(wrap)?;
            }
            Mode::Full => {
                let start = Instant::now();
                let attn = full_attention_oracle(&q, session.store()).map_err(wrap)?;
                rec.total_ns = start.elapsed().as_nanos() as u64;
                rec.probe_len = (n - sinks) as u64;
                rec.candidate_fraction = 1.0;
                rec.dot_products = n as u64;
                if let Some(f) = &full {
                    rec.output_error = Some(output_error(&attn.output, &f.output).map_err(wrap)?);
                }
                session.append_only(&key, &value).map_err(wrap)?;
            }
        }
        out.records.push(rec);
    }
    out.snapshot = Some(session.snapshot());
    Ok(out)
}

/// Output of [`run_trace`]: the report plus each head's final table state.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub snapshots: Vec<SessionSnapshot>,
}

/// Runs every head of `trace` and merges the records in `(step, head)` order.
pub fn run_trace(trace: &TraceFile, opts: &RunOptions) -> Result<RunOutcome> {
    opts.config.validate()?;
    if !(opts.budget.is_finite() && opts.budget > 0.0 && opts.budget <= 1.0) {
        return Err(LfpsError::InvalidConfig(format!(
            "budget {} outside (0, 1]",
            opts.budget
        )));
    }
    let heads = trace.head_count();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| LfpsError::InvalidConfig(e.to_string()))?;
    let runs: Vec<Result<HeadRun>> =
        pool.install(|| (0..heads).into_par_iter().map(|h| run_head(trace, h, opts)).collect());

    let mut records = Vec::with_capacity(heads * trace.steps.len());
    let mut counters = Counters::default();
    let mut snapshots = Vec::with_capacity(heads);
    for run in runs {
        let run = run?;
        records.extend(run.records);
        counters.oracle_invocations += run.counters.oracle_invocations;
        counters.reference_invocations += run.counters.reference_invocations;
        counters.lfps_steps += run.counters.lfps_steps;
        counters.work_bound_violations += run.counters.work_bound_violations;
        snapshots.extend(run.snapshot);
    }
    records.sort_by_key(|r| (r.step, r.head));

    let h = &trace.header;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        mode: opts.mode,
        budget: opts.budget,
        oracle: opts.oracle,
        threads: opts.threads.max(1) as u64,
        config: opts.config.clone(),
        trace: TraceSummary {
            layers: h.layers,
            heads: h.heads,
            head_dim: h.head_dim,
            n_prefill: h.n_prefill,
            steps: h.steps,
        },
        aggregates: Aggregates::from_records(&records, heads as u64),
        counters,
        records,
    };
    Ok(RunOutcome { report, snapshots })
}
