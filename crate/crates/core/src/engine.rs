//! Per-head decoding sessions.
//!
//! A [`HeadSession`] owns one head's KV store, score tables and prefill
//! priors. Heads are independent: batches and layers are collections of
//! sessions, each driven by a single worker at a time.

use std::hash::{Hash, Hasher};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{attention_from_logits, probe_logits, topk_of, AttentionOutput};
use crate::candidates::{dropped_initial, expand, finalize_probe_set, select_initial, CandidateSet};
use crate::config::LfpsConfig;
use crate::error::{check_dim, LfpsError, Result};
use crate::gate::{bypass_from_gate, compute_head_stats, evaluate_gate, HeadStats, SparsityEstimate};
use crate::numeric::softmax;
use crate::store::KvStore;
use crate::tables::{ScoreTablePair, TableSnapshot, ThresholdPair};

/// Wall-clock nanoseconds spent in each stage of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub gate_ns: u64,
    pub threshold_ns: u64,
    pub select_ns: u64,
    pub expand_ns: u64,
    pub probe_ns: u64,
    pub output_ns: u64,
    pub update_ns: u64,
    pub append_ns: u64,
    pub total_ns: u64,
}

/// Key dot products performed in one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotCounts {
    /// Sink keys, the mean key and the local window.
    pub gate: usize,
    /// One per probe-set member.
    pub probe: usize,
}

impl DotCounts {
    pub fn total(&self) -> usize {
        self.gate + self.probe
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutput {
    Attention(AttentionOutput),
    Bypass(Vec<f64>),
}

impl StepOutput {
    pub fn vector(&self) -> &[f64] {
        match self {
            StepOutput::Attention(a) => &a.output,
            StepOutput::Bypass(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub step: u64,
    /// Rows in the store when the step was evaluated (before the append).
    pub context_len: usize,
    pub output: StepOutput,
    /// Empty when bypassed.
    pub candidates: CandidateSet,
    pub probe_len: usize,
    pub bypassed: bool,
    pub sparsity: SparsityEstimate,
    pub thresholds: Option<ThresholdPair>,
    /// Members of C0 removed by the mean filter in expansion.
    pub dropped_initial: usize,
    pub negative_events: u64,
    pub dots: DotCounts,
    pub timings: StageTimings,
}

/// One decode-step input: the query plus the key/value row it produces.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub query: &'a [f64],
    pub key: &'a [f64],
    pub value: &'a [f64],
}

/// Results of [`HeadSession::run`]; `error` is set if a step failed, in
/// which case `results` holds the steps that completed before it.
#[derive(Debug)]
pub struct SessionRun {
    pub results: Vec<StepResult>,
    pub error: Option<LfpsError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub step: u64,
    pub context_len: usize,
    pub tables: TableSnapshot,
    pub stats: HeadStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSession {
    config: LfpsConfig,
    store: KvStore,
    tables: ScoreTablePair,
    stats: HeadStats,
    step: u64,
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos() as u64
}

impl HeadSession {
    /// Builds a session from prefill state already in host memory.
    ///
    /// `prefill_weights` are the attention weights of the last `s` prefill
    /// steps over the non-sink range, oldest first.
    pub fn prefill<W: AsRef<[f64]>>(
        store: KvStore,
        prefill_weights: &[W],
        last_query: &[f64],
        config: LfpsConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_dim("key/value store", config.head_dim, store.dim())?;
        let n = store.len();
        let floor = config.sink_count + config.prefill_window;
        if n <= floor {
            return Err(LfpsError::InsufficientContext {
                what: "prefill bootstrap",
                required: floor,
                available: n,
            });
        }
        if let Some(w) = prefill_weights.first() {
            check_dim("prefill weight vector length", n - config.sink_count, w.as_ref().len())?;
        }
        let tables = ScoreTablePair::init(prefill_weights, &config)?;
        let stats = compute_head_stats(&store, last_query, &config)?;
        Ok(Self {
            config,
            store,
            tables,
            stats,
            step: 0,
        })
    }

    pub fn config(&self) -> &LfpsConfig {
        &self.config
    }

    pub fn store(&self) -> &KvStore {
        &self.store
    }

    pub fn tables(&self) -> &ScoreTablePair {
        &self.tables
    }

    pub fn stats(&self) -> &HeadStats {
        &self.stats
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            step: self.step,
            context_len: self.store.len(),
            tables: self.tables.snapshot(),
            stats: self.stats.clone(),
        }
    }

    /// Hash over every bit of session state.
    pub fn state_digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.step.hash(&mut h);
        let snap = self.tables.snapshot();
        for x in self
            .store
            .keys()
            .iter()
            .chain(self.store.values())
            .chain(&snap.vertical)
            .chain(&snap.slash)
            .chain(&snap.slash_carry)
            .chain(&self.stats.mean_key)
            .chain(&self.stats.mean_value)
        {
            x.to_bits().hash(&mut h);
        }
        self.stats.sigma_hat_sq.to_bits().hash(&mut h);
        snap.shift.hash(&mut h);
        h.finish()
    }

    /// One decoding step for this head.
    ///
    /// Runs the sparsity gate; a bypassed head returns the bypass output and
    /// leaves the tables untouched. Otherwise thresholds, initial selection,
    /// expansion, local-window merge, exact Top-k over the probe set,
    /// attention output and the table update run in order. Finally the new
    /// key/value row is appended and the tables grow by one slot.
    ///
    /// On error the session is left exactly as it was.
    pub fn decode_step(&mut self, q: &[f64], key: &[f64], value: &[f64], k_fraction: f64) -> Result<StepResult> {
        let d = self.store.dim();
        check_dim("query", d, q.len())?;
        check_dim("new key", d, key.len())?;
        check_dim("new value", d, value.len())?;
        if !(k_fraction.is_finite() && k_fraction >= 0.0) {
            return Err(LfpsError::InvalidConfig(format!("budget fraction {k_fraction}")));
        }

        let start = Instant::now();
        let mut timings = StageTimings::default();
        let n = self.store.len();
        let budget_k = LfpsConfig::budget(k_fraction, n);
        let negatives_before = self.tables.negative_events();

        let t = Instant::now();
        let gate = evaluate_gate(q, &self.store, &self.stats, &self.config)?;
        timings.gate_ns = elapsed_ns(t);

        if gate.estimate.rho > self.config.epsilon {
            let output = bypass_from_gate(&gate, &self.stats, &self.config);
            let t = Instant::now();
            self.store.append(key, value)?;
            self.tables.grow();
            timings.append_ns = elapsed_ns(t);
            timings.total_ns = elapsed_ns(start);
            let step = self.step;
            self.step += 1;
            return Ok(StepResult {
                step,
                context_len: n,
                output: StepOutput::Bypass(output),
                candidates: CandidateSet {
                    budget_k,
                    ..CandidateSet::default()
                },
                probe_len: 0,
                bypassed: true,
                sparsity: gate.estimate,
                thresholds: None,
                dropped_initial: 0,
                negative_events: 0,
                dots: DotCounts {
                    gate: gate.dot_products,
                    probe: 0,
                },
                timings,
            });
        }

        let t = Instant::now();
        let thresholds = self.tables.thresholds(&self.config);
        timings.threshold_ns = elapsed_ns(t);

        let t = Instant::now();
        let c0 = select_initial(&self.tables, &thresholds);
        timings.select_ns = elapsed_ns(t);

        let t = Instant::now();
        let c1 = expand(&c0, &self.tables, &thresholds, &self.config);
        timings.expand_ns = elapsed_ns(t);

        let t = Instant::now();
        let probe = finalize_probe_set(&c1, n, &self.config);
        let logits = probe_logits(q, &self.store, &probe);
        let top = topk_of(probe.iter().copied().zip(logits), budget_k);
        timings.probe_ns = elapsed_ns(t);

        let t = Instant::now();
        let mut entries: Vec<(usize, f64)> = gate.sink_logits.iter().copied().enumerate().collect();
        entries.extend_from_slice(&top);
        let attention = attention_from_logits(&self.store, &entries)?;
        timings.output_ns = elapsed_ns(t);

        // table weights come from C2 alone so that they sum to one
        let t = Instant::now();
        let c2: Vec<usize> = top.iter().map(|e| e.0).collect();
        let top_logits: Vec<f64> = top.iter().map(|e| e.1).collect();
        let weights = softmax(&top_logits)?;
        self.tables.update(&c2, &weights, &self.config)?;
        timings.update_ns = elapsed_ns(t);

        // nothing below can fail: dimensions were checked on entry
        let t = Instant::now();
        self.store.append(key, value)?;
        self.tables.grow();
        timings.append_ns = elapsed_ns(t);
        timings.total_ns = elapsed_ns(start);

        let step = self.step;
        self.step += 1;
        Ok(StepResult {
            step,
            context_len: n,
            output: StepOutput::Attention(attention),
            dropped_initial: dropped_initial(&c0, &c1),
            candidates: CandidateSet { c0, c1, c2, budget_k },
            probe_len: probe.len(),
            bypassed: false,
            sparsity: gate.estimate,
            thresholds: Some(thresholds),
            negative_events: self.tables.negative_events() - negatives_before,
            dots: DotCounts {
                gate: gate.dot_products,
                probe: probe.len(),
            },
            timings,
        })
    }

    /// Applies [`decode_step`](Self::decode_step) to each input in order,
    /// stopping at the first failure.
    pub fn run<'a>(&mut self, inputs: impl IntoIterator<Item = StepInput<'a>>, k_fraction: f64) -> SessionRun {
        let mut results = Vec::new();
        for (i, input) in inputs.into_iter().enumerate() {
            match self.decode_step(input.query, input.key, input.value, k_fraction) {
                Ok(r) => results.push(r),
                Err(e) => {
                    return SessionRun {
                        results,
                        error: Some(LfpsError::Step {
                            step: i,
                            head: 0,
                            source: Box::new(e),
                        }),
                    }
                }
            }
        }
        SessionRun { results, error: None }
    }

    /// Appends a row without running the pipeline (used by reference modes).
    pub fn append_only(&mut self, key: &[f64], value: &[f64]) -> Result<()> {
        self.store.append(key, value)?;
        self.tables.grow();
        self.step += 1;
        Ok(())
    }
}
