//! Exact attention over index subsets, the full-context references, and the
//! overlap/error metrics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::candidates::intersection_count;
use crate::error::{check_dim, LfpsError, Result};
use crate::numeric::{dot, dot_scalar, softmax};
use crate::store::KvStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionOutput {
    pub output: Vec<f64>,
    /// `(position, weight)` in ascending position order.
    pub weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub eta: f64,
    pub k: usize,
    pub intersection: usize,
}

/// Heap entry ordered so the *worst* candidate sits on top: lower logit is
/// worse, and among equal logits the higher index is worse.
#[derive(Debug, Clone, Copy)]
struct Ranked {
    logit: f64,
    index: usize,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        other.logit.total_cmp(&self.logit).then(self.index.cmp(&other.index))
    }
}

/// Scaled logits `q . K_i / sqrt d` for `probe`, in probe order.
pub(crate) fn probe_logits(q: &[f64], store: &KvStore, probe: &[usize]) -> Vec<f64> {
    let scale = 1.0 / (store.dim() as f64).sqrt();
    probe.iter().map(|&i| dot(q, store.key(i)) * scale).collect()
}

/// Bounded Top-k over precomputed `(index, logit)` pairs. Returns the winners
/// sorted by index.
pub(crate) fn topk_of(scored: impl IntoIterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for (index, logit) in scored {
        let cand = Ranked { logit, index };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            // `cand < worst` in heap order means cand ranks better
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    let mut out: Vec<(usize, f64)> = heap.into_iter().map(|r| (r.index, r.logit)).collect();
    out.sort_unstable_by_key(|e| e.0);
    out
}

fn check_probe(store: &KvStore, probe: &[usize]) -> Result<()> {
    if probe.is_empty() {
        return Err(LfpsError::Empty("probe set"));
    }
    let n = store.len();
    if let Some(&bad) = probe.iter().find(|&&i| i >= n) {
        return Err(LfpsError::IndexOutOfRange {
            index: bad,
            lo: 0,
            hi: n,
        });
    }
    Ok(())
}

/// Exact Top-k restricted to `probe`: the `min(k, |probe|)` members with the
/// largest logits, lower index first on ties. Cost is `O(|probe| d)`.
pub fn exact_topk_restricted(q: &[f64], store: &KvStore, probe: &[usize], k: usize) -> Result<Vec<usize>> {
    check_dim("query", store.dim(), q.len())?;
    check_probe(store, probe)?;
    if k == 0 {
        return Err(LfpsError::Empty("top-k budget"));
    }
    let logits = probe_logits(q, store, probe);
    Ok(topk_of(probe.iter().copied().zip(logits), k)
        .into_iter()
        .map(|e| e.0)
        .collect())
}

/// Softmax-weighted output from `(position, logit)` pairs sorted by position.
pub(crate) fn attention_from_logits(store: &KvStore, entries: &[(usize, f64)]) -> Result<AttentionOutput> {
    let logits: Vec<f64> = entries.iter().map(|e| e.1).collect();
    let weights = softmax(&logits)?;
    let mut output = vec![0.0; store.dim()];
    for (&(i, _), &w) in entries.iter().zip(&weights) {
        for (o, v) in output.iter_mut().zip(store.value(i)) {
            *o += w * v;
        }
    }
    Ok(AttentionOutput {
        output,
        weights: entries.iter().map(|e| e.0).zip(weights).collect(),
    })
}

/// Attention over `selected` (sorted) plus the first `sink_count` rows, with
/// one joint softmax, accumulated in ascending position order.
pub fn attention_output(q: &[f64], store: &KvStore, selected: &[usize], sink_count: usize) -> Result<AttentionOutput> {
    check_dim("query", store.dim(), q.len())?;
    check_probe(store, selected)?;
    let sinks: Vec<usize> = (0..sink_count.min(store.len())).collect();
    let support = crate::candidates::union_sorted(&sinks, selected);
    let logits = probe_logits(q, store, &support);
    let entries: Vec<(usize, f64)> = support.into_iter().zip(logits).collect();
    attention_from_logits(store, &entries)
}

/// Production-speed exact Top-k attention: every non-sink logit, a bounded
/// heap, then the joint softmax with the sinks. This is the baseline LFPS
/// is timed against.
pub fn exact_topk_attention(
    q: &[f64],
    store: &KvStore,
    k: usize,
    sink_count: usize,
) -> Result<(Vec<usize>, AttentionOutput)> {
    check_dim("query", store.dim(), q.len())?;
    let n = store.len();
    if n <= sink_count {
        return Err(LfpsError::Empty("non-sink context"));
    }
    if k == 0 {
        return Err(LfpsError::Empty("top-k budget"));
    }
    let scale = 1.0 / (store.dim() as f64).sqrt();
    let sinks = sink_count.min(n);
    let mut entries: Vec<(usize, f64)> = (0..sinks).map(|i| (i, dot(q, store.key(i)) * scale)).collect();
    let top = topk_of((sinks..n).map(|i| (i, dot(q, store.key(i)) * scale)), k);
    let selected = top.iter().map(|e| e.0).collect();
    entries.extend(top);
    Ok((selected, attention_from_logits(store, &entries)?))
}

/// Reference full attention over every row, written for clarity.
pub fn full_attention_oracle(q: &[f64], store: &KvStore) -> Result<AttentionOutput> {
    check_dim("query", store.dim(), q.len())?;
    let n = store.len();
    if n == 0 {
        return Err(LfpsError::Empty("key/value store"));
    }
    let scale = 1.0 / (store.dim() as f64).sqrt();
    let logits: Vec<f64> = (0..n).map(|i| dot_scalar(q, store.key(i)) * scale).collect();
    let weights = softmax(&logits)?;
    let mut output = vec![0.0; store.dim()];
    for (i, w) in weights.iter().enumerate() {
        for (o, v) in output.iter_mut().zip(store.value(i)) {
            *o += w * v;
        }
    }
    Ok(AttentionOutput {
        output,
        weights: weights.into_iter().enumerate().collect(),
    })
}

/// Reference exact Top-k over all non-sink rows by full sort.
pub fn topk_oracle(q: &[f64], store: &KvStore, k: usize, sink_count: usize) -> Result<Vec<usize>> {
    check_dim("query", store.dim(), q.len())?;
    if k == 0 {
        return Err(LfpsError::Empty("top-k budget"));
    }
    let scale = 1.0 / (store.dim() as f64).sqrt();
    let mut scored: Vec<(usize, f64)> = (sink_count..store.len())
        .map(|i| (i, dot_scalar(q, store.key(i)) * scale))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut top: Vec<usize> = scored.into_iter().take(k).map(|e| e.0).collect();
    top.sort_unstable();
    Ok(top)
}

/// `eta = |c ∩ exact| / k`. Both sets must be sorted.
pub fn overlap_ratio(c: &[usize], exact: &[usize], k: usize) -> Result<OverlapReport> {
    if k == 0 {
        return Err(LfpsError::Empty("top-k budget"));
    }
    let intersection = intersection_count(c, exact);
    Ok(OverlapReport {
        eta: intersection as f64 / k as f64,
        k,
        intersection,
    })
}

/// Relative L2 error `|approx - exact| / max(|exact|, 1e-12)`.
pub fn output_error(approx: &[f64], exact: &[f64]) -> Result<f64> {
    check_dim("output", exact.len(), approx.len())?;
    let diff: f64 = approx
        .iter()
        .zip(exact)
        .map(|(a, e)| (a - e).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = exact.iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(diff / norm.max(1e-12))
}
