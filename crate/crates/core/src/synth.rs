//! Synthetic workloads with planted vertical and slash structure.
//!
//! Every key and query is split into channels whose dot products contribute
//! additive logit terms:
//!
//! * channel 0: sink marker, `sink_gain` on the first `sink_count` keys;
//! * channel 1: vertical profile, `signal_gain` on a flat band of
//!   `band_width + 1` positions around each vertical position, with a
//!   one-position Gaussian shoulder;
//! * a bank of slash channels: keys carry a piecewise-linear position code
//!   over the stretch of the sequence that some query can reach, and the
//!   query at `t` lights the code around `t - o` for each slash offset `o`;
//! * the remaining channels: unit-norm noise keys (AR(1) along the sequence)
//!   against a slowly drifting unit query, scaled to a logit standard
//!   deviation of `noise_scale`.
//!
//! The slash code is a tent basis on a grid of spacing `B`, so the planted
//! logit depends on `t - i` only, up to interpolation error at the band
//! edges. `B` grows with the reachable stretch so that it fits in the
//! available channels without any two nodes sharing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LfpsError, Result};
use crate::numeric::{dot, softmax};
use crate::trace::{HeadPrefill, StepRecord, TraceFile, TraceHeader, ValueEncoding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_prefill: usize,
    pub steps: usize,
    pub head_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Absolute positions that every query favours.
    pub vertical_positions: Vec<usize>,
    /// Relative offsets `o >= 1`: the query at `t` favours key `t - o`.
    pub slash_offsets: Vec<usize>,
    /// Logit boost of planted structure.
    pub signal_gain: f64,
    /// Standard deviation of the unstructured logit component.
    pub noise_scale: f64,
    /// Width in positions of each planted band; zero plants single positions.
    pub band_width: usize,
    /// Sink logit per head (layer-major); missing entries are zero.
    pub sink_gains: Vec<f64>,
    /// Relative jitter applied to each sink key.
    pub sink_jitter: f64,
    /// AR(1) coefficient of the noise keys along the sequence.
    pub key_smoothness: f64,
    /// Per-step random-walk scale of the noise query direction.
    pub query_drift: f64,
    /// Upper bound on the number of slash channels.
    pub slash_channels: usize,
    pub prefill_window: usize,
    pub sink_count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_prefill: 4096,
            steps: 64,
            head_dim: 128,
            layers: 1,
            heads: 1,
            vertical_positions: vec![17, 900, 2500],
            slash_offsets: vec![64, 512],
            signal_gain: 8.0,
            noise_scale: 0.35,
            band_width: 32,
            sink_gains: Vec::new(),
            sink_jitter: 0.05,
            key_smoothness: 0.9,
            query_drift: 0.02,
            slash_channels: 96,
            prefill_window: 32,
            sink_count: 4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Slash channels actually used for this head dimension.
    pub fn slash_channel_count(&self) -> usize {
        if self.slash_offsets.is_empty() {
            return 0;
        }
        self.slash_channels.min(self.head_dim.saturating_sub(2) * 3 / 4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LfpsError::InvalidWorkload(m));
        if self.head_dim < 4 {
            return bad(format!("head dimension {} below 4", self.head_dim));
        }
        if self.layers == 0 || self.heads == 0 {
            return bad("zero layers or heads".into());
        }
        if self.n_prefill <= self.sink_count + self.prefill_window {
            return bad(format!(
                "n_prefill {} must exceed sink_count + prefill_window = {}",
                self.n_prefill,
                self.sink_count + self.prefill_window
            ));
        }
        if let Some(&p) = self
            .vertical_positions
            .iter()
            .find(|&&p| p < self.sink_count || p >= self.n_prefill)
        {
            return bad(format!(
                "vertical position {p} outside [{}, {})",
                self.sink_count, self.n_prefill
            ));
        }
        if let Some(&o) = self.slash_offsets.iter().find(|&&o| o == 0 || o >= self.n_prefill) {
            return bad(format!("slash offset {o} outside [1, {})", self.n_prefill));
        }
        if !self.slash_offsets.is_empty() && self.slash_channel_count() < 8 {
            return bad("head dimension too small for slash channels".into());
        }
        for (name, x) in [
            ("signal_gain", self.signal_gain),
            ("noise_scale", self.noise_scale),
            ("sink_jitter", self.sink_jitter),
            ("query_drift", self.query_drift),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(format!("{name} = {x}"));
            }
        }
        if !(0.0..1.0).contains(&self.key_smoothness) {
            return bad(format!("key_smoothness = {}", self.key_smoothness));
        }
        if self.sink_gains.iter().any(|g| !g.is_finite()) {
            return bad("non-finite sink gain".into());
        }
        Ok(())
    }
}

/// Tent-basis position code for the slash channels.
#[derive(Debug, Clone)]
struct SlashGrid {
    channels: usize,
    spacing: f64,
    /// Grid origin; keys outside `[lo, hi]` carry no slash code.
    lo: f64,
    hi: f64,
}

impl SlashGrid {
    fn new(spec: &SyntheticSpec) -> Option<Self> {
        let channels = spec.slash_channel_count();
        if channels == 0 {
            return None;
        }
        let half = spec.band_width as f64 / 2.0;
        let first_query = (spec.n_prefill - spec.prefill_window) as f64;
        let last_query = (spec.n_prefill + spec.steps) as f64;
        let max_o = *spec.slash_offsets.iter().max()? as f64;
        let min_o = *spec.slash_offsets.iter().min()? as f64;
        // reach of every band, padded for the ramps
        let span = (last_query - min_o) - (first_query - max_o) + 2.0 * half;
        // the padded range holds about span / B + 5 nodes; keeping that below
        // C means no channel is shared anywhere a query can reach
        let spacing = (span / (channels as f64 - 6.0)).max(1.0).ceil();
        let lo = first_query - max_o - half - 2.0 * spacing;
        let hi = last_query - min_o + half + 2.0 * spacing;
        Some(Self {
            channels,
            spacing,
            lo,
            hi,
        })
    }

    /// Adds the code of position `x`, scaled by `amp`, to `out`.
    fn add_code(&self, x: f64, amp: f64, out: &mut [f64]) {
        if x < self.lo || x > self.hi {
            return;
        }
        let u = (x - self.lo) / self.spacing;
        let b = u.floor();
        let f = u - b;
        let b = b as usize;
        out[b % self.channels] += amp * (1.0 - f);
        out[(b + 1) % self.channels] += amp * f;
    }

    /// Lights every node near the band `[m - half, m + half]` with a
    /// trapezoid of ramp width `spacing`.
    fn add_band(&self, m: f64, half: f64, out: &mut [f64]) {
        let first = ((m - half - self.spacing - self.lo) / self.spacing).floor().max(0.0) as usize;
        let last = ((m + half + self.spacing - self.lo) / self.spacing).ceil().max(0.0) as usize;
        for b in first..=last {
            let c = self.lo + b as f64 * self.spacing;
            let w = (1.0 - ((c - m).abs() - half) / self.spacing).clamp(0.0, 1.0);
            out[b % self.channels] += w;
        }
    }
}

struct HeadGen<'a> {
    spec: &'a SyntheticSpec,
    d: usize,
    grid: Option<SlashGrid>,
    noise_lo: usize,
    sink_gain: f64,
    rng: ChaCha8Rng,
    scale: f64,
    noise_key: Vec<f64>,
    noise_query: Vec<f64>,
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn round_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl<'a> HeadGen<'a> {
    fn new(spec: &'a SyntheticSpec, head: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(head as u64);
        let d = spec.head_dim;
        let grid = SlashGrid::new(spec);
        let noise_lo = 2 + grid.as_ref().map_or(0, |g| g.channels);
        let nd = d - noise_lo;
        let mut noise_key: Vec<f64> = (0..nd).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut noise_key);
        let mut noise_query: Vec<f64> = (0..nd).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut noise_query);
        Self {
            spec,
            d,
            grid,
            noise_lo,
            sink_gain: spec.sink_gains.get(head).copied().unwrap_or(0.0),
            rng,
            scale: (d as f64).sqrt(),
            noise_key,
            noise_query,
        }
    }

    fn vertical_profile(&self, i: usize) -> f64 {
        let half = self.spec.band_width as f64 / 2.0;
        self.spec
            .vertical_positions
            .iter()
            .map(|&c| {
                let excess = (i as f64 - c as f64).abs() - half;
                if excess <= 0.0 {
                    1.0
                } else if self.spec.band_width == 0 {
                    0.0
                } else {
                    (-excess * excess / 2.0).exp()
                }
            })
            .fold(0.0, f64::max)
    }

    fn key(&mut self, i: usize) -> Vec<f64> {
        let spec = self.spec;
        let mut k = vec![0.0; self.d];
        if i < spec.sink_count {
            let jitter: f64 = StandardNormal.sample(&mut self.rng);
            k[0] = self.sink_gain * self.scale * (1.0 + spec.sink_jitter * jitter);
        }
        k[1] = spec.signal_gain * self.scale * self.vertical_profile(i);
        if let Some(g) = &self.grid {
            g.add_code(i as f64, spec.signal_gain * self.scale, &mut k[2..self.noise_lo]);
        }
        let rho = spec.key_smoothness;
        let nd = self.d - self.noise_lo;
        let innov = (1.0 - rho * rho).sqrt() / (nd as f64).sqrt();
        for x in self.noise_key.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x = rho * *x + innov * z;
        }
        normalize(&mut self.noise_key);
        let amp = spec.noise_scale * self.scale * (nd as f64).sqrt();
        for (dst, src) in k[self.noise_lo..].iter_mut().zip(&self.noise_key) {
            *dst = amp * src;
        }
        k
    }

    /// Query issued at position `t`; advances the noise direction.
    fn query(&mut self, t: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.d];
        q[0] = 1.0;
        q[1] = 1.0;
        if let Some(g) = &self.grid {
            let half = self.spec.band_width as f64 / 2.0;
            for &o in &self.spec.slash_offsets {
                if let Some(m) = t.checked_sub(o) {
                    g.add_band(m as f64, half, &mut q[2..self.noise_lo]);
                }
            }
        }
        let drift = self.spec.query_drift;
        for x in self.noise_query.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x += drift * z;
        }
        normalize(&mut self.noise_query);
        q[self.noise_lo..].copy_from_slice(&self.noise_query);
        q
    }

    fn value(&mut self) -> Vec<f64> {
        (0..self.d).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }
}

/// Generates one head: prefill block plus per-step records.
fn generate_head(spec: &SyntheticSpec, head: usize) -> Result<(HeadPrefill, Vec<StepRecord>)> {
    let mut g = HeadGen::new(spec, head);
    let n = spec.n_prefill;
    let d = spec.head_dim;
    let s = spec.prefill_window;
    let sinks = spec.sink_count;
    let mut keys = Vec::with_capacity(n * d);
    let mut values = Vec::with_capacity(n * d);
    let mut widened_keys: Vec<f64> = Vec::with_capacity(n * d);
    for i in 0..n {
        let k = round_f32(&g.key(i));
        widened_keys.extend(k.iter().map(|&x| x as f64));
        keys.extend_from_slice(&k);
        values.extend_from_slice(&round_f32(&g.value()));
    }

    // the query at prefill position p sees keys 0..=p
    let inv = 1.0 / (d as f64).sqrt();
    let mut weights = Vec::with_capacity(s);
    let mut final_query = Vec::new();
    for p in n - s..n {
        let q32 = round_f32(&g.query(p));
        let q: Vec<f64> = q32.iter().map(|&x| x as f64).collect();
        let logits: Vec<f64> = (sinks..=p)
            .map(|i| dot(&q, &widened_keys[i * d..(i + 1) * d]) * inv)
            .collect();
        let mut w = softmax(&logits)?;
        w.resize(n - sinks, 0.0);
        weights.push(round_f32(&w));
        final_query = q32;
    }

    let mut steps = Vec::with_capacity(spec.steps);
    for j in 0..spec.steps {
        let t = n + j;
        steps.push(StepRecord {
            query: round_f32(&g.query(t)),
            key: round_f32(&g.key(t)),
            value: round_f32(&g.value()),
        });
    }
    Ok((
        HeadPrefill {
            keys,
            values,
            weights,
            final_query,
        },
        steps,
    ))
}

/// Builds a trace from `spec`. Output depends only on the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<TraceFile> {
    spec.validate()?;
    let heads = spec.layers * spec.heads;
    let mut prefill = Vec::with_capacity(heads);
    let mut per_head_steps = Vec::with_capacity(heads);
    for h in 0..heads {
        let (p, st) = generate_head(spec, h)?;
        prefill.push(p);
        per_head_steps.push(st.into_iter());
    }
    let steps = (0..spec.steps)
        .map(|_| per_head_steps.iter_mut().map(|it| it.next().unwrap()).collect())
        .collect();
    let trace = TraceFile {
        header: TraceHeader {
            layers: spec.layers as u64,
            heads: spec.heads as u64,
            head_dim: spec.head_dim as u64,
            n_prefill: spec.n_prefill as u64,
            steps: spec.steps as u64,
            encoding: ValueEncoding::F32,
            prefill_window: spec.prefill_window as u64,
            sink_count: spec.sink_count as u64,
        },
        prefill,
        steps,
    };
    trace.validate()?;
    Ok(trace)
}

/// Fraction of `indices` lying within distance 2 of another member.
pub fn clustering_fraction(indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let near = (0..sorted.len())
        .filter(|&i| {
            (i > 0 && sorted[i] - sorted[i - 1] <= 2) || (i + 1 < sorted.len() && sorted[i + 1] - sorted[i] <= 2)
        })
        .count();
    near as f64 / sorted.len() as f64
}
