//! Vertical and slash score tables.
//!
//! Both tables hold one score per tracked (non-sink) position. Logical index
//! `i` corresponds to absolute position `base + i` where `base` is the sink
//! count.
//!
//! Two representation tricks keep a decode-step update at `O(|C2|)`:
//!
//! * Decay is lazy. Each table stores raw values and a scale; the logical score
//!   is `scale * raw`. Multiplying every entry by `r` is a single scale update,
//!   and the raw values are folded back once the scale drops below
//!   [`RENORM_FLOOR`].
//! * The slash table is a ring buffer. Shifting every entry one slot to the
//!   right moves the ring head back by one. The entry pushed past the end is
//!   not dropped: it is kept as a *carried* slot and becomes the score of the
//!   next appended position when the table grows. Without the carry the most
//!   recent diagonal would be discarded every step and the table sum would not
//!   follow `S' = r S + 1/2`.

use serde::{Deserialize, Serialize};

use crate::config::{LfpsConfig, NegativeScores, SelectionMode};
use crate::error::{LfpsError, Result};
use crate::numeric::Moments;

/// Once the lazy decay scale falls below this, raw values are rescaled.
pub const RENORM_FLOOR: f64 = 1e-30;

/// Tables whose centered second moment falls below this carry no pattern.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

/// Tolerance on `sum(weights) == 1` accepted by [`ScoreTablePair::update`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTablePair {
    base: usize,
    len: usize,
    vertical: Vec<f64>,
    vertical_scale: f64,
    // ring buffer; capacity is a power of two
    slash: Vec<f64>,
    slash_head: usize,
    slash_carry: usize,
    slash_scale: f64,
    shift: u64,
    negative_events: u64,
}

/// Threshold and mean for one pattern. `tau == None` marks a degenerate
/// (flat) table that contributes no initial candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternThreshold {
    pub mean: f64,
    pub kurtosis: Option<f64>,
    pub tau: Option<f64>,
}

impl PatternThreshold {
    pub fn is_degenerate(&self) -> bool {
        self.tau.is_none()
    }

    fn forced_open() -> Self {
        Self {
            mean: f64::NEG_INFINITY,
            kurtosis: None,
            tau: Some(f64::NEG_INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub vertical: PatternThreshold,
    pub slash: PatternThreshold,
}

/// Tables in logical index order, as stored in session snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSnapshot {
    pub base: usize,
    pub vertical: Vec<f64>,
    pub slash: Vec<f64>,
    /// Slash scores already shifted past the last tracked position.
    pub slash_carry: Vec<f64>,
    pub shift: u64,
}

/// Flatness-adjusted kurtosis without the `1/n` normalization:
/// `sum (x - mean)^4 / (sum (x - mean)^2)^2`.
pub fn kurtosis(m: &Moments) -> f64 {
    m.centered_sum4 / (m.centered_sum2 * m.centered_sum2)
}

fn pattern_threshold(parts: &[&[f64]], scale: f64, threshold_scale: f64) -> PatternThreshold {
    let raw = Moments::from_parts(parts);
    let mean = raw.mean * scale;
    if raw.count < 2 || raw.centered_sum2 * scale * scale < DEGENERATE_SPREAD {
        return PatternThreshold {
            mean,
            kurtosis: None,
            tau: None,
        };
    }
    // kurtosis is scale-free, so it can be taken on raw values directly
    let k = kurtosis(&raw);
    PatternThreshold {
        mean,
        kurtosis: Some(k),
        tau: Some(threshold_scale * mean / k),
    }
}

impl ScoreTablePair {
    /// Tables with `len` zero entries starting at absolute position `base`.
    pub fn zeros(base: usize, len: usize) -> Self {
        let cap = (len + 2).next_power_of_two();
        Self {
            base,
            len,
            vertical: vec![0.0; len],
            vertical_scale: 1.0,
            slash: vec![0.0; cap],
            slash_head: 0,
            slash_carry: 0,
            slash_scale: 1.0,
            shift: 0,
            negative_events: 0,
        }
    }

    /// Tables holding explicit logical values (no carried slash entries).
    pub fn from_values(base: usize, vertical: &[f64], slash: &[f64]) -> Result<Self> {
        if vertical.len() != slash.len() {
            return Err(LfpsError::DimensionMismatch {
                what: "slash table",
                expected: vertical.len(),
                got: slash.len(),
            });
        }
        let mut t = Self::zeros(base, vertical.len());
        t.vertical.copy_from_slice(vertical);
        t.slash[..slash.len()].copy_from_slice(slash);
        Ok(t)
    }

    /// Restores tables from a snapshot.
    pub fn from_snapshot(snap: &TableSnapshot) -> Result<Self> {
        let mut t = Self::from_values(snap.base, &snap.vertical, &snap.slash)?;
        t.ensure_slash_capacity(t.len + snap.slash_carry.len() + 2);
        for (j, &v) in snap.slash_carry.iter().enumerate() {
            let p = t.phys(t.len + j);
            t.slash[p] = v;
        }
        t.slash_carry = snap.slash_carry.len();
        t.shift = snap.shift;
        Ok(t)
    }

    /// Prefill initialization from the last `s` steps' attention weights.
    ///
    /// `weights` is chronological: `weights[s - 1]` is the final prefill step.
    /// Each vector covers the non-sink range and should sum to 1. Then
    ///
    /// ```text
    /// ver(i) = c * sum_j w[n-j][i]
    /// sla(i) = c * sum_j w[n-j][i-j+1]      (zero when i-j+1 < 0)
    /// c      = 1 / (2 s (1 - r))
    /// ```
    ///
    /// so each table sums to `1 / (2 (1 - r))` when the weights are causal.
    pub fn init<W: AsRef<[f64]>>(weights: &[W], config: &LfpsConfig) -> Result<Self> {
        let s = config.prefill_window;
        if weights.len() != s {
            return Err(LfpsError::DimensionMismatch {
                what: "prefill weight vector count",
                expected: s,
                got: weights.len(),
            });
        }
        let m = weights[0].as_ref().len();
        if m == 0 {
            return Err(LfpsError::Empty("prefill weight vector"));
        }
        for w in weights {
            let w = w.as_ref();
            if w.len() != m {
                return Err(LfpsError::DimensionMismatch {
                    what: "prefill weight vector length",
                    expected: m,
                    got: w.len(),
                });
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(LfpsError::NonFinite("prefill weights"));
            }
        }
        let coeff = 1.0 / (2.0 * s as f64 * (1.0 - config.decay));
        let mut vertical = vec![0.0; m];
        let mut slash = vec![0.0; m];
        for j in 1..=s {
            let w = weights[s - j].as_ref();
            for (acc, &x) in vertical.iter_mut().zip(w) {
                *acc += x;
            }
            // slot i reads w[i - (j - 1)]
            let lag = j - 1;
            if lag < m {
                for (acc, &x) in slash[lag..].iter_mut().zip(w) {
                    *acc += x;
                }
            }
        }
        for x in vertical.iter_mut().chain(slash.iter_mut()) {
            *x *= coeff;
        }
        Self::from_values(config.sink_count, &vertical, &slash)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Absolute position of logical index 0.
    pub fn base(&self) -> usize {
        self.base
    }

    /// Number of slash shifts applied so far.
    pub fn shift(&self) -> u64 {
        self.shift
    }

    /// Entries that went negative during updates (clamped ones included).
    pub fn negative_events(&self) -> u64 {
        self.negative_events
    }

    pub fn carried(&self) -> usize {
        self.slash_carry
    }

    #[inline]
    fn phys(&self, logical: usize) -> usize {
        (self.slash_head + logical) & (self.slash.len() - 1)
    }

    #[inline]
    pub fn vertical_score(&self, i: usize) -> f64 {
        self.vertical_scale * self.vertical[i]
    }

    #[inline]
    pub fn slash_score(&self, i: usize) -> f64 {
        debug_assert!(i < self.len + self.slash_carry);
        self.slash_scale * self.slash[self.phys(i)]
    }

    pub fn vertical_values(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.vertical_score(i)).collect()
    }

    pub fn slash_values(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.slash_score(i)).collect()
    }

    pub fn vertical_sum(&self) -> f64 {
        self.vertical_scale * self.vertical.iter().sum::<f64>()
    }

    /// Slash sum including carried entries.
    pub fn slash_sum(&self) -> f64 {
        let (a, b) = self.slash_parts(self.len + self.slash_carry);
        self.slash_scale * (a.iter().sum::<f64>() + b.iter().sum::<f64>())
    }

    pub fn snapshot(&self) -> TableSnapshot {
        TableSnapshot {
            base: self.base,
            vertical: self.vertical_values(),
            slash: self.slash_values(),
            slash_carry: (self.len..self.len + self.slash_carry)
                .map(|i| self.slash_score(i))
                .collect(),
            shift: self.shift,
        }
    }

    /// Raw ring contents for logical `[0, n)` as at most two slices.
    fn slash_parts(&self, n: usize) -> (&[f64], &[f64]) {
        let cap = self.slash.len();
        let start = self.slash_head;
        if start + n <= cap {
            (&self.slash[start..start + n], &[])
        } else {
            (&self.slash[start..], &self.slash[..start + n - cap])
        }
    }

    fn ensure_slash_capacity(&mut self, need: usize) {
        let cap = self.slash.len();
        if need <= cap {
            return;
        }
        let used = self.len + self.slash_carry;
        let new_cap = (need * 2).next_power_of_two();
        let mut buf = vec![0.0; new_cap];
        let (a, b) = self.slash_parts(used);
        buf[..a.len()].copy_from_slice(a);
        buf[a.len()..used].copy_from_slice(b);
        self.slash = buf;
        self.slash_head = 0;
    }

    fn decay_scale(scale: &mut f64, raw: &mut [f64], r: f64) {
        let next = *scale * r;
        if next < RENORM_FLOOR {
            for x in raw.iter_mut() {
                *x *= next;
            }
            *scale = 1.0;
        } else {
            *scale = next;
        }
    }

    /// Decayed update after a decode step.
    ///
    /// `selected` holds the final Top-k positions (absolute, strictly
    /// increasing) and `weights` their softmax weights, which must sum to 1.
    /// With `k = |selected|`, every entry decays by `r` and selected entries
    /// gain `w_i - 1/(2k)`; the slash table is first shifted one slot right.
    pub fn update(&mut self, selected: &[usize], weights: &[f64], config: &LfpsConfig) -> Result<()> {
        if selected.is_empty() {
            return Err(LfpsError::Empty("selected index set"));
        }
        if selected.len() != weights.len() {
            return Err(LfpsError::DimensionMismatch {
                what: "update weights",
                expected: selected.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LfpsError::NonFinite("update weights"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(LfpsError::WeightNormalization { sum });
        }
        let hi = self.base + self.len;
        let mut prev = None;
        for &p in selected {
            if p < self.base || p >= hi {
                return Err(LfpsError::IndexOutOfRange {
                    index: p,
                    lo: self.base,
                    hi,
                });
            }
            if prev.is_some_and(|q| q >= p) {
                return Err(LfpsError::UnsortedIndices);
            }
            prev = Some(p);
        }

        let r = config.decay;
        let half_share = 0.5 / selected.len() as f64;

        Self::decay_scale(&mut self.vertical_scale, &mut self.vertical, r);
        self.ensure_slash_capacity(self.len + self.slash_carry + 1);
        Self::decay_scale(&mut self.slash_scale, &mut self.slash, r);
        let mask = self.slash.len() - 1;
        self.slash_head = (self.slash_head + mask) & mask;
        debug_assert_eq!(self.slash[self.slash_head], 0.0);
        self.slash_carry += 1;
        self.shift += 1;

        let clamp = config.negative_scores == NegativeScores::Clamp;
        for (&p, &w) in selected.iter().zip(weights) {
            let i = p - self.base;
            let residual = w - half_share;

            let v = &mut self.vertical[i];
            *v += residual / self.vertical_scale;
            if *v < 0.0 {
                self.negative_events += 1;
                if clamp {
                    *v = 0.0;
                }
            }

            let slot = (self.slash_head + i) & mask;
            let s = &mut self.slash[slot];
            *s += residual / self.slash_scale;
            if *s < 0.0 {
                self.negative_events += 1;
                if clamp {
                    *s = 0.0;
                }
            }
        }
        Ok(())
    }

    /// Extends both tables by one tracked position. The vertical slot starts
    /// at zero; the slash slot takes the carried diagonal when one exists.
    pub fn grow(&mut self) {
        self.vertical.push(0.0);
        if self.slash_carry > 0 {
            self.slash_carry -= 1;
        } else {
            self.ensure_slash_capacity(self.len + 1);
        }
        self.len += 1;
        // keep room for the next shift so the update path never reallocates
        self.ensure_slash_capacity(self.len + self.slash_carry + 2);
    }

    /// Kurtosis-scaled thresholds `tau = a * mean / kurtosis` for both tables.
    pub fn thresholds(&self, config: &LfpsConfig) -> ThresholdPair {
        if config.selection == SelectionMode::Exhaustive {
            return ThresholdPair {
                vertical: PatternThreshold::forced_open(),
                slash: PatternThreshold::forced_open(),
            };
        }
        let a = config.threshold_scale;
        let (s0, s1) = self.slash_parts(self.len);
        ThresholdPair {
            vertical: pattern_threshold(&[&self.vertical], self.vertical_scale, a),
            slash: pattern_threshold(&[s0, s1], self.slash_scale, a),
        }
    }

    /// Pushes absolute positions whose vertical score exceeds `tau`, ascending.
    pub(crate) fn vertical_above(&self, tau: f64, out: &mut Vec<usize>) {
        let cut = tau / self.vertical_scale;
        for (i, &x) in self.vertical.iter().enumerate() {
            if x > cut {
                out.push(self.base + i);
            }
        }
    }

    /// Pushes absolute positions whose slash score exceeds `tau`, ascending.
    pub(crate) fn slash_above(&self, tau: f64, out: &mut Vec<usize>) {
        let cut = tau / self.slash_scale;
        let (a, b) = self.slash_parts(self.len);
        for (i, &x) in a.iter().chain(b).enumerate() {
            if x > cut {
                out.push(self.base + i);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cfg(s: usize, r: f64) -> LfpsConfig {
        LfpsConfig {
            prefill_window: s,
            decay: r,
            sink_count: 4,
            ..LfpsConfig::default()
        }
    }

    /// Causal weights: step `j` of `s` only covers the first `m - s + j + 1` slots.
    fn causal_weights(rng: &mut impl Rng, s: usize, m: usize) -> Vec<Vec<f64>> {
        (0..s)
            .map(|j| {
                let reach = m - s + j + 1;
                let mut w: Vec<f64> = (0..m)
                    .map(|i| if i < reach { rng.random::<f64>() } else { 0.0 })
                    .collect();
                let t: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= t);
                w
            })
            .collect()
    }

    #[test]
    fn normalization_coefficient() {
        // one-hot weights at slot 0 for every step: ver(0) = s * c
        let w: Vec<Vec<f64>> = (0..32).map(|_| vec![1.0, 0.0, 0.0]).collect();
        let t = ScoreTablePair::init(&w, &cfg(32, 0.95)).unwrap();
        assert!((t.vertical_score(0) / 32.0 - 0.3125).abs() < 1e-15);
        assert!((t.vertical_sum() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn initial_sums_hit_fixed_point() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let w = causal_weights(&mut rng, 32, 300);
        let t = ScoreTablePair::init(&w, &cfg(32, 0.95)).unwrap();
        assert!((t.vertical_sum() / 10.0 - 1.0).abs() < 1e-9);
        assert!((t.slash_sum() / 10.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn init_matches_hand_evaluation() {
        // s = 2, r = 0.5 -> c = 0.5
        let a = vec![0.2, 0.3, 0.5, 0.0]; // step n-2
        let b = vec![0.1, 0.2, 0.3, 0.4]; // step n-1
        let t = ScoreTablePair::init(&[a, b], &cfg(2, 0.5)).unwrap();
        let ver = t.vertical_values();
        let sla = t.slash_values();
        let want_ver = [0.15, 0.25, 0.4, 0.2];
        let want_sla = [0.05, 0.2, 0.3, 0.45];
        for i in 0..4 {
            assert!((ver[i] - want_ver[i]).abs() < 1e-15, "ver {i}");
            assert!((sla[i] - want_sla[i]).abs() < 1e-15, "sla {i}");
        }
        assert!((t.slash_sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn init_rejects_bad_shapes() {
        let c = cfg(3, 0.9);
        assert!(ScoreTablePair::init(&[vec![1.0], vec![1.0]], &c).is_err());
        assert!(ScoreTablePair::init(&[vec![1.0], vec![1.0, 0.0], vec![1.0]], &c).is_err());
    }

    #[test]
    fn decay_free_single_selection() {
        let mut t = ScoreTablePair::zeros(4, 6);
        t.update(&[7], &[1.0], &cfg(1, 0.0)).unwrap();
        let ver = t.vertical_values();
        let sla = t.slash_values();
        for i in 0..6 {
            let want = if i == 3 { 0.5 } else { 0.0 };
            assert_eq!(ver[i], want);
            assert_eq!(sla[i], want);
        }
    }

    #[test]
    fn sum_fixed_point_is_stable() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = causal_weights(&mut rng, 32, 64);
        let mut t = ScoreTablePair::init(&w, &cfg(32, 0.95)).unwrap();
        t.update(&[10, 20], &[0.25, 0.75], &cfg(32, 0.95)).unwrap();
        assert!((t.vertical_sum() - 10.0).abs() < 1e-9);
        assert!((t.slash_sum() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn update_rejects_bad_weights_without_mutation() {
        let mut t = ScoreTablePair::zeros(4, 6);
        let before = t.clone();
        let c = cfg(1, 0.9);
        assert!(matches!(
            t.update(&[5, 6], &[0.5, 0.6], &c),
            Err(LfpsError::WeightNormalization { .. })
        ));
        assert!(t.update(&[], &[], &c).is_err());
        assert!(t.update(&[3], &[1.0], &c).is_err());
        assert!(t.update(&[10], &[1.0], &c).is_err());
        assert!(t.update(&[6, 5], &[0.5, 0.5], &c).is_err());
        assert_eq!(t, before);
    }

    #[test]
    fn hand_update_matches_naive_shift() {
        // n = 6 tracked positions, r = 0.9, |C2| = 2
        let ver0 = [0.3, 0.1, 0.7, 0.2, 0.05, 0.4];
        let sla0 = [0.2, 0.6, 0.1, 0.3, 0.25, 0.15];
        let mut t = ScoreTablePair::from_values(4, &ver0, &sla0).unwrap();
        t.update(&[5, 8], &[0.8, 0.2], &cfg(1, 0.9)).unwrap();
        // residuals: 0.8 - 0.25 = 0.55 at logical 1, 0.2 - 0.25 = -0.05 at logical 4
        let want_ver = [0.27, 0.09 + 0.55, 0.63, 0.18, 0.045 - 0.05, 0.36];
        let want_sla = [0.0, 0.18 + 0.55, 0.54, 0.09, 0.27 - 0.05, 0.225];
        let ver = t.vertical_values();
        let sla = t.slash_values();
        for i in 0..6 {
            assert!((ver[i] - want_ver[i]).abs() < 1e-12, "ver {i}");
            assert!((sla[i] - want_sla[i]).abs() < 1e-12, "sla {i}");
        }
        // the last slash entry (0.15) moved into the carried slot
        assert!((t.slash_score(6) - 0.135).abs() < 1e-12);
        assert_eq!(t.negative_events(), 1);

        let mut clamped = ScoreTablePair::from_values(4, &ver0, &sla0).unwrap();
        let c = LfpsConfig {
            negative_scores: NegativeScores::Clamp,
            ..cfg(1, 0.9)
        };
        clamped.update(&[5, 8], &[0.8, 0.2], &c).unwrap();
        assert_eq!(clamped.vertical_score(4), 0.0);
        assert_eq!(clamped.negative_events(), 1);
    }

    #[test]
    fn grow_appends_zero_and_keeps_sums() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let ver: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let sla: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let mut t = ScoreTablePair::from_values(4, &ver, &sla).unwrap();
        let (sv, ss) = (t.vertical_sum(), t.slash_sum());
        t.grow();
        assert_eq!(t.len(), 101);
        assert_eq!(t.vertical_score(100), 0.0);
        assert_eq!(t.slash_score(100), 0.0);
        assert_eq!(t.vertical_sum(), sv);
        assert_eq!(t.slash_sum(), ss);
        for _ in 0..50 {
            t.grow();
        }
        assert_eq!(t.len(), 151);
        assert_eq!(&t.vertical_values()[..100], &ver[..]);
        assert_eq!(&t.slash_values()[..100], &sla[..]);
    }

    #[test]
    fn grow_after_update_reveals_carried_diagonal() {
        let mut t = ScoreTablePair::from_values(4, &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]).unwrap();
        t.update(&[4], &[1.0], &cfg(1, 0.5)).unwrap();
        assert_eq!(t.carried(), 1);
        t.grow();
        assert_eq!(t.carried(), 0);
        assert_eq!(t.slash_score(3), 0.5);
        assert_eq!(t.vertical_score(3), 0.0);
    }

    #[test]
    fn thresholds_two_point() {
        let t = ScoreTablePair::from_values(4, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        let th = t.thresholds(&LfpsConfig {
            threshold_scale: 0.2,
            ..LfpsConfig::default()
        });
        for p in [th.vertical, th.slash] {
            assert_eq!(p.mean, 0.5);
            assert_eq!(p.kurtosis, Some(0.5));
            assert!((p.tau.unwrap() - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_table_is_degenerate() {
        let t =
            ScoreTablePair::from_values(4, &[0.3; 10], &[0.1, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let th = t.thresholds(&LfpsConfig::default());
        assert!(th.vertical.is_degenerate());
        assert!((th.vertical.mean - 0.3).abs() < 1e-15);
        assert!(!th.slash.is_degenerate());
    }

    #[test]
    fn exhaustive_mode_opens_everything() {
        let t = ScoreTablePair::from_values(4, &[0.3; 10], &[0.3; 10]).unwrap();
        let th = t.thresholds(&LfpsConfig {
            selection: SelectionMode::Exhaustive,
            ..LfpsConfig::default()
        });
        assert_eq!(th.vertical.tau, Some(f64::NEG_INFINITY));
        assert_eq!(th.slash.mean, f64::NEG_INFINITY);
    }

    #[test]
    fn thresholds_match_direct_summation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>().powi(3)).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let mut t = ScoreTablePair::from_values(4, &x, &y).unwrap();
        // push the slash ring off its origin so the two-slice path is exercised
        for _ in 0..7 {
            t.update(&[4], &[1.0], &cfg(1, 0.9)).unwrap();
            t.grow();
        }
        let a = 0.3;
        let th = t.thresholds(&LfpsConfig {
            threshold_scale: a,
            ..LfpsConfig::default()
        });
        for (vals, got) in [(t.vertical_values(), th.vertical), (t.slash_values(), th.slash)] {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let s2: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
            let s4: f64 = vals.iter().map(|v| (v - mean).powi(4)).sum();
            let tau = a * mean / (s4 / (s2 * s2));
            assert!(((got.tau.unwrap() - tau) / tau).abs() < 1e-9);
            assert!(((got.mean - mean) / mean).abs() < 1e-9);
        }
    }

    #[test]
    fn sharper_table_gets_lower_threshold() {
        // equal means, different peakedness
        let flat = [1.0, 2.0, 3.0, 2.0, 2.0, 2.0];
        let sharp = [0.5, 0.5, 9.0, 0.5, 0.5, 1.0];
        let t = ScoreTablePair::from_values(4, &flat, &sharp).unwrap();
        let th = t.thresholds(&LfpsConfig::default());
        assert_eq!(th.vertical.mean, th.slash.mean);
        assert!(th.slash.kurtosis.unwrap() > th.vertical.kurtosis.unwrap());
        assert!(th.slash.tau.unwrap() < th.vertical.tau.unwrap());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut t = ScoreTablePair::from_values(4, &[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1]).unwrap();
        t.update(&[5], &[1.0], &cfg(1, 0.9)).unwrap();
        let snap = t.snapshot();
        assert_eq!(snap.slash_carry.len(), 1);
        let back = ScoreTablePair::from_snapshot(&snap).unwrap();
        assert_eq!(back.snapshot(), snap);
    }

    /// Straightforward reference: decay every entry and physically shift the
    /// slash vector (which may run past the tracked length).
    struct Naive {
        ver: Vec<f64>,
        sla: Vec<f64>,
        m: usize,
    }

    impl Naive {
        fn update(&mut self, sel: &[usize], w: &[f64], r: f64) {
            let half = 0.5 / sel.len() as f64;
            for v in &mut self.ver {
                *v *= r;
            }
            self.sla.insert(0, 0.0);
            for v in &mut self.sla {
                *v *= r;
            }
            for (&i, &wi) in sel.iter().zip(w) {
                self.ver[i] += wi - half;
                self.sla[i] += wi - half;
            }
        }

        fn grow(&mut self) {
            self.ver.push(0.0);
            if self.sla.len() == self.m {
                self.sla.push(0.0);
            }
            self.m += 1;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rolling_slash_matches_naive_shift(seed in any::<u64>(), r in 0.0f64..0.99, grow_p in 0.0f64..1.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m0 = rng.random_range(2..40usize);
            let ver: Vec<f64> = (0..m0).map(|_| rng.random()).collect();
            let sla: Vec<f64> = (0..m0).map(|_| rng.random()).collect();
            let c = LfpsConfig { decay: r, ..LfpsConfig::default() };
            let mut fast = ScoreTablePair::from_values(4, &ver, &sla).unwrap();
            let mut naive = Naive { ver, sla, m: m0 };
            for _ in 0..500 {
                let m = fast.len();
                let k = rng.random_range(1..=m.min(5));
                let mut sel: Vec<usize> = (0..k).map(|_| rng.random_range(0..m)).collect();
                sel.sort_unstable();
                sel.dedup();
                let mut w: Vec<f64> = sel.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
                let tot: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= tot);
                let abs: Vec<usize> = sel.iter().map(|i| i + 4).collect();
                fast.update(&abs, &w, &c).unwrap();
                naive.update(&sel, &w, r);
                if rng.random::<f64>() < grow_p {
                    fast.grow();
                    naive.grow();
                }
            }
            prop_assert_eq!(fast.len(), naive.m);
            let scale = naive.ver.iter().chain(&naive.sla).fold(1.0f64, |a, b| a.max(b.abs()));
            for i in 0..naive.m {
                prop_assert!((fast.vertical_score(i) - naive.ver[i]).abs() <= 1e-9 * scale);
                prop_assert!((fast.slash_score(i) - naive.sla[i]).abs() <= 1e-9 * scale);
            }
            let naive_sla_sum: f64 = naive.sla.iter().sum();
            prop_assert!((fast.slash_sum() - naive_sla_sum).abs() <= 1e-9 * scale * naive.sla.len() as f64);
        }

        #[test]
        fn sums_follow_recurrence(seed in any::<u64>(), r in 0.0f64..0.99, s0 in 0.0f64..20.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = 64;
            let ver = vec![s0 / m as f64; m];
            let mut t = ScoreTablePair::from_values(4, &ver, &ver).unwrap();
            let c = LfpsConfig { decay: r, ..LfpsConfig::default() };
            let mut s = s0;
            for _ in 0..100 {
                let len = t.len();
                let mut sel: Vec<usize> = (0..8).map(|_| 4 + rng.random_range(0..len)).collect();
                sel.sort_unstable();
                sel.dedup();
                let mut w: Vec<f64> = sel.iter().map(|_| rng.random::<f64>()).collect();
                let tot: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= tot);
                t.update(&sel, &w, &c).unwrap();
                t.grow();
                s = r * s + 0.5;
                prop_assert!((t.vertical_sum() - s).abs() <= 1e-9 * s.max(1.0));
                prop_assert!((t.slash_sum() - s).abs() <= 1e-9 * s.max(1.0));
            }
        }
    }
}
