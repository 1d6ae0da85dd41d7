//! Run configuration shared by every stage of the decoding pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{LfpsError, Result};

/// Output produced for a head whose sink share exceeds `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BypassMode {
    /// Return the prefill mean value vector unchanged.
    MeanOnly,
    /// Blend sink values with the mean value, weighted by estimated attention mass.
    #[default]
    SinkAverage,
}

/// What a decayed table update does when an entry would go below zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScores {
    /// Keep the signed value. Table sums follow `S' = r*S + 1/2` exactly.
    #[default]
    Keep,
    /// Clamp to zero. Every clamp adds mass, so sums drift upward.
    Clamp,
}

/// How candidate positions are chosen from the score tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Kurtosis thresholds and mean-filtered expansion.
    #[default]
    Adaptive,
    /// Thresholds and means forced to -inf: every non-sink position is probed.
    Exhaustive,
}

/// Rule applied when two scores compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowerIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfpsConfig {
    /// Head dimension `d`.
    pub head_dim: usize,
    /// Number of trailing prefill steps whose weights seed the score tables.
    pub prefill_window: usize,
    /// Per-step decay `r` of both score tables.
    pub decay: f64,
    /// Sparsity ratio above which a head is bypassed.
    pub epsilon: f64,
    /// Threshold scale `a` applied to the kurtosis rule.
    pub threshold_scale: f64,
    pub expansion_offsets: Vec<i64>,
    /// Leading positions pinned as attention sinks.
    pub sink_count: usize,
    /// Trailing positions that are always probed.
    pub local_window: usize,
    pub tie_break: TieBreak,
    pub bypass_mode: BypassMode,
    pub negative_scores: NegativeScores,
    pub selection: SelectionMode,
}

impl Default for LfpsConfig {
    fn default() -> Self {
        Self {
            head_dim: 128,
            prefill_window: 32,
            decay: 0.95,
            epsilon: 0.85,
            threshold_scale: 0.2,
            expansion_offsets: vec![-1, 0, 1, 2],
            sink_count: 4,
            local_window: 6,
            tie_break: TieBreak::LowerIndex,
            bypass_mode: BypassMode::SinkAverage,
            negative_scores: NegativeScores::Keep,
            selection: SelectionMode::Adaptive,
        }
    }
}

impl LfpsConfig {
    pub fn with_head_dim(head_dim: usize) -> Self {
        Self {
            head_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LfpsError::InvalidConfig(msg));
        if self.head_dim == 0 {
            return fail("head_dim must be >= 1".into());
        }
        if self.prefill_window == 0 {
            return fail("prefill_window must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.decay) {
            return fail(format!("decay must lie in [0, 1), got {}", self.decay));
        }
        // epsilon = 0 is accepted as the "always bypass" setting.
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.threshold_scale > 0.0 && self.threshold_scale.is_finite()) {
            return fail(format!(
                "threshold_scale must be positive, got {}",
                self.threshold_scale
            ));
        }
        if !self.expansion_offsets.contains(&0) {
            return fail("expansion_offsets must contain 0".into());
        }
        if self.sink_count == 0 {
            return fail("sink_count must be >= 1".into());
        }
        if self.local_window == 0 {
            return fail("local_window must be >= 1".into());
        }
        Ok(())
    }

    /// Budget `k = max(1, round(fraction * n))` for a context of `n` rows.
    pub fn budget(fraction: f64, n: usize) -> usize {
        ((fraction * n as f64).round() as usize).max(1)
    }

    pub(crate) fn inv_sqrt_d(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = LfpsConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.expansion_offsets, vec![-1, 0, 1, 2]);
        assert_eq!(cfg.sink_count, 4);
        assert_eq!(cfg.local_window, 6);
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let bad = [
            LfpsConfig {
                decay: 1.0,
                ..Default::default()
            },
            LfpsConfig {
                epsilon: 1.5,
                ..Default::default()
            },
            LfpsConfig {
                threshold_scale: 0.0,
                ..Default::default()
            },
            LfpsConfig {
                expansion_offsets: vec![1, 2],
                ..Default::default()
            },
            LfpsConfig {
                sink_count: 0,
                ..Default::default()
            },
            LfpsConfig {
                head_dim: 0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn budget_rounds_and_floors_at_one() {
        assert_eq!(LfpsConfig::budget(0.02, 8192), 164);
        assert_eq!(LfpsConfig::budget(0.02, 10), 1);
        assert_eq!(LfpsConfig::budget(0.0, 10), 1);
    }
}
