//! Candidate construction: threshold selection, positional expansion and the
//! always-probed local window. Index sets are sorted, duplicate-free `Vec`s of
//! absolute positions.

use serde::{Deserialize, Serialize};

use crate::config::LfpsConfig;
use crate::tables::{ScoreTablePair, ThresholdPair};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Threshold exceedances.
    pub c0: Vec<usize>,
    /// After offset expansion and mean filtering.
    pub c1: Vec<usize>,
    /// Exact Top-k over the probe set.
    pub c2: Vec<usize>,
    pub budget_k: usize,
}

/// Linear merge of two sorted, duplicate-free index lists.
pub fn union_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Size of the intersection of two sorted, duplicate-free index lists.
pub fn intersection_count(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Positions whose vertical or slash score exceeds that pattern's threshold.
/// Degenerate patterns contribute nothing.
pub fn select_initial(tables: &ScoreTablePair, thresholds: &ThresholdPair) -> Vec<usize> {
    let mut ver = Vec::new();
    let mut sla = Vec::new();
    if let Some(tau) = thresholds.vertical.tau {
        tables.vertical_above(tau, &mut ver);
    }
    if let Some(tau) = thresholds.slash.tau {
        tables.slash_above(tau, &mut sla);
    }
    union_sorted(&ver, &sla)
}

/// Expands every member of `c0` by the configured offsets, keeping in-range
/// positions whose vertical score exceeds the vertical mean or whose slash
/// score exceeds the slash mean. Offset 0 goes through the same filter.
pub fn expand(c0: &[usize], tables: &ScoreTablePair, thresholds: &ThresholdPair, config: &LfpsConfig) -> Vec<usize> {
    let lo = tables.base() as i64;
    let hi = (tables.base() + tables.len()) as i64;
    let (mean_ver, mean_sla) = (thresholds.vertical.mean, thresholds.slash.mean);
    let mut out = Vec::with_capacity(c0.len() * config.expansion_offsets.len());
    for &i in c0 {
        for &delta in &config.expansion_offsets {
            let j = i as i64 + delta;
            if j < lo || j >= hi {
                continue;
            }
            let logical = (j - lo) as usize;
            if tables.vertical_score(logical) > mean_ver || tables.slash_score(logical) > mean_sla {
                out.push(j as usize);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `c1` plus the last `local_window` non-sink positions of an `n`-row context.
pub fn finalize_probe_set(c1: &[usize], n: usize, config: &LfpsConfig) -> Vec<usize> {
    let start = n.saturating_sub(config.local_window).max(config.sink_count);
    let local: Vec<usize> = (start..n).collect();
    union_sorted(c1, &local)
}

/// Number of `c0` members missing from `c1` (possible because offset 0 is
/// mean-filtered too).
pub fn dropped_initial(c0: &[usize], c1: &[usize]) -> usize {
    c0.len() - intersection_count(c0, c1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SelectionMode;
    use crate::tables::PatternThreshold;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pt(mean: f64, tau: Option<f64>) -> PatternThreshold {
        PatternThreshold {
            mean,
            kurtosis: None,
            tau,
        }
    }

    #[test]
    fn nothing_above_threshold() {
        let t = ScoreTablePair::from_values(4, &[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1]).unwrap();
        let th = ThresholdPair {
            vertical: pt(0.2, Some(0.5)),
            slash: pt(0.2, Some(0.5)),
        };
        assert!(select_initial(&t, &th).is_empty());
    }

    #[test]
    fn single_exceedance_with_degenerate_slash() {
        let t = ScoreTablePair::from_values(4, &[0.9, 0.1, 0.1], &[5.0, 5.0, 5.0]).unwrap();
        let th = ThresholdPair {
            vertical: pt(0.366, Some(0.5)),
            slash: pt(5.0, None),
        };
        // logical 0 is absolute position 4
        assert_eq!(select_initial(&t, &th), vec![4]);
    }

    #[test]
    fn full_expansion() {
        let t = ScoreTablePair::from_values(0, &[1.0; 10], &[1.0; 10]).unwrap();
        let th = ThresholdPair {
            vertical: pt(0.5, Some(2.0)),
            slash: pt(0.5, Some(2.0)),
        };
        let c = LfpsConfig::default();
        assert_eq!(expand(&[5], &t, &th, &c), vec![4, 5, 6, 7]);
        assert!(expand(&[], &t, &th, &c).is_empty());
        // clipped at both ends of the tracked range
        assert_eq!(expand(&[0, 9], &t, &th, &c), vec![0, 1, 2, 8, 9]);
    }

    #[test]
    fn mean_filter_can_drop_initial_member() {
        let t = ScoreTablePair::from_values(0, &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 0.0]).unwrap();
        let th = ThresholdPair {
            vertical: pt(0.25, Some(0.1)),
            slash: pt(0.0, None),
        };
        let c = LfpsConfig::default();
        let c1 = expand(&[1, 2], &t, &th, &c);
        assert_eq!(c1, vec![2]);
        assert_eq!(dropped_initial(&[1, 2], &c1), 1);
    }

    #[test]
    fn local_window_tail() {
        let c = LfpsConfig::default();
        assert_eq!(finalize_probe_set(&[], 20, &c), (14..20).collect::<Vec<_>>());
        let c1: Vec<usize> = vec![5, 14, 15, 16, 17, 18, 19];
        assert_eq!(finalize_probe_set(&c1, 20, &c), c1);
        // tail never reaches into the sinks
        assert_eq!(finalize_probe_set(&[], 7, &c), vec![4, 5, 6]);
    }

    #[test]
    fn exhaustive_thresholds_cover_the_whole_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..50).map(|_| rng.random::<f64>() - 0.5).collect();
        let t = ScoreTablePair::from_values(4, &v, &v).unwrap();
        let c = LfpsConfig {
            selection: SelectionMode::Exhaustive,
            ..LfpsConfig::default()
        };
        let th = t.thresholds(&c);
        let c0 = select_initial(&t, &th);
        let c1 = expand(&c0, &t, &th, &c);
        assert_eq!(c1, (4..54).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn selection_and_expansion_match_set_builders(seed in any::<u64>(), m in 2usize..80, a in 0.05f64..0.5) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base = 4;
            let ver: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(4)).collect();
            let sla: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(4)).collect();
            let t = ScoreTablePair::from_values(base, &ver, &sla).unwrap();
            let c = LfpsConfig { threshold_scale: a, ..LfpsConfig::default() };
            let th = t.thresholds(&c);

            // linear-scan oracle for the initial set
            let mut want0 = std::collections::BTreeSet::new();
            for i in 0..m {
                if th.vertical.tau.is_some_and(|tau| ver[i] > tau) || th.slash.tau.is_some_and(|tau| sla[i] > tau) {
                    want0.insert(base + i);
                }
            }
            let c0 = select_initial(&t, &th);
            prop_assert_eq!(&c0, &want0.iter().copied().collect::<Vec<_>>());

            // set-builder oracle for the expansion
            let mut want1 = std::collections::BTreeSet::new();
            for &i in &c0 {
                for &d in &c.expansion_offsets {
                    let j = i as i64 + d;
                    if j >= base as i64 && j < (base + m) as i64 {
                        let l = j as usize - base;
                        if ver[l] > th.vertical.mean || sla[l] > th.slash.mean {
                            want1.insert(j as usize);
                        }
                    }
                }
            }
            let c1 = expand(&c0, &t, &th, &c);
            prop_assert_eq!(&c1, &want1.iter().copied().collect::<Vec<_>>());

            let probe = finalize_probe_set(&c1, base + m, &c);
            prop_assert!(probe.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(probe.iter().all(|&p| p >= base && p < base + m));
            for &p in &c1 {
                prop_assert!(probe.binary_search(&p).is_ok());
            }
        }
    }
}
