//! Parameter grids over `a`, `epsilon`, `budget` and `r`.

use std::io;

use serde::{Deserialize, Serialize};

use super::report::{float_field, Aggregates};
use super::runner::{run_trace, RunOptions};
use crate::error::{LfpsError, Result};
use crate::trace::TraceFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    A,
    Epsilon,
    Budget,
    R,
}

impl Param {
    pub fn name(&self) -> &'static str {
        match self {
            Param::A => "a",
            Param::Epsilon => "epsilon",
            Param::Budget => "budget",
            Param::R => "r",
        }
    }

    fn apply(&self, opts: &mut RunOptions, x: f64) {
        match self {
            Param::A => opts.config.threshold_scale = x,
            Param::Epsilon => opts.config.epsilon = x,
            Param::Budget => opts.budget = x,
            Param::R => opts.config.decay = x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: Param,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub epsilon: f64,
    pub budget: f64,
    pub r: f64,
    pub aggregates: Aggregates,
}

/// A trend check along one axis, holding any second axis fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub metric: &'static str,
    pub along: Param,
    pub holds: bool,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} non-increasing in {}: {}",
            self.metric,
            self.along.name(),
            if self.holds { "yes" } else { "NO" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axes: Vec<Axis>,
    pub rows: Vec<SweepRow>,
    pub verdicts: Vec<Verdict>,
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Runs one report per grid point, first axis outermost.
pub fn sweep(trace: &TraceFile, base: &RunOptions, axes: &[Axis]) -> Result<SweepResult> {
    if axes.is_empty() || axes.len() > 2 || axes.iter().any(|a| a.values.is_empty()) {
        return Err(LfpsError::InvalidConfig("sweep needs one or two non-empty axes".into()));
    }
    if axes.len() == 2 && axes[0].param == axes[1].param {
        return Err(LfpsError::InvalidConfig("sweep axes must differ".into()));
    }
    let inner: &[f64] = axes.get(1).map(|a| a.values.as_slice()).unwrap_or(&[f64::NAN]);
    let mut rows = Vec::new();
    for &x in &axes[0].values {
        for &y in inner {
            let mut opts = base.clone();
            axes[0].param.apply(&mut opts, x);
            if let Some(ax) = axes.get(1) {
                ax.param.apply(&mut opts, y);
            }
            let report = run_trace(trace, &opts)?.report;
            rows.push(SweepRow {
                a: opts.config.threshold_scale,
                epsilon: opts.config.epsilon,
                budget: opts.budget,
                r: opts.config.decay,
                aggregates: report.aggregates,
            });
        }
    }

    let mut verdicts = Vec::new();
    let (outer, inner_len) = (axes[0].values.len(), inner.len());
    for (idx, axis) in axes.iter().enumerate() {
        let metric: (&'static str, fn(&Aggregates) -> f64) = match axis.param {
            Param::A => ("candidate fraction", |a| a.mean_candidate_fraction),
            Param::Epsilon => ("bypass rate", |a| a.bypass_rate),
            _ => continue,
        };
        // every line along this axis with the other axis held fixed
        let lines: Vec<Vec<f64>> = if idx == 0 {
            (0..inner_len)
                .map(|j| {
                    (0..outer)
                        .map(|i| metric.1(&rows[i * inner_len + j].aggregates))
                        .collect()
                })
                .collect()
        } else {
            (0..outer)
                .map(|i| {
                    (0..inner_len)
                        .map(|j| metric.1(&rows[i * inner_len + j].aggregates))
                        .collect()
                })
                .collect()
        };
        verdicts.push(Verdict {
            metric: metric.0,
            along: axis.param,
            holds: lines.iter().all(|l| non_increasing(l)),
        });
    }
    Ok(SweepResult {
        axes: axes.to_vec(),
        rows,
        verdicts,
    })
}

pub fn sweep_csv<W: io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| LfpsError::Report(e.to_string());
    out.write_record([
        "a",
        "epsilon",
        "budget",
        "r",
        "records",
        "mean_eta",
        "median_eta",
        "mean_candidate_fraction",
        "bypass_rate",
        "mean_output_error",
        "steps_per_sec_per_head",
        "reference_steps_per_sec_per_head",
        "speedup",
    ])
    .map_err(err)?;
    for r in rows {
        let g = &r.aggregates;
        out.write_record([
            float_field(r.a),
            float_field(r.epsilon),
            float_field(r.budget),
            float_field(r.r),
            g.records.to_string(),
            float_field(g.mean_eta),
            float_field(g.median_eta),
            float_field(g.mean_candidate_fraction),
            float_field(g.bypass_rate),
            float_field(g.mean_output_error),
            float_field(g.steps_per_sec_per_head),
            float_field(g.reference_steps_per_sec_per_head),
            float_field(g.speedup),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}
