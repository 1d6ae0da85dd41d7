use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lfps::bench::report::{records_csv, to_canonical_json};
use lfps::bench::sweep::sweep_csv;
use lfps::bench::{run_trace, sweep, Axis, Mode, Param, RunOptions};
use lfps::config::{BypassMode, NegativeScores, SelectionMode};
use lfps::synth::{generate, SyntheticSpec};
use lfps::trace::{read_trace_file, write_trace_file};
use lfps::LfpsConfig;

/// Sparse Top-k indexing for long-context decoding.
#[derive(Parser)]
#[command(name = "lfps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace with planted vertical and slash patterns.
    Gen(GenArgs),
    /// Run a pipeline over every head and step of a trace.
    Run(RunArgs),
    /// Run a grid over one or two of a, epsilon, budget and r.
    Sweep(SweepArgs),
}

fn comma_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

#[derive(Args)]
struct GenArgs {
    /// Prefill length.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    d: usize,
    /// Comma-separated vertical positions.
    #[arg(long, value_delimiter = ',')]
    vertical: Vec<usize>,
    /// Comma-separated slash offsets.
    #[arg(long, value_delimiter = ',')]
    slash: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().signal_gain)]
    gain: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().noise_scale)]
    noise: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().band_width)]
    band: usize,
    /// Per-head sink logits, layer-major.
    #[arg(long, value_delimiter = ',')]
    sink_gains: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    prefill_window: usize,
    #[arg(long, default_value_t = 4)]
    sinks: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Top-k budget as a fraction of the context.
    #[arg(long, default_value_t = 0.02)]
    budget: f64,
    /// Threshold scale.
    #[arg(long, default_value_t = 0.2)]
    a: f64,
    #[arg(long, default_value_t = 0.85)]
    epsilon: f64,
    /// Score-table decay.
    #[arg(long, default_value_t = 0.95)]
    r: f64,
    /// Expansion offsets.
    #[arg(long, value_delimiter = ',', default_values_t = [-1i64, 0, 1, 2], allow_hyphen_values = true)]
    offsets: Vec<i64>,
    #[arg(long, default_value_t = 6)]
    local_window: usize,
    /// Probe every non-sink position (makes LFPS equal to exact Top-k).
    #[arg(long)]
    exhaustive: bool,
    /// Clamp table entries at zero instead of keeping signed scores.
    #[arg(long)]
    clamp_negative: bool,
    /// Return the prefill mean value for bypassed heads.
    #[arg(long)]
    bypass_mean_only: bool,
    /// Skip the oracles (overlap and output error are not reported).
    #[arg(long)]
    no_oracle: bool,
    /// Skip timing the exact Top-k reference.
    #[arg(long)]
    no_reference: bool,
    #[arg(long, env = "LFPS_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct RunArgs {
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Lfps)]
    mode: Mode,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-step CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Final score tables and gate statistics per head, as JSON.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

fn grid_axis(s: &str) -> Result<Axis, String> {
    let (name, values) = s.split_once('=').ok_or("expected NAME=v1,v2,...")?;
    let param = <Param as clap::ValueEnum>::from_str(name.trim(), true)?;
    Ok(Axis {
        param,
        values: comma_list(values)?,
    })
}

#[derive(Args)]
struct SweepArgs {
    trace: PathBuf,
    /// Grid axis such as `a=0.1,0.2,0.3`; give one or two.
    #[arg(long = "grid", value_parser = grid_axis, required = true)]
    grid: Vec<Axis>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// CSV path; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl PipelineArgs {
    fn options(&self, head_dim: usize, prefill_window: usize, sink_count: usize, mode: Mode) -> RunOptions {
        let config = LfpsConfig {
            head_dim,
            prefill_window,
            sink_count,
            decay: self.r,
            epsilon: self.epsilon,
            threshold_scale: self.a,
            expansion_offsets: self.offsets.clone(),
            local_window: self.local_window,
            selection: if self.exhaustive {
                SelectionMode::Exhaustive
            } else {
                SelectionMode::Adaptive
            },
            negative_scores: if self.clamp_negative {
                NegativeScores::Clamp
            } else {
                NegativeScores::Keep
            },
            bypass_mode: if self.bypass_mean_only {
                BypassMode::MeanOnly
            } else {
                BypassMode::SinkAverage
            },
            ..LfpsConfig::default()
        };
        RunOptions {
            mode,
            budget: self.budget,
            config,
            oracle: !self.no_oracle,
            reference: !self.no_reference,
            threads: self.threads,
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

fn cmd_gen(args: GenArgs) -> CliResult {
    let spec = SyntheticSpec {
        n_prefill: args.n,
        steps: args.steps,
        head_dim: args.d,
        layers: args.layers,
        heads: args.heads,
        vertical_positions: args.vertical,
        slash_offsets: args.slash,
        signal_gain: args.gain,
        noise_scale: args.noise,
        band_width: args.band,
        sink_gains: args.sink_gains,
        prefill_window: args.prefill_window,
        sink_count: args.sinks,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let trace = generate(&spec)?;
    write_trace_file(&trace, &args.output)?;
    let bytes = std::fs::read(&args.output)?;
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into()?);
    println!(
        "{}: {} bytes, {} layer(s) x {} head(s), d={}, n_prefill={}, steps={}, crc32={crc:08x}",
        args.output.display(),
        bytes.len(),
        spec.layers,
        spec.heads,
        spec.head_dim,
        spec.n_prefill,
        spec.steps
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> CliResult {
    let trace = read_trace_file(&args.trace)?;
    let h = &trace.header;
    let opts = args.pipeline.options(
        h.head_dim as usize,
        h.prefill_window as usize,
        h.sink_count as usize,
        args.mode,
    );
    let outcome = run_trace(&trace, &opts)?;
    let report = &outcome.report;
    let json = to_canonical_json(report)?;
    match &args.report {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(&json)?;
            w.flush()?;
        }
        None => io::stdout().write_all(&json)?,
    }
    if let Some(p) = &args.csv {
        records_csv(&report.records, create(p)?)?;
    }
    if let Some(p) = &args.snapshot {
        let mut w = create(p)?;
        w.write_all(&to_canonical_json(&outcome.snapshots)?)?;
        w.flush()?;
    }
    let g = &report.aggregates;
    eprintln!(
        "mode={} records={} mean_eta={:.4} median_eta={:.4} candidate_fraction={:.4} bypass_rate={:.4} steps/s/head={:.1} reference={:.1} speedup={:.2}",
        report.mode.as_str(),
        g.records,
        g.mean_eta,
        g.median_eta,
        g.mean_candidate_fraction,
        g.bypass_rate,
        g.steps_per_sec_per_head,
        g.reference_steps_per_sec_per_head,
        g.speedup
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let trace = read_trace_file(&args.trace)?;
    let h = &trace.header;
    let opts = args.pipeline.options(
        h.head_dim as usize,
        h.prefill_window as usize,
        h.sink_count as usize,
        Mode::Lfps,
    );
    let result = sweep(&trace, &opts, &args.grid)?;
    match &args.csv {
        Some(p) => sweep_csv(&result.rows, create(p)?)?,
        None => sweep_csv(&result.rows, io::stdout().lock())?,
    }
    for v in &result.verdicts {
        eprintln!("{v}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
