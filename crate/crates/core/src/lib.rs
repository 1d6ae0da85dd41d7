//! LFPS sparse indexing for long-context decoding.
//!
//! For each attention head the engine keeps two score tables over the
//! non-sink context: a *vertical* table (how much attention each absolute
//! position has received) and a *slash* table (how much each relative offset
//! from the query has received). At every step it thresholds the tables,
//! expands the hits by a few positions, computes exact logits only on that
//! candidate set plus a local window, and keeps the top `k`. A cheap
//! closed-form gate skips heads whose attention is dominated by the sink
//! tokens.
//!
//! ```
//! use lfps::{synth::SyntheticSpec, LfpsConfig};
//!
//! let spec = SyntheticSpec {
//!     n_prefill: 256,
//!     steps: 4,
//!     head_dim: 32,
//!     vertical_positions: vec![40, 120],
//!     slash_offsets: vec![16],
//!     band_width: 2,
//!     ..SyntheticSpec::default()
//! };
//! let trace = lfps::synth::generate(&spec).unwrap();
//! let config = LfpsConfig { head_dim: 32, ..LfpsConfig::default() };
//! let mut session = trace.head_session(0, &config).unwrap();
//! for step in &trace.steps {
//!     let r = &step[0];
//!     let q = lfps::trace::widen(&r.query);
//!     let out = session
//!         .decode_step(&q, &lfps::trace::widen(&r.key), &lfps::trace::widen(&r.value), 0.05)
//!         .unwrap();
//!     assert_eq!(out.output.vector().len(), 32);
//! }
//! ```

pub mod attention;
pub mod bench;
pub mod candidates;
pub mod config;
pub mod engine;
pub mod error;
pub mod gate;
pub mod numeric;
pub mod store;
pub mod synth;
pub mod tables;
pub mod trace;

pub use attention::{full_attention_oracle, topk_oracle, AttentionOutput};
pub use config::LfpsConfig;
pub use engine::{HeadSession, StepOutput, StepResult};
pub use error::{LfpsError, Result};
pub use store::KvStore;
pub use tables::ScoreTablePair;
pub use trace::{read_trace, write_trace, TraceError, TraceFile};
