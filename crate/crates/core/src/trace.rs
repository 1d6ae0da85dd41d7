//! Binary trace container. The byte layout is documented in
//! `docs/trace-format.md`; this module is its only reader and writer.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::LfpsConfig;
use crate::engine::HeadSession;
use crate::error::{LfpsError, Result};
use crate::store::KvStore;

pub const MAGIC: [u8; 4] = *b"LFPS";
pub const VERSION: u8 = 1;
/// Header length in bytes: magic, version and eight u64 fields.
pub const HEADER_LEN: usize = 4 + 1 + 8 * 8;
const CHECKSUM_LEN: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("bad magic bytes {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported value encoding {0}")]
    UnsupportedEncoding(u64),
    #[error("truncated trace: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("{extra} trailing bytes after checksum")]
    TrailingBytes { extra: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("declared counts overflow the addressable size")]
    CountOverflow,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("inconsistent trace contents: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum ValueEncoding {
    F32 = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub layers: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub n_prefill: u64,
    pub steps: u64,
    pub encoding: ValueEncoding,
    pub prefill_window: u64,
    pub sink_count: u64,
}

impl TraceHeader {
    pub fn head_count(&self) -> u64 {
        self.layers * self.heads
    }

    pub fn weight_len(&self) -> u64 {
        self.n_prefill - self.sink_count
    }

    /// Total file size implied by the counts, or `None` on overflow.
    pub fn file_len(&self) -> Option<u64> {
        let d = self.head_dim;
        let kv = self.n_prefill.checked_mul(d)?.checked_mul(2)?;
        let w = self
            .prefill_window
            .checked_mul(self.n_prefill.checked_sub(self.sink_count)?)?;
        let per_head = kv.checked_add(w)?.checked_add(d)?;
        let per_step = d.checked_mul(3)?;
        let heads = self.layers.checked_mul(self.heads)?;
        let floats = heads
            .checked_mul(per_head)?
            .checked_add(heads.checked_mul(per_step)?.checked_mul(self.steps)?)?;
        floats.checked_mul(4)?.checked_add((HEADER_LEN + CHECKSUM_LEN) as u64)
    }

    fn validate(&self) -> std::result::Result<(), TraceError> {
        if self.layers == 0 || self.heads == 0 {
            return Err(TraceError::InvalidHeader("zero layers or heads".into()));
        }
        if self.head_dim == 0 {
            return Err(TraceError::InvalidHeader("zero head dimension".into()));
        }
        if self.sink_count > self.n_prefill {
            return Err(TraceError::InvalidHeader(format!(
                "sink count {} exceeds prefill length {}",
                self.sink_count, self.n_prefill
            )));
        }
        Ok(())
    }
}

/// Prefill state for one head. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPrefill {
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
    /// Oldest first; each covers the non-sink prefill range.
    pub weights: Vec<Vec<f32>>,
    pub final_query: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub query: Vec<f32>,
    pub key: Vec<f32>,
    pub value: Vec<f32>,
}

/// An in-memory trace. Heads are numbered layer-major:
/// `layer * heads_per_layer + head`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub prefill: Vec<HeadPrefill>,
    /// `steps[t][h]`.
    pub steps: Vec<Vec<StepRecord>>,
}

fn expect_len(what: &str, want: u64, got: usize) -> std::result::Result<(), TraceError> {
    if want != got as u64 {
        return Err(TraceError::Inconsistent(format!(
            "{what}: expected {want} values, found {got}"
        )));
    }
    Ok(())
}

impl TraceFile {
    /// Checks that every payload matches the header counts.
    pub fn validate(&self) -> std::result::Result<(), TraceError> {
        let h = &self.header;
        h.validate()?;
        h.file_len().ok_or(TraceError::CountOverflow)?;
        let d = h.head_dim;
        expect_len("prefill heads", h.head_count(), self.prefill.len())?;
        for p in &self.prefill {
            expect_len("prefill keys", h.n_prefill * d, p.keys.len())?;
            expect_len("prefill values", h.n_prefill * d, p.values.len())?;
            expect_len("prefill weight vectors", h.prefill_window, p.weights.len())?;
            for w in &p.weights {
                expect_len("prefill weights", h.weight_len(), w.len())?;
            }
            expect_len("final query", d, p.final_query.len())?;
        }
        expect_len("steps", h.steps, self.steps.len())?;
        for step in &self.steps {
            expect_len("step heads", h.head_count(), step.len())?;
            for r in step {
                expect_len("step query", d, r.query.len())?;
                expect_len("step key", d, r.key.len())?;
                expect_len("step value", d, r.value.len())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> std::result::Result<Vec<u8>, TraceError> {
        self.validate()?;
        let len = self.header.file_len().ok_or(TraceError::CountOverflow)?;
        let mut out = Vec::with_capacity(len as usize);
        let h = &self.header;
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        for x in [
            h.layers,
            h.heads,
            h.head_dim,
            h.n_prefill,
            h.steps,
            h.encoding as u64,
            h.prefill_window,
            h.sink_count,
        ] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let mut put = |v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for p in &self.prefill {
            put(&p.keys);
            put(&p.values);
            for w in &p.weights {
                put(w);
            }
            put(&p.final_query);
        }
        for step in &self.steps {
            for r in step {
                put(&r.query);
                put(&r.key);
                put(&r.value);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        debug_assert_eq!(out.len() as u64, len);
        Ok(out)
    }

    /// Parses and fully validates a trace image.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, TraceError> {
        let avail = bytes.len() as u64;
        if bytes.len() < MAGIC.len() {
            return Err(TraceError::Truncated {
                needed: HEADER_LEN as u64,
                available: avail,
            });
        }
        if bytes[..4] != MAGIC {
            return Err(TraceError::BadMagic {
                found: bytes[..4].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(TraceError::Truncated {
                needed: HEADER_LEN as u64,
                available: avail,
            });
        }
        if bytes[4] != VERSION {
            return Err(TraceError::UnsupportedVersion(bytes[4]));
        }
        let field = |i: usize| u64::from_le_bytes(bytes[5 + 8 * i..13 + 8 * i].try_into().unwrap());
        let encoding = match field(5) {
            1 => ValueEncoding::F32,
            other => return Err(TraceError::UnsupportedEncoding(other)),
        };
        let header = TraceHeader {
            layers: field(0),
            heads: field(1),
            head_dim: field(2),
            n_prefill: field(3),
            steps: field(4),
            encoding,
            prefill_window: field(6),
            sink_count: field(7),
        };
        header.validate()?;
        let len = header.file_len().ok_or(TraceError::CountOverflow)?;
        if avail < len {
            return Err(TraceError::Truncated {
                needed: len,
                available: avail,
            });
        }
        if avail > len {
            return Err(TraceError::TrailingBytes { extra: avail - len });
        }
        let body_end = bytes.len() - CHECKSUM_LEN;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(TraceError::ChecksumMismatch { stored, computed });
        }

        let mut cursor = HEADER_LEN;
        let mut take = |n: u64| -> Vec<f32> {
            let n = n as usize;
            let v = bytes[cursor..cursor + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += 4 * n;
            v
        };
        let d = header.head_dim;
        let heads = header.head_count();
        let prefill = (0..heads)
            .map(|_| HeadPrefill {
                keys: take(header.n_prefill * d),
                values: take(header.n_prefill * d),
                weights: (0..header.prefill_window).map(|_| take(header.weight_len())).collect(),
                final_query: take(d),
            })
            .collect();
        let steps = (0..header.steps)
            .map(|_| {
                (0..heads)
                    .map(|_| StepRecord {
                        query: take(d),
                        key: take(d),
                        value: take(d),
                    })
                    .collect()
            })
            .collect();
        Ok(Self { header, prefill, steps })
    }

    /// Number of heads across all layers.
    pub fn head_count(&self) -> usize {
        self.prefill.len()
    }

    /// Builds a decoding session for head `h` from its prefill block.
    pub fn head_session(&self, h: usize, config: &LfpsConfig) -> Result<HeadSession> {
        let hd = &self.header;
        let p = self.prefill.get(h).ok_or(LfpsError::IndexOutOfRange {
            index: h,
            lo: 0,
            hi: self.prefill.len(),
        })?;
        if config.head_dim as u64 != hd.head_dim
            || config.prefill_window as u64 != hd.prefill_window
            || config.sink_count as u64 != hd.sink_count
        {
            return Err(LfpsError::InvalidWorkload(format!(
                "config (d={}, s={}, sinks={}) does not match trace (d={}, s={}, sinks={})",
                config.head_dim,
                config.prefill_window,
                config.sink_count,
                hd.head_dim,
                hd.prefill_window,
                hd.sink_count
            )));
        }
        let store = KvStore::from_f32_rows(config.head_dim, &p.keys, &p.values)?;
        let weights: Vec<Vec<f64>> = p.weights.iter().map(|w| widen(w)).collect();
        HeadSession::prefill(store, &weights, &widen(&p.final_query), config.clone())
    }
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn write_trace<W: Write>(trace: &TraceFile, mut w: W) -> std::result::Result<(), TraceError> {
    w.write_all(&trace.to_bytes()?)?;
    w.flush()?;
    Ok(())
}

/// Reads the whole stream in one pass, then validates it.
pub fn read_trace<R: Read>(mut r: R) -> std::result::Result<TraceFile, TraceError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    TraceFile::from_bytes(&bytes)
}

pub fn write_trace_file(trace: &TraceFile, path: &Path) -> std::result::Result<(), TraceError> {
    let f = std::fs::File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(f))
}

pub fn read_trace_file(path: &Path) -> std::result::Result<TraceFile, TraceError> {
    TraceFile::from_bytes(&std::fs::read(path)?)
}
