//! Little-endian binary trace files (`DYCK` magic), bit-exact round trip.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DYCK"
//!      4     2  version (u16, = 1)
//!      6     2  flags (u16, must be 0)
//!      8     4  frames M_v (u32)
//!     12     4  tokens per frame N_v (u32)
//!     16     4  hidden dim D (u32)
//!     20     4  text tokens N_q (u32)
//!     24     4  layer count (u32)
//!     28     4  head count (u32)
//!     32     4  attention block count B (u32)
//!     36     -  f32 payload: M_v*N_v visual rows, then N_q text rows, D values each
//!      -     -  B attention blocks: step u32, layer u32, len u32 (= M_v*N_v), len f32 scores
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::grid::{TextTokens, VisualTokenGrid};

pub const MAGIC: [u8; 4] = *b"DYCK";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic {found:?} at byte offset {offset}")]
    BadMagic { offset: usize, found: [u8; 4] },
    #[error("unsupported version {version} at byte offset {offset}")]
    VersionUnsupported { offset: usize, version: u16 },
    #[error("invalid header field {field} = {value} at byte offset {offset}")]
    BadHeader {
        offset: usize,
        field: &'static str,
        value: u64,
    },
    #[error("truncated payload at byte offset {offset}: need {needed} more bytes, {available} available")]
    TruncatedPayload {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("non-finite value at byte offset {offset}")]
    NonFiniteValue { offset: usize },
    #[error("{count} trailing bytes after the last block, starting at byte offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("duplicate attention block (step {step}, layer {layer}) at byte offset {offset}")]
    DuplicateAttentionBlock { offset: usize, step: u32, layer: u32 },
    #[error("trace i/o: {0}")]
    Io(#[from] io::Error),
}

/// Head-averaged attention scores of one decode step at one layer, one value
/// per original visual row.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub step: u32,
    pub layer: u32,
    pub scores: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub grid: VisualTokenGrid<f32>,
    pub text: TextTokens<f32>,
    pub layers: u32,
    pub heads: u32,
    pub attention: Vec<AttentionBlock>,
}

impl Trace {
    pub fn attention_row(&self, step: u32, layer: u32) -> Option<&[f32]> {
        self.attention
            .iter()
            .find(|b| b.step == step && b.layer == layer)
            .map(|b| b.scores.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let payload = 4 * (g.data().len() + self.text.data().len());
        let blocks: usize = self.attention.iter().map(|b| 12 + 4 * b.scores.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + payload + blocks);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for v in [g.frames(), g.tokens_per_frame(), g.hidden_dim(), self.text.count()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.layers.to_le_bytes());
        out.extend_from_slice(&self.heads.to_le_bytes());
        out.extend_from_slice(&(self.attention.len() as u32).to_le_bytes());
        for v in g.data().iter().chain(self.text.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for b in &self.attention {
            out.extend_from_slice(&b.step.to_le_bytes());
            out.extend_from_slice(&b.layer.to_le_bytes());
            out.extend_from_slice(&(b.scores.len() as u32).to_le_bytes());
            for v in &b.scores {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TraceError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(TraceError::BadMagic {
                offset: 0,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(TraceError::VersionUnsupported { offset: 4, version });
        }
        let flags = r.u16()?;
        if flags != 0 {
            return Err(TraceError::BadHeader {
                offset: 6,
                field: "flags",
                value: u64::from(flags),
            });
        }
        let frames = r.nonzero("frames")?;
        let tokens_per_frame = r.nonzero("tokens_per_frame")?;
        let hidden_dim = r.nonzero("hidden_dim")?;
        let text_tokens = r.u32()? as usize;
        let layers = r.nonzero("layers")? as u32;
        let heads = r.nonzero("heads")? as u32;
        let block_count = r.u32()? as usize;

        let oversized = |offset: usize| TraceError::TruncatedPayload {
            offset,
            needed: usize::MAX,
            available: bytes.len() - offset,
        };
        let visual_rows = frames.checked_mul(tokens_per_frame).ok_or_else(|| oversized(r.pos))?;
        let visual_len = visual_rows.checked_mul(hidden_dim).ok_or_else(|| oversized(r.pos))?;
        let visual = r.floats(visual_len)?;
        let text_len = text_tokens.checked_mul(hidden_dim).ok_or_else(|| oversized(r.pos))?;
        let text = r.floats(text_len)?;

        let mut attention: Vec<AttentionBlock> = Vec::with_capacity(block_count.min(1 << 16));
        for _ in 0..block_count {
            let start = r.pos;
            let step = r.u32()?;
            let layer = r.u32()?;
            let len_offset = r.pos;
            let len = r.u32()? as usize;
            if len != visual_rows {
                return Err(TraceError::BadHeader {
                    offset: len_offset,
                    field: "attention block length",
                    value: len as u64,
                });
            }
            if attention.iter().any(|b| b.step == step && b.layer == layer) {
                return Err(TraceError::DuplicateAttentionBlock {
                    offset: start,
                    step,
                    layer,
                });
            }
            let scores = r.floats(len)?;
            attention.push(AttentionBlock { step, layer, scores });
        }
        if r.pos != bytes.len() {
            return Err(TraceError::TrailingBytes {
                offset: r.pos,
                count: bytes.len() - r.pos,
            });
        }
        let grid = VisualTokenGrid::new(frames, tokens_per_frame, hidden_dim, visual)
            .expect("dimensions and finiteness already checked");
        let text = TextTokens::new(hidden_dim, text).expect("dimensions and finiteness already checked");
        Ok(Self {
            grid,
            text,
            layers,
            heads,
            attention,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(TraceError::TruncatedPayload {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TraceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn nonzero(&mut self, field: &'static str) -> Result<usize, TraceError> {
        let offset = self.pos;
        let v = self.u32()?;
        if v == 0 {
            return Err(TraceError::BadHeader {
                offset,
                field,
                value: 0,
            });
        }
        Ok(v as usize)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f32>, TraceError> {
        let start = self.pos;
        let needed = count.checked_mul(4).ok_or(TraceError::TruncatedPayload {
            offset: start,
            needed: usize::MAX,
            available: self.bytes.len() - start,
        })?;
        let raw = self.take(needed)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(TraceError::NonFiniteValue { offset: start + 4 * i })
                }
            })
            .collect()
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    Trace::from_bytes(&fs::read(path)?)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &Trace) -> Result<(), TraceError> {
    fs::write(path, trace.to_bytes())?;
    Ok(())
}
