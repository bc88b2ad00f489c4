//! `.sstr` trace container and its `.sstr.json` debug mirror.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "SSTR"                     4 bytes magic
//! version                    u16
//! header_len                 u32
//! header                     header_len bytes of UTF-8 JSON (TraceHeader)
//! patch_embeddings           T*M*D f32, row-major [T, M, D]
//! patch_coords               T*M*2 f32, row-major [T, M, 2]
//! per candidate (header.candidates times):
//!     candidate_id           u32
//!     L                      u32
//!     finished               u8 (0 or 1)
//!     L records:
//!         token_id           u32
//!         frame_attention    T f32
//!         text_attention     f32
//! ```
//!
//! Attention values are `f64` in memory and `f32` on disk. Writing refuses any
//! value that does not survive the conversion exactly, so a read after a
//! write returns the same bits. Reading is strict: any byte after the last
//! record is an error.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{
    check_candidates, check_video, CandidateTrace, Grid, StepRecord, ValidationError, VideoContext,
};

pub const MAGIC: &[u8; 4] = b"SSTR";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("truncated: {section} needs {needed} bytes, {available} left")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after the last candidate")]
    LengthMismatch(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("{path} = {value} is not exactly representable as f32")]
    NotRepresentable { path: String, value: f64 },
    #[error("refusing to write invalid trace: {0}")]
    InvalidInput(#[from] ValidationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Whether `text_attention` includes attention to prompt tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextAttentionConvention {
    /// Previously generated response tokens only.
    #[default]
    GeneratedOnly,
    /// Generated tokens plus the prompt text.
    IncludesPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerMetadata {
    pub name: String,
    /// How per-head, per-layer attention was reduced to one value.
    pub attention_reduction: String,
    pub text_attention: TextAttentionConvention,
}

impl Default for ProducerMetadata {
    fn default() -> Self {
        Self {
            name: "sstr".into(),
            attention_reduction: "mean over all heads and layers".into(),
            text_attention: TextAttentionConvention::GeneratedOnly,
        }
    }
}

/// JSON header. Field order is fixed by declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub frames: usize,
    pub patches_per_frame: usize,
    pub embed_dim: usize,
    pub grid: Grid,
    pub candidates: usize,
    pub producer: ProducerMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub video: VideoContext,
    pub candidates: Vec<CandidateTrace>,
    pub producer: ProducerMetadata,
}

impl TraceFile {
    pub fn new(video: VideoContext, candidates: Vec<CandidateTrace>) -> Self {
        Self {
            video,
            candidates,
            producer: ProducerMetadata::default(),
        }
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            frames: self.video.frames(),
            patches_per_frame: self.video.patches_per_frame(),
            embed_dim: self.video.embed_dim(),
            grid: self.video.grid(),
            candidates: self.candidates.len(),
            producer: self.producer.clone(),
        }
    }
}

fn check_writable(trace: &TraceFile) -> Result<(), FormatError> {
    let mut v = check_video(&trace.video);
    v.extend(check_candidates(&trace.candidates, trace.video.frames()));
    if !v.is_empty() {
        return Err(ValidationError { violations: v }.into());
    }
    check_f32_exact(&trace.candidates)
}

/// Every attention value must convert to `f32` and back unchanged.
fn check_f32_exact(candidates: &[CandidateTrace]) -> Result<(), FormatError> {
    for (i, cand) in candidates.iter().enumerate() {
        for (j, step) in cand.steps.iter().enumerate() {
            let values = step.frame_attention.iter().enumerate().map(|(k, &x)| (Some(k), x));
            for (k, x) in values.chain([(None, step.text_attention)]) {
                if x as f32 as f64 != x {
                    let field = match k {
                        Some(k) => format!("frame_attention[{k}]"),
                        None => "text_attention".into(),
                    };
                    return Err(FormatError::NotRepresentable {
                        path: format!("candidates[{i}].steps[{j}].{field}"),
                        value: x,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Serialises a trace. Identical inputs give identical bytes.
pub fn encode_trace(trace: &TraceFile) -> Result<Vec<u8>, FormatError> {
    check_writable(trace)?;
    let header = serde_json::to_vec(&trace.header())?;
    let t = trace.video.frames();
    let mut out = Vec::with_capacity(encoded_len(trace, header.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &x in trace.video.patch_embeddings() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &x in trace.video.patch_coords() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for cand in &trace.candidates {
        let len = u32::try_from(cand.steps.len())
            .map_err(|_| FormatError::InvalidPayload("candidate longer than u32::MAX".into()))?;
        out.extend_from_slice(&cand.candidate_id.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.push(cand.finished as u8);
        for step in &cand.steps {
            debug_assert_eq!(step.frame_attention.len(), t);
            out.extend_from_slice(&step.token_id.to_le_bytes());
            for &x in &step.frame_attention {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
            out.extend_from_slice(&(step.text_attention as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Exact size of the encoding given the JSON header size:
/// `4 + 2 + 4 + |json| + 4 (TMD + 2TM) + sum(9 + L (8 + 4T))`.
pub fn encoded_len(trace: &TraceFile, header_len: usize) -> usize {
    let v = &trace.video;
    let t = v.frames();
    let m = v.patches_per_frame();
    let video = 4 * (t * m * v.embed_dim() + t * m * 2);
    let cands: usize = trace
        .candidates
        .iter()
        .map(|c| 9 + c.steps.len() * (4 + 4 * t + 4))
        .sum();
    4 + 2 + 4 + header_len + video + cands
}

pub fn write_trace<W: Write>(mut w: W, trace: &TraceFile) -> Result<(), FormatError> {
    w.write_all(&encode_trace(trace)?)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                section,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, section: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| FormatError::InvalidHeader("declared size overflows".into()))?;
        let raw = self.take(bytes, section)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a complete `.sstr` buffer.
pub fn decode_trace(bytes: &[u8]) -> Result<TraceFile, FormatError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic.try_into().unwrap()));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version });
    }
    let header_len = cur.u32("header length")? as usize;
    let header: TraceHeader = serde_json::from_slice(cur.take(header_len, "header")?)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    if header.grid.patches() != header.patches_per_frame {
        return Err(FormatError::InvalidHeader(format!(
            "grid {}x{} does not hold {} patches",
            header.grid.height, header.grid.width, header.patches_per_frame
        )));
    }
    let t = header.frames;
    let tm = t
        .checked_mul(header.patches_per_frame)
        .ok_or_else(|| FormatError::InvalidHeader("declared size overflows".into()))?;
    let tmd = tm
        .checked_mul(header.embed_dim)
        .ok_or_else(|| FormatError::InvalidHeader("declared size overflows".into()))?;
    let emb = cur.f32s(tmd, "patch embeddings")?;
    let coords = cur.f32s(tm * 2, "patch coordinates")?;
    let video = VideoContext::new(t, header.embed_dim, header.grid, emb, coords)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;

    let mut candidates = Vec::with_capacity(header.candidates.min(1 << 16));
    for _ in 0..header.candidates {
        let candidate_id = cur.u32("candidate id")?;
        let len = cur.u32("candidate length")? as usize;
        let finished = match cur.take(1, "finished flag")?[0] {
            0 => false,
            1 => true,
            b => {
                return Err(FormatError::InvalidPayload(format!(
                    "candidate {candidate_id}: finished flag {b}"
                )))
            }
        };
        let mut steps = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            let token_id = cur.u32("record")?;
            let frame_attention = cur.f32s(t, "record")?.into_iter().map(f64::from).collect();
            let text = f64::from(cur.f32s(1, "record")?[0]);
            steps.push(StepRecord::new(token_id, frame_attention, text));
        }
        candidates.push(CandidateTrace {
            candidate_id,
            steps,
            finished,
        });
    }
    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(FormatError::LengthMismatch(trailing));
    }
    Ok(TraceFile {
        video,
        candidates,
        producer: header.producer,
    })
}

pub fn read_trace<R: Read>(mut r: R) -> Result<TraceFile, FormatError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_trace(&buf)
}

pub fn load(path: impl AsRef<Path>) -> Result<TraceFile, FormatError> {
    decode_trace(&fs::read(path)?)
}

pub fn save(path: impl AsRef<Path>, trace: &TraceFile) -> Result<(), FormatError> {
    fs::write(path, encode_trace(trace)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoMirror {
    patch_embeddings: Vec<f32>,
    patch_coords: Vec<f32>,
}

/// JSON mirror: one object with the binary's header, video and candidates.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceMirror {
    format_version: u16,
    header: TraceHeader,
    video: VideoMirror,
    candidates: Vec<CandidateTrace>,
}

pub fn to_json_mirror(trace: &TraceFile) -> Result<String, FormatError> {
    check_writable(trace)?;
    let mirror = TraceMirror {
        format_version: FORMAT_VERSION,
        header: trace.header(),
        video: VideoMirror {
            patch_embeddings: trace.video.patch_embeddings().to_vec(),
            patch_coords: trace.video.patch_coords().to_vec(),
        },
        candidates: trace.candidates.clone(),
    };
    Ok(serde_json::to_string_pretty(&mirror)?)
}

pub fn from_json_mirror(json: &str) -> Result<TraceFile, FormatError> {
    let m: TraceMirror = serde_json::from_str(json)?;
    if m.format_version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: m.format_version,
        });
    }
    let h = m.header;
    if h.candidates != m.candidates.len() {
        return Err(FormatError::InvalidHeader(format!(
            "header declares {} candidates, found {}",
            h.candidates,
            m.candidates.len()
        )));
    }
    if h.grid.patches() != h.patches_per_frame {
        return Err(FormatError::InvalidHeader("grid does not match patch count".into()));
    }
    let video = VideoContext::new(
        h.frames,
        h.embed_dim,
        h.grid,
        m.video.patch_embeddings,
        m.video.patch_coords,
    )
    .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    if let Some(c) = m
        .candidates
        .iter()
        .find(|c| c.steps.iter().any(|s| s.frame_attention.len() != h.frames))
    {
        return Err(FormatError::InvalidPayload(format!(
            "candidate {} has records of the wrong width",
            c.candidate_id
        )));
    }
    check_f32_exact(&m.candidates)?;
    Ok(TraceFile {
        video,
        candidates: m.candidates,
        producer: h.producer,
    })
}
