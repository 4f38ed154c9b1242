//! Everything that crosses the client/server boundary is encoded as a
//! length-prefixed frame:
//!
//! `u64 len | u8 kind | u8 direction | u32 round | u32 client | payload`
//!
//! where `len` counts the bytes after itself. Parameter, control and
//! amplitude payloads are CCN1 parameter files; counts are a `u64`.

use std::collections::HashSet;
use std::hash::{BuildHasherDefault, Hasher};
use std::io::Write;
use std::path::Path;

use ccnet_tensor::ParamSet;

use crate::error::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Params = 1,
    Control = 2,
    Count = 3,
    Amplitude = 4,
}

impl FrameKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameKind::Params,
            2 => FrameKind::Control,
            3 => FrameKind::Count,
            4 => FrameKind::Amplitude,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToServer = 0,
    ToClient = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: u8,
    pub direction: u8,
    pub round: u32,
    pub client: u32,
    pub payload: Vec<u8>,
}

const HEADER: usize = 1 + 1 + 4 + 4;

impl Frame {
    pub fn encode(kind: FrameKind, direction: Direction, round: usize, client: usize, payload: Vec<u8>) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + HEADER + payload.len());
        out.extend_from_slice(&((HEADER + payload.len()) as u64).to_le_bytes());
        out.push(kind as u8);
        out.push(direction as u8);
        out.extend_from_slice(&(round as u32).to_le_bytes());
        out.extend_from_slice(&(client as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn kind(&self) -> Option<FrameKind> {
        FrameKind::from_u8(self.kind)
    }
}

/// Splits a byte stream into frames.
pub fn parse_frames(mut bytes: &[u8]) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 8 {
            return Err(FedError::Frame("truncated length prefix".into()));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        if len < HEADER || bytes.len() < 8 + len {
            return Err(FedError::Frame(format!("frame of {len} bytes does not fit the stream")));
        }
        let body = &bytes[8..8 + len];
        frames.push(Frame {
            kind: body[0],
            direction: body[1],
            round: u32::from_le_bytes(body[2..6].try_into().unwrap()),
            client: u32::from_le_bytes(body[6..10].try_into().unwrap()),
            payload: body[HEADER..].to_vec(),
        });
        bytes = &bytes[8 + len..];
    }
    Ok(frames)
}

pub fn encode_params(kind: FrameKind, direction: Direction, round: usize, client: usize, p: &ParamSet) -> Vec<u8> {
    Frame::encode(kind, direction, round, client, p.to_bytes())
}

pub fn encode_count(round: usize, client: usize, n: usize) -> Vec<u8> {
    Frame::encode(FrameKind::Count, Direction::ToServer, round, client, (n as u64).to_le_bytes().to_vec())
}

/// Decodes a single frame of the expected kind.
pub fn decode(bytes: &[u8], kind: FrameKind) -> Result<Frame> {
    let mut frames = parse_frames(bytes)?;
    if frames.len() != 1 || frames[0].kind() != Some(kind) {
        return Err(FedError::Frame(format!("expected one {kind:?} frame")));
    }
    Ok(frames.remove(0))
}

pub fn decode_params(bytes: &[u8], kind: FrameKind) -> Result<ParamSet> {
    Ok(ParamSet::from_bytes(&decode(bytes, kind)?.payload)?)
}

pub fn decode_count(bytes: &[u8]) -> Result<usize> {
    let f = decode(bytes, FrameKind::Count)?;
    let raw: [u8; 8] = f
        .payload
        .as_slice()
        .try_into()
        .map_err(|_| FedError::Frame("count payload must be 8 bytes".into()))?;
    Ok(u64::from_le_bytes(raw) as usize)
}

/// Every frame that crossed the boundary, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExchangeLog {
    pub enabled: bool,
    pub bytes: Vec<u8>,
    pub frames: usize,
}

impl ExchangeLog {
    pub fn recording() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    pub fn record(&mut self, frame: &[u8]) {
        if self.enabled {
            self.bytes.extend_from_slice(frame);
            self.frames += 1;
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.bytes)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub frames: usize,
    pub params: usize,
    pub controls: usize,
    pub counts: usize,
    pub amplitudes: usize,
    /// bytes of payload scanned for image fingerprints
    pub scanned: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Default)]
struct IdentityHasher(u64);

impl Hasher for IdentityHasher {
    fn finish(&self) -> u64 {
        self.0.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 << 8) | b as u64;
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = v;
    }
}

/// Runs of four consecutive pixel values that are not exact 0 or 1 (which
/// clamped pixels and zero-initialised tensors share), as raw LE bytes.
fn fingerprints(image: &[f64]) -> Vec<[u8; 32]> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + 4 <= image.len() && out.len() < 8 {
        let w = &image[i..i + 4];
        if w.iter().all(|&v| v != 0.0 && v != 1.0) {
            let mut fp = [0u8; 32];
            for (k, v) in w.iter().enumerate() {
                fp[k * 8..(k + 1) * 8].copy_from_slice(&v.to_le_bytes());
            }
            out.push(fp);
            i += 97;
        } else {
            i += 1;
        }
    }
    out
}

/// Checks a recorded stream: only the four payload kinds occur, every
/// payload is well formed (parameter and control frames carry exactly the
/// model's tensor names, amplitude frames only `amp.*` tensors, counts are
/// 8 bytes), and no raw image of `images` appears anywhere at any byte
/// offset.
pub fn audit(stream: &[u8], param_names: &[String], images: &[&[f64]]) -> Result<AuditReport> {
    let frames = parse_frames(stream)?;
    let mut r = AuditReport {
        frames: frames.len(),
        ..Default::default()
    };
    let mut prints: HashSet<u64, BuildHasherDefault<IdentityHasher>> = HashSet::default();
    let mut full: HashSet<[u8; 32]> = HashSet::new();
    for img in images {
        for fp in fingerprints(img) {
            prints.insert(u64::from_le_bytes(fp[..8].try_into().unwrap()));
            full.insert(fp);
        }
    }
    for (n, f) in frames.iter().enumerate() {
        let tag = format!("frame {n} (round {}, client {})", f.round, f.client);
        match f.kind() {
            None => r.violations.push(format!("{tag}: unknown kind {}", f.kind)),
            Some(FrameKind::Count) => {
                r.counts += 1;
                if f.payload.len() != 8 {
                    r.violations.push(format!("{tag}: count payload of {} bytes", f.payload.len()));
                }
            }
            Some(kind) => match ParamSet::from_bytes(&f.payload) {
                Err(e) => r.violations.push(format!("{tag}: payload is not a parameter file: {e}")),
                Ok(p) => {
                    let ok = if kind == FrameKind::Amplitude {
                        r.amplitudes += 1;
                        p.names().iter().all(|s| s.starts_with("amp."))
                    } else {
                        if kind == FrameKind::Params {
                            r.params += 1;
                        } else {
                            r.controls += 1;
                        }
                        p.names() == param_names
                    };
                    if !ok {
                        r.violations.push(format!("{tag}: unexpected tensor names for {kind:?}"));
                    }
                }
            },
        }
        if f.payload.len() >= 32 {
            r.scanned += f.payload.len();
            for off in 0..=f.payload.len() - 32 {
                let head = u64::from_le_bytes(f.payload[off..off + 8].try_into().unwrap());
                if prints.contains(&head) {
                    let win: [u8; 32] = f.payload[off..off + 32].try_into().unwrap();
                    if full.contains(&win) {
                        r.violations.push(format!("{tag}: raw image pixels at payload offset {off}"));
                        break;
                    }
                }
            }
        }
    }
    Ok(r)
}
