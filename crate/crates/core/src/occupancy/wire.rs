//! Framed protocol shared by external predictors and exported datasets.
//!
//! Every frame is a little-endian `u32` byte length followed by the bytes.
//! A message is a JSON header frame followed by one or more payload frames:
//!
//! ```text
//! request   header{kind:"request"}   + u8 grid   (0 free, 1 unknown, 2 occupied; value / 2 = probability)
//! response  header{kind:"response"}  + f32 LE grid
//! record    header{kind:"record"}    + u8 estimate grid + u8 label grid (0 free, 2 occupied)
//! ```
//!
//! Grids list cells in flat index order, axis 0 fastest, which is row-major
//! for a two-axis grid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_NAME: &str = "blindreach-predict";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Request,
    Response,
    Record,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageHeader {
    pub format: String,
    pub version: u32,
    pub kind: MessageKind,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MessageHeader {
    pub fn new(kind: MessageKind, dims: Vec<usize>) -> Self {
        Self { format: PROTOCOL_NAME.into(), version: PROTOCOL_VERSION, kind, dims, actions: None, seed: None }
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    fn check(&self, kind: MessageKind) -> Result<()> {
        if self.format != PROTOCOL_NAME || self.version != PROTOCOL_VERSION {
            return Err(Error::Format(format!("unsupported protocol {} v{}", self.format, self.version)));
        }
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind:?} message, got {:?}", self.kind)));
        }
        Ok(())
    }
}

pub fn write_frame(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| Error::Format("frame exceeds 4 GiB".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(Error::Format("truncated frame length".into())),
            n => got += n,
        }
    }
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated frame body".into()))?;
    Ok(Some(buf))
}

fn require_frame(r: &mut impl Read) -> Result<Vec<u8>> {
    read_frame(r)?.ok_or_else(|| Error::Format("missing frame".into()))
}

fn write_header(w: &mut impl Write, header: &MessageHeader) -> Result<()> {
    write_frame(w, &serde_json::to_vec(header)?)
}

fn read_header(r: &mut impl Read) -> Result<Option<MessageHeader>> {
    match read_frame(r)? {
        None => Ok(None),
        Some(b) => Ok(Some(serde_json::from_slice(&b)?)),
    }
}

fn grid_frame(r: &mut impl Read, cells: usize, width: usize) -> Result<Vec<u8>> {
    let b = require_frame(r)?;
    if b.len() != cells * width {
        return Err(Error::Format(format!("grid frame has {} bytes, expected {}", b.len(), cells * width)));
    }
    Ok(b)
}

fn check_half_units(grid: &[u8]) -> Result<()> {
    match grid.iter().find(|&&v| v > 2) {
        Some(v) => Err(Error::Format(format!("grid value {v} outside 0..=2"))),
        None => Ok(()),
    }
}

pub fn write_request(w: &mut impl Write, dims: &[usize], grid: &[u8]) -> Result<()> {
    write_header(w, &MessageHeader::new(MessageKind::Request, dims.to_vec()))?;
    write_frame(w, grid)
}

pub fn read_request(r: &mut impl Read) -> Result<Option<(MessageHeader, Vec<u8>)>> {
    let Some(h) = read_header(r)? else { return Ok(None) };
    h.check(MessageKind::Request)?;
    let grid = grid_frame(r, h.num_cells(), 1)?;
    check_half_units(&grid)?;
    Ok(Some((h, grid)))
}

pub fn write_response(w: &mut impl Write, dims: &[usize], probs: &[f32]) -> Result<()> {
    write_header(w, &MessageHeader::new(MessageKind::Response, dims.to_vec()))?;
    let bytes: Vec<u8> = probs.iter().flat_map(|p| p.to_le_bytes()).collect();
    write_frame(w, &bytes)
}

pub fn read_response(r: &mut impl Read) -> Result<(MessageHeader, Vec<f32>)> {
    let h = read_header(r)?.ok_or_else(|| Error::Format("empty response".into()))?;
    h.check(MessageKind::Response)?;
    let b = grid_frame(r, h.num_cells(), 4)?;
    let probs = b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((h, probs))
}

/// One training example: a partial estimate and its supervision labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub dims: Vec<usize>,
    pub actions: u32,
    pub seed: u64,
    pub estimate: Vec<u8>,
    pub labels: Vec<u8>,
}

pub fn write_record(w: &mut impl Write, rec: &Record) -> Result<()> {
    let mut h = MessageHeader::new(MessageKind::Record, rec.dims.clone());
    h.actions = Some(rec.actions);
    h.seed = Some(rec.seed);
    write_header(w, &h)?;
    write_frame(w, &rec.estimate)?;
    write_frame(w, &rec.labels)
}

pub fn read_record(r: &mut impl Read) -> Result<Option<Record>> {
    let Some(h) = read_header(r)? else { return Ok(None) };
    h.check(MessageKind::Record)?;
    let estimate = grid_frame(r, h.num_cells(), 1)?;
    let labels = grid_frame(r, h.num_cells(), 1)?;
    check_half_units(&estimate)?;
    check_half_units(&labels)?;
    let missing = |f: &str| Error::Format(format!("record header lacks {f}"));
    Ok(Some(Record {
        dims: h.dims,
        actions: h.actions.ok_or_else(|| missing("actions"))?,
        seed: h.seed.ok_or_else(|| missing("seed"))?,
        estimate,
        labels,
    }))
}
