//! Portable grid file format.
//!
//! ```text
//! u32 LE  header length H
//! H bytes header JSON (UTF-8), see [`GridHeader`]
//! u32 LE  number of value runs R
//! R x     { u8 value, u32 LE run length }      cell values, flat index order
//! u32 LE  number of label runs K
//! K x     { u32 LE label, u32 LE run length }  object labels, 0 = none
//! ```
//!
//! Flat index order is axis 0 fastest (row-major for two axes). Runs are
//! maximal: consecutive runs never share a value. For ground-truth grids the
//! value is 0 (free) or 1 (occupied); estimate snapshots use 0 = known free,
//! 1 = known occupied, 2 = unknown, with an all-zero label stream.

use serde::{Deserialize, Serialize};

use super::{CellSet, Domain, GridSpec, GroundTruthGrid};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "blindreach-grid";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Occupancy,
    Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub format: String,
    pub version: u32,
    pub payload: Payload,
    pub spec: GridSpec,
    pub domain: Option<Domain>,
    pub seed: Option<u64>,
}

impl GridHeader {
    pub fn new(payload: Payload, spec: GridSpec, domain: Option<Domain>, seed: Option<u64>) -> Self {
        Self { format: FORMAT_NAME.into(), version: FORMAT_VERSION, payload, spec, domain, seed }
    }
}

pub fn run_length_encode<T: Copy + PartialEq>(values: impl IntoIterator<Item = T>) -> Vec<(T, u32)> {
    let mut runs: Vec<(T, u32)> = Vec::new();
    for v in values {
        match runs.last_mut() {
            Some((last, n)) if *last == v && *n < u32::MAX => *n += 1,
            _ => runs.push((v, 1)),
        }
    }
    runs
}

pub fn run_length_decode<T: Copy>(runs: &[(T, u32)], expected: usize) -> Result<Vec<T>> {
    let total: u64 = runs.iter().map(|&(_, n)| n as u64).sum();
    if total != expected as u64 {
        return Err(Error::Format(format!("runs cover {total} cells, grid has {expected}")));
    }
    let mut out = Vec::with_capacity(expected);
    for &(v, n) in runs {
        out.extend(std::iter::repeat_n(v, n as usize));
    }
    Ok(out)
}

/// Encodes a header plus raw value and label streams.
pub fn encode_streams(header: &GridHeader, values: &[u8], labels: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let json = serde_json::to_vec(header)?;
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    let runs = run_length_encode(values.iter().copied());
    put_u32(&mut out, runs.len() as u32);
    for (v, n) in runs {
        out.push(v);
        put_u32(&mut out, n);
    }
    let runs = run_length_encode(labels.iter().copied());
    put_u32(&mut out, runs.len() as u32);
    for (id, n) in runs {
        put_u32(&mut out, id);
        put_u32(&mut out, n);
    }
    Ok(out)
}

/// Inverse of [`encode_streams`].
pub fn decode_streams(bytes: &[u8]) -> Result<(GridHeader, Vec<u8>, Vec<u32>)> {
    let mut r = Reader { bytes, pos: 0 };
    let hlen = r.u32()? as usize;
    let header: GridHeader = serde_json::from_slice(r.take(hlen)?)?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format {} v{}", header.format, header.version)));
    }
    header.spec.validate()?;
    let n = header.spec.num_cells();
    let nruns = r.u32()? as usize;
    let mut runs = Vec::with_capacity(nruns.min(n));
    for _ in 0..nruns {
        let v = r.take(1)?[0];
        runs.push((v, r.u32()?));
    }
    let values = run_length_decode(&runs, n)?;
    let nruns = r.u32()? as usize;
    let mut runs = Vec::with_capacity(nruns.min(n));
    for _ in 0..nruns {
        let id = r.u32()?;
        runs.push((id, r.u32()?));
    }
    let labels = run_length_decode(&runs, n)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((header, values, labels))
}

pub fn encode_grid(grid: &GroundTruthGrid, domain: Option<Domain>, seed: Option<u64>) -> Result<Vec<u8>> {
    let n = grid.spec.num_cells();
    let mut values = vec![0u8; n];
    for c in grid.occupied.iter() {
        values[c] = 1;
    }
    let mut labels = vec![0u32; n];
    for (&c, &id) in &grid.object_ids {
        labels[c] = id;
    }
    let header = GridHeader::new(Payload::Occupancy, grid.spec.clone(), domain, seed);
    encode_streams(&header, &values, &labels)
}

pub fn decode_grid(bytes: &[u8]) -> Result<(GroundTruthGrid, GridHeader)> {
    let (header, values, labels) = decode_streams(bytes)?;
    if header.payload != Payload::Occupancy {
        return Err(Error::Format("not an occupancy grid".into()));
    }
    if let Some(v) = values.iter().find(|&&v| v > 1) {
        return Err(Error::Format(format!("occupancy value {v} out of range")));
    }
    let occupied: CellSet = values.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect();
    let object_ids = labels.iter().enumerate().filter(|(_, &id)| id != 0).map(|(i, &id)| (i, id)).collect();
    let grid = GroundTruthGrid { spec: header.spec.clone(), occupied, object_ids };
    grid.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok((grid, header))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
