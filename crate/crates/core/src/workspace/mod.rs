//! Discretized workspace: grid geometry, ground-truth scenes and cell-set
//! rasterization.
//!
//! Cells are addressed by a flat index with axis 0 varying fastest, i.e.
//! `index = c0 + d0 * (c1 + d1 * (c2 + ...))`. For the usual two-axis grid
//! this is row-major with rows along axis 1.

mod cells;
pub mod format;
mod scene;

pub use cells::CellSet;
pub use scene::{generate_scene, Domain, SceneParams};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    /// Meters per cell.
    pub resolution: f64,
    /// World coordinate of the corner of cell (0, ..., 0).
    pub origin: Vec<f64>,
}

impl GridSpec {
    pub fn new(dims: Vec<usize>, resolution: f64, origin: Vec<f64>) -> Result<Self> {
        let spec = Self { dims, resolution, origin };
        spec.validate()?;
        Ok(spec)
    }

    /// Two-axis grid anchored at the world origin.
    pub fn planar(nx: usize, ny: usize, resolution: f64) -> Result<Self> {
        Self::new(vec![nx, ny], resolution, vec![0.0, 0.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGrid(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::InvalidGrid(format!("resolution must be > 0, got {}", self.resolution)));
        }
        if self.origin.len() != self.dims.len() {
            return Err(Error::InvalidGrid("origin and dims disagree on dimension".into()));
        }
        Ok(())
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, coords: &[usize]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for (&c, &d) in coords.iter().zip(&self.dims) {
            if c >= d {
                return None;
            }
            idx += c * stride;
            stride *= d;
        }
        Some(idx)
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&d| {
                let c = index % d;
                index /= d;
                c
            })
            .collect()
    }

    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        self.coords(index).iter().zip(&self.origin).map(|(&c, &o)| o + (c as f64 + 0.5) * self.resolution).collect()
    }

    /// Cell containing a world point, if inside the grid.
    pub fn cell_of(&self, point: &[f64]) -> Option<usize> {
        let mut coords = Vec::with_capacity(self.ndim());
        for ((&p, &o), &d) in point.iter().zip(&self.origin).zip(&self.dims) {
            let c = ((p - o) / self.resolution).floor();
            if !(c >= 0.0 && c < d as f64) {
                return None;
            }
            coords.push(c as usize);
        }
        self.index(&coords)
    }

    /// World-space extent of axis `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        self.dims[axis] as f64 * self.resolution
    }

    /// Inclusive cell range along `axis` whose centers fall in `[lo, hi]`,
    /// clipped to the grid. `None` when empty.
    fn center_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let o = self.origin[axis];
        let first = ((lo - o) / self.resolution - 0.5).ceil().max(0.0);
        let last = ((hi - o) / self.resolution - 0.5).floor().min(self.dims[axis] as f64 - 1.0);
        (first <= last).then_some((first as usize, last as usize))
    }

    /// Visits every cell in the inclusive coordinate box `[lo, hi]`.
    fn for_each_in_box(&self, lo: &[usize], hi: &[usize], mut f: impl FnMut(usize)) {
        let n = self.ndim();
        let mut cur = lo.to_vec();
        loop {
            f(self.index(&cur).expect("box inside grid"));
            let mut axis = 0;
            loop {
                if axis == n {
                    return;
                }
                if cur[axis] < hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lo[axis];
                axis += 1;
            }
        }
    }
}

/// Binary ground-truth workspace with per-cell object labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthGrid {
    pub spec: GridSpec,
    pub occupied: CellSet,
    /// Object label per occupied cell; labels start at 1.
    pub object_ids: BTreeMap<usize, u32>,
}

impl GroundTruthGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self { spec, occupied: CellSet::new(), object_ids: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let n = self.spec.num_cells();
        if self.occupied.iter().any(|c| c >= n) {
            return Err(Error::InvalidGrid("occupied cell outside grid".into()));
        }
        if self.object_ids.keys().any(|&c| !self.occupied.contains(c)) {
            return Err(Error::InvalidGrid("object label on a free cell".into()));
        }
        Ok(())
    }

    pub fn is_occupied(&self, cell: usize) -> bool {
        self.occupied.contains(cell)
    }

    /// Distinct object labels, ascending.
    pub fn objects(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.object_ids.values().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn object_cells(&self, id: u32) -> CellSet {
        self.object_ids.iter().filter(|(_, &v)| v == id).map(|(&c, _)| c).collect()
    }
}

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let ab = b[i] - a[i];
        ab2 += ab * ab;
        ap_ab += (p[i] - a[i]) * ab;
    }
    let t = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    (0..p.len())
        .map(|i| {
            let q = a[i] + t * (b[i] - a[i]);
            (p[i] - q).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Every cell whose center lies within `radius` of the segment `[p0, p1]`.
/// Points outside the grid are clipped.
pub fn rasterize_capsule(p0: &[f64], p1: &[f64], radius: f64, spec: &GridSpec) -> CellSet {
    // Canonical endpoint order keeps the result exactly symmetric.
    let (a, b) =
        if p0.iter().partial_cmp(p1.iter()) == Some(std::cmp::Ordering::Greater) { (p1, p0) } else { (p0, p1) };
    let n = spec.ndim();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for axis in 0..n {
        let min = a[axis].min(b[axis]) - radius;
        let max = a[axis].max(b[axis]) + radius;
        match spec.center_range(axis, min, max) {
            Some((l, h)) => {
                lo.push(l);
                hi.push(h);
            }
            None => return CellSet::new(),
        }
    }
    let mut out = Vec::new();
    spec.for_each_in_box(&lo, &hi, |cell| {
        let c = spec.cell_center(cell);
        if point_segment_distance(&c, a, b) <= radius {
            out.push(cell);
        }
    });
    out.sort_unstable();
    CellSet::from_sorted(out)
}

/// Chebyshev dilation of a cell set by `radius` cells.
pub fn dilate(cells: &CellSet, radius: usize, spec: &GridSpec) -> CellSet {
    if radius == 0 {
        return cells.clone();
    }
    let mut out = Vec::new();
    for cell in cells.iter() {
        let c = spec.coords(cell);
        let lo: Vec<usize> = c.iter().map(|&x| x.saturating_sub(radius)).collect();
        let hi: Vec<usize> = c.iter().zip(&spec.dims).map(|(&x, &d)| (x + radius).min(d - 1)).collect();
        spec.for_each_in_box(&lo, &hi, |n| out.push(n));
    }
    out.into_iter().collect()
}
