//! Probabilistic occupancy estimate built from interaction history, and
//! predictors that extrapolate it into unexplored space.

mod predict;
pub mod wire;

pub use predict::{predict, PredictorConfig, PredictorKind};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workspace::format::{decode_streams, encode_streams, GridHeader, Payload};
use crate::workspace::{CellSet, GridSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "p", rename_all = "snake_case")]
pub enum CellState {
    KnownFree,
    KnownOccupied,
    Unknown(f64),
}

impl CellState {
    /// 0 for free, 1 for occupied, `p` otherwise.
    pub fn probability(self) -> f64 {
        match self {
            CellState::KnownFree => 0.0,
            CellState::KnownOccupied => 1.0,
            CellState::Unknown(p) => p,
        }
    }
}

/// Per-cell belief. `KnownFree` is absorbing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEstimate {
    pub spec: GridSpec,
    states: Vec<CellState>,
}

impl OccupancyEstimate {
    pub fn new(spec: GridSpec) -> Self {
        Self::with_prior(spec, 0.5)
    }

    /// Every cell unknown with occupancy probability `prior`, clamped to [0, 1].
    pub fn with_prior(spec: GridSpec, prior: f64) -> Self {
        let n = spec.num_cells();
        Self { spec, states: vec![CellState::Unknown(prior.clamp(0.0, 1.0)); n] }
    }

    pub fn state(&self, cell: usize) -> CellState {
        self.states[cell]
    }

    pub fn states(&self) -> &[CellState] {
        &self.states
    }

    pub fn is_known_free(&self, cell: usize) -> bool {
        self.states[cell] == CellState::KnownFree
    }

    pub fn known_free(&self) -> CellSet {
        self.cells_where(|s| s == CellState::KnownFree)
    }

    pub fn known_occupied(&self) -> CellSet {
        self.cells_where(|s| s == CellState::KnownOccupied)
    }

    fn cells_where(&self, f: impl Fn(CellState) -> bool) -> CellSet {
        self.states.iter().enumerate().filter(|(_, &s)| f(s)).map(|(i, _)| i).collect()
    }

    /// Marks every cell KnownFree. Returns how many KnownOccupied marks were
    /// overridden.
    pub fn certify_free(&mut self, cells: &CellSet) -> usize {
        let mut conflicts = 0;
        for c in cells.iter() {
            if self.states[c] == CellState::KnownOccupied {
                conflicts += 1;
            }
            self.states[c] = CellState::KnownFree;
        }
        if conflicts > 0 {
            warn!("free certification overrode {conflicts} occupied mark(s)");
        }
        conflicts
    }

    /// Marks `cell` KnownOccupied unless it is KnownFree.
    pub fn mark_occupied(&mut self, cell: usize) {
        if self.states[cell] != CellState::KnownFree {
            self.states[cell] = CellState::KnownOccupied;
        }
    }

    /// Records a localized contact: the containing cell becomes occupied and
    /// unknown cells within `spread_radius` (Chebyshev) rise to at least
    /// `0.9 * confidence`.
    pub fn mark_contact(&mut self, point: &[f64], confidence: f64, spread_radius: usize) -> Result<usize> {
        let cell = self.spec.cell_of(point).ok_or_else(|| Error::OutOfGrid(point.to_vec()))?;
        self.mark_occupied(cell);
        let floor = 0.9 * confidence.clamp(0.0, 1.0);
        let ring = crate::workspace::dilate(&CellSet::from_iter([cell]), spread_radius, &self.spec);
        for c in ring.iter() {
            if let CellState::Unknown(p) = self.states[c] {
                self.states[c] = CellState::Unknown(p.max(floor));
            }
        }
        Ok(cell)
    }

    /// Three-level encoding in half units: 0 free, 1 unknown, 2 occupied.
    pub fn to_half_units(&self) -> Vec<u8> {
        self.states
            .iter()
            .map(|s| match s {
                CellState::KnownFree => 0,
                CellState::Unknown(_) => 1,
                CellState::KnownOccupied => 2,
            })
            .collect()
    }

    /// Inverse of [`Self::to_half_units`]; unknown cells get `prior`.
    pub fn from_half_units(spec: GridSpec, values: &[u8], prior: f64) -> Result<Self> {
        if values.len() != spec.num_cells() {
            return Err(Error::Format(format!("{} values for {} cells", values.len(), spec.num_cells())));
        }
        let mut est = Self::with_prior(spec, prior);
        for (s, &v) in est.states.iter_mut().zip(values) {
            *s = match v {
                0 => CellState::KnownFree,
                1 => continue,
                2 => CellState::KnownOccupied,
                other => return Err(Error::Format(format!("half-unit value {other} outside 0..=2"))),
            };
        }
        Ok(est)
    }

    /// Snapshot in the grid file format with the estimate payload.
    pub fn encode_snapshot(&self) -> Result<Vec<u8>> {
        let values: Vec<u8> = self
            .states
            .iter()
            .map(|s| match s {
                CellState::KnownFree => 0,
                CellState::KnownOccupied => 1,
                CellState::Unknown(_) => 2,
            })
            .collect();
        let labels = vec![0u32; values.len()];
        encode_streams(&GridHeader::new(Payload::Estimate, self.spec.clone(), None, None), &values, &labels)
    }

    /// Inverse of [`encode_snapshot`](Self::encode_snapshot); unknown cells
    /// come back at 0.5.
    pub fn decode_snapshot(bytes: &[u8]) -> Result<Self> {
        let (header, values, _) = decode_streams(bytes)?;
        if header.payload != Payload::Estimate {
            return Err(Error::Format("expected an estimate payload".into()));
        }
        let states = values
            .iter()
            .map(|v| match v {
                0 => Ok(CellState::KnownFree),
                1 => Ok(CellState::KnownOccupied),
                2 => Ok(CellState::Unknown(0.5)),
                x => Err(Error::Format(format!("invalid estimate value {x}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec: header.spec, states })
    }
}
