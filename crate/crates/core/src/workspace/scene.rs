use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{dilate, rasterize_capsule, CellSet, GridSpec, GroundTruthGrid};
use crate::error::{Error, Result};
use crate::rng::{streams, SeedStream};

const MAX_PLACEMENT_RETRIES: usize = 200;
const MAX_PIPE_TILT_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Pipe,
    Shelf,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Pipe => "pipe",
            Domain::Shelf => "shelf",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pipe" => Ok(Domain::Pipe),
            "shelf" => Ok(Domain::Shelf),
            other => Err(Error::InvalidParams(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub domain: Domain,
    pub pipe_count_range: [u32; 2],
    pub partition_count_range: [u32; 2],
    pub object_count_range: [u32; 2],
    /// Pipe diameter in cells.
    pub pipe_thickness: u32,
    /// Largest pipe tilt away from its spanning axis, degrees; at most 15.
    pub pipe_max_tilt_deg: f64,
    /// Free margin kept around `keep_free`, in cells.
    pub clearance: u32,
    /// Cells that must stay free (start and goal footprints).
    pub keep_free: CellSet,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            domain: Domain::Pipe,
            pipe_count_range: [5, 12],
            partition_count_range: [1, 4],
            object_count_range: [6, 12],
            pipe_thickness: 2,
            pipe_max_tilt_deg: MAX_PIPE_TILT_DEG,
            clearance: 1,
            keep_free: CellSet::new(),
        }
    }
}

impl SceneParams {
    pub fn for_domain(domain: Domain) -> Self {
        Self { domain, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("pipe_count_range", self.pipe_count_range),
            ("partition_count_range", self.partition_count_range),
            ("object_count_range", self.object_count_range),
        ] {
            if lo > hi {
                return Err(Error::InvalidParams(format!("{name}: {lo} > {hi}")));
            }
        }
        if !(0.0..=MAX_PIPE_TILT_DEG).contains(&self.pipe_max_tilt_deg) {
            return Err(Error::InvalidParams(format!("pipe_max_tilt_deg must lie in [0, {MAX_PIPE_TILT_DEG}]")));
        }
        if self.pipe_thickness < 1 {
            return Err(Error::InvalidParams("pipe_thickness must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generates a random ground-truth scene. Deterministic in `(params, spec, seed)`.
pub fn generate_scene(params: &SceneParams, spec: &GridSpec, seed: u64) -> Result<GroundTruthGrid> {
    params.validate()?;
    spec.validate()?;
    let mut rng = SeedStream::new(seed, streams::SCENE);
    let forbidden = dilate(&params.keep_free, params.clearance as usize, spec);
    let mut builder = SceneBuilder { spec, forbidden, grid: GroundTruthGrid::empty(spec.clone()), next_id: 1 };

    match params.domain {
        Domain::Pipe => {
            let [lo, hi] = params.pipe_count_range;
            let n = rng.int_range(lo as i64, hi as i64);
            for _ in 0..n {
                builder.place(&mut rng, "pipe", |rng| {
                    pipe_cells(rng, spec, params.pipe_thickness, params.pipe_max_tilt_deg)
                })?;
            }
        }
        Domain::Shelf => {
            let [lo, hi] = params.partition_count_range;
            let n = rng.int_range(lo as i64, hi as i64);
            for _ in 0..n {
                builder.place(&mut rng, "partition", |rng| partition_cells(rng, spec))?;
            }
            let [lo, hi] = params.object_count_range;
            let n = rng.int_range(lo as i64, hi as i64);
            for _ in 0..n {
                builder.place(&mut rng, "object", |rng| object_cells(rng, spec))?;
            }
        }
    }
    Ok(builder.grid)
}

struct SceneBuilder<'a> {
    spec: &'a GridSpec,
    forbidden: CellSet,
    grid: GroundTruthGrid,
    next_id: u32,
}

impl SceneBuilder<'_> {
    fn place(
        &mut self,
        rng: &mut SeedStream,
        what: &str,
        mut draw: impl FnMut(&mut SeedStream) -> (CellSet, Option<usize>),
    ) -> Result<()> {
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let (cells, span_axis) = draw(rng);
            if cells.is_empty() || cells.intersects(&self.forbidden) {
                continue;
            }
            let id = self.next_id;
            // cells already owned keep their label
            let labels: BTreeMap<usize, u32> =
                cells.iter().filter(|c| !self.grid.object_ids.contains_key(c)).map(|c| (c, id)).collect();
            if let Some(axis) = span_axis {
                let last = self.spec.dims[axis] - 1;
                let touches = |v: usize| labels.keys().any(|&c| self.spec.coords(c)[axis] == v);
                if !(touches(0) && touches(last)) {
                    continue;
                }
            }
            self.next_id += 1;
            self.grid.object_ids.extend(labels);
            self.grid.occupied.extend_from(&cells);
            return Ok(());
        }
        Err(Error::InfeasibleScene(format!(
            "could not place {what} clear of the protected region in {MAX_PLACEMENT_RETRIES} tries on a {:?} grid",
            self.spec.dims
        )))
    }
}

/// A straight thick segment spanning one axis completely, tilted by at most
/// 15 degrees toward one perpendicular axis.
fn pipe_cells(rng: &mut SeedStream, spec: &GridSpec, thickness: u32, max_tilt_deg: f64) -> (CellSet, Option<usize>) {
    let n = spec.ndim();
    let span = rng.index(n);
    let radius = thickness as f64 * spec.resolution / 2.0;
    let tilt = rng.uniform_in(-max_tilt_deg, max_tilt_deg).to_radians();
    let tilt_axis = if n > 1 { (span + 1 + rng.index(n - 1)) % n } else { span };

    let len = spec.extent(span);
    let half = len / 2.0;
    let mut p0 = vec![0.0; n];
    let mut p1 = vec![0.0; n];
    // overshoot the spanning axis so the clipped band reaches both faces
    let overshoot = radius + spec.resolution;
    p0[span] = spec.origin[span] - overshoot;
    p1[span] = spec.origin[span] + len + overshoot;
    for axis in (0..n).filter(|&a| a != span) {
        let ext = spec.extent(axis);
        let drift = if axis == tilt_axis { (half + overshoot) * tilt.tan().abs() } else { 0.0 };
        // keep the whole band inside this axis so both faces are touched
        let lo = drift + radius * 0.5;
        let hi = ext - drift - radius * 0.5;
        let center = if lo < hi { rng.uniform_in(lo, hi) } else { ext / 2.0 };
        let slope = if axis == tilt_axis { tilt.tan() } else { 0.0 };
        p0[axis] = spec.origin[axis] + center - slope * (half + overshoot);
        p1[axis] = spec.origin[axis] + center + slope * (half + overshoot);
    }
    (rasterize_capsule(&p0, &p1, radius, spec), Some(span))
}

/// A one-cell-thick wall anchored at a grid face, covering 30-70% of the
/// axis it runs along.
fn partition_cells(rng: &mut SeedStream, spec: &GridSpec) -> (CellSet, Option<usize>) {
    let n = spec.ndim();
    let along = rng.index(n);
    let frac = rng.uniform_in(0.3, 0.7);
    let from_low = rng.uniform() < 0.5;
    let len = spec.dims[along];
    let cells_along = ((len as f64 * frac).round() as usize).clamp(1, len);
    let (a0, a1) = if from_low { (0, cells_along - 1) } else { (len - cells_along, len - 1) };
    let mut lo = vec![0; n];
    let mut hi = vec![0; n];
    for axis in 0..n {
        if axis == along {
            lo[axis] = a0;
            hi[axis] = a1;
        } else {
            let c = rng.index(spec.dims[axis]);
            lo[axis] = c;
            hi[axis] = c;
        }
    }
    (box_cells(spec, &lo, &hi), None)
}

/// A small box or round blob, 2-5 cells across.
fn object_cells(rng: &mut SeedStream, spec: &GridSpec) -> (CellSet, Option<usize>) {
    let n = spec.ndim();
    let blob = rng.uniform() < 0.5;
    let center: Vec<usize> = spec.dims.iter().map(|&d| rng.index(d)).collect();
    if blob {
        let r_cells = rng.uniform_in(1.0, 2.5);
        let c = spec.cell_center(spec.index(&center).expect("in grid"));
        (rasterize_capsule(&c, &c, r_cells * spec.resolution, spec), None)
    } else {
        let mut lo = vec![0; n];
        let mut hi = vec![0; n];
        for axis in 0..n {
            let size = rng.int_range(2, 5) as usize;
            lo[axis] = center[axis].saturating_sub(size / 2);
            hi[axis] = (lo[axis] + size - 1).min(spec.dims[axis] - 1);
        }
        (box_cells(spec, &lo, &hi), None)
    }
}

fn box_cells(spec: &GridSpec, lo: &[usize], hi: &[usize]) -> CellSet {
    let mut out = Vec::new();
    spec.for_each_in_box(lo, hi, |c| out.push(c));
    out.into_iter().collect()
}
