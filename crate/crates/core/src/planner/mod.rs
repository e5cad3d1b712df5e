//! Lattice planning under contact-derived constraints.
//!
//! A collision hypothesis set (CHS) is a set of cells of which at least one
//! is occupied. An edge whose swept cells contain a whole CHS is provably
//! infeasible; partial overlap lowers its validity probability
//! `P = prod_i (1 - |S ∩ k_i| / |k_i|)`.

mod search;

pub use search::{weighted_astar, Lattice, PlanOutcome, SearchResult};

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{edge_in_bounds, robot_cells_at, swept_cells, Action, ArmModel, Config};
use crate::occupancy::OccupancyEstimate;
use crate::workspace::{dilate, CellSet, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChsSet {
    pub cells: CellSet,
    pub origin_edge: (Config, Config),
    pub created_iter: usize,
}

/// Cells adjacent to the arm at the last contact-free pose of a colliding
/// edge: the one-cell ring around the footprint, restricted to the edge's
/// swept cells when given, minus known free cells. Falls back to the bare
/// ring when filtering leaves nothing.
pub fn chs_from_collision(arm: &ArmModel, q_col: &[f64], swept: Option<&CellSet>, est: &OccupancyEstimate) -> CellSet {
    let spec = &est.spec;
    let footprint = robot_cells_at(arm, q_col, spec);
    let ring = dilate(&footprint, 1, spec).difference(&footprint);
    let restricted = match swept {
        Some(s) => ring.intersection(s),
        None => ring.clone(),
    };
    let cells: CellSet = restricted.iter().filter(|&c| !est.is_known_free(c)).collect();
    if !cells.is_empty() {
        cells
    } else if !ring.is_empty() {
        ring
    } else {
        footprint
    }
}

pub fn edge_validity(swept: &CellSet, chs: &[ChsSet]) -> f64 {
    let mut p = 1.0;
    for k in chs {
        let hit = swept.intersection_count(&k.cells);
        if hit == k.cells.len() {
            return 0.0;
        }
        p *= 1.0 - hit as f64 / k.cells.len() as f64;
    }
    p
}

/// Removes certified free cells from every CHS. A CHS reduced to a single
/// cell pins that cell as occupied; one that would lose every cell is left
/// untouched.
pub fn prune_chs(chs: &mut [ChsSet], newly_free: &CellSet, est: &mut OccupancyEstimate) {
    for k in chs.iter_mut() {
        if !k.cells.intersects(newly_free) {
            continue;
        }
        let rest = k.cells.difference(newly_free);
        if rest.is_empty() {
            warn!("free certification contradicts a collision hypothesis; keeping it");
            continue;
        }
        if rest.len() == 1 {
            est.mark_occupied(rest.as_slice()[0]);
        }
        k.cells = rest;
    }
}

/// State-action pairs whose execution disagreed with the free-space model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySet {
    pub entries: Vec<(Config, Action)>,
    /// Radius in lattice steps.
    pub delta: f64,
    pub zeta: f64,
}

impl Default for DiscrepancySet {
    fn default() -> Self {
        Self { entries: Vec::new(), delta: 2.0, zeta: 5.0 }
    }
}

impl DiscrepancySet {
    pub fn new(delta: f64, zeta: f64) -> Result<Self> {
        if !(delta > 0.0) || !(zeta >= 0.0) {
            return Err(Error::InvalidParams("need delta > 0 and zeta >= 0".into()));
        }
        Ok(Self { entries: Vec::new(), delta, zeta })
    }

    pub fn insert(&mut self, s: Config, a: Action) -> bool {
        if self.entries.iter().any(|(q, b)| *q == s && *b == a) {
            return false;
        }
        self.entries.push((s, a));
        true
    }

    /// Infinite on a recorded pair; otherwise `zeta / d` for the nearest
    /// same-action entry within `delta`, or 0.
    pub fn penalty(&self, s: &Config, a: Action) -> f64 {
        let mut worst: f64 = 0.0;
        for (q, b) in &self.entries {
            if *b != a {
                continue;
            }
            let d = s.euclidean_distance(q);
            if d == 0.0 {
                return f64::INFINITY;
            }
            if d < self.delta {
                worst = worst.max(self.zeta / d);
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    Chs,
    Cmax,
    EstimateOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub mode: CostMode,
    pub alpha: f64,
    pub beta: f64,
    /// Predicted occupancy above which EstimateOnly refuses a swept cell.
    pub prune_threshold: f64,
    pub heuristic_weight: f64,
    pub expansion_budget: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            mode: CostMode::Chs,
            alpha: 10.0,
            beta: 1.0,
            prune_threshold: 0.8,
            heuristic_weight: 5.0,
            expansion_budget: 200_000,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.heuristic_weight >= 1.0 && self.expansion_budget > 0) {
            return Err(Error::InvalidParams(
                "need alpha, beta >= 0, heuristic_weight >= 1, expansion_budget > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Everything learned about the world so far.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub chs: Vec<ChsSet>,
    pub disc: DiscrepancySet,
    /// Edges that collided, in execution direction.
    pub invalid_edges: BTreeSet<(Config, Config)>,
}

/// Memoized swept cells per directed edge; `None` marks edges that leave
/// the grid. Safe to share between episodes and threads; the memo is
/// dropped whenever it is queried with a different arm or grid.
#[derive(Debug, Default)]
pub struct SweepCache {
    inner: RwLock<SweepMemo>,
}

#[derive(Debug, Default)]
struct SweepMemo {
    owner: Option<(ArmModel, GridSpec)>,
    map: HashMap<(Config, Config), Option<Arc<CellSet>>>,
}

impl SweepMemo {
    fn owned_by(&self, arm: &ArmModel, spec: &GridSpec) -> bool {
        self.owner.as_ref().is_some_and(|(a, s)| a == arm && s == spec)
    }
}

impl SweepCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, arm: &ArmModel, spec: &GridSpec, from: &Config, to: &Config) -> Option<Arc<CellSet>> {
        let key = (from.clone(), to.clone());
        {
            let memo = self.inner.read().expect("sweep cache lock");
            if memo.owned_by(arm, spec) {
                if let Some(hit) = memo.map.get(&key) {
                    return hit.clone();
                }
            }
        }
        let value = edge_in_bounds(arm, from, to, spec)
            .then(|| Arc::new(swept_cells(arm, from, to, spec, arm.sweep_substeps).expect("lattice neighbours")));
        let mut memo = self.inner.write().expect("sweep cache lock");
        if !memo.owned_by(arm, spec) {
            memo.owner = Some((arm.clone(), spec.clone()));
            memo.map.clear();
        }
        memo.map.insert(key, value.clone());
        value
    }
}

/// Read-only snapshot the planner costs edges against.
pub struct PlanInputs<'a> {
    pub arm: &'a ArmModel,
    pub est: &'a OccupancyEstimate,
    /// Predicted occupancy per cell.
    pub pred: &'a [f64],
    pub constraints: &'a Constraints,
    pub model: &'a CostModel,
}

/// Mean predicted occupancy over swept cells not known free.
pub fn occupancy_cost(swept: &CellSet, est: &OccupancyEstimate, pred: &[f64]) -> f64 {
    if swept.is_empty() {
        return 0.0;
    }
    swept.iter().filter(|&c| !est.is_known_free(c)).map(|c| pred[c]).sum::<f64>() / swept.len() as f64
}

pub fn edge_cost_of(swept: &CellSet, from: &Config, to: &Config, action: Action, inp: &PlanInputs) -> f64 {
    let m = inp.model;
    let c_w = occupancy_cost(swept, inp.est, inp.pred);
    match m.mode {
        CostMode::Chs => {
            let p = edge_validity(swept, &inp.constraints.chs);
            if p == 0.0 {
                f64::INFINITY
            } else {
                1.0 + m.alpha * (1.0 / p - 1.0) + m.beta * c_w
            }
        }
        CostMode::Cmax => 1.0 + inp.constraints.disc.penalty(from, action) + m.beta * c_w,
        CostMode::EstimateOnly => {
            if inp.constraints.invalid_edges.contains(&(from.clone(), to.clone()))
                || swept.iter().any(|c| inp.pred[c] > m.prune_threshold)
            {
                f64::INFINITY
            } else {
                1.0 + m.beta * c_w
            }
        }
    }
}

pub fn edge_cost(inp: &PlanInputs, cache: &SweepCache, from: &Config, to: &Config) -> Result<f64> {
    let action =
        from.action_to(to).ok_or_else(|| Error::InvalidPrimitive { from: from.steps.clone(), to: to.steps.clone() })?;
    Ok(match cache.get(inp.arm, &inp.est.spec, from, to) {
        None => f64::INFINITY,
        Some(swept) => edge_cost_of(&swept, from, to, action, inp),
    })
}

pub fn lattice_of(arm: &ArmModel) -> Lattice {
    Lattice { num_joints: arm.num_links(), steps: arm.steps_per_joint }
}

pub fn plan(start: &Config, goal: &Config, inp: &PlanInputs, cache: &SweepCache) -> SearchResult {
    weighted_astar(
        start,
        goal,
        lattice_of(inp.arm),
        inp.model.heuristic_weight,
        inp.model.expansion_budget,
        |a, b, act| match cache.get(inp.arm, &inp.est.spec, a, b) {
            None => f64::INFINITY,
            Some(swept) => edge_cost_of(&swept, a, b, act, inp),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::robot_cells;
    use proptest::prelude::*;

    fn chs(cells: &[usize]) -> ChsSet {
        ChsSet {
            cells: cells.iter().copied().collect(),
            origin_edge: (Config::new(vec![0]), Config::new(vec![1])),
            created_iter: 0,
        }
    }

    #[test]
    fn validity_arithmetic() {
        let swept: CellSet = [1, 2, 10, 20].into_iter().collect();
        assert_eq!(edge_validity(&swept, &[chs(&[5, 6])]), 1.0);
        assert_eq!(edge_validity(&swept, &[chs(&[1, 2, 3, 4])]), 0.5);
        assert_eq!(edge_validity(&swept, &[chs(&[10, 11]), chs(&[20, 21, 22, 23])]), 0.375);
        assert_eq!(edge_validity(&swept, &[chs(&[10, 11]), chs(&[1, 2])]), 0.0);
    }

    #[test]
    fn cmax_arithmetic() {
        let mut d = DiscrepancySet::new(3.0, 4.0).unwrap();
        let a = Action { joint: 0, dir: 1 };
        assert_eq!(d.penalty(&Config::new(vec![0, 0]), a), 0.0);
        assert!(d.insert(Config::new(vec![2, 2]), a));
        assert!(!d.insert(Config::new(vec![2, 2]), a));
        assert_eq!(d.penalty(&Config::new(vec![2, 2]), a), f64::INFINITY);
        assert_eq!(d.penalty(&Config::new(vec![2, 4]), a), 2.0);
        assert_eq!(d.penalty(&Config::new(vec![2, 4]), Action { joint: 1, dir: 1 }), 0.0);
        assert_eq!(d.penalty(&Config::new(vec![2, 5]), a), 0.0);
    }

    #[test]
    fn prune_to_singleton_pins_cell() {
        let mut est = OccupancyEstimate::new(GridSpec::planar(4, 4, 0.1).unwrap());
        let mut ks = vec![chs(&[1, 2, 3]), chs(&[8, 9])];
        let before = ks.clone();
        prune_chs(&mut ks, &[12].into_iter().collect(), &mut est);
        assert_eq!(ks, before);
        prune_chs(&mut ks, &[1, 2].into_iter().collect(), &mut est);
        assert_eq!(ks[0].cells.as_slice(), &[3]);
        assert_eq!(est.state(3), crate::occupancy::CellState::KnownOccupied);
        let once = ks.clone();
        prune_chs(&mut ks, &[1, 2].into_iter().collect(), &mut est);
        assert_eq!(ks, once);
        prune_chs(&mut ks, &[3].into_iter().collect(), &mut est);
        assert_eq!(ks, once);
    }

    fn desk() -> (ArmModel, OccupancyEstimate) {
        (ArmModel::reference(), OccupancyEstimate::new(GridSpec::planar(32, 32, 0.03).unwrap()))
    }

    #[test]
    fn chs_is_footprint_ring() {
        let (arm, mut est) = desk();
        let q = arm.angles(&Config::new(vec![7, 8, 8]));
        let fp = robot_cells_at(&arm, &q, &est.spec);
        let ring = dilate(&fp, 1, &est.spec).difference(&fp);
        assert_eq!(chs_from_collision(&arm, &q, None, &est), ring);
        let keep = ring.as_slice()[ring.len() / 2];
        est.certify_free(&(0..est.spec.num_cells()).filter(|&c| c != keep).collect());
        assert_eq!(chs_from_collision(&arm, &q, None, &est).as_slice(), &[keep]);
        est.certify_free(&[keep].into_iter().collect());
        assert_eq!(chs_from_collision(&arm, &q, None, &est), ring);
    }

    #[test]
    fn chs_within_swept_blocks_its_own_edge() {
        let (arm, est) = desk();
        let a = Config::new(vec![7, 8, 8]);
        let b = Config::new(vec![7, 9, 8]);
        let swept = swept_cells(&arm, &a, &b, &est.spec, arm.sweep_substeps).unwrap();
        let k = chs_from_collision(&arm, &arm.angles(&a), Some(&swept), &est);
        assert!(k.is_subset(&swept));
        let set = ChsSet { cells: k, origin_edge: (a, b), created_iter: 0 };
        assert_eq!(edge_validity(&swept, &[set]), 0.0);
    }

    #[test]
    fn edge_cost_cases() {
        let (arm, est) = desk();
        let pred = vec![0.0; est.spec.num_cells()];
        let model = CostModel::default();
        let constraints = Constraints::default();
        let a = Config::new(vec![7, 8, 8]);
        let b = Config::new(vec![7, 9, 8]);
        let inp = PlanInputs { arm: &arm, est: &est, pred: &pred, constraints: &constraints, model: &model };
        let cache = SweepCache::new();
        assert_eq!(edge_cost(&inp, &cache, &a, &b).unwrap(), 1.0);
        assert!(edge_cost(&inp, &cache, &a, &Config::new(vec![7, 10, 8])).is_err());

        let swept = cache.get(&arm, &est.spec, &a, &b).unwrap();
        let half: Vec<usize> = swept.iter().take(2).collect();
        let mut ks = Constraints::default();
        ks.chs.push(ChsSet {
            cells: half.iter().copied().chain([0, 1]).collect(),
            origin_edge: (a.clone(), b.clone()),
            created_iter: 0,
        });
        let inp = PlanInputs { constraints: &ks, ..inp };
        assert!((edge_cost(&inp, &cache, &a, &b).unwrap() - 11.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_cost_bounds() {
        let (_, mut est) = desk();
        let swept: CellSet = [0, 1, 2, 3].into_iter().collect();
        est.certify_free(&[0].into_iter().collect());
        let pred = vec![1.0; est.spec.num_cells()];
        assert_eq!(occupancy_cost(&swept, &est, &pred), 0.75);
    }

    #[test]
    fn out_of_bounds_edges_are_refused() {
        let (arm, est) = desk();
        let cache = SweepCache::new();
        // joint 1 at its range end folds link 2 below the base
        let a = Config::new(vec![0, 0, 8]);
        let b = Config::new(vec![0, 1, 8]);
        assert!(cache.get(&arm, &est.spec, &a, &b).is_none());
        assert!(!robot_cells(&arm, &a, &est.spec).is_empty());
    }

    proptest! {
        #[test]
        fn adding_chs_never_raises_validity(
            swept in proptest::collection::btree_set(0usize..40, 0..20),
            ks in proptest::collection::vec(proptest::collection::btree_set(0usize..40, 1..8), 0..5),
            extra in proptest::collection::btree_set(0usize..40, 1..8),
        ) {
            let swept: CellSet = swept.into_iter().collect();
            let mut sets: Vec<ChsSet> = ks.into_iter().map(|k| chs(&k.into_iter().collect::<Vec<_>>())).collect();
            let before = edge_validity(&swept, &sets);
            sets.push(chs(&extra.into_iter().collect::<Vec<_>>()));
            let after = edge_validity(&swept, &sets);
            prop_assert!(after <= before);
            prop_assert!((0.0..=1.0).contains(&after));
        }
    }
}
