//! Weighted A* over the joint lattice.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::kinematics::{Action, Config};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanOutcome {
    /// Vertices from start to goal inclusive.
    Path {
        path: Vec<Config>,
        cost: f64,
    },
    Infeasible,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub outcome: PlanOutcome,
    pub expansions: usize,
}

/// Axis-aligned lattice `[0, steps)` per joint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub num_joints: usize,
    pub steps: u32,
}

impl Lattice {
    pub fn contains(&self, q: &Config) -> bool {
        q.steps.len() == self.num_joints && q.steps.iter().all(|&k| k >= 0 && (k as u32) < self.steps)
    }
}

#[derive(Debug)]
struct Entry {
    f: f64,
    g: f64,
    q: Config,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    /// Max-heap order: lowest f first, then lowest g, then smallest config.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.g.total_cmp(&self.g)).then_with(|| other.q.cmp(&self.q))
    }
}

/// Expands by `f = g + w h` with `h` the Euclidean lattice distance to the
/// goal. Edges of infinite cost are never traversed. Closed vertices are
/// not reopened.
pub fn weighted_astar(
    start: &Config,
    goal: &Config,
    lattice: Lattice,
    weight: f64,
    budget: usize,
    mut cost: impl FnMut(&Config, &Config, Action) -> f64,
) -> SearchResult {
    if start == goal {
        return SearchResult { outcome: PlanOutcome::Path { path: vec![start.clone()], cost: 0.0 }, expansions: 0 };
    }
    let h = |q: &Config| q.euclidean_distance(goal);
    let mut g_best: HashMap<Config, f64> = HashMap::new();
    let mut parent: HashMap<Config, Config> = HashMap::new();
    let mut closed: HashSet<Config> = HashSet::new();
    let mut open = BinaryHeap::new();
    g_best.insert(start.clone(), 0.0);
    open.push(Entry { f: weight * h(start), g: 0.0, q: start.clone() });
    let mut expansions = 0;
    while let Some(Entry { g, q, .. }) = open.pop() {
        if closed.contains(&q) || g > g_best[&q] {
            continue;
        }
        if &q == goal {
            let mut path = vec![q.clone()];
            while let Some(p) = parent.get(path.last().expect("non-empty")) {
                path.push(p.clone());
            }
            path.reverse();
            return SearchResult { outcome: PlanOutcome::Path { path, cost: g }, expansions };
        }
        if expansions >= budget {
            return SearchResult { outcome: PlanOutcome::BudgetExhausted, expansions };
        }
        expansions += 1;
        for action in Action::all(lattice.num_joints) {
            let next = q.apply(action);
            if !lattice.contains(&next) || closed.contains(&next) {
                continue;
            }
            let c = cost(&q, &next, action);
            if !c.is_finite() {
                continue;
            }
            let ng = g + c;
            if g_best.get(&next).is_none_or(|&old| ng < old) {
                g_best.insert(next.clone(), ng);
                parent.insert(next.clone(), q.clone());
                open.push(Entry { f: ng + weight * h(&next), g: ng, q: next });
            }
        }
        closed.insert(q);
    }
    SearchResult { outcome: PlanOutcome::Infeasible, expansions }
}
