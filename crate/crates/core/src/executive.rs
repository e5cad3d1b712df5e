//! The plan-execute-replan loop.
//!
//! Each iteration predicts occupancy, plans on a snapshot of the current
//! knowledge, and walks the path edge by edge through the simulator. A
//! contact ends the iteration: the contact is localized, recorded in the
//! estimate, turned into a collision hypothesis and a discrepancy entry, and
//! the arm retracts to the source of the failed edge.

use std::collections::{BTreeSet, VecDeque};
use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::contact::{cpf_localize, run_observer, ContactEstimate, ContactEvidence, CpfParams, Detector};
use crate::dynamics::{simulate_edge, sweep_outcome, ContactTruth, DynParams, EdgeOutcome, PlanarArmDynamics};
use crate::error::{Error, Result};
use crate::kinematics::{pose_in_bounds, project_to_surface, robot_cells, ArmModel, Config};
use crate::occupancy::{predict, OccupancyEstimate, PredictorConfig};
use crate::planner::{
    chs_from_collision, lattice_of, plan, prune_chs, ChsSet, Constraints, CostModel, DiscrepancySet, PlanInputs,
    PlanOutcome, SweepCache,
};
use crate::rng::{streams, SeedStream};
use crate::workspace::{generate_scene, CellSet, Domain, GridSpec, GroundTruthGrid, SceneParams};

/// How contacts are detected and localized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseMode {
    /// Momentum observer, threshold detector and particle filter on the
    /// simulated torque stream.
    Observer,
    /// Oracle detection; the true contact point is perturbed by isotropic
    /// gaussian noise of `sigma_cells` grid cells and projected back onto
    /// the arm surface.
    Direct { sigma_cells: f64 },
}

impl Default for NoiseMode {
    fn default() -> Self {
        NoiseMode::Direct { sigma_cells: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub arm: ArmModel,
    pub world: GroundTruthGrid,
    pub start: Config,
    pub goal: Config,
    #[serde(rename = "dyn", default)]
    pub dyn_params: DynParams,
    #[serde(default)]
    pub cpf: CpfParams,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// Chebyshev radius of the occupancy bump around a localized contact.
    #[serde(default = "default_spread_radius")]
    pub spread_radius: usize,
    /// Radius of the discrepancy penalty, in lattice steps.
    #[serde(default = "default_disc_delta")]
    pub disc_delta: f64,
    #[serde(default = "default_disc_zeta")]
    pub disc_zeta: f64,
    /// Occupancy probability assigned to cells nothing is known about.
    #[serde(default = "default_unknown_prior")]
    pub unknown_prior: f64,
    /// Measure wall-clock component times. Off by default so reports are
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_max_iterations() -> usize {
    20
}
fn default_spread_radius() -> usize {
    1
}
fn default_unknown_prior() -> f64 {
    0.5
}
fn default_disc_delta() -> f64 {
    2.0
}
fn default_disc_zeta() -> f64 {
    5.0
}

impl Scenario {
    /// A scenario with default parameters for everything but the problem.
    pub fn new(arm: ArmModel, world: GroundTruthGrid, start: Config, goal: Config) -> Self {
        Self {
            arm,
            world,
            start,
            goal,
            dyn_params: DynParams::default(),
            cpf: CpfParams::default(),
            predictor: PredictorConfig::default(),
            cost_model: CostModel::default(),
            max_iterations: default_max_iterations(),
            noise_mode: NoiseMode::default(),
            spread_radius: default_spread_radius(),
            disc_delta: default_disc_delta(),
            disc_zeta: default_disc_zeta(),
            unknown_prior: default_unknown_prior(),
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        self.world.validate()?;
        let n = self.arm.num_links();
        if self.world.spec.ndim() != 2 {
            return Err(Error::InvalidParams("the arm simulator is planar; the grid must be 2-D".into()));
        }
        self.dyn_params.validate(n)?;
        self.cpf.validate(n)?;
        self.predictor.validate(self.world.spec.ndim())?;
        self.cost_model.validate()?;
        DiscrepancySet::new(self.disc_delta, self.disc_zeta)?;
        if !(0.0..=1.0).contains(&self.unknown_prior) {
            return Err(Error::InvalidParams(format!("unknown_prior must lie in [0, 1], got {}", self.unknown_prior)));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParams("max_iterations must be >= 1".into()));
        }
        if let NoiseMode::Direct { sigma_cells } = self.noise_mode {
            if !(sigma_cells >= 0.0 && sigma_cells.is_finite()) {
                return Err(Error::InvalidParams(format!("sigma_cells must be finite and >= 0, got {sigma_cells}")));
            }
        }
        for (name, q) in [("start", &self.start), ("goal", &self.goal)] {
            if !self.arm.is_valid_config(q) {
                return Err(Error::InvalidParams(format!("{name} {:?} is not a lattice vertex", q.steps)));
            }
            if !pose_in_bounds(&self.arm, &self.arm.angles(q), &self.world.spec) {
                return Err(Error::InvalidParams(format!("{name} pose leaves the grid")));
            }
            if robot_cells(&self.arm, q, &self.world.spec).intersects(&self.world.occupied) {
                return Err(Error::InvalidParams(format!("{name} pose collides with the world")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    None,
    PlanFail,
    IterationCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EpisodeEvent {
    Plan {
        iter: usize,
        outcome: String,
        path_len: usize,
        expansions: usize,
    },
    Contact {
        iter: usize,
        from: Config,
        to: Config,
        true_cell: usize,
        estimated_point: [f64; 2],
        marked_cell: Option<usize>,
        chs_size: usize,
    },
    Goal {
        iter: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub success: bool,
    pub failure_kind: FailureKind,
    pub num_iters: usize,
    pub plan_s: f64,
    /// Simulated motion time: executed edges, contact attempts and retracts
    /// times the edge duration.
    pub exec_s: f64,
    pub pred_s: f64,
    pub contact_s: f64,
    pub total_s: f64,
    /// Completed edges plus edges interrupted by contact.
    pub edges_executed: usize,
    pub contacts: usize,
    pub expansions: usize,
    pub events: Vec<EpisodeEvent>,
}

/// Knowledge the executive accumulates over an episode.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub est: OccupancyEstimate,
    pub constraints: Constraints,
    pub current: Config,
}

impl EpisodeState {
    pub fn new(sc: &Scenario) -> Result<Self> {
        let mut est = OccupancyEstimate::with_prior(sc.world.spec.clone(), sc.unknown_prior);
        // the arm occupies its start footprint, so those cells are free
        est.certify_free(&robot_cells(&sc.arm, &sc.start, &sc.world.spec));
        Ok(Self {
            est,
            constraints: Constraints {
                chs: Vec::new(),
                disc: DiscrepancySet::new(sc.disc_delta, sc.disc_zeta)?,
                invalid_edges: BTreeSet::new(),
            },
            current: sc.start.clone(),
        })
    }
}

/// One contact recorded while executing a path.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactRecord {
    pub from: Config,
    pub to: Config,
    pub truth: ContactTruth,
    pub estimate: ContactEstimate,
    /// Cells certified free before the contact on the same edge.
    pub partial_free: CellSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathExecution {
    pub reached: Config,
    pub completed_edges: usize,
    /// Cells certified free by completed edges.
    pub certified: CellSet,
    pub contact: Option<ContactRecord>,
    pub contact_s: f64,
}

/// Executes `path` from its first vertex until the end or the first
/// contact. On contact `reached` is the source of the interrupted edge.
pub fn execute_path(sc: &Scenario, path: &[Config], est: &OccupancyEstimate, seed: u64) -> Result<PathExecution> {
    let first = path.first().ok_or(Error::PathDiscontinuity(0))?;
    for (i, w) in path.windows(2).enumerate() {
        if w[0].action_to(&w[1]).is_none() {
            return Err(Error::PathDiscontinuity(i + 1));
        }
    }
    let mut out = PathExecution {
        reached: first.clone(),
        completed_edges: 0,
        certified: CellSet::new(),
        contact: None,
        contact_s: 0.0,
    };
    for (i, w) in path.windows(2).enumerate() {
        let (from, to) = (&w[0], &w[1]);
        let edge_seed = SeedStream::derive(seed, i as u64);
        let trace = sweep_outcome(&sc.world, &sc.arm, &sc.dyn_params, from, to, edge_seed)?;
        match trace.outcome {
            EdgeOutcome::Completed => {
                out.certified.extend_from(&trace.certified_cells);
                out.completed_edges += 1;
                out.reached = to.clone();
            }
            EdgeOutcome::ContactAt(truth) => {
                let t0 = sc.record_wall_time.then(Instant::now);
                let estimate = localize(sc, est, from, to, &truth, edge_seed)?;
                if let Some(t0) = t0 {
                    out.contact_s += t0.elapsed().as_secs_f64();
                }
                out.contact = Some(ContactRecord {
                    from: from.clone(),
                    to: to.clone(),
                    truth,
                    estimate,
                    partial_free: trace.certified_cells,
                });
                out.reached = from.clone();
                break;
            }
        }
    }
    Ok(out)
}

/// Estimates the contact point of an interrupted edge according to the
/// scenario's noise mode.
pub fn localize(
    sc: &Scenario,
    est: &OccupancyEstimate,
    from: &Config,
    to: &Config,
    truth: &ContactTruth,
    seed: u64,
) -> Result<ContactEstimate> {
    match sc.noise_mode {
        NoiseMode::Direct { sigma_cells } => {
            let mut rng = SeedStream::new(seed, streams::LOCALIZATION);
            let sigma = sigma_cells * sc.world.spec.resolution;
            let p = truth.point.point();
            let noisy = Vector2::new(p.x + rng.normal(0.0, sigma), p.y + rng.normal(0.0, sigma));
            let surface = project_to_surface(&sc.arm, &truth.q_contact, noisy);
            Ok(ContactEstimate { point: surface.point, surface, force: truth.force, confidence: 1.0 })
        }
        NoiseMode::Observer => localize_observed(sc, est, from, to, truth, seed),
    }
}

/// Runs the full proprioceptive pipeline on the interrupted edge. A missed
/// detection falls back to the sample at contact onset so the contact,
/// which the simulator guarantees, is still localized.
pub fn localize_observed(
    sc: &Scenario,
    est: &OccupancyEstimate,
    from: &Config,
    to: &Config,
    truth: &ContactTruth,
    seed: u64,
) -> Result<ContactEstimate> {
    let trace = simulate_edge(&sc.world, &sc.arm, &sc.dyn_params, from, to, seed)?;
    let model = PlanarArmDynamics::new(&sc.arm, sc.dyn_params.gravity);
    let gains: Vec<f64> = (0..sc.arm.num_links()).map(|j| sc.dyn_params.gain(j)).collect();
    let residuals = run_observer(&trace.samples, &model, &gains)?;
    let threshold = sc.cpf.detect_threshold.clone();
    let threshold = if threshold.len() == 1 { vec![threshold[0]; gains.len()] } else { threshold };
    let detected = Detector::first_detection(&threshold, sc.cpf.debounce, &residuals)
        .unwrap_or_else(|| trace.samples.iter().position(|s| s.t >= truth.onset_t).unwrap_or(trace.samples.len() - 1));
    let ev = ContactEvidence::from_stream(&trace.samples, &residuals, detected, sc.cpf.settle_time);
    cpf_localize(&ev, &sc.arm, est, &sc.cpf, seed)
}

/// Runs one episode. All failures are reported, not raised; errors are
/// reserved for invalid scenarios.
pub fn run_episode(sc: &Scenario, seed: u64) -> Result<EpisodeReport> {
    run_episode_with(sc, seed, &SweepCache::new())
}

/// [`run_episode`] with a caller-provided swept-volume memo, which may be
/// shared by episodes over the same arm and grid.
pub fn run_episode_with(sc: &Scenario, seed: u64, cache: &SweepCache) -> Result<EpisodeReport> {
    run_episode_observed(sc, seed, cache, &mut |_| {})
}

/// What an episode observer sees: the knowledge used for one plan, the
/// plan's path (empty on failure), and then the knowledge after execution.
pub struct IterationView<'a> {
    pub iter: usize,
    pub after_execution: bool,
    pub state: &'a EpisodeState,
    pub pred: &'a [f64],
    pub path: &'a [Config],
}

/// [`run_episode_with`] calling `observe` twice per iteration, once after
/// planning and once after the knowledge update.
pub fn run_episode_observed(
    sc: &Scenario,
    seed: u64,
    cache: &SweepCache,
    observe: &mut dyn FnMut(IterationView),
) -> Result<EpisodeReport> {
    sc.validate()?;
    let started = Instant::now();
    let mut state = EpisodeState::new(sc)?;
    let mut report = EpisodeReport {
        success: false,
        failure_kind: FailureKind::IterationCap,
        num_iters: 0,
        plan_s: 0.0,
        exec_s: 0.0,
        pred_s: 0.0,
        contact_s: 0.0,
        total_s: 0.0,
        edges_executed: 0,
        contacts: 0,
        expansions: 0,
        events: Vec::new(),
    };
    let wall = |t: Option<Instant>| t.map_or(0.0, |t| t.elapsed().as_secs_f64());
    let duration = sc.dyn_params.edge_duration;

    for iter in 1..=sc.max_iterations {
        report.num_iters = iter;

        let t = sc.record_wall_time.then(Instant::now);
        let pred = predict(&state.est, &sc.predictor);
        report.pred_s += wall(t);

        let t = sc.record_wall_time.then(Instant::now);
        let result = {
            let inputs = PlanInputs {
                arm: &sc.arm,
                est: &state.est,
                pred: &pred,
                constraints: &state.constraints,
                model: &sc.cost_model,
            };
            plan(&state.current, &sc.goal, &inputs, cache)
        };
        report.plan_s += wall(t);
        report.expansions += result.expansions;

        let path = match result.outcome {
            PlanOutcome::Path { path, .. } => path,
            other => {
                let outcome = match other {
                    PlanOutcome::Infeasible => "infeasible",
                    _ => "budget_exhausted",
                };
                report.events.push(EpisodeEvent::Plan {
                    iter,
                    outcome: outcome.into(),
                    path_len: 0,
                    expansions: result.expansions,
                });
                report.failure_kind = FailureKind::PlanFail;
                observe(IterationView { iter, after_execution: false, state: &state, pred: &pred, path: &[] });
                break;
            }
        };
        report.events.push(EpisodeEvent::Plan {
            iter,
            outcome: "path".into(),
            path_len: path.len().saturating_sub(1),
            expansions: result.expansions,
        });
        observe(IterationView { iter, after_execution: false, state: &state, pred: &pred, path: &path });

        let exec = execute_path(sc, &path, &state.est, SeedStream::derive(seed, iter as u64))?;
        report.contact_s += exec.contact_s;
        report.edges_executed += exec.completed_edges;
        report.exec_s += exec.completed_edges as f64 * duration;
        state.est.certify_free(&exec.certified);
        prune_chs(&mut state.constraints.chs, &exec.certified, &mut state.est);
        state.current = exec.reached.clone();

        let Some(contact) = exec.contact else {
            observe(IterationView { iter, after_execution: true, state: &state, pred: &pred, path: &path });
            report.success = state.current == sc.goal;
            if report.success {
                report.failure_kind = FailureKind::None;
                report.events.push(EpisodeEvent::Goal { iter });
                break;
            }
            continue;
        };

        report.contacts += 1;
        report.edges_executed += 1;
        // the interrupted attempt and the retract each cost one edge
        report.exec_s += 2.0 * duration;
        record_contact(sc, &mut state, &contact, iter, cache, &mut report.events);
        observe(IterationView { iter, after_execution: true, state: &state, pred: &pred, path: &path });
    }

    report.total_s = if sc.record_wall_time { wall(Some(started)) } else { 0.0 } + report.exec_s;
    Ok(report)
}

/// Folds one contact into the estimate and the planning constraints.
pub fn record_contact(
    sc: &Scenario,
    state: &mut EpisodeState,
    c: &ContactRecord,
    iter: usize,
    cache: &SweepCache,
    events: &mut Vec<EpisodeEvent>,
) {
    state.est.certify_free(&c.partial_free);
    prune_chs(&mut state.constraints.chs, &c.partial_free, &mut state.est);
    let marked_cell = state.est.mark_contact(&c.estimate.point, c.estimate.confidence, sc.spread_radius).ok();
    let swept = cache.get(&sc.arm, &sc.world.spec, &c.from, &c.to);
    let cells = chs_from_collision(&sc.arm, &c.truth.q_col, swept.as_deref(), &state.est);
    let chs_size = cells.len();
    state.constraints.chs.push(ChsSet { cells, origin_edge: (c.from.clone(), c.to.clone()), created_iter: iter });
    let action = c.from.action_to(&c.to).expect("executed edges are primitives");
    state.constraints.disc.insert(c.from.clone(), action);
    state.constraints.invalid_edges.insert((c.from.clone(), c.to.clone()));
    events.push(EpisodeEvent::Contact {
        iter,
        from: c.from.clone(),
        to: c.to.clone(),
        true_cell: c.truth.cell,
        estimated_point: c.estimate.point,
        marked_cell,
        chs_size,
    });
}

/// Whether the true world admits a collision-free, in-bounds lattice path.
pub fn oracle_path_exists(arm: &ArmModel, world: &GroundTruthGrid, start: &Config, goal: &Config) -> bool {
    oracle_distance(arm, world, start, goal, &SweepCache::new()).is_some()
}

/// Breadth-first lattice distance under full knowledge of the world.
pub fn oracle_distance(
    arm: &ArmModel,
    world: &GroundTruthGrid,
    start: &Config,
    goal: &Config,
    cache: &SweepCache,
) -> Option<usize> {
    let spec = &world.spec;
    let free_pose = |q: &Config| {
        arm.is_valid_config(q)
            && pose_in_bounds(arm, &arm.angles(q), spec)
            && !robot_cells(arm, q, spec).intersects(&world.occupied)
    };
    if !free_pose(start) {
        return None;
    }
    let lattice = lattice_of(arm);
    let mut seen = BTreeSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start.clone(), 0usize)]);
    while let Some((q, d)) = queue.pop_front() {
        if &q == goal {
            return Some(d);
        }
        for a in crate::kinematics::Action::all(arm.num_links()) {
            let next = q.apply(a);
            if !lattice.contains(&next) || seen.contains(&next) {
                continue;
            }
            let ok = cache.get(arm, spec, &q, &next).is_some_and(|s| !s.intersects(&world.occupied));
            if ok {
                seen.insert(next.clone());
                queue.push_back((next, d + 1));
            }
        }
    }
    None
}

/// Where start and goal poses are drawn from for generated instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceParams {
    pub scene: SceneParams,
    /// Fraction of joint 0's range the start is drawn from (low end) and the
    /// goal from (high end).
    pub endpoint_fraction: f64,
    pub max_retries: usize,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self { scene: SceneParams::default(), endpoint_fraction: 1.0 / 3.0, max_retries: 200 }
    }
}

impl InstanceParams {
    pub fn for_domain(domain: Domain) -> Self {
        Self { scene: SceneParams::for_domain(domain), ..Self::default() }
    }
}

/// A generated problem: world plus endpoints, guaranteed solvable under full
/// knowledge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub world: GroundTruthGrid,
    pub start: Config,
    pub goal: Config,
    /// Sub-seed that produced this instance.
    pub attempt: usize,
}

fn random_endpoint(arm: &ArmModel, spec: &GridSpec, rng: &mut SeedStream, high: bool, fraction: f64) -> Option<Config> {
    let steps = arm.steps_per_joint as i64;
    let band = ((steps as f64 * fraction).floor() as i64).max(0);
    for _ in 0..100 {
        let mut q = Vec::with_capacity(arm.num_links());
        for j in 0..arm.num_links() {
            let v = if j == 0 {
                if high {
                    rng.int_range(steps - band, steps)
                } else {
                    rng.int_range(0, band)
                }
            } else {
                rng.int_range(0, steps)
            };
            q.push(v as i32);
        }
        let q = Config::new(q);
        if arm.is_valid_config(&q) && pose_in_bounds(arm, &arm.angles(&q), spec) {
            return Some(q);
        }
    }
    None
}

/// Draws a solvable instance. Each retry uses a fresh sub-seed; the first
/// solvable draw wins.
pub fn generate_instance(params: &InstanceParams, arm: &ArmModel, spec: &GridSpec, seed: u64) -> Result<Instance> {
    generate_instance_with(params, arm, spec, seed, &SweepCache::new())
}

pub fn generate_instance_with(
    params: &InstanceParams,
    arm: &ArmModel,
    spec: &GridSpec,
    seed: u64,
    cache: &SweepCache,
) -> Result<Instance> {
    for attempt in 0..params.max_retries {
        let sub = SeedStream::derive(seed, attempt as u64);
        let mut rng = SeedStream::new(sub, streams::INSTANCE);
        let (Some(start), Some(goal)) = (
            random_endpoint(arm, spec, &mut rng, false, params.endpoint_fraction),
            random_endpoint(arm, spec, &mut rng, true, params.endpoint_fraction),
        ) else {
            continue;
        };
        let mut scene = params.scene.clone();
        scene.keep_free = robot_cells(arm, &start, spec).union(&robot_cells(arm, &goal, spec));
        let world = match generate_scene(&scene, spec, sub) {
            Ok(w) => w,
            Err(Error::InfeasibleScene(_)) => continue,
            Err(e) => return Err(e),
        };
        if oracle_distance(arm, &world, &start, &goal, cache).is_some() {
            return Ok(Instance { world, start, goal, attempt });
        }
    }
    Err(Error::InfeasibleScene(format!("no solvable instance in {} attempts", params.max_retries)))
}
