use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::{inverse_dynamics, PlanarArmDynamics};
use crate::error::{Error, Result};
use crate::kinematics::{
    check_primitive, interpolate, link_segments, point_jacobian, project_to_surface, robot_cells_at, surface_point_at,
    ArmModel, Config, SurfacePoint,
};
use crate::rng::{streams, SeedStream};
use crate::workspace::{point_segment_distance, CellSet, GroundTruthGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynParams {
    /// m/s^2 in the workspace plane.
    pub gravity: [f64; 2],
    /// Diagonal observer gain; a single entry applies to every joint.
    pub observer_gain: Vec<f64>,
    pub torque_noise_std: f64,
    /// Newtons, `[min, max]`.
    pub contact_force_range: [f64; 2],
    pub friction_mu: f64,
    /// Seconds per lattice edge.
    pub edge_duration: f64,
    /// Hz.
    pub sample_rate: f64,
    /// Fraction of the edge spent accelerating (and again decelerating).
    pub accel_fraction: f64,
    /// Seconds the arm stays in contact before the halt.
    pub contact_dwell: f64,
}

impl Default for DynParams {
    fn default() -> Self {
        Self {
            gravity: [0.0, -9.81],
            observer_gain: vec![25.0],
            torque_noise_std: 0.01,
            contact_force_range: [5.0, 15.0],
            friction_mu: 0.5,
            edge_duration: 1.0,
            sample_rate: 1000.0,
            accel_fraction: 0.25,
            contact_dwell: 0.25,
        }
    }
}

impl DynParams {
    pub fn validate(&self, num_joints: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.observer_gain.is_empty() || (self.observer_gain.len() != 1 && self.observer_gain.len() != num_joints) {
            return bad("observer_gain needs one entry or one per joint");
        }
        if self.observer_gain.iter().any(|&k| !(k > 0.0)) {
            return bad("observer gains must be > 0");
        }
        let [lo, hi] = self.contact_force_range;
        if !(0.0 <= lo && lo <= hi) {
            return bad("contact_force_range must satisfy 0 <= min <= max");
        }
        if !(self.friction_mu >= 0.0) || !(self.torque_noise_std >= 0.0) {
            return bad("friction_mu and torque_noise_std must be >= 0");
        }
        if !(self.edge_duration > 0.0 && self.sample_rate > 0.0 && self.contact_dwell >= 0.0) {
            return bad("edge_duration and sample_rate must be > 0, contact_dwell >= 0");
        }
        if !(self.accel_fraction > 0.0 && self.accel_fraction <= 0.5) {
            return bad("accel_fraction must lie in (0, 0.5]");
        }
        Ok(())
    }

    pub fn gain(&self, joint: usize) -> f64 {
        if self.observer_gain.len() == 1 {
            self.observer_gain[0]
        } else {
            self.observer_gain[joint]
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn profile(&self) -> VelocityProfile {
        VelocityProfile::for_sampling(self.edge_duration, self.accel_fraction, self.dt())
    }
}

/// Trapezoidal velocity profile over the edge fraction `s in [0, 1]`,
/// starting at `start` and lasting `duration`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityProfile {
    pub start: f64,
    pub duration: f64,
    pub blend: f64,
}

impl VelocityProfile {
    /// Puts all four acceleration switches halfway between samples, where
    /// the trapezoidal rule integrates a step in acceleration without
    /// first-order error: motion starts half a sample in and the blend spans
    /// a whole number of samples.
    pub fn for_sampling(duration: f64, accel_fraction: f64, dt: f64) -> Self {
        let max_k = (duration / dt / 2.0).floor().max(1.0);
        let k = (accel_fraction * duration / dt).round().clamp(1.0, max_k);
        Self { start: 0.5 * dt, duration, blend: (k * dt).min(duration / 2.0) }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    fn peak_rate(&self) -> f64 {
        1.0 / (self.duration - self.blend)
    }

    /// `(s, ds/dt, d2s/dt2)` at time `t`; the profile holds at `s = 1` after the end.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (d, b, vm) = (self.duration, self.blend, self.peak_rate());
        let acc = vm / b;
        let t = t - self.start;
        if t <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if t < b {
            (0.5 * acc * t * t, acc * t, acc)
        } else if t <= d - b {
            (0.5 * acc * b * b + vm * (t - b), vm, 0.0)
        } else if t < d {
            let r = d - t;
            (1.0 - 0.5 * acc * r * r, acc * r, -acc)
        } else {
            (1.0, 0.0, 0.0)
        }
    }

    /// Earliest time at which the fraction reaches `s`.
    pub fn time_at(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (self.start, self.end());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid).0 < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProprioSample {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Simulator-only record of a contact, never shown to the estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactTruth {
    /// First substep (1-based) whose footprint meets an occupied cell.
    pub substep: usize,
    /// Joint angles at the last contact-free substep.
    pub q_col: Vec<f64>,
    /// Joint angles at the penetrating substep.
    pub q_contact: Vec<f64>,
    pub cell: usize,
    /// Contact location at `q_contact`; rigidly attached to its link.
    pub point: SurfacePoint,
    pub force: [f64; 2],
    pub onset_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeOutcome {
    Completed,
    ContactAt(ContactTruth),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub samples: Vec<ProprioSample>,
    pub outcome: EdgeOutcome,
    pub certified_cells: CellSet,
}

impl ExecutionTrace {
    pub fn contact(&self) -> Option<&ContactTruth> {
        match &self.outcome {
            EdgeOutcome::Completed => None,
            EdgeOutcome::ContactAt(c) => Some(c),
        }
    }
}

/// First substep whose footprint meets the world, the deepest penetrated
/// cell there, and the cells covered by the earlier substeps. The source
/// pose is where the arm already stands, so its footprint counts as covered.
pub fn first_contact(
    world: &GroundTruthGrid,
    arm: &ArmModel,
    from: &Config,
    to: &Config,
) -> Result<(Option<(usize, usize)>, CellSet)> {
    check_primitive(from, to)?;
    let n = arm.sweep_substeps;
    let mut free = robot_cells_at(arm, &interpolate(arm, from, to, 0, n), &world.spec);
    for j in 1..=n {
        let q = interpolate(arm, from, to, j, n);
        let cells = robot_cells_at(arm, &q, &world.spec);
        let hits = cells.intersection(&world.occupied);
        if !hits.is_empty() {
            let segs = link_segments(arm, &q);
            let depth = |c: usize| {
                let x = world.spec.cell_center(c);
                segs.iter()
                    .map(|(a, b)| point_segment_distance(&x, a.as_slice(), b.as_slice()))
                    .fold(f64::INFINITY, f64::min)
            };
            let cell = hits.iter().min_by(|&a, &b| depth(a).total_cmp(&depth(b)).then(a.cmp(&b))).expect("non-empty");
            return Ok((Some((j, cell)), free));
        }
        free.extend_from(&cells);
    }
    Ok((None, free))
}

/// Kinematic outcome of an edge with the contact force drawn, but no
/// proprioceptive samples.
pub fn sweep_outcome(
    world: &GroundTruthGrid,
    arm: &ArmModel,
    dynp: &DynParams,
    from: &Config,
    to: &Config,
    seed: u64,
) -> Result<ExecutionTrace> {
    let (hit, certified_cells) = first_contact(world, arm, from, to)?;
    let Some((substep, cell)) = hit else {
        return Ok(ExecutionTrace { samples: Vec::new(), outcome: EdgeOutcome::Completed, certified_cells });
    };
    let n = arm.sweep_substeps;
    let q_col = interpolate(arm, from, to, substep - 1, n);
    let q_contact = interpolate(arm, from, to, substep, n);
    let center = world.spec.cell_center(cell);
    let point = project_to_surface(arm, &q_contact, Vector2::new(center[0], center[1]));
    let mut rng = SeedStream::new(seed, streams::CONTACT_FORCE);
    let half = dynp.friction_mu.atan();
    let angle = rng.uniform_in(-half, half);
    let magnitude = rng.uniform_in(dynp.contact_force_range[0], dynp.contact_force_range[1]);
    let inward = -point.normal();
    let (s, c) = angle.sin_cos();
    let dir = Vector2::new(c * inward.x - s * inward.y, s * inward.x + c * inward.y);
    let onset_t = dynp.profile().time_at((substep as f64 - 0.5) / n as f64);
    let truth =
        ContactTruth { substep, q_col, q_contact, cell, point, force: [magnitude * dir.x, magnitude * dir.y], onset_t };
    Ok(ExecutionTrace { samples: Vec::new(), outcome: EdgeOutcome::ContactAt(truth), certified_cells })
}

/// Executes one lattice edge with perfect tracking and synthesizes the
/// proprioceptive stream. Samples run to the end of the edge, or to
/// `contact_dwell` seconds past contact onset.
pub fn simulate_edge(
    world: &GroundTruthGrid,
    arm: &ArmModel,
    dynp: &DynParams,
    from: &Config,
    to: &Config,
    seed: u64,
) -> Result<ExecutionTrace> {
    let mut trace = sweep_outcome(world, arm, dynp, from, to, seed)?;
    let model = PlanarArmDynamics::new(arm, dynp.gravity);
    let profile = dynp.profile();
    let qa = arm.angles(from);
    let qb = arm.angles(to);
    let delta: Vec<f64> = qa.iter().zip(&qb).map(|(a, b)| b - a).collect();
    let t_end = match trace.contact() {
        None => profile.end(),
        Some(c) => c.onset_t + dynp.contact_dwell,
    };
    let last = (t_end * dynp.sample_rate).ceil() as usize;
    let mut noise = SeedStream::new(seed, streams::TORQUE_NOISE);
    let force = trace.contact().map(|c| (c.point.clone(), DVector::from_column_slice(&c.force), c.onset_t));
    trace.samples = (0..=last)
        .map(|k| {
            let t = k as f64 / dynp.sample_rate;
            let (s, sd, sdd) = profile.eval(t);
            let q: Vec<f64> = qa.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
            let v: Vec<f64> = delta.iter().map(|d| sd * d).collect();
            let acc: Vec<f64> = delta.iter().map(|d| sdd * d).collect();
            let mut tau = inverse_dynamics(&model, &q, &v, &acc);
            if let Some((sp, f, onset)) = &force {
                if t >= *onset {
                    let moved = surface_point_at(arm, &q, sp.link, sp.side, sp.param);
                    tau -= point_jacobian(arm, &q, &moved).transpose() * f;
                }
            }
            if dynp.torque_noise_std > 0.0 {
                for x in tau.iter_mut() {
                    *x += noise.normal(0.0, dynp.torque_noise_std);
                }
            }
            ProprioSample { t, q, v, tau: tau.as_slice().to_vec() }
        })
        .collect();
    Ok(trace)
}

/// External joint torque `J^T F` at `sp`, plus gaussian noise.
pub fn direct_residual(
    arm: &ArmModel,
    angles: &[f64],
    sp: &SurfacePoint,
    force: [f64; 2],
    noise_std: f64,
    rng: &mut SeedStream,
) -> DVector<f64> {
    let mut r = point_jacobian(arm, angles, sp).transpose() * Vector2::new(force[0], force[1]);
    if noise_std > 0.0 {
        for x in r.iter_mut() {
            *x += rng.normal(0.0, noise_std);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::robot_cells;
    use crate::kinematics::swept_cells;
    use crate::workspace::GridSpec;

    fn desk() -> (ArmModel, GridSpec) {
        (ArmModel::reference(), GridSpec::planar(32, 32, 0.03).unwrap())
    }

    #[test]
    fn profile_shape() {
        let p = DynParams::default().profile();
        assert!((p.blend - 0.25).abs() < 1e-12);
        assert_eq!(p.start, 0.0005);
        assert_eq!(p.eval(p.start).0, 0.0);
        assert_eq!(p.eval(p.end()).0, 1.0);
        assert!((p.eval(p.start + 0.5).0 - 0.5).abs() < 1e-12);
        let t = p.time_at(0.3);
        assert!((p.eval(t).0 - 0.3).abs() < 1e-12);
        let mut last = 0.0;
        for k in 0..=1100 {
            let s = p.eval(k as f64 / 1000.0).0;
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn empty_world_completes() {
        let (arm, spec) = desk();
        let world = GroundTruthGrid::empty(spec.clone());
        let a = Config::new(vec![4, 7, 8]);
        let b = Config::new(vec![4, 8, 8]);
        let tr = simulate_edge(&world, &arm, &DynParams::default(), &a, &b, 1).unwrap();
        assert_eq!(tr.outcome, EdgeOutcome::Completed);
        assert_eq!(tr.certified_cells, swept_cells(&arm, &a, &b, &spec, arm.sweep_substeps).unwrap());
        assert_eq!(tr.samples.len(), 1002);
        assert_eq!(tr.samples.last().unwrap().q, arm.angles(&b));
    }

    #[test]
    fn immediate_contact() {
        let (arm, spec) = desk();
        let a = Config::new(vec![4, 7, 8]);
        let b = Config::new(vec![4, 8, 8]);
        let mut world = GroundTruthGrid::empty(spec.clone());
        let q1 = interpolate(&arm, &a, &b, 1, arm.sweep_substeps);
        world.occupied = robot_cells_at(&arm, &q1, &spec).difference(&robot_cells(&arm, &a, &spec));
        let tr = simulate_edge(&world, &arm, &DynParams::default(), &a, &b, 1).unwrap();
        let c = tr.contact().expect("contact");
        assert_eq!(c.substep, 1);
        assert_eq!(tr.certified_cells, robot_cells(&arm, &a, &spec));
        assert_eq!(c.q_col, arm.angles(&a));
    }

    #[test]
    fn invalid_primitive_rejected() {
        let (arm, spec) = desk();
        let world = GroundTruthGrid::empty(spec);
        let r = simulate_edge(
            &world,
            &arm,
            &DynParams::default(),
            &Config::new(vec![1, 1, 1]),
            &Config::new(vec![2, 2, 1]),
            0,
        );
        assert!(matches!(r, Err(Error::InvalidPrimitive { .. })));
    }

    #[test]
    fn first_contact_is_minimal_and_force_admissible() {
        let (arm, spec) = desk();
        let mut rng = SeedStream::new(9, 0);
        let dynp = DynParams::default();
        let mut contacts = 0;
        for trial in 0..200u64 {
            let mut world = GroundTruthGrid::empty(spec.clone());
            for _ in 0..40 {
                world.occupied.insert(rng.index(spec.num_cells()));
            }
            let a = Config::new((0..3).map(|_| rng.int_range(1, 14) as i32).collect());
            if !robot_cells(&arm, &a, &spec).intersection(&world.occupied).is_empty() {
                continue;
            }
            let b = a.apply(crate::kinematics::Action {
                joint: rng.index(3),
                dir: if rng.uniform() < 0.5 { -1 } else { 1 },
            });
            let tr = sweep_outcome(&world, &arm, &dynp, &a, &b, trial).unwrap();
            let Some(c) = tr.contact() else { continue };
            contacts += 1;
            for j in 1..c.substep {
                let q = interpolate(&arm, &a, &b, j, arm.sweep_substeps);
                assert!(robot_cells_at(&arm, &q, &spec).intersection(&world.occupied).is_empty());
            }
            assert!(tr.certified_cells.intersection(&world.occupied).is_empty());
            let f = Vector2::new(c.force[0], c.force[1]);
            let inward = -c.point.normal();
            let cos = f.dot(&inward) / f.norm();
            assert!(cos >= (dynp.friction_mu.atan()).cos() - 1e-12);
            assert!(f.norm() >= 5.0 - 1e-12 && f.norm() <= 15.0 + 1e-12);
        }
        assert!(contacts > 20);
    }

    #[test]
    fn contact_trace_ends_after_dwell() {
        let (arm, spec) = desk();
        let a = Config::new(vec![4, 7, 8]);
        let b = Config::new(vec![4, 8, 8]);
        let mut world = GroundTruthGrid::empty(spec.clone());
        let mut before = robot_cells(&arm, &a, &spec);
        for j in 1..=arm.sweep_substeps {
            let fresh =
                robot_cells_at(&arm, &interpolate(&arm, &a, &b, j, arm.sweep_substeps), &spec).difference(&before);
            if j >= 4 && !fresh.is_empty() {
                world.occupied = fresh;
                break;
            }
            before.extend_from(&fresh);
        }
        let dynp = DynParams::default();
        let tr = simulate_edge(&world, &arm, &dynp, &a, &b, 4).unwrap();
        let c = tr.contact().expect("contact");
        let end = tr.samples.last().unwrap().t;
        assert!(end >= c.onset_t + dynp.contact_dwell && end < c.onset_t + dynp.contact_dwell + dynp.dt());
        for w in tr.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn seeded_traces_repeat() {
        let (arm, spec) = desk();
        let world = GroundTruthGrid::empty(spec);
        let a = Config::new(vec![4, 7, 8]);
        let b = Config::new(vec![5, 7, 8]);
        let dynp = DynParams::default();
        assert_eq!(
            simulate_edge(&world, &arm, &dynp, &a, &b, 3).unwrap(),
            simulate_edge(&world, &arm, &dynp, &a, &b, 3).unwrap()
        );
    }
}
