//! Planar serial arm built from capsule links.
//!
//! Joint `i` rotates link `i` relative to link `i - 1`; the absolute heading
//! of link `i` is the sum of the first `i + 1` joint angles. Lattice step
//! `k` of joint `i` maps to `range.0 + k * (range.1 - range.0) / (steps - 1)`.

use nalgebra::{Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workspace::{rasterize_capsule, CellSet, GridSpec};

pub type Vec2 = Vector2<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub base: [f64; 2],
    pub link_lengths: Vec<f64>,
    /// Capsule half-width, meters.
    pub link_radius: f64,
    pub link_masses: Vec<f64>,
    pub steps_per_joint: u32,
    pub joint_ranges: Vec<[f64; 2]>,
    pub surface_samples_per_link: usize,
    /// Samples on the tip cap of the last link.
    #[serde(default = "default_cap_samples")]
    pub cap_samples: usize,
    /// Interpolation substeps per lattice edge for swept volumes.
    #[serde(default = "default_substeps")]
    pub sweep_substeps: usize,
}

fn default_cap_samples() -> usize {
    5
}

fn default_substeps() -> usize {
    8
}

impl ArmModel {
    /// Three-link desk-scale arm standing at the bottom middle of a
    /// 32 x 32 grid of 3 cm cells.
    pub fn reference() -> Self {
        Self {
            base: [0.48, 0.06],
            link_lengths: vec![0.27, 0.24, 0.21],
            link_radius: 0.025,
            link_masses: vec![1.5, 1.0, 0.5],
            steps_per_joint: 16,
            joint_ranges: vec![[0.0, std::f64::consts::PI], [-2.4, 2.4], [-2.4, 2.4]],
            surface_samples_per_link: 16,
            cap_samples: default_cap_samples(),
            sweep_substeps: default_substeps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.link_lengths.len();
        let bad = |m: &str| Err(Error::InvalidArm(m.to_string()));
        if l == 0 {
            return bad("arm needs at least one link");
        }
        if self.link_masses.len() != l || self.joint_ranges.len() != l {
            return bad("link_masses and joint_ranges must have one entry per link");
        }
        if self.link_lengths.iter().chain(&self.link_masses).any(|&x| !(x > 0.0)) || !(self.link_radius > 0.0) {
            return bad("lengths, masses and radius must be > 0");
        }
        if self.steps_per_joint < 2 {
            return bad("steps_per_joint must be >= 2");
        }
        if self.joint_ranges.iter().any(|r| !(r[0] < r[1])) {
            return bad("joint ranges must be increasing intervals");
        }
        if self.sweep_substeps == 0 {
            return bad("sweep_substeps must be >= 1");
        }
        Ok(())
    }

    pub fn num_links(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn base(&self) -> Vec2 {
        Vec2::new(self.base[0], self.base[1])
    }

    /// Radians per lattice step of `joint`.
    pub fn step_size(&self, joint: usize) -> f64 {
        let [lo, hi] = self.joint_ranges[joint];
        (hi - lo) / (self.steps_per_joint - 1) as f64
    }

    /// Joint angle at fractional lattice position `num / den` of `joint`.
    fn angle_at(&self, joint: usize, num: i64, den: i64) -> f64 {
        self.joint_ranges[joint][0] + (num as f64 / den as f64) * self.step_size(joint)
    }

    pub fn angles(&self, q: &Config) -> Vec<f64> {
        q.steps.iter().enumerate().map(|(j, &k)| self.angle_at(j, k as i64, 1)).collect()
    }

    pub fn is_valid_config(&self, q: &Config) -> bool {
        q.steps.len() == self.num_links() && q.steps.iter().all(|&k| k >= 0 && (k as u32) < self.steps_per_joint)
    }

    /// Total reach from the base, including the tip cap.
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum::<f64>() + self.link_radius
    }
}

/// A lattice vertex: one integer step per joint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config {
    pub steps: Vec<i32>,
}

impl Config {
    pub fn new(steps: Vec<i32>) -> Self {
        Self { steps }
    }

    pub fn apply(&self, action: Action) -> Config {
        let mut steps = self.steps.clone();
        steps[action.joint] += action.dir as i32;
        Config { steps }
    }

    /// The unit action leading from `self` to `to`, if they are neighbours.
    pub fn action_to(&self, to: &Config) -> Option<Action> {
        if self.steps.len() != to.steps.len() {
            return None;
        }
        let diffs: Vec<(usize, i32)> = self
            .steps
            .iter()
            .zip(&to.steps)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(j, (a, b))| (j, b - a))
            .collect();
        match diffs.as_slice() {
            [(joint, d)] if d.abs() == 1 => Some(Action { joint: *joint, dir: *d as i8 }),
            _ => None,
        }
    }

    pub fn l1_distance(&self, other: &Config) -> u32 {
        self.steps.iter().zip(&other.steps).map(|(a, b)| a.abs_diff(*b)).sum()
    }

    pub fn euclidean_distance(&self, other: &Config) -> f64 {
        self.steps.iter().zip(&other.steps).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Unit motion of one joint by one lattice step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    pub joint: usize,
    pub dir: i8,
}

impl Action {
    pub fn all(num_joints: usize) -> impl Iterator<Item = Action> {
        (0..num_joints).flat_map(|joint| [Action { joint, dir: -1 }, Action { joint, dir: 1 }])
    }
}

/// World-space joint positions: entry `i` is the start of link `i`, the last
/// entry is the tip.
pub fn joint_positions(arm: &ArmModel, angles: &[f64]) -> Vec<Vec2> {
    let mut pts = Vec::with_capacity(arm.num_links() + 1);
    let mut p = arm.base();
    let mut heading = 0.0;
    pts.push(p);
    for (len, q) in arm.link_lengths.iter().zip(angles) {
        heading += q;
        p += *len * Vec2::new(heading.cos(), heading.sin());
        pts.push(p);
    }
    pts
}

fn headings(angles: &[f64]) -> Vec<f64> {
    angles
        .iter()
        .scan(0.0, |h, q| {
            *h += q;
            Some(*h)
        })
        .collect()
}

/// Per-link segment endpoints at a lattice configuration.
pub fn forward_kinematics(arm: &ArmModel, q: &Config) -> Vec<(Vec2, Vec2)> {
    link_segments(arm, &arm.angles(q))
}

pub fn link_segments(arm: &ArmModel, angles: &[f64]) -> Vec<(Vec2, Vec2)> {
    joint_positions(arm, angles).windows(2).map(|w| (w[0], w[1])).collect()
}

pub fn robot_cells(arm: &ArmModel, q: &Config, spec: &GridSpec) -> CellSet {
    robot_cells_at(arm, &arm.angles(q), spec)
}

pub fn robot_cells_at(arm: &ArmModel, angles: &[f64], spec: &GridSpec) -> CellSet {
    let mut out = CellSet::new();
    for (a, b) in link_segments(arm, angles) {
        out.extend_from(&rasterize_capsule(a.as_slice(), b.as_slice(), arm.link_radius, spec));
    }
    out
}

/// Joint angles at substep `j` of `substeps` along a unit primitive.
/// Computed from integer lattice fractions so forward and reverse sweeps
/// produce bit-identical poses.
pub fn interpolate(arm: &ArmModel, from: &Config, to: &Config, j: usize, substeps: usize) -> Vec<f64> {
    let n = substeps as i64;
    from.steps
        .iter()
        .zip(&to.steps)
        .enumerate()
        .map(|(joint, (&a, &b))| {
            let num = a as i64 * n + (b - a) as i64 * j as i64;
            arm.angle_at(joint, num, n)
        })
        .collect()
}

pub fn check_primitive(from: &Config, to: &Config) -> Result<()> {
    if from == to || from.action_to(to).is_some() {
        Ok(())
    } else {
        Err(Error::InvalidPrimitive { from: from.steps.clone(), to: to.steps.clone() })
    }
}

/// Union of the robot footprint over substeps `0..=substeps` of the edge,
/// both endpoints included, so `S(a, b) = S(b, a)`.
pub fn swept_cells(arm: &ArmModel, from: &Config, to: &Config, spec: &GridSpec, substeps: usize) -> Result<CellSet> {
    check_primitive(from, to)?;
    let mut out = CellSet::new();
    for j in 0..=substeps.max(1) {
        out.extend_from(&robot_cells_at(arm, &interpolate(arm, from, to, j, substeps.max(1)), spec));
    }
    Ok(out)
}

/// True when every capsule of the pose lies inside the grid's extent.
pub fn pose_in_bounds(arm: &ArmModel, angles: &[f64], spec: &GridSpec) -> bool {
    let r = arm.link_radius;
    joint_positions(arm, angles).iter().all(|p| {
        (0..2).all(|axis| p[axis] - r >= spec.origin[axis] && p[axis] + r <= spec.origin[axis] + spec.extent(axis))
    })
}

/// Whether every substep pose of the edge (and its source) stays in bounds.
pub fn edge_in_bounds(arm: &ArmModel, from: &Config, to: &Config, spec: &GridSpec) -> bool {
    let n = arm.sweep_substeps;
    (0..=n).all(|j| pose_in_bounds(arm, &interpolate(arm, from, to, j, n), spec))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Boundary offset along the left normal of the link direction.
    Left,
    Right,
    /// Round cap at the tip of the last link.
    Tip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub link: usize,
    pub side: Side,
    /// Arc fraction in `[0, 1]` along the side (or across the cap).
    pub param: f64,
    pub point: [f64; 2],
    pub normal: [f64; 2],
}

impl SurfacePoint {
    pub fn point(&self) -> Vec2 {
        Vec2::new(self.point[0], self.point[1])
    }

    pub fn normal(&self) -> Vec2 {
        Vec2::new(self.normal[0], self.normal[1])
    }
}

/// Arc length of one surface patch, meters.
pub fn patch_length(arm: &ArmModel, link: usize, side: Side) -> f64 {
    match side {
        Side::Left | Side::Right => arm.link_lengths[link],
        Side::Tip => std::f64::consts::PI * arm.link_radius,
    }
}

/// Evaluates the surface point with intrinsic coordinates `(link, side, param)`.
pub fn surface_point_at(arm: &ArmModel, angles: &[f64], link: usize, side: Side, param: f64) -> SurfacePoint {
    let joints = joint_positions(arm, angles);
    let heading = headings(angles)[link];
    surface_point_from(arm, &joints, heading, link, side, param)
}

fn surface_point_from(
    arm: &ArmModel,
    joints: &[Vec2],
    heading: f64,
    link: usize,
    side: Side,
    param: f64,
) -> SurfacePoint {
    let param = param.clamp(0.0, 1.0);
    let dir = Vec2::new(heading.cos(), heading.sin());
    let left = Vec2::new(-dir.y, dir.x);
    let (point, normal) = match side {
        Side::Left => (joints[link] + param * arm.link_lengths[link] * dir + arm.link_radius * left, left),
        Side::Right => (joints[link] + param * arm.link_lengths[link] * dir - arm.link_radius * left, -left),
        Side::Tip => {
            let phi = heading - std::f64::consts::FRAC_PI_2 + param * std::f64::consts::PI;
            let n = Vec2::new(phi.cos(), phi.sin());
            (joints[link + 1] + arm.link_radius * n, n)
        }
    };
    SurfacePoint { link, side, param, point: [point.x, point.y], normal: [normal.x, normal.y] }
}

/// Evenly spaced candidate contact points: half of
/// `surface_samples_per_link` on each side of every link (left gets the odd
/// one), plus `cap_samples` on the tip cap.
pub fn surface_points(arm: &ArmModel, angles: &[f64]) -> Vec<SurfacePoint> {
    let joints = joint_positions(arm, angles);
    let heads = headings(angles);
    let mut out = Vec::with_capacity(arm.num_links() * arm.surface_samples_per_link + arm.cap_samples);
    let n = arm.surface_samples_per_link;
    let n_left = n.div_ceil(2);
    for link in 0..arm.num_links() {
        for (side, m) in [(Side::Left, n_left), (Side::Right, n - n_left)] {
            for i in 0..m {
                let param = (i as f64 + 0.5) / m as f64;
                out.push(surface_point_from(arm, &joints, heads[link], link, side, param));
            }
        }
    }
    let last = arm.num_links() - 1;
    for i in 0..arm.cap_samples {
        let param = (i as f64 + 0.5) / arm.cap_samples as f64;
        out.push(surface_point_from(arm, &joints, heads[last], last, Side::Tip, param));
    }
    out
}

/// Nearest point on the arm surface (capsule sides and tip cap) to `p`.
pub fn project_to_surface(arm: &ArmModel, angles: &[f64], p: Vec2) -> SurfacePoint {
    let joints = joint_positions(arm, angles);
    let heads = headings(angles);
    let last = arm.num_links() - 1;
    let mut best: Option<(f64, SurfacePoint)> = None;
    let mut consider = |sp: SurfacePoint| {
        let d = (sp.point() - p).norm();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, sp));
        }
    };
    for link in 0..arm.num_links() {
        let dir = Vec2::new(heads[link].cos(), heads[link].sin());
        let rel = p - joints[link];
        let t = (rel.dot(&dir) / arm.link_lengths[link]).clamp(0.0, 1.0);
        consider(surface_point_from(arm, &joints, heads[link], link, Side::Left, t));
        consider(surface_point_from(arm, &joints, heads[link], link, Side::Right, t));
    }
    let rel = p - joints[last + 1];
    if rel.norm() > 0.0 {
        let rel_heading = (rel.y.atan2(rel.x) - heads[last] + std::f64::consts::PI)
            .rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        let param = ((rel_heading + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI).clamp(0.0, 1.0);
        consider(surface_point_from(arm, &joints, heads[last], last, Side::Tip, param));
    }
    best.expect("arm has at least one link").1
}

/// Jacobian of a point rigidly attached to link `sp.link`: column `j` is the
/// velocity of the point per unit rate of joint `j`.
pub fn point_jacobian(arm: &ArmModel, angles: &[f64], sp: &SurfacePoint) -> Matrix2xX<f64> {
    attached_point_jacobian(arm, angles, sp.link, sp.point())
}

pub fn attached_point_jacobian(arm: &ArmModel, angles: &[f64], link: usize, x: Vec2) -> Matrix2xX<f64> {
    let joints = joint_positions(arm, angles);
    let mut jac = Matrix2xX::zeros(arm.num_links());
    for j in 0..=link {
        let d = x - joints[j];
        jac[(0, j)] = -d.y;
        jac[(1, j)] = d.x;
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn two_link() -> ArmModel {
        ArmModel {
            base: [0.5, 0.5],
            link_lengths: vec![0.3, 0.2],
            link_radius: 0.02,
            link_masses: vec![1.0, 1.0],
            steps_per_joint: 9,
            joint_ranges: vec![[-std::f64::consts::PI, std::f64::consts::PI]; 2],
            surface_samples_per_link: 8,
            cap_samples: 3,
            sweep_substeps: 8,
        }
    }

    fn random_angles(rng: &mut SeedStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform_in(-3.0, 3.0)).collect()
    }

    #[test]
    fn straight_arm_tip() {
        let arm = ArmModel::reference();
        let segs = link_segments(&arm, &[0.0, 0.0, 0.0]);
        let tip = segs.last().unwrap().1;
        assert_relative_eq!(tip.x, 0.48 + 0.72, epsilon = 1e-12);
        assert_relative_eq!(tip.y, 0.06, epsilon = 1e-12);
        assert_eq!(segs[0].0, arm.base());
        for w in segs.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn right_angle_pose() {
        let arm = two_link();
        let segs = link_segments(&arm, &[std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2]);
        assert_relative_eq!(segs[0].1.x, 0.5, epsilon = 1e-12);
        assert_relative_eq!(segs[0].1.y, 0.8, epsilon = 1e-12);
        assert_relative_eq!(segs[1].1.x, 0.7, epsilon = 1e-12);
        assert_relative_eq!(segs[1].1.y, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn tip_matches_complex_exponential_chain() {
        let arm = ArmModel::reference();
        let mut rng = SeedStream::new(5, 0);
        for _ in 0..100 {
            let q = random_angles(&mut rng, 3);
            let mut z = Complex64::new(arm.base[0], arm.base[1]);
            let mut rot = Complex64::new(1.0, 0.0);
            for (l, a) in arm.link_lengths.iter().zip(&q) {
                rot *= Complex64::from_polar(1.0, *a);
                z += rot * l;
            }
            let tip = joint_positions(&arm, &q)[3];
            assert_relative_eq!(tip.x, z.re, epsilon = 1e-12);
            assert_relative_eq!(tip.y, z.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn lattice_angle_mapping() {
        let arm = ArmModel::reference();
        let q = Config::new(vec![0, 15, 7]);
        let a = arm.angles(&q);
        assert_relative_eq!(a[0], 0.0);
        assert_relative_eq!(a[1], 2.4, epsilon = 1e-12);
        assert_relative_eq!(a[2], -2.4 + 7.0 * 4.8 / 15.0, epsilon = 1e-12);
    }

    #[test]
    fn base_outside_grid_has_no_cells() {
        let mut arm = two_link();
        arm.base = [-5.0, -5.0];
        let spec = GridSpec::planar(16, 16, 0.05).unwrap();
        assert!(robot_cells_at(&arm, &[0.3, 0.2], &spec).is_empty());
    }

    #[test]
    fn single_link_equals_capsule() {
        let mut arm = two_link();
        arm.link_lengths = vec![0.4];
        arm.link_masses = vec![1.0];
        arm.joint_ranges = vec![[-1.0, 1.0]];
        arm.base = [0.125, 0.425];
        let spec = GridSpec::planar(20, 20, 0.05).unwrap();
        let cells = robot_cells_at(&arm, &[0.0], &spec);
        assert_eq!(cells, rasterize_capsule(&[0.125, 0.425], &[0.525, 0.425], 0.02, &spec));
    }

    #[test]
    fn robot_cells_match_exhaustive_check() {
        let arm = ArmModel::reference();
        let spec = GridSpec::planar(32, 32, 0.03).unwrap();
        let mut rng = SeedStream::new(8, 0);
        for _ in 0..30 {
            let q = random_angles(&mut rng, 3);
            let segs = link_segments(&arm, &q);
            let expected: CellSet = (0..spec.num_cells())
                .filter(|&c| {
                    let x = spec.cell_center(c);
                    segs.iter().any(|(a, b)| {
                        let ab = b - a;
                        let t = ((Vec2::new(x[0], x[1]) - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                        (Vec2::new(x[0], x[1]) - (a + t * ab)).norm() <= arm.link_radius
                    })
                })
                .collect();
            assert_eq!(robot_cells_at(&arm, &q, &spec), expected);
        }
    }

    #[test]
    fn sweep_zero_motion_and_monotonicity() {
        let arm = ArmModel::reference();
        let spec = GridSpec::planar(32, 32, 0.03).unwrap();
        let a = Config::new(vec![5, 8, 8]);
        let b = Config::new(vec![6, 8, 8]);
        assert_eq!(swept_cells(&arm, &a, &a, &spec, 8).unwrap(), robot_cells(&arm, &a, &spec));
        let coarse = swept_cells(&arm, &a, &b, &spec, 8).unwrap();
        let fine = swept_cells(&arm, &a, &b, &spec, 16).unwrap();
        assert!(coarse.is_subset(&fine));
        assert!(robot_cells(&arm, &b, &spec).is_subset(&coarse));
        assert!(swept_cells(&arm, &a, &Config::new(vec![7, 8, 8]), &spec, 8).is_err());
        assert!(swept_cells(&arm, &a, &Config::new(vec![6, 9, 8]), &spec, 8).is_err());
    }

    #[test]
    fn sweep_matches_dense_sampling() {
        let arm = two_link();
        let spec = GridSpec::planar(20, 20, 0.05).unwrap();
        let a = Config::new(vec![3, 4]);
        let b = Config::new(vec![3, 5]);
        let dense = swept_cells(&arm, &a, &b, &spec, 64).unwrap();
        let mut oracle = CellSet::new();
        let (qa, qb) = (arm.angles(&a), arm.angles(&b));
        for j in 0..=64 {
            let s = j as f64 / 64.0;
            let q: Vec<f64> = qa.iter().zip(&qb).map(|(x, y)| (1.0 - s) * x + s * y).collect();
            oracle.extend_from(&robot_cells_at(&arm, &q, &spec));
        }
        assert_eq!(dense, oracle);
    }

    #[test]
    fn sweep_reversible_with_endpoints() {
        let arm = ArmModel::reference();
        let spec = GridSpec::planar(32, 32, 0.03).unwrap();
        let mut rng = SeedStream::new(2, 0);
        for _ in 0..30 {
            let a = Config::new((0..3).map(|_| rng.int_range(1, 14) as i32).collect());
            let act = Action { joint: rng.index(3), dir: 1 };
            let b = a.apply(act);
            let fwd = swept_cells(&arm, &a, &b, &spec, 8).unwrap();
            assert_eq!(fwd, swept_cells(&arm, &b, &a, &spec, 8).unwrap());
            assert!(robot_cells(&arm, &a, &spec).union(&robot_cells(&arm, &b, &spec)).is_subset(&fwd));
        }
    }

    #[test]
    fn jacobian_pivot_and_distal_columns() {
        let arm = two_link();
        let q = [0.4, -0.7];
        let pivot = SurfacePoint { link: 0, side: Side::Left, param: 0.0, point: arm.base, normal: [0.0, 1.0] };
        assert!(point_jacobian(&arm, &q, &pivot).iter().all(|&x| x == 0.0));
        let sp = surface_point_at(&arm, &q, 0, Side::Right, 0.6);
        let j = point_jacobian(&arm, &q, &sp);
        assert_eq!(j[(0, 1)], 0.0);
        assert_eq!(j[(1, 1)], 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let arm = ArmModel::reference();
        let mut rng = SeedStream::new(13, 0);
        let sides = [Side::Left, Side::Right, Side::Tip];
        for _ in 0..100 {
            let q = random_angles(&mut rng, 3);
            let side = sides[rng.index(3)];
            let link = if side == Side::Tip { 2 } else { rng.index(3) };
            let param = rng.uniform();
            let sp = surface_point_at(&arm, &q, link, side, param);
            let jac = point_jacobian(&arm, &q, &sp);
            let h = 1e-6;
            for j in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += h;
                qm[j] -= h;
                let fd = (surface_point_at(&arm, &qp, link, side, param).point()
                    - surface_point_at(&arm, &qm, link, side, param).point())
                    / (2.0 * h);
                // surface points rotate with their link, so the normal offset moves too
                let col = Vec2::new(jac[(0, j)], jac[(1, j)]);
                assert!((fd - col).norm() <= 1e-6 * col.norm().max(1.0), "{fd} vs {col}");
            }
        }
    }

    #[test]
    fn jacobian_velocity_consistency() {
        let arm = ArmModel::reference();
        let mut rng = SeedStream::new(17, 0);
        for _ in 0..100 {
            let q = random_angles(&mut rng, 3);
            let v: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let sp = surface_point_at(&arm, &q, rng.index(3), Side::Left, rng.uniform());
            let jv = point_jacobian(&arm, &q, &sp) * nalgebra::DVector::from_vec(v.clone());
            let eps = 1e-7;
            let qe: Vec<f64> = q.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
            let moved = surface_point_at(&arm, &qe, sp.link, sp.side, sp.param).point();
            let fd = (moved - sp.point()) / eps;
            assert!((fd - Vec2::new(jv[0], jv[1])).norm() < 1e-4 * jv.norm().max(1e-3));
        }
    }

    #[test]
    fn surface_points_straight_arm() {
        let arm = ArmModel::reference();
        let pts = surface_points(&arm, &[0.0, 0.0, 0.0]);
        assert_eq!(pts.len(), 3 * arm.surface_samples_per_link + arm.cap_samples);
        for sp in &pts {
            match sp.side {
                Side::Left => assert_eq!(sp.normal, [0.0, 1.0]),
                Side::Right => assert_eq!(sp.normal, [-0.0, -1.0]),
                Side::Tip => assert!(sp.normal[0] > 0.0),
            }
        }
    }

    #[test]
    fn surface_points_on_capsule_boundary() {
        let arm = ArmModel::reference();
        let mut rng = SeedStream::new(21, 0);
        for _ in 0..20 {
            let q = random_angles(&mut rng, 3);
            let segs = link_segments(&arm, &q);
            for sp in surface_points(&arm, &q) {
                let (a, b) = segs[sp.link];
                let d = crate::workspace::point_segment_distance(&sp.point, a.as_slice(), b.as_slice());
                assert!((d - arm.link_radius).abs() < 1e-9);
                assert!((sp.normal().norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_idempotent() {
        let arm = ArmModel::reference();
        let mut rng = SeedStream::new(23, 0);
        for _ in 0..50 {
            let q = random_angles(&mut rng, 3);
            let p = Vec2::new(rng.uniform_in(0.0, 1.0), rng.uniform_in(0.0, 1.0));
            let sp = project_to_surface(&arm, &q, p);
            let again = project_to_surface(&arm, &q, sp.point());
            assert!((again.point() - sp.point()).norm() < 1e-9);
        }
    }
}
